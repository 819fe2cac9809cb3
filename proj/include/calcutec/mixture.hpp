#pragma once

// Exact numeric verification of in-context-learning log-likelihood bounds on
// enumerable latent mixture models.
//
// The model: a latent state z is drawn once with prior Pr(z); each evaluation
// step then emits an input x with Pr(x | z), a label token r with
// Pr(r | x, z), and a mandatory delimiter. Conditionals are explicit
// per-state tables (history-free given z); history enters predictions only
// through the posterior over z. All computation is in log space with
// long-double accumulation; inequalities carry a pinned 1e-9 tolerance.
//
// Checks provided:
//   icl_bound_check          - per-sequence lower bound on the average
//                              gold-label log-likelihood, term by term
//   expected_icl_bound_check - exact expectation of that bound over all
//                              length-T input tuples, with the KL
//                              decomposition of the input-ratio term
//   drop_chain_bound_check   - lower bound on the probability that an answer
//                              directly follows its input when reasoning
//                              chains have independently dropped steps
//
// Also houses the enumerable Bayesian in-context learner used as a reference
// predictor over reduced rule sets.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "calcutec/io.hpp"
#include "calcutec/logic.hpp"
#include "calcutec/rng.hpp"

namespace calcutec {
namespace latent {

using real = long double;

inline constexpr real kBoundTolerance = 1e-9L;
inline constexpr real kNegInf = -std::numeric_limits<real>::infinity();

inline real log_or_neg_inf(real p) { return p > 0 ? std::log(p) : kNegInf; }

// log(Σ exp(v)) tolerating -inf entries.
inline real log_sum_exp(const std::vector<real>& values) {
  real best = kNegInf;
  for (real v : values) best = std::max(best, v);
  if (best == kNegInf) return kNegInf;
  real total = 0;
  for (real v : values)
    if (v != kNegInf) total += std::exp(v - best);
  return best + std::log(total);
}

// -------------------------------------------------------------------------
// Model
// -------------------------------------------------------------------------

struct LatentModel {
  std::vector<real> prior;                           // [z]
  std::vector<std::vector<real>> input_prob;         // [z][x]
  std::vector<std::vector<std::vector<real>>> label_prob;  // [z][x][r]

  int n_states() const { return static_cast<int>(prior.size()); }
  int n_inputs() const {
    return input_prob.empty() ? 0 : static_cast<int>(input_prob[0].size());
  }
  int n_labels() const {
    return (label_prob.empty() || label_prob[0].empty())
               ? 0
               : static_cast<int>(label_prob[0][0].size());
  }
};

inline void validate_model(const LatentModel& m) {
  const auto check_row = [](const std::vector<real>& row, const char* what) {
    real total = 0;
    for (real p : row) {
      if (!(p >= 0) || p > 1)
        throw ConfigError(std::string(what) + ": probability outside [0, 1]");
      total += p;
    }
    if (std::fabs(total - 1.0L) > 1e-9L)
      throw ConfigError(std::string(what) + ": probabilities do not sum to 1");
  };
  if (m.prior.empty()) throw ConfigError("latent model: empty prior");
  check_row(m.prior, "latent model prior");
  if (m.input_prob.size() != m.prior.size() ||
      m.label_prob.size() != m.prior.size())
    throw ConfigError("latent model: table count does not match state count");
  for (std::size_t z = 0; z < m.prior.size(); ++z) {
    if (m.input_prob[z].size() != m.input_prob[0].size() ||
        m.label_prob[z].size() != m.input_prob[z].size())
      throw ConfigError("latent model: ragged input tables");
    check_row(m.input_prob[z], "latent model input row");
    for (std::size_t x = 0; x < m.label_prob[z].size(); ++x) {
      if (m.label_prob[z][x].size() != m.label_prob[0][0].size())
        throw ConfigError("latent model: ragged label tables");
      check_row(m.label_prob[z][x], "latent model label row");
    }
  }
}

struct EvalStep {
  int x = 0;
  int r = 0;
};
using EvalSequence = std::vector<EvalStep>;

inline void check_sequence(const LatentModel& m, const EvalSequence& seq) {
  for (const EvalStep& s : seq) {
    if (s.x < 0 || s.x >= m.n_inputs())
      throw ConfigError("evaluation sequence: input index out of range");
    if (s.r < 0 || s.r >= m.n_labels())
      throw ConfigError("evaluation sequence: label index out of range");
  }
}

// log Pr(x, r, d | z): the delimiter always follows the label, so it
// contributes factor 1.
inline real log_step_prob(const LatentModel& m, int z, int x, int r) {
  const real px = m.input_prob[static_cast<std::size_t>(z)]
                              [static_cast<std::size_t>(x)];
  const real pr = m.label_prob[static_cast<std::size_t>(z)]
                              [static_cast<std::size_t>(x)]
                              [static_cast<std::size_t>(r)];
  if (px <= 0 || pr <= 0) return kNegInf;
  return std::log(px) + std::log(pr);
}

// Per-state log weights log[Pr(z) Π_t Pr(x_t, r_t, d | z)] for a prefix.
inline std::vector<real> state_log_weights(const LatentModel& m,
                                           const EvalSequence& prefix) {
  std::vector<real> lw(static_cast<std::size_t>(m.n_states()));
  for (int z = 0; z < m.n_states(); ++z)
    lw[static_cast<std::size_t>(z)] =
        log_or_neg_inf(m.prior[static_cast<std::size_t>(z)]);
  for (const EvalStep& s : prefix)
    for (int z = 0; z < m.n_states(); ++z) {
      real& w = lw[static_cast<std::size_t>(z)];
      if (w != kNegInf) w += log_step_prob(m, z, s.x, s.r);
    }
  return lw;
}

// log Σ_z Pr(z) Π_t Pr(x_t, r_t, d | z); -inf for impossible sequences.
inline real marginal_logprob(const LatentModel& m, const EvalSequence& seq) {
  validate_model(m);
  check_sequence(m, seq);
  return log_sum_exp(state_log_weights(m, seq));
}

// Pr(z | sequence); throws if the sequence is impossible under every state.
inline std::vector<real> posterior(const LatentModel& m,
                                   const EvalSequence& seq) {
  validate_model(m);
  check_sequence(m, seq);
  const auto lw = state_log_weights(m, seq);
  const real lse = log_sum_exp(lw);
  if (lse == kNegInf)
    throw ConfigError(
        "posterior: sequence has zero probability under every state");
  std::vector<real> p(lw.size());
  for (std::size_t z = 0; z < lw.size(); ++z)
    p[z] = lw[z] == kNegInf ? 0 : std::exp(lw[z] - lse);
  return p;
}

namespace detail {

// log Pr(x | prefix) given precomputed per-state prefix weights.
inline real log_input_given_prefix(const LatentModel& m,
                                   const std::vector<real>& lw, int x) {
  std::vector<real> num(lw.size());
  for (std::size_t z = 0; z < lw.size(); ++z)
    num[z] = lw[z] == kNegInf
                 ? kNegInf
                 : lw[z] + log_or_neg_inf(
                               m.input_prob[z][static_cast<std::size_t>(x)]);
  return log_sum_exp(num) - log_sum_exp(lw);
}

// log Pr(r | x, prefix) given precomputed per-state prefix weights.
inline real log_label_given_input(const LatentModel& m,
                                  const std::vector<real>& lw, int x, int r) {
  std::vector<real> num(lw.size());
  std::vector<real> den(lw.size());
  for (std::size_t z = 0; z < lw.size(); ++z) {
    const real px =
        log_or_neg_inf(m.input_prob[z][static_cast<std::size_t>(x)]);
    den[z] = lw[z] == kNegInf ? kNegInf : lw[z] + px;
    num[z] = den[z] == kNegInf
                 ? kNegInf
                 : den[z] + log_or_neg_inf(
                                m.label_prob[z][static_cast<std::size_t>(x)]
                                            [static_cast<std::size_t>(r)]);
  }
  return log_sum_exp(num) - log_sum_exp(den);
}

}  // namespace detail

// Posterior-mixture label prediction: argmax_r Pr(r | x, prefix), ties
// broken toward the lowest label index.
inline int predict_label(const LatentModel& m, const EvalSequence& prefix,
                         int x) {
  validate_model(m);
  check_sequence(m, prefix);
  if (x < 0 || x >= m.n_inputs())
    throw ConfigError("predict_label: input index out of range");
  const auto lw = state_log_weights(m, prefix);
  if (log_sum_exp(lw) == kNegInf)
    throw ConfigError("predict_label: prefix has zero probability");
  int best = 0;
  real best_score = kNegInf;
  for (int r = 0; r < m.n_labels(); ++r) {
    const real s = detail::log_label_given_input(m, lw, x, r);
    if (s > best_score) {
      best_score = s;
      best = r;
    }
  }
  return best;
}

// -------------------------------------------------------------------------
// Per-sequence bound
// -------------------------------------------------------------------------

// lhs and the three right-hand-side terms of the average-log-likelihood
// lower bound, all divided by T.
struct BoundReport {
  int T = 0;
  real lhs = 0;               // (1/T) Σ log Pr(r_t | x_t, prefix)
  real prior_term = 0;        // (1/T) log Pr(z*)
  real label_term = 0;        // (1/T) Σ log Pr(r_t, d | x_t, z*)
  real input_ratio_term = 0;  // (1/T) Σ log [Pr(x_t|z*) / Pr(x_t|prefix)]
  real rhs = 0;
  real slack = 0;  // lhs - rhs, must be >= -kBoundTolerance
  bool holds = false;
};

// Verifies, term by term, that the average gold-label log-likelihood is at
// least (1/T)[log Pr(z*) + Σ log Pr(r_t,d|x_t,z*) + Σ log ratio].
inline BoundReport icl_bound_check(const LatentModel& m, int z_star,
                                   const EvalSequence& seq) {
  validate_model(m);
  check_sequence(m, seq);
  if (z_star < 0 || z_star >= m.n_states())
    throw ConfigError("bound check: state index out of range");
  if (seq.empty()) throw ConfigError("bound check: empty sequence");
  const real prior_star = m.prior[static_cast<std::size_t>(z_star)];
  if (prior_star <= 0)
    throw ConfigError("bound check: designated state has zero prior");

  BoundReport report;
  report.T = static_cast<int>(seq.size());
  const real T = static_cast<real>(report.T);

  std::vector<real> lw = state_log_weights(m, {});
  real lhs_sum = 0, label_sum = 0, ratio_sum = 0;
  for (const EvalStep& s : seq) {
    const real step_star = log_step_prob(m, z_star, s.x, s.r);
    if (step_star == kNegInf)
      throw ConfigError(
          "bound check: sequence impossible under the designated state");
    lhs_sum += detail::log_label_given_input(m, lw, s.x, s.r);
    label_sum += log_or_neg_inf(
        m.label_prob[static_cast<std::size_t>(z_star)]
                    [static_cast<std::size_t>(s.x)]
                    [static_cast<std::size_t>(s.r)]);
    ratio_sum += log_or_neg_inf(m.input_prob[static_cast<std::size_t>(z_star)]
                                            [static_cast<std::size_t>(s.x)]) -
                 detail::log_input_given_prefix(m, lw, s.x);
    for (int z = 0; z < m.n_states(); ++z) {
      real& w = lw[static_cast<std::size_t>(z)];
      if (w != kNegInf) w += log_step_prob(m, z, s.x, s.r);
    }
  }

  report.lhs = lhs_sum / T;
  report.prior_term = std::log(prior_star) / T;
  report.label_term = label_sum / T;
  report.input_ratio_term = ratio_sum / T;
  report.rhs = report.prior_term + report.label_term + report.input_ratio_term;
  report.slack = report.lhs - report.rhs;
  report.holds = report.slack >= -kBoundTolerance;
  return report;
}

// -------------------------------------------------------------------------
// Expected bound (exact enumeration)
// -------------------------------------------------------------------------

struct ExpectedBoundReport {
  int T = 0;
  real expected_lhs = 0;  // E[(1/T) Σ log Pr(r_t | x_t, prefix)]
  real rhs = 0;           // (1/T) log Pr(z*)
  real slack = 0;
  bool holds = false;
  // E[(1/T) Σ log ratio]: equals the average over t of the expected KL
  // divergence KL(Pr(x|z*) || Pr(x|prefix)) >= 0.
  real input_ratio_term = 0;
  real kl_sum = 0;          // the same quantity computed as explicit KLs
  real min_step_kl = 0;     // smallest per-prefix KL encountered
  std::int64_t n_sequences = 0;
};

// Gold label per input under a deterministic-label state; error otherwise.
inline std::vector<int> gold_labels(const LatentModel& m, int z_star) {
  std::vector<int> gold(static_cast<std::size_t>(m.n_inputs()), -1);
  for (int x = 0; x < m.n_inputs(); ++x) {
    const auto& row = m.label_prob[static_cast<std::size_t>(z_star)]
                                  [static_cast<std::size_t>(x)];
    for (int r = 0; r < m.n_labels(); ++r)
      if (row[static_cast<std::size_t>(r)] == 1)
        gold[static_cast<std::size_t>(x)] = r;
    if (gold[static_cast<std::size_t>(x)] < 0)
      throw ConfigError(
          "expected bound: labels under the designated state must be "
          "deterministic (one probability-1 label per input)");
  }
  return gold;
}

// Exact expectation of the average gold-label log-likelihood over all
// length-T input tuples drawn i.i.d. from Pr(x | z*), verified against
// (1/T) log Pr(z*). Enumerates |X|^T branches; capped to stay exact.
inline ExpectedBoundReport expected_icl_bound_check(const LatentModel& m,
                                                    int z_star, int T) {
  validate_model(m);
  if (z_star < 0 || z_star >= m.n_states())
    throw ConfigError("expected bound: state index out of range");
  if (T <= 0) throw ConfigError("expected bound: T must be positive");
  const real prior_star = m.prior[static_cast<std::size_t>(z_star)];
  if (prior_star <= 0)
    throw ConfigError("expected bound: designated state has zero prior");

  double branches = 1;
  for (int t = 0; t < T; ++t) branches *= m.n_inputs();
  if (branches > 2e6)
    throw ConfigError(
        "expected bound: |X|^T too large for exact enumeration; use a "
        "smaller alphabet or T");

  const auto gold = gold_labels(m, z_star);
  const auto& px_star = m.input_prob[static_cast<std::size_t>(z_star)];

  ExpectedBoundReport report;
  report.T = T;
  report.min_step_kl = std::numeric_limits<real>::infinity();

  real lhs_sum = 0;    // E[Σ_t log Pr(r_t | x_t, prefix)]
  real ratio_sum = 0;  // E[Σ_t log ratio], from per-branch terms
  real kl_sum = 0;     // same, via explicit per-prefix KL divergences
  std::int64_t leaves = 0;

  // Depth-first walk over input tuples; weight = Π Pr(x_i | z*).
  struct Frame {
    std::vector<real> lw;
    real weight;
    int depth;
  };
  std::vector<Frame> stack;
  stack.push_back({state_log_weights(m, {}), 1.0L, 0});
  while (!stack.empty()) {
    Frame frame = std::move(stack.back());
    stack.pop_back();
    if (frame.depth == T) {
      ++leaves;
      continue;
    }
    // Per-prefix KL(Pr(x|z*) || Pr(x|prefix)), weighted by prefix mass.
    real kl = 0;
    for (int x = 0; x < m.n_inputs(); ++x) {
      const real p = px_star[static_cast<std::size_t>(x)];
      if (p <= 0) continue;
      kl += p * (std::log(p) -
                 detail::log_input_given_prefix(m, frame.lw, x));
    }
    report.min_step_kl = std::min(report.min_step_kl, kl);
    kl_sum += frame.weight * kl;

    for (int x = 0; x < m.n_inputs(); ++x) {
      const real p = px_star[static_cast<std::size_t>(x)];
      if (p <= 0) continue;
      const int r = gold[static_cast<std::size_t>(x)];
      const real w = frame.weight * p;
      lhs_sum +=
          w * detail::log_label_given_input(m, frame.lw, x, r);
      ratio_sum +=
          w * (std::log(p) - detail::log_input_given_prefix(m, frame.lw, x));
      Frame next;
      next.lw = frame.lw;
      for (int z = 0; z < m.n_states(); ++z) {
        real& lwz = next.lw[static_cast<std::size_t>(z)];
        if (lwz != kNegInf) lwz += log_step_prob(m, z, x, r);
      }
      next.weight = w;
      next.depth = frame.depth + 1;
      stack.push_back(std::move(next));
    }
  }

  const real Tr = static_cast<real>(T);
  report.expected_lhs = lhs_sum / Tr;
  report.rhs = std::log(prior_star) / Tr;
  report.slack = report.expected_lhs - report.rhs;
  report.holds = report.slack >= -kBoundTolerance;
  report.input_ratio_term = ratio_sum / Tr;
  report.kl_sum = kl_sum / Tr;
  report.n_sequences = leaves;
  return report;
}

// -------------------------------------------------------------------------
// Dropped-chain description-length bound
// -------------------------------------------------------------------------

// One way of deriving the answer: a reasoning chain of `length` steps whose
// joint emission probability (steps and answer) is `prob`.
struct ChainAlternative {
  int length = 0;
  real prob = 0;
};

struct ChainModel {
  std::vector<ChainAlternative> chains;
};

struct ChainBoundReport {
  real direct_logprob = 0;  // log Σ_i prob_i * p_drop^length_i
  int shortest = 0;         // ℓ* = min chain length
  real bound = 0;           // ℓ* (log p_drop + log p_min)
  real slack = 0;
  bool holds = false;
};

// With every step independently dropped with probability p_drop and each
// step's probability at least p_min, the answer appears directly after the
// input with probability Σ_i prob_i p_drop^{ℓ_i} >= (p_min p_drop)^{ℓ*}:
// log Pr(direct) >= ℓ* (log p_drop + log p_min).
inline ChainBoundReport drop_chain_bound_check(const ChainModel& model,
                                               real p_drop, real p_min,
                                               int max_len) {
  if (!(p_drop > 0) || p_drop > 1 || !(p_min > 0) || p_min > 1)
    throw ConfigError("chain bound: p_drop and p_min must be in (0, 1]");
  if (model.chains.empty())
    throw ConfigError("chain bound: at least one chain required");

  ChainBoundReport report;
  report.shortest = model.chains.front().length;
  real direct = 0;
  real total = 0;
  for (const ChainAlternative& c : model.chains) {
    if (c.length < 0 || c.length > max_len)
      throw ConfigError("chain bound: chain length outside 0..max_len");
    if (!(c.prob > 0) || c.prob > 1)
      throw ConfigError("chain bound: chain probability outside (0, 1]");
    if (c.prob < std::pow(p_min, static_cast<real>(c.length)) - 1e-15L)
      throw ConfigError(
          "chain bound: chain probability violates the per-step floor "
          "p_min^length");
    total += c.prob;
    report.shortest = std::min(report.shortest, c.length);
    direct += c.prob * std::pow(p_drop, static_cast<real>(c.length));
  }
  if (total > 1 + 1e-12L)
    throw ConfigError("chain bound: chain probabilities exceed 1");

  report.direct_logprob = std::log(direct);
  report.bound = static_cast<real>(report.shortest) *
                 (std::log(p_drop) + std::log(p_min));
  report.slack = report.direct_logprob - report.bound;
  report.holds = report.slack >= -kBoundTolerance;
  return report;
}

// -------------------------------------------------------------------------
// Model serialization and random models
// -------------------------------------------------------------------------

inline nlohmann::ordered_json model_to_json(const LatentModel& m) {
  nlohmann::ordered_json j;
  j["states"] = m.n_states();
  j["alphabets"] = {{"inputs", m.n_inputs()},
                    {"labels", m.n_labels()},
                    {"delimiter", "d"}};
  j["prior"] = std::vector<double>(m.prior.begin(), m.prior.end());
  nlohmann::ordered_json inputs = nlohmann::json::array();
  nlohmann::ordered_json labels = nlohmann::json::array();
  for (int z = 0; z < m.n_states(); ++z) {
    inputs.push_back(std::vector<double>(
        m.input_prob[static_cast<std::size_t>(z)].begin(),
        m.input_prob[static_cast<std::size_t>(z)].end()));
    nlohmann::ordered_json rows = nlohmann::json::array();
    for (const auto& row : m.label_prob[static_cast<std::size_t>(z)])
      rows.push_back(std::vector<double>(row.begin(), row.end()));
    labels.push_back(std::move(rows));
  }
  j["conditionals"] = {{"input", std::move(inputs)},
                       {"label", std::move(labels)}};
  return j;
}

inline LatentModel model_from_json(const nlohmann::json& j) {
  LatentModel m;
  try {
    for (double p : j.at("prior")) m.prior.push_back(static_cast<real>(p));
    for (const auto& row : j.at("conditionals").at("input")) {
      m.input_prob.emplace_back();
      for (double p : row) m.input_prob.back().push_back(static_cast<real>(p));
    }
    for (const auto& grid : j.at("conditionals").at("label")) {
      m.label_prob.emplace_back();
      for (const auto& row : grid) {
        m.label_prob.back().emplace_back();
        for (double p : row)
          m.label_prob.back().back().push_back(static_cast<real>(p));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model file: ") + e.what());
  }
  validate_model(m);
  return m;
}

// Random fully-supported model; when one_hot_state is set, that state's
// label rows are deterministic (cycling gold labels across inputs).
inline LatentModel random_model(Rng& rng, int n_states, int n_inputs,
                                int n_labels,
                                std::optional<int> one_hot_state = {}) {
  if (n_states <= 0 || n_inputs <= 0 || n_labels <= 0)
    throw ConfigError("random_model: sizes must be positive");
  const auto random_row = [&rng](int n) {
    std::vector<real> row(static_cast<std::size_t>(n));
    real total = 0;
    for (auto& p : row) {
      p = static_cast<real>(-std::log(1.0 - rng.next_unit())) + 1e-3L;
      total += p;
    }
    for (auto& p : row) p /= total;
    return row;
  };
  LatentModel m;
  m.prior = random_row(n_states);
  for (int z = 0; z < n_states; ++z) {
    m.input_prob.push_back(random_row(n_inputs));
    m.label_prob.emplace_back();
    for (int x = 0; x < n_inputs; ++x) {
      if (one_hot_state && *one_hot_state == z) {
        std::vector<real> row(static_cast<std::size_t>(n_labels), 0.0L);
        row[static_cast<std::size_t>(x % n_labels)] = 1;
        m.label_prob.back().push_back(std::move(row));
      } else {
        m.label_prob.back().push_back(random_row(n_labels));
      }
    }
  }
  return m;
}

}  // namespace latent

// -------------------------------------------------------------------------
// Enumerable Bayesian in-context learner over reduced rule sets
// -------------------------------------------------------------------------

// A hypothesis pairs a candidate positive class with a candidate negative
// class (ordered, disjoint symbol sets).
struct LabelHypothesis {
  std::vector<Symbol> positive;
  std::vector<Symbol> negative;
};

struct IclShotObs {
  std::vector<Symbol> input;
  int verbalizer = 0;  // 1..4
};

struct IclPromptObs {
  std::vector<IclShotObs> shots;
  std::vector<Symbol> test_input;
};

// Parses "x1 x2 -> r1 ; x3 x4 -> r2 ; x5 x6 ->". Reasoning-style shots
// ("a b -> c , c d -> r1") contribute their first-step antecedents as the
// input and their final consequent as the verbalizer.
inline IclPromptObs parse_icl_prompt(const std::string& text) {
  const auto split_on = [](const std::string& s, const std::string& sep) {
    std::vector<std::string> parts;
    std::size_t start = 0;
    for (;;) {
      const std::size_t pos = s.find(sep, start);
      if (pos == std::string::npos) {
        parts.push_back(s.substr(start));
        return parts;
      }
      parts.push_back(s.substr(start, pos - start));
      start = pos + sep.size();
    }
  };

  IclPromptObs prompt;
  const auto segments = split_on(text, " ; ");
  for (std::size_t i = 0; i < segments.size(); ++i) {
    const bool is_test = i + 1 == segments.size();
    const auto fragments = split_on(segments[i], " , ");
    // input symbols: the first fragment's antecedents
    const auto first_tokens = split_tokens(fragments.front());
    if (std::find(first_tokens.begin(), first_tokens.end(), "->") ==
        first_tokens.end())
      throw FormatError("prompt segment missing '->'", 1);
    std::vector<Symbol> input;
    for (const auto& tok : first_tokens) {
      if (tok == "->") break;
      const auto sym = parse_symbol_token(tok);
      if (!sym)
        throw FormatError("prompt input token is not a symbol: " + tok, 1);
      input.push_back(*sym);
    }
    if (is_test) {
      if (fragments.size() != 1 || first_tokens.back() != "->")
        throw FormatError("prompt must end with an open 'input ->' segment", 1);
      prompt.test_input = std::move(input);
      return prompt;
    }
    // verbalizer: the final fragment's consequent
    const auto last_tokens = split_tokens(fragments.back());
    if (last_tokens.size() < 2 || last_tokens[last_tokens.size() - 2] != "->")
      throw FormatError("prompt shot missing its concluding verbalizer", 1);
    const std::string& tail = last_tokens.back();
    if (tail.size() != 2 || tail[0] != 'r' || tail[1] < '1' || tail[1] > '4')
      throw FormatError("prompt shot concludes with a non-verbalizer token", 1);
    prompt.shots.push_back({std::move(input), tail[1] - '0'});
  }
  throw FormatError("prompt has no test segment", 1);
}

struct BayesPrediction {
  int verbalizer = 0;
  bool contradiction = false;   // every hypothesis ruled out -> uniform scores
  long double score_first = 0;  // posterior-weighted score of candidates[0]
  long double score_second = 0;
};

// Exact Bayesian predictor: uniform prior over hypotheses; each shot
// multiplies in 1 (hypothesis explains the label), 0 (contradicts it), or
// 1/2 (input touches both or neither class, so the label is uninformative).
// Prediction is the posterior-weighted score argmax over the two candidate
// verbalizers, ties broken toward the lower verbalizer id.
class BayesIclLearner {
 public:
  BayesIclLearner(const KnowledgeBase& kb, std::vector<LabelHypothesis> space)
      : kb_(kb), space_(std::move(space)) {
    if (space_.empty())
      throw ConfigError("bayes learner: empty hypothesis space");
  }

  // All ordered pairs of disjoint class-size symbol subsets of the kb.
  static std::vector<LabelHypothesis> enumerate_hypotheses(
      const KnowledgeBase& kb, int class_size) {
    if (class_size < 1 || kb.n_symbols() < 2 * class_size)
      throw ConfigError("bayes learner: infeasible class size");
    std::vector<std::vector<Symbol>> subsets;
    std::vector<Symbol> current;
    const std::function<void(int)> grow = [&](int from) {
      if (static_cast<int>(current.size()) == class_size) {
        subsets.push_back(current);
        return;
      }
      for (int s = from; s < kb.n_symbols(); ++s) {
        current.push_back(s);
        grow(s + 1);
        current.pop_back();
      }
    };
    grow(0);
    std::vector<LabelHypothesis> space;
    for (const auto& pos : subsets)
      for (const auto& neg : subsets) {
        bool overlap = false;
        for (Symbol s : pos)
          if (std::find(neg.begin(), neg.end(), s) != neg.end()) overlap = true;
        if (!overlap) space.push_back({pos, neg});
      }
    return space;
  }

  BayesPrediction predict(const IclPromptObs& prompt,
                          const std::array<int, 2>& candidates) const {
    // Exact integer arithmetic: the uniform prior cancels, and each shot
    // scales a hypothesis weight by twice its likelihood, i.e. by 0, 1, or
    // 2. Ties are then integer ties, so the id tie-break is robust.
    if (prompt.shots.size() > 45)
      throw ConfigError("bayes learner: more than 45 shots would overflow "
                        "the exact weight arithmetic");
    std::vector<std::uint64_t> weight(space_.size(), 1);
    for (const IclShotObs& shot : prompt.shots) {
      const Saturation sat = depth_map(kb_, shot.input);
      for (std::size_t h = 0; h < space_.size(); ++h)
        weight[h] *=
            doubled_likelihood(space_[h], sat, shot.verbalizer, candidates);
    }

    std::uint64_t mass = 0;
    for (std::uint64_t w : weight) mass += w;

    BayesPrediction out;
    if (mass == 0) {
      out.contradiction = true;
      out.score_first = out.score_second = 0.5L;
      out.verbalizer = std::min(candidates[0], candidates[1]);
      return out;
    }

    const Saturation sat = depth_map(kb_, prompt.test_input);
    std::uint64_t first2 = 0, second2 = 0;  // scores scaled by 2 * mass
    for (std::size_t h = 0; h < space_.size(); ++h) {
      if (weight[h] == 0) continue;
      first2 +=
          weight[h] * doubled_likelihood(space_[h], sat, candidates[0], candidates);
      second2 +=
          weight[h] * doubled_likelihood(space_[h], sat, candidates[1], candidates);
    }
    out.score_first = static_cast<long double>(first2) /
                      (2.0L * static_cast<long double>(mass));
    out.score_second = static_cast<long double>(second2) /
                       (2.0L * static_cast<long double>(mass));
    if (first2 > second2)
      out.verbalizer = candidates[0];
    else if (second2 > first2)
      out.verbalizer = candidates[1];
    else
      out.verbalizer = std::min(candidates[0], candidates[1]);
    return out;
  }

  int hypothesis_count() const { return static_cast<int>(space_.size()); }

 private:
  // 2 * Pr(observed verbalizer | input closure, hypothesis): the likelihood
  // is 1 (hypothesis explains the label), 0 (contradicts it), or 1/2 (input
  // touches both classes or neither, so the label is uninformative).
  static std::uint64_t doubled_likelihood(const LabelHypothesis& hyp,
                                          const Saturation& sat, int verbalizer,
                                          const std::array<int, 2>& candidates) {
    const auto hits = [&sat](const std::vector<Symbol>& symbols) {
      for (Symbol s : symbols)
        if (sat.contains(s)) return true;
      return false;
    };
    const bool pos_hit = hits(hyp.positive);
    const bool neg_hit = hits(hyp.negative);
    if (pos_hit == neg_hit) return 1;  // ambiguous or untouched
    const int implied = pos_hit ? candidates[0] : candidates[1];
    return implied == verbalizer ? 2 : 0;
  }

  const KnowledgeBase& kb_;
  std::vector<LabelHypothesis> space_;
};

}  // namespace calcutec
