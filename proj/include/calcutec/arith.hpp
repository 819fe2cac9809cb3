#pragma once

// Modular-arithmetic instruction data: five numbers joined by + and *,
// evaluated mod 16. The multi-step variant reduces the expression one
// adjacent pair at a time (multiplications first, so every rendered line is
// precedence-safe) and optionally splices consecutive linked steps into one
// equation; the single-step variant renders the whole expression at once.
// Splits: train/validation/test_seen draw all five numbers from {0..9} or
// all from {6..15}; test_unseen exhaustively enumerates the 6^5 tuples with
// positions 1,3,5 in {0..5} and positions 2,4 in {10..15}.

#include <array>
#include <atomic>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <mutex>
#include <string>
#include <thread>
#include <unordered_set>
#include <utility>
#include <vector>

#include <json.hpp>

#include "calcutec/io.hpp"
#include "calcutec/rng.hpp"

namespace calcutec {

inline constexpr int kArithMod = 16;
inline constexpr int kArithNumbers = 5;
inline constexpr int kArithOps = 4;
// Exhaustive unseen split: 6 choices at each of the 5 positions.
inline constexpr int kArithUnseenCount = 7776;

inline int arith_apply(int lhs, char op, int rhs) {
  if (lhs < 0 || lhs >= kArithMod || rhs < 0 || rhs >= kArithMod)
    throw ConfigError("arith_apply: operand out of mod-16 range");
  if (op == '+') return (lhs + rhs) % kArithMod;
  if (op == '*') return (lhs * rhs) % kArithMod;
  throw ConfigError("arith_apply: unknown operator");
}

// Precedence-respecting evaluation: collapse * runs, then sum, all mod 16.
inline int eval_expression_mod16(const std::array<int, 5>& numbers,
                                 const std::array<char, 4>& ops) {
  std::vector<int> terms{numbers[0] % kArithMod};
  if (numbers[0] < 0 || numbers[0] >= kArithMod)
    throw ConfigError("eval_expression_mod16: operand out of range");
  for (int i = 0; i < kArithOps; ++i) {
    int v = numbers[static_cast<std::size_t>(i) + 1];
    if (v < 0 || v >= kArithMod)
      throw ConfigError("eval_expression_mod16: operand out of range");
    if (ops[static_cast<std::size_t>(i)] == '*')
      terms.back() = terms.back() * v % kArithMod;
    else if (ops[static_cast<std::size_t>(i)] == '+')
      terms.push_back(v);
    else
      throw ConfigError("eval_expression_mod16: unknown operator");
  }
  int total = 0;
  for (int t : terms) total = (total + t) % kArithMod;
  return total;
}

// One reduction step. Operands are kept in original expression order with
// the original operators between them; refs[j] is the id of the step whose
// result operand j is, or -1 when it is one of the input numbers. A freshly
// generated step has two operands; sliced-together steps have more.
struct ArithStep {
  int id = 0;
  std::vector<int> values;
  std::vector<char> ops;  // ops[j] joins values[j] and values[j+1]
  std::vector<int> refs;
  int result = 0;

  bool operator==(const ArithStep&) const = default;
};

inline std::string render_step(const ArithStep& step) {
  std::string out;
  for (std::size_t j = 0; j < step.values.size(); ++j) {
    if (j > 0) {
      out += ' ';
      out += step.ops[j - 1];
      out += ' ';
    }
    out += std::to_string(step.values[j]);
  }
  out += " = ";
  out += std::to_string(step.result);
  return out;
}

// Reduces the expression one adjacent pair at a time. While any * operator
// remains, the sampled pair must be joined by *; the result replaces the
// pair at its position. Multiplications therefore all happen before any
// addition, which keeps every rendering precedence-safe and makes the final
// result equal to eval_expression_mod16 regardless of the sampled order.
inline std::vector<ArithStep> gen_multi_step(const std::array<int, 5>& numbers,
                                             const std::array<char, 4>& operators,
                                             Rng& rng) {
  struct Item {
    int value;
    int ref;
  };
  std::vector<Item> items;
  items.reserve(kArithNumbers);
  for (int n : numbers) {
    if (n < 0 || n >= kArithMod)
      throw ConfigError("gen_multi_step: number out of mod-16 range");
    items.push_back({n, -1});
  }
  std::vector<char> ops(operators.begin(), operators.end());
  for (char op : ops)
    if (op != '+' && op != '*')
      throw ConfigError("gen_multi_step: unknown operator");

  std::vector<ArithStep> steps;
  std::vector<int> candidates;
  while (items.size() > 1) {
    candidates.clear();
    for (std::size_t j = 0; j < ops.size(); ++j)
      if (ops[j] == '*') candidates.push_back(static_cast<int>(j));
    if (candidates.empty())
      for (std::size_t j = 0; j < ops.size(); ++j)
        candidates.push_back(static_cast<int>(j));
    const std::size_t j = static_cast<std::size_t>(
        candidates[rng.next_below(candidates.size())]);

    ArithStep step;
    step.id = static_cast<int>(steps.size());
    step.values = {items[j].value, items[j + 1].value};
    step.ops = {ops[j]};
    step.refs = {items[j].ref, items[j + 1].ref};
    step.result = arith_apply(items[j].value, ops[j], items[j + 1].value);
    items[j] = {step.result, step.id};
    items.erase(items.begin() + static_cast<std::ptrdiff_t>(j) + 1);
    ops.erase(ops.begin() + static_cast<std::ptrdiff_t>(j));
    steps.push_back(std::move(step));
  }
  return steps;
}

// Scans from the second step; each scanned step draws one coin. On success,
// if the last retained step's result appears among the current step's
// operands, that operand is replaced in place by the retained step's operand
// list (preserving original expression order and operators) and the retained
// step is dropped; otherwise the step is appended unchanged. Identity is
// tracked through refs, not values, so equal mod-16 values never splice the
// wrong operand.
inline std::vector<ArithStep> merge_steps(const std::vector<ArithStep>& steps,
                                          Rng& rng,
                                          double merge_probability = 0.5) {
  if (merge_probability < 0.0 || merge_probability > 1.0)
    throw ConfigError("merge_steps: merge_probability outside [0, 1]");
  if (steps.empty()) return {};
  std::vector<ArithStep> out{steps.front()};
  for (std::size_t i = 1; i < steps.size(); ++i) {
    const bool attempt = rng.bernoulli(merge_probability);
    const ArithStep& cur = steps[i];
    const ArithStep& prev = out.back();
    std::size_t link = cur.values.size();
    for (std::size_t j = 0; j < cur.refs.size(); ++j)
      if (cur.refs[j] == prev.id) {
        link = j;
        break;
      }
    if (!attempt || link == cur.values.size()) {
      out.push_back(cur);
      continue;
    }
    ArithStep merged;
    merged.id = cur.id;
    merged.result = cur.result;
    merged.values.assign(cur.values.begin(),
                         cur.values.begin() + static_cast<std::ptrdiff_t>(link));
    merged.values.insert(merged.values.end(), prev.values.begin(),
                         prev.values.end());
    merged.values.insert(merged.values.end(),
                         cur.values.begin() + static_cast<std::ptrdiff_t>(link) + 1,
                         cur.values.end());
    merged.refs.assign(cur.refs.begin(),
                       cur.refs.begin() + static_cast<std::ptrdiff_t>(link));
    merged.refs.insert(merged.refs.end(), prev.refs.begin(), prev.refs.end());
    merged.refs.insert(merged.refs.end(),
                       cur.refs.begin() + static_cast<std::ptrdiff_t>(link) + 1,
                       cur.refs.end());
    merged.ops.assign(cur.ops.begin(),
                      cur.ops.begin() + static_cast<std::ptrdiff_t>(link));
    merged.ops.insert(merged.ops.end(), prev.ops.begin(), prev.ops.end());
    merged.ops.insert(merged.ops.end(),
                      cur.ops.begin() + static_cast<std::ptrdiff_t>(link),
                      cur.ops.end());
    out.back() = std::move(merged);
  }
  return out;
}

inline std::string render_expression(const std::array<int, 5>& numbers,
                                     const std::array<char, 4>& operators) {
  std::string out = std::to_string(numbers[0]);
  for (int i = 0; i < kArithOps; ++i) {
    out += ' ';
    out += operators[static_cast<std::size_t>(i)];
    out += ' ';
    out += std::to_string(numbers[static_cast<std::size_t>(i) + 1]);
  }
  return out;
}

// Whole-expression equation line, e.g. "0 + 1 * 2 + 3 * 4 = 14 .".
inline std::string gen_single_step(const std::array<int, 5>& numbers,
                                   const std::array<char, 4>& operators) {
  return render_expression(numbers, operators) + " = " +
         std::to_string(eval_expression_mod16(numbers, operators)) + " .";
}

inline std::string render_multi_line(const std::vector<ArithStep>& steps) {
  std::string out;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    if (i > 0) out += " . ";
    out += render_step(steps[i]);
  }
  out += " .";
  return out;
}

// Test rows render the expression awaiting completion: "2 * 3 + 4 * 5 + 6 =".
inline std::string render_prompt(const std::array<int, 5>& numbers,
                                 const std::array<char, 4>& operators) {
  return render_expression(numbers, operators) + " =";
}

struct ArithTuple {
  std::array<int, 5> numbers{};
  std::array<char, 4> operators{};
};

// Numbers all from {0..9} or all from {6..15} (one coin per example),
// operators uniform over {+, *}.
inline ArithTuple draw_seen_tuple(Rng& rng) {
  ArithTuple t;
  const int lo = rng.bernoulli(0.5) ? 6 : 0;
  for (auto& n : t.numbers) n = lo + rng.next_int(0, 9);
  for (auto& op : t.operators) op = rng.bernoulli(0.5) ? '*' : '+';
  return t;
}

// Tuple for unseen row `index` in lexicographic (n1..n5) order: odd
// positions (1-based 1,3,5) take {0..5}, even positions (2,4) take {10..15}.
inline ArithTuple unseen_tuple(int index) {
  if (index < 0 || index >= kArithUnseenCount)
    throw ConfigError("unseen_tuple: index outside 0..7775");
  ArithTuple t;
  int rest = index;
  for (int pos = kArithNumbers - 1; pos >= 0; --pos) {
    const int digit = rest % 6;
    rest /= 6;
    t.numbers[static_cast<std::size_t>(pos)] = (pos % 2 == 1) ? 10 + digit : digit;
  }
  return t;
}

// Packs (numbers, operators) into a 24-bit key for disjointness checks.
inline std::uint32_t tuple_key(const ArithTuple& t) {
  std::uint32_t key = 0;
  for (int i = 0; i < kArithNumbers; ++i)
    key |= static_cast<std::uint32_t>(t.numbers[static_cast<std::size_t>(i)])
           << (4 * i);
  for (int i = 0; i < kArithOps; ++i)
    if (t.operators[static_cast<std::size_t>(i)] == '*')
      key |= 1u << (20 + i);
  return key;
}

enum class ArithVariant { multi, single };

inline const char* arith_variant_name(ArithVariant v) {
  return v == ArithVariant::multi ? "multi" : "single";
}

inline ArithVariant parse_arith_variant(const std::string& name) {
  if (name == "multi") return ArithVariant::multi;
  if (name == "single") return ArithVariant::single;
  throw ConfigError("unknown arithmetic variant: " + name);
}

struct ArithConfig {
  ArithVariant variant = ArithVariant::multi;
  int train = 80000;
  int validation = 10000;
  int test_seen = 10000;
  double merge_probability = 0.5;
  std::uint64_t seed = 0;
};

inline void validate_arith_config(const ArithConfig& cfg) {
  if (cfg.train < 0 || cfg.validation < 0 || cfg.test_seen < 0)
    throw ConfigError("arithmetic config: split counts must be non-negative");
  if (cfg.merge_probability < 0.0 || cfg.merge_probability > 1.0)
    throw ConfigError("arithmetic config: merge_probability outside [0, 1]");
}

struct ArithResult {
  std::filesystem::path train_path;
  std::filesystem::path validation_path;
  std::filesystem::path test_seen_path;
  std::filesystem::path test_unseen_path;
  std::string train_hash;
  std::string validation_hash;
  std::string test_seen_hash;
  std::string test_unseen_hash;
  int train = 0;
  int validation = 0;
  int test_seen = 0;
  int test_unseen = kArithUnseenCount;
};

namespace detail {

// Per-split substream tags under kArithStream.
inline constexpr std::uint64_t kTrainSplit = 0;
inline constexpr std::uint64_t kValidationSplit = 1;
inline constexpr std::uint64_t kTestSeenSplit = 2;
inline constexpr std::uint64_t kTestUnseenSplit = 3;

inline Rng arith_rng(const ArithConfig& cfg, std::uint64_t split, int index) {
  return Rng(derive_seed(cfg.seed, {StreamTag::kArithStream, split,
                                    static_cast<std::uint64_t>(index)}));
}

// Fills lines[i] = fn(i) for i in [0, count); fn must be pure per index, so
// the result is identical for any worker count.
template <typename Fn>
std::vector<std::string> generate_lines(int count, int workers, Fn&& fn) {
  std::vector<std::string> lines(static_cast<std::size_t>(count));
  if (count == 0) return lines;
  workers = std::max(1, std::min(workers, count));
  if (workers == 1) {
    for (int i = 0; i < count; ++i)
      lines[static_cast<std::size_t>(i)] = fn(i);
    return lines;
  }
  std::atomic<int> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  constexpr int kChunk = 256;
  auto worker = [&] {
    try {
      for (;;) {
        const int base = next.fetch_add(kChunk);
        if (base >= count) return;
        const int end = std::min(count, base + kChunk);
        for (int i = base; i < end; ++i)
          lines[static_cast<std::size_t>(i)] = fn(i);
      }
    } catch (...) {
      std::lock_guard<std::mutex> lock(failure_mutex);
      if (!failure) failure = std::current_exception();
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
  return lines;
}

inline std::string write_lines(const std::filesystem::path& path,
                               const std::vector<std::string>& lines) {
  auto out = open_output(path);
  for (const auto& line : lines) out << line << '\n';
  out.close();
  if (!out) throw IoError("failed writing " + path.string());
  return file_hash_hex(path);
}

}  // namespace detail

// Train/validation text line for one example (variant-dependent); the tuple
// draw precedes any variant-specific draws, so both variants see the same
// tuples for the same seed.
inline std::string arith_train_line(const ArithConfig& cfg, Rng& rng) {
  const ArithTuple t = draw_seen_tuple(rng);
  if (cfg.variant == ArithVariant::single)
    return gen_single_step(t.numbers, t.operators);
  const auto steps = gen_multi_step(t.numbers, t.operators, rng);
  return render_multi_line(merge_steps(steps, rng, cfg.merge_probability));
}

// Writes train.txt, validation.txt, test_seen.jsonl, test_unseen.jsonl.
inline ArithResult gen_splits(const ArithConfig& cfg,
                              const std::filesystem::path& out_dir,
                              int workers = env_worker_count()) {
  validate_arith_config(cfg);

  ArithResult result;
  result.train = cfg.train;
  result.validation = cfg.validation;
  result.test_seen = cfg.test_seen;
  result.train_path = out_dir / "train.txt";
  result.validation_path = out_dir / "validation.txt";
  result.test_seen_path = out_dir / "test_seen.jsonl";
  result.test_unseen_path = out_dir / "test_unseen.jsonl";

  const auto train_lines = detail::generate_lines(
      cfg.train, workers, [&](int index) {
        Rng rng = detail::arith_rng(cfg, detail::kTrainSplit, index);
        return arith_train_line(cfg, rng);
      });
  result.train_hash = detail::write_lines(result.train_path, train_lines);

  const auto validation_lines = detail::generate_lines(
      cfg.validation, workers, [&](int index) {
        Rng rng = detail::arith_rng(cfg, detail::kValidationSplit, index);
        return arith_train_line(cfg, rng);
      });
  result.validation_hash =
      detail::write_lines(result.validation_path, validation_lines);

  // Seen-range test rows must avoid every train tuple; rebuild the train
  // tuple set from the per-index streams (the tuple is always the first
  // thing an example draws).
  std::unordered_set<std::uint32_t> train_keys;
  train_keys.reserve(static_cast<std::size_t>(cfg.train) * 2);
  for (int i = 0; i < cfg.train; ++i) {
    Rng rng = detail::arith_rng(cfg, detail::kTrainSplit, i);
    train_keys.insert(tuple_key(draw_seen_tuple(rng)));
  }

  const auto seen_lines = detail::generate_lines(
      cfg.test_seen, workers, [&](int index) {
        Rng rng = detail::arith_rng(cfg, detail::kTestSeenSplit, index);
        ArithTuple t = draw_seen_tuple(rng);
        int guard = 0;
        while (train_keys.count(tuple_key(t)) > 0) {
          if (++guard > 100000)
            throw SamplingError(
                "test_seen: could not draw a tuple outside the train set");
          t = draw_seen_tuple(rng);
        }
        nlohmann::ordered_json row;
        row["prompt"] = render_prompt(t.numbers, t.operators);
        row["answer"] = eval_expression_mod16(t.numbers, t.operators);
        return row.dump();
      });
  result.test_seen_hash = detail::write_lines(result.test_seen_path, seen_lines);

  const auto unseen_lines = detail::generate_lines(
      kArithUnseenCount, workers, [&](int index) {
        ArithTuple t = unseen_tuple(index);
        Rng rng = detail::arith_rng(cfg, detail::kTestUnseenSplit, index);
        for (auto& op : t.operators) op = rng.bernoulli(0.5) ? '*' : '+';
        nlohmann::ordered_json row;
        row["prompt"] = render_prompt(t.numbers, t.operators);
        row["answer"] = eval_expression_mod16(t.numbers, t.operators);
        return row.dump();
      });
  result.test_unseen_hash =
      detail::write_lines(result.test_unseen_path, unseen_lines);

  return result;
}

}  // namespace calcutec
