#pragma once

// Sampling machinery for reasoning paragraphs: premises that entail a topic,
// extra premises that deepen the derivation structure, goals whose proofs
// route through the topic, and the flattening of proof trees into rendered
// step sequences.

#include <climits>
#include <optional>
#include <set>
#include <utility>

#include "calcutec/logic.hpp"
#include "calcutec/rng.hpp"

namespace calcutec {

struct Step {
  std::vector<Symbol> antecedents;  // rendered order, may be perturbed later
  Symbol consequent = -1;

  bool operator==(const Step&) const = default;
};

using StepSequence = std::vector<Step>;

struct ProofObligation {
  std::vector<Symbol> premise;
  Symbol goal = -1;
  std::optional<Symbol> must_contain;  // a node with this label must appear
  int min_depth = 0;                   // tree height must strictly exceed this
};

struct PremiseSampleConfig {
  int max_premise = 8;
  double stop_prob = 0.5;
  // Keep {s} itself only when s has no deriving rules; otherwise the root is
  // always expanded at least once.
  bool allow_reflexive = false;
};

// Backward random expansion from s: each worklist symbol either becomes a
// premise leaf (stop probability, no deriving rules, or the leaf cap) or is
// replaced by the antecedents of a uniformly chosen rule deriving it.
// The returned set always entails s.
inline std::vector<Symbol> sample_premise_for(const KnowledgeBase& kb, Symbol s, Rng& rng,
                                              const PremiseSampleConfig& config = {}) {
  kb.check_symbol(s);
  if (config.max_premise < 1) throw ConfigError("max_premise must be >= 1");

  std::vector<Symbol> open{s};
  std::set<Symbol> leaves;
  bool root = true;
  while (!open.empty()) {
    Symbol y = open.back();
    open.pop_back();
    const auto& deriving = kb.rules_for_consequent(y);
    const bool at_cap =
        static_cast<int>(leaves.size() + open.size()) + 1 >= config.max_premise;
    bool stop = deriving.empty() || at_cap;
    if (!stop && !(root && !config.allow_reflexive)) stop = rng.bernoulli(config.stop_prob);
    root = false;
    if (stop) {
      leaves.insert(y);
      continue;
    }
    const auto& rule = kb.rule(static_cast<int>(deriving[rng.next_below(deriving.size())]));
    for (Symbol a : rule.antecedents) open.push_back(a);
  }
  return std::vector<Symbol>(leaves.begin(), leaves.end());
}

// A symbol outside the closure of `premise` whose addition strictly increases
// the maximum derivation depth, uniform among all qualifying symbols.
inline std::optional<Symbol> find_extra_premise(const KnowledgeBase& kb,
                                                std::span<const Symbol> premise, Rng& rng) {
  SaturateScratch scratch;
  Saturation base = saturate(kb, premise, &scratch);
  const int base_depth = base.max_depth;

  Saturation probe;
  std::vector<Symbol> extended(premise.begin(), premise.end());
  extended.push_back(0);
  std::vector<Symbol> qualifying;
  for (Symbol x = 0; x < kb.n_symbols(); ++x) {
    if (base.contains(x)) continue;
    // x can only change the closure if some rule using it has every other
    // antecedent already derived; otherwise the closure gains x at depth 0
    // and nothing else, leaving the maximum depth unchanged.
    bool can_fire = false;
    for (int rid : kb.rules_with_antecedent(x)) {
      bool others_in = true;
      for (Symbol a : kb.rule(rid).antecedents)
        if (a != x && !base.contains(a)) {
          others_in = false;
          break;
        }
      if (others_in) {
        can_fire = true;
        break;
      }
    }
    if (!can_fire) continue;
    extended.back() = x;
    saturate_into(kb, extended, &scratch, probe);
    if (probe.max_depth > base_depth) qualifying.push_back(x);
  }
  if (qualifying.empty()) return std::nullopt;
  return qualifying[rng.next_below(qualifying.size())];
}

namespace detail {

constexpr int kInfDepth = INT_MAX / 4;

// Minimal height of a derivation of each symbol that contains a node labeled
// `via`, by relaxation to fixpoint. Base case: any derivation of `via` itself.
// For other symbols, one antecedent branch must carry the label; the rest may
// use unconstrained minimal-height derivations.
inline std::vector<int> routed_depths(const KnowledgeBase& kb, const Saturation& sat,
                                      Symbol via) {
  const std::size_t n = static_cast<std::size_t>(kb.n_symbols());
  std::vector<int> routed(n, kInfDepth);
  if (!sat.contains(via)) return routed;
  routed[static_cast<std::size_t>(via)] = sat.depth[static_cast<std::size_t>(via)];

  bool changed = true;
  int guard = kb.n_symbols() + 2;
  while (changed && guard-- > 0) {
    changed = false;
    for (const auto& rule : kb.rules()) {
      if (rule.consequent == via) continue;
      int max_plain = 0;
      bool in_closure = true;
      for (Symbol a : rule.antecedents) {
        int d = sat.depth[static_cast<std::size_t>(a)];
        if (d < 0) {
          in_closure = false;
          break;
        }
        max_plain = std::max(max_plain, d);
      }
      if (!in_closure) continue;
      for (std::size_t i = 0; i < rule.antecedents.size(); ++i) {
        int through = routed[static_cast<std::size_t>(rule.antecedents[i])];
        if (through >= kInfDepth) continue;
        int others = 0;
        for (std::size_t j = 0; j < rule.antecedents.size(); ++j) {
          if (j == i) continue;
          others = std::max(others, sat.depth[static_cast<std::size_t>(rule.antecedents[j])]);
        }
        int candidate = 1 + std::max(through, others);
        auto& slot = routed[static_cast<std::size_t>(rule.consequent)];
        if (candidate < slot) {
          slot = candidate;
          changed = true;
        }
      }
    }
  }
  return routed;
}

}  // namespace detail

// A goal entailed by `premise` whose minimal derivation height strictly
// exceeds min_depth (so every proof of it does) and which admits a proof tree
// containing the topic. Uniform over qualifying symbols; nullopt when none.
inline std::optional<ProofObligation> sample_goal(const KnowledgeBase& kb,
                                                  std::span<const Symbol> premise,
                                                  Symbol topic, int min_depth, Rng& rng) {
  Saturation sat = saturate(kb, premise);
  if (!sat.contains(topic))
    throw std::invalid_argument("topic " + symbol_token(topic) +
                                " is not entailed by the premise");
  if (sat.max_depth <= min_depth) return std::nullopt;  // no symbol can qualify
  auto routed = detail::routed_depths(kb, sat, topic);
  std::vector<Symbol> qualifying;
  for (Symbol g : sat.order) {
    if (sat.depth[static_cast<std::size_t>(g)] > min_depth &&
        routed[static_cast<std::size_t>(g)] < detail::kInfDepth) {
      qualifying.push_back(g);
    }
  }
  if (qualifying.empty()) return std::nullopt;
  Symbol goal = qualifying[rng.next_below(qualifying.size())];
  return ProofObligation{std::vector<Symbol>(premise.begin(), premise.end()), goal, topic,
                         min_depth};
}

struct TreeSampleConfig {
  double stop_prob = 0.5;  // chance to close a premise symbol as a leaf
  int height_slack = 2;    // extra height budget beyond the minimum required
  int max_attempts = 16;
};

// Backward derivation sampling under a height budget. The budget shrinks by
// one per level, and only rules whose antecedents can finish within the
// remaining budget are eligible, so sampling always terminates with a valid
// tree. When the obligation names a must_contain symbol, one branch is routed
// toward it using the routed-depth table.
inline ProofTree build_proof_tree(const KnowledgeBase& kb, const ProofObligation& oblig,
                                  Rng& rng, const TreeSampleConfig& config = {}) {
  Saturation sat = saturate(kb, oblig.premise);
  if (!sat.contains(oblig.goal))
    throw std::invalid_argument("goal " + symbol_token(oblig.goal) +
                                " is not entailed by the premise");
  std::vector<int> routed;
  if (oblig.must_contain) {
    kb.check_symbol(*oblig.must_contain);
    routed = detail::routed_depths(kb, sat, *oblig.must_contain);
    if (routed[static_cast<std::size_t>(oblig.goal)] >= detail::kInfDepth)
      throw std::invalid_argument("no proof of " + symbol_token(oblig.goal) +
                                  " contains " + symbol_token(*oblig.must_contain));
  }

  std::vector<char> in_premise(static_cast<std::size_t>(kb.n_symbols()), 0);
  for (Symbol s : oblig.premise) in_premise[static_cast<std::size_t>(s)] = 1;

  const int h_goal = sat.depth[static_cast<std::size_t>(oblig.goal)];
  int base_budget = std::max(h_goal, oblig.min_depth + 1);
  if (oblig.must_contain)
    base_budget = std::max(base_budget, routed[static_cast<std::size_t>(oblig.goal)]);

  for (int attempt = 0; attempt < config.max_attempts; ++attempt) {
    const int budget = base_budget + config.height_slack + attempt;
    ProofTree tree;
    tree.root_symbol = oblig.goal;

    auto expand = [&](auto&& self, Symbol m, int b, bool route) -> int {
      if (route && m == *oblig.must_contain) route = false;  // label reached

      if (!route) {
        std::vector<int> eligible;
        for (int rid : kb.rules_for_consequent(m)) {
          const auto& rule = kb.rule(rid);
          bool ok = true;
          for (Symbol a : rule.antecedents) {
            int d = sat.depth[static_cast<std::size_t>(a)];
            if (d < 0 || d > b - 1) {
              ok = false;
              break;
            }
          }
          if (ok) eligible.push_back(rid);
        }
        const bool leaf_ok = in_premise[static_cast<std::size_t>(m)];
        if (leaf_ok && (eligible.empty() || rng.bernoulli(config.stop_prob))) {
          tree.nodes.push_back(ProofNode{m, -1, {}});
          return static_cast<int>(tree.nodes.size()) - 1;
        }
        if (eligible.empty())
          throw SamplingError("height budget underflow at " + symbol_token(m));
        int rid = eligible[rng.next_below(eligible.size())];
        const auto& rule = kb.rule(rid);
        std::vector<int> kids;
        for (Symbol a : rule.antecedents) kids.push_back(self(self, a, b - 1, false));
        tree.nodes.push_back(ProofNode{m, rid, std::move(kids)});
        return static_cast<int>(tree.nodes.size()) - 1;
      }

      // routing: pick a rule and an antecedent branch that can still reach
      // the required label within the remaining budget
      std::vector<std::pair<int, std::size_t>> eligible;
      for (int rid : kb.rules_for_consequent(m)) {
        const auto& rule = kb.rule(rid);
        bool in_closure = true;
        for (Symbol a : rule.antecedents) {
          if (sat.depth[static_cast<std::size_t>(a)] < 0) {
            in_closure = false;
            break;
          }
        }
        if (!in_closure) continue;
        for (std::size_t i = 0; i < rule.antecedents.size(); ++i) {
          if (routed[static_cast<std::size_t>(rule.antecedents[i])] > b - 1) continue;
          bool ok = true;
          for (std::size_t j = 0; j < rule.antecedents.size(); ++j) {
            if (j != i && sat.depth[static_cast<std::size_t>(rule.antecedents[j])] > b - 1) {
              ok = false;
              break;
            }
          }
          if (ok) eligible.emplace_back(rid, i);
        }
      }
      if (eligible.empty())
        throw SamplingError("routing budget underflow at " + symbol_token(m));
      auto [rid, branch] = eligible[rng.next_below(eligible.size())];
      const auto& rule = kb.rule(rid);
      std::vector<int> kids;
      for (std::size_t i = 0; i < rule.antecedents.size(); ++i)
        kids.push_back(self(self, rule.antecedents[i], b - 1, i == branch));
      tree.nodes.push_back(ProofNode{m, rid, std::move(kids)});
      return static_cast<int>(tree.nodes.size()) - 1;
    };

    tree.root = expand(expand, oblig.goal, budget, oblig.must_contain.has_value());
    if (proof_height(tree) > oblig.min_depth) return tree;
  }
  throw SamplingError("no proof tree of height > " + std::to_string(oblig.min_depth) +
                      " for " + symbol_token(oblig.goal) + " within attempt budget");
}

// Flattens a proof tree into one step per internal node, in a uniformly
// random topological order (children before parents); antecedents of each
// step are rendered in random order.
inline StepSequence flatten(const ProofTree& tree, Rng& rng) {
  const int n = static_cast<int>(tree.nodes.size());
  std::vector<int> pending(static_cast<std::size_t>(n), 0);
  std::vector<int> parent(static_cast<std::size_t>(n), -1);
  std::vector<int> ready;
  for (int i = 0; i < n; ++i) {
    const auto& node = tree.nodes[static_cast<std::size_t>(i)];
    if (node.rule_id == -1) continue;
    for (int c : node.children) {
      if (tree.nodes[static_cast<std::size_t>(c)].rule_id != -1) {
        ++pending[static_cast<std::size_t>(i)];
        parent[static_cast<std::size_t>(c)] = i;
      }
    }
  }
  for (int i = 0; i < n; ++i) {
    const auto& node = tree.nodes[static_cast<std::size_t>(i)];
    if (node.rule_id != -1 && pending[static_cast<std::size_t>(i)] == 0) ready.push_back(i);
  }

  StepSequence steps;
  while (!ready.empty()) {
    std::size_t pick = static_cast<std::size_t>(rng.next_below(ready.size()));
    int idx = ready[pick];
    ready[pick] = ready.back();
    ready.pop_back();

    const auto& node = tree.nodes[static_cast<std::size_t>(idx)];
    Step step;
    step.consequent = node.symbol;
    for (int c : node.children)
      step.antecedents.push_back(tree.nodes[static_cast<std::size_t>(c)].symbol);
    rng.shuffle(step.antecedents);
    steps.push_back(std::move(step));

    // walk up through leaf-only ancestors is unnecessary: only the direct
    // parent waits on this node
    int p = parent[static_cast<std::size_t>(idx)];
    if (p >= 0 && --pending[static_cast<std::size_t>(p)] == 0) ready.push_back(p);
  }
  return steps;
}

// First step absorbs the full premise (in random order); readers reconstruct
// the narrow rule from the knowledge base.
inline void rewrite_first_step(StepSequence& steps, std::span<const Symbol> premise,
                               Rng& rng) {
  if (steps.empty()) return;
  steps[0].antecedents.assign(premise.begin(), premise.end());
  rng.shuffle(steps[0].antecedents);
}

// ---------------------------------------------------------------------------
// Step-sequence replay: validates that a rendered sequence consists of rule
// applications whose antecedents were premises or earlier consequents. The
// first step is checked under the relaxed rule that it may carry extra
// antecedents (the premise rewrite).

struct ReplayResult {
  bool ok = true;
  int step = -1;
  std::string why;
};

inline ReplayResult replay_steps(const KnowledgeBase& kb, std::span<const Symbol> premise,
                                 const StepSequence& steps,
                                 std::optional<Symbol> goal = std::nullopt,
                                 bool relaxed_first = true) {
  auto fail = [](int step, std::string why) {
    return ReplayResult{false, step, std::move(why)};
  };
  std::vector<char> known(static_cast<std::size_t>(kb.n_symbols()), 0);
  for (Symbol s : premise) {
    kb.check_symbol(s);
    known[static_cast<std::size_t>(s)] = 1;
  }
  if (steps.empty()) return fail(-1, "empty step sequence");
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const Step& st = steps[i];
    if (st.consequent < 0 || st.consequent >= kb.n_symbols())
      return fail(static_cast<int>(i), "consequent out of range");
    for (Symbol a : st.antecedents) {
      if (a < 0 || a >= kb.n_symbols()) return fail(static_cast<int>(i), "antecedent out of range");
      if (!known[static_cast<std::size_t>(a)])
        return fail(static_cast<int>(i), symbol_token(a) + " not yet derived");
    }
    if (i == 0 && relaxed_first) {
      // some rule deriving the consequent must be covered by the antecedents
      bool covered = false;
      for (int rid : kb.rules_for_consequent(st.consequent)) {
        const auto& rule = kb.rule(rid);
        covered = std::all_of(rule.antecedents.begin(), rule.antecedents.end(), [&](Symbol a) {
          return std::find(st.antecedents.begin(), st.antecedents.end(), a) !=
                 st.antecedents.end();
        });
        if (covered) break;
      }
      if (!covered) return fail(0, "first step covers no rule");
    } else {
      if (!kb.find_rule(st.antecedents, st.consequent))
        return fail(static_cast<int>(i), "no such rule");
    }
    known[static_cast<std::size_t>(st.consequent)] = 1;
  }
  if (goal && steps.back().consequent != *goal)
    return fail(static_cast<int>(steps.size()) - 1, "final consequent is not the goal");
  return ReplayResult{};
}

}  // namespace calcutec
