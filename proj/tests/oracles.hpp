#pragma once

// Brute-force reference implementations used only by tests. Each oracle
// computes the same quantity as a production routine by a structurally
// different algorithm, so agreement is meaningful evidence.

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "calcutec/logic.hpp"

namespace oracle {

using calcutec::KnowledgeBase;
using calcutec::ProofNode;
using calcutec::ProofTree;
using calcutec::Symbol;

// Closure by exhaustive search over derivation states: from the premise set,
// apply one applicable rule at a time in every possible order (BFS over
// symbol-set states, |alphabet| <= 16). Returns the union of all reachable
// states and checks confluence: every maximal state must be identical.
inline std::set<Symbol> closure_by_state_search(const KnowledgeBase& kb,
                                                const std::vector<Symbol>& premise) {
  using Mask = std::uint32_t;
  if (kb.n_symbols() > 16) throw std::logic_error("state search limited to 16 symbols");
  Mask start = 0;
  for (Symbol s : premise) start |= Mask(1) << s;

  std::set<Mask> seen{start};
  std::vector<Mask> frontier{start};
  std::set<Mask> maximal;
  while (!frontier.empty()) {
    Mask state = frontier.back();
    frontier.pop_back();
    bool extended = false;
    for (const auto& rule : kb.rules()) {
      Mask need = 0;
      for (Symbol a : rule.antecedents) need |= Mask(1) << a;
      if ((state & need) == need) {
        Mask next = state | (Mask(1) << rule.consequent);
        if (next != state) {
          extended = true;
          if (seen.insert(next).second) frontier.push_back(next);
        }
      }
    }
    if (!extended) maximal.insert(state);
  }
  if (maximal.size() != 1) throw std::logic_error("closure is not confluent");
  std::set<Symbol> out;
  for (Symbol s = 0; s < kb.n_symbols(); ++s)
    if (*maximal.begin() & (Mask(1) << s)) out.insert(s);
  return out;
}

// Closure by repeated full passes over the rule list (any alphabet size).
inline std::set<Symbol> closure_by_passes(const KnowledgeBase& kb,
                                          const std::vector<Symbol>& premise) {
  std::set<Symbol> have(premise.begin(), premise.end());
  bool changed = true;
  while (changed) {
    changed = false;
    for (const auto& rule : kb.rules()) {
      if (have.count(rule.consequent)) continue;
      bool all = true;
      for (Symbol a : rule.antecedents)
        if (!have.count(a)) {
          all = false;
          break;
        }
      if (all) {
        have.insert(rule.consequent);
        changed = true;
      }
    }
  }
  return have;
}

// Minimal derivation heights by level tables: reach[k] = symbols derivable by
// some tree of height <= k. h(s) = first k with s present.
inline std::map<Symbol, int> depths_by_levels(const KnowledgeBase& kb,
                                              const std::vector<Symbol>& premise) {
  std::map<Symbol, int> h;
  std::set<Symbol> reach(premise.begin(), premise.end());
  for (Symbol s : reach) h[s] = 0;
  for (int k = 1; k <= kb.n_symbols() + 1; ++k) {
    std::set<Symbol> next = reach;
    for (const auto& rule : kb.rules()) {
      bool all = true;
      for (Symbol a : rule.antecedents)
        if (!reach.count(a)) {
          all = false;
          break;
        }
      if (all) next.insert(rule.consequent);
    }
    for (Symbol s : next)
      if (!h.count(s)) h[s] = k;
    if (next == reach) break;
    reach = next;
  }
  return h;
}

// ---------------------------------------------------------------------------
// Exhaustive proof-tree enumeration for tiny knowledge bases.

struct TreeSketch {
  Symbol symbol;
  int rule_id;  // -1 leaf
  std::vector<TreeSketch> kids;

  int height() const {
    int h = 0;
    for (const auto& k : kids) h = std::max(h, 1 + k.height());
    return h;
  }
  bool contains(Symbol s) const {
    if (symbol == s) return true;
    for (const auto& k : kids)
      if (k.contains(s)) return true;
    return false;
  }
};

inline void enumerate_trees(const KnowledgeBase& kb, const std::set<Symbol>& premise,
                            Symbol goal, int max_height, std::vector<TreeSketch>& out,
                            std::size_t cap = 200000) {
  if (out.size() >= cap) return;
  if (premise.count(goal)) out.push_back(TreeSketch{goal, -1, {}});
  if (max_height <= 0) return;
  for (int rid : kb.rules_for_consequent(goal)) {
    const auto& rule = kb.rule(rid);
    // cartesian product of sub-derivations, one per antecedent
    std::vector<std::vector<TreeSketch>> options;
    bool feasible = true;
    for (Symbol a : rule.antecedents) {
      std::vector<TreeSketch> subs;
      enumerate_trees(kb, premise, a, max_height - 1, subs, cap);
      if (subs.empty()) {
        feasible = false;
        break;
      }
      options.push_back(std::move(subs));
    }
    if (!feasible) continue;
    std::vector<std::size_t> pick(options.size(), 0);
    while (true) {
      TreeSketch t{goal, rid, {}};
      for (std::size_t i = 0; i < options.size(); ++i) t.kids.push_back(options[i][pick[i]]);
      out.push_back(std::move(t));
      if (out.size() >= cap) return;
      std::size_t i = 0;
      for (; i < pick.size(); ++i) {
        if (++pick[i] < options[i].size()) break;
        pick[i] = 0;
      }
      if (i == pick.size()) break;
    }
  }
}

inline std::vector<TreeSketch> all_trees(const KnowledgeBase& kb,
                                         const std::vector<Symbol>& premise, Symbol goal,
                                         int max_height) {
  std::vector<TreeSketch> out;
  std::set<Symbol> prem(premise.begin(), premise.end());
  enumerate_trees(kb, prem, goal, max_height, out);
  return out;
}

inline ProofTree to_proof_tree(const TreeSketch& sketch) {
  ProofTree tree;
  tree.root_symbol = sketch.symbol;
  auto build = [&tree](auto&& self, const TreeSketch& node) -> int {
    std::vector<int> kids;
    for (const auto& k : node.kids) kids.push_back(self(self, k));
    tree.nodes.push_back(ProofNode{node.symbol, node.rule_id, std::move(kids)});
    return static_cast<int>(tree.nodes.size()) - 1;
  };
  tree.root = build(build, sketch);
  return tree;
}

// ---------------------------------------------------------------------------
// Independent modulo-16 evaluator over rendered equation text, e.g.
// "3 * 4 + 2 = 14". Parses the string from scratch and applies operator
// precedence; returns false on any mismatch or malformed input.

inline bool check_equation_mod16(const std::string& text) {
  auto tokens = calcutec::split_tokens(text);
  auto eq = std::find(tokens.begin(), tokens.end(), "=");
  if (eq == tokens.end() || eq + 2 != tokens.end()) return false;
  std::vector<long> values;
  std::vector<char> ops;
  bool expect_value = true;
  for (auto it = tokens.begin(); it != eq; ++it) {
    if (expect_value) {
      char* end = nullptr;
      long v = std::strtol(it->c_str(), &end, 10);
      if (end == it->c_str() || *end != '\0' || v < 0 || v > 15) return false;
      values.push_back(v);
    } else {
      if (*it != "+" && *it != "*") return false;
      ops.push_back((*it)[0]);
    }
    expect_value = !expect_value;
  }
  if (values.empty() || expect_value || ops.size() + 1 != values.size()) return false;

  // collapse products, then sum
  std::vector<long> terms{values[0]};
  for (std::size_t i = 0; i < ops.size(); ++i) {
    if (ops[i] == '*')
      terms.back() = terms.back() * values[i + 1] % 16;
    else
      terms.push_back(values[i + 1]);
  }
  long total = 0;
  for (long t : terms) total = (total + t) % 16;

  char* end = nullptr;
  long expect = std::strtol((eq + 1)->c_str(), &end, 10);
  if (end == (eq + 1)->c_str() || *end != '\0') return false;
  return total == expect;
}

// Linear-space mixture probability of an (input, label) sequence: no logs,
// no shared code with the production implementation.
inline long double mixture_sequence_prob(
    const std::vector<long double>& prior,
    const std::vector<std::vector<long double>>& input_prob,
    const std::vector<std::vector<std::vector<long double>>>& label_prob,
    const std::vector<std::pair<int, int>>& seq) {
  long double total = 0;
  for (std::size_t z = 0; z < prior.size(); ++z) {
    long double w = prior[z];
    for (const auto& [x, r] : seq)
      w *= input_prob[z][static_cast<std::size_t>(x)] *
           label_prob[z][static_cast<std::size_t>(x)][static_cast<std::size_t>(r)];
    total += w;
  }
  return total;
}

}  // namespace oracle
