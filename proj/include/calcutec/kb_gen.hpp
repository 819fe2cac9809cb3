#pragma once

// Random knowledge bases: for every symbol, a fixed number of distinct
// two-antecedent rules deriving it, antecedents drawn uniformly from the
// rest of the alphabet.

#include <set>
#include <utility>

#include "calcutec/logic.hpp"
#include "calcutec/rng.hpp"

namespace calcutec {

struct KbGenConfig {
  int n_symbols = 100;
  int rules_per_symbol = 5;
  std::uint64_t seed = 0;
  // Deviation knob: when set, the same antecedent pair may derive a symbol
  // twice. Off by default; generation rejects duplicates.
  bool allow_duplicates = false;
};

inline KnowledgeBase generate_kb(const KbGenConfig& config) {
  if (config.n_symbols < 3)
    throw ConfigError("need at least 3 symbols for two distinct antecedents");
  if (config.rules_per_symbol < 1) throw ConfigError("rules_per_symbol must be >= 1");
  const long others = config.n_symbols - 1;
  const long distinct_pairs = others * (others - 1) / 2;
  if (!config.allow_duplicates && distinct_pairs < config.rules_per_symbol)
    throw ConfigError("only " + std::to_string(distinct_pairs) +
                      " distinct antecedent pairs exist per consequent; cannot place " +
                      std::to_string(config.rules_per_symbol));

  Rng rng(derive_seed(config.seed, {kKbStream}));
  KnowledgeBase kb(config.n_symbols);
  for (Symbol c = 0; c < config.n_symbols; ++c) {
    std::set<std::pair<Symbol, Symbol>> used;
    int placed = 0;
    while (placed < config.rules_per_symbol) {
      // two distinct symbols, both different from the consequent
      Symbol a = static_cast<Symbol>(rng.next_below(static_cast<std::uint64_t>(config.n_symbols - 1)));
      if (a >= c) ++a;
      Symbol b = static_cast<Symbol>(rng.next_below(static_cast<std::uint64_t>(config.n_symbols - 2)));
      if (b >= std::min(a, c)) ++b;
      if (b >= std::max(a, c)) ++b;
      if (!used.insert(std::minmax(a, b)).second && !config.allow_duplicates) continue;
      kb.add_rule(make_rule({a, b}, c));
      ++placed;
    }
  }
  return kb;
}

}  // namespace calcutec
