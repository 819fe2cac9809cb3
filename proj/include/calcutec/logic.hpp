#pragma once

// Propositional Horn-clause core: knowledge bases of definite rules over a
// finite symbol alphabet, forward-chaining closure with minimal derivation
// heights, and proof-tree checking.

#include <algorithm>
#include <charconv>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "calcutec/io.hpp"

namespace calcutec {

using Symbol = std::int32_t;

inline std::string symbol_token(Symbol s) { return "x" + std::to_string(s); }

inline std::optional<Symbol> parse_symbol_token(std::string_view tok) {
  if (tok.size() < 2 || tok[0] != 'x') return std::nullopt;
  Symbol value = 0;
  auto [ptr, ec] = std::from_chars(tok.data() + 1, tok.data() + tok.size(), value);
  if (ec != std::errc() || ptr != tok.data() + tok.size() || value < 0) return std::nullopt;
  if (tok.size() > 2 && tok[1] == '0') return std::nullopt;  // no leading zeros
  return value;
}

struct HornRule {
  std::vector<Symbol> antecedents;  // ascending, pairwise distinct
  Symbol consequent = -1;

  bool operator==(const HornRule&) const = default;
};

// Validates and canonicalizes (antecedents sorted ascending).
inline HornRule make_rule(std::vector<Symbol> antecedents, Symbol consequent) {
  if (antecedents.empty()) throw ConfigError("rule needs at least one antecedent");
  std::sort(antecedents.begin(), antecedents.end());
  for (std::size_t i = 0; i + 1 < antecedents.size(); ++i) {
    if (antecedents[i] == antecedents[i + 1])
      throw ConfigError("rule has repeated antecedent " + symbol_token(antecedents[i]));
  }
  for (Symbol a : antecedents) {
    if (a == consequent)
      throw ConfigError("rule consequent " + symbol_token(consequent) +
                        " appears among its antecedents");
  }
  return HornRule{std::move(antecedents), consequent};
}

class KnowledgeBase {
 public:
  explicit KnowledgeBase(int n_symbols) : n_symbols_(n_symbols) {
    if (n_symbols < 1) throw ConfigError("knowledge base needs at least one symbol");
    by_consequent_.resize(static_cast<std::size_t>(n_symbols));
    by_antecedent_.resize(static_cast<std::size_t>(n_symbols));
  }

  KnowledgeBase(int n_symbols, std::vector<HornRule> rules) : KnowledgeBase(n_symbols) {
    for (auto& r : rules) add_rule(std::move(r));
  }

  int n_symbols() const { return n_symbols_; }
  const std::vector<HornRule>& rules() const { return rules_; }
  const HornRule& rule(int id) const { return rules_[static_cast<std::size_t>(id)]; }

  void check_symbol(Symbol s) const {
    if (s < 0 || s >= n_symbols_)
      throw std::invalid_argument("symbol " + std::to_string(s) + " out of range [0, " +
                                  std::to_string(n_symbols_) + ")");
  }

  int add_rule(HornRule r) {
    check_symbol(r.consequent);
    for (Symbol a : r.antecedents) check_symbol(a);
    HornRule canon = make_rule(std::move(r.antecedents), r.consequent);
    int id = static_cast<int>(rules_.size());
    by_consequent_[static_cast<std::size_t>(canon.consequent)].push_back(id);
    for (Symbol a : canon.antecedents)
      by_antecedent_[static_cast<std::size_t>(a)].push_back(id);
    rules_.push_back(std::move(canon));
    return id;
  }

  const std::vector<int>& rules_for_consequent(Symbol s) const {
    check_symbol(s);
    return by_consequent_[static_cast<std::size_t>(s)];
  }

  const std::vector<int>& rules_with_antecedent(Symbol s) const {
    check_symbol(s);
    return by_antecedent_[static_cast<std::size_t>(s)];
  }

  // Looks up a rule by antecedent set (order-free) and consequent.
  std::optional<int> find_rule(std::span<const Symbol> antecedents, Symbol consequent) const {
    if (consequent < 0 || consequent >= n_symbols_) return std::nullopt;
    std::vector<Symbol> key(antecedents.begin(), antecedents.end());
    std::sort(key.begin(), key.end());
    key.erase(std::unique(key.begin(), key.end()), key.end());
    for (int id : by_consequent_[static_cast<std::size_t>(consequent)]) {
      if (rules_[static_cast<std::size_t>(id)].antecedents == key) return id;
    }
    return std::nullopt;
  }

  std::vector<int> duplicate_rule_ids() const {
    std::vector<int> dups;
    for (Symbol s = 0; s < n_symbols_; ++s) {
      const auto& ids = by_consequent_[static_cast<std::size_t>(s)];
      for (std::size_t i = 0; i < ids.size(); ++i) {
        for (std::size_t j = i + 1; j < ids.size(); ++j) {
          if (rules_[static_cast<std::size_t>(ids[i])].antecedents ==
              rules_[static_cast<std::size_t>(ids[j])].antecedents) {
            dups.push_back(ids[j]);
          }
        }
      }
    }
    return dups;
  }

 private:
  int n_symbols_;
  std::vector<HornRule> rules_;
  std::vector<std::vector<int>> by_consequent_;
  std::vector<std::vector<int>> by_antecedent_;
};

// Closure of a premise together with minimal derivation heights.
// depth[s] == -1 means s is not entailed; premises have depth 0; otherwise
// depth[s] = min over rules deriving s of 1 + max antecedent depth.
struct Saturation {
  std::vector<int> depth;      // indexed by symbol, -1 if outside the closure
  std::vector<Symbol> order;   // closure members in nondecreasing depth order
  int max_depth = 0;           // max depth over the closure

  bool contains(Symbol s) const {
    return s >= 0 && s < static_cast<Symbol>(depth.size()) &&
           depth[static_cast<std::size_t>(s)] >= 0;
  }
  int size() const { return static_cast<int>(order.size()); }
};

// Scratch buffers so hot loops can saturate repeatedly without reallocating.
// Per-rule counters are validated lazily by epoch stamp, so each call touches
// only the rules adjacent to the closure it actually reaches.
struct SaturateScratch {
  std::vector<int> missing;           // per rule: antecedents not yet derived
  std::vector<std::uint32_t> stamp;   // epoch when `missing` was initialized
  std::uint32_t epoch = 0;
};

// Forward chaining by unit propagation: a rule fires when its last missing
// antecedent is derived. Members are finalized in nondecreasing depth order,
// so the first derivation of a symbol realizes its minimal height.
// `out` is overwritten; its buffers are reused across calls.
inline void saturate_into(const KnowledgeBase& kb, std::span<const Symbol> premise,
                          SaturateScratch* scratch, Saturation& out) {
  const std::size_t n = static_cast<std::size_t>(kb.n_symbols());
  const auto& rules = kb.rules();

  SaturateScratch local;
  SaturateScratch& ws = scratch ? *scratch : local;
  if (ws.missing.size() != rules.size()) {
    ws.missing.assign(rules.size(), 0);
    ws.stamp.assign(rules.size(), 0);
    ws.epoch = 0;
  }
  if (++ws.epoch == 0) {  // stamp wrap-around: invalidate everything once
    std::fill(ws.stamp.begin(), ws.stamp.end(), 0u);
    ws.epoch = 1;
  }

  out.depth.assign(n, -1);
  out.order.clear();

  for (Symbol s : premise) {
    kb.check_symbol(s);
    if (out.depth[static_cast<std::size_t>(s)] == -1) {
      out.depth[static_cast<std::size_t>(s)] = 0;
      out.order.push_back(s);
    }
  }

  // The queue stays sorted by depth because a symbol derived from depth-k
  // antecedents is appended with depth k+1 while depth-k members are still
  // being popped in order.
  for (std::size_t head = 0; head < out.order.size(); ++head) {
    const Symbol s = out.order[head];
    const int ds = out.depth[static_cast<std::size_t>(s)];
    for (int rid : kb.rules_with_antecedent(s)) {
      const auto r = static_cast<std::size_t>(rid);
      if (ws.stamp[r] != ws.epoch) {
        ws.stamp[r] = ws.epoch;
        ws.missing[r] = static_cast<int>(rules[r].antecedents.size());
      }
      if (--ws.missing[r] == 0) {
        const Symbol c = rules[r].consequent;
        if (out.depth[static_cast<std::size_t>(c)] == -1) {
          out.depth[static_cast<std::size_t>(c)] = ds + 1;
          out.order.push_back(c);
        }
      }
    }
  }

  out.max_depth = out.order.empty()
                      ? 0
                      : out.depth[static_cast<std::size_t>(out.order.back())];
}

inline Saturation saturate(const KnowledgeBase& kb, std::span<const Symbol> premise,
                           SaturateScratch* scratch = nullptr) {
  Saturation out;
  saturate_into(kb, premise, scratch, out);
  return out;
}

inline std::vector<Symbol> forward_closure(const KnowledgeBase& kb,
                                           std::span<const Symbol> premise) {
  Saturation sat = saturate(kb, premise);
  std::vector<Symbol> members = sat.order;
  std::sort(members.begin(), members.end());
  return members;
}

inline bool entails(const KnowledgeBase& kb, std::span<const Symbol> premise, Symbol goal) {
  kb.check_symbol(goal);
  return saturate(kb, premise).contains(goal);
}

inline Saturation depth_map(const KnowledgeBase& kb, std::span<const Symbol> premise) {
  return saturate(kb, premise);
}

// ---------------------------------------------------------------------------
// Proof trees

struct ProofNode {
  Symbol symbol = -1;
  int rule_id = -1;            // -1: leaf (premise member)
  std::vector<int> children;   // node indices, aligned with rule antecedents
};

struct ProofTree {
  Symbol root_symbol = -1;
  int root = -1;
  std::vector<ProofNode> nodes;

  bool contains_symbol(Symbol s) const {
    for (const auto& n : nodes)
      if (n.symbol == s) return true;
    return false;
  }
};

enum class ProofDefect {
  none,
  empty_tree,
  bad_node_index,
  root_symbol_mismatch,
  not_a_tree,             // sharing or cycle among nodes
  rule_out_of_range,
  rule_consequent_mismatch,
  child_count_mismatch,
  child_symbol_mismatch,
  leaf_not_in_premise,
  unreachable_nodes,
};

struct ProofCheck {
  bool ok = false;
  ProofDefect defect = ProofDefect::none;
  int node = -1;  // offending node index where applicable
};

inline const char* proof_defect_name(ProofDefect d) {
  switch (d) {
    case ProofDefect::none: return "none";
    case ProofDefect::empty_tree: return "empty_tree";
    case ProofDefect::bad_node_index: return "bad_node_index";
    case ProofDefect::root_symbol_mismatch: return "root_symbol_mismatch";
    case ProofDefect::not_a_tree: return "not_a_tree";
    case ProofDefect::rule_out_of_range: return "rule_out_of_range";
    case ProofDefect::rule_consequent_mismatch: return "rule_consequent_mismatch";
    case ProofDefect::child_count_mismatch: return "child_count_mismatch";
    case ProofDefect::child_symbol_mismatch: return "child_symbol_mismatch";
    case ProofDefect::leaf_not_in_premise: return "leaf_not_in_premise";
    case ProofDefect::unreachable_nodes: return "unreachable_nodes";
  }
  return "unknown";
}

// Structural check of a derivation: every internal node applies a knowledge
// base rule to children matching its antecedents, every leaf is a premise
// member, and the node graph reachable from the root is a genuine tree.
inline ProofCheck verify_proof_tree(const KnowledgeBase& kb, std::span<const Symbol> premise,
                                    const ProofTree& tree) {
  auto fail = [](ProofDefect d, int node = -1) { return ProofCheck{false, d, node}; };
  const int n_nodes = static_cast<int>(tree.nodes.size());
  if (n_nodes == 0 || tree.root < 0) return fail(ProofDefect::empty_tree);
  if (tree.root >= n_nodes) return fail(ProofDefect::bad_node_index, tree.root);
  if (tree.nodes[static_cast<std::size_t>(tree.root)].symbol != tree.root_symbol)
    return fail(ProofDefect::root_symbol_mismatch, tree.root);

  std::vector<char> in_premise(static_cast<std::size_t>(kb.n_symbols()), 0);
  for (Symbol s : premise) {
    kb.check_symbol(s);
    in_premise[static_cast<std::size_t>(s)] = 1;
  }

  std::vector<char> visited(static_cast<std::size_t>(n_nodes), 0);
  std::vector<int> stack{tree.root};
  int reached = 0;
  while (!stack.empty()) {
    int idx = stack.back();
    stack.pop_back();
    if (idx < 0 || idx >= n_nodes) return fail(ProofDefect::bad_node_index, idx);
    if (visited[static_cast<std::size_t>(idx)])
      return fail(ProofDefect::not_a_tree, idx);  // shared child or cycle
    visited[static_cast<std::size_t>(idx)] = 1;
    ++reached;

    const ProofNode& node = tree.nodes[static_cast<std::size_t>(idx)];
    if (node.symbol < 0 || node.symbol >= kb.n_symbols())
      return fail(ProofDefect::child_symbol_mismatch, idx);
    if (node.rule_id == -1) {
      if (!node.children.empty()) return fail(ProofDefect::child_count_mismatch, idx);
      if (!in_premise[static_cast<std::size_t>(node.symbol)])
        return fail(ProofDefect::leaf_not_in_premise, idx);
      continue;
    }
    if (node.rule_id < 0 || node.rule_id >= static_cast<int>(kb.rules().size()))
      return fail(ProofDefect::rule_out_of_range, idx);
    const HornRule& rule = kb.rule(node.rule_id);
    if (rule.consequent != node.symbol)
      return fail(ProofDefect::rule_consequent_mismatch, idx);
    if (node.children.size() != rule.antecedents.size())
      return fail(ProofDefect::child_count_mismatch, idx);
    for (std::size_t i = 0; i < node.children.size(); ++i) {
      int c = node.children[i];
      if (c < 0 || c >= n_nodes) return fail(ProofDefect::bad_node_index, idx);
      if (tree.nodes[static_cast<std::size_t>(c)].symbol != rule.antecedents[i])
        return fail(ProofDefect::child_symbol_mismatch, idx);
      stack.push_back(c);
    }
  }
  if (reached != n_nodes) return fail(ProofDefect::unreachable_nodes);
  return ProofCheck{true, ProofDefect::none, -1};
}

inline int proof_height(const ProofTree& tree, int node_index = -2) {
  if (node_index == -2) node_index = tree.root;
  if (node_index < 0 || node_index >= static_cast<int>(tree.nodes.size())) return 0;
  const ProofNode& node = tree.nodes[static_cast<std::size_t>(node_index)];
  int h = 0;
  for (int c : node.children) h = std::max(h, 1 + proof_height(tree, c));
  return h;
}

// ---------------------------------------------------------------------------
// Text format: one rule per line, "x57 x56 -> x79"; '#' starts a comment
// line; UTF-8, LF line endings. save_kb records the alphabet size in a
// leading comment so load_kb does not have to infer it.

inline std::string render_rule_line(const HornRule& r) {
  std::string line;
  for (Symbol a : r.antecedents) {
    line += symbol_token(a);
    line += ' ';
  }
  line += "-> ";
  line += symbol_token(r.consequent);
  return line;
}

inline std::string save_kb(const KnowledgeBase& kb) {
  std::string out = "# symbols: " + std::to_string(kb.n_symbols()) + "\n";
  for (const auto& r : kb.rules()) {
    out += render_rule_line(r);
    out += '\n';
  }
  return out;
}

inline void save_kb_file(const KnowledgeBase& kb, const std::filesystem::path& path) {
  write_file(path, save_kb(kb));
}

inline KnowledgeBase load_kb(const std::vector<std::string>& lines,
                             std::optional<int> n_symbols = std::nullopt) {
  std::vector<HornRule> rules;
  std::optional<int> declared;
  Symbol max_symbol = -1;
  int line_no = 0;
  for (const auto& raw : lines) {
    ++line_no;
    std::string_view line = raw;
    if (!line.empty() && line[0] == '#') {
      constexpr std::string_view kHeader = "# symbols:";
      if (line.substr(0, kHeader.size()) == kHeader) {
        int v = 0;
        auto rest = line.substr(kHeader.size());
        while (!rest.empty() && rest.front() == ' ') rest.remove_prefix(1);
        auto [ptr, ec] = std::from_chars(rest.data(), rest.data() + rest.size(), v);
        if (ec == std::errc() && ptr == rest.data() + rest.size() && v > 0) declared = v;
      }
      continue;
    }
    auto tokens = split_tokens(line);
    if (tokens.empty()) continue;
    std::vector<Symbol> antecedents;
    Symbol consequent = -1;
    bool after_arrow = false;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      if (tokens[i] == "->") {
        if (after_arrow) throw FormatError("duplicate '->'", line_no, static_cast<int>(i + 1));
        after_arrow = true;
        continue;
      }
      auto sym = parse_symbol_token(tokens[i]);
      if (!sym) throw FormatError("bad token '" + tokens[i] + "'", line_no, static_cast<int>(i + 1));
      if (after_arrow) {
        if (consequent != -1) throw FormatError("multiple consequents", line_no, static_cast<int>(i + 1));
        consequent = *sym;
      } else {
        antecedents.push_back(*sym);
      }
      max_symbol = std::max(max_symbol, *sym);
    }
    if (!after_arrow) throw FormatError("missing '->'", line_no);
    if (consequent == -1) throw FormatError("missing consequent", line_no);
    if (antecedents.empty()) throw FormatError("missing antecedents", line_no);
    try {
      rules.push_back(make_rule(std::move(antecedents), consequent));
    } catch (const ConfigError& e) {
      throw FormatError(e.what(), line_no);
    }
  }
  int n = n_symbols.value_or(declared.value_or(static_cast<int>(max_symbol) + 1));
  if (n <= max_symbol)
    throw FormatError("symbol " + symbol_token(max_symbol) + " exceeds declared alphabet of " +
                          std::to_string(n),
                      line_no);
  return KnowledgeBase(n, std::move(rules));
}

inline KnowledgeBase load_kb_file(const std::filesystem::path& path,
                                  std::optional<int> n_symbols = std::nullopt) {
  return load_kb(read_lines(path), n_symbols);
}

}  // namespace calcutec
