// Downstream classification tasks: class-pair construction under seen/unseen
// combination control, shaped example sampling with an exactly-one-class
// audit, ICL and chain-of-thought prompt rendering, and JSONL export.
#pragma once

#include <algorithm>
#include <array>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "calcutec/corpus.hpp"
#include "calcutec/io.hpp"
#include "calcutec/logic.hpp"
#include "calcutec/proof.hpp"
#include "calcutec/rng.hpp"

namespace calcutec {

// ---------------------------------------------------------------------------
// Task specifications

enum class VerbalizerChoice { r1r2, r3r4 };

inline std::string verbalizer_choice_name(VerbalizerChoice v) {
  return v == VerbalizerChoice::r1r2 ? "r1r2" : "r3r4";
}

struct TaskSpec {
  std::vector<Symbol> v_plus;   // sorted, positive disjunction
  std::vector<Symbol> v_minus;  // sorted, negative disjunction
  int class_size = 1;
  VerbalizerChoice verbalizers = VerbalizerChoice::r1r2;
  bool seen = true;

  int positive_verbalizer() const { return verbalizers == VerbalizerChoice::r1r2 ? 1 : 3; }
  int negative_verbalizer() const { return verbalizers == VerbalizerChoice::r1r2 ? 2 : 4; }
};

namespace detail {

inline bool pair_in(const std::set<TopicPair>& q, Symbol a, Symbol b) {
  return q.count(make_topic_pair(a, b)) == 1;
}

// All within-class pairs for sizes 2 and 3; a singleton has none.
inline std::vector<TopicPair> internal_pairs(const std::vector<Symbol>& cls) {
  std::vector<TopicPair> out;
  for (std::size_t i = 0; i < cls.size(); ++i)
    for (std::size_t j = i + 1; j < cls.size(); ++j)
      out.push_back(make_topic_pair(cls[i], cls[j]));
  return out;
}

}  // namespace detail

// Builds n_tasks specs with pairwise-disjoint symbol sets. The seen flag is
// interpreted against the training topic-pair set Q:
//   class_size 1: the cross pair {v+, v-} lies in Q (seen) or outside Q.
//   class_size 2 or 3: every within-class pair of both classes lies in Q
//   (seen) or none does (unseen); cross-class pairs are unconstrained.
inline std::vector<TaskSpec> make_tasks(const KnowledgeBase& kb, int class_size,
                                        VerbalizerChoice verbalizers, bool seen, int n_tasks,
                                        const std::vector<TopicPair>& training_pairs, Rng& rng) {
  if (class_size < 1 || class_size > 3)
    throw ConfigError("class_size must be 1, 2, or 3");
  if (n_tasks < 1) throw ConfigError("n_tasks must be positive");
  const int n = kb.n_symbols();
  if (2 * class_size * n_tasks > n)
    throw ConfigError("not enough symbols for " + std::to_string(n_tasks) +
                      " disjoint tasks of class size " + std::to_string(class_size));

  std::set<TopicPair> q(training_pairs.begin(), training_pairs.end());
  for (const auto& p : q) {
    kb.check_symbol(p.a);
    kb.check_symbol(p.b);
  }
  std::vector<char> free_sym(static_cast<std::size_t>(n), 1);
  auto take = [&](const std::vector<Symbol>& syms) {
    for (Symbol s : syms) free_sym[static_cast<std::size_t>(s)] = 0;
  };

  // Q as a shuffled edge list over free symbols, refreshed per search.
  auto shuffled_q = [&]() {
    std::vector<TopicPair> edges;
    for (const auto& p : q)
      if (free_sym[static_cast<std::size_t>(p.a)] && free_sym[static_cast<std::size_t>(p.b)])
        edges.push_back(p);
    rng.shuffle(edges);
    return edges;
  };
  auto random_free = [&](std::vector<Symbol>& out, int k) {
    out.clear();
    std::vector<Symbol> pool;
    for (Symbol s = 0; s < n; ++s)
      if (free_sym[static_cast<std::size_t>(s)]) pool.push_back(s);
    if (static_cast<int>(pool.size()) < k) return false;
    rng.shuffle(pool);
    out.assign(pool.begin(), pool.begin() + k);
    std::sort(out.begin(), out.end());
    return true;
  };

  // One class with the required internal-pair relation to Q.
  auto find_class = [&](bool want_seen) -> std::optional<std::vector<Symbol>> {
    if (class_size == 1) {
      std::vector<Symbol> out;
      if (!random_free(out, 1)) return std::nullopt;
      return out;
    }
    if (want_seen) {
      auto edges = shuffled_q();
      if (class_size == 2) {
        if (edges.empty()) return std::nullopt;
        std::vector<Symbol> out{edges[0].a, edges[0].b};
        std::sort(out.begin(), out.end());
        return out;
      }
      // class_size 3: a triangle in Q over free symbols
      for (const auto& e : edges)
        for (Symbol c = 0; c < n; ++c) {
          if (!free_sym[static_cast<std::size_t>(c)] || c == e.a || c == e.b) continue;
          if (detail::pair_in(q, e.a, c) && detail::pair_in(q, e.b, c)) {
            std::vector<Symbol> out{e.a, e.b, c};
            std::sort(out.begin(), out.end());
            return out;
          }
        }
      return std::nullopt;
    }
    for (int attempt = 0; attempt < 500; ++attempt) {
      std::vector<Symbol> out;
      if (!random_free(out, class_size)) return std::nullopt;
      bool clean = true;
      for (const auto& p : detail::internal_pairs(out))
        if (q.count(p)) {
          clean = false;
          break;
        }
      if (clean) return out;
    }
    return std::nullopt;
  };

  std::vector<TaskSpec> tasks;
  for (int t = 0; t < n_tasks; ++t) {
    TaskSpec spec;
    spec.class_size = class_size;
    spec.verbalizers = verbalizers;
    spec.seen = seen;

    if (class_size == 1) {
      // the seen relation binds the cross pair {v+, v-}
      bool found = false;
      if (seen) {
        auto edges = shuffled_q();
        if (!edges.empty()) {
          spec.v_plus = {edges[0].a};
          spec.v_minus = {edges[0].b};
          if (rng.bernoulli(0.5)) std::swap(spec.v_plus, spec.v_minus);
          found = true;
        }
      } else {
        for (int attempt = 0; attempt < 500 && !found; ++attempt) {
          std::vector<Symbol> pick;
          if (!random_free(pick, 2)) break;
          if (!detail::pair_in(q, pick[0], pick[1])) {
            spec.v_plus = {pick[0]};
            spec.v_minus = {pick[1]};
            if (rng.bernoulli(0.5)) std::swap(spec.v_plus, spec.v_minus);
            found = true;
          }
        }
      }
      if (!found)
        throw ConfigError("task " + std::to_string(t) + ": no " +
                          std::string(seen ? "seen" : "unseen") +
                          " symbol pair available in the topic-pair set");
      take(spec.v_plus);
      take(spec.v_minus);
    } else {
      auto plus = find_class(seen);
      if (plus) take(*plus);
      auto minus = plus ? find_class(seen) : std::nullopt;
      if (!plus || !minus)
        throw ConfigError("task " + std::to_string(t) + ": no " +
                          std::string(seen ? "seen" : "unseen") + " class of size " +
                          std::to_string(class_size) +
                          " available in the topic-pair set");
      take(*minus);
      spec.v_plus = std::move(*plus);
      spec.v_minus = std::move(*minus);
    }
    tasks.push_back(std::move(spec));
  }
  return tasks;
}

// ---------------------------------------------------------------------------
// Example sampling

enum class TreeShape { branching, balanced };

inline std::string tree_shape_name(TreeShape s) {
  return s == TreeShape::branching ? "branching" : "balanced";
}

struct TaskExample {
  std::vector<Symbol> input;  // ordered as rendered
  bool positive = true;
  Symbol class_member = -1;   // the entailed disjunct
  ProofTree proof;            // derivation input -> class_member
  TreeShape shape = TreeShape::branching;
};

struct ExampleConfig {
  bool allow_trivial = false;  // permit class members inside the input
  int max_attempts = 2000;
};

namespace detail {

// Appends a node deriving `m` by a random rule, expanding `levels` further
// chain levels along one random antecedent branch (branching shape) or one
// level along every branch (balanced shape). Returns the node index, or -1
// when a needed rule is missing.
inline int grow_example_tree(const KnowledgeBase& kb, ProofTree& tree, Symbol m, int levels,
                             bool balanced, Rng& rng) {
  if (levels == 0) {
    tree.nodes.push_back(ProofNode{m, -1, {}});
    return static_cast<int>(tree.nodes.size()) - 1;
  }
  const auto& deriving = kb.rules_for_consequent(m);
  if (deriving.empty()) return -1;
  int rid = deriving[rng.next_below(deriving.size())];
  const auto& rule = kb.rule(rid);

  std::size_t expand = rule.antecedents.size();  // balanced: every branch
  if (!balanced) expand = rng.next_below(rule.antecedents.size());

  std::vector<int> children;
  for (std::size_t i = 0; i < rule.antecedents.size(); ++i) {
    int child_levels = balanced ? levels - 1 : (i == expand ? levels - 1 : 0);
    int c = grow_example_tree(kb, tree, rule.antecedents[i], child_levels, balanced, rng);
    if (c < 0) return -1;
    children.push_back(c);
  }
  tree.nodes.push_back(ProofNode{m, rid, std::move(children)});
  return static_cast<int>(tree.nodes.size()) - 1;
}

inline void collect_leaves(const ProofTree& tree, int node, std::vector<Symbol>& out) {
  const auto& n = tree.nodes[static_cast<std::size_t>(node)];
  if (n.rule_id < 0) {
    out.push_back(n.symbol);
    return;
  }
  for (int c : n.children) collect_leaves(tree, c, out);
}

}  // namespace detail

// One classification example: a proof skeleton of the requested shape grown
// backward from a class member, its distinct leaves forming the input, then
// audited so that exactly one class is entailed.
//   branching, length 3: two chained rules (height 2).
//   branching, length 4: three chained rules (height 3).
//   balanced, length 4: one root rule over two expanded branches (height 2).
//   balanced, length 3: coincides with the branching shape.
// `force_label` pins the example's class; otherwise a coin decides.
inline TaskExample sample_example(const KnowledgeBase& kb, const TaskSpec& task, int input_len,
                                  TreeShape shape, Rng& rng,
                                  const ExampleConfig& config = {},
                                  std::optional<bool> force_label = std::nullopt) {
  if (input_len != 3 && input_len != 4)
    throw ConfigError("input length must be 3 or 4");
  const bool balanced4 = shape == TreeShape::balanced && input_len == 4;

  std::set<Symbol> class_members(task.v_plus.begin(), task.v_plus.end());
  class_members.insert(task.v_minus.begin(), task.v_minus.end());

  for (int attempt = 0; attempt < config.max_attempts; ++attempt) {
    bool positive = force_label ? *force_label : rng.bernoulli(0.5);
    const auto& cls = positive ? task.v_plus : task.v_minus;
    const auto& other = positive ? task.v_minus : task.v_plus;
    Symbol m = cls[rng.next_below(cls.size())];

    ProofTree tree;
    tree.root_symbol = m;
    int levels = balanced4 ? 2 : input_len - 1;
    tree.root = detail::grow_example_tree(kb, tree, m, levels, balanced4, rng);
    if (tree.root < 0) continue;

    std::vector<Symbol> leaves;
    detail::collect_leaves(tree, tree.root, leaves);
    if (static_cast<int>(leaves.size()) != input_len) continue;
    std::set<Symbol> leaf_set(leaves.begin(), leaves.end());
    if (static_cast<int>(leaf_set.size()) != input_len) continue;  // repeated leaf

    if (!config.allow_trivial) {
      bool trivial = false;
      for (Symbol s : leaves)
        if (class_members.count(s)) {
          trivial = true;
          break;
        }
      if (trivial) continue;
    }

    auto sat = saturate(kb, leaves);
    bool other_entailed = false;
    for (Symbol o : other)
      if (sat.contains(o)) {
        other_entailed = true;
        break;
      }
    if (other_entailed) continue;

    TaskExample ex;
    ex.input = leaves;
    rng.shuffle(ex.input);
    ex.positive = positive;
    ex.class_member = m;
    ex.proof = std::move(tree);
    ex.shape = shape;
    return ex;
  }
  throw SamplingError("example rejection budget exhausted (class size " +
                      std::to_string(task.class_size) + ", length " +
                      std::to_string(input_len) + ", " + tree_shape_name(shape) + ")");
}

// ---------------------------------------------------------------------------
// Prompt rendering

inline std::string verbalizer_name(int id) { return "r" + std::to_string(id); }

inline std::string render_input(const std::vector<Symbol>& input) {
  std::string out;
  for (std::size_t i = 0; i < input.size(); ++i) {
    if (i > 0) out += ' ';
    out += symbol_token(input[i]);
  }
  return out;
}

inline std::string icl_shot(const TaskExample& ex, const TaskSpec& task) {
  int v = ex.positive ? task.positive_verbalizer() : task.negative_verbalizer();
  return render_input(ex.input) + " -> " + verbalizer_name(v);
}

// A chain-of-thought shot: the example's derivation flattened as in training
// documents, the first step carrying the input in its rendered order and the
// final consequent replaced by the verbalizer.
inline std::string cot_shot(const TaskExample& ex, const TaskSpec& task, Rng& rng) {
  auto steps = flatten(ex.proof, rng);
  if (!steps.empty()) steps.front().antecedents = ex.input;
  int v = ex.positive ? task.positive_verbalizer() : task.negative_verbalizer();

  std::string out;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    if (i > 0) out += " , ";
    for (Symbol a : steps[i].antecedents) {
      out += symbol_token(a);
      out += ' ';
    }
    out += "->";
    out += ' ';
    out += (i + 1 == steps.size()) ? verbalizer_name(v) : symbol_token(steps[i].consequent);
  }
  return out;
}

enum class PromptMode { icl, cot };

inline std::string prompt_mode_name(PromptMode m) { return m == PromptMode::icl ? "icl" : "cot"; }

// Shots joined by " ; ", then the bare test input and a trailing "->".
inline std::string render_prompt(const std::vector<TaskExample>& shots,
                                 const std::vector<Symbol>& test_input, const TaskSpec& task,
                                 PromptMode mode, Rng& rng) {
  std::string out;
  for (const auto& shot : shots) {
    out += mode == PromptMode::icl ? icl_shot(shot, task) : cot_shot(shot, task, rng);
    out += " ; ";
  }
  out += render_input(test_input);
  out += " ->";
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation items

struct EvalItem {
  int task_id = 0;
  int item_id = 0;
  int shots = 0;
  std::string mode;  // "icl" | "cot"
  std::string prompt;
  std::string gold;  // gold verbalizer token, e.g. "r1"
  std::string label;  // "+" | "-"
  std::vector<std::string> input;       // test input tokens
  std::vector<std::string> candidates;  // the task's two verbalizer tokens
};

struct ItemConfig {
  int n_examples = 500;
  std::vector<int> shots_grid{2, 4, 6};
  PromptMode mode = PromptMode::icl;
  int input_len = 4;
  TreeShape shape = TreeShape::balanced;
  std::uint64_t seed = 0;
  ExampleConfig example;
};

// Demonstration sequence of max-length with labels alternating in coin-ordered
// (+,-) pairs, so every even-length prefix is exactly balanced. Demos are
// resampled when their input repeats the test input.
namespace detail {

inline std::vector<TaskExample> sample_demos(const KnowledgeBase& kb, const TaskSpec& task,
                                             const ItemConfig& cfg, int max_shots,
                                             const std::vector<Symbol>& test_input, Rng& rng) {
  std::vector<Symbol> test_sorted = test_input;
  std::sort(test_sorted.begin(), test_sorted.end());
  std::vector<TaskExample> demos;
  while (static_cast<int>(demos.size()) < max_shots) {
    bool first_positive = rng.bernoulli(0.5);
    for (int half = 0; half < 2 && static_cast<int>(demos.size()) < max_shots; ++half) {
      bool label = half == 0 ? first_positive : !first_positive;
      for (int tries = 0;; ++tries) {
        auto ex = sample_example(kb, task, cfg.input_len, cfg.shape, rng, cfg.example, label);
        std::vector<Symbol> sorted = ex.input;
        std::sort(sorted.begin(), sorted.end());
        if (sorted != test_sorted) {
          demos.push_back(std::move(ex));
          break;
        }
        if (tries >= 200)
          throw SamplingError("cannot sample a demonstration distinct from the test input");
      }
    }
  }
  return demos;
}

}  // namespace detail

// All evaluation items for the given tasks: per (task, item) one test example
// with a forced alternating label, one max-length demo sequence, and one
// prompt per requested shot count (k-shot uses the first k demonstrations).
// Example content depends only on (seed, task, item), never on the verbalizer
// choice or the prompt mode.
inline std::vector<EvalItem> make_eval_items(const KnowledgeBase& kb,
                                             const std::vector<TaskSpec>& tasks,
                                             const ItemConfig& cfg) {
  if (cfg.n_examples < 1) throw ConfigError("n_examples must be positive");
  if (cfg.shots_grid.empty()) throw ConfigError("shots grid must be non-empty");
  int max_shots = 0;
  for (int k : cfg.shots_grid) {
    if (k < 0) throw ConfigError("shot counts must be nonnegative");
    max_shots = std::max(max_shots, k);
  }

  std::vector<EvalItem> items;
  items.reserve(tasks.size() * static_cast<std::size_t>(cfg.n_examples) *
                cfg.shots_grid.size());
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    const auto& task = tasks[t];
    for (int i = 0; i < cfg.n_examples; ++i) {
      Rng ex_rng(derive_seed(cfg.seed, {kExampleStream, static_cast<std::uint64_t>(t),
                                        static_cast<std::uint64_t>(i), 0}));
      Rng demo_rng(derive_seed(cfg.seed, {kExampleStream, static_cast<std::uint64_t>(t),
                                          static_cast<std::uint64_t>(i), 1}));
      Rng render_rng(derive_seed(cfg.seed, {kExampleStream, static_cast<std::uint64_t>(t),
                                            static_cast<std::uint64_t>(i), 2}));

      auto test = sample_example(kb, task, cfg.input_len, cfg.shape, ex_rng, cfg.example,
                                 i % 2 == 0);
      auto demos = detail::sample_demos(kb, task, cfg, max_shots, test.input, demo_rng);

      for (int k : cfg.shots_grid) {
        std::vector<TaskExample> shots(demos.begin(), demos.begin() + k);
        EvalItem item;
        item.task_id = static_cast<int>(t);
        item.item_id = i;
        item.shots = k;
        item.mode = prompt_mode_name(cfg.mode);
        item.prompt = render_prompt(shots, test.input, task, cfg.mode, render_rng);
        int gold = test.positive ? task.positive_verbalizer() : task.negative_verbalizer();
        item.gold = verbalizer_name(gold);
        item.label = test.positive ? "+" : "-";
        for (Symbol s : test.input) item.input.push_back(symbol_token(s));
        item.candidates = {verbalizer_name(task.positive_verbalizer()),
                           verbalizer_name(task.negative_verbalizer())};
        items.push_back(std::move(item));
      }
    }
  }
  return items;
}

// ---------------------------------------------------------------------------
// JSON export

inline nlohmann::ordered_json task_to_json(const TaskSpec& task, int task_id) {
  nlohmann::ordered_json j;
  j["task_id"] = task_id;
  j["class_size"] = task.class_size;
  j["verbalizers"] = verbalizer_choice_name(task.verbalizers);
  j["seen"] = task.seen;
  auto tokens = [](const std::vector<Symbol>& v) {
    std::vector<std::string> out;
    for (Symbol s : v) out.push_back(symbol_token(s));
    return out;
  };
  j["v_plus"] = tokens(task.v_plus);
  j["v_minus"] = tokens(task.v_minus);
  return j;
}

inline nlohmann::ordered_json item_to_json(const EvalItem& item) {
  nlohmann::ordered_json j;
  j["task_id"] = item.task_id;
  j["item_id"] = item.item_id;
  j["shots"] = item.shots;
  j["mode"] = item.mode;
  j["prompt"] = item.prompt;
  j["gold_verbalizer"] = item.gold;
  j["label"] = item.label;
  j["input"] = item.input;
  j["candidates"] = item.candidates;
  return j;
}

inline EvalItem item_from_json(const nlohmann::json& j) {
  EvalItem item;
  item.task_id = j.at("task_id").get<int>();
  item.item_id = j.at("item_id").get<int>();
  item.shots = j.at("shots").get<int>();
  item.mode = j.at("mode").get<std::string>();
  item.prompt = j.at("prompt").get<std::string>();
  item.gold = j.at("gold_verbalizer").get<std::string>();
  item.label = j.at("label").get<std::string>();
  item.input = j.at("input").get<std::vector<std::string>>();
  item.candidates = j.at("candidates").get<std::vector<std::string>>();
  return item;
}

// Writes items.jsonl (one record per evaluation item, deterministic order)
// and tasks.json next to it. Returns the number of items written.
inline std::size_t export_tasks(const KnowledgeBase& kb, const std::vector<TaskSpec>& tasks,
                                const ItemConfig& cfg, const std::filesystem::path& out_dir) {
  auto items = make_eval_items(kb, tasks, cfg);

  auto items_out = open_output(out_dir / "items.jsonl");
  for (const auto& item : items) items_out << item_to_json(item).dump() << '\n';
  items_out.close();
  if (!items_out) throw IoError("write failed for " + (out_dir / "items.jsonl").string());

  nlohmann::ordered_json tj = nlohmann::ordered_json::array();
  for (std::size_t t = 0; t < tasks.size(); ++t)
    tj.push_back(task_to_json(tasks[t], static_cast<int>(t)));
  write_file(out_dir / "tasks.json", tj.dump(2) + "\n");
  return items.size();
}

inline TaskSpec task_from_json(const nlohmann::json& j) {
  TaskSpec task;
  task.class_size = j.at("class_size").get<int>();
  const std::string choice = j.at("verbalizers").get<std::string>();
  if (choice == "r1r2")
    task.verbalizers = VerbalizerChoice::r1r2;
  else if (choice == "r3r4")
    task.verbalizers = VerbalizerChoice::r3r4;
  else
    throw ConfigError("unknown verbalizer choice: " + choice);
  task.seen = j.at("seen").get<bool>();
  const auto symbols = [](const nlohmann::json& arr) {
    std::vector<Symbol> out;
    for (const auto& tok : arr) {
      const auto sym = parse_symbol_token(tok.get<std::string>());
      if (!sym) throw ConfigError("bad symbol token in task file");
      out.push_back(*sym);
    }
    return out;
  };
  task.v_plus = symbols(j.at("v_plus"));
  task.v_minus = symbols(j.at("v_minus"));
  return task;
}

// Reads a task file back; tasks are returned in task_id order and ids must
// be exactly 0..n-1.
inline std::vector<TaskSpec> load_tasks(const std::filesystem::path& path) {
  nlohmann::json parsed;
  try {
    parsed = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad task file: ") + e.what(), 1);
  }
  if (!parsed.is_array()) throw FormatError("task file must be a JSON array", 1);
  std::vector<TaskSpec> tasks(parsed.size());
  std::vector<char> filled(parsed.size(), 0);
  try {
    for (const auto& j : parsed) {
      const int id = j.at("task_id").get<int>();
      if (id < 0 || id >= static_cast<int>(tasks.size()) ||
          filled[static_cast<std::size_t>(id)])
        throw ConfigError("task ids must be exactly 0..n-1 without repeats");
      tasks[static_cast<std::size_t>(id)] = task_from_json(j);
      filled[static_cast<std::size_t>(id)] = 1;
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad task record: ") + e.what(), 1);
  }
  return tasks;
}

inline std::vector<EvalItem> load_items(const std::filesystem::path& path) {
  std::vector<EvalItem> items;
  auto lines = read_lines(path);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    try {
      items.push_back(item_from_json(nlohmann::json::parse(lines[i])));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string("bad evaluation item: ") + e.what(),
                        static_cast<int>(i) + 1);
    }
  }
  return items;
}

}  // namespace calcutec
