// Acceptance suite: one PASS/FAIL line per numbered criterion, with the
// tolerances pinned below as constants. Exit code equals the number of
// failed criteria. The determinism criterion shells out to the CLI binary,
// whose path arrives as argv[1].

#include <algorithm>
#include <array>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <sys/wait.h>
#include <unistd.h>

#include <json.hpp>

#include "calcutec/arith.hpp"
#include "calcutec/corpus.hpp"
#include "calcutec/eval.hpp"
#include "calcutec/io.hpp"
#include "calcutec/kb_gen.hpp"
#include "calcutec/logic.hpp"
#include "calcutec/mixture.hpp"
#include "calcutec/proof.hpp"
#include "calcutec/rng.hpp"
#include "calcutec/tasks.hpp"

namespace {

using namespace calcutec;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Pinned tolerances and runtime limits

constexpr double kSlackTol = 1e-9;        // per-sequence / expected bound slack
constexpr double kTightTol = 1e-12;       // single-state tightness
constexpr double kKlMatchTol = 1e-9;      // ratio term vs. explicit KL sum
constexpr double kKlNonnegTol = 1e-12;    // per-step KL nonnegativity
constexpr double kMarginalTolPp = 2.0;    // verbalizer marginals, percentage points
constexpr double kBayesFloorAt8 = 0.95;   // reduced-config accuracy at 8 shots

constexpr double kKbTimeLimit = 1.0;      // seconds
constexpr double kReplayTimeLimit = 120.0;
constexpr double kTaskTimeLimit = 120.0;
constexpr double kArithTimeLimit = 60.0;
constexpr double kSeqBoundTimeLimit = 60.0;
constexpr double kExpBoundTimeLimit = 120.0;

// ---------------------------------------------------------------------------
// Small helpers

struct Outcome {
  bool pass = true;
  std::string detail;  // summary stats when passing, first failure otherwise
};

class Tally {
 public:
  void require(bool ok, const std::string& what) {
    ++checks_;
    if (!ok) {
      ++failures_;
      if (first_.empty()) first_ = what;
    }
  }
  bool good() const { return failures_ == 0; }
  long long checks() const { return checks_; }
  long long failures() const { return failures_; }
  const std::string& first() const { return first_; }

 private:
  long long checks_ = 0;
  long long failures_ = 0;
  std::string first_;
};

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

int pool_width() {
  unsigned n = std::thread::hardware_concurrency();
  if (n == 0) n = 4;
  return static_cast<int>(std::min(n, 8u));
}

std::string fmt_d(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

// Generates `count` documents with the per-document seed stream the corpus
// writer uses; the result is independent of the worker count.
std::vector<Document> gen_documents(const KnowledgeBase& kb, const CorpusConfig& cfg, int count) {
  std::vector<Document> docs(static_cast<std::size_t>(count));
  std::atomic<int> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    try {
      for (;;) {
        int i = next.fetch_add(1);
        if (i >= count) return;
        docs[static_cast<std::size_t>(i)] = generate_document(
            kb, cfg, derive_seed(cfg.seed, {kDocStream, static_cast<std::uint64_t>(i)}));
      }
    } catch (...) {
      std::lock_guard<std::mutex> lock(failure_mutex);
      if (!failure) failure = std::current_exception();
    }
  };
  std::vector<std::thread> pool;
  int workers = std::min(pool_width(), std::max(1, count));
  for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
  return docs;
}

const KnowledgeBase& default_kb() {
  static KnowledgeBase kb = generate_kb(KbGenConfig{});
  return kb;
}

// The 1,000-document clean batch shared by the replay and shape criteria.
const std::vector<Document>& clean_batch() {
  static std::vector<Document> docs = [] {
    CorpusConfig cfg;
    cfg.p_skip = 0.0;
    cfg.seed = 11;
    return gen_documents(default_kb(), cfg, 1000);
  }();
  return docs;
}

// ---------------------------------------------------------------------------
// 1. Rule-set structure

Outcome criterion_kb_structure() {
  auto start = std::chrono::steady_clock::now();
  KnowledgeBase kb = generate_kb(KbGenConfig{});
  double gen_secs = seconds_since(start);

  Tally t;
  const auto& rules = kb.rules();
  t.require(rules.size() == 500, "rule count " + std::to_string(rules.size()) + " != 500");

  std::map<Symbol, int> per_consequent;
  std::set<std::tuple<Symbol, Symbol, Symbol>> shapes;
  for (const auto& r : rules) {
    ++per_consequent[r.consequent];
    t.require(r.antecedents.size() == 2, "rule with " + std::to_string(r.antecedents.size()) + " antecedents");
    if (r.antecedents.size() == 2) {
      Symbol a = std::min(r.antecedents[0], r.antecedents[1]);
      Symbol b = std::max(r.antecedents[0], r.antecedents[1]);
      t.require(a != b, "repeated antecedent in rule for " + symbol_token(r.consequent));
      t.require(a != r.consequent && b != r.consequent,
                "consequent " + symbol_token(r.consequent) + " appears among its antecedents");
      t.require(shapes.insert({a, b, r.consequent}).second,
                "duplicate rule " + symbol_token(a) + " " + symbol_token(b) + " -> " + symbol_token(r.consequent));
    }
  }
  t.require(per_consequent.size() == 100, "consequent coverage " + std::to_string(per_consequent.size()) + " != 100");
  for (const auto& [sym, n] : per_consequent)
    t.require(n == 5, symbol_token(sym) + " has " + std::to_string(n) + " rules, want 5");
  t.require(gen_secs < kKbTimeLimit, "generation took " + fmt_d(gen_secs) + "s, limit " + fmt_d(kKbTimeLimit) + "s");

  if (!t.good()) return {false, t.first()};
  return {true, "500 rules, 5 per consequent, no duplicates, " + fmt_d(gen_secs) + "s"};
}

// ---------------------------------------------------------------------------
// 2. Corpus replay soundness (p_skip = 0)

Outcome criterion_corpus_replay() {
  auto start = std::chrono::steady_clock::now();
  const auto& kb = default_kb();
  const auto& docs = clean_batch();

  Tally t;
  long long steps_total = 0;
  for (std::size_t d = 0; d < docs.size() && t.good(); ++d) {
    for (std::size_t p = 0; p < docs[d].paragraphs.size(); ++p) {
      const Paragraph& para = docs[d].paragraphs[p];
      std::string where = "doc " + std::to_string(d) + " paragraph " + std::to_string(p);
      t.require(!para.steps.empty(), where + ": empty step sequence");
      if (para.steps.empty()) continue;
      ReplayResult rr = replay_steps(kb, para.premise, para.steps, para.goal, true);
      t.require(rr.ok, where + ": replay failed at step " + std::to_string(rr.step) + " (" + rr.why + ")");
      t.require(para.steps.back().consequent == para.goal,
                where + ": final consequent " + symbol_token(para.steps.back().consequent) +
                    " != goal " + symbol_token(para.goal));
      steps_total += static_cast<long long>(para.steps.size());
    }
  }
  double secs = seconds_since(start);
  t.require(secs < kReplayTimeLimit, "took " + fmt_d(secs) + "s, limit " + fmt_d(kReplayTimeLimit) + "s");

  if (!t.good()) return {false, t.first()};
  return {true, std::to_string(steps_total) + " steps replayed across 1000 documents, " + fmt_d(secs) + "s"};
}

// ---------------------------------------------------------------------------
// 3. Corpus shape: paragraph count, goal depth, topic restriction

Outcome criterion_corpus_shape() {
  const auto& kb = default_kb();
  const auto& docs = clean_batch();

  Tally t;
  for (std::size_t d = 0; d < docs.size() && t.good(); ++d) {
    t.require(docs[d].paragraphs.size() == 16,
              "doc " + std::to_string(d) + " has " + std::to_string(docs[d].paragraphs.size()) + " paragraphs");
    for (std::size_t p = 0; p < docs[d].paragraphs.size(); ++p) {
      const Paragraph& para = docs[d].paragraphs[p];
      Saturation sat = depth_map(kb, para.premise);
      int depth = sat.depth[static_cast<std::size_t>(para.goal)];
      t.require(depth > 4, "doc " + std::to_string(d) + " paragraph " + std::to_string(p) +
                               ": goal depth " + std::to_string(depth) + " not > 4");
    }
  }

  // Restricted run: the allowed set Q is taken from topic pairs the open run
  // actually used, so every pair is known to support documents.
  std::vector<TopicPair> q;
  std::set<TopicPair> q_set;
  for (const auto& doc : docs) {
    TopicPair tp = make_topic_pair(doc.topic[0], doc.topic[1]);
    if (q_set.insert(tp).second) q.push_back(tp);
    if (q.size() == 7) break;
  }
  t.require(q.size() == 7, "could not collect 7 distinct topic pairs");

  CorpusConfig restricted;
  restricted.seed = 29;
  restricted.allowed_topic_pairs = q;
  auto q_docs = gen_documents(kb, restricted, 200);
  for (std::size_t d = 0; d < q_docs.size(); ++d) {
    t.require(q_docs[d].paragraphs.size() == 16,
              "restricted doc " + std::to_string(d) + " has " +
                  std::to_string(q_docs[d].paragraphs.size()) + " paragraphs");
    TopicPair tp = make_topic_pair(q_docs[d].topic[0], q_docs[d].topic[1]);
    t.require(q_set.count(tp) > 0, "restricted doc " + std::to_string(d) + " uses topic pair " +
                                       symbol_token(tp.a) + "," + symbol_token(tp.b) + " outside Q");
  }

  if (!t.good()) return {false, t.first()};
  return {true, "16 paragraphs everywhere, goal depths > 4, 200 restricted docs stay inside Q"};
}

// ---------------------------------------------------------------------------
// 4. Verbalizer marginals over 10,000 documents

Outcome criterion_verbalizer_marginals() {
  auto start = std::chrono::steady_clock::now();
  CorpusConfig cfg;  // defaults: p_skip 0.25, all topic pairs
  cfg.seed = 17;
  auto docs = gen_documents(default_kb(), cfg, 10000);
  double secs = seconds_since(start);

  std::array<std::array<long long, 5>, 2> counts{};  // [position][verbalizer id]
  for (const auto& doc : docs) {
    ++counts[0][static_cast<std::size_t>(doc.r_a)];
    ++counts[1][static_cast<std::size_t>(doc.r_b)];
  }

  const std::array<double, 5> target{0.0, 45.0, 45.0, 5.0, 5.0};
  Tally t;
  std::string rates;
  for (int pos = 0; pos < 2; ++pos) {
    for (int r = 1; r <= 4; ++r) {
      double pct = 100.0 * static_cast<double>(counts[pos][static_cast<std::size_t>(r)]) /
                   static_cast<double>(docs.size());
      double err = std::abs(pct - target[static_cast<std::size_t>(r)]);
      t.require(err <= kMarginalTolPp,
                "position " + std::string(pos == 0 ? "a" : "b") + " r" + std::to_string(r) + " rate " +
                    fmt_d(pct) + "% is " + fmt_d(err) + "pp from " + fmt_d(target[static_cast<std::size_t>(r)]) + "%");
      if (pos == 0) rates += (r > 1 ? "/" : "") + fmt_d(pct);
    }
  }

  if (!t.good()) return {false, t.first()};
  return {true, "position-a rates " + rates + " (target 45/45/5/5, +/-2pp both positions), " + fmt_d(secs) + "s"};
}

// ---------------------------------------------------------------------------
// 5. Task export audit: 10,000 examples, closure and balance

Outcome criterion_task_audit() {
  auto start = std::chrono::steady_clock::now();
  const auto& kb = default_kb();

  // Twelve vertex-disjoint training pairs; seen tasks draw from them, unseen
  // tasks must avoid them.
  std::vector<TopicPair> q;
  for (Symbol s = 0; s < 24; s += 2) q.push_back(make_topic_pair(s, s + 1));
  std::set<TopicPair> q_set(q.begin(), q.end());

  struct Config {
    int class_size;
    VerbalizerChoice choice;
    bool seen;
  };
  const std::vector<Config> configs{
      {1, VerbalizerChoice::r1r2, false},
      {2, VerbalizerChoice::r3r4, false},
      {1, VerbalizerChoice::r1r2, true},
      {2, VerbalizerChoice::r1r2, true},
  };

  Tally t;
  long long audited = 0;
  fs::path root = fs::temp_directory_path() / ("calcutec_acceptance_tasks_" + std::to_string(::getpid()));
  fs::create_directories(root);

  for (std::size_t c = 0; c < configs.size() && t.good(); ++c) {
    const Config& cc = configs[c];
    Rng rng(derive_seed(2025, {kTaskStream, static_cast<std::uint64_t>(c)}));
    std::vector<TaskSpec> tasks = make_tasks(kb, cc.class_size, cc.choice, cc.seen, 5, q, rng);

    // Relation of each task's defining pairs to Q, by construction.
    for (std::size_t k = 0; k < tasks.size(); ++k) {
      const TaskSpec& task = tasks[k];
      std::string where = "config " + std::to_string(c) + " task " + std::to_string(k);
      if (cc.class_size == 1) {
        bool in_q = q_set.count(make_topic_pair(task.v_plus[0], task.v_minus[0])) > 0;
        t.require(in_q == cc.seen, where + ": cross pair " + std::string(cc.seen ? "outside" : "inside") + " Q");
      } else {
        for (const auto& cls : {task.v_plus, task.v_minus})
          for (std::size_t i = 0; i < cls.size(); ++i)
            for (std::size_t j = i + 1; j < cls.size(); ++j) {
              bool in_q = q_set.count(make_topic_pair(cls[i], cls[j])) > 0;
              t.require(in_q == cc.seen,
                        where + ": internal pair " + std::string(cc.seen ? "outside" : "inside") + " Q");
            }
      }
    }

    ItemConfig icfg;
    icfg.n_examples = 500;
    icfg.shots_grid = {2};
    icfg.mode = PromptMode::icl;
    icfg.seed = 101 + static_cast<std::uint64_t>(c);
    icfg.example.max_attempts = 20000;
    fs::path dir = root / ("config" + std::to_string(c));
    fs::create_directories(dir);
    export_tasks(kb, tasks, icfg, dir);

    auto loaded_tasks = load_tasks(dir / "tasks.json");
    auto items = load_items(dir / "items.jsonl");
    t.require(items.size() == 2500, "config " + std::to_string(c) + " exported " +
                                        std::to_string(items.size()) + " items, want 2500");

    std::map<int, std::array<int, 2>> balance;
    for (const auto& item : items) {
      std::string where = "config " + std::to_string(c) + " task " + std::to_string(item.task_id) +
                          " item " + std::to_string(item.item_id);
      const TaskSpec& task = loaded_tasks.at(static_cast<std::size_t>(item.task_id));
      bool positive = item.label == "+";
      ++balance[item.task_id][positive ? 0 : 1];

      std::vector<Symbol> input;
      for (const auto& tok : item.input) {
        auto sym = parse_symbol_token(tok);
        t.require(sym.has_value(), where + ": bad input token " + tok);
        if (sym) input.push_back(*sym);
      }
      Saturation sat = saturate(kb, input);
      const auto& labeled = positive ? task.v_plus : task.v_minus;
      const auto& other = positive ? task.v_minus : task.v_plus;
      bool labeled_hit = std::any_of(labeled.begin(), labeled.end(),
                                     [&](Symbol s) { return sat.contains(s); });
      bool other_hit = std::any_of(other.begin(), other.end(),
                                   [&](Symbol s) { return sat.contains(s); });
      t.require(labeled_hit, where + ": labeled class not entailed by the input closure");
      t.require(!other_hit, where + ": other class entailed by the input closure");
      int want_gold = positive ? task.positive_verbalizer() : task.negative_verbalizer();
      t.require(item.gold == "r" + std::to_string(want_gold), where + ": gold " + item.gold + " mismatch");
      ++audited;
      if (!t.good()) break;
    }
    for (const auto& [task_id, counts] : balance)
      t.require(std::abs(counts[0] - counts[1]) <= 1,
                "config " + std::to_string(c) + " task " + std::to_string(task_id) + " balance " +
                    std::to_string(counts[0]) + "+/" + std::to_string(counts[1]) + "-");
  }

  std::error_code ec;
  fs::remove_all(root, ec);

  double secs = seconds_since(start);
  t.require(secs < kTaskTimeLimit, "took " + fmt_d(secs) + "s, limit " + fmt_d(kTaskTimeLimit) + "s");
  t.require(audited == 10000, "audited " + std::to_string(audited) + " examples, want 10000");

  if (!t.good()) return {false, t.first()};
  return {true, "10000 exported examples pass the closure audit, balance +/-1, " + fmt_d(secs) + "s"};
}

// ---------------------------------------------------------------------------
// 6. Arithmetic splits against an independent precedence oracle

// Minimal standalone evaluator: numbers and + / * tokens, * binds first,
// everything mod 16. Returns nullopt on malformed input.
std::optional<int> oracle_eval(const std::string& expr) {
  std::istringstream in(expr);
  std::vector<int> terms;
  std::string tok;
  bool want_number = true;
  char pending = '+';
  while (in >> tok) {
    if (want_number) {
      if (tok.empty() || tok.find_first_not_of("0123456789") != std::string::npos) return std::nullopt;
      int v = std::atoi(tok.c_str());
      if (v < 0 || v > 15) return std::nullopt;
      if (pending == '+') terms.push_back(v);
      else terms.back() = terms.back() * v % 16;
    } else {
      if (tok != "+" && tok != "*") return std::nullopt;
      pending = tok[0];
    }
    want_number = !want_number;
  }
  if (want_number || terms.empty()) return std::nullopt;
  int total = 0;
  for (int v : terms) total = (total + v) % 16;
  return total;
}

// Splits "lhs = rhs" and checks the oracle value of lhs against rhs.
bool oracle_checks_equation(const std::string& equation, int* final_value) {
  auto eq = equation.find(" = ");
  if (eq == std::string::npos) return false;
  std::string rhs = equation.substr(eq + 3);
  if (rhs.empty() || rhs.find_first_not_of("0123456789") != std::string::npos) return false;
  auto value = oracle_eval(equation.substr(0, eq));
  if (!value) return false;
  if (final_value) *final_value = *value;
  return *value == std::atoi(rhs.c_str());
}

// A train/validation line is " . "-joined equations with a trailing " .".
bool oracle_checks_line(const std::string& line, int* final_value) {
  std::string body = line;
  if (body.size() >= 2 && body.compare(body.size() - 2, 2, " .") == 0)
    body.resize(body.size() - 2);
  else
    return false;
  std::size_t pos = 0;
  bool any = false;
  while (pos <= body.size()) {
    std::size_t next = body.find(" . ", pos);
    std::string segment = body.substr(pos, next == std::string::npos ? std::string::npos : next - pos);
    if (!oracle_checks_equation(segment, final_value)) return false;
    any = true;
    if (next == std::string::npos) break;
    pos = next + 3;
  }
  return any;
}

Outcome criterion_arithmetic() {
  auto start = std::chrono::steady_clock::now();
  ArithConfig cfg;  // defaults: multi variant, 80000/10000/10000
  fs::path dir = fs::temp_directory_path() / ("calcutec_acceptance_arith_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  ArithResult result = gen_splits(cfg, dir, pool_width());

  Tally t;
  long long equations = 0;

  auto check_train_like = [&](const fs::path& path, std::uint64_t split, const char* name) {
    auto lines = read_lines(path);
    for (std::size_t i = 0; i < lines.size(); ++i) {
      int final_value = -1;
      t.require(oracle_checks_line(lines[i], &final_value),
                std::string(name) + " line " + std::to_string(i) + " fails the oracle: " + lines[i]);
      ++equations;

      // The tuple is the first draw of the per-index stream; tie the rendered
      // final value back to it and enforce the range rule on its numbers.
      Rng rng(derive_seed(cfg.seed, {kArithStream, split, i}));
      ArithTuple tuple = draw_seen_tuple(rng);
      bool all_low = true, all_high = true;
      for (int n : tuple.numbers) {
        all_low = all_low && n >= 0 && n <= 9;
        all_high = all_high && n >= 6 && n <= 15;
      }
      t.require(all_low || all_high, std::string(name) + " line " + std::to_string(i) +
                                         ": numbers break the all-low/all-high rule");
      auto expect = oracle_eval(render_expression(tuple.numbers, tuple.operators));
      t.require(expect.has_value() && *expect == final_value,
                std::string(name) + " line " + std::to_string(i) + ": final value " +
                    std::to_string(final_value) + " does not match its tuple");
      if (!t.good()) return;
    }
  };
  check_train_like(result.train_path, 0, "train");
  if (t.good()) check_train_like(result.validation_path, 1, "validation");

  auto check_test = [&](const fs::path& path, bool unseen, const char* name) {
    auto lines = read_lines(path);
    if (unseen)
      t.require(lines.size() == 7776, std::string(name) + " has " + std::to_string(lines.size()) +
                                          " rows, want 7776");
    for (std::size_t i = 0; i < lines.size() && t.good(); ++i) {
      std::string where = std::string(name) + " row " + std::to_string(i);
      nlohmann::json row = nlohmann::json::parse(lines[i], nullptr, false);
      t.require(!row.is_discarded() && row.contains("prompt") && row.contains("answer"),
                where + ": malformed row");
      if (!t.good()) return;
      std::string prompt = row["prompt"].get<std::string>();
      t.require(prompt.size() > 2 && prompt.compare(prompt.size() - 2, 2, " =") == 0,
                where + ": prompt does not end with ' ='");
      if (!t.good()) return;
      std::string expr = prompt.substr(0, prompt.size() - 2);
      auto value = oracle_eval(expr);
      t.require(value.has_value() && *value == row["answer"].get<int>(),
                where + ": oracle disagrees with the stored answer");
      ++equations;

      std::vector<int> numbers;
      std::istringstream in(expr);
      std::string tok;
      while (in >> tok)
        if (tok != "+" && tok != "*") numbers.push_back(std::atoi(tok.c_str()));
      t.require(numbers.size() == 5, where + ": expected 5 numbers");
      if (numbers.size() != 5) return;
      if (unseen) {
        for (int pos = 0; pos < 5; ++pos) {
          bool odd_position = pos % 2 == 0;  // 1-based positions 1,3,5
          bool ok = odd_position ? (numbers[static_cast<std::size_t>(pos)] >= 0 &&
                                    numbers[static_cast<std::size_t>(pos)] <= 5)
                                 : (numbers[static_cast<std::size_t>(pos)] >= 10 &&
                                    numbers[static_cast<std::size_t>(pos)] <= 15);
          t.require(ok, where + ": number at position " + std::to_string(pos + 1) + " out of the unseen range");
        }
      } else {
        bool all_low = true, all_high = true;
        for (int n : numbers) {
          all_low = all_low && n >= 0 && n <= 9;
          all_high = all_high && n >= 6 && n <= 15;
        }
        t.require(all_low || all_high, where + ": numbers break the all-low/all-high rule");
      }
    }
  };
  if (t.good()) check_test(result.test_seen_path, false, "test_seen");
  if (t.good()) check_test(result.test_unseen_path, true, "test_unseen");

  // Paired instances: the staged reduction must land on the same value as the
  // whole-expression rendering, both agreeing with the oracle.
  for (int i = 0; i < 1000 && t.good(); ++i) {
    Rng rng(derive_seed(77, {kArithStream, 9, static_cast<std::uint64_t>(i)}));
    ArithTuple tuple = draw_seen_tuple(rng);
    auto steps = gen_multi_step(tuple.numbers, tuple.operators, rng);
    auto merged = merge_steps(steps, rng, 0.5);
    int multi_final = merged.back().result;
    std::string single = gen_single_step(tuple.numbers, tuple.operators);
    int single_final = -1;
    t.require(oracle_checks_line(single, &single_final),
              "paired instance " + std::to_string(i) + ": single-step line fails the oracle");
    t.require(multi_final == single_final, "paired instance " + std::to_string(i) + ": multi final " +
                                               std::to_string(multi_final) + " != single final " +
                                               std::to_string(single_final));
    int multi_rendered = -1;
    t.require(oracle_checks_line(render_multi_line(merged), &multi_rendered) && multi_rendered == multi_final,
              "paired instance " + std::to_string(i) + ": merged rendering fails the oracle");
  }

  std::error_code ec;
  fs::remove_all(dir, ec);

  double secs = seconds_since(start);
  t.require(secs < kArithTimeLimit, "took " + fmt_d(secs) + "s, limit " + fmt_d(kArithTimeLimit) + "s");

  if (!t.good()) return {false, t.first()};
  return {true, std::to_string(equations) + " rows re-evaluated, unseen split 7776 rows, 1000 pairs agree, " +
                    fmt_d(secs) + "s"};
}

// ---------------------------------------------------------------------------
// 7. Per-sequence lower bound on random latent models

latent::EvalSequence sample_sequence(const latent::LatentModel& m, int z_star, int T, Rng& rng) {
  latent::EvalSequence seq;
  for (int i = 0; i < T; ++i) {
    latent::EvalStep step;
    double ux = rng.next_unit(), acc = 0;
    for (int x = 0; x < m.n_inputs(); ++x) {
      acc += static_cast<double>(m.input_prob[static_cast<std::size_t>(z_star)][static_cast<std::size_t>(x)]);
      step.x = x;
      if (ux <= acc) break;
    }
    double ur = rng.next_unit();
    acc = 0;
    for (int r = 0; r < m.n_labels(); ++r) {
      acc += static_cast<double>(m.label_prob[static_cast<std::size_t>(z_star)]
                                             [static_cast<std::size_t>(step.x)][static_cast<std::size_t>(r)]);
      step.r = r;
      if (ur <= acc) break;
    }
    seq.push_back(step);
  }
  return seq;
}

Outcome criterion_sequence_bound() {
  auto start = std::chrono::steady_clock::now();
  Tally t;
  long long checks = 0;
  double worst = 1e300;

  Rng rng(derive_seed(404, {kModelStream, 1}));
  for (int i = 0; i < 100 && t.good(); ++i) {
    int n_states = 2 + i % 3;  // 2..4
    int n_inputs = 2 + i % 3;
    int n_labels = 2 + i % 2;
    auto m = latent::random_model(rng, n_states, n_inputs, n_labels);
    int z_star = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(n_states)));
    for (int T = 1; T <= 8 && t.good(); ++T) {
      for (int s = 0; s < 3; ++s) {
        auto seq = sample_sequence(m, z_star, T, rng);
        auto report = latent::icl_bound_check(m, z_star, seq);
        double slack = static_cast<double>(report.slack);
        worst = std::min(worst, slack);
        t.require(report.holds && slack >= -kSlackTol,
                  "model " + std::to_string(i) + " T " + std::to_string(T) + ": slack " + fmt_d(slack));
        ++checks;
      }
    }
  }

  double worst_tight = 0;
  for (int i = 0; i < 25 && t.good(); ++i) {
    auto m = latent::random_model(rng, 1, 2 + i % 3, 2 + i % 2);
    for (int T = 1; T <= 8 && t.good(); ++T) {
      auto seq = sample_sequence(m, 0, T, rng);
      auto report = latent::icl_bound_check(m, 0, seq);
      double slack = std::abs(static_cast<double>(report.slack));
      worst_tight = std::max(worst_tight, slack);
      t.require(slack <= kTightTol,
                "single-state model " + std::to_string(i) + " T " + std::to_string(T) + ": |slack| " + fmt_d(slack));
      ++checks;
    }
  }

  double secs = seconds_since(start);
  t.require(secs < kSeqBoundTimeLimit, "took " + fmt_d(secs) + "s, limit " + fmt_d(kSeqBoundTimeLimit) + "s");

  if (!t.good()) return {false, t.first()};
  return {true, std::to_string(checks) + " checks, min slack " + fmt_d(worst) + ", tightness within " +
                    fmt_d(worst_tight) + ", " + fmt_d(secs) + "s"};
}

// ---------------------------------------------------------------------------
// 8. Exact expectation of the bound

Outcome criterion_expected_bound() {
  auto start = std::chrono::steady_clock::now();
  Tally t;
  long long checks = 0;
  double worst = 1e300, worst_match = 0;

  Rng rng(derive_seed(404, {kModelStream, 2}));
  for (int i = 0; i < 20 && t.good(); ++i) {
    int n_states = 2 + i % 3;
    int n_inputs = 2 + i % 2;  // |X| in {2, 3}
    int n_labels = 2 + i % 2;
    int z_star = i % n_states;
    auto m = latent::random_model(rng, n_states, n_inputs, n_labels, z_star);
    for (int T = 1; T <= 6 && t.good(); ++T) {
      auto report = latent::expected_icl_bound_check(m, z_star, T);
      std::string where = "model " + std::to_string(i) + " T " + std::to_string(T);
      double slack = static_cast<double>(report.slack);
      double match = std::abs(static_cast<double>(report.input_ratio_term - report.kl_sum));
      worst = std::min(worst, slack);
      worst_match = std::max(worst_match, match);
      t.require(report.holds && slack >= -kSlackTol, where + ": slack " + fmt_d(slack));
      t.require(match <= kKlMatchTol, where + ": ratio term differs from the KL sum by " + fmt_d(match));
      t.require(static_cast<double>(report.min_step_kl) >= -kKlNonnegTol,
                where + ": negative per-step KL " + fmt_d(static_cast<double>(report.min_step_kl)));
      t.require(static_cast<double>(report.kl_sum) >= -kKlNonnegTol,
                where + ": negative KL sum " + fmt_d(static_cast<double>(report.kl_sum)));
      ++checks;
    }
  }

  double secs = seconds_since(start);
  t.require(secs < kExpBoundTimeLimit, "took " + fmt_d(secs) + "s, limit " + fmt_d(kExpBoundTimeLimit) + "s");

  if (!t.good()) return {false, t.first()};
  return {true, std::to_string(checks) + " exact expectations, min slack " + fmt_d(worst) +
                    ", KL match within " + fmt_d(worst_match) + ", " + fmt_d(secs) + "s"};
}

// ---------------------------------------------------------------------------
// 9. Reduced-alphabet Bayes convergence and the perfect reasoner

Outcome criterion_bayes_convergence() {
  auto start = std::chrono::steady_clock::now();
  KbGenConfig kc;
  kc.n_symbols = 8;
  kc.rules_per_symbol = 2;
  kc.seed = 27;
  KnowledgeBase kb = generate_kb(kc);

  // Five distinct single-symbol class pairs. Dense 8-symbol closures mean a
  // random pair often cannot carry examples, so each candidate draw is probed
  // with a tiny item budget and kept only when sampling succeeds.
  std::vector<TaskSpec> tasks;
  std::set<std::pair<Symbol, Symbol>> used;
  for (std::uint64_t s = 1; s <= 300 && tasks.size() < 5; ++s) {
    try {
      Rng rng(derive_seed(kc.seed, {kTaskStream, s}));
      auto drawn = make_tasks(kb, 1, VerbalizerChoice::r1r2, false, 1, {}, rng);
      auto key = std::make_pair(drawn.at(0).v_plus.at(0), drawn.at(0).v_minus.at(0));
      if (used.count(key)) continue;
      ItemConfig probe;
      probe.n_examples = 2;
      probe.shots_grid = {8};
      probe.input_len = 3;
      probe.shape = TreeShape::branching;
      probe.seed = 99;
      probe.example.allow_trivial = true;
      probe.example.max_attempts = 4000;
      make_eval_items(kb, {drawn[0]}, probe);
      used.insert(key);
      tasks.push_back(drawn[0]);
    } catch (const SamplingError&) {
    } catch (const ConfigError&) {
    }
  }

  Tally t;
  t.require(tasks.size() == 5, "found " + std::to_string(tasks.size()) + " usable tasks, want 5");
  if (!t.good()) return {false, t.first()};

  auto build_items = [&](PromptMode mode) {
    ItemConfig cfg;
    cfg.n_examples = 500;
    cfg.shots_grid = {0, 2, 4, 8};
    cfg.mode = mode;
    cfg.input_len = 3;
    cfg.shape = TreeShape::branching;
    cfg.seed = 77;
    cfg.example.allow_trivial = true;
    cfg.example.max_attempts = 4000;
    std::vector<EvalItem> items;
    for (std::size_t k = 0; k < tasks.size(); ++k) {
      auto sub = make_eval_items(kb, {tasks[k]}, cfg);
      for (auto& item : sub) item.task_id = static_cast<int>(k);
      items.insert(items.end(), sub.begin(), sub.end());
    }
    return items;
  };

  EvalOptions opt;
  opt.workers = pool_width();

  auto icl_items = build_items(PromptMode::icl);
  t.require(icl_items.size() == 10000, "built " + std::to_string(icl_items.size()) + " scoring items");

  BayesEndpoint bayes(kb);
  EvalReport bayes_report = run_icl_eval(kb, tasks, icl_items, bayes, opt);
  t.require(bayes_report.complete && bayes_report.n_errors == 0, "Bayes run incomplete or errored");
  auto curve = bayes_report.by_shots();
  std::string curve_text;
  double prev = -1;
  for (int k : {0, 2, 4, 8}) {
    double acc = curve.at(k);
    curve_text += (curve_text.empty() ? "" : " -> ") + fmt_d(acc);
    t.require(acc >= prev - 1e-12, "accuracy drops at " + std::to_string(k) + " shots (" + fmt_d(acc) +
                                       " after " + fmt_d(prev) + ")");
    prev = acc;
  }
  t.require(curve.at(8) >= kBayesFloorAt8,
            "accuracy at 8 shots " + fmt_d(curve.at(8)) + " below " + fmt_d(kBayesFloorAt8));

  ReasonerEndpoint reasoner;
  EvalReport icl_reasoner = run_icl_eval(kb, tasks, icl_items, reasoner, opt);
  t.require(icl_reasoner.complete && icl_reasoner.accuracy() == 1.0,
            "reasoner scoring accuracy " + fmt_d(icl_reasoner.accuracy()) + " != 1");

  auto cot_items = build_items(PromptMode::cot);
  EvalReport cot_reasoner = run_cot_eval(kb, tasks, cot_items, reasoner, opt);
  t.require(cot_reasoner.complete && cot_reasoner.accuracy() == 1.0,
            "reasoner continuation accuracy " + fmt_d(cot_reasoner.accuracy()) + " != 1");
  t.require(cot_reasoner.n_parse_failures == 0, "reasoner continuations failed to parse");

  double secs = seconds_since(start);
  if (!t.good()) return {false, t.first()};
  return {true, "Bayes " + curve_text + " over shots 0/2/4/8, reasoner 1 on both datasets, " + fmt_d(secs) + "s"};
}

// ---------------------------------------------------------------------------
// 10. Determinism of every generator through the CLI

struct CliRunner {
  std::string binary;
  fs::path root;

  // Runs one CLI invocation silently; returns the exit status.
  int run(const std::string& args, int workers = 1) const {
    std::string cmd = "CALCUTEC_WORKERS=" + std::to_string(workers) + " \"" + binary + "\" " + args +
                      " > /dev/null 2>&1";
    int rc = std::system(cmd.c_str());
    if (rc == -1) return -1;
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
  }
};

bool same_bytes(const fs::path& a, const fs::path& b, std::string* why) {
  std::string ca, cb;
  try {
    ca = read_file(a);
    cb = read_file(b);
  } catch (const std::exception& e) {
    *why = e.what();
    return false;
  }
  if (ca != cb) {
    *why = a.filename().string() + " differs between " + a.parent_path().filename().string() + " and " +
           b.parent_path().filename().string();
    return false;
  }
  return true;
}

Outcome criterion_determinism(const std::string& binary) {
  auto start = std::chrono::steady_clock::now();
  CliRunner cli{binary, fs::temp_directory_path() / ("calcutec_acceptance_cli_" + std::to_string(::getpid()))};
  fs::create_directories(cli.root);
  auto p = [&](const std::string& name) { return (cli.root / name).string(); };

  Tally t;
  std::string why;
  auto expect_same = [&](const fs::path& a, const fs::path& b) {
    t.require(same_bytes(a, b, &why), why);
  };

  // Rule files: repeat run and manifest replay.
  t.require(cli.run("gen-kb --seed 7 --out " + p("kb_a.txt")) == 0, "gen-kb run 1 failed");
  t.require(cli.run("gen-kb --seed 7 --out " + p("kb_b.txt")) == 0, "gen-kb run 2 failed");
  t.require(cli.run("gen-kb --manifest " + p("kb_a.txt.manifest.json") + " --out " + p("kb_c.txt")) == 0,
            "gen-kb manifest replay failed");
  if (t.good()) {
    expect_same(p("kb_a.txt"), p("kb_b.txt"));
    expect_same(p("kb_a.txt"), p("kb_c.txt"));
  }

  // Corpus: worker counts 1 and 4, then a manifest replay.
  std::string corpus_args = "gen-corpus --kb " + p("kb_a.txt") + " --n-docs 48 --validation-docs 8 --seed 3";
  t.require(cli.run(corpus_args + " --out-dir " + p("corpus1"), 1) == 0, "gen-corpus workers=1 failed");
  t.require(cli.run(corpus_args + " --out-dir " + p("corpus4"), 4) == 0, "gen-corpus workers=4 failed");
  t.require(cli.run("gen-corpus --manifest " + p("corpus1") + "/manifest.json --out-dir " + p("corpus_r"), 2) == 0,
            "gen-corpus manifest replay failed");
  if (t.good())
    for (const char* f : {"train.txt", "validation.txt"}) {
      expect_same(cli.root / "corpus1" / f, cli.root / "corpus4" / f);
      expect_same(cli.root / "corpus1" / f, cli.root / "corpus_r" / f);
    }

  // Tasks: repeat run and manifest replay.
  std::string task_args = "gen-tasks --kb " + p("kb_a.txt") + " --unseen --n-tasks 2 --n-examples 20 --seed 11";
  t.require(cli.run(task_args + " --out " + p("tasks1")) == 0, "gen-tasks run 1 failed");
  t.require(cli.run(task_args + " --out " + p("tasks2")) == 0, "gen-tasks run 2 failed");
  t.require(cli.run("gen-tasks --manifest " + p("tasks1") + "/manifest.json --out " + p("tasks_r")) == 0,
            "gen-tasks manifest replay failed");
  if (t.good())
    for (const char* f : {"items.jsonl", "tasks.json"}) {
      expect_same(cli.root / "tasks1" / f, cli.root / "tasks2" / f);
      expect_same(cli.root / "tasks1" / f, cli.root / "tasks_r" / f);
    }

  // Arithmetic: worker counts 1 and 3, then a manifest replay.
  std::string arith_args = "gen-arith --train 400 --validation 60 --test-seen 60 --seed 9";
  t.require(cli.run(arith_args + " --out-dir " + p("arith1"), 1) == 0, "gen-arith workers=1 failed");
  t.require(cli.run(arith_args + " --out-dir " + p("arith3"), 3) == 0, "gen-arith workers=3 failed");
  t.require(cli.run("gen-arith --manifest " + p("arith1") + "/manifest.json --out-dir " + p("arith_r"), 2) == 0,
            "gen-arith manifest replay failed");
  if (t.good())
    for (const char* f : {"train.txt", "validation.txt", "test_seen.jsonl", "test_unseen.jsonl"}) {
      expect_same(cli.root / "arith1" / f, cli.root / "arith3" / f);
      expect_same(cli.root / "arith1" / f, cli.root / "arith_r" / f);
    }

  // End-to-end smoke: the built-in reasoner scores the generated items
  // perfectly through the CLI surface.
  t.require(cli.run("eval-icl --items " + p("tasks1") + "/items.jsonl --kb " + p("kb_a.txt") + " --tasks " +
                    p("tasks1") + "/tasks.json --model builtin-reasoner --report " + p("report.json"), 2) == 0,
            "eval-icl reasoner run failed");
  if (t.good()) {
    try {
      nlohmann::json report = nlohmann::json::parse(read_file(cli.root / "report.json"));
      t.require(report.at("accuracy").get<double>() == 1.0,
                "pipeline reasoner accuracy " + report.at("accuracy").dump() + " != 1");
      t.require(report.at("complete").get<bool>(), "pipeline report incomplete");
    } catch (const std::exception& e) {
      t.require(false, std::string("report parse: ") + e.what());
    }
  }

  std::error_code ec;
  fs::remove_all(cli.root, ec);

  double secs = seconds_since(start);
  if (!t.good()) return {false, t.first()};
  return {true, "repeat runs, worker counts, and manifest replays all byte-identical, " + fmt_d(secs) + "s"};
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::fprintf(stderr, "usage: acceptance <path-to-cli-binary>\n");
    return 64;
  }
  const std::string binary = argv[1];

  struct Criterion {
    int id;
    const char* name;
    Outcome (*run)();
  };

  int failures = 0;
  auto report = [&](int id, const char* name, const Outcome& outcome, double secs) {
    std::printf("%s  %2d  %-22s %7.1fs  %s\n", outcome.pass ? "PASS" : "FAIL", id, name, secs,
                outcome.detail.c_str());
    std::fflush(stdout);
    if (!outcome.pass) ++failures;
  };

  const std::vector<Criterion> criteria{
      {1, "kb-structure", criterion_kb_structure},
      {2, "corpus-replay", criterion_corpus_replay},
      {3, "corpus-shape", criterion_corpus_shape},
      {4, "verbalizer-marginals", criterion_verbalizer_marginals},
      {5, "task-audit", criterion_task_audit},
      {6, "arithmetic-oracle", criterion_arithmetic},
      {7, "sequence-bound", criterion_sequence_bound},
      {8, "expected-bound", criterion_expected_bound},
      {9, "bayes-convergence", criterion_bayes_convergence},
  };

  for (const auto& c : criteria) {
    auto start = std::chrono::steady_clock::now();
    Outcome outcome;
    try {
      outcome = c.run();
    } catch (const std::exception& e) {
      outcome = {false, std::string("exception: ") + e.what()};
    }
    report(c.id, c.name, outcome, seconds_since(start));
  }

  {
    auto start = std::chrono::steady_clock::now();
    Outcome outcome;
    try {
      outcome = criterion_determinism(binary);
    } catch (const std::exception& e) {
      outcome = {false, std::string("exception: ") + e.what()};
    }
    report(10, "determinism", outcome, seconds_since(start));
  }

  std::printf("acceptance: %d/10 criteria passed\n", 10 - failures);
  return failures;
}
