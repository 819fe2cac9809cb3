#pragma once

// Scores next-verbalizer models on the classification prompts: constrained
// (or free) candidate scoring for plain in-context prompts, generated
// reasoning continuations for chain-of-thought prompts. Ships two built-in
// baselines — the exact Bayesian learner over enumerable label hypotheses
// and a perfect symbolic reasoner — plus a file-based request/response
// protocol for external models. Reports carry per-task, per-shot accuracy
// cells and per-shot means across tasks.

#include <algorithm>
#include <array>
#include <atomic>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "calcutec/io.hpp"
#include "calcutec/logic.hpp"
#include "calcutec/mixture.hpp"
#include "calcutec/tasks.hpp"

namespace calcutec {

inline std::optional<int> parse_verbalizer_token(const std::string& tok) {
  if (tok.size() != 2 || tok[0] != 'r' || tok[1] < '1' || tok[1] > '4')
    return std::nullopt;
  return tok[1] - '0';
}

// ---------------------------------------------------------------------------
// Endpoint interface
// ---------------------------------------------------------------------------

struct EvalContext {
  std::string id;      // stable item id, also used by the external protocol
  std::string prompt;  // full prompt text, ending with "... ->"
  std::string mode;    // "icl" | "cot"
  std::vector<std::string> candidates;  // verbalizer tokens to rank
  std::vector<std::string> input;       // test input tokens
  const TaskSpec* task = nullptr;
  const KnowledgeBase* kb = nullptr;
};

class ModelEndpoint {
 public:
  virtual ~ModelEndpoint() = default;
  virtual const char* name() const = 0;
  // May endpoints be called from several worker threads at once?
  virtual bool thread_safe() const { return true; }
  // Scores aligned with context.candidates; higher is better.
  virtual std::vector<double> score(const EvalContext& context) = 0;
  // Token continuation for a reasoning prompt; must end at a verbalizer.
  virtual std::string generate(const EvalContext& context) = 0;
};

// Constrained argmax with deterministic tie-breaking toward the lowest
// verbalizer id.
inline std::string pick_candidate(const std::vector<std::string>& candidates,
                                  const std::vector<double>& scores) {
  if (candidates.empty() || scores.size() != candidates.size())
    throw ConfigError("scoring returned the wrong number of candidates");
  std::size_t best = 0;
  for (std::size_t i = 1; i < candidates.size(); ++i) {
    if (scores[i] > scores[best]) {
      best = i;
    } else if (scores[i] == scores[best]) {
      const auto a = parse_verbalizer_token(candidates[i]);
      const auto b = parse_verbalizer_token(candidates[best]);
      if (a && b && *a < *b) best = i;
    }
  }
  return candidates[best];
}

// ---------------------------------------------------------------------------
// Chain-of-thought continuation parsing and validation
// ---------------------------------------------------------------------------

// Grammar: fragments split on " , "; the first fragment may be a bare
// consequent (continuing the prompt's "input ->"), later fragments read
// "a1 a2 -> b"; the final fragment's last token must be a verbalizer.
struct CotParse {
  bool ok = false;
  std::string error;
  int verbalizer = 0;  // 1..4 when ok
  struct Fragment {
    std::vector<Symbol> antecedents;  // empty when bare
    Symbol consequent = -1;
    bool bare = false;
  };
  std::vector<Fragment> fragments;        // all but the final fragment
  std::vector<Symbol> final_antecedents;  // empty when the final one is bare
};

inline CotParse parse_cot_continuation(const std::string& text) {
  CotParse parse;
  const auto fail = [&parse](std::string why) {
    parse.ok = false;
    parse.error = std::move(why);
    return parse;
  };

  std::vector<std::string> fragments;
  std::size_t start = 0;
  for (;;) {
    const std::size_t pos = text.find(" , ", start);
    if (pos == std::string::npos) {
      fragments.push_back(text.substr(start));
      break;
    }
    fragments.push_back(text.substr(start, pos - start));
    start = pos + 3;
  }

  for (std::size_t i = 0; i < fragments.size(); ++i) {
    const bool is_final = i + 1 == fragments.size();
    const auto tokens = split_tokens(fragments[i]);
    if (tokens.empty()) return fail("empty reasoning fragment");

    std::vector<Symbol> ants;
    std::string head;
    bool bare = false;
    if (tokens.size() == 1) {
      if (i != 0 && !is_final)
        return fail("bare token outside the first or final fragment");
      bare = true;
      head = tokens[0];
    } else {
      if (tokens.size() < 3 || tokens[tokens.size() - 2] != "->")
        return fail("fragment is not of the form 'a1 a2 -> b'");
      for (std::size_t j = 0; j + 2 < tokens.size(); ++j) {
        const auto sym = parse_symbol_token(tokens[j]);
        if (!sym) return fail("antecedent is not a symbol: " + tokens[j]);
        ants.push_back(*sym);
      }
      head = tokens.back();
    }

    if (is_final) {
      const auto verb = parse_verbalizer_token(head);
      if (!verb) return fail("final token is not a verbalizer: " + head);
      parse.verbalizer = *verb;
      parse.final_antecedents = std::move(ants);
      parse.ok = true;
      return parse;
    }
    const auto sym = parse_symbol_token(head);
    if (!sym) return fail("consequent is not a symbol: " + head);
    parse.fragments.push_back({std::move(ants), *sym, bare});
  }
  return fail("empty continuation");
}

struct CotValidation {
  int valid_steps = 0;
  int total_steps = 0;
  bool all_valid = true;
};

// Strict replay of a parsed continuation against the rule set. A fragment is
// valid when its antecedents are already available (test input or earlier
// consequents) and an exact rule matches: the written antecedent set for
// full fragments, or any rule firing from the available set for bare ones.
// The final fragment, when it lists antecedents, just needs them available.
inline CotValidation validate_cot(const KnowledgeBase& kb,
                                  const std::vector<Symbol>& input,
                                  const CotParse& parse) {
  CotValidation v;
  if (!parse.ok) {
    v.all_valid = false;
    return v;
  }
  std::set<Symbol> available(input.begin(), input.end());
  for (const auto& frag : parse.fragments) {
    ++v.total_steps;
    bool ok = false;
    if (frag.bare) {
      // one rule concluding this symbol from the currently available set
      for (const auto& rule : kb.rules()) {
        if (rule.consequent != frag.consequent) continue;
        bool covered = true;
        for (Symbol a : rule.antecedents)
          if (available.count(a) == 0) covered = false;
        if (covered) {
          ok = true;
          break;
        }
      }
    } else {
      bool have_all = true;
      for (Symbol a : frag.antecedents)
        if (available.count(a) == 0) have_all = false;
      ok = have_all && kb.find_rule(frag.antecedents, frag.consequent).has_value();
    }
    if (ok)
      ++v.valid_steps;
    else
      v.all_valid = false;
    available.insert(frag.consequent);
  }
  if (!parse.final_antecedents.empty()) {
    ++v.total_steps;
    bool ok = true;
    for (Symbol a : parse.final_antecedents)
      if (available.count(a) == 0) ok = false;
    if (ok)
      ++v.valid_steps;
    else
      v.all_valid = false;
  }
  return v;
}

// ---------------------------------------------------------------------------
// Built-in endpoints
// ---------------------------------------------------------------------------

// Exact Bayesian learner over enumerated label hypotheses; ranks the task's
// two verbalizers by posterior-weighted likelihood. Other candidates score 0.
class BayesEndpoint : public ModelEndpoint {
 public:
  explicit BayesEndpoint(const KnowledgeBase& kb) : kb_(kb) {}

  const char* name() const override { return "builtin-bayes"; }
  bool thread_safe() const override { return true; }

  std::vector<double> score(const EvalContext& context) override {
    if (!context.task) throw ConfigError("bayes endpoint needs a task");
    const BayesPrediction pred = predict(context);
    const std::string pos = verbalizer_name(context.task->positive_verbalizer());
    const std::string neg = verbalizer_name(context.task->negative_verbalizer());
    std::vector<double> scores;
    for (const auto& cand : context.candidates) {
      if (cand == pos)
        scores.push_back(static_cast<double>(pred.score_first));
      else if (cand == neg)
        scores.push_back(static_cast<double>(pred.score_second));
      else
        scores.push_back(0.0);
    }
    return scores;
  }

  std::string generate(const EvalContext& context) override {
    if (!context.task) throw ConfigError("bayes endpoint needs a task");
    const BayesPrediction pred = predict(context);
    return verbalizer_name(pred.verbalizer);
  }

 private:
  BayesPrediction predict(const EvalContext& context) {
    const IclPromptObs obs = parse_icl_prompt(context.prompt);
    const std::array<int, 2> pair{context.task->positive_verbalizer(),
                                  context.task->negative_verbalizer()};
    return learner_for(context.task->class_size).predict(obs, pair);
  }

  const BayesIclLearner& learner_for(int class_size) {
    std::lock_guard<std::mutex> lock(mutex_);
    auto it = learners_.find(class_size);
    if (it == learners_.end()) {
      it = learners_
               .emplace(class_size,
                        std::make_unique<BayesIclLearner>(
                            kb_, BayesIclLearner::enumerate_hypotheses(
                                     kb_, class_size)))
               .first;
    }
    return *it->second;
  }

  const KnowledgeBase& kb_;
  std::mutex mutex_;
  std::map<int, std::unique_ptr<BayesIclLearner>> learners_;
};

// Perfect symbolic baseline: saturates the test input under the rule set,
// reads off which class is entailed, and (for reasoning prompts) emits a
// minimal-height derivation of the entailed class member.
class ReasonerEndpoint : public ModelEndpoint {
 public:
  const char* name() const override { return "builtin-reasoner"; }
  bool thread_safe() const override { return true; }

  std::vector<double> score(const EvalContext& context) override {
    const auto implied = implied_verbalizer(context);
    std::vector<double> scores;
    for (const auto& cand : context.candidates) {
      if (!implied)
        scores.push_back(0.5);
      else
        scores.push_back(cand == *implied ? 1.0 : 0.0);
    }
    return scores;
  }

  std::string generate(const EvalContext& context) override {
    if (!context.task || !context.kb)
      throw ConfigError("reasoner endpoint needs a task and rule set");
    const KnowledgeBase& kb = *context.kb;
    const std::vector<Symbol> input = input_symbols(context);
    const Saturation sat = depth_map(kb, input);

    const auto pick_member = [&sat](const std::vector<Symbol>& members) {
      Symbol best = -1;
      for (Symbol m : members)
        if (sat.contains(m) &&
            (best < 0 || sat.depth[static_cast<std::size_t>(m)] <
                             sat.depth[static_cast<std::size_t>(best)]))
          best = m;
      return best;
    };
    const Symbol pos = pick_member(context.task->v_plus);
    const Symbol neg = pick_member(context.task->v_minus);
    Symbol target = -1;
    int verbalizer = 0;
    if (pos >= 0 && neg < 0) {
      target = pos;
      verbalizer = context.task->positive_verbalizer();
    } else if (neg >= 0 && pos < 0) {
      target = neg;
      verbalizer = context.task->negative_verbalizer();
    } else {
      // no class (or both) entailed: no derivation to emit
      return verbalizer_name(
          std::min(context.task->positive_verbalizer(),
                   context.task->negative_verbalizer()));
    }
    if (sat.depth[static_cast<std::size_t>(target)] == 0)
      return verbalizer_name(verbalizer);

    // post-order minimal-height derivation: children first, rule last;
    // each intermediate symbol is derived once even if used twice
    std::vector<Step> steps;
    std::set<Symbol> derived;
    const std::function<void(Symbol)> emit = [&](Symbol s) {
      if (!derived.insert(s).second) return;
      const HornRule* best = nullptr;
      int best_height = -1;
      for (const auto& rule : kb.rules()) {
        if (rule.consequent != s) continue;
        int height = 0;
        bool usable = true;
        for (Symbol a : rule.antecedents) {
          const int d = sat.depth[static_cast<std::size_t>(a)];
          if (d < 0 || d >= sat.depth[static_cast<std::size_t>(s)]) {
            usable = false;
            break;
          }
          height = std::max(height, d);
        }
        if (usable && (!best || height < best_height)) {
          best = &rule;
          best_height = height;
        }
      }
      if (!best)
        throw SamplingError("reasoner: no rule derives an entailed symbol");
      for (Symbol a : best->antecedents)
        if (sat.depth[static_cast<std::size_t>(a)] > 0) emit(a);
      steps.push_back({best->antecedents, s});
    };
    emit(target);

    std::string out;
    for (std::size_t i = 0; i < steps.size(); ++i) {
      const bool final_step = i + 1 == steps.size();
      const std::string head =
          final_step ? verbalizer_name(verbalizer)
                     : symbol_token(steps[i].consequent);
      if (i == 0) {
        out += head;  // the prompt already carries this step's antecedents
        continue;
      }
      out += " , ";
      for (Symbol a : steps[i].antecedents) out += symbol_token(a) + " ";
      out += "-> " + head;
    }
    return out;
  }

 private:
  static std::vector<Symbol> input_symbols(const EvalContext& context) {
    std::vector<Symbol> symbols;
    for (const auto& tok : context.input) {
      const auto sym = parse_symbol_token(tok);
      if (!sym)
        throw ConfigError("reasoner: test input token is not a symbol: " + tok);
      symbols.push_back(*sym);
    }
    return symbols;
  }

  std::optional<std::string> implied_verbalizer(const EvalContext& context) {
    if (!context.task || !context.kb)
      throw ConfigError("reasoner endpoint needs a task and rule set");
    const Saturation sat = depth_map(*context.kb, input_symbols(context));
    const auto hits = [&sat](const std::vector<Symbol>& members) {
      for (Symbol m : members)
        if (sat.contains(m)) return true;
      return false;
    };
    const bool pos = hits(context.task->v_plus);
    const bool neg = hits(context.task->v_minus);
    if (pos == neg) return std::nullopt;
    return verbalizer_name(pos ? context.task->positive_verbalizer()
                               : context.task->negative_verbalizer());
  }
};

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

struct EvalCell {
  int task_id = 0;
  int shots = 0;
  int n = 0;
  int correct = 0;
  int errors = 0;
  int parse_failures = 0;
  int valid_steps = 0;
  int total_steps = 0;

  double accuracy() const { return n == 0 ? 0.0 : double(correct) / n; }
};

struct EvalReport {
  std::string mode;  // "icl" | "cot"
  std::string endpoint;
  bool constrained = true;
  int n_items = 0;
  int n_correct = 0;
  int n_errors = 0;
  int n_parse_failures = 0;
  int valid_steps = 0;
  int total_steps = 0;
  bool complete = true;  // no endpoint failures
  std::vector<EvalCell> cells;  // sorted by (task_id, shots)

  double accuracy() const {
    return n_items == 0 ? 0.0 : double(n_correct) / n_items;
  }
  double step_validity() const {
    return total_steps == 0 ? 0.0 : double(valid_steps) / total_steps;
  }
  // mean over tasks of the per-task accuracy at a shot count
  std::map<int, double> by_shots() const {
    std::map<int, std::pair<double, int>> agg;
    for (const auto& cell : cells) {
      if (cell.n == 0) continue;
      auto& [sum, count] = agg[cell.shots];
      sum += cell.accuracy();
      count += 1;
    }
    std::map<int, double> out;
    for (const auto& [shots, sc] : agg) out[shots] = sc.first / sc.second;
    return out;
  }
};

// ---------------------------------------------------------------------------
// Evaluation runs
// ---------------------------------------------------------------------------

struct EvalOptions {
  int workers = env_worker_count();
  bool constrained = true;  // rank only the task pair; free mode ranks all 4
  std::vector<int> shots_filter;  // empty = every shot count in the dataset
};

inline std::string item_request_id(const EvalItem& item) {
  return "t" + std::to_string(item.task_id) + "_i" +
         std::to_string(item.item_id) + "_k" + std::to_string(item.shots);
}

inline EvalContext make_context(const KnowledgeBase& kb,
                                const std::vector<TaskSpec>& tasks,
                                const EvalItem& item, bool constrained) {
  if (item.task_id < 0 || item.task_id >= static_cast<int>(tasks.size()))
    throw ConfigError("item references unknown task " +
                      std::to_string(item.task_id));
  EvalContext context;
  context.id = item_request_id(item);
  context.prompt = item.prompt;
  context.mode = item.mode;
  context.candidates =
      constrained ? item.candidates
                  : std::vector<std::string>{"r1", "r2", "r3", "r4"};
  context.input = item.input;
  context.task = &tasks[static_cast<std::size_t>(item.task_id)];
  context.kb = &kb;
  return context;
}

namespace detail {

struct ItemOutcome {
  bool evaluated = false;
  bool correct = false;
  bool errored = false;
  bool parse_failed = false;
  int valid_steps = 0;
  int total_steps = 0;
};

template <typename Fn>
std::vector<ItemOutcome> run_items(const std::vector<EvalItem>& items,
                                   const std::vector<char>& selected,
                                   bool parallel, int workers, Fn&& fn) {
  std::vector<ItemOutcome> outcomes(items.size());
  const int count = static_cast<int>(items.size());
  if (!parallel || workers <= 1 || count < 2) {
    for (int i = 0; i < count; ++i)
      if (selected[static_cast<std::size_t>(i)])
        outcomes[static_cast<std::size_t>(i)] = fn(i);
    return outcomes;
  }
  std::atomic<int> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    try {
      for (;;) {
        const int i = next.fetch_add(1);
        if (i >= count) return;
        if (selected[static_cast<std::size_t>(i)])
          outcomes[static_cast<std::size_t>(i)] = fn(i);
      }
    } catch (...) {
      std::lock_guard<std::mutex> lock(failure_mutex);
      if (!failure) failure = std::current_exception();
    }
  };
  std::vector<std::thread> pool;
  const int n = std::min(workers, count);
  pool.reserve(static_cast<std::size_t>(n));
  for (int w = 0; w < n; ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
  return outcomes;
}

inline EvalReport assemble_report(const std::string& mode,
                                  const std::string& endpoint, bool constrained,
                                  const std::vector<EvalItem>& items,
                                  const std::vector<ItemOutcome>& outcomes) {
  EvalReport report;
  report.mode = mode;
  report.endpoint = endpoint;
  report.constrained = constrained;
  std::map<std::pair<int, int>, EvalCell> cells;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const ItemOutcome& out = outcomes[i];
    if (!out.evaluated) continue;
    EvalCell& cell = cells[{items[i].task_id, items[i].shots}];
    cell.task_id = items[i].task_id;
    cell.shots = items[i].shots;
    cell.n += 1;
    report.n_items += 1;
    if (out.correct) {
      cell.correct += 1;
      report.n_correct += 1;
    }
    if (out.errored) {
      cell.errors += 1;
      report.n_errors += 1;
      report.complete = false;
    }
    if (out.parse_failed) {
      cell.parse_failures += 1;
      report.n_parse_failures += 1;
    }
    cell.valid_steps += out.valid_steps;
    cell.total_steps += out.total_steps;
    report.valid_steps += out.valid_steps;
    report.total_steps += out.total_steps;
  }
  for (auto& [key, cell] : cells) report.cells.push_back(cell);
  return report;
}

inline std::vector<char> select_items(const std::vector<EvalItem>& items,
                                      const std::string& mode,
                                      const std::vector<int>& shots_filter) {
  std::vector<char> selected(items.size(), 0);
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (items[i].mode != mode) continue;
    if (!shots_filter.empty() &&
        std::find(shots_filter.begin(), shots_filter.end(), items[i].shots) ==
            shots_filter.end())
      continue;
    selected[i] = 1;
  }
  return selected;
}

}  // namespace detail

// Constrained-scoring evaluation of plain in-context prompts.
inline EvalReport run_icl_eval(const KnowledgeBase& kb,
                               const std::vector<TaskSpec>& tasks,
                               const std::vector<EvalItem>& items,
                               ModelEndpoint& endpoint,
                               const EvalOptions& options = {}) {
  const auto selected = detail::select_items(items, "icl", options.shots_filter);
  const auto outcomes = detail::run_items(
      items, selected, endpoint.thread_safe(), options.workers, [&](int i) {
        const EvalItem& item = items[static_cast<std::size_t>(i)];
        detail::ItemOutcome out;
        out.evaluated = true;
        try {
          const EvalContext context =
              make_context(kb, tasks, item, options.constrained);
          const auto scores = endpoint.score(context);
          out.correct =
              pick_candidate(context.candidates, scores) == item.gold;
        } catch (const std::exception&) {
          out.errored = true;
        }
        return out;
      });
  return detail::assemble_report("icl", endpoint.name(), options.constrained,
                                 items, outcomes);
}

// Generation evaluation of reasoning prompts: the continuation is parsed,
// its final verbalizer is the prediction, and every step is replayed
// against the rule set for the validity counters.
inline EvalReport run_cot_eval(const KnowledgeBase& kb,
                               const std::vector<TaskSpec>& tasks,
                               const std::vector<EvalItem>& items,
                               ModelEndpoint& endpoint,
                               const EvalOptions& options = {}) {
  const auto selected = detail::select_items(items, "cot", options.shots_filter);
  const auto outcomes = detail::run_items(
      items, selected, endpoint.thread_safe(), options.workers, [&](int i) {
        const EvalItem& item = items[static_cast<std::size_t>(i)];
        detail::ItemOutcome out;
        out.evaluated = true;
        try {
          const EvalContext context =
              make_context(kb, tasks, item, options.constrained);
          const std::string continuation = endpoint.generate(context);
          const CotParse parse = parse_cot_continuation(continuation);
          if (!parse.ok) {
            out.parse_failed = true;  // counted incorrect
            return out;
          }
          out.correct = verbalizer_name(parse.verbalizer) == item.gold;
          std::vector<Symbol> input;
          for (const auto& tok : item.input) {
            const auto sym = parse_symbol_token(tok);
            if (sym) input.push_back(*sym);
          }
          const CotValidation v = validate_cot(kb, input, parse);
          out.valid_steps = v.valid_steps;
          out.total_steps = v.total_steps;
        } catch (const std::exception&) {
          out.errored = true;
        }
        return out;
      });
  return detail::assemble_report("cot", endpoint.name(), options.constrained,
                                 items, outcomes);
}

// ---------------------------------------------------------------------------
// External request/response protocol
// ---------------------------------------------------------------------------

// One request line per item: {id, prompt, candidates, mode}.
inline int write_requests(const std::vector<EvalItem>& items,
                          const std::filesystem::path& path,
                          bool constrained = true) {
  auto out = open_output(path);
  int written = 0;
  for (const EvalItem& item : items) {
    nlohmann::ordered_json row;
    row["id"] = item_request_id(item);
    row["prompt"] = item.prompt;
    row["candidates"] = constrained
                            ? item.candidates
                            : std::vector<std::string>{"r1", "r2", "r3", "r4"};
    row["mode"] = item.mode;
    out << row.dump() << '\n';
    ++written;
  }
  out.close();
  if (!out) throw IoError("failed writing " + path.string());
  return written;
}

struct ExternalResponse {
  std::optional<std::vector<double>> scores;
  std::optional<std::string> continuation;
};

// Response lines {id, scores?, continuation?}; joined by id, any order.
inline std::unordered_map<std::string, ExternalResponse> load_responses(
    const std::filesystem::path& path) {
  std::unordered_map<std::string, ExternalResponse> responses;
  int line_no = 0;
  for (const std::string& line : read_lines(path)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json row;
    try {
      row = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string("response is not valid JSON: ") + e.what(),
                        line_no);
    }
    if (!row.is_object() || !row.contains("id") || !row["id"].is_string())
      throw FormatError("response line needs a string 'id'", line_no);
    const std::string id = row["id"].get<std::string>();
    if (responses.count(id) > 0)
      throw FormatError("duplicate response id: " + id, line_no);
    ExternalResponse resp;
    if (row.contains("scores")) {
      if (!row["scores"].is_array())
        throw FormatError("response 'scores' must be an array", line_no);
      resp.scores = std::vector<double>();
      for (const auto& s : row["scores"]) {
        if (!s.is_number())
          throw FormatError("response score is not a number", line_no);
        resp.scores->push_back(s.get<double>());
      }
    }
    if (row.contains("continuation")) {
      if (!row["continuation"].is_string())
        throw FormatError("response 'continuation' must be a string", line_no);
      resp.continuation = row["continuation"].get<std::string>();
    }
    if (!resp.scores && !resp.continuation)
      throw FormatError("response line carries neither scores nor continuation",
                        line_no);
    responses.emplace(id, std::move(resp));
  }
  return responses;
}

// Endpoint backed by a loaded response map; missing or mismatched entries
// surface as per-item errors in the report.
class ExternalEndpoint : public ModelEndpoint {
 public:
  explicit ExternalEndpoint(
      std::unordered_map<std::string, ExternalResponse> responses)
      : responses_(std::move(responses)) {}

  const char* name() const override { return "external"; }
  bool thread_safe() const override { return true; }

  std::vector<double> score(const EvalContext& context) override {
    const ExternalResponse& resp = lookup(context.id);
    if (!resp.scores)
      throw ConfigError("response " + context.id + " has no scores");
    if (resp.scores->size() != context.candidates.size())
      throw ConfigError("response " + context.id +
                        " scores a different candidate count");
    return *resp.scores;
  }

  std::string generate(const EvalContext& context) override {
    const ExternalResponse& resp = lookup(context.id);
    if (!resp.continuation)
      throw ConfigError("response " + context.id + " has no continuation");
    return *resp.continuation;
  }

 private:
  const ExternalResponse& lookup(const std::string& id) const {
    const auto it = responses_.find(id);
    if (it == responses_.end())
      throw ConfigError("no response for request " + id);
    return it->second;
  }

  std::unordered_map<std::string, ExternalResponse> responses_;
};

// Response ids that match no item: reported so typos do not pass silently.
inline std::vector<std::string> unmatched_response_ids(
    const std::vector<EvalItem>& items,
    const std::unordered_map<std::string, ExternalResponse>& responses) {
  std::unordered_set<std::string> wanted;
  for (const EvalItem& item : items) wanted.insert(item_request_id(item));
  std::vector<std::string> unmatched;
  for (const auto& [id, resp] : responses)
    if (wanted.count(id) == 0) unmatched.push_back(id);
  std::sort(unmatched.begin(), unmatched.end());
  return unmatched;
}

// ---------------------------------------------------------------------------
// Report serialization
// ---------------------------------------------------------------------------

inline nlohmann::ordered_json report_to_json(
    const EvalReport& report, const std::vector<TaskSpec>& tasks) {
  nlohmann::ordered_json j;
  j["mode"] = report.mode;
  j["endpoint"] = report.endpoint;
  j["constrained"] = report.constrained;
  j["n_items"] = report.n_items;
  j["n_correct"] = report.n_correct;
  j["accuracy"] = report.accuracy();
  j["n_errors"] = report.n_errors;
  j["complete"] = report.complete;
  if (report.mode == "cot") {
    j["parse_failures"] = report.n_parse_failures;
    j["step_validity"] = {{"valid", report.valid_steps},
                          {"total", report.total_steps},
                          {"rate", report.step_validity()}};
  }
  nlohmann::ordered_json by_shots = nlohmann::json::array();
  for (const auto& [shots, acc] : report.by_shots())
    by_shots.push_back({{"shots", shots}, {"mean_accuracy", acc}});
  j["by_shots"] = std::move(by_shots);
  nlohmann::ordered_json cells = nlohmann::json::array();
  for (const EvalCell& cell : report.cells) {
    nlohmann::ordered_json c;
    c["task_id"] = cell.task_id;
    if (cell.task_id >= 0 && cell.task_id < static_cast<int>(tasks.size())) {
      const TaskSpec& task = tasks[static_cast<std::size_t>(cell.task_id)];
      c["class_size"] = task.class_size;
      c["verbalizers"] = verbalizer_choice_name(task.verbalizers);
      c["seen"] = task.seen;
    }
    c["shots"] = cell.shots;
    c["n"] = cell.n;
    c["correct"] = cell.correct;
    c["accuracy"] = cell.accuracy();
    c["errors"] = cell.errors;
    if (report.mode == "cot") {
      c["parse_failures"] = cell.parse_failures;
      c["valid_steps"] = cell.valid_steps;
      c["total_steps"] = cell.total_steps;
    }
    cells.push_back(std::move(c));
  }
  j["cells"] = std::move(cells);
  return j;
}

inline std::string report_to_csv(const EvalReport& report,
                                 const std::vector<TaskSpec>& tasks) {
  std::string csv =
      "task_id,class_size,verbalizers,seen,shots,n,correct,accuracy,errors,"
      "parse_failures\n";
  for (const EvalCell& cell : report.cells) {
    std::string class_size = "", verbalizers = "", seen = "";
    if (cell.task_id >= 0 && cell.task_id < static_cast<int>(tasks.size())) {
      const TaskSpec& task = tasks[static_cast<std::size_t>(cell.task_id)];
      class_size = std::to_string(task.class_size);
      verbalizers = verbalizer_choice_name(task.verbalizers);
      seen = task.seen ? "seen" : "unseen";
    }
    csv += std::to_string(cell.task_id) + "," + class_size + "," + verbalizers +
           "," + seen + "," + std::to_string(cell.shots) + "," +
           std::to_string(cell.n) + "," + std::to_string(cell.correct) + "," +
           std::to_string(cell.accuracy()) + "," +
           std::to_string(cell.errors) + "," +
           std::to_string(cell.parse_failures) + "\n";
  }
  return csv;
}

}  // namespace calcutec
