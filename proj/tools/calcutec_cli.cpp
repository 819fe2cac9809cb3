// Command-line front end wiring every module: deterministic generators for
// rule sets, pretraining corpora, classification tasks, and arithmetic
// splits; evaluation runners with built-in baselines and a file-based
// external-model protocol; and the exact numeric verification suite for the
// in-context-learning bounds. Every generator run writes a manifest that can
// be replayed to reproduce its outputs byte for byte.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "calcutec/arith.hpp"
#include "calcutec/corpus.hpp"
#include "calcutec/eval.hpp"
#include "calcutec/kb_gen.hpp"
#include "calcutec/logic.hpp"
#include "calcutec/mixture.hpp"
#include "calcutec/tasks.hpp"

namespace {

using namespace calcutec;
using nlohmann::ordered_json;

constexpr const char* kToolName = "calcutec";
constexpr const char* kToolVersion = "0.1.0";

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

// ---------------------------------------------------------------------------
// Manifests

ordered_json file_entry(const std::filesystem::path& path) {
  ordered_json j;
  j["path"] = path.string();
  j["hash"] = file_hash_hex(path);
  return j;
}

void write_manifest(const std::filesystem::path& path, const std::string& subcommand,
                    ordered_json config, ordered_json inputs, ordered_json outputs) {
  ordered_json m;
  m["tool"] = kToolName;
  m["version"] = kToolVersion;
  m["subcommand"] = subcommand;
  m["config"] = std::move(config);
  m["inputs"] = std::move(inputs);
  m["outputs"] = std::move(outputs);
  write_file(path, m.dump(2) + "\n");
}

// Loads a manifest written by a previous run of the same subcommand and
// returns its config block; flags given explicitly on this invocation keep
// precedence over the stored values.
class StoredConfig {
 public:
  StoredConfig() = default;
  StoredConfig(const std::filesystem::path& path, const std::string& subcommand,
               const CLI::App* cmd)
      : cmd_(cmd) {
    nlohmann::json m;
    try {
      m = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("bad manifest " + path.string() + ": " + e.what());
    }
    if (!m.contains("subcommand") || m["subcommand"] != subcommand)
      throw ConfigError("manifest " + path.string() + " was not written by " + subcommand);
    if (!m.contains("config") || !m["config"].is_object())
      throw ConfigError("manifest " + path.string() + " has no config block");
    config_ = m["config"];
  }

  template <typename T>
  void adopt(const std::string& flag, const char* key, T& value) const {
    if (config_.is_null() || !cmd_) return;
    if (cmd_->count(flag) > 0) return;  // explicit flag wins
    if (config_.contains(key)) value = config_.at(key).get<T>();
  }

 private:
  const CLI::App* cmd_ = nullptr;
  nlohmann::json config_;
};

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

// ---------------------------------------------------------------------------
// Topic-pair files: one pair of symbol tokens per line, '#' comments allowed.

std::vector<TopicPair> load_topic_pairs(const std::filesystem::path& path) {
  std::vector<TopicPair> pairs;
  const auto lines = read_lines(path);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const int line_no = static_cast<int>(i) + 1;
    std::string line = lines[i];
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    const auto tokens = split_tokens(line);
    if (tokens.empty()) continue;
    if (tokens.size() != 2)
      throw FormatError("topic pair line needs exactly two symbols", line_no);
    const auto a = parse_symbol_token(tokens[0]);
    const auto b = parse_symbol_token(tokens[1]);
    if (!a || !b) throw FormatError("bad symbol token in topic pair", line_no);
    try {
      pairs.push_back(make_topic_pair(*a, *b));
    } catch (const ConfigError& e) {
      throw FormatError(e.what(), line_no);
    }
  }
  return pairs;
}

// ---------------------------------------------------------------------------
// gen-kb

struct GenKbArgs {
  int n_symbols = 100;
  int rules_per_symbol = 5;
  std::uint64_t seed = 0;
  bool allow_duplicates = false;
  std::string out;
  std::string manifest;
};

int run_gen_kb(const CLI::App* cmd, GenKbArgs args) {
  StoredConfig stored;
  if (!args.manifest.empty()) stored = StoredConfig(args.manifest, "gen-kb", cmd);
  stored.adopt("--n-symbols", "n_symbols", args.n_symbols);
  stored.adopt("--rules-per-symbol", "rules_per_symbol", args.rules_per_symbol);
  stored.adopt("--seed", "seed", args.seed);
  stored.adopt("--allow-duplicates", "allow_duplicates", args.allow_duplicates);
  stored.adopt("--out", "out", args.out);
  require(!args.out.empty(), "--out is required");

  KbGenConfig cfg;
  cfg.n_symbols = args.n_symbols;
  cfg.rules_per_symbol = args.rules_per_symbol;
  cfg.seed = args.seed;
  cfg.allow_duplicates = args.allow_duplicates;
  const KnowledgeBase kb = generate_kb(cfg);
  const std::filesystem::path out = args.out;
  if (out.has_parent_path()) std::filesystem::create_directories(out.parent_path());
  save_kb_file(kb, out);

  ordered_json config;
  config["n_symbols"] = args.n_symbols;
  config["rules_per_symbol"] = args.rules_per_symbol;
  config["seed"] = args.seed;
  config["allow_duplicates"] = args.allow_duplicates;
  config["out"] = args.out;
  ordered_json outputs;
  outputs["kb"] = file_entry(out);
  write_manifest(out.string() + ".manifest.json", "gen-kb", std::move(config), ordered_json::object(),
                 std::move(outputs));

  std::cout << "wrote " << kb.rules().size() << " rules over " << kb.n_symbols()
            << " symbols to " << out.string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// gen-corpus

struct GenCorpusArgs {
  std::string kb;
  int n_docs = 60000;
  int paragraphs = 16;
  double p_skip = 0.25;
  int d_min = 4;
  std::uint64_t seed = 0;
  int validation_docs = 10000;
  std::string topic_pairs;
  bool prose_variant = false;
  std::string out_dir;
  std::string manifest;
};

int run_gen_corpus(const CLI::App* cmd, GenCorpusArgs args) {
  StoredConfig stored;
  if (!args.manifest.empty()) stored = StoredConfig(args.manifest, "gen-corpus", cmd);
  stored.adopt("--kb", "kb", args.kb);
  stored.adopt("--n-docs", "n_docs", args.n_docs);
  stored.adopt("--paragraphs", "paragraphs", args.paragraphs);
  stored.adopt("--p-skip", "p_skip", args.p_skip);
  stored.adopt("--d-min", "d_min", args.d_min);
  stored.adopt("--seed", "seed", args.seed);
  stored.adopt("--validation-docs", "validation_docs", args.validation_docs);
  stored.adopt("--topic-pairs", "topic_pairs", args.topic_pairs);
  stored.adopt("--prose-variant", "prose_variant", args.prose_variant);
  stored.adopt("--out-dir", "out_dir", args.out_dir);
  require(!args.kb.empty(), "--kb is required");
  require(!args.out_dir.empty(), "--out-dir is required");

  const KnowledgeBase kb = load_kb_file(args.kb);
  CorpusConfig cfg;
  cfg.n_docs = args.n_docs;
  cfg.n_paragraphs = args.paragraphs;
  cfg.p_skip = args.p_skip;
  cfg.d_min = args.d_min;
  cfg.seed = args.seed;
  cfg.validation_docs = args.validation_docs;
  cfg.variant = args.prose_variant ? SubstitutionVariant::topic_pair
                                   : SubstitutionVariant::frequency;
  if (!args.topic_pairs.empty()) cfg.allowed_topic_pairs = load_topic_pairs(args.topic_pairs);

  const std::filesystem::path out_dir = args.out_dir;
  std::filesystem::create_directories(out_dir);
  const CorpusResult result = generate_corpus(kb, cfg, out_dir, env_worker_count());

  ordered_json config;
  config["kb"] = args.kb;
  config["n_docs"] = args.n_docs;
  config["paragraphs"] = args.paragraphs;
  config["p_skip"] = args.p_skip;
  config["d_min"] = args.d_min;
  config["seed"] = args.seed;
  config["validation_docs"] = args.validation_docs;
  config["topic_pairs"] = args.topic_pairs;
  config["prose_variant"] = args.prose_variant;
  config["out_dir"] = args.out_dir;
  ordered_json inputs;
  inputs["kb"] = file_entry(args.kb);
  if (!args.topic_pairs.empty()) inputs["topic_pairs"] = file_entry(args.topic_pairs);
  ordered_json outputs;
  outputs["train"] = file_entry(result.train_path);
  outputs["validation"] = file_entry(result.validation_path);
  write_manifest(out_dir / "manifest.json", "gen-corpus", std::move(config), std::move(inputs),
                 std::move(outputs));

  std::cout << "wrote " << result.train_docs << " training and " << result.validation_docs
            << " validation documents to " << out_dir.string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// corpus-stats

struct CorpusStatsArgs {
  std::string corpus;
  std::string json_out;
};

int run_corpus_stats(const CorpusStatsArgs& args) {
  const auto lines = read_lines(args.corpus);
  const auto docs = parse_corpus(lines);
  const StatsReport stats = corpus_stats(docs);

  std::array<std::int64_t, 5> verbalizer_hits{};  // index 1..4
  for (const auto& doc : docs)
    for (const auto& paragraph : doc.paragraphs)
      for (const auto& step : paragraph) {
        for (const auto& tok : step.antecedents)
          if (tok.verbalizer) ++verbalizer_hits[static_cast<std::size_t>(tok.id)];
        if (step.consequent.verbalizer)
          ++verbalizer_hits[static_cast<std::size_t>(step.consequent.id)];
      }

  const auto histogram_line = [](const char* label, const Histogram& h) {
    std::printf("%-24s mean %-10s min %-6d max %d\n", label, fmt(h.mean()).c_str(), h.min(),
                h.max());
  };
  std::printf("documents                %lld\n", static_cast<long long>(stats.n_documents));
  std::printf("paragraphs               %lld\n", static_cast<long long>(stats.n_paragraphs));
  std::printf("steps                    %lld\n", static_cast<long long>(stats.n_steps));
  histogram_line("tokens per document", stats.doc_tokens);
  histogram_line("tokens per paragraph", stats.paragraph_tokens);
  histogram_line("steps per paragraph", stats.steps_per_paragraph);
  histogram_line("first verbalizer step", stats.first_verbalizer_step);
  std::printf("verbalizer occurrences   r1 %lld  r2 %lld  r3 %lld  r4 %lld\n",
              static_cast<long long>(verbalizer_hits[1]),
              static_cast<long long>(verbalizer_hits[2]),
              static_cast<long long>(verbalizer_hits[3]),
              static_cast<long long>(verbalizer_hits[4]));

  if (!args.json_out.empty()) {
    const auto histogram_json = [](const Histogram& h) {
      ordered_json j;
      j["mean"] = h.mean();
      j["min"] = h.min();
      j["max"] = h.max();
      ordered_json counts = ordered_json::object();
      for (const auto& [k, c] : h.counts) counts[std::to_string(k)] = c;
      j["counts"] = std::move(counts);
      return j;
    };
    ordered_json j;
    j["corpus"] = args.corpus;
    j["documents"] = stats.n_documents;
    j["paragraphs"] = stats.n_paragraphs;
    j["steps"] = stats.n_steps;
    j["tokens_per_document"] = histogram_json(stats.doc_tokens);
    j["tokens_per_paragraph"] = histogram_json(stats.paragraph_tokens);
    j["steps_per_paragraph"] = histogram_json(stats.steps_per_paragraph);
    j["first_verbalizer_step"] = histogram_json(stats.first_verbalizer_step);
    j["verbalizer_occurrences"] = {{"r1", verbalizer_hits[1]},
                                   {"r2", verbalizer_hits[2]},
                                   {"r3", verbalizer_hits[3]},
                                   {"r4", verbalizer_hits[4]}};
    write_file(args.json_out, j.dump(2) + "\n");
  }
  return 0;
}

// ---------------------------------------------------------------------------
// gen-tasks

struct GenTasksArgs {
  std::string kb;
  int class_size = 1;
  std::string verbalizers = "r1r2";
  bool seen = false;
  bool unseen = false;
  std::string shape = "balanced";
  int len = 4;
  std::vector<int> shots{2, 4, 6};
  int n_examples = 500;
  int n_tasks = 5;
  std::string mode = "icl";
  std::uint64_t seed = 0;
  std::string topic_pairs;
  std::string out;
  std::string manifest;
};

int run_gen_tasks(const CLI::App* cmd, GenTasksArgs args) {
  StoredConfig stored;
  if (!args.manifest.empty()) stored = StoredConfig(args.manifest, "gen-tasks", cmd);
  stored.adopt("--kb", "kb", args.kb);
  stored.adopt("--class-size", "class_size", args.class_size);
  stored.adopt("--verbalizers", "verbalizers", args.verbalizers);
  bool stored_seen = args.seen;
  stored.adopt("--seen", "seen", stored_seen);
  if (!cmd->count("--seen") && !cmd->count("--unseen") && !args.manifest.empty()) {
    args.seen = stored_seen;
    args.unseen = !stored_seen;
  }
  stored.adopt("--shape", "shape", args.shape);
  stored.adopt("--len", "len", args.len);
  stored.adopt("--shots", "shots", args.shots);
  stored.adopt("--n-examples", "n_examples", args.n_examples);
  stored.adopt("--n-tasks", "n_tasks", args.n_tasks);
  stored.adopt("--mode", "mode", args.mode);
  stored.adopt("--seed", "seed", args.seed);
  stored.adopt("--topic-pairs", "topic_pairs", args.topic_pairs);
  stored.adopt("--out", "out", args.out);

  require(!args.kb.empty(), "--kb is required");
  require(!args.out.empty(), "--out is required");
  require(args.seen != args.unseen, "give exactly one of --seen and --unseen");
  require(!args.seen || !args.topic_pairs.empty(),
          "--seen tasks need --topic-pairs (the training pair set)");
  require(args.verbalizers == "r1r2" || args.verbalizers == "r3r4",
          "--verbalizers must be r1r2 or r3r4");
  require(args.shape == "branching" || args.shape == "balanced",
          "--shape must be branching or balanced");
  require(args.mode == "icl" || args.mode == "cot", "--mode must be icl or cot");

  const KnowledgeBase kb = load_kb_file(args.kb);
  std::vector<TopicPair> q;
  if (!args.topic_pairs.empty()) q = load_topic_pairs(args.topic_pairs);

  Rng task_rng(derive_seed(args.seed, {kTaskStream}));
  const auto tasks = make_tasks(
      kb, args.class_size,
      args.verbalizers == "r1r2" ? VerbalizerChoice::r1r2 : VerbalizerChoice::r3r4, args.seen,
      args.n_tasks, q, task_rng);

  ItemConfig icfg;
  icfg.n_examples = args.n_examples;
  icfg.shots_grid = args.shots;
  icfg.mode = args.mode == "icl" ? PromptMode::icl : PromptMode::cot;
  icfg.input_len = args.len;
  icfg.shape = args.shape == "branching" ? TreeShape::branching : TreeShape::balanced;
  icfg.seed = args.seed;

  const std::filesystem::path out_dir = args.out;
  std::filesystem::create_directories(out_dir);
  const std::size_t n_items = export_tasks(kb, tasks, icfg, out_dir);

  ordered_json config;
  config["kb"] = args.kb;
  config["class_size"] = args.class_size;
  config["verbalizers"] = args.verbalizers;
  config["seen"] = args.seen;
  config["shape"] = args.shape;
  config["len"] = args.len;
  config["shots"] = args.shots;
  config["n_examples"] = args.n_examples;
  config["n_tasks"] = args.n_tasks;
  config["mode"] = args.mode;
  config["seed"] = args.seed;
  config["topic_pairs"] = args.topic_pairs;
  config["out"] = args.out;
  ordered_json inputs;
  inputs["kb"] = file_entry(args.kb);
  if (!args.topic_pairs.empty()) inputs["topic_pairs"] = file_entry(args.topic_pairs);
  ordered_json outputs;
  outputs["items"] = file_entry(out_dir / "items.jsonl");
  outputs["tasks"] = file_entry(out_dir / "tasks.json");
  write_manifest(out_dir / "manifest.json", "gen-tasks", std::move(config), std::move(inputs),
                 std::move(outputs));

  std::cout << "wrote " << tasks.size() << " tasks and " << n_items << " items to "
            << out_dir.string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// gen-arith

struct GenArithArgs {
  std::string variant = "multi";
  int train = 80000;
  int validation = 10000;
  int test_seen = 10000;
  double merge_probability = 0.5;
  std::uint64_t seed = 0;
  std::string out_dir;
  std::string manifest;
};

int run_gen_arith(const CLI::App* cmd, GenArithArgs args) {
  StoredConfig stored;
  if (!args.manifest.empty()) stored = StoredConfig(args.manifest, "gen-arith", cmd);
  stored.adopt("--variant", "variant", args.variant);
  stored.adopt("--train", "train", args.train);
  stored.adopt("--validation", "validation", args.validation);
  stored.adopt("--test-seen", "test_seen", args.test_seen);
  stored.adopt("--merge-probability", "merge_probability", args.merge_probability);
  stored.adopt("--seed", "seed", args.seed);
  stored.adopt("--out-dir", "out_dir", args.out_dir);
  require(!args.out_dir.empty(), "--out-dir is required");

  ArithConfig cfg;
  cfg.variant = parse_arith_variant(args.variant);
  cfg.train = args.train;
  cfg.validation = args.validation;
  cfg.test_seen = args.test_seen;
  cfg.merge_probability = args.merge_probability;
  cfg.seed = args.seed;

  const std::filesystem::path out_dir = args.out_dir;
  std::filesystem::create_directories(out_dir);
  const ArithResult result = gen_splits(cfg, out_dir, env_worker_count());

  ordered_json config;
  config["variant"] = args.variant;
  config["train"] = args.train;
  config["validation"] = args.validation;
  config["test_seen"] = args.test_seen;
  config["merge_probability"] = args.merge_probability;
  config["seed"] = args.seed;
  config["out_dir"] = args.out_dir;
  ordered_json outputs;
  outputs["train"] = file_entry(result.train_path);
  outputs["validation"] = file_entry(result.validation_path);
  outputs["test_seen"] = file_entry(result.test_seen_path);
  outputs["test_unseen"] = file_entry(result.test_unseen_path);
  write_manifest(out_dir / "manifest.json", "gen-arith", std::move(config),
                 ordered_json::object(), std::move(outputs));

  std::cout << "wrote " << result.train << " train, " << result.validation
            << " validation, " << result.test_seen << " seen-test, "
            << result.test_unseen << " unseen-test examples to " << out_dir.string()
            << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// eval-icl / eval-cot

struct EvalArgs {
  std::string items;
  std::string kb;
  std::string tasks;
  std::string model;
  std::string requests;
  std::string responses;
  std::vector<int> shots;
  std::string report;
  std::string csv;
  bool free_candidates = false;
  bool serial = false;
  int workers = 0;  // 0: environment / hardware default
};

int run_eval(const std::string& mode, const EvalArgs& args) {
  require(args.model == "builtin-bayes" || args.model == "builtin-reasoner" ||
              args.model == "external",
          "--model must be builtin-bayes, builtin-reasoner, or external");
  require(!args.items.empty(), "--items is required");

  const auto all_items = load_items(args.items);
  std::vector<EvalItem> items;
  for (const auto& item : all_items) {
    if (item.mode != mode) continue;
    if (!args.shots.empty() &&
        std::find(args.shots.begin(), args.shots.end(), item.shots) == args.shots.end())
      continue;
    items.push_back(item);
  }
  std::cout << "evaluating " << items.size() << " of " << all_items.size() << " items ("
            << mode << ")\n";

  if (!args.requests.empty()) {
    const int written = write_requests(items, args.requests, !args.free_candidates);
    std::cout << "wrote " << written << " requests to " << args.requests << "\n";
  }
  if (args.model == "external" && args.responses.empty()) {
    require(!args.requests.empty(),
            "external runs need --requests (to write) or --responses (to score)");
    return 0;
  }

  require(!args.kb.empty(), "--kb is required to evaluate");
  require(!args.tasks.empty(), "--tasks is required to evaluate");
  const KnowledgeBase kb = load_kb_file(args.kb);
  const auto tasks = load_tasks(args.tasks);

  std::unique_ptr<ModelEndpoint> endpoint;
  if (args.model == "builtin-bayes") {
    endpoint = std::make_unique<BayesEndpoint>(kb);
  } else if (args.model == "builtin-reasoner") {
    endpoint = std::make_unique<ReasonerEndpoint>();
  } else {
    auto responses = load_responses(args.responses);
    const auto unmatched = unmatched_response_ids(items, responses);
    if (!unmatched.empty()) {
      std::cerr << "warning: " << unmatched.size() << " responses match no request:";
      for (std::size_t i = 0; i < unmatched.size() && i < 5; ++i)
        std::cerr << ' ' << unmatched[i];
      if (unmatched.size() > 5) std::cerr << " ...";
      std::cerr << "\n";
    }
    endpoint = std::make_unique<ExternalEndpoint>(std::move(responses));
  }

  EvalOptions options;
  options.constrained = !args.free_candidates;
  if (args.serial)
    options.workers = 1;
  else if (args.workers > 0)
    options.workers = args.workers;

  const EvalReport report = mode == "icl"
                                ? run_icl_eval(kb, tasks, items, *endpoint, options)
                                : run_cot_eval(kb, tasks, items, *endpoint, options);

  std::cout << "accuracy " << fmt(report.accuracy()) << " over " << report.n_items
            << " items\n";
  for (const auto& [shots, acc] : report.by_shots())
    std::cout << "  " << shots << "-shot mean accuracy " << fmt(acc) << "\n";
  if (mode == "cot")
    std::cout << "  parse failures " << report.n_parse_failures << ", step validity "
              << fmt(report.step_validity()) << " (" << report.valid_steps << "/"
              << report.total_steps << ")\n";
  if (!report.complete)
    std::cerr << "warning: " << report.n_errors
              << " items errored; the report is incomplete\n";

  if (!args.report.empty())
    write_file(args.report, report_to_json(report, tasks).dump(2) + "\n");
  if (!args.csv.empty()) write_file(args.csv, report_to_csv(report, tasks));
  return 0;
}

// ---------------------------------------------------------------------------
// verify-bounds

struct VerifyBoundsArgs {
  int models = 100;
  int t_max = 8;
  std::uint64_t seed = 0;
  std::string report;
  std::string model_file;
};

latent::EvalSequence sample_sequence(const latent::LatentModel& m, int z, int T, Rng& rng) {
  const auto draw = [&rng](const std::vector<latent::real>& dist) {
    const latent::real u = static_cast<latent::real>(rng.next_unit());
    latent::real acc = 0;
    for (std::size_t i = 0; i < dist.size(); ++i) {
      acc += dist[i];
      if (u < acc) return static_cast<int>(i);
    }
    return static_cast<int>(dist.size()) - 1;
  };
  latent::EvalSequence seq;
  for (int t = 0; t < T; ++t) {
    const int x = draw(m.input_prob[static_cast<std::size_t>(z)]);
    const int r = draw(m.label_prob[static_cast<std::size_t>(z)][static_cast<std::size_t>(x)]);
    seq.push_back({x, r});
  }
  return seq;
}

struct CheckTally {
  long long count = 0;
  long long failures = 0;
  double worst = 0.0;  // most adverse slack / largest tightness error

  void add(bool ok, double value, bool smaller_is_worse) {
    ++count;
    if (!ok) ++failures;
    if (count == 1)
      worst = value;
    else
      worst = smaller_is_worse ? std::min(worst, value) : std::max(worst, value);
  }
};

int run_verify_bounds(const VerifyBoundsArgs& args) {
  require(args.models >= 1, "--models must be positive");
  require(args.t_max >= 1 && args.t_max <= 12, "--t-max must lie in 1..12");

  Rng rng(derive_seed(args.seed, {kModelStream}));
  CheckTally mixture, tightness, expectation, chains;

  // Mixture lower bound on sampled models and sequences, plus the
  // single-state tightness case sliced out of each model.
  for (int i = 0; i < args.models; ++i) {
    const int states = rng.next_int(2, 4);
    const int inputs = rng.next_int(2, 3);
    const int labels = rng.next_int(2, 3);
    const auto m = latent::random_model(rng, states, inputs, labels);
    const int z_star = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(states)));
    for (int T = 1; T <= args.t_max; ++T) {
      const auto seq = sample_sequence(m, z_star, T, rng);
      const auto rep = latent::icl_bound_check(m, z_star, seq);
      mixture.add(rep.holds, static_cast<double>(rep.slack), true);

      latent::LatentModel single;
      single.prior = {1.0L};
      single.input_prob = {m.input_prob[static_cast<std::size_t>(z_star)]};
      single.label_prob = {m.label_prob[static_cast<std::size_t>(z_star)]};
      const auto tight = latent::icl_bound_check(single, 0, seq);
      tightness.add(std::abs(static_cast<double>(tight.slack)) <= 1e-12,
                    std::abs(static_cast<double>(tight.slack)), false);
    }
  }

  // Exact expectation over all input sequences for small alphabets; the
  // deterministic-label state makes the label term vanish and leaves the
  // KL-sum identity checkable.
  const int expectation_models = std::min(args.models, 20);
  for (int i = 0; i < expectation_models; ++i) {
    const int states = rng.next_int(2, 3);
    const int inputs = rng.next_int(2, 3);
    const int labels = rng.next_int(2, 3);
    const int z_star = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(states)));
    const auto m = latent::random_model(rng, states, inputs, labels, z_star);
    const int t_cap = inputs == 2 ? std::min(args.t_max, 6) : std::min(args.t_max, 4);
    for (int T = 1; T <= t_cap; ++T) {
      const auto rep = latent::expected_icl_bound_check(m, z_star, T);
      const bool kl_consistent =
          std::abs(static_cast<double>(rep.input_ratio_term - rep.kl_sum)) <= 1e-9 &&
          static_cast<double>(rep.min_step_kl) >= -1e-12;
      expectation.add(rep.holds && kl_consistent, static_cast<double>(rep.slack), true);
    }
  }

  // Derivation-drop bound over random alternative-length mixtures.
  for (int i = 0; i < std::min(args.models, 30); ++i) {
    const double p_drop = 0.2 + 0.6 * rng.next_unit();
    const double p_min = 0.3 + 0.5 * rng.next_unit();
    latent::ChainModel chain;
    double remaining = 1.0;
    const int n_alts = rng.next_int(1, 3);
    int max_len = 0;
    for (int a = 0; a < n_alts; ++a) {
      const int len = rng.next_int(1, 6);
      max_len = std::max(max_len, len);
      const double floor_prob = std::pow(p_min, len);
      const double prob = std::min(remaining, floor_prob + (remaining - floor_prob) *
                                                              0.5 * rng.next_unit());
      if (prob < floor_prob || prob <= 0.0) continue;
      chain.chains.push_back({len, static_cast<latent::real>(prob)});
      remaining -= prob;
      if (remaining <= 0.0) break;
    }
    if (chain.chains.empty()) chain.chains.push_back({1, static_cast<latent::real>(p_min)});
    const auto rep = latent::drop_chain_bound_check(chain, p_drop, p_min, 8);
    chains.add(rep.holds, static_cast<double>(rep.slack), true);
  }

  // A user-supplied model: bound check for every state and horizon.
  std::optional<CheckTally> file_checks;
  if (!args.model_file.empty()) {
    nlohmann::json parsed;
    try {
      parsed = nlohmann::json::parse(read_file(args.model_file));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("bad model file: " + std::string(e.what()));
    }
    const auto m = latent::model_from_json(parsed);
    file_checks.emplace();
    for (int z = 0; z < m.n_states(); ++z) {
      if (m.prior[static_cast<std::size_t>(z)] <= 0) continue;
      for (int T = 1; T <= args.t_max; ++T) {
        const auto seq = sample_sequence(m, z, T, rng);
        const auto rep = latent::icl_bound_check(m, z, seq);
        file_checks->add(rep.holds, static_cast<double>(rep.slack), true);
      }
    }
  }

  const auto print_tally = [](const char* label, const CheckTally& t, const char* metric) {
    std::printf("%-26s %6lld checks   %s %-12s failures %lld\n", label, t.count, metric,
                fmt(t.worst).c_str(), t.failures);
  };
  print_tally("mixture lower bound", mixture, "min slack");
  print_tally("single-state tightness", tightness, "max |slack|");
  print_tally("exact expectation", expectation, "min slack");
  print_tally("derivation-drop bound", chains, "min slack");
  if (file_checks) print_tally("model-file bound", *file_checks, "min slack");

  const long long failures = mixture.failures + tightness.failures + expectation.failures +
                             chains.failures +
                             (file_checks ? file_checks->failures : 0);
  const long long total = mixture.count + tightness.count + expectation.count + chains.count +
                          (file_checks ? file_checks->count : 0);
  if (failures == 0)
    std::printf("all %lld bound checks passed\n", total);
  else
    std::printf("%lld of %lld bound checks FAILED\n", failures, total);

  if (!args.report.empty()) {
    const auto tally_json = [](const CheckTally& t) {
      ordered_json j;
      j["count"] = t.count;
      j["failures"] = t.failures;
      j["worst"] = t.worst;
      return j;
    };
    ordered_json j;
    j["tool"] = kToolName;
    j["version"] = kToolVersion;
    j["seed"] = args.seed;
    j["models"] = args.models;
    j["t_max"] = args.t_max;
    j["checks"]["mixture_lower_bound"] = tally_json(mixture);
    j["checks"]["single_state_tightness"] = tally_json(tightness);
    j["checks"]["exact_expectation"] = tally_json(expectation);
    j["checks"]["derivation_drop_bound"] = tally_json(chains);
    if (file_checks) j["checks"]["model_file"] = tally_json(*file_checks);
    j["passed"] = failures == 0;
    write_file(args.report, j.dump(2) + "\n");
  }
  return failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deterministic generators, evaluators, and bound checks for a "
               "Horn-clause pseudo-language testbed"};
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);

  // gen-kb ------------------------------------------------------------------
  GenKbArgs kb_args;
  auto* gen_kb = app.add_subcommand("gen-kb", "Generate a rule set");
  gen_kb->add_option("--n-symbols", kb_args.n_symbols, "Alphabet size")
      ->capture_default_str();
  gen_kb->add_option("--rules-per-symbol", kb_args.rules_per_symbol,
                     "Rules concluding each symbol")
      ->capture_default_str();
  gen_kb->add_option("--seed", kb_args.seed, "Generation seed")->capture_default_str();
  gen_kb->add_flag("--allow-duplicates", kb_args.allow_duplicates,
                   "Permit repeated antecedent pairs per consequent");
  gen_kb->add_option("--out", kb_args.out, "Output rule file");
  gen_kb->add_option("--manifest", kb_args.manifest, "Replay a stored manifest");

  // gen-corpus --------------------------------------------------------------
  GenCorpusArgs corpus_args;
  auto* gen_corpus = app.add_subcommand("gen-corpus", "Generate a pretraining corpus");
  gen_corpus->add_option("--kb", corpus_args.kb, "Rule file");
  gen_corpus->add_option("--n-docs", corpus_args.n_docs, "Total documents")
      ->capture_default_str();
  gen_corpus->add_option("--paragraphs", corpus_args.paragraphs, "Paragraphs per document")
      ->capture_default_str();
  gen_corpus->add_option("--p-skip", corpus_args.p_skip,
                         "Merge/drop perturbation probability")
      ->capture_default_str();
  gen_corpus->add_option("--d-min", corpus_args.d_min, "Minimum goal derivation depth")
      ->capture_default_str();
  gen_corpus->add_option("--seed", corpus_args.seed, "Generation seed")->capture_default_str();
  gen_corpus->add_option("--validation-docs", corpus_args.validation_docs,
                         "Documents split into validation.txt")
      ->capture_default_str();
  gen_corpus->add_option("--topic-pairs", corpus_args.topic_pairs,
                         "Allowed topic pair file (default: all distinct pairs)");
  gen_corpus->add_flag("--prose-variant", corpus_args.prose_variant,
                       "Substitute the topic pair instead of the two most frequent symbols");
  gen_corpus->add_option("--out-dir", corpus_args.out_dir, "Output directory");
  gen_corpus->add_option("--manifest", corpus_args.manifest, "Replay a stored manifest");

  // corpus-stats ------------------------------------------------------------
  CorpusStatsArgs stats_args;
  auto* stats_cmd = app.add_subcommand("corpus-stats", "Summarize a corpus file");
  stats_cmd->add_option("--corpus", stats_args.corpus, "Corpus file")->required();
  stats_cmd->add_option("--json", stats_args.json_out, "Also write the summary as JSON");

  // gen-tasks ---------------------------------------------------------------
  GenTasksArgs task_args;
  auto* gen_tasks = app.add_subcommand("gen-tasks", "Generate classification tasks and items");
  gen_tasks->add_option("--kb", task_args.kb, "Rule file");
  gen_tasks->add_option("--class-size", task_args.class_size, "Symbols per class (1-3)")
      ->capture_default_str();
  gen_tasks->add_option("--verbalizers", task_args.verbalizers, "r1r2 or r3r4")
      ->capture_default_str();
  gen_tasks->add_flag("--seen", task_args.seen, "Defining pairs drawn from the topic pairs");
  gen_tasks->add_flag("--unseen", task_args.unseen, "Defining pairs avoid the topic pairs");
  gen_tasks->add_option("--shape", task_args.shape, "branching or balanced")
      ->capture_default_str();
  gen_tasks->add_option("--len", task_args.len, "Test input length")->capture_default_str();
  gen_tasks->add_option("--shots", task_args.shots, "Shot counts (comma separated)")
      ->delimiter(',')
      ->capture_default_str();
  gen_tasks->add_option("--n-examples", task_args.n_examples, "Examples per task")
      ->capture_default_str();
  gen_tasks->add_option("--n-tasks", task_args.n_tasks, "Number of disjoint tasks")
      ->capture_default_str();
  gen_tasks->add_option("--mode", task_args.mode, "Prompt mode: icl or cot")
      ->capture_default_str();
  gen_tasks->add_option("--seed", task_args.seed, "Generation seed")->capture_default_str();
  gen_tasks->add_option("--topic-pairs", task_args.topic_pairs, "Training topic pair file");
  gen_tasks->add_option("--out", task_args.out, "Output directory");
  gen_tasks->add_option("--manifest", task_args.manifest, "Replay a stored manifest");

  // gen-arith ---------------------------------------------------------------
  GenArithArgs arith_args;
  auto* gen_arith = app.add_subcommand("gen-arith", "Generate mod-16 arithmetic splits");
  gen_arith->add_option("--variant", arith_args.variant, "multi or single")
      ->capture_default_str();
  gen_arith->add_option("--train", arith_args.train, "Training examples")
      ->capture_default_str();
  gen_arith->add_option("--validation", arith_args.validation, "Validation examples")
      ->capture_default_str();
  gen_arith->add_option("--test-seen", arith_args.test_seen, "Seen-range test examples")
      ->capture_default_str();
  gen_arith->add_option("--merge-probability", arith_args.merge_probability,
                        "Step merge probability")
      ->capture_default_str();
  gen_arith->add_option("--seed", arith_args.seed, "Generation seed")->capture_default_str();
  gen_arith->add_option("--out-dir", arith_args.out_dir, "Output directory");
  gen_arith->add_option("--manifest", arith_args.manifest, "Replay a stored manifest");

  // eval-icl / eval-cot -----------------------------------------------------
  EvalArgs icl_args, cot_args;
  const auto add_eval_options = [](CLI::App* cmd, EvalArgs& args) {
    cmd->add_option("--items", args.items, "Evaluation item file (JSONL)");
    cmd->add_option("--kb", args.kb, "Rule file");
    cmd->add_option("--tasks", args.tasks, "Task file (JSON)");
    cmd->add_option("--model", args.model,
                    "builtin-bayes, builtin-reasoner, or external")
        ->required();
    cmd->add_option("--requests", args.requests, "Write request JSONL for an external model");
    cmd->add_option("--responses", args.responses, "Response JSONL from an external model");
    cmd->add_option("--shots", args.shots, "Only evaluate these shot counts")
        ->delimiter(',');
    cmd->add_option("--report", args.report, "Write the report as JSON");
    cmd->add_option("--csv", args.csv, "Write per-task cells as CSV");
    cmd->add_flag("--free", args.free_candidates,
                  "Rank all four verbalizers instead of the task pair");
    cmd->add_flag("--serial", args.serial, "Evaluate on a single thread");
    cmd->add_option("--workers", args.workers, "Worker thread count");
  };
  auto* eval_icl = app.add_subcommand("eval-icl", "Score plain in-context prompts");
  add_eval_options(eval_icl, icl_args);
  auto* eval_cot = app.add_subcommand("eval-cot", "Score reasoning continuations");
  add_eval_options(eval_cot, cot_args);

  // verify-bounds -----------------------------------------------------------
  VerifyBoundsArgs bounds_args;
  auto* verify = app.add_subcommand("verify-bounds", "Run the numeric bound check suite");
  verify->add_option("--models", bounds_args.models, "Random models to check")
      ->capture_default_str();
  verify->add_option("--t-max", bounds_args.t_max, "Largest sequence length")
      ->capture_default_str();
  verify->add_option("--seed", bounds_args.seed, "Sampling seed")->capture_default_str();
  verify->add_option("--report", bounds_args.report, "Write check results as JSON");
  verify->add_option("--model-file", bounds_args.model_file,
                     "Also check a model from a JSON file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (gen_kb->parsed()) return run_gen_kb(gen_kb, kb_args);
    if (gen_corpus->parsed()) return run_gen_corpus(gen_corpus, corpus_args);
    if (stats_cmd->parsed()) return run_corpus_stats(stats_args);
    if (gen_tasks->parsed()) return run_gen_tasks(gen_tasks, task_args);
    if (gen_arith->parsed()) return run_gen_arith(gen_arith, arith_args);
    if (eval_icl->parsed()) return run_eval("icl", icl_args);
    if (eval_cot->parsed()) return run_eval("cot", cot_args);
    if (verify->parsed()) return run_verify_bounds(bounds_args);
  } catch (const ConfigError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const FormatError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
