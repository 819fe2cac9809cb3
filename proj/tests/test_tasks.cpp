#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <set>

#include "calcutec/kb_gen.hpp"
#include "calcutec/tasks.hpp"
#include "oracles.hpp"

using namespace calcutec;

namespace {

KnowledgeBase standard_kb() {
  KbGenConfig cfg;
  cfg.seed = 31;
  return generate_kb(cfg);
}

std::vector<TopicPair> chain_pairs() {
  return {make_topic_pair(0, 1),  make_topic_pair(2, 3),   make_topic_pair(4, 5),
          make_topic_pair(6, 7),  make_topic_pair(8, 9),   make_topic_pair(10, 11),
          make_topic_pair(12, 13)};
}

std::set<Symbol> used_symbols(const TaskSpec& t) {
  std::set<Symbol> s(t.v_plus.begin(), t.v_plus.end());
  s.insert(t.v_minus.begin(), t.v_minus.end());
  return s;
}

std::filesystem::path fresh_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "calcutec_tests" / name;
  std::filesystem::remove_all(dir);
  return dir;
}

}  // namespace

TEST_CASE("seen singleton tasks use topic pairs, unseen ones avoid them") {
  auto kb = standard_kb();
  auto q = chain_pairs();
  std::set<TopicPair> qset(q.begin(), q.end());

  Rng rng(71);
  auto seen = make_tasks(kb, 1, VerbalizerChoice::r1r2, true, 5, q, rng);
  REQUIRE(seen.size() == 5);
  std::set<Symbol> all_used;
  for (const auto& t : seen) {
    REQUIRE(t.v_plus.size() == 1);
    REQUIRE(t.v_minus.size() == 1);
    CHECK(qset.count(make_topic_pair(t.v_plus[0], t.v_minus[0])) == 1);
    for (Symbol s : used_symbols(t)) CHECK(all_used.insert(s).second);  // disjoint tasks
  }

  auto unseen = make_tasks(kb, 1, VerbalizerChoice::r1r2, false, 5, q, rng);
  for (const auto& t : unseen)
    CHECK(qset.count(make_topic_pair(t.v_plus[0], t.v_minus[0])) == 0);
}

TEST_CASE("seen multi-symbol classes are cliques in the topic-pair graph") {
  auto kb = standard_kb();
  std::vector<TopicPair> q;
  for (Symbol a : {20, 21, 22})
    for (Symbol b : {20, 21, 22})
      if (a < b) q.push_back(make_topic_pair(a, b));
  for (Symbol a : {30, 31, 32})
    for (Symbol b : {30, 31, 32})
      if (a < b) q.push_back(make_topic_pair(a, b));
  q.push_back(make_topic_pair(50, 51));
  q.push_back(make_topic_pair(52, 53));
  std::set<TopicPair> qset(q.begin(), q.end());

  Rng rng(72);
  auto triple = make_tasks(kb, 3, VerbalizerChoice::r1r2, true, 1, q, rng);
  REQUIRE(triple.size() == 1);
  for (const auto& cls : {triple[0].v_plus, triple[0].v_minus}) {
    REQUIRE(cls.size() == 3);
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = i + 1; j < 3; ++j)
        CHECK(qset.count(make_topic_pair(cls[i], cls[j])) == 1);
  }

  auto dbl = make_tasks(kb, 2, VerbalizerChoice::r3r4, true, 2, q, rng);
  for (const auto& t : dbl) {
    CHECK(qset.count(make_topic_pair(t.v_plus[0], t.v_plus[1])) == 1);
    CHECK(qset.count(make_topic_pair(t.v_minus[0], t.v_minus[1])) == 1);
  }

  auto unseen3 = make_tasks(kb, 3, VerbalizerChoice::r1r2, false, 3, q, rng);
  for (const auto& t : unseen3)
    for (const auto& cls : {t.v_plus, t.v_minus})
      for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = i + 1; j < 3; ++j)
          CHECK(qset.count(make_topic_pair(cls[i], cls[j])) == 0);
}

TEST_CASE("infeasible task requests fail with a named constraint") {
  auto kb = standard_kb();
  Rng rng(73);
  // no triangles: seen triples are impossible
  std::vector<TopicPair> sparse{make_topic_pair(1, 2), make_topic_pair(3, 4)};
  CHECK_THROWS_AS(make_tasks(kb, 3, VerbalizerChoice::r1r2, true, 1, sparse, rng),
                  ConfigError);
  // seen pairs exhausted after one task
  CHECK_THROWS_AS(make_tasks(kb, 1, VerbalizerChoice::r1r2, true, 5, sparse, rng),
                  ConfigError);
  // symbol budget exceeded
  KbGenConfig small;
  small.n_symbols = 10;
  small.rules_per_symbol = 2;
  auto kb10 = generate_kb(small);
  CHECK_THROWS_AS(make_tasks(kb10, 3, VerbalizerChoice::r1r2, false, 5, {}, rng),
                  ConfigError);
  CHECK_THROWS_AS(make_tasks(kb, 4, VerbalizerChoice::r1r2, true, 1, sparse, rng),
                  ConfigError);
}

TEST_CASE("sampled examples have the requested tree shape") {
  auto kb = standard_kb();
  Rng rng(74);
  TaskSpec task;
  task.v_plus = {5};
  task.v_minus = {17};

  for (int i = 0; i < 40; ++i) {
    auto e3 = sample_example(kb, task, 3, TreeShape::branching, rng);
    CHECK(e3.input.size() == 3);
    CHECK(proof_height(e3.proof) == 2);
    REQUIRE(verify_proof_tree(kb, e3.input, e3.proof).ok);

    auto e4 = sample_example(kb, task, 4, TreeShape::branching, rng);
    CHECK(e4.input.size() == 4);
    CHECK(proof_height(e4.proof) == 3);
    REQUIRE(verify_proof_tree(kb, e4.input, e4.proof).ok);

    auto b4 = sample_example(kb, task, 4, TreeShape::balanced, rng);
    CHECK(b4.input.size() == 4);
    CHECK(proof_height(b4.proof) == 2);
    REQUIRE(verify_proof_tree(kb, b4.input, b4.proof).ok);
    const auto& root = b4.proof.nodes[static_cast<std::size_t>(b4.proof.root)];
    for (int c : root.children)
      CHECK(b4.proof.nodes[static_cast<std::size_t>(c)].rule_id >= 0);
  }
  CHECK_THROWS_AS(sample_example(kb, task, 5, TreeShape::branching, rng), ConfigError);
}

TEST_CASE("examples entail exactly one class and exclude trivial inputs") {
  auto kb = standard_kb();
  Rng rng(75);
  TaskSpec task;
  task.v_plus = {5, 23};
  task.v_minus = {17, 40};
  task.class_size = 2;

  int positives = 0;
  for (int i = 0; i < 300; ++i) {
    auto ex = sample_example(kb, task, 4, TreeShape::balanced, rng);
    auto closure = oracle::closure_by_passes(kb, ex.input);
    bool plus = false, minus = false;
    for (Symbol s : task.v_plus) plus = plus || closure.count(s);
    for (Symbol s : task.v_minus) minus = minus || closure.count(s);
    CHECK(plus != minus);
    CHECK((ex.positive ? plus : minus));
    CHECK(closure.count(ex.class_member) == 1);
    for (Symbol s : ex.input) {
      CHECK_FALSE(std::count(task.v_plus.begin(), task.v_plus.end(), s));
      CHECK_FALSE(std::count(task.v_minus.begin(), task.v_minus.end(), s));
    }
    positives += ex.positive ? 1 : 0;
  }
  CHECK(positives > 100);  // coin-labeled
  CHECK(positives < 200);

  auto forced = sample_example(kb, task, 4, TreeShape::balanced, rng, {}, false);
  CHECK_FALSE(forced.positive);
}

TEST_CASE("prompt fragments match the documented layouts") {
  TaskSpec task;
  task.v_plus = {5};
  task.v_minus = {9};

  TaskExample ex;
  ex.input = {4, 1, 2};
  ex.positive = true;
  ex.class_member = 5;
  // proof: x3 from (x1, x2), then x5 from (x3, x4)
  ex.proof.root_symbol = 5;
  ex.proof.nodes = {ProofNode{1, -1, {}}, ProofNode{2, -1, {}}, ProofNode{3, 0, {0, 1}},
                    ProofNode{4, -1, {}}, ProofNode{5, 1, {2, 3}}};
  ex.proof.root = 4;

  CHECK(icl_shot(ex, task) == "x4 x1 x2 -> r1");
  TaskSpec rare = task;
  rare.verbalizers = VerbalizerChoice::r3r4;
  CHECK(icl_shot(ex, rare) == "x4 x1 x2 -> r3");
  TaskExample neg = ex;
  neg.positive = false;
  CHECK(icl_shot(neg, task) == "x4 x1 x2 -> r2");

  Rng rng(76);
  for (int i = 0; i < 20; ++i) {
    auto shot = cot_shot(ex, task, rng);
    bool a = shot == "x4 x1 x2 -> x3 , x3 x4 -> r1";
    bool b = shot == "x4 x1 x2 -> x3 , x4 x3 -> r1";
    CHECK((a || b));
  }

  CHECK(render_prompt({}, ex.input, task, PromptMode::icl, rng) == "x4 x1 x2 ->");
  auto two = render_prompt({ex, neg}, {7, 8, 6}, task, PromptMode::icl, rng);
  CHECK(two == "x4 x1 x2 -> r1 ; x4 x1 x2 -> r2 ; x7 x8 x6 ->");
}

TEST_CASE("icl prompts are balanced and nested across shot counts") {
  auto kb = standard_kb();
  Rng rng(78);
  auto tasks = make_tasks(kb, 1, VerbalizerChoice::r1r2, false, 1, {}, rng);

  ItemConfig cfg;
  cfg.n_examples = 4;
  cfg.shots_grid = {0, 2, 4};
  cfg.mode = PromptMode::icl;
  cfg.seed = 103;
  auto items = make_eval_items(kb, tasks, cfg);

  std::map<int, std::map<int, const EvalItem*>> by_item;  // item -> shots -> record
  int pos_labels = 0;
  for (const auto& it : items) {
    by_item[it.item_id][it.shots] = &it;
    if (it.shots == 0) pos_labels += it.label == "+" ? 1 : 0;
  }
  CHECK(pos_labels == 2);  // alternating forced labels over 4 items

  for (auto& [id, group] : by_item) {
    const auto* k0 = group.at(0);
    const auto* k2 = group.at(2);
    const auto* k4 = group.at(4);
    CHECK(k0->input == k2->input);
    CHECK(k0->input == k4->input);

    // prefix structure: the 4-shot prompt begins with the 2-shot prompt's shots
    auto head2 = k2->prompt.substr(0, k2->prompt.size() - k0->prompt.size());
    CHECK(k4->prompt.substr(0, head2.size()) == head2);
    CHECK(k4->prompt.substr(k4->prompt.size() - k0->prompt.size()) == k0->prompt);

    // each even prefix of demonstrations is label-balanced
    for (const auto* it : {k2, k4}) {
      auto toks = split_tokens(it->prompt);
      int r1 = 0, r2 = 0;
      for (const auto& t : toks) {
        if (t == "r1") ++r1;
        if (t == "r2") ++r2;
      }
      CHECK(r1 == it->shots / 2);
      CHECK(r2 == it->shots / 2);
    }
  }
}

TEST_CASE("verbalizer choice changes rendering only") {
  auto kb = standard_kb();
  Rng rng(79);
  auto tasks = make_tasks(kb, 1, VerbalizerChoice::r1r2, false, 2, {}, rng);
  auto rare = tasks;
  for (auto& t : rare) t.verbalizers = VerbalizerChoice::r3r4;

  ItemConfig cfg;
  cfg.n_examples = 4;
  cfg.shots_grid = {2};
  cfg.seed = 107;
  auto common = make_eval_items(kb, tasks, cfg);
  auto shifted = make_eval_items(kb, rare, cfg);
  REQUIRE(common.size() == shifted.size());

  for (std::size_t i = 0; i < common.size(); ++i) {
    CHECK(common[i].input == shifted[i].input);
    CHECK(common[i].label == shifted[i].label);
    auto mapped = split_tokens(shifted[i].prompt);
    for (auto& t : mapped) {
      if (t == "r3") t = "r1";
      if (t == "r4") t = "r2";
    }
    CHECK(mapped == split_tokens(common[i].prompt));
  }
}

TEST_CASE("prompt mode changes rendering but not example content") {
  auto kb = standard_kb();
  Rng rng(80);
  auto tasks = make_tasks(kb, 1, VerbalizerChoice::r1r2, false, 1, {}, rng);

  ItemConfig icl;
  icl.n_examples = 5;
  icl.shots_grid = {2};
  icl.seed = 109;
  icl.mode = PromptMode::icl;
  ItemConfig cot = icl;
  cot.mode = PromptMode::cot;

  auto icl_items = make_eval_items(kb, tasks, icl);
  auto cot_items = make_eval_items(kb, tasks, cot);
  REQUIRE(icl_items.size() == cot_items.size());
  for (std::size_t i = 0; i < icl_items.size(); ++i) {
    CHECK(icl_items[i].input == cot_items[i].input);
    CHECK(icl_items[i].label == cot_items[i].label);
    CHECK(icl_items[i].gold == cot_items[i].gold);
    CHECK(cot_items[i].mode == "cot");
    // both prompts end with the bare test input awaiting completion
    std::string tail;
    for (const auto& t : icl_items[i].input) tail += t + " ";
    tail += "->";
    CHECK(icl_items[i].prompt.substr(icl_items[i].prompt.size() - tail.size()) == tail);
    CHECK(cot_items[i].prompt.substr(cot_items[i].prompt.size() - tail.size()) == tail);
    // chain-of-thought shots carry intermediate steps
    CHECK(cot_items[i].prompt.size() > icl_items[i].prompt.size());
    CHECK(cot_items[i].prompt.find(" , ") != std::string::npos);
  }
}

TEST_CASE("export writes deterministic JSONL that loads back unchanged") {
  auto kb = standard_kb();
  Rng rng(81);
  auto tasks = make_tasks(kb, 2, VerbalizerChoice::r1r2, false, 2, {}, rng);

  ItemConfig cfg;
  cfg.n_examples = 3;
  cfg.shots_grid = {0, 2};
  cfg.seed = 113;

  auto dir = fresh_dir("tasks_export");
  auto n = export_tasks(kb, tasks, cfg, dir);
  CHECK(n == 2 * 3 * 2);

  auto loaded = load_items(dir / "items.jsonl");
  auto direct = make_eval_items(kb, tasks, cfg);
  REQUIRE(loaded.size() == direct.size());
  for (std::size_t i = 0; i < loaded.size(); ++i) {
    CHECK(loaded[i].prompt == direct[i].prompt);
    CHECK(loaded[i].gold == direct[i].gold);
    CHECK(loaded[i].input == direct[i].input);
    CHECK(loaded[i].candidates == direct[i].candidates);
    CHECK(loaded[i].shots == direct[i].shots);
  }

  auto tasks_json = nlohmann::json::parse(read_file(dir / "tasks.json"));
  REQUIRE(tasks_json.size() == 2);
  CHECK(tasks_json[0]["class_size"] == 2);
  CHECK(tasks_json[0]["v_plus"].size() == 2);

  auto hash1 = file_hash_hex(dir / "items.jsonl");
  auto dir2 = fresh_dir("tasks_export2");
  export_tasks(kb, tasks, cfg, dir2);
  CHECK(file_hash_hex(dir2 / "items.jsonl") == hash1);

  // round-trip: the prompt's trailing segment is the test input
  for (const auto& item : loaded) {
    auto toks = split_tokens(item.prompt);
    REQUIRE(toks.back() == "->");
    std::vector<std::string> tail(toks.end() - 1 - static_cast<long>(item.input.size()),
                                  toks.end() - 1);
    CHECK(tail == item.input);
  }
}

TEST_CASE("bad item files report their line number") {
  auto dir = fresh_dir("tasks_badjson");
  write_file(dir / "items.jsonl", "{\"task_id\": 0}\n");
  try {
    load_items(dir / "items.jsonl");
    FAIL("expected a format error");
  } catch (const FormatError& e) {
    CHECK(e.line == 1);
  }
}
