// Document assembly: topic-pair sampling, the per-paragraph derivation loop,
// verbalizer substitution, corpus emission, and corpus statistics.
#pragma once

#include <array>
#include <algorithm>
#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "calcutec/io.hpp"
#include "calcutec/logic.hpp"
#include "calcutec/perturb.hpp"
#include "calcutec/proof.hpp"
#include "calcutec/rng.hpp"

namespace calcutec {

// ---------------------------------------------------------------------------
// Configuration

// How symbols are replaced by verbalizer tokens at render time.
//   frequency: both topic symbols become r_a; the top-2 most frequent
//              remaining symbols become r_b.
//   topic_pair: the first topic symbol becomes r_a, the second r_b; no
//               frequency-based substitution.
enum class SubstitutionVariant { frequency, topic_pair };

struct TopicPair {
  Symbol a = -1;
  Symbol b = -1;  // stored with a < b

  bool operator==(const TopicPair&) const = default;
  auto operator<=>(const TopicPair&) const = default;
};

inline TopicPair make_topic_pair(Symbol x, Symbol y) {
  if (x == y) throw ConfigError("topic pair symbols must be distinct");
  return TopicPair{std::min(x, y), std::max(x, y)};
}

struct CorpusConfig {
  int n_docs = 60000;
  int n_paragraphs = 16;
  double p_skip = 0.25;  // sets both the merge and the drop probability
  int d_min = 4;
  std::uint64_t seed = 0;
  std::vector<TopicPair> allowed_topic_pairs;  // empty: all distinct pairs
  int validation_docs = 10000;
  SubstitutionVariant variant = SubstitutionVariant::frequency;
  int paragraph_attempts = 100;
  int document_attempts = 64;
  PremiseSampleConfig premise;
  TreeSampleConfig tree;
};

inline void validate_corpus_config(const KnowledgeBase& kb, const CorpusConfig& c) {
  if (c.n_docs < 0) throw ConfigError("n_docs must be nonnegative");
  if (c.n_paragraphs < 1) throw ConfigError("n_paragraphs must be at least 1");
  if (c.p_skip < 0.0 || c.p_skip > 1.0) throw ConfigError("p_skip must lie in [0, 1]");
  if (c.d_min < 0) throw ConfigError("d_min must be nonnegative");
  if (c.validation_docs < 0 || c.validation_docs > c.n_docs)
    throw ConfigError("validation split must fit inside n_docs");
  if (c.paragraph_attempts < 1 || c.document_attempts < 1)
    throw ConfigError("attempt budgets must be positive");
  for (const auto& p : c.allowed_topic_pairs) {
    kb.check_symbol(p.a);
    kb.check_symbol(p.b);
    if (p.a == p.b) throw ConfigError("topic pair symbols must be distinct");
  }
}

// ---------------------------------------------------------------------------
// Documents

struct Paragraph {
  Symbol topic = -1;
  std::vector<Symbol> premise;
  Symbol goal = -1;
  StepSequence clean_steps;  // before merge/drop perturbation
  StepSequence steps;        // as rendered
};

struct Document {
  std::array<Symbol, 2> topic{-1, -1};      // orientation as drawn
  int r_a = 0, r_b = 0;                     // verbalizer ids in 1..4
  std::array<Symbol, 2> frequent{-1, -1};   // frequency variant only
  SubstitutionVariant variant = SubstitutionVariant::frequency;
  std::vector<Paragraph> paragraphs;
  int resample_count = 0;  // document-level restarts before success
};

// A distinct verbalizer pair whose two positions each carry marginal
// probabilities 0.45/0.45/0.05/0.05 over r1..r4. Mixture: mass 0.85 on
// {r1,r2}, 0.05 on {r3,r4}, 0.10 spread over the four mixed pairs, position
// order uniform — the marginals come out exact.
inline std::pair<int, int> draw_verbalizer_pair(Rng& rng) {
  double u = rng.next_unit();
  int a, b;
  if (u < 0.85) {
    a = 1;
    b = 2;
  } else if (u < 0.90) {
    a = 3;
    b = 4;
  } else {
    std::uint64_t m = rng.next_below(4);
    a = (m & 1) ? 1 : 2;
    b = (m & 2) ? 3 : 4;
  }
  if (rng.bernoulli(0.5)) std::swap(a, b);
  return {a, b};
}

// One paragraph attempt: topic choice, premise growth, the closure-size
// rejection, goal selection, tree sampling, flattening, first-step rewrite,
// perturbation. nullopt signals a rejected attempt the caller retries.
inline std::optional<Paragraph> try_sample_paragraph(const KnowledgeBase& kb,
                                                     const std::array<Symbol, 2>& topics,
                                                     const CorpusConfig& config, Rng& rng) {
  Symbol s = topics[rng.next_below(2)];
  auto premise = sample_premise_for(kb, s, rng, config.premise);
  auto extra = find_extra_premise(kb, premise, rng);
  if (!extra) return std::nullopt;
  premise.push_back(*extra);
  std::sort(premise.begin(), premise.end());
  if (saturate(kb, premise).size() > kb.n_symbols() / 2) return std::nullopt;
  auto obligation = sample_goal(kb, premise, s, config.d_min, rng);
  if (!obligation) return std::nullopt;

  auto tree = build_proof_tree(kb, *obligation, rng, config.tree);
  auto steps = flatten(tree, rng);
  rewrite_first_step(steps, premise, rng);

  Paragraph par;
  par.topic = s;
  par.premise = std::move(premise);
  par.goal = obligation->goal;
  par.clean_steps = steps;
  par.steps = perturb(steps, PerturbConfig{config.p_skip, config.p_skip}, rng);
  return par;
}

// Whole-document generation: verbalizers drawn once, then topic pair and all
// paragraphs, restarting the document (with a fresh topic pair) whenever a
// paragraph exhausts its attempt budget or the frequency substitution cannot
// find two distinct non-topic symbols.
inline Document generate_document(const KnowledgeBase& kb, const CorpusConfig& config,
                                  std::uint64_t doc_seed) {
  Rng rng(doc_seed);
  Document doc;
  doc.variant = config.variant;
  std::tie(doc.r_a, doc.r_b) = draw_verbalizer_pair(rng);

  const int n = kb.n_symbols();
  for (int attempt = 0; attempt < config.document_attempts; ++attempt) {
    doc.resample_count = attempt;

    if (config.allowed_topic_pairs.empty()) {
      Symbol x = static_cast<Symbol>(rng.next_below(static_cast<std::uint64_t>(n)));
      Symbol y = static_cast<Symbol>(rng.next_below(static_cast<std::uint64_t>(n - 1)));
      if (y >= x) ++y;
      doc.topic = {x, y};
    } else {
      const auto& p = config.allowed_topic_pairs[rng.next_below(config.allowed_topic_pairs.size())];
      doc.topic = rng.bernoulli(0.5) ? std::array<Symbol, 2>{p.a, p.b}
                                     : std::array<Symbol, 2>{p.b, p.a};
    }

    doc.paragraphs.clear();
    bool ok = true;
    for (int p = 0; p < config.n_paragraphs && ok; ++p) {
      bool got = false;
      for (int t = 0; t < config.paragraph_attempts && !got; ++t) {
        auto par = try_sample_paragraph(kb, doc.topic, config, rng);
        if (par) {
          doc.paragraphs.push_back(std::move(*par));
          got = true;
        }
      }
      ok = got;
    }
    if (!ok) continue;

    if (config.variant == SubstitutionVariant::frequency) {
      std::map<Symbol, int> counts;
      for (const auto& par : doc.paragraphs)
        for (const auto& step : par.steps) {
          for (Symbol a : step.antecedents)
            if (a != doc.topic[0] && a != doc.topic[1]) ++counts[a];
          if (step.consequent != doc.topic[0] && step.consequent != doc.topic[1])
            ++counts[step.consequent];
        }
      if (counts.size() < 2) continue;  // substitution infeasible: restart
      std::vector<std::pair<Symbol, int>> ranked(counts.begin(), counts.end());
      std::sort(ranked.begin(), ranked.end(), [](const auto& l, const auto& r) {
        if (l.second != r.second) return l.second > r.second;
        return l.first < r.first;
      });
      doc.frequent = {ranked[0].first, ranked[1].first};
    } else {
      doc.frequent = {-1, -1};
    }
    return doc;
  }
  throw SamplingError("document resampling budget exhausted after " +
                      std::to_string(config.document_attempts) + " attempts");
}

// ---------------------------------------------------------------------------
// Rendering

// A rendered token: either a plain symbol "x<id>" or a verbalizer "r<id>".
struct Token {
  bool verbalizer = false;
  int id = 0;

  std::string text() const {
    return (verbalizer ? "r" : "x") + std::to_string(id);
  }
  bool operator==(const Token&) const = default;
};

inline Token substituted_token(const Document& doc, Symbol s) {
  if (doc.variant == SubstitutionVariant::frequency) {
    if (s == doc.topic[0] || s == doc.topic[1]) return Token{true, doc.r_a};
    if (s == doc.frequent[0] || s == doc.frequent[1]) return Token{true, doc.r_b};
  } else {
    if (s == doc.topic[0]) return Token{true, doc.r_a};
    if (s == doc.topic[1]) return Token{true, doc.r_b};
  }
  return Token{false, s};
}

struct ParsedStep {
  std::vector<Token> antecedents;
  Token consequent;

  bool operator==(const ParsedStep&) const = default;
};
using ParsedParagraph = std::vector<ParsedStep>;

struct ParsedDocument {
  std::vector<ParsedParagraph> paragraphs;

  bool operator==(const ParsedDocument&) const = default;
};

// The document's token structure after substitution; `clean` selects the
// pre-perturbation step sequences.
inline ParsedDocument substitute_document(const Document& doc, bool clean = false) {
  ParsedDocument out;
  out.paragraphs.reserve(doc.paragraphs.size());
  for (const auto& par : doc.paragraphs) {
    ParsedParagraph pp;
    const StepSequence& seq = clean ? par.clean_steps : par.steps;
    pp.reserve(seq.size());
    for (const auto& step : seq) {
      ParsedStep ps;
      ps.antecedents.reserve(step.antecedents.size());
      for (Symbol a : step.antecedents) ps.antecedents.push_back(substituted_token(doc, a));
      ps.consequent = substituted_token(doc, step.consequent);
      pp.push_back(std::move(ps));
    }
    out.paragraphs.push_back(std::move(pp));
  }
  return out;
}

// One document per line: steps "a1 a2 -> b" joined by " , ", paragraphs
// joined by " ; ", line terminated by " .".
inline std::string render_parsed(const ParsedDocument& doc) {
  std::string out;
  for (std::size_t p = 0; p < doc.paragraphs.size(); ++p) {
    if (p > 0) out += " ; ";
    const auto& pp = doc.paragraphs[p];
    for (std::size_t i = 0; i < pp.size(); ++i) {
      if (i > 0) out += " , ";
      for (const auto& t : pp[i].antecedents) {
        out += t.text();
        out += ' ';
      }
      out += "-> ";
      out += pp[i].consequent.text();
    }
  }
  out += " .";
  return out;
}

inline std::string render_document(const Document& doc) {
  return render_parsed(substitute_document(doc));
}

// ---------------------------------------------------------------------------
// Parsing

namespace detail {

inline Token parse_corpus_token(const std::string& text, int line, int col) {
  if (text.size() >= 2 && (text[0] == 'x' || text[0] == 'r')) {
    bool digits = true;
    for (std::size_t i = 1; i < text.size(); ++i)
      if (text[i] < '0' || text[i] > '9') {
        digits = false;
        break;
      }
    if (digits && !(text.size() > 2 && text[1] == '0')) {
      int id = 0;
      for (std::size_t i = 1; i < text.size(); ++i) id = id * 10 + (text[i] - '0');
      if (text[0] == 'r') {
        if (id < 1 || id > 4) throw FormatError("verbalizer id out of range: " + text, line, col);
        return Token{true, id};
      }
      return Token{false, id};
    }
  }
  throw FormatError("unrecognized token '" + text + "'", line, col);
}

}  // namespace detail

// Parses one rendered document line. `line_no` is used for error reporting;
// columns are 1-based character positions.
inline ParsedDocument parse_document(const std::string& text, int line_no = 1) {
  struct Tok {
    std::string text;
    int col;
  };
  std::vector<Tok> toks;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && text[i] == ' ') ++i;
    std::size_t j = i;
    while (j < text.size() && text[j] != ' ') ++j;
    if (j > i) toks.push_back({text.substr(i, j - i), static_cast<int>(i) + 1});
    i = j;
  }
  if (toks.empty()) throw FormatError("empty document", line_no, 1);

  ParsedDocument doc;
  ParsedParagraph paragraph;
  ParsedStep step;
  bool saw_arrow = false;
  bool have_consequent = false;
  bool ended = false;
  std::size_t k = 0;
  auto finish_step = [&](int col) {
    if (!saw_arrow) throw FormatError("step is missing '->'", line_no, col);
    if (!have_consequent) throw FormatError("step is missing its consequent", line_no, col);
    paragraph.push_back(std::move(step));
    step = ParsedStep{};
    saw_arrow = false;
    have_consequent = false;
  };
  for (; k < toks.size(); ++k) {
    const auto& t = toks[k];
    if (ended) throw FormatError("content after end-of-document marker", line_no, t.col);
    if (t.text == "->") {
      if (saw_arrow) throw FormatError("duplicate '->' in step", line_no, t.col);
      saw_arrow = true;
    } else if (t.text == ",") {
      finish_step(t.col);
    } else if (t.text == ";") {
      finish_step(t.col);
      doc.paragraphs.push_back(std::move(paragraph));
      paragraph = ParsedParagraph{};
    } else if (t.text == ".") {
      finish_step(t.col);
      doc.paragraphs.push_back(std::move(paragraph));
      paragraph = ParsedParagraph{};
      ended = true;
    } else {
      Token tok = detail::parse_corpus_token(t.text, line_no, t.col);
      if (!saw_arrow) {
        step.antecedents.push_back(tok);
      } else {
        if (have_consequent)
          throw FormatError("step has more than one consequent", line_no, t.col);
        step.consequent = tok;
        have_consequent = true;
      }
    }
  }
  if (!ended)
    throw FormatError("document does not end with '.'", line_no,
                      toks.empty() ? 1 : toks.back().col);
  return doc;
}

inline std::vector<ParsedDocument> parse_corpus(const std::vector<std::string>& lines) {
  std::vector<ParsedDocument> docs;
  docs.reserve(lines.size());
  for (std::size_t i = 0; i < lines.size(); ++i)
    docs.push_back(parse_document(lines[i], static_cast<int>(i) + 1));
  return docs;
}

// ---------------------------------------------------------------------------
// Statistics

struct Histogram {
  std::map<int, std::int64_t> counts;

  void add(int v) { ++counts[v]; }
  std::int64_t total() const {
    std::int64_t t = 0;
    for (const auto& [k, c] : counts) t += c;
    return t;
  }
  double mean() const {
    std::int64_t t = 0, n = 0;
    for (const auto& [k, c] : counts) {
      t += static_cast<std::int64_t>(k) * c;
      n += c;
    }
    return n ? static_cast<double>(t) / static_cast<double>(n) : 0.0;
  }
  int min() const { return counts.empty() ? 0 : counts.begin()->first; }
  int max() const { return counts.empty() ? 0 : counts.rbegin()->first; }
};

struct StatsReport {
  std::int64_t n_documents = 0;
  std::int64_t n_paragraphs = 0;
  std::int64_t n_steps = 0;
  Histogram doc_tokens;             // whitespace tokens per rendered line
  Histogram paragraph_tokens;       // tokens per paragraph, delimiters excluded
  Histogram steps_per_paragraph;
  Histogram first_verbalizer_step;  // index of first step concluding r<k>; -1 if none
};

inline StatsReport corpus_stats(std::span<const ParsedDocument> docs) {
  StatsReport r;
  for (const auto& doc : docs) {
    ++r.n_documents;
    int doc_tok = 1;  // the terminal "."
    for (std::size_t p = 0; p < doc.paragraphs.size(); ++p) {
      const auto& pp = doc.paragraphs[p];
      ++r.n_paragraphs;
      if (p > 0) ++doc_tok;  // ";" between paragraphs
      int par_tok = 0;
      int first_verbalizer = -1;
      for (std::size_t s = 0; s < pp.size(); ++s) {
        ++r.n_steps;
        if (s > 0) ++doc_tok;  // "," between steps
        int step_tok = static_cast<int>(pp[s].antecedents.size()) + 2;  // "->" and consequent
        par_tok += step_tok;
        doc_tok += step_tok;
        if (first_verbalizer < 0 && pp[s].consequent.verbalizer)
          first_verbalizer = static_cast<int>(s);
      }
      r.paragraph_tokens.add(par_tok);
      r.steps_per_paragraph.add(static_cast<int>(pp.size()));
      r.first_verbalizer_step.add(first_verbalizer);
    }
    r.doc_tokens.add(doc_tok);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Corpus emission

struct CorpusResult {
  int train_docs = 0;
  int validation_docs = 0;
  std::int64_t total_resamples = 0;
  std::string train_path;
  std::string validation_path;
  std::string train_hash;
  std::string validation_hash;
};

// Renders documents in blocks: workers fill block slots by stride, the writer
// appends slots in index order, so bytes are identical for any worker count.
inline CorpusResult generate_corpus(const KnowledgeBase& kb, const CorpusConfig& config,
                                    const std::filesystem::path& out_dir, int workers = 1) {
  validate_corpus_config(kb, config);
  if (workers < 1) throw ConfigError("worker count must be positive");

  CorpusResult result;
  result.train_docs = config.n_docs - config.validation_docs;
  result.validation_docs = config.validation_docs;
  auto train_path = out_dir / "train.txt";
  auto validation_path = out_dir / "validation.txt";
  result.train_path = train_path.string();
  result.validation_path = validation_path.string();

  auto train_out = open_output(train_path);
  auto validation_out = open_output(validation_path);

  const int block = 256;
  std::vector<std::string> rendered(static_cast<std::size_t>(block));
  std::vector<int> resamples(static_cast<std::size_t>(block));
  for (int start = 0; start < config.n_docs; start += block) {
    const int count = std::min(block, config.n_docs - start);
    const int w = std::min(workers, count);
    std::vector<std::thread> pool;
    std::exception_ptr first_error;
    std::mutex error_mu;
    for (int t = 0; t < w; ++t)
      pool.emplace_back([&, t]() {
        try {
          for (int i = t; i < count; i += w) {
            auto doc = generate_document(
                kb, config, derive_seed(config.seed, {kDocStream, static_cast<std::uint64_t>(start + i)}));
            rendered[static_cast<std::size_t>(i)] = render_document(doc);
            resamples[static_cast<std::size_t>(i)] = doc.resample_count;
          }
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mu);
          if (!first_error) first_error = std::current_exception();
        }
      });
    for (auto& th : pool) th.join();
    if (first_error) std::rethrow_exception(first_error);

    for (int i = 0; i < count; ++i) {
      auto& out = (start + i < result.train_docs) ? train_out : validation_out;
      out << rendered[static_cast<std::size_t>(i)] << '\n';
      result.total_resamples += resamples[static_cast<std::size_t>(i)];
    }
  }
  train_out.close();
  validation_out.close();
  if (!train_out || !validation_out)
    throw IoError("write failed under " + out_dir.string());

  result.train_hash = file_hash_hex(train_path);
  result.validation_hash = file_hash_hex(validation_path);
  return result;
}

}  // namespace calcutec
