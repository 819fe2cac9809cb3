#pragma once

// Deterministic random draws. std::mt19937_64 is fully specified by the
// standard, but the <random> distributions are not, so every draw that must
// reproduce byte-identically across platforms is implemented here directly.

#include <cstdint>
#include <initializer_list>
#include <random>
#include <stdexcept>
#include <vector>

namespace calcutec {

// splitmix64; used to mix seed-path components into substream seeds.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Derives the seed of a substream from a base seed and a path of counters,
// e.g. derive_seed(run_seed, {kDocStream, doc_index}). Hierarchical: a
// document's draws never depend on how many draws its neighbors made.
inline std::uint64_t derive_seed(std::uint64_t base,
                                 std::initializer_list<std::uint64_t> path) {
  std::uint64_t h = mix64(base);
  for (std::uint64_t p : path) h = mix64(h ^ mix64(p));
  return h;
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform integer in [0, bound). Rejection sampling, no modulo bias.
  std::uint64_t next_below(std::uint64_t bound) {
    if (bound == 0) throw std::invalid_argument("next_below: zero bound");
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    std::uint64_t v;
    do {
      v = engine_();
    } while (v >= limit);
    return v % bound;
  }

  int next_int(int lo, int hi) {  // inclusive range
    if (lo > hi) throw std::invalid_argument("next_int: empty range");
    return lo + static_cast<int>(next_below(
                    static_cast<std::uint64_t>(hi - lo) + 1));
  }

  // Uniform in [0, 1) with 53-bit resolution.
  double next_unit() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  bool bernoulli(double p) { return next_unit() < p; }

  // Fisher-Yates; std::shuffle leaves the algorithm unspecified.
  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(next_below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  template <class T>
  const T& choice(const std::vector<T>& v) {
    if (v.empty()) throw std::invalid_argument("choice: empty vector");
    return v[static_cast<std::size_t>(next_below(v.size()))];
  }

  // k distinct indices from [0, n), order randomized.
  std::vector<int> sample_indices(int n, int k) {
    if (k > n) throw std::invalid_argument("sample_indices: k > n");
    std::vector<int> idx(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
    for (int i = 0; i < k; ++i) {
      int j = i + static_cast<int>(next_below(static_cast<std::uint64_t>(n - i)));
      std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
    }
    idx.resize(static_cast<std::size_t>(k));
    return idx;
  }

 private:
  std::mt19937_64 engine_;
};

// Fixed stream tags for seed derivation paths.
enum StreamTag : std::uint64_t {
  kKbStream = 1,
  kDocStream = 2,
  kTaskStream = 3,
  kExampleStream = 4,
  kArithStream = 5,
  kModelStream = 6,
  kPromptStream = 7,
};

}  // namespace calcutec
