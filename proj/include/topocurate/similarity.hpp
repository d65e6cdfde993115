#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "topocurate/corpus.hpp"
#include "topocurate/errors.hpp"

namespace topocurate {

struct SimilarityConfig {
  double delta_tool = 0.95;
  double delta_result = 0.90;
  std::size_t feature_dim = 256;  // hashed-feature dimension when no native embeddings

  void validate() const {
    if (!(delta_tool > 0.0 && delta_tool <= 1.0) || !(delta_result > 0.0 && delta_result <= 1.0))
      throw ConfigError("similarity thresholds must lie in (0, 1]");
    if (feature_dim < 8) throw ConfigError("feature_dim must be >= 8");
  }
};

struct LshConfig {
  std::uint32_t hyperplanes_per_band = 12;
  std::uint32_t num_bands = 16;
  std::uint64_t seed = 0;

  void validate() const {
    if (hyperplanes_per_band == 0 || num_bands == 0)
      throw ConfigError("LSH bands and hyperplanes must be >= 1");
    if (static_cast<std::uint64_t>(hyperplanes_per_band) * num_bands > 4096)
      throw ConfigError("num_bands * hyperplanes_per_band must be <= 4096");
  }
};

inline std::uint64_t fnv1a64(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ull) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Character trigrams hashed into `dim` buckets, L2-normalized. Texts shorter
// than a trigram hash as a whole; the empty string maps to a fixed basis
// vector so every text has a valid nonzero embedding.
inline std::vector<double> featurize(std::string_view text, std::size_t dim) {
  if (dim < 8) throw ConfigError("feature_dim must be >= 8");
  std::vector<double> v(dim, 0.0);
  if (text.empty()) {
    v[0] = 1.0;
    return v;
  }
  if (text.size() < 3) {
    v[fnv1a64(text) % dim] += 1.0;
  } else {
    for (std::size_t i = 0; i + 3 <= text.size(); ++i) v[fnv1a64(text.substr(i, 3)) % dim] += 1.0;
  }
  double n2 = 0.0;
  for (double x : v) n2 += x * x;
  double inv = 1.0 / std::sqrt(n2);
  for (double& x : v) x *= inv;
  return v;
}

inline double cosine(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size())
    throw DimensionError("cosine: dimension mismatch " + std::to_string(u.size()) + " vs " +
                         std::to_string(v.size()));
  // Equal vectors compare as exactly 1 so the predicate stays reflexive even
  // with thresholds at 1.0.
  if (std::equal(u.begin(), u.end(), v.begin())) return 1.0;
  double dot = 0.0, nu = 0.0, nv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += u[i] * v[i];
    nu += u[i] * u[i];
    nv += v[i] * v[i];
  }
  if (nu == 0.0 || nv == 0.0) throw ZeroVectorError("cosine: zero vector");
  double c = dot / (std::sqrt(nu) * std::sqrt(nv));
  return std::clamp(c, -1.0, 1.0);
}

// Both views of one turn in embedding space, native or hashed.
struct TurnEmbedding {
  std::vector<double> tool;
  std::vector<double> result;
};

inline TurnEmbedding embed_turn(const Turn& t, const SimilarityConfig& cfg) {
  TurnEmbedding e;
  e.tool = t.tool_embedding ? *t.tool_embedding : featurize(canonicalize_action(t), cfg.feature_dim);
  e.result = t.result_embedding ? *t.result_embedding : featurize(t.observation, cfg.feature_dim);
  return e;
}

// Conjunction over both views. The result view is only evaluated when the
// tool view already passes, which halves the work on non-matches.
inline bool is_equivalent(const TurnEmbedding& a, const TurnEmbedding& b, const SimilarityConfig& cfg) {
  if (cosine(a.tool, b.tool) < cfg.delta_tool) return false;
  return cosine(a.result, b.result) >= cfg.delta_result;
}

inline bool is_equivalent(const Turn& a, const Turn& b, const SimilarityConfig& cfg) {
  cfg.validate();
  if (a.tool_embedding.has_value() != b.tool_embedding.has_value() ||
      a.result_embedding.has_value() != b.result_embedding.has_value())
    throw DimensionError("is_equivalent: turns mix native and featurized views");
  return is_equivalent(embed_turn(a, cfg), embed_turn(b, cfg), cfg);
}

using IndexPair = std::pair<std::uint32_t, std::uint32_t>;

namespace detail {

// Box-Muller over splitmix-seeded mt19937_64; avoids distribution objects so
// streams are identical across standard libraries.
class Gaussian {
 public:
  explicit Gaussian(std::uint64_t seed) : state_(splitmix64(seed ^ 0x5851f42d4c957f2dull)) {}

  double operator()() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform01(), u2 = uniform01();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

 private:
  double uniform01() {
    // 53-bit mantissa, shifted into (0, 1] so log() stays finite.
    std::uint64_t bits = next();
    return (static_cast<double>(bits >> 11) + 1.0) * 0x1.0p-53;
  }
  std::uint64_t next() {
    state_ = splitmix64(state_);
    return state_;
  }

  std::uint64_t state_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace detail

// Signed-random-projection LSH over the concatenated weighted views. Output
// is the sorted, deduplicated set of index pairs (i < j) that share at least
// one band bucket. Candidates are a superset heuristic: callers must re-check
// pairs with is_equivalent before acting on them.
inline std::vector<IndexPair> lsh_candidates(std::span<const TurnEmbedding> turns,
                                             std::pair<double, double> view_weights,
                                             const LshConfig& cfg) {
  cfg.validate();
  std::vector<IndexPair> out;
  if (turns.size() < 2) return out;
  const std::size_t d_tool = turns[0].tool.size();
  const std::size_t d_result = turns[0].result.size();
  for (const auto& t : turns)
    if (t.tool.size() != d_tool || t.result.size() != d_result)
      throw DimensionError("lsh_candidates: inconsistent embedding dimensions");

  const std::size_t planes = static_cast<std::size_t>(cfg.num_bands) * cfg.hyperplanes_per_band;
  const std::size_t dim = d_tool + d_result;
  std::vector<double> normals(planes * dim);
  detail::Gaussian g(cfg.seed);
  for (double& x : normals) x = g();

  const double w_tool = view_weights.first, w_result = view_weights.second;
  const std::uint32_t h = cfg.hyperplanes_per_band;

  // Bit signature per turn, all bands concatenated, packed into words.
  const std::size_t words = (planes + 63) / 64;
  std::vector<std::uint64_t> sigs(turns.size() * words, 0);
  for (std::size_t i = 0; i < turns.size(); ++i) {
    const auto& e = turns[i];
    for (std::size_t p = 0; p < planes; ++p) {
      const double* row = normals.data() + p * dim;
      double acc = 0.0;
      for (std::size_t k = 0; k < d_tool; ++k) acc += row[k] * e.tool[k];
      acc *= w_tool;
      double acc2 = 0.0;
      for (std::size_t k = 0; k < d_result; ++k) acc2 += row[d_tool + k] * e.result[k];
      acc += w_result * acc2;
      if (acc >= 0.0) sigs[i * words + p / 64] |= 1ull << (p % 64);
    }
  }

  std::unordered_set<std::uint64_t> pairs;
  std::unordered_map<std::uint64_t, std::vector<std::uint32_t>> buckets;
  for (std::uint32_t band = 0; band < cfg.num_bands; ++band) {
    buckets.clear();
    for (std::uint32_t i = 0; i < turns.size(); ++i) {
      // Hash the band's bit slice. A rare hash collision only merges buckets,
      // which adds spurious candidates and never loses one.
      std::uint64_t key = 0x9e3779b97f4a7c15ull ^ band;
      for (std::uint32_t b = 0; b < h; ++b) {
        std::size_t p = static_cast<std::size_t>(band) * h + b;
        std::uint64_t bit = (sigs[i * words + p / 64] >> (p % 64)) & 1ull;
        key = splitmix64(key * 2 + bit);
      }
      buckets[key].push_back(i);
    }
    for (const auto& [key, members] : buckets) {
      if (members.size() < 2) continue;
      for (std::size_t a = 0; a < members.size(); ++a)
        for (std::size_t b = a + 1; b < members.size(); ++b) {
          std::uint32_t lo = std::min(members[a], members[b]);
          std::uint32_t hi = std::max(members[a], members[b]);
          pairs.insert((static_cast<std::uint64_t>(lo) << 32) | hi);
        }
    }
  }

  out.reserve(pairs.size());
  for (std::uint64_t p : pairs)
    out.emplace_back(static_cast<std::uint32_t>(p >> 32), static_cast<std::uint32_t>(p & 0xffffffffu));
  std::sort(out.begin(), out.end());
  return out;
}

inline std::vector<IndexPair> lsh_candidates(std::span<const Turn> turns,
                                             std::pair<double, double> view_weights,
                                             const LshConfig& cfg, const SimilarityConfig& sim) {
  sim.validate();
  std::vector<TurnEmbedding> embs;
  embs.reserve(turns.size());
  for (const auto& t : turns) embs.push_back(embed_turn(t, sim));
  return lsh_candidates(std::span<const TurnEmbedding>(embs), view_weights, cfg);
}

}  // namespace topocurate
