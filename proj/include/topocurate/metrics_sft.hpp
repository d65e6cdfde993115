#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "topocurate/errors.hpp"
#include "topocurate/topology.hpp"

namespace topocurate {

enum class SrareDenominator { distinct_nodes, turns };

struct SftConfig {
  double eps_dip = 0.2;
  SrareDenominator srare_denominator = SrareDenominator::distinct_nodes;

  void validate() const {
    if (!(eps_dip >= 0.0 && eps_dip < 1.0)) throw ConfigError("eps_dip must lie in [0, 1)");
  }
};

struct SftWeights {
  double lambda_eff = 0.4;
  double lambda_rare = 0.3;
  double lambda_ref = 0.3;

  void validate() const {
    if (lambda_eff < 0.0 || lambda_rare < 0.0 || lambda_ref < 0.0)
      throw ConfigError("metric weights must be non-negative");
    if (lambda_eff + lambda_rare + lambda_ref <= 0.0)
      throw ConfigError("at least one metric weight must be positive");
  }
};

// Sum of recovery slopes over the success-potential sequence of a path.
// A dip is a drop of more than eps below the previous value; it recovers at
// the first later step that reaches the pre-dip level again, contributing
// (rebound height) / (steps taken). Unrecovered dips contribute nothing.
inline double reflective_recovery(std::span<const double> phi_seq, double eps_dip) {
  double total = 0.0;
  std::size_t t = 1;
  while (t < phi_seq.size()) {
    if (phi_seq[t] < phi_seq[t - 1] - eps_dip) {
      const double level = phi_seq[t - 1];
      bool recovered = false;
      for (std::size_t k = 1; t + k < phi_seq.size(); ++k) {
        if (phi_seq[t + k] >= level) {
          total += (phi_seq[t + k] - phi_seq[t]) / static_cast<double>(k);
          t += k + 1;
          recovered = true;
          break;
        }
      }
      if (!recovered) ++t;
    } else {
      ++t;
    }
  }
  return total;
}

inline std::vector<double> phi_sequence(const QuotientGraph& g, const TrajectoryPath& path) {
  std::vector<double> seq;
  seq.reserve(path.nodes.size());
  for (NodeId v : path.nodes) {
    if (v >= g.node_count()) throw ValidationError("path visits a node outside the graph");
    seq.push_back(g.phi[v]);
  }
  return seq;
}

inline double reflective_recovery(const QuotientGraph& g, const TrajectoryPath& path, double eps_dip) {
  auto seq = phi_sequence(g, path);
  return reflective_recovery(std::span<const double>(seq), eps_dip);
}

// Worst detour factor of the path: over every ordered pair of distinct nodes
// (first occurrences, root included), geodesic hops divided by hops actually
// walked. 1 means every segment is a shortest path; revisits drag it down.
inline double semantic_efficiency(const QuotientGraph& g, const TrajectoryPath& path) {
  std::vector<NodeId> order;       // distinct nodes by first occurrence
  std::vector<std::size_t> first;  // their positions in the walk
  std::map<NodeId, bool> seen;
  for (std::size_t i = 0; i < path.nodes.size(); ++i) {
    NodeId v = path.nodes[i];
    if (v >= g.node_count()) throw ValidationError("path visits a node outside the graph");
    if (seen.emplace(v, true).second) {
      order.push_back(v);
      first.push_back(i);
    }
  }
  if (order.size() < 2) return 1.0;

  double best = 1.0;
  for (std::size_t i = 0; i + 1 < order.size(); ++i) {
    auto dist = bfs_hops(g, order[i]);
    for (std::size_t j = i + 1; j < order.size(); ++j) {
      std::uint32_t d = dist[order[j]];
      if (d == kUnreachable)
        throw ValidationError("path for '" + path.traj_id + "' does not follow graph edges");
      double len = static_cast<double>(first[j] - first[i]);
      double ratio = static_cast<double>(d) / len;
      if (ratio < best) best = ratio;
    }
  }
  return best;
}

// Mean accuracy-over-log-popularity across the path's distinct non-root
// nodes. Visiting nodes that few trajectories reach (small popularity) while
// keeping success potential high pushes the score up.
inline double distributional_diversity(const QuotientGraph& g, const TrajectoryPath& path,
                                       SrareDenominator denom = SrareDenominator::distinct_nodes) {
  std::set<NodeId> distinct;
  for (NodeId v : path.nodes)
    if (v != kRootNode) distinct.insert(v);
  if (distinct.empty()) return 0.0;
  double sum = 0.0;
  for (NodeId v : distinct) sum += g.phi[v] / std::log(1.0 + popularity(g, v));
  double d = denom == SrareDenominator::distinct_nodes ? static_cast<double>(distinct.size())
                                                       : static_cast<double>(path.nodes.size() - 1);
  return sum / d;
}

// Population z-scores. A (near-)constant input comes back as all zeros so a
// degenerate metric drops out of the composite instead of poisoning it.
inline std::vector<double> zscore(std::span<const double> xs) {
  std::vector<double> out(xs.size(), 0.0);
  if (xs.empty()) return out;
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  var /= static_cast<double>(xs.size());
  double sd = std::sqrt(var);
  if (sd < 1e-12) return out;
  for (std::size_t i = 0; i < xs.size(); ++i) out[i] = (xs[i] - mean) / sd;
  return out;
}

struct RawSftRow {
  std::string task_id;
  std::string traj_id;
  int reward = 0;
  double s_ref = 0.0;
  double s_eff = 0.0;
  double s_rare = 0.0;
};

inline std::vector<RawSftRow> score_task_sft(const QuotientGraph& g, const SftConfig& cfg = {}) {
  cfg.validate();
  std::vector<RawSftRow> rows;
  rows.reserve(g.paths.size());
  for (const auto& p : g.paths) {
    RawSftRow r;
    r.task_id = g.task_id;
    r.traj_id = p.traj_id;
    r.reward = p.reward;
    r.s_ref = reflective_recovery(g, p, cfg.eps_dip);
    r.s_eff = semantic_efficiency(g, p);
    r.s_rare = distributional_diversity(g, p, cfg.srare_denominator);
    rows.push_back(std::move(r));
  }
  return rows;
}

struct SftScore {
  std::string task_id;
  std::string traj_id;
  int reward = 0;
  double s_ref = 0.0, s_eff = 0.0, s_rare = 0.0;
  double z_ref = 0.0, z_eff = 0.0, z_rare = 0.0;
  double w = 0.0;
  double sampling_weight = 0.0;  // exp(w) for successes, 0 for failures
};

// Normalizes each metric across the whole pool (all tasks together), blends
// them, and exponentiates into sampling weights gated on success.
inline std::vector<SftScore> composite_and_sampling(std::span<const RawSftRow> rows,
                                                    const SftWeights& weights = {}) {
  weights.validate();
  std::vector<double> ref(rows.size()), eff(rows.size()), rare(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    ref[i] = rows[i].s_ref;
    eff[i] = rows[i].s_eff;
    rare[i] = rows[i].s_rare;
  }
  auto z_ref = zscore(ref), z_eff = zscore(eff), z_rare = zscore(rare);

  std::vector<SftScore> out(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    SftScore& s = out[i];
    s.task_id = rows[i].task_id;
    s.traj_id = rows[i].traj_id;
    s.reward = rows[i].reward;
    s.s_ref = rows[i].s_ref;
    s.s_eff = rows[i].s_eff;
    s.s_rare = rows[i].s_rare;
    s.z_ref = z_ref[i];
    s.z_eff = z_eff[i];
    s.z_rare = z_rare[i];
    s.w = weights.lambda_eff * s.z_eff + weights.lambda_rare * s.z_rare + weights.lambda_ref * s.z_ref;
    s.sampling_weight = s.reward == 1 ? std::exp(s.w) : 0.0;
  }
  return out;
}

}  // namespace topocurate
