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

enum class DivVariant { unique_chain, literal_pass_ratio };

struct RlConfig {
  double eps_fail = 0.2;
  double alpha = 1.0;        // weight of diversity against structure
  double temperature = 1.0;  // softmax temperature for task selection
  std::pair<double, double> band{0.1, 0.7};  // pass-rate band for candidate tasks
  DivVariant div_variant = DivVariant::unique_chain;

  void validate() const {
    if (!(eps_fail > 0.0 && eps_fail < 1.0)) throw ConfigError("eps_fail must lie in (0, 1)");
    if (alpha < 0.0) throw ConfigError("alpha must be >= 0");
    if (!(temperature > 0.0)) throw ConfigError("temperature must be > 0");
    if (!(band.first >= 0.0 && band.first <= band.second && band.second <= 1.0))
      throw ConfigError("band must satisfy 0 <= min <= max <= 1");
  }
};

// Average share of low-potential children across the graph's branching
// nodes (out-degree >= 2, self-loops ignored). High values mean the task's
// decision points are littered with ways to fail.
inline double error_branch_ratio(const QuotientGraph& g, double eps_fail) {
  auto kids = g.children();
  double sum = 0.0;
  std::size_t branching = 0;
  for (std::size_t v = 0; v < kids.size(); ++v) {
    if (kids[v].size() < 2) continue;
    ++branching;
    std::size_t failing = 0;
    for (NodeId c : kids[v])
      if (g.phi[c] < eps_fail) ++failing;
    sum += static_cast<double>(failing) / static_cast<double>(kids[v].size());
  }
  return branching == 0 ? 0.0 : sum / static_cast<double>(branching);
}

// Collapses consecutive repeats so "a a b" and "a b" count as one strategy.
inline std::vector<NodeId> chain_signature(const TrajectoryPath& path) {
  std::vector<NodeId> sig;
  for (NodeId v : path.nodes)
    if (sig.empty() || sig.back() != v) sig.push_back(v);
  return sig;
}

// Distinct successful route shapes per sampled trajectory. The literal
// variant is plain success share, kept for comparison runs.
inline double strategic_heterogeneity(const QuotientGraph& g, DivVariant variant = DivVariant::unique_chain) {
  if (g.paths.empty()) throw EmptyTaskError("graph for task '" + g.task_id + "' has no paths");
  std::size_t wins = 0;
  std::set<std::vector<NodeId>> chains;
  for (const auto& p : g.paths) {
    if (p.reward != 1) continue;
    ++wins;
    chains.insert(chain_signature(p));
  }
  double num = variant == DivVariant::unique_chain ? static_cast<double>(chains.size())
                                                   : static_cast<double>(wins);
  return num / static_cast<double>(g.paths.size());
}

struct RlTaskScore {
  std::string task_id;
  double pass_rate = 0.0;
  double v_struct = 0.0;
  double v_div = 0.0;
  double composite = 0.0;  // v_struct + alpha * v_div
  double p_select = 0.0;   // filled by select_distribution over the candidate pool
};

inline RlTaskScore score_task_rl(const QuotientGraph& g, const RlConfig& cfg = {}) {
  cfg.validate();
  if (g.paths.empty()) throw EmptyTaskError("graph for task '" + g.task_id + "' has no paths");
  RlTaskScore s;
  s.task_id = g.task_id;
  std::size_t wins = 0;
  for (const auto& p : g.paths) wins += p.reward == 1 ? 1 : 0;
  s.pass_rate = static_cast<double>(wins) / static_cast<double>(g.paths.size());
  s.v_struct = error_branch_ratio(g, cfg.eps_fail);
  s.v_div = strategic_heterogeneity(g, cfg.div_variant);
  s.composite = s.v_struct + cfg.alpha * s.v_div;
  return s;
}

// Boltzmann distribution over the given tasks. Max-subtraction keeps exp in
// range and leaves the result invariant under a constant shift of scores.
inline std::map<std::string, double> select_distribution(std::span<const RlTaskScore> scores,
                                                         const RlConfig& cfg = {}) {
  cfg.validate();
  std::map<std::string, double> out;
  if (scores.empty()) return out;
  double mx = scores[0].composite;
  for (const auto& s : scores) mx = std::max(mx, s.composite);
  double total = 0.0;
  std::vector<double> e(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    e[i] = std::exp((scores[i].composite - mx) / cfg.temperature);
    total += e[i];
  }
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!out.emplace(scores[i].task_id, e[i] / total).second)
      throw DuplicateIdError("duplicate task '" + scores[i].task_id + "' in selection pool");
  }
  return out;
}

}  // namespace topocurate
