#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "topocurate/errors.hpp"
#include "topocurate/metrics_rl.hpp"
#include "topocurate/metrics_sft.hpp"
#include "topocurate/similarity.hpp"

namespace topocurate {

enum class SelectStrategy { top_weight, seeded_sample };

struct SelectionConfig {
  std::uint64_t budget = 1;
  std::optional<std::uint32_t> per_task_cap;
  SelectStrategy strategy = SelectStrategy::top_weight;
  std::uint64_t seed = 0;
  std::pair<double, double> sft_band{0.7, 1.0};  // keep tasks whose pass rate falls inside
  std::pair<double, double> rl_band{0.1, 0.7};
  bool strict = true;  // throw instead of truncating when the pool is short

  void validate() const {
    if (budget == 0) throw ConfigError("budget must be >= 1");
    if (per_task_cap && *per_task_cap == 0) throw ConfigError("per_task_cap must be >= 1");
    auto check = [](std::pair<double, double> b, const char* name) {
      if (!(b.first >= 0.0 && b.first <= b.second && b.second <= 1.0))
        throw ConfigError(std::string(name) + " band must satisfy 0 <= min <= max <= 1");
    };
    check(sft_band, "sft");
    check(rl_band, "rl");
  }
};

struct SelectedTrajectory {
  std::string task_id;
  std::string traj_id;
  double sampling_weight = 0.0;
};

struct ExclusionRecord {
  std::string task_id;
  std::string traj_id;  // empty for task-level exclusions
  std::string reason;
};

struct SftSelection {
  std::vector<SelectedTrajectory> selected;
  std::vector<ExclusionRecord> excluded;
  bool truncated = false;  // pool ran short and strict mode was off
};

struct RlSelection {
  std::vector<std::string> selected;
  std::map<std::string, double> probabilities;  // renormalized over the band survivors
  std::vector<ExclusionRecord> excluded;
  bool truncated = false;
};

namespace detail {

// Exponential race key, derived from ids rather than a sequential RNG so the
// draw does not depend on input order. Strictly positive.
inline double race_numerator(std::uint64_t seed, const std::string& task_id, const std::string& traj_id) {
  std::uint64_t h = fnv1a64(traj_id, fnv1a64("\x1f", fnv1a64(task_id)));
  std::uint64_t bits = splitmix64(seed ^ h);
  double u = static_cast<double>((bits >> 11) | 1ull) * 0x1.0p-53;  // (0, 1)
  return -std::log(u);
}

// Orders a weighted race as x_i / w_i without the division; cross
// multiplication keeps the comparison stable under rescaling of all weights.
struct RaceEntry {
  double x = 0.0;
  double w = 0.0;
  std::size_t index = 0;
};

}  // namespace detail

// Final SFT pick. Rows must already carry sampling weights; failures and
// trajectories of tasks outside the pass-rate band never enter the pool.
inline SftSelection select_trajectories(std::span<const SftScore> scores, const SelectionConfig& cfg) {
  cfg.validate();
  SftSelection result;

  std::map<std::string, std::pair<std::size_t, std::size_t>> task_counts;  // wins, total
  for (const auto& s : scores) {
    auto& [wins, total] = task_counts[s.task_id];
    wins += s.reward == 1 ? 1 : 0;
    ++total;
  }
  auto task_pass_rate = [&](const std::string& id) {
    const auto& [wins, total] = task_counts.at(id);
    return static_cast<double>(wins) / static_cast<double>(total);
  };

  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const auto& s = scores[i];
    double pr = task_pass_rate(s.task_id);
    if (pr < cfg.sft_band.first || pr > cfg.sft_band.second) {
      result.excluded.push_back({s.task_id, s.traj_id, "task pass rate outside band"});
      continue;
    }
    if (s.reward != 1) {
      result.excluded.push_back({s.task_id, s.traj_id, "reward=0"});
      continue;
    }
    if (!(s.sampling_weight > 0.0)) {
      result.excluded.push_back({s.task_id, s.traj_id, "zero sampling weight"});
      continue;
    }
    pool.push_back(i);
  }

  if (pool.size() < cfg.budget) {
    if (cfg.strict)
      throw InsufficientPoolError("pool has " + std::to_string(pool.size()) +
                                  " eligible trajectories for budget " + std::to_string(cfg.budget));
    result.truncated = true;
  }

  if (cfg.strategy == SelectStrategy::top_weight) {
    std::stable_sort(pool.begin(), pool.end(), [&](std::size_t a, std::size_t b) {
      if (scores[a].sampling_weight != scores[b].sampling_weight)
        return scores[a].sampling_weight > scores[b].sampling_weight;
      if (scores[a].task_id != scores[b].task_id) return scores[a].task_id < scores[b].task_id;
      return scores[a].traj_id < scores[b].traj_id;
    });
  } else {
    std::vector<detail::RaceEntry> race(pool.size());
    for (std::size_t k = 0; k < pool.size(); ++k) {
      const auto& s = scores[pool[k]];
      race[k] = {detail::race_numerator(cfg.seed, s.task_id, s.traj_id), s.sampling_weight, pool[k]};
    }
    std::stable_sort(race.begin(), race.end(), [&](const auto& a, const auto& b) {
      double lhs = a.x * b.w, rhs = b.x * a.w;
      if (lhs != rhs) return lhs < rhs;
      if (scores[a.index].task_id != scores[b.index].task_id)
        return scores[a.index].task_id < scores[b.index].task_id;
      return scores[a.index].traj_id < scores[b.index].traj_id;
    });
    for (std::size_t k = 0; k < pool.size(); ++k) pool[k] = race[k].index;
  }

  // Cap pass: honor per-task caps while the budget lasts. Remainder pass:
  // if caps starved the budget, fill it from the capped-out rows in order.
  std::map<std::string, std::uint32_t> taken;
  std::vector<std::size_t> capped;
  for (std::size_t k = 0; k < pool.size(); ++k) {
    const auto& s = scores[pool[k]];
    if (result.selected.size() == cfg.budget) {
      result.excluded.push_back({s.task_id, s.traj_id, "beyond budget"});
      continue;
    }
    if (cfg.per_task_cap && taken[s.task_id] >= *cfg.per_task_cap) {
      capped.push_back(k);
      continue;
    }
    ++taken[s.task_id];
    result.selected.push_back({s.task_id, s.traj_id, s.sampling_weight});
  }
  for (std::size_t k : capped) {
    const auto& s = scores[pool[k]];
    if (result.selected.size() < cfg.budget)
      result.selected.push_back({s.task_id, s.traj_id, s.sampling_weight});
    else
      result.excluded.push_back({s.task_id, s.traj_id, "over per-task cap"});
  }
  return result;
}

// Final RL task pick: band filter, renormalize selection probabilities over
// the survivors, then draw k of them.
inline RlSelection select_tasks(std::span<const RlTaskScore> scores, std::uint64_t k,
                                const SelectionConfig& cfg) {
  cfg.validate();
  if (k == 0) throw ConfigError("k must be >= 1");
  RlSelection result;

  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    double pr = scores[i].pass_rate;
    if (pr < cfg.rl_band.first || pr > cfg.rl_band.second) {
      result.excluded.push_back({scores[i].task_id, "", "pass rate outside band"});
      continue;
    }
    pool.push_back(i);
  }

  double total = 0.0;
  for (std::size_t i : pool) total += scores[i].p_select;
  for (std::size_t i : pool) {
    // All-zero input degrades to uniform rather than failing.
    double p = total > 0.0 ? scores[i].p_select / total : 1.0 / static_cast<double>(pool.size());
    if (!result.probabilities.emplace(scores[i].task_id, p).second)
      throw DuplicateIdError("duplicate task '" + scores[i].task_id + "' in selection pool");
  }

  if (pool.size() < k) {
    if (cfg.strict)
      throw InsufficientPoolError("pool has " + std::to_string(pool.size()) + " tasks in band for k=" +
                                  std::to_string(k));
    result.truncated = true;
  }

  auto prob = [&](std::size_t i) { return result.probabilities.at(scores[i].task_id); };
  if (cfg.strategy == SelectStrategy::top_weight) {
    std::stable_sort(pool.begin(), pool.end(), [&](std::size_t a, std::size_t b) {
      if (prob(a) != prob(b)) return prob(a) > prob(b);
      return scores[a].task_id < scores[b].task_id;
    });
  } else {
    std::vector<detail::RaceEntry> race(pool.size());
    for (std::size_t j = 0; j < pool.size(); ++j) {
      double w = prob(pool[j]);
      // Zero-probability tasks still need a finite key; rank them last by
      // giving them an infinitesimal stand-in weight.
      race[j] = {detail::race_numerator(cfg.seed, scores[pool[j]].task_id, ""),
                 w > 0.0 ? w : 1e-300, pool[j]};
    }
    std::stable_sort(race.begin(), race.end(), [&](const auto& a, const auto& b) {
      double lhs = a.x * b.w, rhs = b.x * a.w;
      if (lhs != rhs) return lhs < rhs;
      return scores[a.index].task_id < scores[b.index].task_id;
    });
    for (std::size_t j = 0; j < pool.size(); ++j) pool[j] = race[j].index;
  }

  for (std::size_t j = 0; j < pool.size(); ++j) {
    if (j < k)
      result.selected.push_back(scores[pool[j]].task_id);
    else
      result.excluded.push_back({scores[pool[j]].task_id, "", "beyond budget"});
  }
  return result;
}

}  // namespace topocurate
