#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "topocurate/corpus.hpp"
#include "topocurate/errors.hpp"
#include "topocurate/similarity.hpp"
#include "topocurate/topology.hpp"

// Planted-corpus generator and brute-force oracles. Recipes are deliberately
// rigid: dip events, error branches, and family/loop structure are mutually
// exclusive per task, because only then does every advertised ground-truth
// number follow from closed-form arithmetic on the recipe. Attempts to
// combine them raise SpecError instead of silently producing a corpus whose
// ground truth would be a guess.
namespace topocurate::testkit {

enum class EmbeddingMode { synthetic, featurized_text };

// One engineered drop in the success-potential ladder: the sequence falls
// from the plateau by `depth` at `position` and climbs back over
// `recovery_steps` steps.
struct DipEvent {
  std::uint32_t position = 1;
  double depth = 0.5;
  std::uint32_t recovery_steps = 1;
};

// One decision point with `children` alternatives of which `failing` are
// visited only by failed trajectories.
struct BranchStation {
  std::uint32_t children = 2;
  std::uint32_t failing = 1;
};

struct PlantedTaskSpec {
  std::string task_id;
  std::uint32_t num_trajectories = 8;
  std::vector<int> pass_pattern;  // cycled over trajectories; empty means all pass
  std::uint32_t solution_families = 1;
  std::uint32_t chain_length = 3;
  std::vector<std::uint32_t> loop_insertions;  // cycled; applied to successful trajectories only
  std::vector<DipEvent> dip_recovery_events;   // dip recipe; derives its own pass pattern
  double dip_pre_level = 0.8;
  double dip_eps = 0.2;  // the eps_dip the planted dips are calibrated against
  std::vector<BranchStation> error_branches;
  bool marginal_similarity = false;  // stress mode: cosines near thresholds, no exact truth
};

struct PlantedCorpusSpec {
  std::vector<PlantedTaskSpec> tasks;
  EmbeddingMode embedding_mode = EmbeddingMode::synthetic;
  std::uint64_t seed = 0;
};

struct ClassMember {
  std::string traj_id;
  std::uint32_t turn = 0;
};

struct GtClass {
  double phi = 1.0;
  std::vector<ClassMember> members;
};

// Values that hold by construction. phi values are exact rationals realized
// with the same integer/integer division the engine performs; v_struct and
// the pinned s_ref/s_eff entries are valid for any eps_fail in (0,1) and for
// eps_dip equal to the recipe's dip_eps respectively.
struct TaskGroundTruth {
  std::string task_id;
  double pass_rate = 0.0;
  double root_phi = 0.0;
  std::vector<GtClass> classes;  // intended partition, root excluded
  std::map<std::string, double> s_ref;
  std::map<std::string, double> s_eff;
  std::optional<double> v_struct;
  std::optional<std::uint32_t> unique_chains;
  std::optional<double> v_div;
  bool partition_exact = true;  // false under marginal_similarity
};

struct GroundTruth {
  std::uint64_t seed = 0;
  std::vector<TaskGroundTruth> tasks;
};

struct GeneratedCorpus {
  Corpus corpus;
  GroundTruth truth;
};

namespace kit_detail {

inline std::uint64_t mix(std::uint64_t a, std::uint64_t b) { return splitmix64(splitmix64(a) ^ b); }

inline std::string hex16(std::uint64_t x) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(x));
  return buf;
}

inline std::string traj_name(std::uint32_t i, std::uint32_t total) {
  std::uint32_t width = 2;
  for (std::uint32_t t = 100; t <= total - 1 && width < 9; t *= 10) ++width;
  char buf[16];
  std::snprintf(buf, sizeof buf, "t%0*u", static_cast<int>(width), i);
  return buf;
}

struct BlueprintClass {
  std::string label;
  double phi = 1.0;
};

struct BlueprintTraj {
  std::string id;
  int reward = 1;
  std::vector<std::uint32_t> seq;  // class indices, one per turn
};

struct Blueprint {
  std::vector<BlueprintClass> classes;
  std::vector<BlueprintTraj> trajs;
  TaskGroundTruth truth;
};

inline void fill_partition(Blueprint& bp) {
  bp.truth.classes.assign(bp.classes.size(), {});
  for (std::size_t c = 0; c < bp.classes.size(); ++c) bp.truth.classes[c].phi = bp.classes[c].phi;
  for (const auto& tr : bp.trajs)
    for (std::uint32_t pos = 0; pos < tr.seq.size(); ++pos)
      bp.truth.classes[tr.seq[pos]].members.push_back({tr.id, pos});
}

inline std::vector<int> rewards_from_pattern(const PlantedTaskSpec& t) {
  std::vector<int> r(t.num_trajectories, 1);
  if (!t.pass_pattern.empty())
    for (std::uint32_t i = 0; i < t.num_trajectories; ++i) {
      int v = t.pass_pattern[i % t.pass_pattern.size()];
      if (v != 0 && v != 1) throw SpecError("pass_pattern entries must be 0 or 1");
      r[i] = v;
    }
  return r;
}

// Solution-family recipe: F disjoint success chains, an optional shared
// failure chain, and per-trajectory detour loops hung off the chain head.
inline Blueprint family_blueprint(const PlantedTaskSpec& t) {
  const std::uint32_t F = t.solution_families, L = t.chain_length, N = t.num_trajectories;
  if (N == 0) throw SpecError("num_trajectories must be >= 1");
  if (F == 0) throw SpecError("solution_families must be >= 1");
  if (L == 0) throw SpecError("chain_length must be >= 1");

  auto rewards = rewards_from_pattern(t);
  std::uint32_t S = 0;
  for (int r : rewards) S += r;
  const std::uint32_t Fl = N - S;

  auto loops_of = [&](std::uint32_t i) -> std::uint32_t {
    if (t.loop_insertions.empty()) return 0;
    return t.loop_insertions[i % t.loop_insertions.size()];
  };
  bool any_loops = false;
  for (std::uint32_t i = 0; i < N; ++i)
    if (rewards[i] == 1 && loops_of(i) > 0) any_loops = true;
  if (any_loops && L < 2) throw SpecError("loop insertions need chain_length >= 2");

  Blueprint bp;
  const std::uint32_t P = std::min(S, F);  // populated families
  std::vector<std::uint32_t> chain_base(P), loop_class(P, 0);
  std::vector<bool> family_loops(P, false);
  for (std::uint32_t f = 0; f < P; ++f) {
    chain_base[f] = static_cast<std::uint32_t>(bp.classes.size());
    for (std::uint32_t l = 0; l < L; ++l) bp.classes.push_back({"c" + std::to_string(f) + "_" + std::to_string(l), 1.0});
  }
  {
    std::uint32_t js = 0;
    for (std::uint32_t i = 0; i < N; ++i)
      if (rewards[i] == 1) {
        if (loops_of(i) > 0) family_loops[js % F] = true;
        ++js;
      }
  }
  for (std::uint32_t f = 0; f < P; ++f)
    if (family_loops[f]) {
      loop_class[f] = static_cast<std::uint32_t>(bp.classes.size());
      bp.classes.push_back({"c" + std::to_string(f) + "_loop", 1.0});
    }
  std::uint32_t fail_base = 0;
  if (Fl > 0) {
    fail_base = static_cast<std::uint32_t>(bp.classes.size());
    for (std::uint32_t l = 0; l < L; ++l) bp.classes.push_back({"fail" + std::to_string(l), 0.0});
  }

  std::set<std::pair<std::uint32_t, std::uint32_t>> strategies;  // (family, loop count)
  std::uint32_t js = 0;
  for (std::uint32_t i = 0; i < N; ++i) {
    BlueprintTraj tr;
    tr.id = traj_name(i, N);
    tr.reward = rewards[i];
    if (rewards[i] == 1) {
      const std::uint32_t f = js % F;
      const std::uint32_t k = loops_of(i);
      strategies.emplace(f, k);
      tr.seq.push_back(chain_base[f]);
      for (std::uint32_t rep = 0; rep < k; ++rep) {
        tr.seq.push_back(loop_class[f]);
        tr.seq.push_back(chain_base[f]);
      }
      for (std::uint32_t l = 1; l < L; ++l) tr.seq.push_back(chain_base[f] + l);
      bp.truth.s_eff[tr.id] = k > 0 ? 1.0 / (2.0 * k + 1.0) : 1.0;
      ++js;
    } else {
      for (std::uint32_t l = 0; l < L; ++l) tr.seq.push_back(fail_base + l);
      bp.truth.s_eff[tr.id] = 1.0;
    }
    bp.truth.s_ref[tr.id] = 0.0;
    bp.trajs.push_back(std::move(tr));
  }

  bp.truth.pass_rate = static_cast<double>(S) / static_cast<double>(N);
  bp.truth.root_phi = bp.truth.pass_rate;
  bp.truth.unique_chains = static_cast<std::uint32_t>(strategies.size());
  bp.truth.v_div = static_cast<double>(strategies.size()) / static_cast<double>(N);
  // Branching nodes: the root when it has >= 2 realized children, and each
  // looped family head (children: detour + next chain step, both phi 1).
  double contrib = 0.0;
  std::size_t branching = 0;
  const std::uint32_t root_children = P + (Fl > 0 ? 1 : 0);
  if (root_children >= 2) {
    ++branching;
    contrib += (Fl > 0 ? 1.0 : 0.0) / static_cast<double>(root_children);
  }
  for (std::uint32_t f = 0; f < P; ++f)
    if (family_loops[f]) ++branching;
  bp.truth.v_struct = branching == 0 ? 0.0 : contrib / static_cast<double>(branching);

  fill_partition(bp);
  return bp;
}

// Dip recipe: a shared chain of rung classes whose phi values are exact
// multiples of 1/den. Every trajectory walks a prefix of the chain and ends
// in a private tail, so the quotient graph has no shortcut edges and every
// planted efficiency is exactly 1. Rung occupancy is solved backward so that
// successes only drop out on plateau rungs and failures only drop out at or
// below recovery level; the recovery score of every prefix then follows in
// closed form, and phi arithmetic matches the engine's division bit for bit.
inline Blueprint dip_blueprint(const PlantedTaskSpec& t) {
  if (!t.error_branches.empty()) throw SpecError("dip and branch recipes cannot be combined");
  for (std::uint32_t l : t.loop_insertions)
    if (l) throw SpecError("dip and loop recipes cannot be combined");
  if (!t.pass_pattern.empty())
    throw SpecError("dip recipes derive their own pass pattern; leave pass_pattern empty");
  if (!(t.dip_pre_level >= 0.5 && t.dip_pre_level <= 0.95))
    throw SpecError("dip_pre_level must lie in [0.5, 0.95]");

  // Pick the coarsest grid that realizes every ladder value exactly.
  auto on_grid = [](double x, std::uint32_t den) {
    return std::abs(x * den - std::lround(x * den)) < 1e-6;
  };
  std::uint32_t den = 0;
  for (std::uint32_t cand : {10u, 20u}) {
    bool ok = on_grid(t.dip_pre_level, cand);
    for (const auto& e : t.dip_recovery_events) ok = ok && on_grid(e.depth, cand);
    if (ok) {
      den = cand;
      break;
    }
  }
  if (den == 0) throw SpecError("dip levels must be multiples of 0.05 or 0.1");

  const std::uint32_t preu = static_cast<std::uint32_t>(std::lround(t.dip_pre_level * den));
  std::vector<std::uint32_t> ladder{preu};
  struct Event {
    std::size_t recovery_rung;
    double contribution;
  };
  std::vector<Event> events;
  for (const auto& e : t.dip_recovery_events) {
    if (e.recovery_steps == 0) throw SpecError("recovery_steps must be >= 1");
    if (e.position < ladder.size())
      throw SpecError("dip positions must be strictly increasing and leave room to recover");
    if (!(e.depth > t.dip_eps + 0.05 - 1e-9))
      throw SpecError("dip depth must exceed dip_eps by at least 0.05");
    while (ladder.size() < e.position) ladder.push_back(preu);
    const long dip_units = std::lround(e.depth * den);
    if (dip_units >= static_cast<long>(preu)) throw SpecError("dip depth reaches zero potential");
    const std::uint32_t dipu = preu - static_cast<std::uint32_t>(dip_units);
    ladder.push_back(dipu);
    std::uint32_t prev = dipu;
    for (std::uint32_t i = 1; i < e.recovery_steps; ++i) {
      auto mid = static_cast<std::uint32_t>(
          dipu + std::lround(static_cast<double>(preu - dipu) * i / e.recovery_steps));
      mid = std::min(mid, preu - 1);
      mid = std::max(mid, prev);
      ladder.push_back(mid);
      prev = mid;
    }
    ladder.push_back(preu);
    // Same division order the engine performs when it computes phi deltas.
    events.push_back({ladder.size() - 1,
                      (static_cast<double>(preu) / den - static_cast<double>(dipu) / den) /
                          static_cast<double>(e.recovery_steps)});
  }
  const std::size_t L = ladder.size();

  // den*c[j] trajectories visit rung j, ladder[j]*c[j] of them successes.
  // Rising steps keep the success count exactly constant (nobody passes a dip
  // and then stops before its recovery); falling steps keep both counts
  // non-increasing. The seed product makes every rising division integral.
  std::vector<std::uint64_t> c(L);
  std::uint64_t seedc = 1;
  for (std::size_t j = 0; j + 1 < L; ++j)
    if (ladder[j + 1] > ladder[j]) seedc *= ladder[j];
  c[L - 1] = seedc;
  for (std::size_t j = L - 1; j-- > 0;) {
    if (ladder[j + 1] > ladder[j]) {
      c[j] = c[j + 1] * ladder[j + 1] / ladder[j];
    } else if (ladder[j + 1] == ladder[j]) {
      c[j] = c[j + 1];
    } else {
      const std::uint64_t w = ladder[j + 1] * c[j + 1];
      const std::uint64_t f = (den - ladder[j + 1]) * c[j + 1];
      auto ceil_div = [](std::uint64_t a, std::uint64_t b) { return (a + b - 1) / b; };
      c[j] = std::max(ceil_div(w, ladder[j]), ceil_div(f, den - ladder[j]));
      std::uint64_t rem = 1;  // factors the rising steps below j still consume
      for (std::size_t k = 0; k < j; ++k)
        if (ladder[k + 1] > ladder[k]) rem *= ladder[k];
      if (rem > 1) c[j] = (c[j] + rem - 1) / rem * rem;
    }
  }
  if (den * c[0] > 20000)
    throw SpecError("dip recipe needs too many trajectories; reduce events or recovery steps");

  std::vector<std::uint64_t> visits(L), wins(L);
  for (std::size_t j = 0; j < L; ++j) {
    visits[j] = den * c[j];
    wins[j] = ladder[j] * c[j];
  }
  const auto N = static_cast<std::uint32_t>(visits[0]);
  const auto S = static_cast<std::uint32_t>(wins[0]);

  Blueprint bp;
  for (std::size_t j = 0; j < L; ++j)
    bp.classes.push_back({"step" + std::to_string(j), static_cast<double>(ladder[j]) / den});

  for (std::uint32_t i = 0; i < N; ++i) {
    BlueprintTraj tr;
    tr.id = traj_name(i, N);
    const bool win = i < S;
    tr.reward = win ? 1 : 0;
    const std::uint64_t rank = win ? i : i - S;
    std::size_t e = 0;
    while (e < L && rank < (win ? wins[e] : visits[e] - wins[e])) ++e;
    for (std::size_t j = 0; j < e; ++j) tr.seq.push_back(static_cast<std::uint32_t>(j));
    // Private tail keeps every trajectory distinct and pins its outcome.
    tr.seq.push_back(static_cast<std::uint32_t>(bp.classes.size()));
    bp.classes.push_back({"tail" + std::to_string(i), win ? 1.0 : 0.0});

    // An event contributes only to trajectories that walk past its recovery
    // rung: successes never stop mid-event, and a failure that stops early
    // ends at 0 so its trailing dip never recovers.
    double sref = 0.0;
    for (const auto& ev : events)
      if (ev.recovery_rung < e) sref += ev.contribution;
    bp.truth.s_ref[tr.id] = sref;
    bp.truth.s_eff[tr.id] = 1.0;
    bp.trajs.push_back(std::move(tr));
  }

  bp.truth.pass_rate = static_cast<double>(preu) / den;
  bp.truth.root_phi = bp.truth.pass_rate;
  fill_partition(bp);
  return bp;
}

// Branch recipe: serial stations, each a hub fanning out into children that
// reconverge at the next hub. Failing children are walked only by failed
// trajectories, so their phi is exactly 0 and each hub's failing share is
// f/c by construction.
inline Blueprint branch_blueprint(const PlantedTaskSpec& t) {
  for (std::uint32_t l : t.loop_insertions)
    if (l) throw SpecError("branch and loop recipes cannot be combined");
  const std::uint32_t N = t.num_trajectories;
  if (N == 0) throw SpecError("num_trajectories must be >= 1");

  auto rewards = rewards_from_pattern(t);
  std::uint32_t S = 0;
  for (int r : rewards) S += r;
  const std::uint32_t F = N - S;

  for (const auto& st : t.error_branches) {
    if (st.children < 2) throw SpecError("branch stations need >= 2 children");
    if (st.failing > st.children) throw SpecError("failing children exceed the fan-out");
    if (F > 0 && st.failing == 0)
      throw SpecError("failures present but a station has no failing child to route them through");
    if (F < st.failing) throw SpecError("not enough failures to populate every failing child");
    if (S > 0 && st.children == st.failing)
      throw SpecError("successes present but a station has no passing child");
    if (S < st.children - st.failing)
      throw SpecError("not enough successes to populate every passing child");
  }

  Blueprint bp;
  const double p = static_cast<double>(S) / static_cast<double>(N);
  std::vector<std::uint32_t> hub_class(t.error_branches.size()), child_base(t.error_branches.size());
  for (std::size_t m = 0; m < t.error_branches.size(); ++m) {
    hub_class[m] = static_cast<std::uint32_t>(bp.classes.size());
    bp.classes.push_back({"hub" + std::to_string(m), p});
    child_base[m] = static_cast<std::uint32_t>(bp.classes.size());
    const auto& st = t.error_branches[m];
    for (std::uint32_t j = 0; j < st.children; ++j)
      bp.classes.push_back({"st" + std::to_string(m) + (j < st.failing ? "_fail" : "_ok") + std::to_string(j),
                            j < st.failing ? 0.0 : 1.0});
  }

  std::set<std::vector<std::uint32_t>> strategies;
  std::uint32_t js = 0, jf = 0;
  for (std::uint32_t i = 0; i < N; ++i) {
    BlueprintTraj tr;
    tr.id = traj_name(i, N);
    tr.reward = rewards[i];
    std::vector<std::uint32_t> picks;
    for (std::size_t m = 0; m < t.error_branches.size(); ++m) {
      const auto& st = t.error_branches[m];
      std::uint32_t pick = rewards[i] == 1 ? st.failing + js % (st.children - st.failing) : jf % st.failing;
      picks.push_back(pick);
      tr.seq.push_back(hub_class[m]);
      tr.seq.push_back(child_base[m] + pick);
    }
    if (rewards[i] == 1) {
      strategies.insert(picks);
      ++js;
    } else {
      ++jf;
    }
    bp.truth.s_eff[tr.id] = 1.0;  // strictly layered graph: every hop is geodesic
    if (t.error_branches.size() == 1) bp.truth.s_ref[tr.id] = 0.0;
    bp.trajs.push_back(std::move(tr));
  }

  bp.truth.pass_rate = p;
  bp.truth.root_phi = p;
  double sum = 0.0;
  for (const auto& st : t.error_branches)
    sum += static_cast<double>(st.failing) / static_cast<double>(st.children);
  bp.truth.v_struct = sum / static_cast<double>(t.error_branches.size());
  bp.truth.unique_chains = static_cast<std::uint32_t>(strategies.size());
  bp.truth.v_div = static_cast<double>(strategies.size()) / static_cast<double>(N);
  fill_partition(bp);
  return bp;
}

inline Blueprint build_blueprint(const PlantedTaskSpec& t) {
  const bool has_dip = !t.dip_recovery_events.empty();
  const bool has_branch = !t.error_branches.empty();
  if (has_dip && has_branch) throw SpecError("dip and branch recipes cannot be combined");
  Blueprint bp = has_dip ? dip_blueprint(t) : has_branch ? branch_blueprint(t) : family_blueprint(t);
  bp.truth.task_id = t.task_id;
  bp.truth.partition_exact = !t.marginal_similarity;
  if (t.marginal_similarity) {
    // Near-threshold noise makes the realized partition seed-dependent;
    // advertise only what still holds.
    bp.truth.classes.clear();
    bp.truth.s_ref.clear();
    bp.truth.s_eff.clear();
    bp.truth.v_struct.reset();
    bp.truth.unique_chains.reset();
    bp.truth.v_div.reset();
  }
  return bp;
}

inline std::vector<double> random_unit(topocurate::detail::Gaussian& g, std::size_t dim) {
  std::vector<double> v(dim);
  double n2 = 0.0;
  do {
    n2 = 0.0;
    for (auto& x : v) {
      x = g();
      n2 += x * x;
    }
  } while (n2 < 1e-12);
  const double inv = 1.0 / std::sqrt(n2);
  for (auto& x : v) x *= inv;
  return v;
}

// Class center: orthonormal one-hot while ids fit the dimension, seeded
// random unit vectors beyond that (only reachable on very wide corpora).
inline std::vector<double> class_center(std::uint64_t seed, std::size_t task, std::size_t cls,
                                        int view, std::size_t dim) {
  if (cls < dim) {
    std::vector<double> v(dim, 0.0);
    v[cls] = 1.0;
    return v;
  }
  topocurate::detail::Gaussian g(mix(mix(mix(seed, 0xC0 + view), task), cls));
  return random_unit(g, dim);
}

inline std::vector<double> jittered(const std::vector<double>& center, double eta,
                                    topocurate::detail::Gaussian& g) {
  auto dir = random_unit(g, center.size());
  std::vector<double> v(center.size());
  double n2 = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    v[i] = center[i] + eta * dir[i];
    n2 += v[i] * v[i];
  }
  const double inv = 1.0 / std::sqrt(n2);
  for (auto& x : v) x *= inv;
  return v;
}

}  // namespace kit_detail

inline constexpr std::size_t kFeaturizedCheckDim = 256;  // featurized fixtures are validated at this dim

inline GeneratedCorpus generate(const PlantedCorpusSpec& spec) {
  if (spec.tasks.empty()) throw SpecError("planted corpus needs at least one task");
  {
    std::set<std::string> ids;
    for (const auto& t : spec.tasks) {
      if (t.task_id.empty()) throw SpecError("task_id must be non-empty");
      if (!ids.insert(t.task_id).second) throw SpecError("duplicate task_id '" + t.task_id + "'");
      if (t.marginal_similarity && spec.embedding_mode != EmbeddingMode::synthetic)
        throw SpecError("marginal_similarity requires synthetic embeddings");
    }
  }

  std::vector<kit_detail::Blueprint> bps;
  bps.reserve(spec.tasks.size());
  std::size_t max_classes = 0;
  for (const auto& t : spec.tasks) {
    bps.push_back(kit_detail::build_blueprint(t));
    max_classes = std::max(max_classes, bps.back().classes.size());
  }

  GeneratedCorpus out;
  out.truth.seed = spec.seed;

  const std::size_t dim = std::clamp<std::size_t>(max_classes, 8, 256);
  for (std::size_t ti = 0; ti < spec.tasks.size(); ++ti) {
    const auto& tspec = spec.tasks[ti];
    auto& bp = bps[ti];

    // Per-class wire content. Identical within a class by construction, so
    // featurized turns collapse exactly; distinct classes are salted apart.
    std::vector<std::string> salts(bp.classes.size());
    if (spec.embedding_mode == EmbeddingMode::featurized_text) {
      if (bp.classes.size() > 64)
        throw SpecError("featurized_text recipes support at most 64 classes per task");
      for (std::uint64_t attempt = 0;; ++attempt) {
        if (attempt == 64) throw SpecError("could not salt classes apart");
        for (std::size_t c = 0; c < bp.classes.size(); ++c) {
          std::uint64_t h = kit_detail::mix(kit_detail::mix(spec.seed, ti), c * 64 + attempt);
          salts[c] = kit_detail::hex16(h) + kit_detail::hex16(splitmix64(h));
        }
        bool ok = true;
        std::vector<std::vector<double>> av(bp.classes.size()), ov(bp.classes.size());
        for (std::size_t c = 0; c < bp.classes.size() && ok; ++c) {
          Turn probe;
          probe.tool_name = "tool_" + bp.classes[c].label;
          probe.tool_args = {{"class", bp.classes[c].label}, {"salt", salts[c]}};
          probe.observation = "obs " + bp.classes[c].label + " " + salts[c];
          av[c] = featurize(canonicalize_action(probe), kFeaturizedCheckDim);
          ov[c] = featurize(probe.observation, kFeaturizedCheckDim);
        }
        for (std::size_t a = 0; a < bp.classes.size() && ok; ++a)
          for (std::size_t b = a + 1; b < bp.classes.size() && ok; ++b)
            if (cosine(av[a], av[b]) >= 0.85 || cosine(ov[a], ov[b]) >= 0.85) ok = false;
        if (ok) break;
      }
    }

    std::vector<std::vector<double>> tool_center(bp.classes.size()), result_center(bp.classes.size());
    if (spec.embedding_mode == EmbeddingMode::synthetic)
      for (std::size_t c = 0; c < bp.classes.size(); ++c) {
        tool_center[c] = kit_detail::class_center(spec.seed, ti, c, 0, dim);
        result_center[c] = kit_detail::class_center(spec.seed, ti, c, 1, dim);
      }
    const double eta = tspec.marginal_similarity ? 0.22 : 0.05;

    Task task;
    task.task_id = tspec.task_id;
    task.intent = "planted task " + tspec.task_id;
    for (std::size_t tj = 0; tj < bp.trajs.size(); ++tj) {
      const auto& bt = bp.trajs[tj];
      Trajectory tr;
      tr.traj_id = bt.id;
      tr.reward = bt.reward;
      for (std::size_t pos = 0; pos < bt.seq.size(); ++pos) {
        const auto& cls = bp.classes[bt.seq[pos]];
        Turn turn;
        turn.reasoning = "step " + std::to_string(pos);
        turn.tool_name = "tool_" + cls.label;
        turn.tool_args = {{"class", cls.label}};
        turn.observation = "obs " + cls.label;
        if (spec.embedding_mode == EmbeddingMode::featurized_text) {
          turn.tool_args["salt"] = salts[bt.seq[pos]];
          turn.observation += " " + salts[bt.seq[pos]];
        } else {
          topocurate::detail::Gaussian g0(
              kit_detail::mix(kit_detail::mix(kit_detail::mix(spec.seed, ti), tj * 4096 + pos), 0));
          topocurate::detail::Gaussian g1(
              kit_detail::mix(kit_detail::mix(kit_detail::mix(spec.seed, ti), tj * 4096 + pos), 1));
          turn.tool_embedding = kit_detail::jittered(tool_center[bt.seq[pos]], eta, g0);
          turn.result_embedding = kit_detail::jittered(result_center[bt.seq[pos]], eta, g1);
        }
        tr.turns.push_back(std::move(turn));
      }
      task.trajectories.push_back(std::move(tr));
    }
    out.corpus.tasks.push_back(std::move(task));
    out.truth.tasks.push_back(std::move(bp.truth));
  }
  if (spec.embedding_mode == EmbeddingMode::synthetic) {
    out.corpus.dims.tool = dim;
    out.corpus.dims.result = dim;
  }
  return out;
}

inline json ground_truth_to_json(const GroundTruth& gt) {
  json doc;
  doc["schema"] = "topocurate-groundtruth/1";
  doc["seed"] = gt.seed;
  json tasks = json::array();
  for (const auto& t : gt.tasks) {
    json jt;
    jt["task_id"] = t.task_id;
    jt["pass_rate"] = t.pass_rate;
    jt["root_phi"] = t.root_phi;
    jt["partition_exact"] = t.partition_exact;
    json classes = json::array();
    for (const auto& c : t.classes) {
      json jc;
      jc["phi"] = c.phi;
      json members = json::array();
      for (const auto& m : c.members) members.push_back(json::array({m.traj_id, m.turn}));
      jc["members"] = std::move(members);
      classes.push_back(std::move(jc));
    }
    jt["classes"] = std::move(classes);
    jt["s_ref"] = t.s_ref;
    jt["s_eff"] = t.s_eff;
    if (t.v_struct) jt["v_struct"] = *t.v_struct;
    if (t.unique_chains) jt["unique_chains"] = *t.unique_chains;
    if (t.v_div) jt["v_div"] = *t.v_div;
    tasks.push_back(std::move(jt));
  }
  doc["tasks"] = std::move(tasks);
  return doc;
}

inline PlantedCorpusSpec spec_from_json(const json& doc) {
  if (!doc.is_object()) throw SchemaError(0, "planted spec must be a JSON object");
  static const std::set<std::string> top_keys{"seed", "embedding_mode", "tasks"};
  static const std::set<std::string> task_keys{
      "task_id",       "num_trajectories", "pass_pattern",        "solution_families",
      "chain_length",  "loop_insertions",  "dip_recovery_events", "dip_pre_level",
      "dip_eps",       "error_branches",   "marginal_similarity"};
  for (const auto& [k, v] : doc.items()) {
    (void)v;
    if (!top_keys.count(k)) throw SchemaError(0, "unknown key '" + k + "' in planted spec");
  }
  PlantedCorpusSpec spec;
  try {
    spec.seed = doc.value("seed", 0ull);
    std::string mode = doc.value("embedding_mode", "synthetic");
    if (mode == "synthetic")
      spec.embedding_mode = EmbeddingMode::synthetic;
    else if (mode == "featurized_text")
      spec.embedding_mode = EmbeddingMode::featurized_text;
    else
      throw SchemaError(0, "embedding_mode must be 'synthetic' or 'featurized_text'");
    if (!doc.contains("tasks") || !doc["tasks"].is_array())
      throw SchemaError(0, "planted spec needs a 'tasks' array");
    for (const auto& jt : doc["tasks"]) {
      if (!jt.is_object()) throw SchemaError(0, "task spec must be a JSON object");
      for (const auto& [k, v] : jt.items()) {
        (void)v;
        if (!task_keys.count(k)) throw SchemaError(0, "unknown key '" + k + "' in task spec");
      }
      PlantedTaskSpec t;
      t.task_id = jt.value("task_id", "");
      t.num_trajectories = jt.value("num_trajectories", 8u);
      t.pass_pattern = jt.value("pass_pattern", std::vector<int>{});
      t.solution_families = jt.value("solution_families", 1u);
      t.chain_length = jt.value("chain_length", 3u);
      t.loop_insertions = jt.value("loop_insertions", std::vector<std::uint32_t>{});
      t.dip_pre_level = jt.value("dip_pre_level", 0.8);
      t.dip_eps = jt.value("dip_eps", 0.2);
      t.marginal_similarity = jt.value("marginal_similarity", false);
      if (jt.contains("dip_recovery_events"))
        for (const auto& je : jt["dip_recovery_events"]) {
          DipEvent e;
          e.position = je.value("position", 1u);
          e.depth = je.value("depth", 0.5);
          e.recovery_steps = je.value("recovery_steps", 1u);
          t.dip_recovery_events.push_back(e);
        }
      if (jt.contains("error_branches"))
        for (const auto& jb : jt["error_branches"]) {
          BranchStation b;
          b.children = jb.value("children", 2u);
          b.failing = jb.value("failing", 1u);
          t.error_branches.push_back(b);
        }
      spec.tasks.push_back(std::move(t));
    }
  } catch (const json::exception& e) {
    throw SchemaError(0, std::string("malformed planted spec: ") + e.what());
  }
  return spec;
}

// Brute-force reference for the merge stage: evaluates the predicate on every
// pair and closes it transitively with a bare parent-pointer forest kept
// separate from the library's union-find. Classes come back as sorted index
// lists ordered by first member.
inline std::vector<std::vector<std::uint32_t>> oracle_merge(std::span<const Turn> turns,
                                                            const SimilarityConfig& cfg) {
  const std::size_t n = turns.size();
  std::vector<TurnEmbedding> emb;
  emb.reserve(n);
  for (const auto& t : turns) emb.push_back(embed_turn(t, cfg));

  std::vector<std::uint32_t> parent(n);
  std::iota(parent.begin(), parent.end(), 0u);
  auto find = [&](std::uint32_t x) {
    while (parent[x] != x) x = parent[x];
    return x;
  };
  for (std::uint32_t i = 0; i + 1 < n; ++i)
    for (std::uint32_t j = i + 1; j < n; ++j)
      if (is_equivalent(emb[i], emb[j], cfg)) {
        std::uint32_t a = find(i), b = find(j);
        if (a != b) parent[std::max(a, b)] = std::min(a, b);
      }

  std::map<std::uint32_t, std::vector<std::uint32_t>> classes;
  for (std::uint32_t i = 0; i < n; ++i) classes[find(i)].push_back(i);
  std::vector<std::vector<std::uint32_t>> out;
  out.reserve(classes.size());
  for (auto& [root, members] : classes) out.push_back(std::move(members));  // keyed by min member
  return out;
}

// Floyd-Warshall hop distances over the graph's distinct edges, self-loops
// ignored; kUnreachable marks disconnected pairs.
inline std::vector<std::vector<std::uint32_t>> oracle_apsp(const QuotientGraph& g) {
  const std::size_t n = g.node_count();
  std::vector<std::vector<std::uint32_t>> d(n, std::vector<std::uint32_t>(n, kUnreachable));
  for (std::size_t i = 0; i < n; ++i) d[i][i] = 0;
  for (const auto& [e, cnt] : g.edges) {
    (void)cnt;
    if (e.first != e.second && d[e.first][e.second] > 1) d[e.first][e.second] = 1;
  }
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t i = 0; i < n; ++i) {
      if (d[i][k] == kUnreachable) continue;
      for (std::size_t j = 0; j < n; ++j) {
        if (d[k][j] == kUnreachable) continue;
        std::uint32_t via = d[i][k] + d[k][j];
        if (via < d[i][j]) d[i][j] = via;
      }
    }
  return d;
}

namespace kit_detail {

inline std::vector<std::size_t> turn_offsets(const Task& task) {
  std::vector<std::size_t> off(task.trajectories.size() + 1, 0);
  for (std::size_t i = 0; i < task.trajectories.size(); ++i)
    off[i + 1] = off[i] + task.trajectories[i].turns.size();
  return off;
}

inline std::vector<std::vector<std::uint32_t>> canonical(std::vector<std::vector<std::uint32_t>> classes) {
  for (auto& c : classes) std::sort(c.begin(), c.end());
  std::sort(classes.begin(), classes.end(),
            [](const auto& a, const auto& b) { return a.front() < b.front(); });
  return classes;
}

}  // namespace kit_detail

// Both partitions below use trajectory-major flat turn indices so they are
// directly comparable with oracle_merge output.
inline std::vector<std::vector<std::uint32_t>> partition_from_graph(const Task& task,
                                                                    const QuotientGraph& g) {
  auto off = kit_detail::turn_offsets(task);
  std::vector<std::vector<std::uint32_t>> classes;
  for (std::size_t v = 1; v < g.members.size(); ++v) {
    std::vector<std::uint32_t> c;
    for (const auto& m : g.members[v])
      c.push_back(static_cast<std::uint32_t>(off[m.trajectory] + m.turn));
    if (!c.empty()) classes.push_back(std::move(c));
  }
  return kit_detail::canonical(std::move(classes));
}

inline std::vector<std::vector<std::uint32_t>> partition_from_truth(const Task& task,
                                                                    const TaskGroundTruth& gt) {
  auto off = kit_detail::turn_offsets(task);
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < task.trajectories.size(); ++i)
    index[task.trajectories[i].traj_id] = i;
  std::vector<std::vector<std::uint32_t>> classes;
  for (const auto& c : gt.classes) {
    std::vector<std::uint32_t> out;
    for (const auto& m : c.members) {
      auto it = index.find(m.traj_id);
      if (it == index.end()) throw UnknownTrajectoryError("ground truth names unknown trajectory '" + m.traj_id + "'");
      out.push_back(static_cast<std::uint32_t>(off[it->second] + m.turn));
    }
    classes.push_back(std::move(out));
  }
  return kit_detail::canonical(std::move(classes));
}

}  // namespace topocurate::testkit
