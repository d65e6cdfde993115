#include <catch2/catch_amalgamated.hpp>

#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "topocurate/metrics_rl.hpp"
#include "topocurate/metrics_sft.hpp"
#include "topocurate/testkit.hpp"

using namespace topocurate;
namespace tk = topocurate::testkit;

namespace {

std::vector<Turn> flat_turns(const Task& task) {
  std::vector<Turn> out;
  for (const auto& tr : task.trajectories)
    for (const auto& t : tr.turns) out.push_back(t);
  return out;
}

// Runs the full battery: the engine's partition must equal both the planted
// one and the all-pairs oracle, and every advertised number must come back
// from the engine bit for bit (the recipes arrange identical arithmetic).
void check_against_engine(const Task& task, const tk::TaskGroundTruth& gt, bool run_oracle = true) {
  SimilarityConfig sim;
  QuotientGraph g = build_quotient_graph(task, sim);

  CHECK(g.phi[0] == gt.root_phi);

  auto mine = tk::partition_from_graph(task, g);
  CHECK(mine == tk::partition_from_truth(task, gt));
  if (run_oracle) {
    auto flat = flat_turns(task);
    CHECK(mine == tk::oracle_merge(flat, sim));
  }

  std::map<std::string, const TrajectoryPath*> by_id;
  for (const auto& p : g.paths) by_id[p.traj_id] = &p;
  std::size_t phi_mismatch = 0;
  for (const auto& c : gt.classes) {
    REQUIRE_FALSE(c.members.empty());
    const auto& m = c.members.front();
    NodeId v = by_id.at(m.traj_id)->nodes.at(m.turn + 1);
    if (g.phi[v] != c.phi) ++phi_mismatch;
  }
  CHECK(phi_mismatch == 0);

  auto rows = score_task_sft(g);
  std::size_t ref_mismatch = 0, eff_mismatch = 0;
  for (const auto& r : rows) {
    if (auto it = gt.s_ref.find(r.traj_id); it != gt.s_ref.end() && r.s_ref != it->second)
      ++ref_mismatch;
    if (auto it = gt.s_eff.find(r.traj_id); it != gt.s_eff.end() && r.s_eff != it->second)
      ++eff_mismatch;
  }
  CHECK(ref_mismatch == 0);
  CHECK(eff_mismatch == 0);

  auto rl = score_task_rl(g);
  CHECK(rl.pass_rate == gt.pass_rate);
  if (gt.v_struct) CHECK(rl.v_struct == *gt.v_struct);
  if (gt.v_div) CHECK(rl.v_div == *gt.v_div);
}

tk::PlantedCorpusSpec one_task(tk::PlantedTaskSpec t, std::uint64_t seed = 11) {
  tk::PlantedCorpusSpec spec;
  spec.seed = seed;
  spec.tasks.push_back(std::move(t));
  return spec;
}

}  // namespace

TEST_CASE("family fixture matches the engine everywhere") {
  tk::PlantedTaskSpec t;
  t.task_id = "fam";
  t.num_trajectories = 8;
  t.pass_pattern = {1, 1, 1, 0};
  t.solution_families = 2;
  t.chain_length = 3;
  auto gen = tk::generate(one_task(t));
  const auto& gt = gen.truth.tasks[0];

  CHECK(gt.pass_rate == 0.75);
  REQUIRE(gt.unique_chains.has_value());
  CHECK(*gt.unique_chains == 2);
  CHECK(*gt.v_div == 0.25);
  CHECK(*gt.v_struct == 1.0 / 3.0);  // root fans into two families plus the failure chain
  check_against_engine(gen.corpus.tasks[0], gt);
}

TEST_CASE("loop detours cost exactly their planted efficiency") {
  tk::PlantedTaskSpec t;
  t.task_id = "loops";
  t.num_trajectories = 4;
  t.solution_families = 1;
  t.chain_length = 3;
  t.loop_insertions = {0, 1};
  auto gen = tk::generate(one_task(t));
  const auto& gt = gen.truth.tasks[0];

  CHECK(gt.s_eff.at("t00") == 1.0);
  CHECK(gt.s_eff.at("t01") == 1.0 / 3.0);
  CHECK(gt.s_eff.at("t02") == 1.0);
  CHECK(gt.s_eff.at("t03") == 1.0 / 3.0);
  CHECK(*gt.v_div == 0.5);     // looped and loop-free routes are distinct strategies
  CHECK(*gt.v_struct == 0.0);  // the only branching node fans into two passing children
  check_against_engine(gen.corpus.tasks[0], gt);
}

TEST_CASE("single-station branch pins recovery at zero") {
  tk::PlantedTaskSpec t;
  t.task_id = "br1";
  t.num_trajectories = 4;
  t.pass_pattern = {1, 0};
  t.error_branches = {{2, 1}};
  auto gen = tk::generate(one_task(t));
  const auto& gt = gen.truth.tasks[0];

  CHECK(gt.pass_rate == 0.5);
  CHECK(*gt.v_struct == 0.5);
  CHECK(gt.s_ref.size() == 4);  // one station cannot re-climb, so every s_ref is pinned
  for (const auto& [id, v] : gt.s_ref) CHECK(v == 0.0);
  check_against_engine(gen.corpus.tasks[0], gt);
}

TEST_CASE("multi-station branch averages the failing shares") {
  tk::PlantedTaskSpec t;
  t.task_id = "br2";
  t.num_trajectories = 6;
  t.pass_pattern = {1, 1, 1, 1, 0, 0};
  t.error_branches = {{3, 1}, {2, 1}};
  auto gen = tk::generate(one_task(t));
  const auto& gt = gen.truth.tasks[0];

  CHECK(*gt.v_struct == (1.0 / 3.0 + 1.0 / 2.0) / 2.0);
  CHECK(*gt.unique_chains == 2);
  CHECK(*gt.v_div == 2.0 / 6.0);
  CHECK(gt.s_ref.empty());  // recovery between stations is real; nothing is pinned
  check_against_engine(gen.corpus.tasks[0], gt);
}

TEST_CASE("dip fixture with one-step recovery") {
  tk::PlantedTaskSpec t;
  t.task_id = "dip";
  t.dip_recovery_events = {{1, 0.5, 1}};
  t.dip_pre_level = 0.8;
  t.dip_eps = 0.2;
  auto gen = tk::generate(one_task(t));
  const auto& gt = gen.truth.tasks[0];
  const auto& task = gen.corpus.tasks[0];

  // Occupancy solved backward from the ladder 0.8 -> 0.3 -> 0.8.
  CHECK(task.trajectories.size() == 280);
  int wins = 0;
  for (const auto& tr : task.trajectories) wins += tr.reward;
  CHECK(wins == 224);
  CHECK(gt.pass_rate == 0.8);

  // Only trajectories that walk past the recovery rung earn the rebound.
  const double rebound = (0.8 - 0.3) / 1.0;
  CHECK(gt.s_ref.at("t000") == rebound);
  CHECK(gt.s_ref.at("t023") == rebound);
  CHECK(gt.s_ref.at("t024") == 0.0);
  CHECK(gt.s_ref.at("t224") == rebound);  // deep-walking failure still recovers once
  CHECK(gt.s_ref.at("t230") == 0.0);      // early-stopping failure never re-climbs
  check_against_engine(task, gt);
}

TEST_CASE("dip fixture with two-step recovery") {
  tk::PlantedTaskSpec t;
  t.task_id = "dip2";
  t.dip_recovery_events = {{1, 0.3, 2}};
  t.dip_pre_level = 0.5;
  t.dip_eps = 0.2;
  auto gen = tk::generate(one_task(t));
  const auto& gt = gen.truth.tasks[0];
  const auto& task = gen.corpus.tasks[0];

  CHECK(task.trajectories.size() == 320);
  CHECK(gt.pass_rate == 0.5);
  const double rebound = (0.5 - 0.2) / 2.0;
  CHECK(gt.s_ref.at("t000") == rebound);
  CHECK(gt.s_ref.at("t100") == 0.0);  // plateau dropout, never saw the dip
  check_against_engine(task, gt, /*run_oracle=*/false);
}

TEST_CASE("marginal similarity advertises only what survives") {
  tk::PlantedTaskSpec t;
  t.task_id = "noisy";
  t.num_trajectories = 6;
  t.pass_pattern = {1, 1, 0};
  t.solution_families = 2;
  t.marginal_similarity = true;
  auto gen = tk::generate(one_task(t));
  const auto& gt = gen.truth.tasks[0];

  CHECK_FALSE(gt.partition_exact);
  CHECK(gt.classes.empty());
  CHECK(gt.s_ref.empty());
  CHECK(gt.s_eff.empty());
  CHECK_FALSE(gt.v_struct.has_value());
  CHECK_FALSE(gt.v_div.has_value());

  // The build itself must still go through, and the root is merge-proof.
  QuotientGraph g = build_quotient_graph(gen.corpus.tasks[0], SimilarityConfig{});
  CHECK(g.phi[0] == gt.root_phi);
}

TEST_CASE("featurized text mode reproduces the planted partition") {
  tk::PlantedTaskSpec t;
  t.task_id = "wire";
  t.num_trajectories = 6;
  t.pass_pattern = {1, 1, 0};
  t.solution_families = 2;
  t.chain_length = 2;
  auto spec = one_task(t, 21);
  spec.embedding_mode = tk::EmbeddingMode::featurized_text;
  auto gen = tk::generate(spec);

  for (const auto& tr : gen.corpus.tasks[0].trajectories)
    for (const auto& turn : tr.turns) {
      CHECK_FALSE(turn.tool_embedding.has_value());
      CHECK_FALSE(turn.result_embedding.has_value());
    }
  check_against_engine(gen.corpus.tasks[0], gen.truth.tasks[0]);
}

TEST_CASE("recipe conflicts and bad knobs are rejected") {
  auto gen1 = [](tk::PlantedTaskSpec t) { return tk::generate(one_task(std::move(t))); };
  tk::PlantedTaskSpec base;
  base.task_id = "x";

  auto t = base;
  t.dip_recovery_events = {{1, 0.5, 1}};
  t.error_branches = {{2, 1}};
  CHECK_THROWS_AS(gen1(t), SpecError);

  t = base;
  t.dip_recovery_events = {{1, 0.5, 1}};
  t.loop_insertions = {1};
  CHECK_THROWS_AS(gen1(t), SpecError);

  t = base;
  t.dip_recovery_events = {{1, 0.5, 1}};
  t.pass_pattern = {1, 0};
  CHECK_THROWS_AS(gen1(t), SpecError);

  t = base;
  t.dip_recovery_events = {{1, 0.5, 1}};
  t.dip_pre_level = 0.4;
  CHECK_THROWS_AS(gen1(t), SpecError);

  t = base;  // depth must clear eps by 0.05
  t.dip_recovery_events = {{1, 0.2, 1}};
  CHECK_THROWS_AS(gen1(t), SpecError);

  t = base;  // dip would bottom out at zero potential
  t.dip_pre_level = 0.5;
  t.dip_recovery_events = {{1, 0.5, 1}};
  CHECK_THROWS_AS(gen1(t), SpecError);

  t = base;  // off the 0.05 grid
  t.dip_recovery_events = {{1, 0.33, 1}};
  CHECK_THROWS_AS(gen1(t), SpecError);

  t = base;
  t.dip_recovery_events = {{1, 0.5, 0}};
  CHECK_THROWS_AS(gen1(t), SpecError);

  t = base;  // second event starts inside the first one's ladder
  t.dip_recovery_events = {{1, 0.5, 1}, {2, 0.5, 1}};
  CHECK_THROWS_AS(gen1(t), SpecError);

  t = base;  // occupancy for two deep dips explodes past the cap
  t.dip_pre_level = 0.9;
  t.dip_recovery_events = {{1, 0.8, 1}, {3, 0.8, 1}};
  CHECK_THROWS_AS(gen1(t), SpecError);

  t = base;
  t.loop_insertions = {1};
  t.chain_length = 1;
  CHECK_THROWS_AS(gen1(t), SpecError);

  t = base;
  t.error_branches = {{1, 0}};
  CHECK_THROWS_AS(gen1(t), SpecError);

  t = base;  // failures exist but cannot be routed
  t.pass_pattern = {1, 0};
  t.error_branches = {{2, 0}};
  CHECK_THROWS_AS(gen1(t), SpecError);

  t = base;  // successes exist but every child fails
  t.error_branches = {{2, 2}};
  CHECK_THROWS_AS(gen1(t), SpecError);

  t = base;
  t.num_trajectories = 0;
  CHECK_THROWS_AS(gen1(t), SpecError);
  t = base;
  t.solution_families = 0;
  CHECK_THROWS_AS(gen1(t), SpecError);
  t = base;
  t.chain_length = 0;
  CHECK_THROWS_AS(gen1(t), SpecError);
  t = base;
  t.pass_pattern = {1, 2};
  CHECK_THROWS_AS(gen1(t), SpecError);

  tk::PlantedCorpusSpec empty;
  CHECK_THROWS_AS(tk::generate(empty), SpecError);

  tk::PlantedCorpusSpec dup;
  dup.tasks = {base, base};
  CHECK_THROWS_AS(tk::generate(dup), SpecError);

  tk::PlantedCorpusSpec anon;
  anon.tasks = {tk::PlantedTaskSpec{}};
  CHECK_THROWS_AS(tk::generate(anon), SpecError);

  tk::PlantedCorpusSpec marg;
  t = base;
  t.marginal_similarity = true;
  marg.tasks = {t};
  marg.embedding_mode = tk::EmbeddingMode::featurized_text;
  CHECK_THROWS_AS(tk::generate(marg), SpecError);

  tk::PlantedCorpusSpec wide;  // 70 distinct classes cannot be salted into text
  t = base;
  t.num_trajectories = 70;
  t.solution_families = 70;
  t.chain_length = 1;
  wide.tasks = {t};
  wide.embedding_mode = tk::EmbeddingMode::featurized_text;
  CHECK_THROWS_AS(tk::generate(wide), SpecError);
  wide.embedding_mode = tk::EmbeddingMode::synthetic;
  CHECK_NOTHROW(tk::generate(wide));
}

TEST_CASE("planted specs parse from json") {
  json doc = {
      {"seed", 42},
      {"embedding_mode", "featurized_text"},
      {"tasks",
       json::array(
           {{{"task_id", "a"},
             {"num_trajectories", 4},
             {"pass_pattern", {1, 0}},
             {"solution_families", 2},
             {"chain_length", 2}},
            {{"task_id", "b"},
             {"dip_recovery_events", json::array({{{"position", 1}, {"depth", 0.5}, {"recovery_steps", 2}}})},
             {"dip_pre_level", 0.8},
             {"dip_eps", 0.2}},
            {{"task_id", "c"},
             {"error_branches", json::array({{{"children", 3}, {"failing", 1}}})},
             {"pass_pattern", {1, 1, 0}}}})}};
  auto spec = tk::spec_from_json(doc);
  CHECK(spec.seed == 42);
  CHECK(spec.embedding_mode == tk::EmbeddingMode::featurized_text);
  REQUIRE(spec.tasks.size() == 3);
  CHECK(spec.tasks[0].pass_pattern == std::vector<int>{1, 0});
  CHECK(spec.tasks[0].solution_families == 2);
  REQUIRE(spec.tasks[1].dip_recovery_events.size() == 1);
  CHECK(spec.tasks[1].dip_recovery_events[0].recovery_steps == 2);
  CHECK(spec.tasks[1].dip_recovery_events[0].depth == 0.5);
  REQUIRE(spec.tasks[2].error_branches.size() == 1);
  CHECK(spec.tasks[2].error_branches[0].children == 3);

  CHECK_THROWS_AS(tk::spec_from_json(json::array()), SchemaError);
  CHECK_THROWS_AS(tk::spec_from_json(json{{"seed", 1}}), SchemaError);  // no tasks
  CHECK_THROWS_AS(tk::spec_from_json(json{{"seed", 1}, {"tasks", json::array()}, {"bogus", true}}),
                  SchemaError);
  CHECK_THROWS_AS(tk::spec_from_json(json{{"tasks", json::array({{{"task_id", "x"}, {"oops", 1}}})}}),
                  SchemaError);
  CHECK_THROWS_AS(tk::spec_from_json(json{{"embedding_mode", "sideways"}, {"tasks", json::array()}}),
                  SchemaError);
}

TEST_CASE("ground truth serializes with its schema tag") {
  tk::PlantedTaskSpec t;
  t.task_id = "fam";
  t.num_trajectories = 4;
  t.solution_families = 2;
  auto gen = tk::generate(one_task(t, 5));
  auto doc = tk::ground_truth_to_json(gen.truth);
  CHECK(doc["schema"] == "topocurate-groundtruth/1");
  CHECK(doc["seed"] == 5);
  REQUIRE(doc["tasks"].size() == 1);
  CHECK(doc["tasks"][0]["task_id"] == "fam");
  CHECK(doc["tasks"][0]["partition_exact"] == true);
  CHECK(doc["tasks"][0].contains("v_div"));
  CHECK(doc["tasks"][0]["s_eff"].is_object());
}

TEST_CASE("generation is deterministic for a fixed spec") {
  tk::PlantedTaskSpec t;
  t.task_id = "fam";
  t.num_trajectories = 6;
  t.pass_pattern = {1, 1, 0};
  t.solution_families = 2;
  auto spec = one_task(t, 77);

  auto a = tk::generate(spec);
  auto b = tk::generate(spec);
  std::ostringstream sa, sb;
  save_corpus(a.corpus, sa);
  save_corpus(b.corpus, sb);
  CHECK(sa.str() == sb.str());
  CHECK(tk::ground_truth_to_json(a.truth).dump() == tk::ground_truth_to_json(b.truth).dump());
}
