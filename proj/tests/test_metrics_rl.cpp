#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "helpers.hpp"
#include "topocurate/metrics_rl.hpp"

using namespace topocurate;

TEST_CASE("rl config validation") {
  RlConfig c;
  CHECK_NOTHROW(c.validate());
  c.eps_fail = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = RlConfig{};
  c.temperature = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = RlConfig{};
  c.band = {0.8, 0.2};
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = RlConfig{};
  c.alpha = -0.5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("error branch ratio averages the failing share of branching nodes") {
  // hub "h" fans out into a failing child and a passing child
  Task task = th::make_task("tk", {{"a", 1, {"h", "ok"}}, {"b", 0, {"h", "bad"}}});
  auto g = build_quotient_graph(task, {});
  CHECK(error_branch_ratio(g, 0.2) == 0.5);
}

TEST_CASE("branch-free graphs score zero structural potential") {
  Task task = th::make_task("tk", {{"a", 1, {"x", "y"}}, {"b", 1, {"x", "y"}}});
  auto g = build_quotient_graph(task, {});
  CHECK(error_branch_ratio(g, 0.2) == 0.0);
}

TEST_CASE("a child at exactly eps_fail is not failing") {
  // child "m" is visited by one success and one failure: phi = 0.5
  Task task = th::make_task("tk", {{"a", 1, {"h", "m"}}, {"b", 0, {"h", "m"}}, {"c", 1, {"h", "ok"}}});
  auto g = build_quotient_graph(task, {});
  CHECK(error_branch_ratio(g, 0.5) == 0.0);   // 0.5 < 0.5 is false
  CHECK(error_branch_ratio(g, 0.51) == 0.5);  // now m counts against the hub
}

TEST_CASE("chain signatures collapse consecutive repeats only") {
  TrajectoryPath p;
  p.nodes = {0, 1, 1, 2, 1, 3, 3};
  CHECK(chain_signature(p) == std::vector<NodeId>{0, 1, 2, 1, 3});
}

TEST_CASE("strategic heterogeneity counts distinct success chains") {
  Task task = th::make_task("tk", {{"a", 1, {"x", "y"}},
                                   {"b", 1, {"x", "y"}},
                                   {"c", 1, {"p", "q"}},
                                   {"d", 0, {"x", "f"}}});
  auto g = build_quotient_graph(task, {});
  CHECK(strategic_heterogeneity(g) == 2.0 / 4.0);
  // the literal variant reduces to the raw pass ratio
  CHECK(strategic_heterogeneity(g, DivVariant::literal_pass_ratio) == 3.0 / 4.0);
}

TEST_CASE("loop collapse makes a detour equal to its loop-free twin") {
  Task task = th::make_task("tk", {{"a", 1, {"x", "x", "y"}}, {"b", 1, {"x", "y"}}});
  auto g = build_quotient_graph(task, {});
  CHECK(strategic_heterogeneity(g) == 1.0 / 2.0);
}

TEST_CASE("task scoring composes struct and diversity with alpha") {
  Task task = th::make_task("tk", {{"a", 1, {"h", "ok"}}, {"b", 0, {"h", "bad"}}});
  auto g = build_quotient_graph(task, {});
  RlConfig cfg;
  cfg.alpha = 2.0;
  auto s = score_task_rl(g, cfg);
  CHECK(s.task_id == "tk");
  CHECK(s.pass_rate == 0.5);
  CHECK(s.v_struct == 0.5);
  CHECK(s.v_div == 0.5);  // one distinct success chain over two trajectories
  CHECK(s.composite == 0.5 + 2.0 * 0.5);
  CHECK(s.p_select == 0.0);  // assigned later by the distribution step
}

namespace {

RlTaskScore task_score(const std::string& id, double composite) {
  RlTaskScore s;
  s.task_id = id;
  s.pass_rate = 0.5;
  s.composite = composite;
  return s;
}

}  // namespace

TEST_CASE("selection distribution is a softmax over composites") {
  std::vector<RlTaskScore> scores{task_score("a", 1.0), task_score("b", 2.0), task_score("c", 0.0)};
  auto dist = select_distribution(scores, {});
  double total = 0.0;
  for (const auto& [id, p] : dist) total += p;
  CHECK(total == Catch::Approx(1.0).epsilon(1e-12));
  CHECK(dist.at("b") > dist.at("a"));
  CHECK(dist.at("a") > dist.at("c"));
  // softmax identity on the gap
  CHECK(dist.at("b") / dist.at("a") == Catch::Approx(std::exp(1.0)).epsilon(1e-12));
}

TEST_CASE("selection distribution is exactly invariant to a constant shift") {
  // dyadic composites plus a dyadic shift keep every subtraction exact
  std::vector<RlTaskScore> base{task_score("a", 0.25), task_score("b", 1.125), task_score("c", 0.75)};
  std::vector<RlTaskScore> shifted = base;
  for (auto& s : shifted) s.composite += 64.0;
  auto d1 = select_distribution(base, {});
  auto d2 = select_distribution(shifted, {});
  for (const auto& [id, p] : d1) CHECK(d2.at(id) == p);
}

TEST_CASE("high temperature flattens toward uniform, low temperature sharpens") {
  std::vector<RlTaskScore> scores{task_score("a", 1.0), task_score("b", 3.0)};
  RlConfig hot;
  hot.temperature = 1e6;
  auto flat = select_distribution(scores, hot);
  CHECK(flat.at("a") == Catch::Approx(0.5).margin(1e-5));

  RlConfig cold;
  cold.temperature = 0.05;
  auto sharp = select_distribution(scores, cold);
  CHECK(sharp.at("b") > 0.999);
}

TEST_CASE("duplicate task ids are rejected") {
  std::vector<RlTaskScore> scores{task_score("a", 1.0), task_score("a", 2.0)};
  CHECK_THROWS_AS(select_distribution(scores, {}), DuplicateIdError);
}
