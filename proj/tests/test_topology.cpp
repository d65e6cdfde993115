#include <catch2/catch_amalgamated.hpp>

#include "helpers.hpp"
#include "topocurate/testkit.hpp"
#include "topocurate/topology.hpp"

using namespace topocurate;

TEST_CASE("union-find merges transitively") {
  UnionFind uf(5);
  CHECK_FALSE(uf.connected(0, 4));
  uf.unite(0, 1);
  uf.unite(3, 4);
  uf.unite(1, 3);
  CHECK(uf.connected(0, 4));
  CHECK_FALSE(uf.connected(2, 0));
}

TEST_CASE("two identical successes collapse into one chain with visit count 2") {
  Task task = th::make_task("tk", {{"a", 1, {"x", "y"}}, {"b", 1, {"x", "y"}}});
  auto g = build_quotient_graph(task, {});
  REQUIRE(g.node_count() == 3);  // root, x, y
  CHECK(g.num_trajectories == 2);
  CHECK(g.visits[1] == 2);
  CHECK(g.visits[2] == 2);
  CHECK(g.phi[1] == 1.0);
  CHECK(g.phi[0] == 1.0);  // root sees two successes
  // both paths map to the same node sequence
  CHECK(project(g, task.trajectories[0]).nodes == project(g, task.trajectories[1]).nodes);
  // the shared edge keeps multiplicity
  CHECK(g.edges.at({1, 2}) == 2);
}

TEST_CASE("classes are numbered by first appearance and rebuilds are identical") {
  Task task = th::make_task("tk", {{"a", 1, {"x", "y", "z"}}, {"b", 0, {"z", "x"}}});
  auto g1 = build_quotient_graph(task, {});
  auto g2 = build_quotient_graph(task, {});
  CHECK(graph_to_json(g1).dump() == graph_to_json(g2).dump());
  CHECK(project(g1, task.trajectories[0]).nodes == std::vector<NodeId>{0, 1, 2, 3});
  CHECK(project(g1, task.trajectories[1]).nodes == std::vector<NodeId>{0, 3, 1});
}

TEST_CASE("phi mixes rewards per trajectory and respects smoothing") {
  Task task = th::make_task("tk", {{"a", 1, {"x"}}, {"b", 0, {"x"}}, {"c", 1, {"x"}}});
  auto g = build_quotient_graph(task, {});
  CHECK(g.phi[1] == 2.0 / 3.0);

  BuildOptions opt;
  opt.phi_laplace_k = 1.0;
  auto gs = build_quotient_graph(task, {}, opt);
  CHECK(gs.phi[1] == 3.0 / 5.0);  // (2+1)/(3+2)
  opt.phi_laplace_k = -1.0;
  CHECK_THROWS_AS(build_quotient_graph(task, {}, opt), ConfigError);
}

TEST_CASE("per-step counting weighs revisits, per-trajectory counting does not") {
  Task task = th::make_task("tk", {{"a", 1, {"x", "x"}}, {"b", 0, {"x"}}});
  auto g = build_quotient_graph(task, {});
  CHECK(g.phi[1] == 0.5);     // one winning trajectory of two
  CHECK(g.visits[1] == 2);    // visit counts stay per-trajectory
  BuildOptions opt;
  opt.phi_counting = PhiCounting::per_step;
  auto gs = build_quotient_graph(task, {}, opt);
  CHECK(gs.phi[1] == 2.0 / 3.0);  // two winning steps, one failing step
  CHECK(gs.visits[1] == 2);
}

TEST_CASE("empty tasks and empty trajectories are rejected") {
  Task empty;
  empty.task_id = "tk";
  CHECK_THROWS_AS(build_quotient_graph(empty, {}), EmptyTaskError);
  Task bad = th::make_task("tk", {{"a", 1, {"x"}}});
  bad.trajectories.push_back({"b", 1, {}});
  CHECK_THROWS_AS(build_quotient_graph(bad, {}), EmptyTaskError);
}

TEST_CASE("project rejects unknown trajectories") {
  Task task = th::make_task("tk", {{"a", 1, {"x"}}});
  auto g = build_quotient_graph(task, {});
  Trajectory ghost;
  ghost.traj_id = "ghost";
  CHECK_THROWS_AS(project(g, ghost), UnknownTrajectoryError);
}

TEST_CASE("bfs distances agree with the all-pairs oracle") {
  Task task = th::make_task("tk", {{"a", 1, {"x", "y", "x", "z"}},
                                   {"b", 1, {"x", "z"}},
                                   {"c", 0, {"y", "w"}}});
  auto g = build_quotient_graph(task, {});
  auto apsp = testkit::oracle_apsp(g);
  for (NodeId src = 0; src < g.node_count(); ++src) {
    auto hops = bfs_hops(g, src);
    for (NodeId dst = 0; dst < g.node_count(); ++dst) CHECK(hops[dst] == apsp[src][dst]);
  }
}

TEST_CASE("geodesic follows edge direction") {
  Task task = th::make_task("tk", {{"a", 1, {"x", "y"}}});
  auto g = build_quotient_graph(task, {});
  CHECK(geodesic(g, 0, 2) == std::uint32_t{2});
  CHECK(geodesic(g, 1, 1) == std::uint32_t{0});
  CHECK_FALSE(geodesic(g, 2, 0).has_value());  // no backward edges
}

TEST_CASE("popularity is the visit share and guards its domain") {
  Task task = th::make_task("tk", {{"a", 1, {"x"}}, {"b", 1, {"x"}}, {"c", 0, {"y"}}});
  auto g = build_quotient_graph(task, {});
  CHECK(popularity(g, 0) == 1.0);
  CHECK(popularity(g, 1) == 2.0 / 3.0);
  CHECK(popularity(g, 2) == 1.0 / 3.0);
  CHECK_THROWS_AS(popularity(g, 99), UnvisitedNodeError);
}

TEST_CASE("self-loops are kept as edges but never count as children") {
  Task task = th::make_task("tk", {{"a", 1, {"x", "x", "y"}}});
  auto g = build_quotient_graph(task, {});
  CHECK(g.edges.count({1, 1}) == 1);
  auto kids = g.children();
  CHECK(kids.at(1) == std::vector<NodeId>{2});
}

TEST_CASE("exact and lsh modes agree on a well-separated task") {
  Task task = th::make_task("tk", {{"a", 1, {"x", "y", "z"}},
                                   {"b", 1, {"x", "q"}},
                                   {"c", 0, {"y", "z", "q"}}});
  auto exact = build_quotient_graph(task, {});
  BuildOptions opt;
  opt.mode = MergeMode::lsh;
  auto lsh = build_quotient_graph(task, {}, opt);
  auto je = graph_to_json(exact), jl = graph_to_json(lsh);
  je.erase("mode");
  jl.erase("mode");
  CHECK(je.dump() == jl.dump());
}

TEST_CASE("engine partition equals the naive all-pairs oracle") {
  Task task = th::make_task("tk", {{"a", 1, {"x", "y", "x"}},
                                   {"b", 1, {"y", "z"}},
                                   {"c", 0, {"z", "x", "w"}}});
  std::vector<Turn> flat;
  for (const auto& tr : task.trajectories)
    for (const auto& t : tr.turns) flat.push_back(t);
  SimilarityConfig cfg;
  auto expected = testkit::oracle_merge(std::span<const Turn>(flat), cfg);
  auto g = build_quotient_graph(task, cfg);
  CHECK(testkit::partition_from_graph(task, g) == expected);
}

TEST_CASE("graph json round-trips byte for byte") {
  Task task = th::make_task("tk", {{"a", 1, {"x", "y"}}, {"b", 0, {"x", "x"}}});
  auto g = build_quotient_graph(task, {});
  auto doc = graph_to_json(g);
  CHECK(doc.at("schema") == "topocurate-graph/1");
  auto g2 = graph_from_json(doc);
  CHECK(graph_to_json(g2).dump() == doc.dump());
  CHECK(g2.num_trajectories == 2);
  CHECK(g2.phi == g.phi);
}

TEST_CASE("graph json validation rejects corrupt documents") {
  Task task = th::make_task("tk", {{"a", 1, {"x"}}});
  auto doc = graph_to_json(build_quotient_graph(task, {}));

  auto wrong_schema = doc;
  wrong_schema["schema"] = "something-else/9";
  CHECK_THROWS_AS(graph_from_json(wrong_schema), SchemaError);

  auto bad_node = doc;
  bad_node["paths"][0]["nodes"][1] = 99;
  CHECK_THROWS_AS(graph_from_json(bad_node), SchemaError);

  auto bad_root = doc;
  bad_root["paths"][0]["nodes"][0] = 1;
  CHECK_THROWS_AS(graph_from_json(bad_root), SchemaError);

  auto bad_count = doc;
  bad_count["num_trajectories"] = 5;
  CHECK_THROWS_AS(graph_from_json(bad_count), SchemaError);
}

TEST_CASE("dot output names the root and every class") {
  Task task = th::make_task("tk", {{"a", 1, {"x", "y"}}});
  auto g = build_quotient_graph(task, {});
  auto dot = graph_to_dot(g);
  CHECK(dot.find("digraph") != std::string::npos);
  CHECK(dot.find("doublecircle") != std::string::npos);
  CHECK(dot.find("n2") != std::string::npos);
}
