#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <deque>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "topocurate/corpus.hpp"
#include "topocurate/errors.hpp"
#include "topocurate/similarity.hpp"

namespace topocurate {

using NodeId = std::uint32_t;
inline constexpr NodeId kRootNode = 0;
inline constexpr std::uint32_t kUnreachable = 0xffffffffu;

class UnionFind {
 public:
  explicit UnionFind(std::size_t n) : parent_(n), size_(n, 1) {
    std::iota(parent_.begin(), parent_.end(), 0u);
  }

  std::uint32_t find(std::uint32_t x) {
    std::uint32_t root = x;
    while (parent_[root] != root) root = parent_[root];
    while (parent_[x] != root) {  // path compression
      std::uint32_t next = parent_[x];
      parent_[x] = root;
      x = next;
    }
    return root;
  }

  bool unite(std::uint32_t a, std::uint32_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return false;
    if (size_[a] < size_[b]) std::swap(a, b);
    parent_[b] = a;
    size_[a] += size_[b];
    return true;
  }

  bool connected(std::uint32_t a, std::uint32_t b) { return find(a) == find(b); }

 private:
  std::vector<std::uint32_t> parent_;
  std::vector<std::uint32_t> size_;
};

struct TurnRef {
  std::uint32_t trajectory = 0;  // index into Task::trajectories
  std::uint32_t turn = 0;
};

struct TrajectoryPath {
  std::string traj_id;
  int reward = 0;
  std::vector<NodeId> nodes;  // nodes[0] is always the virtual root
};

enum class MergeMode { exact, lsh };
enum class PhiCounting { per_trajectory, per_step };

inline const char* to_string(MergeMode m) { return m == MergeMode::exact ? "exact" : "lsh"; }

struct BuildOptions {
  MergeMode mode = MergeMode::exact;
  LshConfig lsh{};
  std::pair<double, double> view_weights{1.0, 1.0};
  double phi_laplace_k = 0.0;  // additive smoothing for phi; 0 keeps raw ratios
  PhiCounting phi_counting = PhiCounting::per_trajectory;
};

// Quotient of a task's turns under the two-view equivalence predicate, plus
// the projection of every trajectory onto it. Node 0 is a virtual root that
// every trajectory starts from; its phi is the task pass rate (unsmoothed
// case). A node's phi is the success share among the trajectories (or steps,
// under per_step counting) that visit it.
struct QuotientGraph {
  std::string task_id;
  std::string mode = "exact";
  std::uint32_t num_trajectories = 0;
  std::vector<std::vector<TurnRef>> members;  // per node; empty for the root and for loaded graphs
  std::vector<std::string> sample_actions;    // canonical action of the first member; "" for root
  std::map<std::pair<NodeId, NodeId>, std::uint64_t> edges;  // directed multi-edge counts, self-loops kept
  std::vector<std::uint32_t> visits;     // distinct trajectories through each node
  std::vector<std::uint32_t> successes;  // successful ones among those
  std::vector<double> phi;
  std::vector<TrajectoryPath> paths;  // one per trajectory, input order

  std::size_t node_count() const { return phi.size(); }

  // Distinct successors per node, self-loops dropped.
  std::vector<std::vector<NodeId>> children() const {
    std::vector<std::vector<NodeId>> out(node_count());
    for (const auto& [e, cnt] : edges) {
      (void)cnt;
      if (e.first != e.second) out[e.first].push_back(e.second);
    }
    return out;  // map order makes each list sorted and unique already
  }
};

inline QuotientGraph build_quotient_graph(const Task& task, const SimilarityConfig& sim,
                                          const BuildOptions& opt = {}) {
  sim.validate();
  if (task.trajectories.empty()) throw EmptyTaskError("task '" + task.task_id + "' has no trajectories");

  // Flatten turns; flat index order is trajectory-major and drives all
  // deterministic tie-breaking below.
  std::vector<TurnRef> flat;
  for (std::uint32_t ti = 0; ti < task.trajectories.size(); ++ti) {
    const auto& tr = task.trajectories[ti];
    if (tr.turns.empty())
      throw EmptyTaskError("trajectory '" + tr.traj_id + "' in task '" + task.task_id + "' has no turns");
    for (std::uint32_t k = 0; k < tr.turns.size(); ++k) flat.push_back({ti, k});
  }
  const std::size_t n = flat.size();

  std::vector<TurnEmbedding> emb;
  emb.reserve(n);
  for (const auto& ref : flat)
    emb.push_back(embed_turn(task.trajectories[ref.trajectory].turns[ref.turn], sim));

  // Merge verified-equivalent pairs. Pairs already connected are skipped
  // without re-checking; that cannot change the transitive closure.
  UnionFind uf(n);
  if (opt.mode == MergeMode::exact) {
    for (std::uint32_t i = 0; i + 1 < n; ++i)
      for (std::uint32_t j = i + 1; j < n; ++j)
        if (!uf.connected(i, j) && is_equivalent(emb[i], emb[j], sim)) uf.unite(i, j);
  } else {
    auto cands = lsh_candidates(std::span<const TurnEmbedding>(emb), opt.view_weights, opt.lsh);
    for (const auto& [i, j] : cands)
      if (!uf.connected(i, j) && is_equivalent(emb[i], emb[j], sim)) uf.unite(i, j);
  }

  // Number classes 1..K in order of each class's first appearance in the
  // flat scan (i.e. by smallest member index); 0 is the root.
  std::vector<NodeId> node_of(n, 0);
  std::map<std::uint32_t, NodeId> class_ids;  // UF representative -> node id
  for (std::uint32_t i = 0; i < n; ++i) {
    std::uint32_t r = uf.find(i);
    auto [it, fresh] = class_ids.emplace(r, static_cast<NodeId>(class_ids.size() + 1));
    (void)fresh;
    node_of[i] = it->second;
  }
  const std::size_t num_nodes = class_ids.size() + 1;

  QuotientGraph g;
  g.task_id = task.task_id;
  g.mode = to_string(opt.mode);
  g.num_trajectories = static_cast<std::uint32_t>(task.trajectories.size());
  g.members.assign(num_nodes, {});
  g.sample_actions.assign(num_nodes, "");
  g.visits.assign(num_nodes, 0);
  g.successes.assign(num_nodes, 0);
  for (std::uint32_t i = 0; i < n; ++i) {
    NodeId v = node_of[i];
    g.members[v].push_back(flat[i]);
    if (g.sample_actions[v].empty())
      g.sample_actions[v] = canonicalize_action(task.trajectories[flat[i].trajectory].turns[flat[i].turn]);
  }

  std::vector<std::uint32_t> step_visits(num_nodes, 0), step_successes(num_nodes, 0);
  std::vector<NodeId> seen;
  for (std::uint32_t ti = 0, fi = 0; ti < task.trajectories.size(); ++ti) {
    const auto& tr = task.trajectories[ti];
    TrajectoryPath path;
    path.traj_id = tr.traj_id;
    path.reward = tr.reward;
    path.nodes.reserve(tr.turns.size() + 1);
    path.nodes.push_back(kRootNode);
    for (std::uint32_t k = 0; k < tr.turns.size(); ++k, ++fi) path.nodes.push_back(node_of[fi]);

    for (std::size_t s = 0; s + 1 < path.nodes.size(); ++s)
      ++g.edges[{path.nodes[s], path.nodes[s + 1]}];

    seen.assign(path.nodes.begin(), path.nodes.end());
    std::sort(seen.begin(), seen.end());
    seen.erase(std::unique(seen.begin(), seen.end()), seen.end());
    for (NodeId v : seen) {
      ++g.visits[v];
      if (tr.reward == 1) ++g.successes[v];
    }
    for (NodeId v : path.nodes) {
      ++step_visits[v];
      if (tr.reward == 1) ++step_successes[v];
    }
    g.paths.push_back(std::move(path));
  }

  const double k = opt.phi_laplace_k;
  if (k < 0.0) throw ConfigError("phi_laplace_k must be >= 0");
  g.phi.resize(num_nodes);
  for (std::size_t v = 0; v < num_nodes; ++v) {
    double wins = opt.phi_counting == PhiCounting::per_trajectory ? g.successes[v] : step_successes[v];
    double total = opt.phi_counting == PhiCounting::per_trajectory ? g.visits[v] : step_visits[v];
    g.phi[v] = (wins + k) / (total + 2.0 * k);
  }
  return g;
}

inline const TrajectoryPath& project(const QuotientGraph& g, const Trajectory& tr) {
  for (const auto& p : g.paths)
    if (p.traj_id == tr.traj_id) return p;
  throw UnknownTrajectoryError("trajectory '" + tr.traj_id + "' is not part of task '" + g.task_id + "'");
}

// Hop distances from `src` over distinct directed edges; kUnreachable fills
// nodes with no path.
inline std::vector<std::uint32_t> bfs_hops(const QuotientGraph& g, NodeId src) {
  if (src >= g.node_count()) throw std::out_of_range("bfs_hops: node id out of range");
  auto adj = g.children();
  std::vector<std::uint32_t> dist(g.node_count(), kUnreachable);
  std::deque<NodeId> q{src};
  dist[src] = 0;
  while (!q.empty()) {
    NodeId u = q.front();
    q.pop_front();
    for (NodeId v : adj[u])
      if (dist[v] == kUnreachable) {
        dist[v] = dist[u] + 1;
        q.push_back(v);
      }
  }
  return dist;
}

inline std::optional<std::uint32_t> geodesic(const QuotientGraph& g, NodeId u, NodeId v) {
  if (u >= g.node_count() || v >= g.node_count())
    throw std::out_of_range("geodesic: node id out of range");
  std::uint32_t d = bfs_hops(g, u)[v];
  if (d == kUnreachable) return std::nullopt;
  return d;
}

// Fraction of the task's trajectories that pass through v.
inline double popularity(const QuotientGraph& g, NodeId v) {
  if (v >= g.node_count() || g.visits[v] == 0)
    throw UnvisitedNodeError("node " + std::to_string(v) + " has no recorded visits");
  return static_cast<double>(g.visits[v]) / static_cast<double>(g.num_trajectories);
}

inline json graph_to_json(const QuotientGraph& g) {
  json doc;
  doc["schema"] = "topocurate-graph/1";
  doc["task_id"] = g.task_id;
  doc["mode"] = g.mode;
  doc["num_trajectories"] = g.num_trajectories;
  json nodes = json::array();
  for (std::size_t v = 0; v < g.node_count(); ++v) {
    json n;
    n["id"] = v;
    n["phi"] = g.phi[v];
    n["visits"] = g.visits[v];
    n["successes"] = g.successes[v];
    n["sample_action"] = v < g.sample_actions.size() ? g.sample_actions[v] : "";
    nodes.push_back(std::move(n));
  }
  doc["nodes"] = std::move(nodes);
  json edges = json::array();
  for (const auto& [e, cnt] : g.edges) {
    json je;
    je["src"] = e.first;
    je["dst"] = e.second;
    je["count"] = cnt;
    edges.push_back(std::move(je));
  }
  doc["edges"] = std::move(edges);
  json paths = json::array();
  for (const auto& p : g.paths) {
    json jp;
    jp["traj_id"] = p.traj_id;
    jp["reward"] = p.reward;
    jp["nodes"] = p.nodes;
    paths.push_back(std::move(jp));
  }
  doc["paths"] = std::move(paths);
  return doc;
}

// Inverse of graph_to_json for pipeline stages that run from files. Member
// turn lists are not serialized, so they come back empty.
inline QuotientGraph graph_from_json(const json& doc) {
  if (!doc.is_object() || doc.value("schema", "") != std::string("topocurate-graph/1"))
    throw SchemaError(0, "expected a topocurate-graph/1 document");
  QuotientGraph g;
  try {
    g.task_id = doc.at("task_id").get<std::string>();
    g.mode = doc.value("mode", "exact");
    g.num_trajectories = doc.at("num_trajectories").get<std::uint32_t>();
    const json& nodes = doc.at("nodes");
    g.phi.resize(nodes.size());
    g.visits.resize(nodes.size());
    g.successes.resize(nodes.size());
    g.sample_actions.resize(nodes.size());
    g.members.resize(nodes.size());
    for (const auto& n : nodes) {
      std::size_t id = n.at("id").get<std::size_t>();
      if (id >= nodes.size()) throw SchemaError(0, "node id out of range");
      g.phi[id] = n.at("phi").get<double>();
      g.visits[id] = n.at("visits").get<std::uint32_t>();
      g.successes[id] = n.at("successes").get<std::uint32_t>();
      g.sample_actions[id] = n.value("sample_action", "");
    }
    for (const auto& e : doc.at("edges")) {
      NodeId s = e.at("src").get<NodeId>(), d = e.at("dst").get<NodeId>();
      if (s >= g.node_count() || d >= g.node_count()) throw SchemaError(0, "edge endpoint out of range");
      g.edges[{s, d}] = e.at("count").get<std::uint64_t>();
    }
    for (const auto& p : doc.at("paths")) {
      TrajectoryPath tp;
      tp.traj_id = p.at("traj_id").get<std::string>();
      tp.reward = p.at("reward").get<int>();
      tp.nodes = p.at("nodes").get<std::vector<NodeId>>();
      if (tp.nodes.empty() || tp.nodes[0] != kRootNode)
        throw SchemaError(0, "path for '" + tp.traj_id + "' must start at the root node");
      for (NodeId v : tp.nodes)
        if (v >= g.node_count()) throw SchemaError(0, "path node out of range");
      g.paths.push_back(std::move(tp));
    }
  } catch (const json::exception& e) {
    throw SchemaError(0, std::string("malformed graph document: ") + e.what());
  }
  if (g.num_trajectories != g.paths.size())
    throw SchemaError(0, "num_trajectories does not match path count");
  return g;
}

inline std::string graph_to_dot(const QuotientGraph& g) {
  std::ostringstream out;
  out << "digraph quotient {\n  rankdir=LR;\n  node [shape=circle, fontsize=10];\n";
  for (std::size_t v = 0; v < g.node_count(); ++v) {
    char phi[32];
    std::snprintf(phi, sizeof phi, "%.3f", g.phi[v]);
    out << "  n" << v << " [label=\"" << (v == kRootNode ? "root" : "v" + std::to_string(v))
        << "\\nphi=" << phi << "\\nvisits=" << g.visits[v] << "\"";
    if (v == kRootNode) out << ", shape=doublecircle";
    out << "];\n";
  }
  for (const auto& [e, cnt] : g.edges)
    out << "  n" << e.first << " -> n" << e.second << " [label=\"" << cnt << "\"];\n";
  out << "}\n";
  return out.str();
}

}  // namespace topocurate
