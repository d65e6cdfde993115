#pragma once

#include <map>
#include <string>
#include <vector>

#include "topocurate/corpus.hpp"

// Handcrafted fixtures: every distinct label becomes an orthogonal one-hot
// embedding, so the intended partition is unambiguous at any threshold.
namespace th {

using namespace topocurate;

struct TrajSpec {
  std::string id;
  int reward;
  std::vector<std::string> labels;
};

inline Task make_task(const std::string& task_id, const std::vector<TrajSpec>& specs) {
  std::map<std::string, std::size_t> index;
  for (const auto& s : specs)
    for (const auto& l : s.labels) index.emplace(l, index.size());
  const std::size_t dim = index.size() < 8 ? 8 : index.size();

  Task task;
  task.task_id = task_id;
  for (const auto& s : specs) {
    Trajectory tr;
    tr.traj_id = s.id;
    tr.reward = s.reward;
    for (const auto& l : s.labels) {
      Turn t;
      t.reasoning = "r";
      t.tool_name = "tool_" + l;
      t.tool_args = json{{"class", l}};
      t.observation = "obs " + l;
      std::vector<double> e(dim, 0.0);
      e[index[l]] = 1.0;
      t.tool_embedding = e;
      t.result_embedding = e;
      tr.turns.push_back(std::move(t));
    }
    task.trajectories.push_back(std::move(tr));
  }
  return task;
}

inline std::vector<double> onehot(std::size_t dim, std::size_t i, double scale = 1.0) {
  std::vector<double> v(dim, 0.0);
  v[i] = scale;
  return v;
}

}  // namespace th
