#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "json.hpp"

#include "topocurate/errors.hpp"

namespace topocurate {

using json = nlohmann::json;

// One tool call. Embeddings are optional per view; when absent downstream
// code falls back to hashed text features (see similarity.hpp).
struct Turn {
  std::string reasoning;
  std::string tool_name;
  json tool_args = json::object();
  std::string observation;
  std::optional<std::vector<double>> tool_embedding;
  std::optional<std::vector<double>> result_embedding;
};

struct Trajectory {
  std::string traj_id;
  int reward = 0;  // binary outcome
  std::vector<Turn> turns;
};

struct Task {
  std::string task_id;
  std::string intent;
  std::string context;
  std::vector<Trajectory> trajectories;
};

// Per-view embedding dimension observed across the whole corpus. nullopt for
// a view means no trajectory carries native embeddings on it.
struct EmbeddingDims {
  std::optional<std::size_t> tool;
  std::optional<std::size_t> result;
};

struct Corpus {
  std::vector<Task> tasks;  // order of first appearance in the file
  EmbeddingDims dims;

  const Task* find_task(const std::string& id) const {
    for (const auto& t : tasks)
      if (t.task_id == id) return &t;
    return nullptr;
  }
};

// Deterministic string form of a tool call: name + args serialized with
// sorted keys and no whitespace. Key order of the input object is irrelevant.
inline std::string canonicalize_action(const Turn& t) {
  return t.tool_name + "(" + t.tool_args.dump() + ")";
}

inline double pass_rate(const Task& task) {
  if (task.trajectories.empty()) throw EmptyTaskError("task '" + task.task_id + "' has no trajectories");
  std::size_t wins = 0;
  for (const auto& tr : task.trajectories) wins += tr.reward == 1 ? 1 : 0;
  return static_cast<double>(wins) / static_cast<double>(task.trajectories.size());
}

inline double pass_rate(const Corpus& c, const std::string& task_id) {
  const Task* t = c.find_task(task_id);
  if (!t) throw UnknownTaskError("unknown task '" + task_id + "'");
  return pass_rate(*t);
}

struct LoadOptions {
  bool skip_invalid = false;  // count and drop bad records instead of throwing
};

struct LoadStats {
  std::size_t lines = 0;
  std::size_t records = 0;
  std::size_t skipped = 0;
};

namespace detail {

inline const json& require_field(const json& j, const char* key, std::size_t line) {
  auto it = j.find(key);
  if (it == j.end()) throw SchemaError(line, std::string("missing field '") + key + "'");
  return *it;
}

inline std::string as_string(const json& j, const char* key, std::size_t line) {
  const json& v = require_field(j, key, line);
  if (!v.is_string()) throw SchemaError(line, std::string("field '") + key + "' must be a string");
  return v.get<std::string>();
}

inline std::vector<double> as_embedding(const json& v, const char* key, std::size_t line) {
  if (!v.is_array() || v.empty())
    throw SchemaError(line, std::string("field '") + key + "' must be a non-empty array");
  std::vector<double> out;
  out.reserve(v.size());
  for (const auto& x : v) {
    if (!x.is_number()) throw SchemaError(line, std::string("field '") + key + "' must contain numbers");
    double d = x.get<double>();
    if (!std::isfinite(d)) throw SchemaError(line, std::string("field '") + key + "' contains a non-finite value");
    out.push_back(d);
  }
  return out;
}

// Checks one view's presence/dimension against the corpus-wide state.
// `seen_any` distinguishes "no turn inspected yet" from "view absent".
inline void reconcile_view(const std::optional<std::vector<double>>& emb, const char* view,
                           bool& seen_any, std::optional<std::size_t>& dim, std::size_t line) {
  if (!seen_any) {
    seen_any = true;
    if (emb) dim = emb->size();
    return;
  }
  if (emb.has_value() != dim.has_value())
    throw DimensionError("line " + std::to_string(line) + ": " + view +
                         " embedding present on some turns but not others");
  if (emb && emb->size() != *dim)
    throw DimensionError("line " + std::to_string(line) + ": " + view + " embedding dimension " +
                         std::to_string(emb->size()) + " != corpus dimension " + std::to_string(*dim));
}

}  // namespace detail

// Parses one JSONL record. `line` is used for error messages only.
inline Trajectory parse_trajectory_record(const json& j, std::size_t line, std::string* task_id,
                                          std::string* intent, std::string* context) {
  if (!j.is_object()) throw SchemaError(line, "record must be a JSON object");
  *task_id = detail::as_string(j, "task_id", line);
  if (task_id->empty()) throw SchemaError(line, "task_id must be non-empty");
  if (auto it = j.find("intent"); it != j.end()) {
    if (!it->is_string()) throw SchemaError(line, "field 'intent' must be a string");
    *intent = it->get<std::string>();
  }
  if (auto it = j.find("context"); it != j.end()) {
    if (!it->is_string()) throw SchemaError(line, "field 'context' must be a string");
    *context = it->get<std::string>();
  }

  Trajectory tr;
  tr.traj_id = detail::as_string(j, "traj_id", line);
  if (tr.traj_id.empty()) throw SchemaError(line, "traj_id must be non-empty");

  const json& rew = detail::require_field(j, "reward", line);
  if (!rew.is_number_integer() && !rew.is_number_unsigned())
    throw SchemaError(line, "field 'reward' must be an integer");
  long long r = rew.get<long long>();
  if (r != 0 && r != 1) throw SchemaError(line, "field 'reward' must be 0 or 1");
  tr.reward = static_cast<int>(r);

  const json& turns = detail::require_field(j, "turns", line);
  if (!turns.is_array() || turns.empty()) throw SchemaError(line, "field 'turns' must be a non-empty array");
  tr.turns.reserve(turns.size());
  for (const auto& jt : turns) {
    if (!jt.is_object()) throw SchemaError(line, "turn must be a JSON object");
    Turn t;
    t.reasoning = detail::as_string(jt, "reasoning", line);
    t.tool_name = detail::as_string(jt, "tool_name", line);
    if (t.tool_name.empty()) throw SchemaError(line, "tool_name must be non-empty");
    const json& args = detail::require_field(jt, "tool_args", line);
    if (!args.is_object()) throw SchemaError(line, "field 'tool_args' must be a JSON object");
    t.tool_args = args;
    t.observation = detail::as_string(jt, "observation", line);
    if (auto it = jt.find("tool_embedding"); it != jt.end() && !it->is_null())
      t.tool_embedding = detail::as_embedding(*it, "tool_embedding", line);
    if (auto it = jt.find("result_embedding"); it != jt.end() && !it->is_null())
      t.result_embedding = detail::as_embedding(*it, "result_embedding", line);
    tr.turns.push_back(std::move(t));
  }
  return tr;
}

inline Corpus load_corpus(std::istream& in, const LoadOptions& opt = {}, LoadStats* stats = nullptr) {
  Corpus c;
  std::unordered_map<std::string, std::size_t> task_index;
  std::unordered_map<std::string, bool> seen_pair;  // "task\x1ftraj"
  bool seen_tool = false, seen_result = false;
  LoadStats local;
  std::string line;
  std::size_t line_no = 0;

  while (std::getline(in, line)) {
    ++line_no;
    ++local.lines;
    // Ignore blank lines; JSONL writers commonly end with one.
    std::string_view sv(line);
    if (sv.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    try {
      json j;
      try {
        j = json::parse(line);
      } catch (const json::exception& e) {
        throw SchemaError(line_no, std::string("invalid JSON: ") + e.what());
      }
      std::string task_id, intent, context;
      Trajectory tr = parse_trajectory_record(j, line_no, &task_id, &intent, &context);

      std::string pair_key = task_id + '\x1f' + tr.traj_id;
      if (seen_pair.count(pair_key))
        throw DuplicateIdError("line " + std::to_string(line_no) + ": duplicate trajectory '" +
                               tr.traj_id + "' in task '" + task_id + "'");

      for (std::size_t k = 0; k < tr.turns.size(); ++k) {
        detail::reconcile_view(tr.turns[k].tool_embedding, "tool", seen_tool, c.dims.tool, line_no);
        detail::reconcile_view(tr.turns[k].result_embedding, "result", seen_result, c.dims.result, line_no);
      }

      seen_pair.emplace(std::move(pair_key), true);
      auto it = task_index.find(task_id);
      if (it == task_index.end()) {
        it = task_index.emplace(task_id, c.tasks.size()).first;
        c.tasks.push_back(Task{task_id, intent, context, {}});
      }
      c.tasks[it->second].trajectories.push_back(std::move(tr));
      ++local.records;
    } catch (const ValidationError&) {
      if (!opt.skip_invalid) throw;
      ++local.skipped;
    }
  }
  if (stats) *stats = local;
  return c;
}

inline Corpus load_corpus(const std::string& path, const LoadOptions& opt = {}, LoadStats* stats = nullptr) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open corpus file '" + path + "'");
  return load_corpus(in, opt, stats);
}

inline json trajectory_record(const Task& task, const Trajectory& tr) {
  json rec;
  rec["task_id"] = task.task_id;
  rec["traj_id"] = tr.traj_id;
  rec["reward"] = tr.reward;
  if (!task.intent.empty()) rec["intent"] = task.intent;
  if (!task.context.empty()) rec["context"] = task.context;
  json turns = json::array();
  for (const auto& t : tr.turns) {
    json jt;
    jt["reasoning"] = t.reasoning;
    jt["tool_name"] = t.tool_name;
    jt["tool_args"] = t.tool_args;
    jt["observation"] = t.observation;
    if (t.tool_embedding) jt["tool_embedding"] = *t.tool_embedding;
    if (t.result_embedding) jt["result_embedding"] = *t.result_embedding;
    turns.push_back(std::move(jt));
  }
  rec["turns"] = std::move(turns);
  return rec;
}

// One record per line, trajectories grouped by task in corpus order. Numbers
// use the shortest round-trip form, so save/load/save is byte-stable.
inline void save_corpus(const Corpus& c, std::ostream& out) {
  for (const auto& task : c.tasks)
    for (const auto& tr : task.trajectories) out << trajectory_record(task, tr).dump() << '\n';
}

inline void save_corpus(const Corpus& c, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write corpus file '" + path + "'");
  save_corpus(c, out);
  if (!out.good()) throw IoError("short write to '" + path + "'");
}

}  // namespace topocurate
