#pragma once

#include <algorithm>
#include <atomic>
#include <cctype>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "CLI11.hpp"

#include "topocurate/corpus.hpp"
#include "topocurate/errors.hpp"
#include "topocurate/metrics_rl.hpp"
#include "topocurate/metrics_sft.hpp"
#include "topocurate/selector.hpp"
#include "topocurate/similarity.hpp"
#include "topocurate/testkit.hpp"
#include "topocurate/topology.hpp"

namespace topocurate {

namespace fs = std::filesystem;

// Union of every stage's knobs. A flat key=value config file can preload any
// of them; command-line flags override file values, which override defaults.
struct PipelineConfig {
  std::string input;
  std::string output;
  std::string graphs_dir;
  std::string lsh_graphs_dir;
  std::string scores_path;
  std::string scores_sft_path;
  std::string scores_rl_path;

  unsigned jobs = 1;
  std::uint64_t seed = 0;
  bool seed_given = false;
  MergeMode mode = MergeMode::exact;
  bool skip_invalid = false;
  bool explain = false;
  bool emit_dot = false;
  bool strict = true;

  SimilarityConfig sim{};
  LshConfig lsh{};
  std::pair<double, double> view_weights{1.0, 1.0};
  double phi_laplace_k = 0.0;
  PhiCounting phi_counting = PhiCounting::per_trajectory;

  SftConfig sft{};
  SftWeights weights{};
  RlConfig rl{};

  std::optional<std::pair<double, double>> band;  // overrides the kind-relevant band
  std::uint64_t budget = 1;
  std::optional<std::uint32_t> per_task_cap;
  SelectStrategy strategy = SelectStrategy::top_weight;
  std::string kind = "sft";
};

namespace pipe_detail {

inline std::string fmt_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

inline std::string sanitize_filename(const std::string& s) {
  std::string out;
  for (char c : s)
    out += std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.' ? c : '_';
  return out.empty() ? "task" : out;
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw SchemaError(0, "invalid JSON in '" + path + "': " + e.what());
  }
}

inline void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << content;
  if (!out.good()) throw IoError("short write to '" + path + "'");
}

inline std::vector<std::string> list_graph_files(const std::string& dir) {
  if (!fs::is_directory(dir)) throw IoError("'" + dir + "' is not a directory");
  std::vector<std::string> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (name.size() > 11 && name.substr(name.size() - 11) == ".graph.json")
      files.push_back(entry.path().string());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw IoError("no *.graph.json files in '" + dir + "'");
  return files;
}

// Work-stealing loop over [0, n). Results must be written to preallocated
// slots so output order never depends on scheduling.
template <typename F>
inline void parallel_for(std::size_t n, unsigned jobs, F&& f) {
  if (n == 0) return;
  std::size_t workers = std::max(1u, jobs);
  workers = std::min(workers, n);
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::mutex err_mu;
  std::exception_ptr err;
  auto body = [&] {
    for (;;) {
      std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        f(i);
      } catch (...) {
        std::lock_guard<std::mutex> lk(err_mu);
        if (!err) err = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> threads;
  for (std::size_t w = 0; w < workers; ++w) threads.emplace_back(body);
  for (auto& t : threads) t.join();
  if (err) std::rethrow_exception(err);
}

inline std::pair<double, double> parse_pair(const std::string& s, const char* flag) {
  auto comma = s.find(',');
  if (comma == std::string::npos) throw ConfigError(std::string(flag) + " expects 'a,b'");
  try {
    return {std::stod(s.substr(0, comma)), std::stod(s.substr(comma + 1))};
  } catch (const std::exception&) {
    throw ConfigError(std::string(flag) + " expects two numbers");
  }
}

inline void parse_lambda(const std::string& s, SftWeights& w) {
  std::vector<double> vals;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      vals.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw ConfigError("--lambda expects numbers");
    }
  }
  if (vals.size() != 3) throw ConfigError("--lambda expects 'eff,rare,ref'");
  w.lambda_eff = vals[0];
  w.lambda_rare = vals[1];
  w.lambda_ref = vals[2];
}

inline bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config key '" + key + "' expects a boolean, got '" + v + "'");
}

}  // namespace pipe_detail

// Flat `key = value` file, one entry per line, '#' comments. Keys mirror the
// long flag names with underscores.
inline void load_config_file(const std::string& path, PipelineConfig& cfg) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file '" + path + "'");
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    auto trim = [](std::string s) {
      auto b = s.find_first_not_of(" \t\r");
      auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) throw SchemaError(line_no, "expected 'key = value' in config file");
    std::string key = trim(line.substr(0, eq));
    std::string val = trim(line.substr(eq + 1));
    if (val.size() >= 2 && ((val.front() == '"' && val.back() == '"') || (val.front() == '\'' && val.back() == '\'')))
      val = val.substr(1, val.size() - 2);

    using pipe_detail::parse_bool;
    try {
      if (key == "input") cfg.input = val;
      else if (key == "output") cfg.output = val;
      else if (key == "graphs") cfg.graphs_dir = val;
      else if (key == "lsh_graphs") cfg.lsh_graphs_dir = val;
      else if (key == "scores") cfg.scores_path = val;
      else if (key == "scores_sft") cfg.scores_sft_path = val;
      else if (key == "scores_rl") cfg.scores_rl_path = val;
      else if (key == "jobs") cfg.jobs = static_cast<unsigned>(std::stoul(val));
      else if (key == "seed") { cfg.seed = std::stoull(val); cfg.seed_given = true; }
      else if (key == "lsh_seed") cfg.lsh.seed = std::stoull(val);
      else if (key == "mode") {
        if (val != "exact" && val != "lsh") throw ConfigError("mode must be 'exact' or 'lsh'");
        cfg.mode = val == "exact" ? MergeMode::exact : MergeMode::lsh;
      } else if (key == "kind") {
        if (val != "sft" && val != "rl") throw ConfigError("kind must be 'sft' or 'rl'");
        cfg.kind = val;
      } else if (key == "strategy") {
        if (val == "top-weight") cfg.strategy = SelectStrategy::top_weight;
        else if (val == "seeded-sample") cfg.strategy = SelectStrategy::seeded_sample;
        else throw ConfigError("strategy must be 'top-weight' or 'seeded-sample'");
      } else if (key == "budget") cfg.budget = std::stoull(val);
      else if (key == "per_task_cap") cfg.per_task_cap = static_cast<std::uint32_t>(std::stoul(val));
      else if (key == "delta_tool") cfg.sim.delta_tool = std::stod(val);
      else if (key == "delta_result") cfg.sim.delta_result = std::stod(val);
      else if (key == "feature_dim") cfg.sim.feature_dim = std::stoul(val);
      else if (key == "lsh_bands") cfg.lsh.num_bands = static_cast<std::uint32_t>(std::stoul(val));
      else if (key == "lsh_hyperplanes") cfg.lsh.hyperplanes_per_band = static_cast<std::uint32_t>(std::stoul(val));
      else if (key == "view_weight_tool") cfg.view_weights.first = std::stod(val);
      else if (key == "view_weight_result") cfg.view_weights.second = std::stod(val);
      else if (key == "phi_laplace_k") cfg.phi_laplace_k = std::stod(val);
      else if (key == "phi_counting") {
        if (val == "trajectory") cfg.phi_counting = PhiCounting::per_trajectory;
        else if (val == "step") cfg.phi_counting = PhiCounting::per_step;
        else throw ConfigError("phi_counting must be 'trajectory' or 'step'");
      } else if (key == "eps_dip") cfg.sft.eps_dip = std::stod(val);
      else if (key == "srare_denominator") {
        if (val == "distinct-nodes") cfg.sft.srare_denominator = SrareDenominator::distinct_nodes;
        else if (val == "turns") cfg.sft.srare_denominator = SrareDenominator::turns;
        else throw ConfigError("srare_denominator must be 'distinct-nodes' or 'turns'");
      } else if (key == "lambda_eff") cfg.weights.lambda_eff = std::stod(val);
      else if (key == "lambda_rare") cfg.weights.lambda_rare = std::stod(val);
      else if (key == "lambda_ref") cfg.weights.lambda_ref = std::stod(val);
      else if (key == "eps_fail") cfg.rl.eps_fail = std::stod(val);
      else if (key == "alpha") cfg.rl.alpha = std::stod(val);
      else if (key == "temperature") cfg.rl.temperature = std::stod(val);
      else if (key == "div_variant") {
        if (val == "unique-chain") cfg.rl.div_variant = DivVariant::unique_chain;
        else if (val == "literal") cfg.rl.div_variant = DivVariant::literal_pass_ratio;
        else throw ConfigError("div_variant must be 'unique-chain' or 'literal'");
      } else if (key == "band_min") {
        auto b = cfg.band.value_or(std::pair<double, double>{0.0, 1.0});
        b.first = std::stod(val);
        cfg.band = b;
      } else if (key == "band_max") {
        auto b = cfg.band.value_or(std::pair<double, double>{0.0, 1.0});
        b.second = std::stod(val);
        cfg.band = b;
      } else if (key == "skip_invalid") cfg.skip_invalid = parse_bool(val, key);
      else if (key == "explain") cfg.explain = parse_bool(val, key);
      else if (key == "dot") cfg.emit_dot = parse_bool(val, key);
      else if (key == "strict") cfg.strict = parse_bool(val, key);
      else throw ConfigError("unknown config key '" + key + "'");
    } catch (const std::invalid_argument&) {
      throw SchemaError(line_no, "bad value for config key '" + key + "'");
    } catch (const std::out_of_range&) {
      throw SchemaError(line_no, "value out of range for config key '" + key + "'");
    }
  }
}

namespace pipe_detail {

inline std::string similarity_echo(const PipelineConfig& cfg) {
  std::ostringstream os;
  os << "mode=" << to_string(cfg.mode) << " delta_tool=" << fmt_double(cfg.sim.delta_tool)
     << " delta_result=" << fmt_double(cfg.sim.delta_result) << " feature_dim=" << cfg.sim.feature_dim
     << " view_weights=" << fmt_double(cfg.view_weights.first) << ','
     << fmt_double(cfg.view_weights.second);
  if (cfg.mode == MergeMode::lsh)
    os << " lsh_bands=" << cfg.lsh.num_bands << " lsh_hyperplanes=" << cfg.lsh.hyperplanes_per_band
       << " lsh_seed=" << cfg.lsh.seed;
  os << " phi_counting=" << (cfg.phi_counting == PhiCounting::per_trajectory ? "trajectory" : "step")
     << " phi_laplace_k=" << fmt_double(cfg.phi_laplace_k);
  return os.str();
}

inline BuildOptions build_options(const PipelineConfig& cfg) {
  BuildOptions opt;
  opt.mode = cfg.mode;
  opt.lsh = cfg.lsh;
  opt.view_weights = cfg.view_weights;
  opt.phi_laplace_k = cfg.phi_laplace_k;
  opt.phi_counting = cfg.phi_counting;
  return opt;
}

// Joint-class pair counting: recall of the candidate partition against the
// reference partition without materializing pair sets.
inline double partition_recall(const QuotientGraph& exact, const QuotientGraph& lsh) {
  std::map<std::string, const TrajectoryPath*> by_id;
  for (const auto& p : exact.paths) by_id[p.traj_id] = &p;
  std::map<NodeId, std::uint64_t> exact_sizes;
  std::map<std::pair<NodeId, NodeId>, std::uint64_t> joint;
  for (const auto& lp : lsh.paths) {
    auto it = by_id.find(lp.traj_id);
    if (it == by_id.end() || it->second->nodes.size() != lp.nodes.size())
      throw ValidationError("graphs for task '" + exact.task_id + "' cover different trajectories");
    for (std::size_t k = 1; k < lp.nodes.size(); ++k) {
      ++exact_sizes[it->second->nodes[k]];
      ++joint[{it->second->nodes[k], lp.nodes[k]}];
    }
  }
  auto pairs2 = [](std::uint64_t m) { return m * (m - 1) / 2; };
  std::uint64_t truth = 0, caught = 0;
  for (const auto& [node, m] : exact_sizes) truth += pairs2(m);
  for (const auto& [key, m] : joint) caught += pairs2(m);
  return truth == 0 ? 1.0 : static_cast<double>(caught) / static_cast<double>(truth);
}

}  // namespace pipe_detail

inline int cmd_build(const PipelineConfig& cfg) {
  using namespace pipe_detail;
  if (cfg.input.empty()) throw ConfigError("build needs --in <corpus.jsonl>");
  if (cfg.output.empty()) throw ConfigError("build needs --out <directory>");
  cfg.sim.validate();
  if (cfg.mode == MergeMode::lsh) cfg.lsh.validate();

  LoadStats stats;
  Corpus corpus = load_corpus(cfg.input, LoadOptions{cfg.skip_invalid}, &stats);
  if (corpus.tasks.empty()) throw ValidationError("corpus '" + cfg.input + "' contains no tasks");

  std::cout << "config: " << similarity_echo(cfg) << " jobs=" << cfg.jobs
            << " skip_invalid=" << (cfg.skip_invalid ? "true" : "false") << "\n";
  if (stats.skipped > 0)
    std::cerr << "warning: skipped " << stats.skipped << " invalid record(s) out of " << stats.lines
              << " line(s)\n";

  const BuildOptions opt = build_options(cfg);
  std::vector<QuotientGraph> graphs(corpus.tasks.size());
  parallel_for(corpus.tasks.size(), cfg.jobs,
               [&](std::size_t i) { graphs[i] = build_quotient_graph(corpus.tasks[i], cfg.sim, opt); });

  fs::create_directories(cfg.output);
  std::map<std::string, int> used;
  for (std::size_t i = 0; i < graphs.size(); ++i) {
    std::string base = sanitize_filename(corpus.tasks[i].task_id);
    int& n = used[base];
    ++n;
    if (n > 1) base += "_" + std::to_string(n);
    const fs::path stem = fs::path(cfg.output) / base;
    write_text_file((stem.string() + ".graph.json"), graph_to_json(graphs[i]).dump(2) + "\n");
    if (cfg.emit_dot) write_text_file(stem.string() + ".dot", graph_to_dot(graphs[i]));
    std::cout << "task " << corpus.tasks[i].task_id << ": " << graphs[i].node_count() << " nodes, "
              << graphs[i].edges.size() << " edges, " << graphs[i].num_trajectories
              << " trajectories -> " << base << ".graph.json\n";
  }
  std::cout << "built " << graphs.size() << " graph(s) from " << stats.records << " record(s)\n";
  return 0;
}

namespace pipe_detail {

inline std::vector<QuotientGraph> load_graphs(const std::string& dir) {
  auto files = list_graph_files(dir);
  std::vector<QuotientGraph> graphs;
  graphs.reserve(files.size());
  for (const auto& f : files) {
    try {
      graphs.push_back(graph_from_json(read_json_file(f)));
    } catch (const SchemaError& e) {
      throw SchemaError(0, std::string(e.what()) + " (in '" + f + "')");
    }
  }
  return graphs;
}

inline std::pair<std::string, std::string> csv_json_outputs(const std::string& out) {
  fs::path p(out);
  if (p.extension() == ".json") {
    fs::path c = p;
    c.replace_extension(".csv");
    return {c.string(), p.string()};
  }
  if (p.extension() == ".csv") {
    fs::path j = p;
    j.replace_extension(".json");
    return {p.string(), j.string()};
  }
  return {out + ".csv", out + ".json"};
}

}  // namespace pipe_detail

inline int cmd_score_sft(const PipelineConfig& cfg) {
  using namespace pipe_detail;
  if (cfg.graphs_dir.empty()) throw ConfigError("score-sft needs --graphs <dir>");
  if (cfg.output.empty()) throw ConfigError("score-sft needs --out <path>");
  cfg.sft.validate();
  cfg.weights.validate();

  auto graphs = load_graphs(cfg.graphs_dir);
  std::vector<std::vector<RawSftRow>> per_task(graphs.size());
  parallel_for(graphs.size(), cfg.jobs,
               [&](std::size_t i) { per_task[i] = score_task_sft(graphs[i], cfg.sft); });
  std::vector<RawSftRow> rows;
  for (auto& r : per_task) rows.insert(rows.end(), r.begin(), r.end());
  auto scored = composite_and_sampling(std::span<const RawSftRow>(rows), cfg.weights);

  std::ostringstream echo;
  echo << "lambda=" << fmt_double(cfg.weights.lambda_eff) << ',' << fmt_double(cfg.weights.lambda_rare)
       << ',' << fmt_double(cfg.weights.lambda_ref) << " eps_dip=" << fmt_double(cfg.sft.eps_dip)
       << " srare_denominator="
       << (cfg.sft.srare_denominator == SrareDenominator::distinct_nodes ? "distinct-nodes" : "turns");
  std::cout << "config: " << echo.str() << " jobs=" << cfg.jobs << "\n";

  bool degenerate = !scored.empty();
  for (const auto& s : scored)
    if (s.w != 0.0) degenerate = false;
  if (degenerate)
    std::cerr << "warning: all metrics are constant across the pool; sampling weights are uniform\n";

  std::ostringstream csv;
  csv << "# topocurate score-sft " << echo.str() << "\n";
  csv << "task_id,traj_id,reward,s_ref,s_eff,s_rare,z_ref,z_eff,z_rare,w,sampling_weight\n";
  for (const auto& s : scored)
    csv << csv_escape(s.task_id) << ',' << csv_escape(s.traj_id) << ',' << s.reward << ','
        << fmt_double(s.s_ref) << ',' << fmt_double(s.s_eff) << ',' << fmt_double(s.s_rare) << ','
        << fmt_double(s.z_ref) << ',' << fmt_double(s.z_eff) << ',' << fmt_double(s.z_rare) << ','
        << fmt_double(s.w) << ',' << fmt_double(s.sampling_weight) << "\n";

  json mirror;
  mirror["schema"] = "topocurate-scores-sft/1";
  mirror["config"] = {{"lambda_eff", cfg.weights.lambda_eff},
                      {"lambda_rare", cfg.weights.lambda_rare},
                      {"lambda_ref", cfg.weights.lambda_ref},
                      {"eps_dip", cfg.sft.eps_dip},
                      {"srare_denominator",
                       cfg.sft.srare_denominator == SrareDenominator::distinct_nodes ? "distinct-nodes"
                                                                                     : "turns"}};
  json jrows = json::array();
  for (const auto& s : scored) {
    json r;
    r["task_id"] = s.task_id;
    r["traj_id"] = s.traj_id;
    r["reward"] = s.reward;
    r["s_ref"] = s.s_ref;
    r["s_eff"] = s.s_eff;
    r["s_rare"] = s.s_rare;
    r["z_ref"] = s.z_ref;
    r["z_eff"] = s.z_eff;
    r["z_rare"] = s.z_rare;
    r["w"] = s.w;
    r["sampling_weight"] = s.sampling_weight;
    jrows.push_back(std::move(r));
  }
  mirror["rows"] = std::move(jrows);

  auto [csv_path, json_path] = csv_json_outputs(cfg.output);
  write_text_file(csv_path, csv.str());
  write_text_file(json_path, mirror.dump(2) + "\n");
  std::cout << "scored " << scored.size() << " trajectories across " << graphs.size() << " task(s) -> "
            << csv_path << "\n";
  return 0;
}

inline int cmd_score_rl(const PipelineConfig& cfg) {
  using namespace pipe_detail;
  if (cfg.graphs_dir.empty()) throw ConfigError("score-rl needs --graphs <dir>");
  if (cfg.output.empty()) throw ConfigError("score-rl needs --out <path>");
  RlConfig rl = cfg.rl;
  if (cfg.band) rl.band = *cfg.band;
  rl.validate();

  auto graphs = load_graphs(cfg.graphs_dir);
  std::vector<RlTaskScore> scores(graphs.size());
  parallel_for(graphs.size(), cfg.jobs, [&](std::size_t i) { scores[i] = score_task_rl(graphs[i], rl); });

  std::vector<RlTaskScore> in_band;
  for (const auto& s : scores)
    if (s.pass_rate >= rl.band.first && s.pass_rate <= rl.band.second) in_band.push_back(s);
  if (in_band.empty()) {
    std::cerr << "warning: no tasks fall in the pass-rate band [" << fmt_double(rl.band.first) << ", "
              << fmt_double(rl.band.second) << "]\n";
  } else {
    auto dist = select_distribution(std::span<const RlTaskScore>(in_band), rl);
    for (auto& s : scores) {
      auto it = dist.find(s.task_id);
      if (it != dist.end()) s.p_select = it->second;
    }
  }

  std::ostringstream echo;
  echo << "eps_fail=" << fmt_double(rl.eps_fail) << " alpha=" << fmt_double(rl.alpha)
       << " temperature=" << fmt_double(rl.temperature) << " band=" << fmt_double(rl.band.first) << ','
       << fmt_double(rl.band.second) << " div_variant="
       << (rl.div_variant == DivVariant::unique_chain ? "unique-chain" : "literal");
  std::cout << "config: " << echo.str() << " jobs=" << cfg.jobs << "\n";

  std::ostringstream csv;
  csv << "# topocurate score-rl " << echo.str() << "\n";
  csv << "task_id,pass_rate,v_struct,v_div,composite,p_select\n";
  for (const auto& s : scores)
    csv << csv_escape(s.task_id) << ',' << fmt_double(s.pass_rate) << ',' << fmt_double(s.v_struct)
        << ',' << fmt_double(s.v_div) << ',' << fmt_double(s.composite) << ','
        << fmt_double(s.p_select) << "\n";

  json mirror;
  mirror["schema"] = "topocurate-scores-rl/1";
  mirror["config"] = {{"eps_fail", rl.eps_fail},
                      {"alpha", rl.alpha},
                      {"temperature", rl.temperature},
                      {"band", {rl.band.first, rl.band.second}},
                      {"div_variant", rl.div_variant == DivVariant::unique_chain ? "unique-chain" : "literal"}};
  json jrows = json::array();
  for (const auto& s : scores) {
    json r;
    r["task_id"] = s.task_id;
    r["pass_rate"] = s.pass_rate;
    r["v_struct"] = s.v_struct;
    r["v_div"] = s.v_div;
    r["composite"] = s.composite;
    r["p_select"] = s.p_select;
    jrows.push_back(std::move(r));
  }
  mirror["rows"] = std::move(jrows);

  auto [csv_path, json_path] = csv_json_outputs(cfg.output);
  write_text_file(csv_path, csv.str());
  write_text_file(json_path, mirror.dump(2) + "\n");
  std::cout << "scored " << scores.size() << " task(s), " << in_band.size() << " in band -> " << csv_path
            << "\n";
  return 0;
}

inline int cmd_select(const PipelineConfig& cfg) {
  using namespace pipe_detail;
  if (cfg.scores_path.empty()) throw ConfigError("select needs --scores <scores.json>");
  if (cfg.output.empty()) throw ConfigError("select needs --out <manifest.json>");

  SelectionConfig sel;
  sel.budget = cfg.budget;
  sel.per_task_cap = cfg.per_task_cap;
  sel.strategy = cfg.strategy;
  sel.seed = cfg.seed;
  sel.strict = cfg.strict;
  if (cfg.band) {
    sel.sft_band = *cfg.band;
    sel.rl_band = *cfg.band;
  }
  sel.validate();

  const json doc = read_json_file(cfg.scores_path);
  const std::string schema = doc.is_object() ? doc.value("schema", "") : "";
  json manifest;
  manifest["schema"] = "topocurate-selection/1";
  manifest["kind"] = cfg.kind;
  manifest["config"] = {{"budget", cfg.budget},
                        {"strategy", cfg.strategy == SelectStrategy::top_weight ? "top-weight" : "seeded-sample"},
                        {"seed", cfg.seed},
                        {"strict", cfg.strict}};
  if (cfg.per_task_cap) manifest["config"]["per_task_cap"] = *cfg.per_task_cap;

  std::size_t pool_size = 0, chosen = 0;
  bool truncated = false;
  if (cfg.kind == "sft") {
    if (schema != "topocurate-scores-sft/1")
      throw SchemaError(0, "'" + cfg.scores_path + "' is not a topocurate-scores-sft/1 document");
    std::vector<SftScore> rows;
    try {
      for (const auto& r : doc.at("rows")) {
        SftScore s;
        s.task_id = r.at("task_id").get<std::string>();
        s.traj_id = r.at("traj_id").get<std::string>();
        s.reward = r.at("reward").get<int>();
        s.s_ref = r.at("s_ref").get<double>();
        s.s_eff = r.at("s_eff").get<double>();
        s.s_rare = r.at("s_rare").get<double>();
        s.z_ref = r.at("z_ref").get<double>();
        s.z_eff = r.at("z_eff").get<double>();
        s.z_rare = r.at("z_rare").get<double>();
        s.w = r.at("w").get<double>();
        s.sampling_weight = r.at("sampling_weight").get<double>();
        rows.push_back(std::move(s));
      }
    } catch (const json::exception& e) {
      throw SchemaError(0, std::string("malformed scores document: ") + e.what());
    }
    manifest["config"]["band"] = {sel.sft_band.first, sel.sft_band.second};
    auto res = select_trajectories(std::span<const SftScore>(rows), sel);
    pool_size = rows.size();
    chosen = res.selected.size();
    truncated = res.truncated;
    json sel_json = json::array();
    for (const auto& s : res.selected)
      sel_json.push_back({{"task_id", s.task_id}, {"traj_id", s.traj_id}, {"sampling_weight", s.sampling_weight}});
    manifest["selected"] = std::move(sel_json);
    if (cfg.explain) {
      json ex = json::array();
      for (const auto& e : res.excluded)
        ex.push_back({{"task_id", e.task_id}, {"traj_id", e.traj_id}, {"reason", e.reason}});
      manifest["excluded"] = std::move(ex);
    }
  } else if (cfg.kind == "rl") {
    if (schema != "topocurate-scores-rl/1")
      throw SchemaError(0, "'" + cfg.scores_path + "' is not a topocurate-scores-rl/1 document");
    std::vector<RlTaskScore> rows;
    try {
      for (const auto& r : doc.at("rows")) {
        RlTaskScore s;
        s.task_id = r.at("task_id").get<std::string>();
        s.pass_rate = r.at("pass_rate").get<double>();
        s.v_struct = r.at("v_struct").get<double>();
        s.v_div = r.at("v_div").get<double>();
        s.composite = r.at("composite").get<double>();
        s.p_select = r.at("p_select").get<double>();
        rows.push_back(std::move(s));
      }
    } catch (const json::exception& e) {
      throw SchemaError(0, std::string("malformed scores document: ") + e.what());
    }
    manifest["config"]["band"] = {sel.rl_band.first, sel.rl_band.second};
    auto res = select_tasks(std::span<const RlTaskScore>(rows), cfg.budget, sel);
    pool_size = rows.size();
    chosen = res.selected.size();
    truncated = res.truncated;
    json sel_json = json::array();
    for (const auto& id : res.selected)
      sel_json.push_back({{"task_id", id}, {"probability", res.probabilities.at(id)}});
    manifest["selected"] = std::move(sel_json);
    if (cfg.explain) {
      json ex = json::array();
      for (const auto& e : res.excluded) ex.push_back({{"task_id", e.task_id}, {"reason", e.reason}});
      manifest["excluded"] = std::move(ex);
    }
  } else {
    throw ConfigError("--kind must be 'sft' or 'rl'");
  }

  manifest["truncated"] = truncated;
  if (truncated) std::cerr << "warning: pool smaller than budget; selection truncated\n";
  write_text_file(cfg.output, manifest.dump(2) + "\n");
  std::cout << "selected " << chosen << " of " << pool_size << " (" << cfg.kind << ") -> " << cfg.output
            << "\n";
  return 0;
}

inline int cmd_synth(const PipelineConfig& cfg) {
  using namespace pipe_detail;
  if (cfg.input.empty()) throw ConfigError("synth needs --spec <planted.json>");
  if (cfg.output.empty()) throw ConfigError("synth needs --out <corpus.jsonl>");

  auto spec = testkit::spec_from_json(read_json_file(cfg.input));
  if (cfg.seed_given) spec.seed = cfg.seed;
  auto gen = testkit::generate(spec);

  save_corpus(gen.corpus, cfg.output);
  fs::path gt_path(cfg.output);
  gt_path.replace_extension("");
  gt_path += ".gt.json";
  write_text_file(gt_path.string(), testkit::ground_truth_to_json(gen.truth).dump(2) + "\n");

  std::size_t trajs = 0, turns = 0;
  for (const auto& t : gen.corpus.tasks) {
    trajs += t.trajectories.size();
    for (const auto& tr : t.trajectories) turns += tr.turns.size();
  }
  std::cout << "config: seed=" << spec.seed << " embedding_mode="
            << (spec.embedding_mode == testkit::EmbeddingMode::synthetic ? "synthetic" : "featurized_text")
            << "\n";
  std::cout << "synthesized " << gen.corpus.tasks.size() << " task(s), " << trajs << " trajectories, "
            << turns << " turns -> " << cfg.output << "\n";
  std::cout << "ground truth -> " << gt_path.string() << "\n";
  return 0;
}

inline int cmd_report(const PipelineConfig& cfg) {
  using namespace pipe_detail;
  if (cfg.graphs_dir.empty()) throw ConfigError("report needs --graphs <dir>");
  auto graphs = load_graphs(cfg.graphs_dir);

  json doc;
  doc["schema"] = "topocurate-report/1";
  std::ostringstream text;
  text << "corpus graphs: " << graphs.size() << " task(s)\n";
  json jtasks = json::array();
  for (const auto& g : graphs) {
    std::size_t wins = 0;
    for (const auto& p : g.paths) wins += p.reward == 1 ? 1 : 0;
    double pr = g.paths.empty() ? 0.0 : static_cast<double>(wins) / static_cast<double>(g.paths.size());
    std::vector<int> histo(10, 0);
    for (double phi : g.phi) ++histo[std::min<std::size_t>(9, static_cast<std::size_t>(phi * 10.0))];
    json jt;
    jt["task_id"] = g.task_id;
    jt["mode"] = g.mode;
    jt["nodes"] = g.node_count();
    jt["edges"] = g.edges.size();
    jt["trajectories"] = g.num_trajectories;
    jt["pass_rate"] = pr;
    jt["phi_histogram"] = histo;
    jtasks.push_back(std::move(jt));
    text << "  task " << g.task_id << ": " << g.node_count() << " nodes, " << g.edges.size()
         << " edges, " << g.num_trajectories << " trajectories, pass rate " << fmt_double(pr) << "\n";
  }
  doc["tasks"] = std::move(jtasks);

  if (!cfg.lsh_graphs_dir.empty()) {
    auto lsh_graphs = load_graphs(cfg.lsh_graphs_dir);
    std::map<std::string, const QuotientGraph*> by_id;
    for (const auto& g : lsh_graphs) by_id[g.task_id] = &g;
    json jrecall = json::array();
    double worst = 1.0;
    for (const auto& g : graphs) {
      auto it = by_id.find(g.task_id);
      if (it == by_id.end()) throw ValidationError("no LSH graph for task '" + g.task_id + "'");
      double r = partition_recall(g, *it->second);
      worst = std::min(worst, r);
      jrecall.push_back({{"task_id", g.task_id}, {"recall", r}});
      text << "  lsh recall " << g.task_id << ": " << fmt_double(r) << "\n";
    }
    doc["lsh_recall"] = {{"per_task", std::move(jrecall)}, {"worst", worst}};
    text << "lsh recall worst-case: " << fmt_double(worst) << "\n";
  }

  if (!cfg.scores_sft_path.empty()) {
    const json sft = read_json_file(cfg.scores_sft_path);
    if (sft.value("schema", "") != "topocurate-scores-sft/1")
      throw SchemaError(0, "'" + cfg.scores_sft_path + "' is not a topocurate-scores-sft/1 document");
    std::size_t rows = 0, wins = 0;
    double wmin = 0, wmax = 0, wsum = 0;
    bool first = true;
    for (const auto& r : sft.at("rows")) {
      double w = r.at("w").get<double>();
      wins += r.at("reward").get<int>() == 1 ? 1 : 0;
      wmin = first ? w : std::min(wmin, w);
      wmax = first ? w : std::max(wmax, w);
      wsum += w;
      first = false;
      ++rows;
    }
    json js;
    js["rows"] = rows;
    js["successes"] = wins;
    if (rows > 0)
      js["w"] = {{"min", wmin}, {"max", wmax}, {"mean", wsum / static_cast<double>(rows)}};
    doc["sft"] = std::move(js);
    text << "sft scores: " << rows << " rows, " << wins << " successes\n";
  }

  if (!cfg.scores_rl_path.empty()) {
    const json rl = read_json_file(cfg.scores_rl_path);
    if (rl.value("schema", "") != "topocurate-scores-rl/1")
      throw SchemaError(0, "'" + cfg.scores_rl_path + "' is not a topocurate-scores-rl/1 document");
    std::size_t rows = 0, in_band = 0;
    for (const auto& r : rl.at("rows")) {
      ++rows;
      in_band += r.at("p_select").get<double>() > 0.0 ? 1 : 0;
    }
    doc["rl"] = {{"tasks", rows}, {"in_band", in_band}};
    text << "rl scores: " << rows << " task(s), " << in_band << " with selection mass\n";
  }

  if (!cfg.output.empty()) write_text_file(cfg.output, doc.dump(2) + "\n");
  std::cout << text.str();
  if (!cfg.output.empty()) std::cout << "report -> " << cfg.output << "\n";
  return 0;
}

// Argument surface for all six stages. Returns the process exit code:
// 0 success, 1 internal error, 2 input/validation error.
inline int run_cli(std::vector<std::string> args) {
  PipelineConfig cfg;

  // The config file loads before flag parsing so flags win; scan for it first.
  try {
    for (std::size_t i = 0; i < args.size(); ++i) {
      const std::string& a = args[i];
      if (a == "--config" && i + 1 < args.size())
        load_config_file(args[i + 1], cfg);
      else if (a.rfind("--config=", 0) == 0)
        load_config_file(a.substr(9), cfg);
    }
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  CLI::App app{"quotient-graph curation for tool-use trajectory corpora"};
  app.require_subcommand(1);
  std::string config_dummy;
  app.add_option("--config", config_dummy, "flat key=value config file (flags override it)");

  std::string lambda_str, band_str, view_weights_str;
  std::uint32_t cap_val = 0;
  bool no_strict = false;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_dummy, "flat key=value config file (flags override it)");
    cmd->add_option("--jobs", cfg.jobs, "worker threads (output is identical for any value)");
  };
  auto add_band = [&](CLI::App* cmd) {
    cmd->add_option_function<std::string>(
        "--band", [&](const std::string& v) { cfg.band = pipe_detail::parse_pair(v, "--band"); },
        "pass-rate band 'min,max'");
  };

  CLI::App* build = app.add_subcommand("build", "build one quotient graph per task from a JSONL corpus");
  add_common(build);
  build->add_option("--in,-i", cfg.input, "corpus JSONL file");
  build->add_option("--out,-o", cfg.output, "output directory for graph files");
  build->add_option("--mode", cfg.mode, "candidate generation: exact or lsh")
      ->transform(CLI::CheckedTransformer(
          std::map<std::string, MergeMode>{{"exact", MergeMode::exact}, {"lsh", MergeMode::lsh}}));
  build->add_option("--delta-tool", cfg.sim.delta_tool, "tool-view similarity threshold");
  build->add_option("--delta-result", cfg.sim.delta_result, "result-view similarity threshold");
  build->add_option("--feature-dim", cfg.sim.feature_dim, "hashed feature dimension for embedding-free corpora");
  build->add_option("--lsh-bands", cfg.lsh.num_bands, "LSH band count");
  build->add_option("--lsh-hyperplanes", cfg.lsh.hyperplanes_per_band, "hyperplanes per band");
  build->add_option("--lsh-seed", cfg.lsh.seed, "seed for LSH hyperplanes");
  build->add_option_function<std::string>(
      "--view-weights",
      [&](const std::string& v) { cfg.view_weights = pipe_detail::parse_pair(v, "--view-weights"); },
      "view weights 'tool,result' for the LSH projection");
  build->add_option("--phi-laplace-k", cfg.phi_laplace_k, "additive smoothing for phi estimates");
  build->add_option("--phi-counting", cfg.phi_counting, "phi counting: trajectory or step")
      ->transform(CLI::CheckedTransformer(std::map<std::string, PhiCounting>{
          {"trajectory", PhiCounting::per_trajectory}, {"step", PhiCounting::per_step}}));
  build->add_flag("--dot", cfg.emit_dot, "also write Graphviz .dot files");
  build->add_flag("--skip-invalid", cfg.skip_invalid, "drop malformed records instead of failing");

  CLI::App* score_sft = app.add_subcommand("score-sft", "score trajectories for SFT curation");
  add_common(score_sft);
  score_sft->add_option("--graphs", cfg.graphs_dir, "directory of *.graph.json files");
  score_sft->add_option("--out,-o", cfg.output, "output CSV path (JSON mirror written alongside)");
  score_sft->add_option("--eps-dip", cfg.sft.eps_dip, "minimum drop that counts as a dip");
  score_sft->add_option_function<std::string>(
      "--lambda", [&](const std::string& v) { pipe_detail::parse_lambda(v, cfg.weights); },
      "metric weights 'eff,rare,ref'");
  score_sft->add_option("--srare-denominator", cfg.sft.srare_denominator,
                        "rarity denominator: distinct-nodes or turns")
      ->transform(CLI::CheckedTransformer(std::map<std::string, SrareDenominator>{
          {"distinct-nodes", SrareDenominator::distinct_nodes}, {"turns", SrareDenominator::turns}}));

  CLI::App* score_rl = app.add_subcommand("score-rl", "score tasks for RL curriculum selection");
  add_common(score_rl);
  score_rl->add_option("--graphs", cfg.graphs_dir, "directory of *.graph.json files");
  score_rl->add_option("--out,-o", cfg.output, "output CSV path (JSON mirror written alongside)");
  score_rl->add_option("--eps-fail", cfg.rl.eps_fail, "phi below this marks a failing child");
  score_rl->add_option("--alpha", cfg.rl.alpha, "diversity weight in the composite");
  score_rl->add_option("--temperature", cfg.rl.temperature, "softmax temperature");
  score_rl->add_option("--div-variant", cfg.rl.div_variant, "diversity variant: unique-chain or literal")
      ->transform(CLI::CheckedTransformer(std::map<std::string, DivVariant>{
          {"unique-chain", DivVariant::unique_chain}, {"literal", DivVariant::literal_pass_ratio}}));
  add_band(score_rl);

  CLI::App* select = app.add_subcommand("select", "apply bands and budgets to produce the final subset");
  add_common(select);
  select->add_option("--scores", cfg.scores_path, "scores JSON from score-sft or score-rl");
  select->add_option("--kind", cfg.kind, "selection kind: sft or rl")
      ->check(CLI::IsMember({"sft", "rl"}));
  select->add_option("--out,-o", cfg.output, "output manifest path");
  select->add_option("--budget", cfg.budget, "number of trajectories (sft) or tasks (rl) to keep");
  auto* cap_opt = select->add_option("--per-task-cap", cap_val, "max trajectories per task (sft)");
  select->add_option("--strategy", cfg.strategy, "top-weight or seeded-sample")
      ->transform(CLI::CheckedTransformer(std::map<std::string, SelectStrategy>{
          {"top-weight", SelectStrategy::top_weight}, {"seeded-sample", SelectStrategy::seeded_sample}}));
  auto* seed_opt = select->add_option("--seed", cfg.seed, "seed for seeded-sample");
  select->add_flag("--explain", cfg.explain, "record excluded entries and reasons in the manifest");
  select->add_flag("--no-strict", no_strict, "truncate instead of failing when the pool is short");
  add_band(select);

  CLI::App* synth = app.add_subcommand("synth", "generate a planted corpus with ground truth");
  add_common(synth);
  synth->add_option("--spec", cfg.input, "planted corpus spec (JSON)");
  synth->add_option("--out,-o", cfg.output, "output corpus JSONL path");
  auto* synth_seed_opt = synth->add_option("--seed", cfg.seed, "override the spec's seed");

  CLI::App* report = app.add_subcommand("report", "summarize graphs and scores");
  add_common(report);
  report->add_option("--graphs", cfg.graphs_dir, "directory of *.graph.json files");
  report->add_option("--lsh-graphs", cfg.lsh_graphs_dir, "second graph directory for recall comparison");
  report->add_option("--scores-sft", cfg.scores_sft_path, "scores JSON from score-sft");
  report->add_option("--scores-rl", cfg.scores_rl_path, "scores JSON from score-rl");
  report->add_option("--out,-o", cfg.output, "also write the report as JSON");

  std::vector<const char*> argv;
  argv.reserve(args.size() + 1);
  argv.push_back("topocurate");
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;  // bad flags are an input error
  }

  if (seed_opt->count() > 0 || synth_seed_opt->count() > 0) cfg.seed_given = true;
  if (cap_opt->count() > 0) cfg.per_task_cap = cap_val;
  if (no_strict) cfg.strict = false;

  try {
    if (build->parsed()) return cmd_build(cfg);
    if (score_sft->parsed()) return cmd_score_sft(cfg);
    if (score_rl->parsed()) return cmd_score_rl(cfg);
    if (select->parsed()) return cmd_select(cfg);
    if (synth->parsed()) return cmd_synth(cfg);
    if (report->parsed()) return cmd_report(cfg);
    std::cerr << "error: no subcommand\n";
    return 2;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace topocurate
