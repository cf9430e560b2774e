// Copyright 2026 The pdadmm Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "pdadmm/train.hpp"

namespace pdadmm {

/// Resolved run configuration; JSON config files use exactly these names and
/// command-line flags mirror them in kebab-case.
struct RunConfig {
  std::string dataset;
  Index layers = 3;
  Index neurons = 64;
  Index hops = 2;
  double rho = 1e-3;
  double nu = 1e-3;
  Index epochs = 100;
  std::vector<Index> schedule;  // empty = single stage
  std::string mode = "pdadmm";  // pdadmm | pdadmm-q
  Index quant_levels = 16;
  double quant_lo = -1.0;
  double quant_hi = 1.0;
  Index workers = 1;
  std::uint64_t seed = 1;
  std::string outdir = "run";
};

namespace detail {

inline nlohmann::json config_to_json(const RunConfig& rc) {
  return nlohmann::json{
      {"dataset", rc.dataset},       {"layers", rc.layers},
      {"neurons", rc.neurons},       {"hops", rc.hops},
      {"rho", rc.rho},               {"nu", rc.nu},
      {"epochs", rc.epochs},         {"schedule", rc.schedule},
      {"mode", rc.mode},             {"quant_levels", rc.quant_levels},
      {"quant_lo", rc.quant_lo},     {"quant_hi", rc.quant_hi},
      {"workers", rc.workers},       {"seed", rc.seed},
      {"outdir", rc.outdir}};
}

inline void config_from_json(const nlohmann::json& j, RunConfig& rc) {
  if (j.contains("dataset")) rc.dataset = j.at("dataset").get<std::string>();
  if (j.contains("layers")) rc.layers = j.at("layers").get<Index>();
  if (j.contains("neurons")) rc.neurons = j.at("neurons").get<Index>();
  if (j.contains("hops")) rc.hops = j.at("hops").get<Index>();
  if (j.contains("rho")) rc.rho = j.at("rho").get<double>();
  if (j.contains("nu")) rc.nu = j.at("nu").get<double>();
  if (j.contains("epochs")) rc.epochs = j.at("epochs").get<Index>();
  if (j.contains("schedule")) rc.schedule = j.at("schedule").get<std::vector<Index>>();
  if (j.contains("mode")) rc.mode = j.at("mode").get<std::string>();
  if (j.contains("quant_levels")) rc.quant_levels = j.at("quant_levels").get<Index>();
  if (j.contains("quant_lo")) rc.quant_lo = j.at("quant_lo").get<double>();
  if (j.contains("quant_hi")) rc.quant_hi = j.at("quant_hi").get<double>();
  if (j.contains("workers")) rc.workers = j.at("workers").get<Index>();
  if (j.contains("seed")) rc.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("outdir")) rc.outdir = j.at("outdir").get<std::string>();
}

inline std::uint64_t hash_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  Fnv1a h;
  char buf[1 << 16];
  while (in.read(buf, sizeof buf) || in.gcount() > 0)
    h.update(buf, static_cast<std::size_t>(in.gcount()));
  return h.h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline Index env_thread_cap() {
  if (const char* s = std::getenv("PDADMM_THREADS")) {
    const long v = std::strtol(s, nullptr, 10);
    if (v >= 1) return static_cast<Index>(v);
  }
  return 0;  // no cap
}

}  // namespace detail

inline SolverConfig make_solver_config(const RunConfig& rc) {
  SolverConfig cfg;
  cfg.hp.rho = rc.rho;
  cfg.hp.nu = rc.nu;
  cfg.hp.hops = rc.hops;
  cfg.hp.epochs = rc.epochs;
  cfg.hp.schedule = rc.schedule;
  cfg.hp.seed = rc.seed;
  if (rc.mode == "pdadmm-q")
    cfg.hp.quantization = make_uniform_levels(rc.quant_lo, rc.quant_hi, rc.quant_levels);
  else if (rc.mode != "pdadmm")
    throw std::invalid_argument("mode must be pdadmm or pdadmm-q");
  if (cfg.hp.rho <= 0.0 || cfg.hp.nu <= 0.0)
    throw std::invalid_argument("rho and nu must be positive");
  if (rc.layers < 1 || rc.neurons < 1 || rc.hops < 1 || rc.epochs < 1)
    throw std::invalid_argument("layers, neurons, hops and epochs must be positive");
  return cfg;
}

inline ExecutorConfig make_executor_config(const RunConfig& rc) {
  Index workers = rc.workers;
  if (Index cap = detail::env_thread_cap(); cap > 0) workers = std::min(workers, cap);
  return {workers, workers > 1};
}

constexpr const char* kMetricsHeader =
    "epoch,lagrangian,risk,max_residual,mean_residual,ck,train_acc,test_acc,"
    "epoch_ms,bytes_sent";

inline void write_metrics_csv(const std::vector<EpochMetrics>& history,
                              const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << kMetricsHeader << "\n";
  for (const auto& m : history) {
    out << m.epoch << ',' << format_double(m.lagrangian) << ','
        << format_double(m.risk) << ',' << format_double(m.max_residual) << ','
        << format_double(m.mean_residual) << ','
        << (std::isnan(m.ck) ? std::string("na") : format_double(m.ck)) << ','
        << format_double(m.train_acc) << ',' << format_double(m.test_acc) << ','
        << format_double(m.wall_ms) << ',' << m.bytes_sent << "\n";
  }
}

/// Trains per the config and writes metrics.csv, checkpoint.bin and
/// manifest.json into the output directory.
inline int cmd_train(const RunConfig& rc) {
  namespace fs = std::filesystem;
  if (rc.dataset.empty()) {
    std::cerr << "error: no dataset path given\n";
    return 2;
  }
  Graph graph;
  SolverConfig cfg;
  try {
    cfg = make_solver_config(rc);
    graph = load_dataset(rc.dataset);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    const Dataset data = prepare_dataset(graph, rc.hops);
    const auto shapes =
        make_shapes(data.p1.rows(), rc.neurons, graph.num_classes, rc.layers);
    TrainResult result = train(data, shapes, cfg, make_executor_config(rc));

    fs::create_directories(rc.outdir);
    write_metrics_csv(result.history, (fs::path(rc.outdir) / "metrics.csv").string());
    save_checkpoint(result.state, (fs::path(rc.outdir) / "checkpoint.bin").string());

    Fnv1a input_hash;
    nlohmann::json files;
    for (const char* name : {"meta.json", "features.csv", "edges.tsv", "labels.csv",
                             "splits.json"}) {
      const std::uint64_t h = detail::hash_file(fs::path(rc.dataset) / name);
      files[name] = detail::hex64(h);
      input_hash.update(h);
    }
    nlohmann::json manifest{{"config", detail::config_to_json(rc)},
                            {"input_hash", "fnv1a64:" + detail::hex64(input_hash.h)},
                            {"input_files", files},
                            {"epochs_run", result.history.size()}};
    std::ofstream mout(fs::path(rc.outdir) / "manifest.json");
    mout << manifest.dump(2) << "\n";

    const auto& last = result.history.back();
    std::cout << "trained " << rc.layers << " layers, " << result.history.size()
              << " epochs: train_acc " << format_double(last.train_acc) << ", test_acc "
              << format_double(last.test_acc) << "\n";
    return 0;
  } catch (const SolverAbort& e) {
    std::cerr << "solver abort: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

/// Loads a checkpoint, rebuilds the augmented input of the dataset and
/// prints train/test accuracy of the forward pass.
inline int cmd_eval(const std::string& checkpoint, const std::string& dataset) {
  try {
    const ModelState state = load_checkpoint(checkpoint);
    const Graph graph = load_dataset(dataset);
    const Index in_dim = state.layers.front().in_dim();
    if (in_dim % graph.num_features != 0)
      throw std::runtime_error("checkpoint input width is not a multiple of the "
                               "dataset feature count");
    const Index hops = in_dim / graph.num_features;
    const Dataset data = prepare_dataset(graph, hops);
    const Matrix logits = forward(state, data.p1);
    char line[64];
    std::snprintf(line, sizeof line, "train_acc %.2f\n",
                  accuracy(logits, data.labels, data.train_mask));
    std::cout << line;
    std::snprintf(line, sizeof line, "test_acc %.2f\n",
                  accuracy(logits, data.labels, data.test_mask));
    std::cout << line;
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

constexpr const char* kSpeedupHeader = "workers,layers,neurons,epoch_ms,speedup";

/// Runs the speedup measurement over a list of worker counts and writes
/// speedup.csv; rows are also echoed to stdout.
inline int cmd_benchmark(const RunConfig& rc, const std::vector<Index>& worker_list,
                         Index timed_epochs = 10) {
  namespace fs = std::filesystem;
  if (rc.dataset.empty()) {
    std::cerr << "error: no dataset path given\n";
    return 2;
  }
  try {
    const SolverConfig cfg = make_solver_config(rc);
    const Graph graph = load_dataset(rc.dataset);
    const Dataset data = prepare_dataset(graph, rc.hops);
    const auto shapes =
        make_shapes(data.p1.rows(), rc.neurons, graph.num_classes, rc.layers);

    std::vector<Index> workers = worker_list;
    if (Index cap = detail::env_thread_cap(); cap > 0)
      for (Index& w : workers) w = std::min(w, cap);

    const auto rows = measure_speedup(shapes, data, cfg, workers, timed_epochs);

    fs::create_directories(rc.outdir);
    std::ofstream out(fs::path(rc.outdir) / "speedup.csv");
    out << kSpeedupHeader << "\n";
    std::cout << kSpeedupHeader << "\n";
    for (const auto& r : rows) {
      std::string line = std::to_string(r.workers) + "," + std::to_string(r.layers) +
                         "," + std::to_string(r.neurons) + "," +
                         format_double(r.epoch_ms) + "," + format_double(r.speedup);
      out << line << "\n";
      std::cout << line << "\n";
    }
    return 0;
  } catch (const SolverAbort& e) {
    std::cerr << "solver abort: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

/// Command-line front end: `train`, `eval` and `benchmark` subcommands.
/// Flag overrides take precedence over values from --config.
inline int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Layer-parallel gradient-free trainer for graph-augmented MLPs"};
  app.require_subcommand(1);

  RunConfig rc;
  std::string config_path;
  std::string schedule_str, workers_list_str;
  std::string checkpoint_path, dataset_path;
  Index timed_epochs = 10;

  auto add_run_flags = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON config file");
    sub->add_option("--dataset", rc.dataset, "dataset directory");
    sub->add_option("--layers", rc.layers, "number of layers");
    sub->add_option("--neurons", rc.neurons, "hidden width");
    sub->add_option("--hops", rc.hops, "feature augmentation hops K");
    sub->add_option("--rho", rc.rho, "penalty parameter rho");
    sub->add_option("--nu", rc.nu, "relaxation parameter nu");
    sub->add_option("--epochs", rc.epochs, "total training epochs");
    sub->add_option("--schedule", schedule_str,
                    "progressive-deepening layer counts, e.g. 2,5,10");
    sub->add_option("--mode", rc.mode, "pdadmm | pdadmm-q");
    sub->add_option("--quant-levels", rc.quant_levels, "level count m");
    sub->add_option("--quant-lo", rc.quant_lo, "lowest level");
    sub->add_option("--quant-hi", rc.quant_hi, "highest level");
    sub->add_option("--workers", rc.workers, "layer-parallel worker threads");
    sub->add_option("--seed", rc.seed, "random seed");
    sub->add_option("--outdir", rc.outdir, "output directory");
  };

  CLI::App* train_cmd = app.add_subcommand("train", "train a model");
  add_run_flags(train_cmd);

  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  eval_cmd->add_option("checkpoint", checkpoint_path, "checkpoint file")->required();
  eval_cmd->add_option("dataset", dataset_path, "dataset directory")->required();

  CLI::App* bench_cmd = app.add_subcommand("benchmark", "measure layer-parallel speedup");
  add_run_flags(bench_cmd);
  bench_cmd->add_option("--workers-list", workers_list_str,
                        "comma-separated worker counts, e.g. 1,2,4");
  bench_cmd->add_option("--timed-epochs", timed_epochs, "timed epochs per configuration");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  auto parse_index_list = [](const std::string& s) {
    std::vector<Index> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
      if (!item.empty()) out.push_back(std::stol(item));
    return out;
  };

  try {
    CLI::App* sub = app.get_subcommands().front();
    if (sub == eval_cmd) return cmd_eval(checkpoint_path, dataset_path);

    if (!config_path.empty()) {
      std::ifstream in(config_path);
      if (!in) throw std::runtime_error("cannot open config " + config_path);
      RunConfig from_file;
      detail::config_from_json(nlohmann::json::parse(in), from_file);
      // Flags override config-file values: re-apply every flag that was given.
      RunConfig merged = from_file;
      auto over = [&](const char* flag, auto member) {
        if (sub->count(flag)) merged.*member = rc.*member;
      };
      over("--dataset", &RunConfig::dataset);
      over("--layers", &RunConfig::layers);
      over("--neurons", &RunConfig::neurons);
      over("--hops", &RunConfig::hops);
      over("--rho", &RunConfig::rho);
      over("--nu", &RunConfig::nu);
      over("--epochs", &RunConfig::epochs);
      over("--mode", &RunConfig::mode);
      over("--quant-levels", &RunConfig::quant_levels);
      over("--quant-lo", &RunConfig::quant_lo);
      over("--quant-hi", &RunConfig::quant_hi);
      over("--workers", &RunConfig::workers);
      over("--seed", &RunConfig::seed);
      over("--outdir", &RunConfig::outdir);
      if (sub->count("--schedule")) merged.schedule = parse_index_list(schedule_str);
      rc = merged;
    } else if (!schedule_str.empty()) {
      rc.schedule = parse_index_list(schedule_str);
    }

    if (sub == train_cmd) return cmd_train(rc);
    if (sub == bench_cmd) {
      std::vector<Index> workers =
          workers_list_str.empty() ? std::vector<Index>{rc.workers}
                                   : parse_index_list(workers_list_str);
      return cmd_benchmark(rc, workers, timed_epochs);
    }
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace pdadmm
