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

// End-to-end acceptance suite. Each criterion prints one PASS/FAIL line;
// the process exits nonzero if any criterion fails. Individual criteria can
// be selected by number on the command line, e.g. `acceptance 1 2 9`.

#include <chrono>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <thread>

#include "pdadmm/pdadmm.hpp"
#include "support/oracles.hpp"
#include "support/synthetic.hpp"

using namespace pdadmm;

namespace {

struct Check {
  bool ok = true;
  std::string detail;

  void expect(bool cond, const std::string& what) {
    if (!cond) {
      ok = false;
      if (!detail.empty()) detail += "; ";
      detail += what;
    }
  }
  void note(const std::string& what) {
    if (!detail.empty()) detail += "; ";
    detail += what;
  }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v) {
  std::ostringstream ss;
  ss.precision(4);
  ss << v;
  return ss.str();
}

// --------------------------------------------------------------------------
// Shared run for criteria 1, 2 and 9: the 200-node blob problem trained for
// 300 epochs in both modes with nu=0.1, rho=1 (above the descent threshold
// max(4 nu S^2, (sqrt(17)+1) nu / 2) = 0.4).

struct BlobRun {
  std::vector<double> lagrangian;  // L_rho or beta_rho per epoch
  std::vector<double> dual_dev;    // dual-identity deviation per epoch
  std::vector<double> ck;          // running-min descent metric
  double initial_lagrangian = 0.0;
  double min_lagrangian = 0.0;
  double elapsed_s = 0.0;
};

BlobRun run_blob(bool quantized) {
  const auto t0 = std::chrono::steady_clock::now();
  Graph g = testsupport::make_blob_graph(200, 8, 3, 77);
  Dataset data = prepare_dataset(g, 2);
  auto shapes = make_shapes(data.p1.rows(), 16, 3, 3);

  SolverConfig cfg;
  cfg.hp.nu = 0.1;
  cfg.hp.rho = 1.0;
  cfg.hp.epochs = 300;
  cfg.hp.seed = 11;
  if (quantized) cfg.hp.quantization = make_uniform_levels(-1.0, 1.0, 16);

  ModelState state = init_state(shapes, data.p1, data.labels, cfg.hp.seed);
  if (quantized) quantize_inputs(state, *cfg.hp.quantization);

  BlobRun run;
  run.initial_lagrangian = lagrangian(state, data, cfg.hp, quantized);
  run.min_lagrangian = run.initial_lagrangian;
  double ck = std::numeric_limits<double>::infinity();
  for (Index e = 0; e < cfg.hp.epochs; ++e) {
    EpochMetrics m = run_epoch(state, data, cfg);
    run.lagrangian.push_back(m.lagrangian);
    run.min_lagrangian = std::min(run.min_lagrangian, m.lagrangian);
    run.dual_dev.push_back(check_dual_identity(state, cfg.hp));
    ck = std::min(ck, m.descent_term);
    run.ck.push_back(ck);
  }
  run.elapsed_s = seconds_since(t0);
  return run;
}

const BlobRun& blob_run(bool quantized) {
  static BlobRun full = run_blob(false);
  static BlobRun quant = run_blob(true);
  return quantized ? quant : full;
}

// --------------------------------------------------------------------------

Check criterion1_descent() {
  Check c;
  for (bool quantized : {false, true}) {
    const BlobRun& run = blob_run(quantized);
    const char* tag = quantized ? "beta_rho" : "L_rho";
    double prev = run.initial_lagrangian;
    Index violations = 0;
    double worst = 0.0;
    for (double v : run.lagrangian) {
      if (v > prev + 1e-8) {
        ++violations;
        worst = std::max(worst, v - prev);
      }
      prev = v;
    }
    c.expect(violations == 0, std::string(tag) + ": " + std::to_string(violations) +
                                  " ascent epochs (worst +" + fmt(worst) + ")");
    c.expect(std::isfinite(run.lagrangian.back()),
             std::string(tag) + " is not finite");
    c.expect(run.elapsed_s < 30.0,
             std::string(tag) + " run took " + fmt(run.elapsed_s) + "s (>= 30s)");
  }
  c.note("final L_rho " + fmt(blob_run(false).lagrangian.back()) + ", beta_rho " +
         fmt(blob_run(true).lagrangian.back()));
  return c;
}

Check criterion2_dual_identity() {
  Check c;
  for (bool quantized : {false, true}) {
    const BlobRun& run = blob_run(quantized);
    double worst = 0.0;
    for (double d : run.dual_dev) worst = std::max(worst, d);
    c.expect(worst <= 1e-8, std::string(quantized ? "quantized" : "full") +
                                " run max deviation " + fmt(worst));
    if (worst <= 1e-8)
      c.note(std::string(quantized ? "quantized" : "full") + " max dev " + fmt(worst));
  }
  return c;
}

Check criterion3_closed_forms() {
  Check c;
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(123);

  // Hidden-z closed form vs 1e-4 grid search on [-10, 10].
  Index z_fail = 0;
  for (int i = 0; i < 1000; ++i) {
    const double a = rng.uniform(-3, 3), cc = rng.uniform(-3, 3), d = rng.uniform(-3, 3);
    Layer lay;
    lay.lin = Matrix::Constant(1, 1, a);
    lay.b = Vector::Zero(1);
    lay.q = Matrix::Constant(1, 1, cc);
    lay.z = Matrix::Constant(1, 1, d);
    update_z_hidden(lay);
    const double z = lay.z(0, 0);
    const double zg = oracles::z_hidden_grid_search(a, cc, d);
    if (oracles::z_hidden_objective(z, a, cc, d) >
        oracles::z_hidden_objective(zg, a, cc, d) + 1e-6)
      ++z_fail;
  }
  c.expect(z_fail == 0, std::to_string(z_fail) + " z-hidden grid losses");

  // q update stationarity.
  Index q_fail = 0;
  for (int i = 0; i < 1000; ++i) {
    Layer lay;
    lay.z = Matrix::Constant(1, 1, rng.uniform(-2, 2));
    lay.q = Matrix::Constant(1, 1, rng.uniform(-2, 2));
    lay.u = Matrix::Constant(1, 1, rng.uniform(-2, 2));
    const Matrix p_next = Matrix::Constant(1, 1, rng.uniform(-2, 2));
    const double nu = rng.uniform(0.05, 3.0), rho = rng.uniform(0.05, 3.0);
    update_q(lay, p_next, nu, rho);
    const double grad = nu * (lay.q(0, 0) - std::max(lay.z(0, 0), 0.0)) - lay.u(0, 0) -
                        rho * (p_next(0, 0) - lay.q(0, 0));
    if (std::abs(grad) > 1e-10) ++q_fail;
  }
  c.expect(q_fail == 0, std::to_string(q_fail) + " q-update gradients > 1e-10");

  // Projection vs exhaustive nearest search.
  auto levels = make_uniform_levels(-1.0, 1.0, 16);
  Index proj_fail = 0;
  for (int i = 0; i < 1000; ++i) {
    const double v = rng.uniform(-2.0, 2.0);
    if (project_value(v, levels) != oracles::nearest_level_scan(v, levels.levels))
      ++proj_fail;
  }
  c.expect(proj_fail == 0, std::to_string(proj_fail) + " projection mismatches");

  // Backtracking majorization on random p and W steps.
  Index bt_fail = 0;
  for (int i = 0; i < 1000; ++i) {
    Rng r2(1000 + i);
    auto fill = [&](Index rows, Index cols) {
      Matrix m(rows, cols);
      for (Index k = 0; k < m.size(); ++k) m.data()[k] = r2.uniform(-1.0, 1.0);
      return m;
    };
    Layer lay;
    lay.W = fill(3, 2);
    lay.p = fill(2, 4);
    lay.z = fill(3, 4);
    lay.b = fill(3, 1).col(0);
    lay.lin = lay.W * lay.p;
    Matrix q_prev = fill(2, 4), u_prev = fill(2, 4);
    SolverConfig cfg;
    cfg.hp.nu = r2.uniform(0.05, 2.0);
    cfg.hp.rho = r2.uniform(0.05, 2.0);
    auto rep_p = update_p(lay, q_prev, u_prev, cfg);
    if (!(rep_p.phi_candidate <= rep_p.majorizer)) ++bt_fail;
    auto rep_w = update_W(lay, &q_prev, &u_prev, cfg);
    if (!(rep_w.phi_candidate <= rep_w.majorizer)) ++bt_fail;
  }
  c.expect(bt_fail == 0, std::to_string(bt_fail) + " majorization violations");

  const double elapsed = seconds_since(t0);
  c.expect(elapsed < 10.0, "took " + fmt(elapsed) + "s (>= 10s)");
  c.note("elapsed " + fmt(elapsed) + "s");
  return c;
}

Check criterion4_gradients() {
  Check c;
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    Rng rng(5000 + i);
    auto fill = [&](Index rows, Index cols) {
      Matrix m(rows, cols);
      for (Index k = 0; k < m.size(); ++k) m.data()[k] = rng.uniform(-1.0, 1.0);
      return m;
    };
    Layer lay;
    lay.W = fill(3, 2);
    lay.p = fill(2, 2);
    lay.z = fill(3, 2);
    lay.b = fill(3, 1).col(0);
    lay.lin = lay.W * lay.p;
    Matrix q_prev = fill(2, 2), u_prev = fill(2, 2);
    const double nu = rng.uniform(0.1, 2.0), rho = rng.uniform(0.1, 2.0);

    auto rel_err = [](const Matrix& a, const Matrix& b) {
      const double scale = std::max(1.0, b.cwiseAbs().maxCoeff());
      return (a - b).cwiseAbs().maxCoeff() / scale;
    };

    {
      Matrix analytic = phi_grad_p(lay, q_prev, u_prev, nu, rho);
      auto f = [&](const Matrix& p) {
        return oracles::phi_reference(p, lay.W, lay.b, lay.z, &q_prev, &u_prev, rho, nu);
      };
      worst = std::max(worst, rel_err(analytic, oracles::finite_difference(f, lay.p)));
    }
    {
      Matrix analytic = phi_grad_W(lay, nu, 0.0);
      auto f = [&](const Matrix& W) {
        return oracles::phi_reference(lay.p, W, lay.b, lay.z, &q_prev, &u_prev, rho, nu);
      };
      worst = std::max(worst, rel_err(analytic, oracles::finite_difference(f, lay.W)));
    }
    {
      Vector analytic = phi_grad_b(lay, nu);
      auto f = [&](const Matrix& bm) {
        Vector b = bm.col(0);
        return oracles::phi_reference(lay.p, lay.W, b, lay.z, &q_prev, &u_prev, rho, nu);
      };
      worst = std::max(worst, rel_err(Matrix(analytic),
                                      oracles::finite_difference(f, Matrix(lay.b))));
    }
    {
      IntVector y(2);
      y << static_cast<int>(i % 3), static_cast<int>((i + 1) % 3);
      std::vector<Index> mask{0, 1};
      Matrix a = fill(3, 2);
      Matrix analytic = output_gradient(lay.z, a, y, mask, nu);
      auto f = [&](const Matrix& z) { return output_objective(z, a, y, mask, nu); };
      worst = std::max(worst, rel_err(analytic, oracles::finite_difference(f, lay.z)));
    }
  }
  c.expect(worst < 1e-5, "worst relative error " + fmt(worst));
  c.note("worst relative error " + fmt(worst));
  return c;
}

Check criterion5_parallel_equals_sequential() {
  Check c;
  Graph g = testsupport::make_blob_graph(128, 8, 4, 55);
  Dataset data = prepare_dataset(g, 2);
  auto shapes = make_shapes(data.p1.rows(), 64, 4, 10);

  SolverConfig cfg;
  cfg.hp.nu = 0.1;
  cfg.hp.rho = 1.0;

  ModelState seq = init_state(shapes, data.p1, data.labels, 99);
  ModelState par = init_state(shapes, data.p1, data.labels, 99);
  LayerParallelExecutor executor(par, data, cfg, 4);
  for (int e = 0; e < 5; ++e) {
    run_epoch(seq, data, cfg);
    executor.run_epoch();
  }
  const auto hs = state_hash(seq), hp = state_hash(par);
  c.expect(hs == hp, "state hashes differ");
  c.note("hash " + std::to_string(hs));
  return c;
}

Check criterion6_speedup_trend() {
  Check c;
  const auto t0 = std::chrono::steady_clock::now();
  const Index cores = static_cast<Index>(std::thread::hardware_concurrency());
  if (cores < 4)
    c.note("host has " + std::to_string(cores) +
           " cores; the stated configuration assumes >= 4");
  const Index workers = std::max<Index>(2, cores);

  Graph g = testsupport::make_blob_graph(256, 32, 4, 71);
  Dataset data = prepare_dataset(g, 2);

  SolverConfig cfg;
  cfg.hp.nu = 1e-3;
  cfg.hp.rho = 1e-3;
  cfg.hp.seed = 5;

  std::vector<double> speedups;
  for (Index neurons : {500, 1000, 2000}) {
    auto shapes = make_shapes(data.p1.rows(), neurons, 4, 10);
    auto rows = measure_speedup(shapes, data, cfg, {workers}, 10);
    speedups.push_back(rows[0].speedup);
    c.note(std::to_string(neurons) + "n: " + fmt(rows[0].speedup) + "x");
  }

  c.expect(speedups.back() > 1.3,
           "speedup at 2000 neurons is " + fmt(speedups.back()) + " (<= 1.3)");
  int non_decreasing = 0;
  if (speedups[1] >= speedups[0]) ++non_decreasing;
  if (speedups[2] >= speedups[1]) ++non_decreasing;
  if (speedups[2] >= speedups[0]) ++non_decreasing;
  c.expect(non_decreasing >= 2, "only " + std::to_string(non_decreasing) +
                                    "/3 pairwise comparisons are non-decreasing");
  const double elapsed = seconds_since(t0);
  c.expect(elapsed < 300.0, "took " + fmt(elapsed) + "s (>= 300s)");
  return c;
}

Check criterion7_quantized_bandwidth() {
  Check c;
  Graph g = testsupport::make_blob_graph(64, 8, 2, 61);
  Dataset data = prepare_dataset(g, 2);
  auto shapes = make_shapes(data.p1.rows(), 32, 2, 10);

  auto p_bytes = [&](bool quantized) {
    SolverConfig cfg;
    cfg.hp.nu = 0.1;
    cfg.hp.rho = 1.0;
    if (quantized) cfg.hp.quantization = make_uniform_levels(-1, 1, 16);
    ModelState s = init_state(shapes, data.p1, data.labels, 13);
    if (quantized) quantize_inputs(s, *cfg.hp.quantization);
    LayerParallelExecutor executor(s, data, cfg, 4);
    executor.run_epoch();
    return executor.ledger().payload_bytes('p');
  };

  const std::uint64_t full = p_bytes(false);
  const std::uint64_t quant = p_bytes(true);
  c.expect(full > 0, "no p traffic recorded");
  c.expect(quant * 8 == full, "quantized " + std::to_string(quant) +
                                  " bytes vs full " + std::to_string(full));
  c.note(std::to_string(quant) + " vs " + std::to_string(full) + " payload bytes");
  return c;
}

Check criterion8_cora() {
  Check c;
  const auto t0 = std::chrono::steady_clock::now();
  std::string dir = PDADMM_SOURCE_DIR "/data/cora";
  if (const char* env = std::getenv("PDADMM_CORA_DIR")) dir = env;
  if (!std::filesystem::exists(std::filesystem::path(dir) / "meta.json")) {
    c.expect(false, "Cora dataset not found at " + dir +
                        " (run tools/fetch_cora.py first)");
    return c;
  }

  Graph g = load_dataset(dir);
  c.expect(g.num_nodes == 2708 && g.num_features == 1433 && g.num_classes == 7,
           "unexpected Cora dimensions");
  c.expect(g.train_mask.size() == 140 && g.test_mask.size() == 1000,
           "unexpected Cora split sizes");

  Dataset data = prepare_dataset(g, 3);
  auto shapes = make_shapes(data.p1.rows(), 256, 7, 4);

  SolverConfig cfg;
  cfg.hp.nu = 1e-3;
  cfg.hp.rho = 1e-3;
  cfg.hp.epochs = 400;
  cfg.hp.schedule = {2, 4};
  cfg.hp.seed = 1;

  const Index cores = static_cast<Index>(std::thread::hardware_concurrency());
  ExecutorConfig exec{std::min<Index>(cores, 8), cores > 1};
  TrainResult result = train(data, shapes, cfg, exec);

  const Matrix logits = forward(result.state, data.p1);
  const double train_acc = accuracy(logits, data.labels, data.train_mask);
  const double test_acc = accuracy(logits, data.labels, data.test_mask);
  const double elapsed = seconds_since(t0);

  c.expect(train_acc >= 0.90, "train accuracy " + fmt(train_acc) + " < 0.90");
  c.expect(test_acc >= 0.65, "test accuracy " + fmt(test_acc) + " < 0.65");
  if (cores >= 8)
    c.expect(elapsed < 600.0, "took " + fmt(elapsed) + "s (>= 600s)");
  else
    c.note("10-minute bound is stated for 8 cores; this host has " +
           std::to_string(cores));
  c.note("train " + fmt(train_acc) + ", test " + fmt(test_acc) + ", " +
         fmt(elapsed) + "s");
  return c;
}

Check criterion9_ck() {
  Check c;
  const BlobRun& run = blob_run(false);
  const auto& ck = run.ck;

  Index increases = 0;
  for (std::size_t i = 1; i < ck.size(); ++i)
    if (ck[i] > ck[i - 1]) ++increases;
  c.expect(increases == 0, std::to_string(increases) + " c_k increases");

  double sum = 0.0;
  for (double v : ck) sum += v;
  const double budget = run.initial_lagrangian - run.min_lagrangian + 1e-6;
  c.expect(sum <= budget,
           "sum c_k " + fmt(sum) + " exceeds budget " + fmt(budget));

  const double kck_50 = 50.0 * ck[49];
  const double kck_end = static_cast<double>(ck.size()) * ck.back();
  c.expect(kck_end < kck_50, "k*c_k did not shrink: " + fmt(kck_end) +
                                 " at end vs " + fmt(kck_50) + " at 50");
  c.note("sum c_k " + fmt(sum) + " <= " + fmt(budget) + "; k*c_k " + fmt(kck_50) +
         " -> " + fmt(kck_end));
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  struct Criterion {
    int id;
    const char* name;
    std::function<Check()> fn;
  };
  const std::vector<Criterion> criteria{
      {1, "Lemma-1 descent (L_rho and beta_rho, 300 epochs)", criterion1_descent},
      {2, "dual identity after every epoch", criterion2_dual_identity},
      {3, "closed-form oracles (grid search, stationarity, projection, majorization)",
       criterion3_closed_forms},
      {4, "gradients match central finite differences", criterion4_gradients},
      {5, "parallel state is bit-identical to sequential", criterion5_parallel_equals_sequential},
      {6, "speedup trend over neuron counts", criterion6_speedup_trend},
      {7, "quantized p-channel payload is 1/8 of full precision", criterion7_quantized_bandwidth},
      {8, "Cora end-to-end accuracy", criterion8_cora},
      {9, "c_k running-minimum behavior", criterion9_ck},
  };

  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  int failures = 0;
  for (const auto& cr : criteria) {
    if (!selected.empty() && !selected.count(cr.id)) continue;
    Check result;
    try {
      result = cr.fn();
    } catch (const std::exception& e) {
      result.ok = false;
      result.detail = std::string("exception: ") + e.what();
    }
    std::cout << "criterion " << cr.id << " (" << cr.name << "): "
              << (result.ok ? "PASS" : "FAIL");
    if (!result.detail.empty()) std::cout << " [" << result.detail << "]";
    std::cout << std::endl;
    if (!result.ok) ++failures;
  }
  return failures == 0 ? 0 : 1;
}
