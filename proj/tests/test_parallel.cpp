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

#include <catch2/catch_amalgamated.hpp>

#include "pdadmm/parallel.hpp"
#include "pdadmm/train.hpp"
#include "support/synthetic.hpp"

using namespace pdadmm;

namespace {

Dataset blob_dataset(Index nodes, Index features, Index classes, Index hops,
                     std::uint64_t seed) {
  Graph g = testsupport::make_blob_graph(nodes, features, classes, seed);
  return prepare_dataset(g, hops);
}

SolverConfig config(double nu, double rho) {
  SolverConfig cfg;
  cfg.hp.nu = nu;
  cfg.hp.rho = rho;
  return cfg;
}

}  // namespace

TEST_CASE("parallel epochs are bit-identical to sequential") {
  Dataset data = blob_dataset(24, 4, 3, 2, 17);
  auto cfg = config(0.1, 1.0);

  for (Index workers : {2, 3, 4}) {
    for (bool quantized : {false, true}) {
      auto c = cfg;
      if (quantized) c.hp.quantization = make_uniform_levels(-1, 1, 16);
      auto shapes = make_shapes(data.p1.rows(), 6, 3, 5);

      ModelState seq = init_state(shapes, data.p1, data.labels, 21);
      ModelState par = init_state(shapes, data.p1, data.labels, 21);
      if (quantized) {
        quantize_inputs(seq, *c.hp.quantization);
        quantize_inputs(par, *c.hp.quantization);
      }
      LayerParallelExecutor executor(par, data, c, workers);
      for (int e = 0; e < 5; ++e) {
        EpochMetrics ms = run_epoch(seq, data, c);
        EpochMetrics mp = executor.run_epoch();
        REQUIRE(state_hash(par) == state_hash(seq));
        CHECK(mp.lagrangian == ms.lagrangian);
        CHECK(mp.max_residual == ms.max_residual);
        CHECK(mp.descent_term == ms.descent_term);
      }
    }
  }
}

TEST_CASE("worker count is clamped to the layer count") {
  Dataset data = blob_dataset(10, 3, 2, 1, 3);
  auto shapes = make_shapes(data.p1.rows(), 4, 2, 2);
  ModelState s = init_state(shapes, data.p1, data.labels, 4);
  LayerParallelExecutor executor(s, data, config(0.1, 1.0), 16);
  CHECK(executor.worker_count() == 2);
  executor.run_epoch();  // still runs
}

TEST_CASE("comm ledger accounts every boundary tensor") {
  Dataset data = blob_dataset(20, 4, 2, 2, 23);
  const Index N = data.p1.cols();
  auto shapes = make_shapes(data.p1.rows(), 6, 2, 4);
  auto cfg = config(0.1, 1.0);

  ModelState s = init_state(shapes, data.p1, data.labels, 5);
  LayerParallelExecutor executor(s, data, cfg, 2);  // blocks {1,2} and {3,4}
  executor.run_epoch();
  const CommLedger& ledger = executor.ledger();

  // One boundary (layers 2|3): p_3 down, q_2 and u_2 up.
  REQUIRE(ledger.entries.size() == 3);
  std::uint64_t expected_p = 4ull * 6 * N;  // p_3 is 6 x N at 32-bit accounting
  std::uint64_t expected_qu = 4ull * 6 * N;
  for (const auto& e : ledger.entries) {
    CHECK(e.messages == 1);
    CHECK(e.header_bytes == kWireHeaderBytes);
    if (e.tensor == 'p') {
      CHECK(e.from_layer == 3);
      CHECK(e.to_layer == 2);
      CHECK(e.payload_bytes == expected_p);
    } else {
      CHECK(e.from_layer == 2);
      CHECK(e.to_layer == 3);
      CHECK(e.payload_bytes == expected_qu);
    }
  }
  CHECK(ledger.total_bytes() ==
        expected_p + 2 * expected_qu + 3 * kWireHeaderBytes);

  SECTION("ledger resets at epoch start") {
    executor.run_epoch();
    CHECK(executor.ledger().payload_bytes('p') == expected_p);
  }
}

TEST_CASE("quantized p messages shrink payloads by the bit ratio") {
  Dataset data = blob_dataset(16, 4, 2, 2, 29);
  auto shapes = make_shapes(data.p1.rows(), 8, 2, 4);

  auto run_bytes = [&](bool quantized) {
    auto cfg = config(0.1, 1.0);
    if (quantized) cfg.hp.quantization = make_uniform_levels(-1, 1, 16);
    ModelState s = init_state(shapes, data.p1, data.labels, 6);
    if (quantized) quantize_inputs(s, *cfg.hp.quantization);
    LayerParallelExecutor executor(s, data, cfg, 4);
    executor.run_epoch();
    return executor.ledger().payload_bytes('p');
  };

  const std::uint64_t full = run_bytes(false);
  const std::uint64_t quant = run_bytes(true);
  REQUIRE(full > 0);
  CHECK(quant * 8 == full);  // 4-bit codewords vs 32-bit floats
}

TEST_CASE("failed epochs roll back to the entry state") {
  Dataset data = blob_dataset(12, 3, 2, 1, 31);
  auto shapes = make_shapes(data.p1.rows(), 4, 2, 4);
  auto cfg = config(0.1, 1.0);
  ModelState s = init_state(shapes, data.p1, data.labels, 7);
  s.layer(3).z(0, 0) = std::numeric_limits<double>::quiet_NaN();
  const std::uint64_t before = state_hash(s);
  ExecutorConfig exec{2, true};
  REQUIRE_THROWS_AS(run_parallel_epoch(s, data, cfg, exec), SolverAbort);
  CHECK(state_hash(s) == before);
}

TEST_CASE("train with a parallel executor matches sequential train") {
  Dataset data = blob_dataset(18, 4, 2, 2, 37);
  auto shapes = make_shapes(data.p1.rows(), 5, 2, 4);
  auto cfg = config(0.1, 1.0);
  cfg.hp.epochs = 6;
  cfg.hp.schedule = {2, 4};
  TrainResult seq = train(data, shapes, cfg);
  TrainResult par = train(data, shapes, cfg, ExecutorConfig{3, true});
  CHECK(state_hash(seq.state) == state_hash(par.state));
  REQUIRE(seq.history.size() == par.history.size());
  for (std::size_t i = 0; i < seq.history.size(); ++i)
    CHECK(seq.history[i].lagrangian == par.history[i].lagrangian);
  // The parallel run reports channel traffic, the sequential one none.
  CHECK(seq.history.back().bytes_sent == 0);
  CHECK(par.history.back().bytes_sent > 0);
}

TEST_CASE("measure_speedup sanity") {
  Dataset data = blob_dataset(256, 8, 2, 2, 41);
  auto shapes = make_shapes(data.p1.rows(), 384, 2, 6);
  auto cfg = config(0.1, 1.0);

  // A single-worker run should time out near the sequential baseline. The
  // host timer is noisy, so allow a few attempts at the [0.9, 1.1] band.
  bool in_band = false;
  SpeedupRow row;
  for (int attempt = 0; attempt < 3 && !in_band; ++attempt) {
    auto rows = measure_speedup(shapes, data, cfg, {1}, 10);
    REQUIRE(rows.size() == 1);
    row = rows[0];
    CHECK(row.workers == 1);
    CHECK(row.layers == 6);
    CHECK(row.neurons == 384);
    CHECK(row.epoch_ms > 0.0);
    in_band = row.speedup > 0.9 && row.speedup < 1.1;
  }
  INFO("last measured ratio " << row.speedup);
  CHECK(in_band);
}
