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

#include "pdadmm/parallel.hpp"

namespace pdadmm {

struct TrainResult {
  ModelState state;
  std::vector<EpochMetrics> history;  // one row per epoch, all stages
};

inline void validate_schedule(const std::vector<Index>& schedule, Index depth) {
  if (schedule.empty()) return;
  Index prev = 0;
  for (Index s : schedule) {
    if (s <= prev) throw std::invalid_argument("schedule must be strictly increasing");
    prev = s;
  }
  if (schedule.back() != depth)
    throw std::invalid_argument("schedule must end at the full layer count");
}

/// Trains with progressive deepening: each schedule stage trains the prefix
/// model of the given depth, carrying the earlier layers' parameters forward
/// and initializing the added layers with a feasible forward sweep from the
/// current top. Epochs are split evenly across stages, remainder to the last.
/// Passing a parallel ExecutorConfig runs each stage's epochs on the
/// layer-parallel executor; results are bit-identical either way.
inline TrainResult train(const Dataset& data, const std::vector<LayerShape>& shapes,
                         const SolverConfig& cfg,
                         const ExecutorConfig& exec = {1, false}) {
  validate_shapes(shapes);
  const Index depth = static_cast<Index>(shapes.size());
  std::vector<Index> schedule = cfg.hp.schedule;
  if (schedule.empty()) schedule = {depth};
  validate_schedule(schedule, depth);

  const double threshold = rho_threshold(cfg.hp.nu, cfg.hp.lipschitz);
  if (cfg.hp.rho <= threshold)
    std::clog << "warning: rho=" << cfg.hp.rho
              << " is at or below the guaranteed-descent threshold " << threshold
              << "; the objective may not decrease monotonically\n";

  const Index stages = static_cast<Index>(schedule.size());
  const Index per_stage = cfg.hp.epochs / stages;

  TrainResult result;
  Index epoch_index = 0;
  for (Index s = 0; s < stages; ++s) {
    const Index stage_depth = schedule[s];
    std::vector<LayerShape> stage_shapes(shapes.begin(), shapes.begin() + stage_depth);
    if (s == 0) {
      result.state = init_state(stage_shapes, data.p1, data.labels, cfg.hp.seed);
    } else {
      extend_state(result.state, stage_shapes, schedule[s - 1] + 1, cfg.hp.seed);
    }
    if (cfg.hp.quantized()) quantize_inputs(result.state, *cfg.hp.quantization);

    Index stage_epochs = (s + 1 == stages) ? cfg.hp.epochs - per_stage * (stages - 1)
                                           : per_stage;

    std::unique_ptr<LayerParallelExecutor> executor;
    if (exec.parallel && exec.worker_count > 1)
      executor = std::make_unique<LayerParallelExecutor>(result.state, data, cfg,
                                                         exec.worker_count);

    double ck = std::numeric_limits<double>::infinity();  // resets with the stage
    for (Index e = 0; e < stage_epochs; ++e) {
      EpochMetrics m = executor ? executor->run_epoch() : run_epoch(result.state, data, cfg);
      m.epoch = epoch_index++;
      if (std::isnan(m.descent_term)) {
        m.ck = std::numeric_limits<double>::quiet_NaN();
      } else {
        ck = std::min(ck, m.descent_term);
        m.ck = ck;
      }
      result.history.push_back(m);
    }
  }
  return result;
}

}  // namespace pdadmm
