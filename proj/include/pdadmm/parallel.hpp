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

#include <algorithm>
#include <atomic>
#include <barrier>
#include <condition_variable>
#include <deque>
#include <exception>
#include <memory>
#include <mutex>
#include <thread>
#include <vector>

#include "pdadmm/solver.hpp"

namespace pdadmm {

struct ExecutorConfig {
  Index worker_count = 1;  // clamped to the layer count
  bool parallel = true;    // false falls back to the sequential epoch
};

/// Byte accounting for the boundary tensors exchanged between layer workers.
/// Payload bytes follow the wire formats: packed level indices for quantized
/// p messages, 32-bit floats otherwise. Headers are tracked separately.
struct CommLedger {
  struct Entry {
    Index from_layer = 0;
    Index to_layer = 0;
    char tensor = '?';  // 'p', 'q' or 'u'
    std::uint64_t messages = 0;
    std::uint64_t payload_bytes = 0;
    std::uint64_t header_bytes = 0;
  };
  std::vector<Entry> entries;

  Entry* find(Index from, Index to, char tensor) {
    for (auto& e : entries)
      if (e.from_layer == from && e.to_layer == to && e.tensor == tensor) return &e;
    return nullptr;
  }

  void reset() {
    for (auto& e : entries) e.messages = e.payload_bytes = e.header_bytes = 0;
  }

  std::uint64_t payload_bytes(char tensor) const {
    std::uint64_t total = 0;
    for (const auto& e : entries)
      if (e.tensor == tensor) total += e.payload_bytes;
    return total;
  }

  std::uint64_t total_bytes() const {
    std::uint64_t total = 0;
    for (const auto& e : entries) total += e.payload_bytes + e.header_bytes;
    return total;
  }
};

namespace detail {

/// Single-producer single-consumer tensor queue between adjacent workers.
/// Send serializes through the quantized codec when a level set is given and
/// records sizes in the ledger entry.
class TensorChannel {
 public:
  void send(const Matrix& m, CommLedger::Entry& entry, const QuantizationSet* levels) {
    Matrix payload;
    if (levels) {
      auto buf = encode(m, *levels, static_cast<std::uint16_t>(entry.from_layer));
      payload = decode(buf, *levels, m.rows(), m.cols());
      entry.payload_bytes += buf.size() - kWireHeaderBytes;
    } else {
      payload = m;
      entry.payload_bytes += 4ull * static_cast<std::uint64_t>(m.size());
    }
    entry.header_bytes += kWireHeaderBytes;
    entry.messages += 1;
    {
      std::lock_guard lock(mu_);
      q_.push_back(std::move(payload));
    }
    cv_.notify_one();
  }

  Matrix receive() {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return !q_.empty(); });
    Matrix m = std::move(q_.front());
    q_.pop_front();
    return m;
  }

  bool empty() {
    std::lock_guard lock(mu_);
    return q_.empty();
  }

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<Matrix> q_;
};

}  // namespace detail

/// Runs Algorithm-style epochs with one thread per contiguous layer block.
/// The six phases are separated by barriers; boundary tensors cross
/// channels (p downstream after the p phase, q and u upstream after the u
/// phase) and are counted in the ledger. Per-layer arithmetic is identical
/// to the sequential path, so results are bit-identical to run_epoch.
class LayerParallelExecutor {
 public:
  LayerParallelExecutor(ModelState& state, const Dataset& data, const SolverConfig& cfg,
                        Index worker_count)
      : state_(state), data_(data), cfg_(cfg) {
    const Index depth = state.depth();
    workers_ = std::max<Index>(1, std::min(worker_count, depth));
    blocks_.resize(workers_);
    for (Index w = 0; w < workers_; ++w) {
      blocks_[w].lo = w * depth / workers_ + 1;
      blocks_[w].hi = (w + 1) * depth / workers_;
    }
    // Boundary channels and their ledger entries, one set per adjacent pair.
    down_.resize(workers_);
    up_q_.resize(workers_);
    up_u_.resize(workers_);
    for (Index w = 0; w + 1 < workers_; ++w) {
      const Index boundary = blocks_[w].hi;  // layer boundary .. boundary+1
      ledger_.entries.push_back({boundary + 1, boundary, 'p', 0, 0, 0});
      ledger_.entries.push_back({boundary, boundary + 1, 'q', 0, 0, 0});
      ledger_.entries.push_back({boundary, boundary + 1, 'u', 0, 0, 0});
      down_[w + 1] = std::make_unique<detail::TensorChannel>();   // w+1 -> w (p)
      up_q_[w] = std::make_unique<detail::TensorChannel>();       // w -> w+1 (q)
      up_u_[w] = std::make_unique<detail::TensorChannel>();       // w -> w+1 (u)
    }
    // Seed each block's view of its upstream neighbour from the current state.
    recv_q_.resize(workers_);
    recv_u_.resize(workers_);
    recv_p_.resize(workers_);
    for (Index w = 1; w < workers_; ++w) {
      recv_q_[w] = state.layer(blocks_[w].lo - 1).q;
      recv_u_[w] = state.layer(blocks_[w].lo - 1).u;
    }
  }

  Index worker_count() const { return workers_; }
  const CommLedger& ledger() const { return ledger_; }

  EpochMetrics run_epoch() {
    ledger_.reset();
    const Index depth = state_.depth();
    std::vector<IterationDeltas> layer_deltas(depth + 1);
    std::vector<double> residual_norms(depth, 0.0);
    std::vector<std::exception_ptr> errors(workers_);
    std::atomic<bool> failed{false};

    // Copy-on-entry rollback without deep copies: scalars and intercepts are
    // snapshotted up front (phase 0); the large tensors retire into the
    // snapshot by move as their updates replace them.
    Snapshot snap;
    snap.layers.resize(state_.layers.size());

    const auto t0 = std::chrono::steady_clock::now();
    {
      std::barrier sync(static_cast<std::ptrdiff_t>(workers_));
      auto worker = [&](Index w) {
        auto guarded = [&](auto&& fn) {
          if (!failed.load(std::memory_order_relaxed)) {
            try {
              fn();
            } catch (...) {
              errors[w] = std::current_exception();
              failed.store(true, std::memory_order_relaxed);
            }
          }
          sync.arrive_and_wait();
        };
        guarded([&] {
          snapshot_scalars(w, snap);
          phase_receive_upstream(w);
        });
        guarded([&] { phase_p(w, layer_deltas, snap); });
        guarded([&] { phase_W(w, layer_deltas, snap); });
        guarded([&] { phase_b(w, layer_deltas); });
        guarded([&] { phase_z(w, layer_deltas, snap); });
        guarded([&] { phase_q(w, layer_deltas, snap); });
        guarded([&] { phase_residual_u(w, residual_norms, snap); });
      };
      std::vector<std::thread> threads;
      threads.reserve(workers_);
      for (Index w = 0; w < workers_; ++w) threads.emplace_back(worker, w);
      for (auto& t : threads) t.join();
    }
    const double wall_ms = std::chrono::duration<double, std::milli>(
                               std::chrono::steady_clock::now() - t0)
                               .count();

    if (failed.load()) {
      restore_snapshot(snap);
      for (auto& e : errors)
        if (e) std::rethrow_exception(e);
      throw SolverAbort("parallel epoch failed");
    }

    EpochMetrics m;
    m.wall_ms = wall_ms;
    IterationDeltas deltas;
    for (Index l = 1; l <= depth; ++l) {
      deltas.p_weighted += layer_deltas[l].p_weighted;
      deltas.w_weighted += layer_deltas[l].w_weighted;
      deltas.b_sq += layer_deltas[l].b_sq;
      deltas.z_hidden_sq += layer_deltas[l].z_hidden_sq;
      deltas.z_out_sq += layer_deltas[l].z_out_sq;
      deltas.q_sq += layer_deltas[l].q_sq;
    }
    m.descent_term = descent_term(deltas, cfg_.hp, cfg_.hp.quantized());
    for (Index l = 1; l < depth; ++l) {
      m.max_residual = std::max(m.max_residual, residual_norms[l - 1]);
      m.mean_residual += residual_norms[l - 1];
    }
    if (depth > 1) m.mean_residual /= static_cast<double>(depth - 1);
    m.bytes_sent = ledger_.total_bytes();
    if (cfg_.collect_metrics) {
      m.lagrangian = lagrangian(state_, data_, cfg_.hp, cfg_.hp.quantized());
      m.risk = cross_entropy(state_.layer(depth).z, data_.labels, data_.train_mask);
      const Matrix logits = detail::forward_cached(state_);
      m.train_acc = accuracy(logits, data_.labels, data_.train_mask);
      if (!data_.test_mask.empty())
        m.test_acc = accuracy(logits, data_.labels, data_.test_mask);
    }
    return m;
  }

 private:
  struct Block {
    Index lo = 0, hi = 0;
  };

  // Rollback storage: empty matrices mean "this tensor was never replaced".
  struct Snapshot {
    std::vector<Layer> layers;
  };

  void snapshot_scalars(Index w, Snapshot& s) const {
    for (Index l = blocks_[w].lo; l <= blocks_[w].hi; ++l) {
      const Layer& lay = state_.layer(l);
      Layer& copy = s.layers[l - 1];
      copy.b = lay.b;
      copy.tau = lay.tau;
      copy.theta = lay.theta;
    }
  }

  void restore_snapshot(Snapshot& s) {
    for (Index l = 1; l <= state_.depth(); ++l) {
      Layer& lay = state_.layer(l);
      Layer& copy = s.layers[l - 1];
      if (copy.W.size()) lay.W = std::move(copy.W);
      if (copy.p.size()) lay.p = std::move(copy.p);
      if (copy.z.size()) lay.z = std::move(copy.z);
      if (copy.q.size()) lay.q = std::move(copy.q);
      if (copy.u.size()) lay.u = std::move(copy.u);
      if (copy.lin.size()) lay.lin = std::move(copy.lin);
      if (copy.b.size()) {  // the scalar snapshot ran for this layer
        lay.b = std::move(copy.b);
        lay.tau = copy.tau;
        lay.theta = copy.theta;
      }
    }
  }

  CommLedger::Entry& entry(Index from, Index to, char tensor) {
    auto* e = ledger_.find(from, to, tensor);
    if (!e) throw std::logic_error("ledger entry missing");
    return *e;
  }

  // Queued q/u from the previous epoch's upstream sends, if any.
  void phase_receive_upstream(Index w) {
    if (w == 0) return;
    if (!up_q_[w - 1]->empty()) recv_q_[w] = up_q_[w - 1]->receive();
    if (!up_u_[w - 1]->empty()) recv_u_[w] = up_u_[w - 1]->receive();
  }

  void phase_p(Index w, std::vector<IterationDeltas>& deltas, Snapshot& snap) {
    const Block blk = blocks_[w];
    for (Index l = std::max<Index>(blk.lo, 2); l <= blk.hi; ++l) {
      Layer& lay = state_.layer(l);
      const bool boundary = (l == blk.lo) && (w > 0);
      const Matrix& q_prev = boundary ? recv_q_[w] : state_.layer(l - 1).q;
      const Matrix& u_prev = boundary ? recv_u_[w] : state_.layer(l - 1).u;
      const RetiredTensors retired{&snap.layers[l - 1].p, &snap.layers[l - 1].lin};
      BacktrackReport rep;
      if (cfg_.hp.quantized())
        rep = update_p_quantized(lay, q_prev, u_prev, cfg_, *cfg_.hp.quantization,
                                 retired);
      else
        rep = update_p(lay, q_prev, u_prev, cfg_, retired);
      deltas[l].p_weighted = 0.5 * rep.step * rep.delta_sq;
      detail::check_finite(lay.p, "p");
    }
    if (w > 0 && blk.lo >= 2) {
      // Downstream neighbour needs p_lo for its q update.
      down_[w]->send(state_.layer(blk.lo).p, entry(blk.lo, blk.lo - 1, 'p'),
                     cfg_.hp.quantized() ? &*cfg_.hp.quantization : nullptr);
    }
  }

  void phase_W(Index w, std::vector<IterationDeltas>& deltas, Snapshot& snap) {
    const Block blk = blocks_[w];
    for (Index l = blk.lo; l <= blk.hi; ++l) {
      Layer& lay = state_.layer(l);
      const Matrix* q_prev = nullptr;
      const Matrix* u_prev = nullptr;
      if (l >= 2) {
        const bool boundary = (l == blk.lo) && (w > 0);
        q_prev = boundary ? &recv_q_[w] : &state_.layer(l - 1).q;
        u_prev = boundary ? &recv_u_[w] : &state_.layer(l - 1).u;
      }
      // The epoch-start lin was already retired by the p phase unless this
      // layer skipped it (layer 1, or a no-move p step).
      Layer& slot = snap.layers[l - 1];
      const RetiredTensors retired{&slot.W, slot.lin.size() ? nullptr : &slot.lin};
      auto rep = update_W(lay, q_prev, u_prev, cfg_, retired);
      deltas[l].w_weighted = 0.5 * rep.step * rep.delta_sq;
      detail::check_finite(lay.W, "W");
    }
  }

  void phase_b(Index w, std::vector<IterationDeltas>& deltas) {
    const Block blk = blocks_[w];
    for (Index l = blk.lo; l <= blk.hi; ++l) {
      deltas[l].b_sq = update_b(state_.layer(l));
      if (!state_.layer(l).b.allFinite())
        throw SolverAbort("non-finite values after b phase");
    }
  }

  void phase_z(Index w, std::vector<IterationDeltas>& deltas, Snapshot& snap) {
    const Block blk = blocks_[w];
    const Index depth = state_.depth();
    for (Index l = blk.lo; l <= blk.hi; ++l) {
      Layer& lay = state_.layer(l);
      if (l < depth)
        deltas[l].z_hidden_sq = update_z_hidden(lay, &snap.layers[l - 1].z);
      else
        deltas[l].z_out_sq = update_z_output(lay, data_.labels, data_.train_mask, cfg_,
                                             &snap.layers[l - 1].z);
      detail::check_finite(lay.z, "z");
    }
  }

  void phase_q(Index w, std::vector<IterationDeltas>& deltas, Snapshot& snap) {
    const Block blk = blocks_[w];
    const Index depth = state_.depth();
    if (w + 1 < workers_) recv_p_[w] = down_[w + 1]->receive();
    for (Index l = blk.lo; l <= std::min(blk.hi, depth - 1); ++l) {
      const Matrix& p_next = (l == blk.hi) ? recv_p_[w] : state_.layer(l + 1).p;
      deltas[l].q_sq = update_q(state_.layer(l), p_next, cfg_.hp.nu, cfg_.hp.rho,
                                &snap.layers[l - 1].q);
      detail::check_finite(state_.layer(l).q, "q");
    }
  }

  void phase_residual_u(Index w, std::vector<double>& residual_norms, Snapshot& snap) {
    const Block blk = blocks_[w];
    const Index depth = state_.depth();
    for (Index l = blk.lo; l <= std::min(blk.hi, depth - 1); ++l) {
      Layer& lay = state_.layer(l);
      const Matrix& p_next = (l == blk.hi) ? recv_p_[w] : state_.layer(l + 1).p;
      const Matrix gap = p_next - lay.q;
      residual_norms[l - 1] = gap.norm();
      Matrix fresh = lay.u + cfg_.hp.rho * gap;
      snap.layers[l - 1].u = std::move(lay.u);
      lay.u = std::move(fresh);
      detail::check_finite(lay.u, "u");
    }
    if (w + 1 < workers_) {
      // Upstream neighbour needs (q_hi, u_hi) for its next p update.
      up_q_[w]->send(state_.layer(blk.hi).q, entry(blk.hi, blk.hi + 1, 'q'), nullptr);
      up_u_[w]->send(state_.layer(blk.hi).u, entry(blk.hi, blk.hi + 1, 'u'), nullptr);
    }
  }

  ModelState& state_;
  const Dataset& data_;
  SolverConfig cfg_;
  Index workers_ = 1;
  std::vector<Block> blocks_;
  CommLedger ledger_;
  std::vector<std::unique_ptr<detail::TensorChannel>> down_, up_q_, up_u_;
  std::vector<Matrix> recv_q_, recv_u_, recv_p_;
};

/// One barrier-synchronized epoch across `exec.worker_count` threads. The
/// per-epoch ledger is appended to `ledger_out` when given.
inline EpochMetrics run_parallel_epoch(ModelState& state, const Dataset& data,
                                       const SolverConfig& cfg, const ExecutorConfig& exec,
                                       CommLedger* ledger_out = nullptr) {
  if (!exec.parallel) return run_epoch(state, data, cfg);
  LayerParallelExecutor executor(state, data, cfg, exec.worker_count);
  EpochMetrics m = executor.run_epoch();
  if (ledger_out) *ledger_out = executor.ledger();
  return m;
}

// ---------------------------------------------------------------------------

struct SpeedupRow {
  Index workers = 0;
  Index layers = 0;
  Index neurons = 0;
  double epoch_ms = 0.0;
  double speedup = 0.0;
};

namespace detail {

inline double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace detail

/// Times one warm-up epoch plus `timed_epochs` epochs per configuration and
/// reports sequential-time / parallel-time. Every configuration restarts
/// from the same seeded state. Sequential and parallel epochs are timed in
/// alternation so load drift hits both series alike, the per-series time is
/// the median of the per-epoch wall times, and the sequential baseline runs
/// on a spawned thread like the workers do, which keeps scheduler placement
/// comparable.
inline std::vector<SpeedupRow> measure_speedup(const std::vector<LayerShape>& shapes,
                                               const Dataset& data, SolverConfig cfg,
                                               const std::vector<Index>& worker_counts,
                                               Index timed_epochs = 10) {
  cfg.collect_metrics = false;
  Index neurons = 0;
  for (const auto& sh : shapes) neurons = std::max(neurons, sh.out_dim);

  auto fresh_state = [&] {
    ModelState s = init_state(shapes, data.p1, data.labels, cfg.hp.seed);
    if (cfg.hp.quantized()) quantize_inputs(s, *cfg.hp.quantization);
    return s;
  };

  auto timed_sequential_epoch = [&](ModelState& s) {
    double ms = 0.0;
    std::thread runner([&] {
      const auto t0 = std::chrono::steady_clock::now();
      run_epoch(s, data, cfg);
      ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                     t0)
               .count();
    });
    runner.join();
    return ms;
  };

  std::vector<SpeedupRow> rows;
  for (Index wc : worker_counts) {
    ModelState seq = fresh_state();
    ModelState par = fresh_state();
    LayerParallelExecutor executor(par, data, cfg, wc);
    timed_sequential_epoch(seq);  // warm-ups
    executor.run_epoch();

    std::vector<double> seq_times, par_times;
    for (Index e = 0; e < timed_epochs; ++e) {
      seq_times.push_back(timed_sequential_epoch(seq));
      const auto t0 = std::chrono::steady_clock::now();
      executor.run_epoch();
      par_times.push_back(std::chrono::duration<double, std::milli>(
                              std::chrono::steady_clock::now() - t0)
                              .count());
    }
    const double seq_ms = detail::median_of(std::move(seq_times));
    const double par_ms = detail::median_of(std::move(par_times));
    rows.push_back({wc, static_cast<Index>(shapes.size()), neurons, par_ms,
                    seq_ms / par_ms});
  }
  return rows;
}

}  // namespace pdadmm
