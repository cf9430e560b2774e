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

#include <chrono>
#include <iostream>
#include <vector>

#include "pdadmm/diagnostics.hpp"
#include "pdadmm/model.hpp"

namespace pdadmm {

struct SolverConfig {
  HyperParams hp;
  double backtrack_eta = 2.0;   // step growth factor, > 1
  double step_floor = 1e-6;     // warm-started tau/theta never go below this
  double step_ceiling = 1e12;   // exceeding this aborts the epoch
  Index fista_max_iters = 50;
  double fista_grad_tol = 1e-8;
  bool collect_metrics = true;  // benchmark runs turn this off
};

/// Inputs of the per-layer coupling term. For layer 1 the consensus members
/// stay null and only the linear-fit term contributes.
struct PhiInputs {
  const Matrix* p = nullptr;
  const Matrix* W = nullptr;
  const Vector* b = nullptr;
  const Matrix* z = nullptr;
  const Matrix* q_prev = nullptr;
  const Matrix* u_prev = nullptr;
  double rho = 0.0;
  double nu = 0.0;
};

/// phi = (nu/2)||z - Wp - b 1^T||_F^2 for layer 1, plus
/// <u, p - q> + (rho/2)||p - q||_F^2 for layers >= 2.
inline double eval_phi(const PhiInputs& in) {
  Matrix lin = (*in.W) * (*in.p);
  double val = 0.5 * in.nu * ((*in.z - lin).colwise() - *in.b).squaredNorm();
  if (in.q_prev) {
    const Matrix gap = *in.p - *in.q_prev;
    val += in.u_prev->cwiseProduct(gap).sum() + 0.5 * in.rho * gap.squaredNorm();
  }
  return val;
}

/// Record of one accepted majorization step. The inequality
/// `phi_candidate <= majorizer` is the acceptance condition and holds for
/// every step the solver takes.
struct BacktrackReport {
  double step = 0.0;        // accepted tau or theta
  double phi_candidate = 0.0;
  double majorizer = 0.0;
  double delta_sq = 0.0;    // squared norm of the accepted change
  int trials = 0;
};

namespace detail {

inline double consensus_value(const Matrix& p, const Matrix& q, const Matrix& u,
                              double rho) {
  const Matrix gap = p - q;
  return u.cwiseProduct(gap).sum() + 0.5 * rho * gap.squaredNorm();
}

inline void check_finite(const Matrix& m, const char* phase) {
  if (!m.allFinite())
    throw SolverAbort(std::string("non-finite values after ") + phase + " phase");
}

}  // namespace detail

/// grad_p phi = -nu W^T (z - Wp - b 1^T) + u_prev + rho (p - q_prev).
inline Matrix phi_grad_p(const Layer& lay, const Matrix& q_prev, const Matrix& u_prev,
                         double nu, double rho) {
  const Matrix res = (lay.z - lay.lin).colwise() - lay.b;
  return -nu * (lay.W.transpose() * res) + u_prev + rho * (lay.p - q_prev);
}

/// grad_W phi = -nu (z - Wp - b 1^T) p^T, plus the l2 term when configured.
inline Matrix phi_grad_W(const Layer& lay, double nu, double l2) {
  const Matrix res = (lay.z - lay.lin).colwise() - lay.b;
  Matrix grad = -nu * (res * lay.p.transpose());
  if (l2 > 0.0) grad += l2 * lay.W;
  return grad;
}

/// grad_b phi = -nu (z - Wp - b 1^T) 1.
inline Vector phi_grad_b(const Layer& lay, double nu) {
  return -nu * ((lay.z - lay.lin).colwise() - lay.b).rowwise().sum();
}

/// A sink for the buffers an update replaces. The parallel executor uses it
/// to implement copy-on-entry rollback without deep copies: the pre-update
/// tensors retire here by move.
struct RetiredTensors {
  Matrix* primary = nullptr;  // the variable the update owns (p, W, z, q)
  Matrix* lin = nullptr;      // the W*p cache, when the update refreshes it
};

namespace detail {

inline void retire(Matrix* sink, Matrix&& old) {
  if (sink) *sink = std::move(old);
}

}  // namespace detail

/// Majorized gradient step on the layer input copy (layers >= 2 only):
/// backtracks tau upward from max(tau/eta, floor) until
/// phi(candidate) <= phi(p) - ||grad||^2 / (2 tau), the majorization test.
inline BacktrackReport update_p(Layer& lay, const Matrix& q_prev, const Matrix& u_prev,
                                const SolverConfig& cfg,
                                const RetiredTensors& retired = {}) {
  const double nu = cfg.hp.nu, rho = cfg.hp.rho;
  const Matrix res = (lay.z - lay.lin).colwise() - lay.b;
  Matrix grad = phi_grad_p(lay, q_prev, u_prev, nu, rho);

  const double phi_old = 0.5 * nu * res.squaredNorm() +
                         detail::consensus_value(lay.p, q_prev, u_prev, rho);
  const double grad_sq = grad.squaredNorm();

  BacktrackReport rep;
  if (grad_sq == 0.0) {  // fixed point for any tau
    rep.step = lay.tau;
    rep.phi_candidate = rep.majorizer = phi_old;
    rep.trials = 1;
    return rep;
  }
  // Exact curvature bound of phi in p; beyond it a failing test can only be
  // floating-point noise, so the subproblem counts as solved in place.
  const double curvature = nu * lay.W.squaredNorm() + rho;
  double tau = std::max(lay.tau / cfg.backtrack_eta, cfg.step_floor);
  for (;; tau *= cfg.backtrack_eta) {
    if (tau > cfg.step_ceiling)
      throw SolverAbort("p update: step parameter exceeded ceiling " +
                        format_double(cfg.step_ceiling));
    ++rep.trials;
    Matrix cand = lay.p - grad / tau;
    if (cand == lay.p) {  // step underflowed: converged at machine precision
      rep.step = lay.tau;
      rep.phi_candidate = rep.majorizer = phi_old;
      return rep;
    }
    Matrix cand_lin = lay.W * cand;
    const double phi_cand =
        0.5 * nu * ((lay.z - cand_lin).colwise() - lay.b).squaredNorm() +
        detail::consensus_value(cand, q_prev, u_prev, rho);
    const double majorizer = phi_old - grad_sq / (2.0 * tau);
    if (phi_cand <= majorizer) {
      rep.step = tau;
      rep.phi_candidate = phi_cand;
      rep.majorizer = majorizer;
      rep.delta_sq = (cand - lay.p).squaredNorm();
      detail::retire(retired.primary, std::move(lay.p));
      detail::retire(retired.lin, std::move(lay.lin));
      lay.p = std::move(cand);
      lay.lin = std::move(cand_lin);
      lay.tau = tau;
      return rep;
    }
    if (tau >= curvature) {  // descent is below evaluation noise: stay put
      rep.step = lay.tau;
      rep.phi_candidate = rep.majorizer = phi_old;
      return rep;
    }
  }
}

/// Majorized gradient step on the weights, any layer. The consensus terms of
/// layers >= 2 are constant in W and enter both sides of the acceptance test.
inline BacktrackReport update_W(Layer& lay, const Matrix* q_prev, const Matrix* u_prev,
                                const SolverConfig& cfg,
                                const RetiredTensors& retired = {}) {
  const double nu = cfg.hp.nu, l2 = cfg.hp.l2_coeff;
  const Matrix res = (lay.z - lay.lin).colwise() - lay.b;
  Matrix grad = phi_grad_W(lay, nu, l2);

  const double consensus =
      q_prev ? detail::consensus_value(lay.p, *q_prev, *u_prev, cfg.hp.rho) : 0.0;
  const double phi_old =
      0.5 * nu * res.squaredNorm() + 0.5 * l2 * lay.W.squaredNorm() + consensus;
  const double grad_sq = grad.squaredNorm();

  BacktrackReport rep;
  if (grad_sq == 0.0) {
    rep.step = lay.theta;
    rep.phi_candidate = rep.majorizer = phi_old;
    rep.trials = 1;
    return rep;
  }
  const double curvature = nu * lay.p.squaredNorm() + l2;
  double theta = std::max(lay.theta / cfg.backtrack_eta, cfg.step_floor);
  for (;; theta *= cfg.backtrack_eta) {
    if (theta > cfg.step_ceiling)
      throw SolverAbort("W update: step parameter exceeded ceiling " +
                        format_double(cfg.step_ceiling));
    ++rep.trials;
    Matrix cand = lay.W - grad / theta;
    if (cand == lay.W) {  // step underflowed: converged at machine precision
      rep.step = lay.theta;
      rep.phi_candidate = rep.majorizer = phi_old;
      return rep;
    }
    Matrix cand_lin = cand * lay.p;
    const double phi_cand =
        0.5 * nu * ((lay.z - cand_lin).colwise() - lay.b).squaredNorm() +
        0.5 * l2 * cand.squaredNorm() + consensus;
    const double majorizer = phi_old - grad_sq / (2.0 * theta);
    if (phi_cand <= majorizer) {
      rep.step = theta;
      rep.phi_candidate = phi_cand;
      rep.majorizer = majorizer;
      rep.delta_sq = (cand - lay.W).squaredNorm();
      detail::retire(retired.primary, std::move(lay.W));
      detail::retire(retired.lin, std::move(lay.lin));
      lay.W = std::move(cand);
      lay.lin = std::move(cand_lin);
      lay.theta = theta;
      return rep;
    }
    if (theta >= curvature) {
      rep.step = lay.theta;
      rep.phi_candidate = rep.majorizer = phi_old;
      return rep;
    }
  }
}

/// Exact minimizer of phi in b: the row-wise mean of z - Wp over samples.
/// Returns ||b_new - b_old||^2.
inline double update_b(Layer& lay) {
  Vector fresh = (lay.z - lay.lin).rowwise().mean();
  const double delta_sq = (fresh - lay.b).squaredNorm();
  lay.b = std::move(fresh);
  return delta_sq;
}

/// Elementwise hidden-z minimizer; see update_z_hidden.
inline double z_hidden_entry(double a, double c, double d) {
  const double zn = std::min((a + d) / 2.0, 0.0);
  const double zp = std::max((a + c + d) / 3.0, 0.0);
  const double jn = (zn - a) * (zn - a) + c * c + (zn - d) * (zn - d);
  const double jp = (zp - a) * (zp - a) + (c - zp) * (c - zp) + (zp - d) * (zp - d);
  return (jn < jp) ? zn : zp;
}

/// Elementwise exact minimizer of
///   (z - a)^2 + (c - relu(z))^2 + (z - d)^2
/// with a = (Wp + b 1^T) entry, c = q entry, d = previous z entry. The two
/// branch minimizers are min((a+d)/2, 0) and max((a+c+d)/3, 0); equal
/// objectives resolve to the nonnegative branch. Returns ||z_new - z_old||^2.
inline double update_z_hidden(Layer& lay, Matrix* retired_z = nullptr) {
  double delta_sq = 0.0;
  const Index rows = lay.z.rows(), cols = lay.z.cols();
  Matrix fresh(rows, cols);
  for (Index j = 0; j < cols; ++j) {
    for (Index i = 0; i < rows; ++i) {
      const double d = lay.z(i, j);
      const double znew = z_hidden_entry(lay.lin(i, j) + lay.b[i], lay.q(i, j), d);
      delta_sq += (znew - d) * (znew - d);
      fresh(i, j) = znew;
    }
  }
  detail::retire(retired_z, std::move(lay.z));
  lay.z = std::move(fresh);
  return delta_sq;
}

// ---------------------------------------------------------------------------
// Output-layer subproblem: softmax cross-entropy over the labeled columns
// plus the proximal tie to the linear output, solved by FISTA.

/// R(z; y) over `mask` + (nu/2)||z - a||_F^2 over all columns.
inline double output_objective(const Matrix& z, const Matrix& a, const IntVector& labels,
                               const std::vector<Index>& mask, double nu) {
  return cross_entropy(z, labels, mask) + 0.5 * nu * (z - a).squaredNorm();
}

inline Matrix output_gradient(const Matrix& z, const Matrix& a, const IntVector& labels,
                              const std::vector<Index>& mask, double nu) {
  Matrix grad = nu * (z - a);
  Matrix ce = Matrix::Zero(z.rows(), z.cols());
  cross_entropy_grad(z, labels, mask, ce);
  return grad + ce;
}

/// FISTA with step 1/(1+nu) and momentum restart whenever the objective
/// rises. Unlabeled columns have the closed form z = a and are set directly;
/// the iteration runs on the labeled block only. The result never has a
/// larger objective than the warm start. Returns ||z_new - z_old||^2.
inline double update_z_output(Layer& lay, const IntVector& labels,
                              const std::vector<Index>& mask, const SolverConfig& cfg,
                              Matrix* retired_z = nullptr) {
  const double nu = cfg.hp.nu;
  const Index rows = lay.z.rows();
  const Index nlab = static_cast<Index>(mask.size());

  Matrix a = lay.lin;
  a.colwise() += lay.b;

  // Labeled block, columns in mask order.
  Matrix a_lab(rows, nlab), x(rows, nlab);
  IntVector y_lab(nlab);
  for (Index j = 0; j < nlab; ++j) {
    a_lab.col(j) = a.col(mask[j]);
    x.col(j) = lay.z.col(mask[j]);
    y_lab[j] = labels[mask[j]];
  }
  std::vector<Index> all(nlab);
  for (Index j = 0; j < nlab; ++j) all[j] = j;

  const double step = 1.0 / (1.0 + nu);
  auto objective = [&](const Matrix& zz) {
    return output_objective(zz, a_lab, y_lab, all, nu);
  };
  auto gradient = [&](const Matrix& zz) {
    return output_gradient(zz, a_lab, y_lab, all, nu);
  };

  double obj_x = objective(x);
  Matrix yv = x;
  double t = 1.0;
  for (Index it = 0; it < cfg.fista_max_iters; ++it) {
    Matrix xn = yv - step * gradient(yv);
    double obj_n = objective(xn);
    if (obj_n > obj_x) {  // overshoot: restart the momentum at x
      t = 1.0;
      xn = x - step * gradient(x);
      obj_n = objective(xn);
      if (obj_n > obj_x) {  // at numerical stationarity already
        xn = x;
        obj_n = obj_x;
      }
    }
    const double tn = (1.0 + std::sqrt(1.0 + 4.0 * t * t)) / 2.0;
    yv = xn + ((t - 1.0) / tn) * (xn - x);
    x = std::move(xn);
    obj_x = obj_n;
    t = tn;
    if (gradient(x).norm() < cfg.fista_grad_tol) break;
  }

  Matrix old_z = std::move(lay.z);
  lay.z = std::move(a);  // unlabeled columns take the proximal closed form exactly
  for (Index j = 0; j < nlab; ++j) lay.z.col(mask[j]) = x.col(j);
  const double delta_sq = (lay.z - old_z).squaredNorm();
  detail::retire(retired_z, std::move(old_z));
  return delta_sq;
}

/// Exact stationary point of the q subproblem:
///   q = (nu relu(z) + u + rho p_next) / (nu + rho),
/// which reduces to (p + u/rho + relu(z)) / 2 when nu == rho.
/// Returns ||q_new - q_old||^2.
inline double update_q(Layer& lay, const Matrix& p_next, double nu, double rho,
                       Matrix* retired_q = nullptr) {
  Matrix fresh = (nu * relu(lay.z) + lay.u + rho * p_next) / (nu + rho);
  const double delta_sq = (fresh - lay.q).squaredNorm();
  detail::retire(retired_q, std::move(lay.q));
  lay.q = std::move(fresh);
  return delta_sq;
}

/// Dual ascent u += rho (p_next - q). Afterwards u = nu (q - relu(z)) holds
/// identically because q was just set to its stationary point.
inline void update_u(Layer& lay, const Matrix& p_next, double rho) {
  lay.u += rho * (p_next - lay.q);
}

// ---------------------------------------------------------------------------
// Quantized input update (the only step that differs from the full-precision
// algorithm): one gradient step with the fixed curvature bound
// tau = rho + nu ||W||_F^2, projected back onto the level set.

inline BacktrackReport update_p_quantized(Layer& lay, const Matrix& q_prev,
                                          const Matrix& u_prev, const SolverConfig& cfg,
                                          const QuantizationSet& levels,
                                          const RetiredTensors& retired = {}) {
  const double nu = cfg.hp.nu, rho = cfg.hp.rho;
  Matrix grad = phi_grad_p(lay, q_prev, u_prev, nu, rho);

  const double tau = rho + nu * lay.W.squaredNorm();
  Matrix cand = project(lay.p - grad / tau, levels);

  BacktrackReport rep;
  rep.step = tau;
  rep.trials = 1;
  rep.delta_sq = (cand - lay.p).squaredNorm();
  rep.phi_candidate = 0.0;
  rep.majorizer = 0.0;
  detail::retire(retired.primary, std::move(lay.p));
  detail::retire(retired.lin, std::move(lay.lin));
  lay.p = std::move(cand);
  lay.lin = lay.W * lay.p;
  lay.tau = tau;
  return rep;
}

// ---------------------------------------------------------------------------
// Epoch driver (sequential executor). The parallel executor reproduces the
// exact same per-layer arithmetic; see parallel.hpp.

namespace detail {

inline void epoch_phases(ModelState& state, const Dataset& data, const SolverConfig& cfg,
                         IterationDeltas& deltas, std::vector<double>& residual_norms) {
  const Index depth = state.depth();
  const bool quantized = cfg.hp.quantized();

  for (Index l = 2; l <= depth; ++l) {
    Layer& lay = state.layer(l);
    const Layer& prev = state.layer(l - 1);
    if (quantized) {
      auto rep = update_p_quantized(lay, prev.q, prev.u, cfg, *cfg.hp.quantization);
      deltas.p_weighted += 0.5 * rep.step * rep.delta_sq;
    } else {
      auto rep = update_p(lay, prev.q, prev.u, cfg);
      deltas.p_weighted += 0.5 * rep.step * rep.delta_sq;
    }
    detail::check_finite(lay.p, "p");
  }

  for (Index l = 1; l <= depth; ++l) {
    Layer& lay = state.layer(l);
    const bool first = (l == 1);
    auto rep = update_W(lay, first ? nullptr : &state.layer(l - 1).q,
                        first ? nullptr : &state.layer(l - 1).u, cfg);
    deltas.w_weighted += 0.5 * rep.step * rep.delta_sq;
    detail::check_finite(lay.W, "W");
  }

  for (Index l = 1; l <= depth; ++l) {
    deltas.b_sq += update_b(state.layer(l));
    if (!state.layer(l).b.allFinite()) throw SolverAbort("non-finite values after b phase");
  }

  for (Index l = 1; l <= depth; ++l) {
    Layer& lay = state.layer(l);
    if (l < depth)
      deltas.z_hidden_sq += update_z_hidden(lay);
    else
      deltas.z_out_sq += update_z_output(lay, data.labels, data.train_mask, cfg);
    detail::check_finite(lay.z, "z");
  }

  for (Index l = 1; l < depth; ++l) {
    deltas.q_sq += update_q(state.layer(l), state.layer(l + 1).p, cfg.hp.nu, cfg.hp.rho);
    detail::check_finite(state.layer(l).q, "q");
  }

  residual_norms.clear();
  for (Index l = 1; l < depth; ++l) {
    const Matrix gap = state.layer(l + 1).p - state.layer(l).q;
    residual_norms.push_back(gap.norm());
    state.layer(l).u += cfg.hp.rho * gap;
    detail::check_finite(state.layer(l).u, "u");
  }
}

/// Forward pass that reuses the layer-1 linear cache (its input never
/// changes), so per-epoch accuracy costs only the small upper layers.
inline Matrix forward_cached(const ModelState& state) {
  const Index depth = state.depth();
  Matrix h;
  for (Index l = 1; l <= depth; ++l) {
    const Layer& lay = state.layer(l);
    Matrix z = (l == 1) ? Matrix(lay.lin) : Matrix(lay.W * h);
    z.colwise() += lay.b;
    if (l == depth) return z;
    h = relu(z);
  }
  return h;
}

}  // namespace detail

/// One full iteration of the layer-parallel scheme, executed sequentially:
/// p, W, b, z, q phases, then residuals and the dual ascent. Metrics are
/// evaluated on the post-epoch state unless disabled.
inline EpochMetrics run_epoch(ModelState& state, const Dataset& data,
                              const SolverConfig& cfg) {
  EpochMetrics m;
  IterationDeltas deltas;
  std::vector<double> residual_norms;

  const auto t0 = std::chrono::steady_clock::now();
  detail::epoch_phases(state, data, cfg, deltas, residual_norms);
  m.wall_ms = std::chrono::duration<double, std::milli>(
                  std::chrono::steady_clock::now() - t0)
                  .count();

  m.descent_term = descent_term(deltas, cfg.hp, cfg.hp.quantized());
  if (!residual_norms.empty()) {
    for (double r : residual_norms) {
      m.max_residual = std::max(m.max_residual, r);
      m.mean_residual += r;
    }
    m.mean_residual /= static_cast<double>(residual_norms.size());
  }
  if (cfg.collect_metrics) {
    m.lagrangian = lagrangian(state, data, cfg.hp, cfg.hp.quantized());
    m.risk = cross_entropy(state.layer(state.depth()).z, data.labels, data.train_mask);
    const Matrix logits = detail::forward_cached(state);
    m.train_acc = accuracy(logits, data.labels, data.train_mask);
    if (!data.test_mask.empty()) m.test_acc = accuracy(logits, data.labels, data.test_mask);
  }
  return m;
}

}  // namespace pdadmm
