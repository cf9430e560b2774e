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
#include <limits>
#include <vector>

#include "pdadmm/model.hpp"

namespace pdadmm {

/// One row of the training log. `lagrangian` holds the augmented Lagrangian
/// (with the indicator folded in on quantized runs, so it is +inf whenever an
/// input copy leaves the level set). `ck` is the running minimum of
/// `descent_term`; NaN when the rate constants are not positive.
struct EpochMetrics {
  Index epoch = 0;
  double lagrangian = 0.0;
  double risk = 0.0;
  double max_residual = 0.0;
  double mean_residual = 0.0;
  double descent_term = 0.0;
  double ck = std::numeric_limits<double>::quiet_NaN();
  double train_acc = 0.0;
  double test_acc = 0.0;
  double wall_ms = 0.0;
  std::uint64_t bytes_sent = 0;
};

/// Weighted squared iterate changes collected over one epoch; the inputs to
/// the convergence-rate metric. p and W contributions carry their accepted
/// step parameters (tau/2, theta/2) already folded in.
struct IterationDeltas {
  double p_weighted = 0.0;
  double w_weighted = 0.0;
  double b_sq = 0.0;
  double z_hidden_sq = 0.0;
  double z_out_sq = 0.0;
  double q_sq = 0.0;
};

inline double rho_threshold(double nu, double lipschitz) {
  return std::max(4.0 * nu * lipschitz * lipschitz, (std::sqrt(17.0) + 1.0) * nu / 2.0);
}

inline double c1_constant(const HyperParams& hp) {
  return hp.nu / 2.0 - 2.0 * hp.nu * hp.nu * hp.lipschitz * hp.lipschitz / hp.rho;
}

inline double c2_constant(const HyperParams& hp) {
  return hp.rho / 2.0 - 2.0 * hp.nu * hp.nu / hp.rho - hp.nu / 2.0;
}

/// Weighted sum of one epoch's squared changes. NaN when C1 or C2 is not
/// positive (the rate certificate does not apply). The quantized variant
/// omits the p term.
inline double descent_term(const IterationDeltas& d, const HyperParams& hp,
                           bool quantized) {
  const double c1 = c1_constant(hp), c2 = c2_constant(hp);
  if (!(c1 > 0.0) || !(c2 > 0.0)) return std::numeric_limits<double>::quiet_NaN();
  double v = d.w_weighted + (hp.nu / 2.0) * d.b_sq + c1 * d.z_hidden_sq +
             (hp.nu / 2.0) * d.z_out_sq + c2 * d.q_sq;
  if (!quantized) v += d.p_weighted;
  return v;
}

/// Running minimum of the per-iteration descent terms (c_k, or d_k when the
/// p contributions are omitted upstream).
inline std::vector<double> ck_metric(const std::vector<double>& per_iteration) {
  std::vector<double> out(per_iteration.size());
  double running = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < per_iteration.size(); ++i) {
    running = std::min(running, per_iteration[i]);
    out[i] = running;
  }
  return out;
}

/// Component-wise form: the six histories must be equally long.
inline std::vector<double> ck_metric(const std::vector<IterationDeltas>& history,
                                     const HyperParams& hp, bool quantized) {
  std::vector<double> terms(history.size());
  for (std::size_t i = 0; i < history.size(); ++i)
    terms[i] = descent_term(history[i], hp, quantized);
  return ck_metric(terms);
}

inline std::vector<double> ck_metric(
    const std::vector<double>& p_weighted, const std::vector<double>& w_weighted,
    const std::vector<double>& b_sq, const std::vector<double>& z_hidden_sq,
    const std::vector<double>& z_out_sq, const std::vector<double>& q_sq,
    const HyperParams& hp, bool quantized) {
  const std::size_t n = p_weighted.size();
  if (w_weighted.size() != n || b_sq.size() != n || z_hidden_sq.size() != n ||
      z_out_sq.size() != n || q_sq.size() != n)
    throw std::invalid_argument("ck_metric: mismatched history lengths");
  std::vector<IterationDeltas> hist(n);
  for (std::size_t i = 0; i < n; ++i)
    hist[i] = {p_weighted[i], w_weighted[i], b_sq[i],
               z_hidden_sq[i], z_out_sq[i], q_sq[i]};
  return ck_metric(hist, hp, quantized);
}

/// Consensus gaps ||p_{l+1} - q_l||_F for l = 1..L-1.
inline std::vector<double> residuals(const ModelState& state) {
  std::vector<double> out;
  for (Index l = 1; l < state.depth(); ++l)
    out.push_back((state.layer(l + 1).p - state.layer(l).q).norm());
  return out;
}

/// Max-norm deviation from the dual identity u_l = nu (q_l - relu(z_l)),
/// which the q/u updates maintain by construction.
inline double check_dual_identity(const ModelState& state, const HyperParams& hp) {
  double worst = 0.0;
  for (Index l = 1; l < state.depth(); ++l) {
    const Layer& lay = state.layer(l);
    double dev = (lay.u - hp.nu * (lay.q - relu(lay.z))).cwiseAbs().maxCoeff();
    worst = std::max(worst, dev);
  }
  return worst;
}

/// Full augmented Lagrangian:
///   R(z_L; y) + sum_l (nu/2)||z_l - W_l p_l - b_l 1^T||_F^2
///   + sum_{l<L} [ <u_l, p_{l+1} - q_l> + (rho/2)||p_{l+1} - q_l||_F^2
///                 + (nu/2)||q_l - relu(z_l)||_F^2 ]
/// plus the l2 penalty on W when configured. In quantized mode the indicator
/// makes the value +inf as soon as any p_l (l >= 2) is off the level set.
inline double lagrangian(const ModelState& state, const Dataset& data,
                         const HyperParams& hp, bool quantized) {
  if (quantized) {
    if (!hp.quantization)
      throw std::invalid_argument("lagrangian: quantized mode needs a level set");
    const auto& qs = *hp.quantization;
    for (Index l = 2; l <= state.depth(); ++l) {
      const Matrix& p = state.layer(l).p;
      const double* v = p.data();
      for (Index i = 0; i < p.size(); ++i)
        if (project_value(v[i], qs) != v[i])
          return std::numeric_limits<double>::infinity();
    }
  }

  const Index depth = state.depth();
  double total = cross_entropy(state.layer(depth).z, data.labels, data.train_mask);
  for (Index l = 1; l <= depth; ++l) {
    const Layer& lay = state.layer(l);
    Matrix lin = lay.lin.size() ? lay.lin : Matrix(lay.W * lay.p);
    total += 0.5 * hp.nu * ((lay.z - lin).colwise() - lay.b).squaredNorm();
    if (hp.l2_coeff > 0.0) total += 0.5 * hp.l2_coeff * lay.W.squaredNorm();
    if (l < depth) {
      const Matrix gap = state.layer(l + 1).p - lay.q;
      total += lay.u.cwiseProduct(gap).sum() + 0.5 * hp.rho * gap.squaredNorm();
      total += 0.5 * hp.nu * (lay.q - relu(lay.z)).squaredNorm();
    }
  }
  return total;
}

}  // namespace pdadmm
