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

#include <fstream>
#include <optional>
#include <vector>

#include "pdadmm/core.hpp"
#include "pdadmm/graph.hpp"
#include "pdadmm/quantization.hpp"

namespace pdadmm {

struct LayerShape {
  Index in_dim = 0;   // n_{l-1}
  Index out_dim = 0;  // n_l
};

/// Training hyperparameters. `lipschitz` is the activation's Lipschitz
/// constant (1 for ReLU); the descent guarantee needs
/// rho > max(4 nu S^2, (sqrt(17)+1) nu / 2).
struct HyperParams {
  double rho = 1e-3;
  double nu = 1e-3;
  Index hops = 1;
  Index epochs = 100;
  double lipschitz = 1.0;
  std::vector<Index> schedule;  // strictly increasing layer counts, last = L
  double l2_coeff = 0.0;
  std::optional<QuantizationSet> quantization;  // set => quantized mode
  std::uint64_t seed = 1;

  bool quantized() const { return quantization.has_value(); }
};

/// Per-layer training variables. Samples are stored as columns: the input
/// copy p is in_dim x N and the linear output z is out_dim x N. Hidden layers
/// (l < L) additionally carry the output copy q and the dual u, both
/// out_dim x N. `lin` caches W*p and tracks every accepted p/W update.
struct Layer {
  Matrix W;      // out_dim x in_dim
  Vector b;      // out_dim
  Matrix p;      // in_dim x N
  Matrix z;      // out_dim x N
  Matrix q;      // out_dim x N, hidden layers only
  Matrix u;      // out_dim x N, hidden layers only
  Matrix lin;    // cache of W * p
  double tau = 1.0;
  double theta = 1.0;

  Index in_dim() const { return W.cols(); }
  Index out_dim() const { return W.rows(); }
};

struct ModelState {
  std::vector<Layer> layers;  // layers[0] is layer 1
  Index num_samples = 0;

  Index depth() const { return static_cast<Index>(layers.size()); }
  Layer& layer(Index l) { return layers[l - 1]; }              // 1-based
  const Layer& layer(Index l) const { return layers[l - 1]; }
};

inline Matrix relu(const Matrix& z) { return z.cwiseMax(0.0); }

inline void validate_shapes(const std::vector<LayerShape>& shapes) {
  if (shapes.empty()) throw std::invalid_argument("model needs at least one layer");
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    if (shapes[i].in_dim < 1 || shapes[i].out_dim < 1)
      throw std::invalid_argument("layer dimensions must be >= 1");
    if (i > 0 && shapes[i].in_dim != shapes[i - 1].out_dim)
      throw std::invalid_argument("layer " + std::to_string(i + 1) +
                                  " in_dim does not match previous out_dim");
  }
}

namespace detail {

inline Matrix glorot_uniform(Index rows, Index cols, std::uint64_t seed, Index layer) {
  Rng rng(derive_seed(seed, static_cast<std::uint64_t>(layer)));
  const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Matrix w(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) w(i, j) = rng.uniform(-bound, bound);
  return w;
}

}  // namespace detail

/// Appends freshly initialized layers `first..shapes.size()` (1-based) to the
/// state and runs the feasible forward sweep over them: z = Wp + b 1^T,
/// q = relu(z), p_{l+1} = q_l, u = 0. Used both for full initialization and
/// for progressive deepening.
inline void extend_state(ModelState& state, const std::vector<LayerShape>& shapes,
                         Index first, std::uint64_t seed) {
  const Index total = static_cast<Index>(shapes.size());
  for (Index l = first; l <= total; ++l) {
    const auto& sh = shapes[l - 1];
    Layer lay;
    lay.W = detail::glorot_uniform(sh.out_dim, sh.in_dim, seed, l);
    lay.b = Vector::Zero(sh.out_dim);
    if (l == 1) throw std::invalid_argument("extend_state: layer 1 needs init_state");
    Layer& prev = state.layer(l - 1);
    if (prev.q.size() == 0) {  // previous layer was the old output layer
      prev.q = relu(prev.z);
      prev.u = Matrix::Zero(prev.out_dim(), state.num_samples);
    }
    lay.p = prev.q;
    lay.lin.noalias() = lay.W * lay.p;
    lay.z = lay.lin;  // b = 0
    if (l < total) {
      lay.q = relu(lay.z);
      lay.u = Matrix::Zero(sh.out_dim, state.num_samples);
    }
    state.layers.push_back(std::move(lay));
  }
}

/// Builds the starting point: Glorot-uniform weights, zero intercepts, and a
/// feasible forward sweep so every consensus residual and dual starts at zero.
inline ModelState init_state(const std::vector<LayerShape>& shapes, const Matrix& p1,
                             const IntVector& labels, std::uint64_t seed) {
  validate_shapes(shapes);
  if (p1.rows() != shapes.front().in_dim)
    throw std::invalid_argument("init_state: p1 rows do not match layer 1 in_dim");
  if (labels.size() != p1.cols())
    throw std::invalid_argument("init_state: labels size does not match sample count");

  ModelState state;
  state.num_samples = p1.cols();
  const Index total = static_cast<Index>(shapes.size());

  Layer first;
  first.W = detail::glorot_uniform(shapes[0].out_dim, shapes[0].in_dim, seed, 1);
  first.b = Vector::Zero(shapes[0].out_dim);
  first.p = p1;
  first.lin.noalias() = first.W * first.p;
  first.z = first.lin;
  if (total > 1) {
    first.q = relu(first.z);
    first.u = Matrix::Zero(shapes[0].out_dim, state.num_samples);
  }
  state.layers.push_back(std::move(first));
  if (total > 1) extend_state(state, shapes, 2, seed);

  if (state.layers.size() != shapes.size())
    throw std::logic_error("init_state: layer count mismatch");
  return state;
}

/// Projects every hidden-layer input copy onto the level set; the starting
/// point for quantized runs.
inline void quantize_inputs(ModelState& state, const QuantizationSet& q) {
  for (Index l = 2; l <= state.depth(); ++l)
    state.layer(l).p = project(state.layer(l).p, q);
}

/// Plain forward pass z = Wp + b 1^T with ReLU between layers; returns the
/// final linear output.
inline Matrix forward(const ModelState& state, const Matrix& input) {
  if (input.rows() != state.layers.front().in_dim())
    throw std::invalid_argument("forward: input rows do not match layer 1 in_dim");
  Matrix h = input;
  for (Index l = 1; l <= state.depth(); ++l) {
    const Layer& lay = state.layer(l);
    Matrix z = (lay.W * h).colwise() + lay.b;
    if (l == state.depth()) return z;
    h = relu(z);
  }
  return h;  // unreachable
}

/// Fraction of masked columns whose argmax matches the label. Ties resolve
/// to the lowest class index.
inline double accuracy(const Matrix& logits, const IntVector& labels,
                       const std::vector<Index>& mask) {
  if (mask.empty()) throw std::invalid_argument("accuracy: empty mask");
  Index hits = 0;
  for (Index col : mask) {
    Index best = 0;
    for (Index r = 1; r < logits.rows(); ++r)
      if (logits(r, col) > logits(best, col)) best = r;
    if (best == labels[col]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(mask.size());
}

// ---------------------------------------------------------------------------
// Softmax cross-entropy over a set of labeled columns.

/// Sum over masked columns of -log softmax(z_col)[label].
inline double cross_entropy(const Matrix& logits, const IntVector& labels,
                            const std::vector<Index>& mask) {
  double total = 0.0;
  for (Index col : mask) {
    const auto z = logits.col(col);
    const double zmax = z.maxCoeff();
    const double lse = std::log((z.array() - zmax).exp().sum()) + zmax;
    total += lse - z[labels[col]];
  }
  return total;
}

/// Writes softmax(z_col) - onehot(label) into the corresponding column of
/// `grad` for every masked column. Other columns are untouched.
inline void cross_entropy_grad(const Matrix& logits, const IntVector& labels,
                               const std::vector<Index>& mask, Matrix& grad) {
  for (Index col : mask) {
    const auto z = logits.col(col);
    const double zmax = z.maxCoeff();
    Vector e = (z.array() - zmax).exp();
    grad.col(col) = e / e.sum();
    grad(labels[col], col) -= 1.0;
  }
}

// ---------------------------------------------------------------------------
// Checkpoints: little-endian binary, magic "PDAD". The parameter section
// (W, b, tau, theta) is always present; training auxiliaries (p, z, q, u) are
// included when `with_aux` is set.

namespace detail {

constexpr std::uint32_t kCheckpointVersion = 1;

inline void write_matrix(std::ofstream& out, const Matrix& m) {
  std::uint64_t rows = m.rows(), cols = m.cols();
  out.write(reinterpret_cast<const char*>(&rows), 8);
  out.write(reinterpret_cast<const char*>(&cols), 8);
  out.write(reinterpret_cast<const char*>(m.data()),
            static_cast<std::streamsize>(sizeof(double) * m.size()));
}

inline Matrix read_matrix(std::ifstream& in) {
  std::uint64_t rows = 0, cols = 0;
  in.read(reinterpret_cast<char*>(&rows), 8);
  in.read(reinterpret_cast<char*>(&cols), 8);
  if (!in) throw std::runtime_error("checkpoint: truncated matrix header");
  Matrix m(static_cast<Index>(rows), static_cast<Index>(cols));
  in.read(reinterpret_cast<char*>(m.data()),
          static_cast<std::streamsize>(sizeof(double) * m.size()));
  if (!in) throw std::runtime_error("checkpoint: truncated matrix payload");
  return m;
}

}  // namespace detail

inline void save_checkpoint(const ModelState& state, const std::string& path,
                            bool with_aux = false) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out.write("PDAD", 4);
  std::uint32_t version = detail::kCheckpointVersion;
  std::uint32_t depth = static_cast<std::uint32_t>(state.depth());
  std::uint32_t aux = with_aux ? 1 : 0;
  std::uint64_t samples = static_cast<std::uint64_t>(state.num_samples);
  out.write(reinterpret_cast<const char*>(&version), 4);
  out.write(reinterpret_cast<const char*>(&depth), 4);
  out.write(reinterpret_cast<const char*>(&aux), 4);
  out.write(reinterpret_cast<const char*>(&samples), 8);
  for (const Layer& lay : state.layers) {
    std::uint64_t in_dim = lay.in_dim(), out_dim = lay.out_dim();
    out.write(reinterpret_cast<const char*>(&in_dim), 8);
    out.write(reinterpret_cast<const char*>(&out_dim), 8);
  }
  for (const Layer& lay : state.layers) {
    detail::write_matrix(out, lay.W);
    detail::write_matrix(out, lay.b);
    out.write(reinterpret_cast<const char*>(&lay.tau), 8);
    out.write(reinterpret_cast<const char*>(&lay.theta), 8);
    if (with_aux) {
      detail::write_matrix(out, lay.p);
      detail::write_matrix(out, lay.z);
      detail::write_matrix(out, lay.q);
      detail::write_matrix(out, lay.u);
    }
  }
  if (!out) throw std::runtime_error("checkpoint: write failed for " + path);
}

inline ModelState load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  char magic[4] = {};
  in.read(magic, 4);
  if (!in || std::string(magic, 4) != "PDAD")
    throw std::runtime_error(path + ": not a checkpoint file (bad magic)");
  std::uint32_t version = 0, depth = 0, aux = 0;
  std::uint64_t samples = 0;
  in.read(reinterpret_cast<char*>(&version), 4);
  in.read(reinterpret_cast<char*>(&depth), 4);
  in.read(reinterpret_cast<char*>(&aux), 4);
  in.read(reinterpret_cast<char*>(&samples), 8);
  if (!in || version != detail::kCheckpointVersion)
    throw std::runtime_error(path + ": unsupported checkpoint version");
  std::vector<LayerShape> shapes(depth);
  for (auto& sh : shapes) {
    std::uint64_t in_dim = 0, out_dim = 0;
    in.read(reinterpret_cast<char*>(&in_dim), 8);
    in.read(reinterpret_cast<char*>(&out_dim), 8);
    sh.in_dim = static_cast<Index>(in_dim);
    sh.out_dim = static_cast<Index>(out_dim);
  }
  if (!in) throw std::runtime_error(path + ": truncated shape table");
  ModelState state;
  state.num_samples = static_cast<Index>(samples);
  for (std::uint32_t l = 0; l < depth; ++l) {
    Layer lay;
    lay.W = detail::read_matrix(in);
    Matrix b = detail::read_matrix(in);
    lay.b = b.col(0);
    in.read(reinterpret_cast<char*>(&lay.tau), 8);
    in.read(reinterpret_cast<char*>(&lay.theta), 8);
    if (aux) {
      lay.p = detail::read_matrix(in);
      lay.z = detail::read_matrix(in);
      lay.q = detail::read_matrix(in);
      lay.u = detail::read_matrix(in);
      lay.lin.noalias() = lay.W * lay.p;
    }
    if (lay.W.rows() != shapes[l].out_dim || lay.W.cols() != shapes[l].in_dim)
      throw std::runtime_error(path + ": layer shape mismatch");
    state.layers.push_back(std::move(lay));
  }
  if (!in) throw std::runtime_error(path + ": truncated layer payload");
  return state;
}

/// FNV-1a fingerprint over every tensor and step parameter in layer order.
inline std::uint64_t state_hash(const ModelState& state) {
  Fnv1a h;
  h.update(static_cast<std::uint64_t>(state.depth()));
  h.update(static_cast<std::uint64_t>(state.num_samples));
  for (const Layer& lay : state.layers) {
    h.update(lay.W);
    h.update(lay.b);
    h.update(lay.p);
    h.update(lay.z);
    h.update(lay.q);
    h.update(lay.u);
    h.update(lay.tau);
    h.update(lay.theta);
  }
  return h.h;
}

// ---------------------------------------------------------------------------

/// Solver-facing view of a dataset: augmented features transposed to
/// column-per-sample, plus labels and masks.
struct Dataset {
  Matrix p1;  // (K * num_features) x num_nodes
  IntVector labels;
  std::vector<Index> train_mask;
  std::vector<Index> test_mask;
  Index num_classes = 0;
};

inline Dataset prepare_dataset(const Graph& g, Index hops) {
  Dataset d;
  d.p1 = augment_features(g, hops).matrix.transpose();
  d.labels = g.labels;
  d.train_mask = g.train_mask;
  d.test_mask = g.test_mask;
  d.num_classes = g.num_classes;
  return d;
}

/// Layer shapes for an L-layer model with uniform hidden width.
inline std::vector<LayerShape> make_shapes(Index input_dim, Index hidden, Index classes,
                                           Index depth) {
  if (depth < 1) throw std::invalid_argument("make_shapes: depth must be >= 1");
  std::vector<LayerShape> shapes;
  Index in = input_dim;
  for (Index l = 1; l <= depth; ++l) {
    Index out = (l == depth) ? classes : hidden;
    shapes.push_back({in, out});
    in = out;
  }
  return shapes;
}

}  // namespace pdadmm
