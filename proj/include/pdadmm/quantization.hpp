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
#include <cmath>
#include <cstdint>
#include <cstring>
#include <vector>

#include "pdadmm/core.hpp"

namespace pdadmm {

/// Ordered level set used to constrain layer inputs in quantized mode.
/// Entries are strictly increasing; codewords use ceil(log2(m)) bits.
struct QuantizationSet {
  std::vector<double> levels;

  int bits_per_entry() const {
    int bits = 1;
    while ((std::size_t{1} << bits) < levels.size()) ++bits;
    return bits;
  }
};

inline QuantizationSet make_uniform_levels(double lo, double hi, Index m) {
  if (!(lo < hi)) throw std::invalid_argument("make_uniform_levels: need lo < hi");
  if (m < 2) throw std::invalid_argument("make_uniform_levels: need m >= 2");
  QuantizationSet q;
  q.levels.resize(m);
  for (Index i = 0; i < m; ++i)
    q.levels[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(m - 1);
  return q;
}

/// Index of the level nearest to v; exact midpoints resolve to the lower level.
inline Index nearest_level_index(double v, const QuantizationSet& q) {
  const auto& lv = q.levels;
  auto it = std::lower_bound(lv.begin(), lv.end(), v);
  if (it == lv.begin()) return 0;
  if (it == lv.end()) return static_cast<Index>(lv.size()) - 1;
  Index hi = it - lv.begin();
  Index lo = hi - 1;
  // Tie (equidistant) goes to the lower level.
  return (v - lv[lo] < lv[hi] - v) ? lo : (v - lv[lo] > lv[hi] - v) ? hi : lo;
}

inline double project_value(double v, const QuantizationSet& q) {
  return q.levels[nearest_level_index(v, q)];
}

inline Matrix project(const Matrix& values, const QuantizationSet& q) {
  Matrix out(values.rows(), values.cols());
  const double* src = values.data();
  double* dst = out.data();
  for (Index i = 0; i < values.size(); ++i) dst[i] = project_value(src[i], q);
  return out;
}

// ---------------------------------------------------------------------------
// Wire codec. Header {layer id: u16, rows: u32, cols: u32, m: u16} followed by
// level indices packed little-endian, bits_per_entry each, padded to a byte.

constexpr std::size_t kWireHeaderBytes = 2 + 4 + 4 + 2;

inline std::size_t encoded_payload_bytes(Index entries, const QuantizationSet& q) {
  return (static_cast<std::size_t>(entries) * q.bits_per_entry() + 7) / 8;
}

inline std::vector<std::uint8_t> encode(const Matrix& values, const QuantizationSet& q,
                                        std::uint16_t layer_id = 0) {
  const int bits = q.bits_per_entry();
  std::vector<std::uint8_t> buf(kWireHeaderBytes + encoded_payload_bytes(values.size(), q), 0);
  const std::uint16_t m = static_cast<std::uint16_t>(q.levels.size());
  const std::uint32_t rows = static_cast<std::uint32_t>(values.rows());
  const std::uint32_t cols = static_cast<std::uint32_t>(values.cols());
  std::memcpy(buf.data() + 0, &layer_id, 2);
  std::memcpy(buf.data() + 2, &rows, 4);
  std::memcpy(buf.data() + 6, &cols, 4);
  std::memcpy(buf.data() + 10, &m, 2);

  const double* src = values.data();
  std::size_t bitpos = 0;
  std::uint8_t* payload = buf.data() + kWireHeaderBytes;
  for (Index i = 0; i < values.size(); ++i) {
    Index idx = nearest_level_index(src[i], q);
    if (q.levels[idx] != src[i])
      throw std::runtime_error("encode: value is not a member of the level set");
    for (int b = 0; b < bits; ++b, ++bitpos)
      if ((idx >> b) & 1) payload[bitpos >> 3] |= std::uint8_t(1) << (bitpos & 7);
  }
  return buf;
}

inline Matrix decode(const std::vector<std::uint8_t>& buf, const QuantizationSet& q,
                     Index rows, Index cols) {
  const int bits = q.bits_per_entry();
  if (buf.size() < kWireHeaderBytes + encoded_payload_bytes(rows * cols, q))
    throw std::runtime_error("decode: buffer too short");
  std::uint32_t hdr_rows = 0, hdr_cols = 0;
  std::uint16_t hdr_m = 0;
  std::memcpy(&hdr_rows, buf.data() + 2, 4);
  std::memcpy(&hdr_cols, buf.data() + 6, 4);
  std::memcpy(&hdr_m, buf.data() + 10, 2);
  if (hdr_rows != static_cast<std::uint32_t>(rows) ||
      hdr_cols != static_cast<std::uint32_t>(cols) ||
      hdr_m != q.levels.size())
    throw std::runtime_error("decode: header does not match expected shape");

  Matrix out(rows, cols);
  double* dst = out.data();
  const std::uint8_t* payload = buf.data() + kWireHeaderBytes;
  std::size_t bitpos = 0;
  for (Index i = 0; i < out.size(); ++i) {
    Index idx = 0;
    for (int b = 0; b < bits; ++b, ++bitpos)
      if (payload[bitpos >> 3] >> (bitpos & 7) & 1) idx |= Index{1} << b;
    if (idx >= static_cast<Index>(q.levels.size()))
      throw std::runtime_error("decode: index out of range");
    dst[i] = q.levels[idx];
  }
  return out;
}

}  // namespace pdadmm
