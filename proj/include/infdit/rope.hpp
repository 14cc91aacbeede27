#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "infdit/tensor.hpp"

namespace infdit {

// 2D rotary tables: per-head channels are split in half, the first half
// rotated by x-position angles and the second by y. Within each half,
// pair k couples channels (k, k + head_dim/4) at frequency
// base^(-2k / (head_dim/2)).
template <typename S>
struct RopeTable {
  std::int64_t max_positions = 0;
  std::int64_t head_dim = 0;
  std::int64_t pairs_per_axis = 0;  // head_dim / 4
  double base = 10000.0;
  std::int64_t start_x = 0;  // patch-grid offset of the image origin
  std::int64_t start_y = 0;
  std::vector<S> cos_tab;  // [max_positions, pairs_per_axis]
  std::vector<S> sin_tab;

  static RopeTable create(std::int64_t max_positions, std::int64_t head_dim,
                          double base = 10000.0) {
    if (head_dim % 4 != 0)
      throw std::invalid_argument("rope: head_dim must be divisible by 4");
    if (max_positions < 1) throw std::invalid_argument("rope: max_positions must be >= 1");
    RopeTable t;
    t.max_positions = max_positions;
    t.head_dim = head_dim;
    t.pairs_per_axis = head_dim / 4;
    t.base = base;
    const std::int64_t half = head_dim / 2;  // channels per axis
    t.cos_tab.resize(static_cast<std::size_t>(max_positions * t.pairs_per_axis));
    t.sin_tab.resize(t.cos_tab.size());
    for (std::int64_t pos = 0; pos < max_positions; ++pos)
      for (std::int64_t k = 0; k < t.pairs_per_axis; ++k) {
        const double freq = std::pow(base, -2.0 * static_cast<double>(k) /
                                               static_cast<double>(half));
        const double angle = static_cast<double>(pos) * freq;
        t.cos_tab[static_cast<std::size_t>(pos * t.pairs_per_axis + k)] =
            static_cast<S>(std::cos(angle));
        t.sin_tab[static_cast<std::size_t>(pos * t.pairs_per_axis + k)] =
            static_cast<S>(std::sin(angle));
      }
    return t;
  }

  void check(std::int64_t pos) const {
    if (pos < 0 || pos >= max_positions)
      throw std::out_of_range("rope: position outside table range");
  }

  // Rotates one head vector in place. dir=-1 applies the inverse rotation
  // (the backward pass, since rotations are orthogonal).
  void rotate_head(S* vec, std::int64_t x, std::int64_t y, int dir = 1) const {
    check(x);
    check(y);
    const std::int64_t half = head_dim / 2;
    const S* cx = cos_tab.data() + x * pairs_per_axis;
    const S* sx = sin_tab.data() + x * pairs_per_axis;
    const S* cy = cos_tab.data() + y * pairs_per_axis;
    const S* sy = sin_tab.data() + y * pairs_per_axis;
    for (std::int64_t k = 0; k < pairs_per_axis; ++k) {
      const S s = dir >= 0 ? sx[k] : -sx[k];
      const S u = vec[k];
      const S v = vec[k + pairs_per_axis];
      vec[k] = u * cx[k] - v * s;
      vec[k + pairs_per_axis] = u * s + v * cx[k];
    }
    for (std::int64_t k = 0; k < pairs_per_axis; ++k) {
      const S s = dir >= 0 ? sy[k] : -sy[k];
      const S u = vec[half + k];
      const S v = vec[half + k + pairs_per_axis];
      vec[half + k] = u * cy[k] - v * s;
      vec[half + k + pairs_per_axis] = u * s + v * cy[k];
    }
  }
};

// tokens [T, heads*head_dim]; positions [T] pairs of absolute patch
// coordinates. Rotates every head of every token.
template <typename S>
Tensor<S> apply_rope_2d(const Tensor<S>& tokens,
                        const std::vector<std::pair<std::int64_t, std::int64_t>>& positions,
                        const RopeTable<S>& table, int dir = 1) {
  if (tokens.rank() != 2) throw std::invalid_argument("rope: expected [tokens, channels]");
  const std::int64_t t_count = tokens.shape[0];
  const std::int64_t width = tokens.shape[1];
  if (width % table.head_dim != 0)
    throw std::invalid_argument("rope: channel count not a multiple of head_dim");
  if (static_cast<std::int64_t>(positions.size()) != t_count)
    throw std::invalid_argument("rope: positions/token count mismatch");
  const std::int64_t heads = width / table.head_dim;
  Tensor<S> out = tokens;
  for (std::int64_t t = 0; t < t_count; ++t)
    for (std::int64_t h = 0; h < heads; ++h)
      table.rotate_head(out.data.data() + t * width + h * table.head_dim, positions[t].first,
                        positions[t].second, dir);
  return out;
}

}  // namespace infdit
