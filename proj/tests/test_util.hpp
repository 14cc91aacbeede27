#pragma once

#include <cmath>
#include <cstdint>

#include "infdit/common.hpp"
#include "infdit/tensor.hpp"

namespace testutil {

template <typename S>
infdit::Tensor<S> random_tensor(std::vector<std::int64_t> shape, std::uint64_t seed,
                                double scale = 1.0) {
  infdit::Tensor<S> t(std::move(shape));
  infdit::Rng rng(seed);
  for (std::int64_t i = 0; i < t.numel(); ++i)
    t[i] = static_cast<S>(rng.normal(0.0, scale));
  return t;
}

template <typename S>
double max_abs_diff(const infdit::Tensor<S>& a, const infdit::Tensor<S>& b) {
  if (!a.same_shape(b)) return std::numeric_limits<double>::infinity();
  double m = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  return m;
}

inline double rel_err(double got, double want) {
  const double denom = std::max({std::abs(got), std::abs(want), 1e-12});
  return std::abs(got - want) / denom;
}

// Elementwise relative error with an absolute floor, for gradient checks.
template <typename S>
double max_rel_err(const infdit::Tensor<S>& a, const infdit::Tensor<S>& b,
                   double floor = 1e-8) {
  if (!a.same_shape(b)) return std::numeric_limits<double>::infinity();
  double m = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i) {
    const double x = static_cast<double>(a[i]);
    const double y = static_cast<double>(b[i]);
    const double denom = std::max({std::abs(x), std::abs(y), floor});
    m = std::max(m, std::abs(x - y) / denom);
  }
  return m;
}

}  // namespace testutil
