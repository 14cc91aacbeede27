#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "infdit/common.hpp"

namespace infdit {

// Dense row-major tensor. Scalar is float or double; the 64-bit
// instantiation exists for oracle-grade comparisons.
template <typename S>
struct Tensor {
  std::vector<std::int64_t> shape;
  std::vector<S> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::int64_t> s) : shape(std::move(s)) {
    data.assign(static_cast<std::size_t>(numel_of(shape)), S(0));
  }
  Tensor(std::vector<std::int64_t> s, std::vector<S> d)
      : shape(std::move(s)), data(std::move(d)) {
    if (numel_of(shape) != static_cast<std::int64_t>(data.size()))
      throw std::invalid_argument("tensor: shape/data size mismatch");
  }

  static std::int64_t numel_of(const std::vector<std::int64_t>& s) {
    std::int64_t n = 1;
    for (auto e : s) {
      if (e < 0) throw std::invalid_argument("tensor: negative extent");
      n *= e;
    }
    return n;
  }

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
  std::int64_t dim(int i) const { return shape.at(static_cast<std::size_t>(i)); }
  int rank() const { return static_cast<int>(shape.size()); }

  // Extent of the last axis; 1 for rank-0.
  std::int64_t last_dim() const { return shape.empty() ? 1 : shape.back(); }
  std::int64_t rows() const { return last_dim() == 0 ? 0 : numel() / last_dim(); }

  S& operator[](std::int64_t i) { return data[static_cast<std::size_t>(i)]; }
  const S& operator[](std::int64_t i) const { return data[static_cast<std::size_t>(i)]; }

  S& at2(std::int64_t i, std::int64_t j) { return data[static_cast<std::size_t>(i * shape[1] + j)]; }
  const S& at2(std::int64_t i, std::int64_t j) const {
    return data[static_cast<std::size_t>(i * shape[1] + j)];
  }

  Tensor reshaped(std::vector<std::int64_t> s) const {
    if (numel_of(s) != numel()) throw std::invalid_argument("reshape: element count mismatch");
    return Tensor(std::move(s), data);
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  std::string shape_str() const {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << "]";
    return os.str();
  }
};

template <typename S>
struct LinearParams {
  Tensor<S> weight;  // [d_in, d_out]
  Tensor<S> bias;    // [d_out]

  LinearParams() = default;
  LinearParams(std::int64_t d_in, std::int64_t d_out)
      : weight({d_in, d_out}), bias({d_out}) {}

  std::int64_t d_in() const { return weight.dim(0); }
  std::int64_t d_out() const { return weight.dim(1); }
};

template <typename S>
struct LayerNormParams {
  Tensor<S> gain;   // [d]
  Tensor<S> shift;  // [d]
  double epsilon = 1e-6;

  LayerNormParams() = default;
  explicit LayerNormParams(std::int64_t d, double eps = 1e-6)
      : gain({d}), shift({d}), epsilon(eps) {
    if (eps <= 0) throw std::invalid_argument("layernorm: epsilon must be > 0");
    std::fill(gain.data.begin(), gain.data.end(), S(1));
  }
};

template <typename S>
bool all_finite(const Tensor<S>& t) {
  for (S v : t.data)
    if (!std::isfinite(static_cast<double>(v))) return false;
  return true;
}

template <typename S>
void ensure_finite(const Tensor<S>& t, const char* what) {
  if (!all_finite(t)) throw std::runtime_error(std::string("non-finite values in ") + what);
}

// c[i,j] = sum_k a[i,k] * b[k,j], plain row-major. Rows are independent,
// so the row-parallel split is bitwise deterministic.
template <typename S>
void matmul_2d_into(const S* a, const S* b, S* c, std::int64_t m, std::int64_t k,
                    std::int64_t n) {
  auto rows = [&](std::int64_t lo, std::int64_t hi) {
    for (std::int64_t i = lo; i < hi; ++i) {
      S* ci = c + i * n;
      std::fill(ci, ci + n, S(0));
      const S* ai = a + i * k;
      for (std::int64_t kk = 0; kk < k; ++kk) {
        const S aik = ai[kk];
        const S* bk = b + kk * n;
        for (std::int64_t j = 0; j < n; ++j) ci[j] += aik * bk[j];
      }
    }
  };
  // thread spawn only pays off on big products
  if (m * k * n < (1 << 22)) {
    rows(0, m);
  } else {
    parallel_for(0, m, rows, std::max<std::int64_t>(16, m / (4 * detail::thread_count())));
  }
}

// Matrix product, batched over leading dimensions. A rank-2 rhs is
// broadcast across the batch (the linear-layer case).
template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rank() < 2 || b.rank() < 2) throw std::invalid_argument("matmul: rank must be >= 2");
  const std::int64_t m = a.shape[a.rank() - 2];
  const std::int64_t k = a.shape[a.rank() - 1];
  const std::int64_t kb = b.shape[b.rank() - 2];
  const std::int64_t n = b.shape[b.rank() - 1];
  if (k != kb)
    throw std::invalid_argument("matmul: inner dimensions disagree, " + a.shape_str() + " x " +
                                b.shape_str());

  std::vector<std::int64_t> out_shape(a.shape.begin(), a.shape.end() - 1);
  out_shape.push_back(n);
  std::int64_t batch = 1;
  for (int i = 0; i + 2 < a.rank(); ++i) batch *= a.shape[i];

  bool broadcast_b = (b.rank() == 2);
  if (!broadcast_b) {
    if (b.rank() != a.rank()) throw std::invalid_argument("matmul: batch rank mismatch");
    for (int i = 0; i + 2 < a.rank(); ++i)
      if (a.shape[i] != b.shape[i]) throw std::invalid_argument("matmul: batch dims disagree");
  }

  Tensor<S> out(out_shape);
  for (std::int64_t bi = 0; bi < batch; ++bi) {
    const S* ap = a.data.data() + bi * m * k;
    const S* bp = b.data.data() + (broadcast_b ? 0 : bi * k * n);
    matmul_2d_into(ap, bp, out.data.data() + bi * m * n, m, k, n);
  }
  return out;
}

template <typename S>
Tensor<S> transpose_2d(const Tensor<S>& a) {
  if (a.rank() != 2) throw std::invalid_argument("transpose_2d: rank must be 2");
  Tensor<S> out({a.shape[1], a.shape[0]});
  for (std::int64_t i = 0; i < a.shape[0]; ++i)
    for (std::int64_t j = 0; j < a.shape[1]; ++j) out.at2(j, i) = a.at2(i, j);
  return out;
}

// Row-wise softmax over the last axis, max-subtracted.
template <typename S>
Tensor<S> softmax_rows(const Tensor<S>& x) {
  const std::int64_t d = x.last_dim();
  if (d < 1) throw std::invalid_argument("softmax_rows: empty last dimension");
  Tensor<S> out(x.shape);
  const std::int64_t rows = x.rows();
  for (std::int64_t r = 0; r < rows; ++r) {
    const S* xr = x.data.data() + r * d;
    S* yr = out.data.data() + r * d;
    S mx = xr[0];
    for (std::int64_t j = 1; j < d; ++j) mx = std::max(mx, xr[j]);
    S sum = S(0);
    for (std::int64_t j = 0; j < d; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      sum += yr[j];
    }
    const S inv = S(1) / sum;
    for (std::int64_t j = 0; j < d; ++j) yr[j] *= inv;
  }
  return out;
}

// Normalizes each last-axis vector to zero mean / unit variance, then
// applies gain and shift.
template <typename S>
Tensor<S> layernorm(const Tensor<S>& x, const LayerNormParams<S>& p) {
  const std::int64_t d = x.last_dim();
  if (d == 0) throw std::invalid_argument("layernorm: empty last dimension");
  if (p.gain.numel() != d || p.shift.numel() != d)
    throw std::invalid_argument("layernorm: parameter dimension mismatch");
  Tensor<S> out(x.shape);
  const std::int64_t rows = x.rows();
  for (std::int64_t r = 0; r < rows; ++r) {
    const S* xr = x.data.data() + r * d;
    S* yr = out.data.data() + r * d;
    S mean = S(0);
    for (std::int64_t j = 0; j < d; ++j) mean += xr[j];
    mean /= S(d);
    S var = S(0);
    for (std::int64_t j = 0; j < d; ++j) {
      const S c = xr[j] - mean;
      var += c * c;
    }
    var /= S(d);
    const S inv = S(1) / std::sqrt(var + S(p.epsilon));
    for (std::int64_t j = 0; j < d; ++j)
      yr[j] = (xr[j] - mean) * inv * p.gain[j] + p.shift[j];
  }
  return out;
}

// tanh-approximation GELU; full and streamed paths must share this one
// definition.
template <typename S>
S gelu_scalar(S x) {
  const S c = S(0.7978845608028654);  // sqrt(2/pi)
  const S inner = c * (x + S(0.044715) * x * x * x);
  return S(0.5) * x * (S(1) + std::tanh(inner));
}

template <typename S>
S gelu_grad_scalar(S x) {
  const S c = S(0.7978845608028654);
  const S x3 = x * x * x;
  const S inner = c * (x + S(0.044715) * x3);
  const S t = std::tanh(inner);
  const S dinner = c * (S(1) + S(0.134145) * x * x);
  return S(0.5) * (S(1) + t) + S(0.5) * x * (S(1) - t * t) * dinner;
}

template <typename S>
Tensor<S> gelu(const Tensor<S>& x) {
  Tensor<S> out(x.shape);
  for (std::int64_t i = 0; i < x.numel(); ++i) out[i] = gelu_scalar(x[i]);
  return out;
}

template <typename S>
S silu_scalar(S x) {
  return x / (S(1) + std::exp(-x));
}

template <typename S>
S silu_grad_scalar(S x) {
  const S s = S(1) / (S(1) + std::exp(-x));
  return s + x * s * (S(1) - s);
}

template <typename S>
Tensor<S> silu(const Tensor<S>& x) {
  Tensor<S> out(x.shape);
  for (std::int64_t i = 0; i < x.numel(); ++i) out[i] = silu_scalar(x[i]);
  return out;
}

// x [..., d_in] -> [..., d_out]
template <typename S>
Tensor<S> linear(const Tensor<S>& x, const LinearParams<S>& p) {
  if (x.last_dim() != p.d_in())
    throw std::invalid_argument("linear: input dimension mismatch");
  Tensor<S> out = matmul(x.reshaped({x.rows(), x.last_dim()}), p.weight);
  const std::int64_t n = p.d_out();
  for (std::int64_t r = 0; r < out.rows(); ++r) {
    S* yr = out.data.data() + r * n;
    for (std::int64_t j = 0; j < n; ++j) yr[j] += p.bias[j];
  }
  std::vector<std::int64_t> s(x.shape.begin(), x.shape.end() - 1);
  s.push_back(n);
  return out.reshaped(std::move(s));
}

enum class InitScheme { kScaledNormal, kZeros };

// Deterministic init: scaled normal with std 1/sqrt(d_in), where d_in is
// the second-to-last extent (vector shapes use their length).
template <typename S>
Tensor<S> seeded_init(std::vector<std::int64_t> shape, std::uint64_t seed,
                      InitScheme scheme = InitScheme::kScaledNormal) {
  Tensor<S> t(std::move(shape));
  if (scheme == InitScheme::kZeros) return t;
  const std::int64_t d_in = t.rank() >= 2 ? t.shape[t.rank() - 2]
                                          : std::max<std::int64_t>(t.numel(), 1);
  const double std_dev = 1.0 / std::sqrt(static_cast<double>(d_in));
  Rng rng(seed);
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<S>(rng.normal(0.0, std_dev));
  return t;
}

// Central-difference gradient of a scalar-valued function, one element at
// a time. Test oracle for every hand-written backward pass.
template <typename S>
Tensor<S> finite_diff_grad(const std::function<double(const Tensor<S>&)>& f, const Tensor<S>& x,
                           double h) {
  Tensor<S> g(x.shape);
  Tensor<S> probe = x;
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    const S orig = probe[i];
    probe[i] = orig + static_cast<S>(h);
    const double fp = f(probe);
    probe[i] = orig - static_cast<S>(h);
    const double fm = f(probe);
    probe[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw std::runtime_error("finite_diff_grad: non-finite function value");
    g[i] = static_cast<S>((fp - fm) / (2.0 * h));
  }
  return g;
}

}  // namespace infdit
