#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <vector>

#include "infdit/common.hpp"
#include "infdit/tensor.hpp"

namespace infdit {

enum class SamplerKind { kEuler, kHeun };

struct EDMConfig {
  double sigma_data = 0.5;
  double p_mean = -1.0;  // mean of ln(sigma) during training
  double p_std = 1.4;    // std of ln(sigma) during training
  double sigma_min = 0.002;
  double sigma_max = 80.0;
  double rho = 7.0;
  std::int64_t steps = 20;
  SamplerKind sampler = SamplerKind::kHeun;
  bool lr_noise_init = true;  // draw x_T around the upsampled LR image

  void validate() const {
    if (!(sigma_min < sigma_max)) throw std::invalid_argument("edm: sigma_min must be < sigma_max");
    if (steps < 1) throw std::invalid_argument("edm: steps must be >= 1");
    if (p_std <= 0) throw std::invalid_argument("edm: p_std must be > 0");
  }
};

// EDM preconditioning.
inline double c_skip(double sigma, double sigma_data) {
  return sigma_data * sigma_data / (sigma * sigma + sigma_data * sigma_data);
}
inline double c_out(double sigma, double sigma_data) {
  return sigma * sigma_data / std::sqrt(sigma * sigma + sigma_data * sigma_data);
}
inline double c_in(double sigma, double sigma_data) {
  return 1.0 / std::sqrt(sigma * sigma + sigma_data * sigma_data);
}
inline double c_noise(double sigma) { return std::log(sigma) / 4.0; }

// Loss weight; lambda(sigma) * c_out(sigma)^2 == 1 identically.
inline double edm_loss_weight(double sigma, double sigma_data) {
  const double so = sigma * sigma_data;
  return (sigma * sigma + sigma_data * sigma_data) / (so * so);
}

// sigma = exp(z), z ~ Normal(p_mean, p_std^2).
inline double sample_train_sigma(Rng& rng, const EDMConfig& cfg) {
  return std::exp(rng.normal(cfg.p_mean, cfg.p_std));
}

// rho-spaced decreasing schedule [sigma_max ... sigma_min, 0].
inline std::vector<double> sigma_schedule(const EDMConfig& cfg) {
  cfg.validate();
  if (cfg.steps == 1) return {cfg.sigma_max, 0.0};
  std::vector<double> out(static_cast<std::size_t>(cfg.steps) + 1);
  const double inv_rho = 1.0 / cfg.rho;
  const double hi = std::pow(cfg.sigma_max, inv_rho);
  const double lo = std::pow(cfg.sigma_min, inv_rho);
  for (std::int64_t i = 0; i < cfg.steps; ++i) {
    const double f = static_cast<double>(i) / static_cast<double>(cfg.steps - 1);
    out[static_cast<std::size_t>(i)] = std::pow(hi + f * (lo - hi), cfg.rho);
  }
  out[0] = cfg.sigma_max;  // endpoints exact, not through the pow round-trip
  out[static_cast<std::size_t>(cfg.steps - 1)] = cfg.sigma_min;
  out[static_cast<std::size_t>(cfg.steps)] = 0.0;
  return out;
}

// A denoiser evaluation: x, sigma -> x0 estimate (preconditioning folded
// in by the caller).
template <typename S>
using DenoiseFn = std::function<Tensor<S>(const Tensor<S>&, double)>;

// One deterministic step from sigma_i down to sigma_next. Heun adds the
// second-order correction unless the step lands on sigma = 0.
template <typename S>
Tensor<S> sampler_step(const Tensor<S>& x, double sigma, double sigma_next,
                       const DenoiseFn<S>& denoise, SamplerKind kind) {
  if (!(sigma > sigma_next) || sigma_next < 0.0)
    throw std::invalid_argument("sampler: need sigma > sigma_next >= 0");
  Tensor<S> x0 = denoise(x, sigma);
  const double dt = sigma_next - sigma;
  Tensor<S> x_next(x.shape);
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    const double d = (static_cast<double>(x[i]) - static_cast<double>(x0[i])) / sigma;
    x_next[i] = static_cast<S>(static_cast<double>(x[i]) + dt * d);
  }
  if (kind == SamplerKind::kHeun && sigma_next > 0.0) {
    Tensor<S> x0b = denoise(x_next, sigma_next);
    for (std::int64_t i = 0; i < x.numel(); ++i) {
      const double d1 = (static_cast<double>(x[i]) - static_cast<double>(x0[i])) / sigma;
      const double d2 =
          (static_cast<double>(x_next[i]) - static_cast<double>(x0b[i])) / sigma_next;
      x_next[i] = static_cast<S>(static_cast<double>(x[i]) + dt * 0.5 * (d1 + d2));
    }
  }
  return x_next;
}

// Runs the full schedule down to sigma = 0.
template <typename S>
Tensor<S> sample_loop(Tensor<S> x, const std::vector<double>& schedule,
                      const DenoiseFn<S>& denoise, SamplerKind kind) {
  for (std::size_t i = 0; i + 1 < schedule.size(); ++i)
    x = sampler_step(x, schedule[i], schedule[i + 1], denoise, kind);
  return x;
}

// Initial state x_T ~ N(lr_up, sigma_max^2 I); the LR mean keeps colors
// anchored. plain=true falls back to N(0, sigma_max^2 I).
template <typename S>
Tensor<S> init_noise_from_lr(const Tensor<S>& lr_up, double sigma_max, Rng& rng,
                             bool plain = false) {
  Tensor<S> x(lr_up.shape);
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    const double mean = plain ? 0.0 : static_cast<double>(lr_up[i]);
    x[i] = static_cast<S>(mean + sigma_max * rng.normal());
  }
  return x;
}

// EDM denoising loss pieces for one training sample; the caller runs the
// raw network F on x_in and feeds it back.
template <typename S>
struct EdmSample {
  double sigma = 1.0;
  Tensor<S> x_noisy;  // x0 + sigma * eps
  Tensor<S> x_in;     // c_in * x_noisy
};

template <typename S>
EdmSample<S> make_edm_sample(const Tensor<S>& x0, const EDMConfig& cfg, Rng& rng) {
  EdmSample<S> s;
  s.sigma = sample_train_sigma(rng, cfg);
  s.x_noisy = Tensor<S>(x0.shape);
  for (std::int64_t i = 0; i < x0.numel(); ++i)
    s.x_noisy[i] = static_cast<S>(static_cast<double>(x0[i]) + s.sigma * rng.normal());
  const double ci = c_in(s.sigma, cfg.sigma_data);
  s.x_in = Tensor<S>(x0.shape);
  for (std::int64_t i = 0; i < x0.numel(); ++i)
    s.x_in[i] = static_cast<S>(ci * static_cast<double>(s.x_noisy[i]));
  return s;
}

// denoised = c_skip * x_noisy + c_out * raw.
template <typename S>
Tensor<S> denoise_from_raw(const Tensor<S>& x_noisy, const Tensor<S>& raw, double sigma,
                           const EDMConfig& cfg) {
  if (sigma <= 0.0) throw std::invalid_argument("denoiser: sigma must be > 0");
  const double cs = c_skip(sigma, cfg.sigma_data);
  const double co = c_out(sigma, cfg.sigma_data);
  Tensor<S> out(x_noisy.shape);
  for (std::int64_t i = 0; i < out.numel(); ++i)
    out[i] = static_cast<S>(cs * static_cast<double>(x_noisy[i]) +
                            co * static_cast<double>(raw[i]));
  return out;
}

// loss = lambda(sigma) * mean((denoised - x0)^2); also emits the gradient
// of the loss w.r.t. the raw network output when requested.
template <typename S>
double edm_loss_from_raw(const Tensor<S>& x0, const EdmSample<S>& s, const Tensor<S>& raw,
                         const EDMConfig& cfg, Tensor<S>* d_raw = nullptr) {
  const double lambda = edm_loss_weight(s.sigma, cfg.sigma_data);
  const double co = c_out(s.sigma, cfg.sigma_data);
  Tensor<S> denoised = denoise_from_raw(s.x_noisy, raw, s.sigma, cfg);
  const double n = static_cast<double>(x0.numel());
  double loss = 0;
  if (d_raw) *d_raw = Tensor<S>(x0.shape);
  for (std::int64_t i = 0; i < x0.numel(); ++i) {
    const double r = static_cast<double>(denoised[i]) - static_cast<double>(x0[i]);
    loss += r * r;
    if (d_raw) (*d_raw)[i] = static_cast<S>(lambda * 2.0 / n * r * co);
  }
  return lambda * loss / n;
}

}  // namespace infdit
