#pragma once

#include <cmath>
#include <cstdint>

#include "infdit/image.hpp"

namespace infdit {

// Seeded procedural textures: band-limited plaids, rotated stripes,
// ripples and smooth random fields. Frequencies sit mostly below the
// 4x-downsample Nyquist so the structure is recoverable from the LR
// image, which is what an upsampler has to learn.
inline Image synth_texture(std::int64_t size, std::uint64_t seed) {
  Rng rng(seed);
  const int family = static_cast<int>(rng.below(4));

  // random palette endpoints kept off the clip boundaries
  float lo[3], hi[3];
  for (int c = 0; c < 3; ++c) {
    lo[c] = static_cast<float>(rng.uniform(0.05, 0.45));
    hi[c] = static_cast<float>(rng.uniform(0.55, 0.95));
  }

  const double tau = 6.283185307179586477;
  Image img(size, size);
  auto paint = [&](std::int64_t y, std::int64_t x, double v01) {
    for (int c = 0; c < 3; ++c)
      img.at(y, x, c) = lo[c] + (hi[c] - lo[c]) * static_cast<float>(v01);
  };

  switch (family) {
    case 0: {  // plaid: separable sines along x and y
      const double fx = rng.uniform(0.02, 0.11) * tau;
      const double fy = rng.uniform(0.02, 0.11) * tau;
      const double px = rng.uniform(0, tau), py = rng.uniform(0, tau);
      for (std::int64_t y = 0; y < size; ++y)
        for (std::int64_t x = 0; x < size; ++x) {
          const double v = 0.5 + 0.25 * std::sin(fx * x + px) + 0.25 * std::sin(fy * y + py);
          paint(y, x, v);
        }
      break;
    }
    case 1: {  // rotated stripes with soft edges
      const double theta = rng.uniform(0, tau);
      const double f = rng.uniform(0.03, 0.12) * tau;
      const double ph = rng.uniform(0, tau);
      const double sharp = rng.uniform(1.0, 3.0);
      const double cx = std::cos(theta), sy = std::sin(theta);
      for (std::int64_t y = 0; y < size; ++y)
        for (std::int64_t x = 0; x < size; ++x) {
          const double s = std::sin(f * (x * cx + y * sy) + ph);
          paint(y, x, 0.5 + 0.5 * std::tanh(sharp * s));
        }
      break;
    }
    case 2: {  // radial ripples
      const double cxp = rng.uniform(0, static_cast<double>(size));
      const double cyp = rng.uniform(0, static_cast<double>(size));
      const double f = rng.uniform(0.03, 0.10) * tau;
      const double ph = rng.uniform(0, tau);
      for (std::int64_t y = 0; y < size; ++y)
        for (std::int64_t x = 0; x < size; ++x) {
          const double r = std::hypot(x - cxp, y - cyp);
          paint(y, x, 0.5 + 0.5 * std::sin(f * r + ph));
        }
      break;
    }
    default: {  // smooth random field: a handful of random plane waves
      const int waves = 6;
      double fx[waves], fy[waves], ph[waves], amp[waves];
      double norm = 0;
      for (int k = 0; k < waves; ++k) {
        const double f = rng.uniform(0.015, 0.09) * tau;
        const double theta = rng.uniform(0, tau);
        fx[k] = f * std::cos(theta);
        fy[k] = f * std::sin(theta);
        ph[k] = rng.uniform(0, tau);
        amp[k] = rng.uniform(0.3, 1.0);
        norm += amp[k];
      }
      for (std::int64_t y = 0; y < size; ++y)
        for (std::int64_t x = 0; x < size; ++x) {
          double v = 0;
          for (int k = 0; k < waves; ++k) v += amp[k] * std::sin(fx[k] * x + fy[k] * y + ph[k]);
          paint(y, x, 0.5 + 0.5 * v / norm);
        }
      break;
    }
  }
  return img;
}

}  // namespace infdit
