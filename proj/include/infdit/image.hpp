#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "infdit/common.hpp"
#include "infdit/image_io.hpp"

namespace infdit {

// RGB raster in [0,1], row-major HWC. The pixel-space currency of the
// whole pipeline; model-range conversion happens at the model boundary.
struct Image {
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::vector<float> data;  // height*width*3

  Image() = default;
  Image(std::int64_t h, std::int64_t w) : height(h), width(w) {
    if (h < 1 || w < 1) throw std::invalid_argument("image: dims must be >= 1");
    data.assign(static_cast<std::size_t>(h * w * 3), 0.0f);
  }

  float& at(std::int64_t y, std::int64_t x, int c) {
    return data[static_cast<std::size_t>((y * width + x) * 3 + c)];
  }
  float at(std::int64_t y, std::int64_t x, int c) const {
    return data[static_cast<std::size_t>((y * width + x) * 3 + c)];
  }

  std::int64_t pixels() const { return height * width; }
};

inline std::uint8_t quantize_u8(float v) {
  const long q = std::lround(static_cast<double>(v) * 255.0);
  return static_cast<std::uint8_t>(std::clamp(q, 0L, 255L));
}

inline RasterU8 to_raster(const Image& img) {
  RasterU8 r;
  r.height = img.height;
  r.width = img.width;
  r.rgb.resize(img.data.size());
  for (std::size_t i = 0; i < img.data.size(); ++i) r.rgb[i] = quantize_u8(img.data[i]);
  return r;
}

inline Image from_raster(const RasterU8& r) {
  Image img(r.height, r.width);
  for (std::size_t i = 0; i < r.rgb.size(); ++i) img.data[i] = static_cast<float>(r.rgb[i]) / 255.0f;
  return img;
}

inline bool has_suffix(const std::string& s, const std::string& suffix) {
  if (s.size() < suffix.size()) return false;
  std::string tail = s.substr(s.size() - suffix.size());
  std::transform(tail.begin(), tail.end(), tail.begin(), ::tolower);
  return tail == suffix;
}

// Sniffs PNG vs PPM from the file contents.
inline Image load_image(const std::string& path) {
  const auto bytes = read_file_bytes(path);
  if (bytes.size() >= 8 && std::memcmp(bytes.data(), pngio::kSignature, 8) == 0)
    return from_raster(pngio::decode_rgb8(bytes));
  if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '6')
    return from_raster(ppmio::decode_p6(bytes));
  throw std::runtime_error("unsupported image format: " + path);
}

inline void save_image(const Image& img, const std::string& path) {
  const RasterU8 r = to_raster(img);
  if (has_suffix(path, ".png"))
    write_file_bytes(path, pngio::encode_rgb8(r));
  else if (has_suffix(path, ".ppm"))
    write_file_bytes(path, ppmio::encode_p6(r));
  else
    throw std::runtime_error("unsupported output extension (use .png or .ppm): " + path);
}

enum class ResizeKernel { kBicubic, kBilinear, kArea };

namespace detail {

// Catmull-Rom weight (a = -0.5).
inline double cubic_weight(double t) {
  t = std::abs(t);
  if (t <= 1.0) return 1.5 * t * t * t - 2.5 * t * t + 1.0;
  if (t < 2.0) return -0.5 * t * t * t + 2.5 * t * t - 4.0 * t + 2.0;
  return 0.0;
}

struct ResampleTap {
  std::int64_t first;            // clamped source index of tap 0
  std::array<double, 4> weight;  // normalized; bilinear uses the first two
  int taps;
};

inline std::vector<ResampleTap> make_taps(std::int64_t src, std::int64_t dst,
                                          ResizeKernel kernel) {
  std::vector<ResampleTap> taps(static_cast<std::size_t>(dst));
  const double scale = static_cast<double>(src) / static_cast<double>(dst);
  for (std::int64_t o = 0; o < dst; ++o) {
    const double center = (static_cast<double>(o) + 0.5) * scale - 0.5;
    ResampleTap t{};
    if (kernel == ResizeKernel::kBicubic) {
      const std::int64_t base = static_cast<std::int64_t>(std::floor(center)) - 1;
      double sum = 0.0;
      for (int i = 0; i < 4; ++i) {
        t.weight[i] = cubic_weight(center - static_cast<double>(base + i));
        sum += t.weight[i];
      }
      for (int i = 0; i < 4; ++i) t.weight[i] /= sum;
      t.first = base;
      t.taps = 4;
    } else {  // bilinear
      const std::int64_t base = static_cast<std::int64_t>(std::floor(center));
      const double frac = center - static_cast<double>(base);
      t.weight[0] = 1.0 - frac;
      t.weight[1] = frac;
      t.first = base;
      t.taps = 2;
    }
    taps[static_cast<std::size_t>(o)] = t;
  }
  return taps;
}

inline std::int64_t clampi(std::int64_t v, std::int64_t lo, std::int64_t hi) {
  return std::min(std::max(v, lo), hi);
}

}  // namespace detail

// Separable resampler with edge-clamped taps, output clipped to [0,1].
inline Image resize_kernelled(const Image& img, std::int64_t new_h, std::int64_t new_w,
                              ResizeKernel kernel) {
  if (new_h < 1 || new_w < 1) throw std::invalid_argument("resize: target dims must be >= 1");
  if (kernel == ResizeKernel::kArea)
    throw std::invalid_argument("resize: area kernel only valid for integer downsample");

  const auto xtaps = detail::make_taps(img.width, new_w, kernel);
  const auto ytaps = detail::make_taps(img.height, new_h, kernel);

  // horizontal pass
  std::vector<double> mid(static_cast<std::size_t>(img.height * new_w * 3));
  parallel_for(0, img.height, [&](std::int64_t lo, std::int64_t hi) {
    for (std::int64_t y = lo; y < hi; ++y)
      for (std::int64_t x = 0; x < new_w; ++x) {
        const auto& t = xtaps[static_cast<std::size_t>(x)];
        for (int c = 0; c < 3; ++c) {
          double acc = 0.0;
          for (int i = 0; i < t.taps; ++i) {
            const std::int64_t sx = detail::clampi(t.first + i, 0, img.width - 1);
            acc += t.weight[i] * img.at(y, sx, c);
          }
          mid[static_cast<std::size_t>((y * new_w + x) * 3 + c)] = acc;
        }
      }
  });

  // vertical pass
  Image out(new_h, new_w);
  parallel_for(0, new_h, [&](std::int64_t lo, std::int64_t hi) {
    for (std::int64_t y = lo; y < hi; ++y)
      for (std::int64_t x = 0; x < new_w; ++x) {
        const auto& t = ytaps[static_cast<std::size_t>(y)];
        for (int c = 0; c < 3; ++c) {
          double acc = 0.0;
          for (int i = 0; i < t.taps; ++i) {
            const std::int64_t sy = detail::clampi(t.first + i, 0, img.height - 1);
            acc += t.weight[i] * mid[static_cast<std::size_t>((sy * new_w + x) * 3 + c)];
          }
          out.at(y, x, c) = static_cast<float>(std::clamp(acc, 0.0, 1.0));
        }
      }
  });
  return out;
}

inline Image resize_bicubic(const Image& img, std::int64_t new_h, std::int64_t new_w) {
  return resize_kernelled(img, new_h, new_w, ResizeKernel::kBicubic);
}

// Box mean over factor x factor cells; exact for integer factors.
inline Image downsample_area(const Image& img, std::int64_t factor) {
  if (img.height % factor != 0 || img.width % factor != 0)
    throw std::invalid_argument("area downsample: dims not divisible by factor");
  Image out(img.height / factor, img.width / factor);
  const double inv = 1.0 / static_cast<double>(factor * factor);
  for (std::int64_t y = 0; y < out.height; ++y)
    for (std::int64_t x = 0; x < out.width; ++x)
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (std::int64_t dy = 0; dy < factor; ++dy)
          for (std::int64_t dx = 0; dx < factor; ++dx)
            acc += img.at(y * factor + dy, x * factor + dx, c);
        out.at(y, x, c) = static_cast<float>(std::clamp(acc * inv, 0.0, 1.0));
      }
  return out;
}

inline Image gaussian_blur(const Image& img, double sigma) {
  if (sigma <= 0.0) return img;
  const int radius = std::max<int>(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> w(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    w[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * (i * i) / (sigma * sigma));
    sum += w[static_cast<std::size_t>(i + radius)];
  }
  for (auto& v : w) v /= sum;

  std::vector<double> mid(img.data.size());
  for (std::int64_t y = 0; y < img.height; ++y)
    for (std::int64_t x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i) {
          const std::int64_t sx = detail::clampi(x + i, 0, img.width - 1);
          acc += w[static_cast<std::size_t>(i + radius)] * img.at(y, sx, c);
        }
        mid[static_cast<std::size_t>((y * img.width + x) * 3 + c)] = acc;
      }
  Image out(img.height, img.width);
  for (std::int64_t y = 0; y < img.height; ++y)
    for (std::int64_t x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i) {
          const std::int64_t sy = detail::clampi(y + i, 0, img.height - 1);
          acc += w[static_cast<std::size_t>(i + radius)] *
                 mid[static_cast<std::size_t>((sy * img.width + x) * 3 + c)];
        }
        out.at(y, x, c) = static_cast<float>(std::clamp(acc, 0.0, 1.0));
      }
  return out;
}

// Reduced Real-ESRGAN-style degradation: blur -> resample -> noise.
struct DegradationConfig {
  double blur_sigma_min = 0.2;
  double blur_sigma_max = 2.0;
  std::vector<ResizeKernel> resize_kernels = {ResizeKernel::kBicubic, ResizeKernel::kBilinear,
                                              ResizeKernel::kArea};
  double noise_sigma_min = 0.0;
  double noise_sigma_max = 10.0 / 255.0;
  std::int64_t factor = 4;
  std::uint64_t seed = 0;

  void validate() const {
    if (factor < 1) throw std::invalid_argument("degrade: factor must be >= 1");
    if (blur_sigma_min > blur_sigma_max || noise_sigma_min > noise_sigma_max)
      throw std::invalid_argument("degrade: empty parameter range");
    if (resize_kernels.empty()) throw std::invalid_argument("degrade: no resize kernels");
  }
};

// Seeded pipeline: blur(sigma~U) -> downsample by factor (random kernel)
// -> additive gaussian noise (sigma~U) -> clip. Deterministic per seed.
inline Image degrade(const Image& img, const DegradationConfig& cfg) {
  cfg.validate();
  if (img.height % cfg.factor != 0 || img.width % cfg.factor != 0)
    throw std::invalid_argument("degrade: dims not divisible by factor");

  Rng rng(cfg.seed);
  const double blur_sigma = rng.uniform(cfg.blur_sigma_min, cfg.blur_sigma_max);
  const auto kernel = cfg.resize_kernels[rng.below(cfg.resize_kernels.size())];
  const double noise_sigma = rng.uniform(cfg.noise_sigma_min, cfg.noise_sigma_max);

  Image blurred = gaussian_blur(img, blur_sigma);
  Image low = kernel == ResizeKernel::kArea
                  ? downsample_area(blurred, cfg.factor)
                  : resize_kernelled(blurred, img.height / cfg.factor, img.width / cfg.factor,
                                     kernel);
  if (noise_sigma > 0.0) {
    for (auto& v : low.data)
      v = static_cast<float>(
          std::clamp(static_cast<double>(v) + noise_sigma * rng.normal(), 0.0, 1.0));
  }
  return low;
}

enum class CropMode { kDirectRandomCrop, kResizeThenCrop, kRandomChoice };

struct CropPolicy {
  std::int64_t target = 512;
  CropMode mode = CropMode::kRandomChoice;
};

inline Image crop_window(const Image& img, std::int64_t y0, std::int64_t x0, std::int64_t size) {
  Image out(size, size);
  for (std::int64_t y = 0; y < size; ++y)
    for (std::int64_t x = 0; x < size; ++x)
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = img.at(y0 + y, x0 + x, c);
  return out;
}

// Training crop: either a direct random window, or shorter-side resize to
// target followed by a random window. random_choice picks 50/50 per seed.
inline Image crop_training(const Image& img, const CropPolicy& policy, std::uint64_t seed,
                           CropMode* chosen = nullptr) {
  Rng rng(seed);
  CropMode mode = policy.mode;
  if (mode == CropMode::kRandomChoice)
    mode = rng.uniform() < 0.5 ? CropMode::kDirectRandomCrop : CropMode::kResizeThenCrop;
  if (chosen) *chosen = mode;

  const std::int64_t t = policy.target;
  Image src = img;
  if (mode == CropMode::kResizeThenCrop) {
    std::int64_t nh, nw;
    if (img.height <= img.width) {
      nh = t;
      nw = std::max<std::int64_t>(
          t, std::llround(static_cast<double>(img.width) * t / static_cast<double>(img.height)));
    } else {
      nw = t;
      nh = std::max<std::int64_t>(
          t, std::llround(static_cast<double>(img.height) * t / static_cast<double>(img.width)));
    }
    src = (nh == img.height && nw == img.width) ? img : resize_bicubic(img, nh, nw);
  } else {
    if (img.height < t || img.width < t)
      throw std::invalid_argument("crop: image smaller than target under direct mode");
  }
  const std::int64_t y0 = static_cast<std::int64_t>(rng.below(
      static_cast<std::uint64_t>(src.height - t + 1)));
  const std::int64_t x0 = static_cast<std::int64_t>(rng.below(
      static_cast<std::uint64_t>(src.width - t + 1)));
  return crop_window(src, y0, x0, t);
}

// PSNR over all channels on [0,1] floats; +inf for identical inputs.
inline double psnr(const Image& a, const Image& b) {
  if (a.height != b.height || a.width != b.width)
    throw std::invalid_argument("psnr: dimension mismatch");
  double mse = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = static_cast<double>(a.data[i]) - static_cast<double>(b.data[i]);
    mse += d * d;
  }
  mse /= static_cast<double>(a.data.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

// SSIM with an 11x11 gaussian window (sigma 1.5), K1=0.01, K2=0.03,
// dynamic range 1; windows fully inside the image, averaged over channels.
inline double ssim(const Image& a, const Image& b) {
  if (a.height != b.height || a.width != b.width)
    throw std::invalid_argument("ssim: dimension mismatch");
  constexpr int kWin = 11;
  constexpr int kHalf = kWin / 2;
  if (a.height < kWin || a.width < kWin)
    throw std::invalid_argument("ssim: image smaller than 11x11 window");

  double w[kWin][kWin];
  double wsum = 0.0;
  for (int i = 0; i < kWin; ++i)
    for (int j = 0; j < kWin; ++j) {
      const double dy = i - kHalf, dx = j - kHalf;
      w[i][j] = std::exp(-(dy * dy + dx * dx) / (2.0 * 1.5 * 1.5));
      wsum += w[i][j];
    }
  for (int i = 0; i < kWin; ++i)
    for (int j = 0; j < kWin; ++j) w[i][j] /= wsum;

  const double c1 = 0.01 * 0.01;
  const double c2 = 0.03 * 0.03;
  double total = 0.0;
  std::int64_t count = 0;
  for (int c = 0; c < 3; ++c)
    for (std::int64_t y = kHalf; y < a.height - kHalf; ++y)
      for (std::int64_t x = kHalf; x < a.width - kHalf; ++x) {
        double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
        for (int i = 0; i < kWin; ++i)
          for (int j = 0; j < kWin; ++j) {
            const double pa = a.at(y + i - kHalf, x + j - kHalf, c);
            const double pb = b.at(y + i - kHalf, x + j - kHalf, c);
            mx += w[i][j] * pa;
            my += w[i][j] * pb;
            sxx += w[i][j] * pa * pa;
            syy += w[i][j] * pb * pb;
            sxy += w[i][j] * pa * pb;
          }
        const double vx = sxx - mx * mx;
        const double vy = syy - my * my;
        const double cov = sxy - mx * my;
        total += ((2 * mx * my + c1) * (2 * cov + c2)) /
                 ((mx * mx + my * my + c1) * (vx + vy + c2));
        ++count;
      }
  return total / static_cast<double>(count);
}

}  // namespace infdit
