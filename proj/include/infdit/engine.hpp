#pragma once

#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "infdit/config.hpp"
#include "infdit/diffusion.hpp"
#include "infdit/image.hpp"
#include "infdit/model_forward.hpp"
#include "infdit/semantic.hpp"

namespace infdit {

// ---- pixel <-> model-range conversions ----

template <typename S>
Tensor<S> image_to_model_range(const Image& img) {
  Tensor<S> t({img.height, img.width, 3});
  for (std::size_t i = 0; i < img.data.size(); ++i)
    t[static_cast<std::int64_t>(i)] = static_cast<S>(2.0 * img.data[i] - 1.0);
  return t;
}

template <typename S>
Image model_range_to_image(const Tensor<S>& t) {
  Image img(t.shape[0], t.shape[1]);
  for (std::size_t i = 0; i < img.data.size(); ++i)
    img.data[i] = static_cast<float>(
        std::clamp((static_cast<double>(t[static_cast<std::int64_t>(i)]) + 1.0) / 2.0, 0.0, 1.0));
  return img;
}

// Reflect-pads an image on the bottom/right to the given dims; robust to
// pads larger than the source via mirrored wrapping.
inline Image reflect_pad(const Image& img, std::int64_t new_h, std::int64_t new_w) {
  if (new_h == img.height && new_w == img.width) return img;
  auto mirror = [](std::int64_t i, std::int64_t n) {
    if (n == 1) return std::int64_t{0};
    const std::int64_t period = 2 * (n - 1);
    i %= period;
    if (i < 0) i += period;
    return i < n ? i : period - i;
  };
  Image out(new_h, new_w);
  for (std::int64_t y = 0; y < new_h; ++y)
    for (std::int64_t x = 0; x < new_w; ++x)
      for (int c = 0; c < 3; ++c)
        out.at(y, x, c) = img.at(mirror(y, img.height), mirror(x, img.width), c);
  return out;
}

inline Image crop_top_left(const Image& img, std::int64_t h, std::int64_t w) {
  if (h == img.height && w == img.width) return img;
  Image out(h, w);
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = img.at(y, x, c);
  return out;
}

// ---- memory reporting ----

struct MemoryReport {
  GenerationPlan plan;
  std::int64_t simulated_high_water = 0;  // blocks
  double m1 = 0;  // per-block working bytes
  double m2 = 0;  // per-block cache bytes
  double c_constant = 0;
  double estimate_total = 0;
  std::int64_t measured_cache_bytes = 0;  // filled by instrumented runs
};

inline MemoryReport plan_report(std::int64_t height, std::int64_t width, const ModelConfig& cfg,
                                std::int64_t n, std::int64_t scalar_bytes = 4,
                                std::optional<Trajectory> trajectory = std::nullopt) {
  const BlockGridSpec spec = partition(height, width, cfg.block_size, cfg.patch_size);
  MemoryReport r;
  r.plan = plan_generation(spec.h, spec.w, n, trajectory);
  r.simulated_high_water = simulate_residency(r.plan);
  r.m1 = work_bytes_per_block(cfg, scalar_bytes);
  r.m2 = cache_bytes_per_block(cfg, scalar_bytes);
  // pixel-space state kept across steps: x, lr_up, x0-estimate, the Heun
  // midpoint and the output raster
  r.c_constant = 5.0 * static_cast<double>(height) * static_cast<double>(width) * 3.0 *
                 static_cast<double>(scalar_bytes);
  const std::int64_t w_for_bound =
      r.plan.trajectory == Trajectory::kRowMajor ? spec.w : spec.h;
  r.estimate_total = peak_memory_estimate(n, w_for_bound, r.m1, r.m2, r.c_constant);
  return r;
}

inline std::string memory_report_text(const MemoryReport& r) {
  std::ostringstream os;
  os << plan_to_text(r.plan);
  os << "simulated high-water: " << r.simulated_high_water << " blocks (bound "
     << r.plan.cache_bound() << ")\n";
  os << "M1 (block work) = " << r.m1 << " B, M2 (block cache) = " << r.m2
     << " B, C = " << r.c_constant << " B\n";
  os << "estimate n^2*M1 + (w+n)*M2 + C = " << r.estimate_total << " B\n";
  if (r.measured_cache_bytes > 0)
    os << "measured peak cache = " << r.measured_cache_bytes << " B\n";
  return os.str();
}

// ---- upsampling ----

struct UpsampleReport {
  StreamStats stream;           // maxima over all denoiser evaluations
  std::int64_t cache_bound = 0; // w + n for the executed plan
  std::int64_t padded_h = 0, padded_w = 0;
  double est_cache_bytes = 0;   // (w+n) * M2
};

template <typename S>
struct UpsamplerSession {
  ModelParams<S> params;
  EDMConfig edm;
  RunSettings run;
  SemanticEmbedding embedding;  // final (possibly text-guided) global embedding
};

// Streamed upsampling of one image: bicubic-up LR conditioning, LR-based
// initial noise, per-step streamed sweeps over the plan, un-padding.
template <typename S>
Image upsample(const Image& lr, const UpsamplerSession<S>& sess, UpsampleReport* report = nullptr,
               bool full_forward = false) {
  const ModelConfig& cfg = sess.params.cfg;
  sess.run.validate();
  const std::int64_t target_h = lr.height * sess.run.factor;
  const std::int64_t target_w = lr.width * sess.run.factor;
  const std::int64_t padded_h =
      (target_h + cfg.block_size - 1) / cfg.block_size * cfg.block_size;
  const std::int64_t padded_w =
      (target_w + cfg.block_size - 1) / cfg.block_size * cfg.block_size;

  Image lr_up = resize_bicubic(lr, target_h, target_w);
  lr_up = reflect_pad(lr_up, padded_h, padded_w);
  Tensor<S> lr_up_t = image_to_model_range<S>(lr_up);

  Tensor<S> sem({cfg.semantic_dim});
  if (static_cast<std::int64_t>(sess.embedding.size()) != cfg.semantic_dim)
    throw std::invalid_argument("upsample: embedding dim does not match model semantic_dim");
  for (std::int64_t i = 0; i < cfg.semantic_dim; ++i)
    sem[i] = static_cast<S>(sess.embedding[static_cast<std::size_t>(i)]);

  const BlockGridSpec spec = partition(padded_h, padded_w, cfg.block_size, cfg.patch_size);
  const GenerationPlan plan =
      plan_generation(spec.h, spec.w, sess.run.tiles_n, sess.run.trajectory);
  RopeTable<S> rope = RopeTable<S>::create(
      std::max(spec.h, spec.w) * cfg.patches_per_side() + 1, cfg.head_dim, cfg.rope_base);

  Rng noise_rng = Rng(sess.run.seed).child(1);
  Tensor<S> x = init_noise_from_lr(lr_up_t, sess.edm.sigma_max, noise_rng,
                                   sess.run.plain_noise_init || !sess.edm.lr_noise_init);

  StreamStats agg;
  DenoiseFn<S> denoise = [&](const Tensor<S>& xi, double sigma) {
    const double ci = c_in(sigma, sess.edm.sigma_data);
    Tensor<S> x_in(xi.shape);
    for (std::int64_t i = 0; i < xi.numel(); ++i)
      x_in[i] = static_cast<S>(ci * static_cast<double>(xi[i]));
    ModelInputs<S> in{std::move(x_in), lr_up_t, sigma, sem};
    Tensor<S> raw;
    if (full_forward) {
      raw = model_forward_full(sess.params, rope, in);
    } else {
      StreamStats stats;
      raw = model_forward_streamed(sess.params, rope, in, plan, &stats);
      agg.high_water_blocks = std::max(agg.high_water_blocks, stats.high_water_blocks);
      agg.high_water_bytes = std::max(agg.high_water_bytes, stats.high_water_bytes);
      agg.batches += stats.batches;
    }
    return denoise_from_raw(xi, raw, sigma, sess.edm);
  };

  Tensor<S> x0 = sample_loop(std::move(x), sigma_schedule(sess.edm), denoise, sess.edm.sampler);
  ensure_finite(x0, "upsample output");

  if (report) {
    report->stream = agg;
    report->cache_bound = plan.cache_bound();
    report->padded_h = padded_h;
    report->padded_w = padded_w;
    report->est_cache_bytes = static_cast<double>(plan.cache_bound()) *
                              cache_bytes_per_block(cfg, sizeof(S));
  }
  return crop_top_left(model_range_to_image(x0), target_h, target_w);
}

// Chained upsampling; each round feeds the previous output as the next LR
// input with a seed derived from the master seed.
template <typename S>
Image iterative_upsample(const Image& img, std::int64_t rounds, UpsamplerSession<S> sess,
                         const SemanticEncoder* encoder = nullptr) {
  if (rounds < 1) throw std::invalid_argument("iterate: rounds must be >= 1");
  const std::uint64_t master = sess.run.seed;
  Image cur = img;
  for (std::int64_t r = 0; r < rounds; ++r) {
    sess.run.seed = Rng(master).child(static_cast<std::uint64_t>(r) + 100).seed();
    if (encoder) sess.embedding = encoder->encode_image(cur);
    cur = upsample(cur, sess);
  }
  return cur;
}

// Resolves the global embedding for a run: SEMB file or the toy image
// encoder, with optional text guidance applied on top.
inline SemanticEmbedding resolve_embedding(const Image& lr, const RunSettings& run,
                                           const ModelConfig& cfg) {
  ToySemanticEncoder enc(cfg.semantic_dim);
  SemanticEmbedding emb;
  if (!run.embedding_file.empty()) {
    emb = load_embedding_file(run.embedding_file);
    if (static_cast<std::int64_t>(emb.size()) != cfg.semantic_dim)
      throw std::runtime_error("embedding file dim does not match model semantic_dim");
  } else {
    emb = enc.encode_image(lr);
  }
  if (!run.prompt_pos.empty() || !run.prompt_neg.empty())
    emb = text_guidance(emb, run.prompt_pos, run.prompt_neg, run.alpha, enc);
  return emb;
}

// ---- equivalence verification (the module-level oracle as a command) ----

struct EquivalenceCase {
  std::int64_t h = 0, w = 0, n = 0;
  double max_deviation = 0;
  double tolerance = 0;
  bool pass = false;
};

struct EquivalenceReport {
  std::vector<EquivalenceCase> cases;
  bool all_pass = true;
};

// Random-weight toy model; streamed vs whole-image forward over grids up
// to 4x4 with n in {1, 2, 4}.
template <typename S>
EquivalenceReport verify_equivalence(std::uint64_t seed, double tolerance,
                                     const ModelConfig& base = ModelConfig::toy()) {
  ModelConfig cfg = base;
  cfg.validate();
  ModelParams<S> params = init_model_params<S>(cfg, seed, /*zero_init_mod=*/false);
  EquivalenceReport report;
  for (std::int64_t grid : {1, 2, 4}) {
    const std::int64_t hpix = grid * cfg.block_size;
    RopeTable<S> rope =
        RopeTable<S>::create(grid * cfg.patches_per_side() + 1, cfg.head_dim, cfg.rope_base);
    ModelInputs<S> in;
    in.x = seeded_init<S>({hpix, hpix, 3}, seed + 11);
    in.lr_up = seeded_init<S>({hpix, hpix, 3}, seed + 12);
    in.sigma = 0.7;
    in.sem = seeded_init<S>({cfg.semantic_dim}, seed + 13);
    const Tensor<S> full = model_forward_full(params, rope, in);
    for (std::int64_t n : {std::int64_t(1), std::int64_t(2), std::int64_t(4)}) {
      if (n > grid) continue;
      const GenerationPlan plan = plan_generation(grid, grid, n, Trajectory::kRowMajor);
      const Tensor<S> streamed = model_forward_streamed(params, rope, in, plan);
      double dev = 0;
      for (std::int64_t i = 0; i < full.numel(); ++i)
        dev = std::max(dev, std::abs(static_cast<double>(full[i]) -
                                     static_cast<double>(streamed[i])));
      EquivalenceCase c{grid, grid, n, dev, tolerance, dev <= tolerance};
      report.all_pass = report.all_pass && c.pass;
      report.cases.push_back(c);
    }
  }
  return report;
}

inline std::string equivalence_report_text(const EquivalenceReport& r) {
  std::ostringstream os;
  for (const auto& c : r.cases)
    os << "grid " << c.h << "x" << c.w << " n=" << c.n << " max|full-streamed|=" << c.max_deviation
       << " tol=" << c.tolerance << " " << (c.pass ? "PASS" : "FAIL") << "\n";
  os << (r.all_pass ? "PASS" : "FAIL") << "\n";
  return os.str();
}

}  // namespace infdit
