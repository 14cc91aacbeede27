#pragma once

#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <optional>
#include <string>

#include <json.hpp>

#include "infdit/diffusion.hpp"
#include "infdit/geometry.hpp"
#include "infdit/image.hpp"
#include "infdit/model.hpp"

namespace infdit {

struct TrainSettings {
  std::int64_t steps = 2000;
  std::int64_t batch = 2;
  std::string optimizer = "adam";  // adam | sgd
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.99;  // printed 0.099 upstream is treated as a typo
  double adam_eps = 1e-8;
  double momentum = 0.9;  // sgd
  double weight_decay = 1e-4;
  double grad_clip = 0.1;
  std::int64_t crop_target = 64;
  std::int64_t checkpoint_every = 0;  // 0: final only
  std::int64_t max_start_offset = 64;
  std::uint64_t seed = 0;
  DegradationConfig degradation;
};

struct RunSettings {
  std::int64_t factor = 4;
  std::int64_t tiles_n = 1;
  std::optional<Trajectory> trajectory;
  std::uint64_t seed = 0;
  std::string prompt_pos;
  std::string prompt_neg;
  double alpha = 0.5;
  std::string embedding_file;  // empty: toy image encoder
  bool plain_noise_init = false;
  std::int64_t precision = 32;  // 32 | 64

  void validate() const {
    if (factor < 1) throw std::invalid_argument("run: factor must be >= 1");
    if (tiles_n < 1) throw std::invalid_argument("run: tiles_n must be >= 1");
    if (precision != 32 && precision != 64)
      throw std::invalid_argument("run: precision must be 32 or 64");
  }
};

struct AppConfig {
  ModelConfig model;  // toy defaults
  EDMConfig edm;
  RunSettings run;
  TrainSettings train;
};

namespace detail {

template <typename T>
void maybe(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

inline ResizeKernel kernel_from_name(const std::string& s) {
  if (s == "bicubic") return ResizeKernel::kBicubic;
  if (s == "bilinear") return ResizeKernel::kBilinear;
  if (s == "area") return ResizeKernel::kArea;
  throw std::invalid_argument("config: unknown resize kernel " + s);
}

}  // namespace detail

// Fixed documented JSON schema; absent keys keep their defaults. CLI
// flags override file values.
inline AppConfig parse_app_config(const nlohmann::json& j) {
  AppConfig cfg;
  if (j.contains("model")) {
    const auto& m = j.at("model");
    detail::maybe(m, "layers", cfg.model.layers);
    detail::maybe(m, "hidden", cfg.model.hidden);
    detail::maybe(m, "heads", cfg.model.heads);
    detail::maybe(m, "head_dim", cfg.model.head_dim);
    detail::maybe(m, "ffn_dim", cfg.model.ffn_dim);
    detail::maybe(m, "block_size", cfg.model.block_size);
    detail::maybe(m, "patch_size", cfg.model.patch_size);
    detail::maybe(m, "semantic_dim", cfg.model.semantic_dim);
    detail::maybe(m, "rope_base", cfg.model.rope_base);
    detail::maybe(m, "ln_eps", cfg.model.ln_eps);
  }
  if (j.contains("edm")) {
    const auto& e = j.at("edm");
    detail::maybe(e, "sigma_data", cfg.edm.sigma_data);
    detail::maybe(e, "p_mean", cfg.edm.p_mean);
    detail::maybe(e, "p_std", cfg.edm.p_std);
    detail::maybe(e, "sigma_min", cfg.edm.sigma_min);
    detail::maybe(e, "sigma_max", cfg.edm.sigma_max);
    detail::maybe(e, "rho", cfg.edm.rho);
    detail::maybe(e, "steps", cfg.edm.steps);
    if (e.contains("sampler")) {
      const std::string s = e.at("sampler");
      if (s == "euler")
        cfg.edm.sampler = SamplerKind::kEuler;
      else if (s == "heun")
        cfg.edm.sampler = SamplerKind::kHeun;
      else
        throw std::invalid_argument("config: sampler must be euler or heun");
    }
    detail::maybe(e, "lr_noise_init", cfg.edm.lr_noise_init);
  }
  if (j.contains("run")) {
    const auto& r = j.at("run");
    detail::maybe(r, "factor", cfg.run.factor);
    detail::maybe(r, "tiles_n", cfg.run.tiles_n);
    if (r.contains("trajectory")) {
      const std::string t = r.at("trajectory");
      if (t == "row_major")
        cfg.run.trajectory = Trajectory::kRowMajor;
      else if (t == "column_major")
        cfg.run.trajectory = Trajectory::kColumnMajor;
      else if (t != "auto")
        throw std::invalid_argument("config: trajectory must be row_major/column_major/auto");
    }
    detail::maybe(r, "seed", cfg.run.seed);
    detail::maybe(r, "prompt_pos", cfg.run.prompt_pos);
    detail::maybe(r, "prompt_neg", cfg.run.prompt_neg);
    detail::maybe(r, "alpha", cfg.run.alpha);
    detail::maybe(r, "embedding_file", cfg.run.embedding_file);
    detail::maybe(r, "plain_noise_init", cfg.run.plain_noise_init);
    detail::maybe(r, "precision", cfg.run.precision);
  }
  if (j.contains("train")) {
    const auto& t = j.at("train");
    detail::maybe(t, "steps", cfg.train.steps);
    detail::maybe(t, "batch", cfg.train.batch);
    detail::maybe(t, "optimizer", cfg.train.optimizer);
    detail::maybe(t, "lr", cfg.train.lr);
    detail::maybe(t, "beta1", cfg.train.beta1);
    detail::maybe(t, "beta2", cfg.train.beta2);
    detail::maybe(t, "adam_eps", cfg.train.adam_eps);
    detail::maybe(t, "momentum", cfg.train.momentum);
    detail::maybe(t, "weight_decay", cfg.train.weight_decay);
    detail::maybe(t, "grad_clip", cfg.train.grad_clip);
    detail::maybe(t, "crop_target", cfg.train.crop_target);
    detail::maybe(t, "checkpoint_every", cfg.train.checkpoint_every);
    detail::maybe(t, "max_start_offset", cfg.train.max_start_offset);
    detail::maybe(t, "seed", cfg.train.seed);
    if (t.contains("degradation")) {
      const auto& d = t.at("degradation");
      detail::maybe(d, "blur_sigma_min", cfg.train.degradation.blur_sigma_min);
      detail::maybe(d, "blur_sigma_max", cfg.train.degradation.blur_sigma_max);
      detail::maybe(d, "noise_sigma_min", cfg.train.degradation.noise_sigma_min);
      detail::maybe(d, "noise_sigma_max", cfg.train.degradation.noise_sigma_max);
      if (d.contains("resize_kernels")) {
        cfg.train.degradation.resize_kernels.clear();
        for (const auto& k : d.at("resize_kernels"))
          cfg.train.degradation.resize_kernels.push_back(
              detail::kernel_from_name(k.get<std::string>()));
      }
    }
  }
  return cfg;
}

inline AppConfig load_app_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path);
  nlohmann::json j;
  in >> j;
  return parse_app_config(j);
}

// --config flag wins; otherwise the INFDIT_CONFIG env var; otherwise
// built-in toy defaults.
inline AppConfig resolve_app_config(const std::string& explicit_path) {
  if (!explicit_path.empty()) return load_app_config(explicit_path);
  if (const char* env = std::getenv("INFDIT_CONFIG"); env && *env) return load_app_config(env);
  return AppConfig{};
}

}  // namespace infdit
