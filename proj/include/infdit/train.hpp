#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "infdit/checkpoint.hpp"
#include "infdit/config.hpp"
#include "infdit/engine.hpp"
#include "infdit/model_backward.hpp"
#include "infdit/textures.hpp"

namespace infdit {

template <typename S>
std::vector<Tensor<S>*> tensor_list(ModelParams<S>& p) {
  std::vector<Tensor<S>*> out;
  p.visit([&](const std::string&, Tensor<S>& t) { out.push_back(&t); });
  return out;
}

template <typename S>
std::vector<std::string> tensor_names(ModelParams<S>& p) {
  std::vector<std::string> out;
  p.visit([&](const std::string& n, Tensor<S>&) { out.push_back(n); });
  return out;
}

template <typename S>
double global_grad_norm(ModelParams<S>& grads) {
  double acc = 0;
  grads.visit([&](const std::string&, Tensor<S>& t) {
    for (S v : t.data) acc += static_cast<double>(v) * static_cast<double>(v);
  });
  return std::sqrt(acc);
}

template <typename S>
struct OptimizerState {
  ModelParams<S> m, v;  // adam moments; sgd keeps velocity in m
  std::int64_t step = 0;

  static OptimizerState make(const ModelConfig& cfg) {
    return {make_zero_grads<S>(cfg), make_zero_grads<S>(cfg), 0};
  }
};

// One optimizer update. Weight decay is decoupled and applied to .weight
// tensors only (never biases, norms or embeddings).
template <typename S>
void optimizer_step(ModelParams<S>& params, ModelParams<S>& grads, OptimizerState<S>& state,
                    const TrainSettings& ts) {
  if (ts.grad_clip > 0) {
    const double norm = global_grad_norm(grads);
    if (!std::isfinite(norm)) throw std::runtime_error("train: non-finite gradient norm");
    if (norm > ts.grad_clip) {
      const double scale = ts.grad_clip / norm;
      grads.visit([&](const std::string&, Tensor<S>& t) {
        for (auto& v : t.data) v = static_cast<S>(static_cast<double>(v) * scale);
      });
    }
  }

  ++state.step;
  auto ps = tensor_list(params);
  auto gs = tensor_list(grads);
  auto ms = tensor_list(state.m);
  auto vs = tensor_list(state.v);
  const auto names = tensor_names(params);

  if (ts.optimizer == "adam") {
    const double bc1 = 1.0 - std::pow(ts.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(ts.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < ps.size(); ++i) {
      const bool decay = names[i].ends_with(".weight");
      for (std::int64_t k = 0; k < ps[i]->numel(); ++k) {
        const double g = static_cast<double>((*gs[i])[k]);
        double m = ts.beta1 * static_cast<double>((*ms[i])[k]) + (1.0 - ts.beta1) * g;
        double v = ts.beta2 * static_cast<double>((*vs[i])[k]) + (1.0 - ts.beta2) * g * g;
        (*ms[i])[k] = static_cast<S>(m);
        (*vs[i])[k] = static_cast<S>(v);
        const double update = (m / bc1) / (std::sqrt(v / bc2) + ts.adam_eps);
        double w = static_cast<double>((*ps[i])[k]);
        w -= ts.lr * update;
        if (decay && ts.weight_decay > 0) w -= ts.lr * ts.weight_decay * w;
        (*ps[i])[k] = static_cast<S>(w);
      }
    }
  } else if (ts.optimizer == "sgd") {
    for (std::size_t i = 0; i < ps.size(); ++i) {
      const bool decay = names[i].ends_with(".weight");
      for (std::int64_t k = 0; k < ps[i]->numel(); ++k) {
        double m = ts.momentum * static_cast<double>((*ms[i])[k]) +
                   static_cast<double>((*gs[i])[k]);
        (*ms[i])[k] = static_cast<S>(m);
        double w = static_cast<double>((*ps[i])[k]);
        w -= ts.lr * m;
        if (decay && ts.weight_decay > 0) w -= ts.lr * ts.weight_decay * w;
        (*ps[i])[k] = static_cast<S>(w);
      }
    }
  } else {
    throw std::invalid_argument("train: optimizer must be adam or sgd");
  }
}

inline std::vector<Image> load_images_from_dir(const std::string& dir) {
  std::vector<std::string> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string p = entry.path().string();
    if (has_suffix(p, ".png") || has_suffix(p, ".ppm")) files.push_back(p);
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw std::runtime_error("train: no .png/.ppm images in " + dir);
  std::vector<Image> out;
  out.reserve(files.size());
  for (const auto& f : files) out.push_back(load_image(f));
  return out;
}

// One training sample drawn deterministically from (seed, step, item):
// crop -> degrade -> bicubic-up LR -> EDM noise, plus a random rope start
// offset so the whole position table gets exercised.
template <typename S>
struct TrainSample {
  Tensor<S> x0, lr_up;
  Tensor<S> sem;
  std::int64_t start_x = 0, start_y = 0;
  EdmSample<S> edm;
};

template <typename S>
TrainSample<S> make_train_sample(const std::vector<Image>& dataset, const ModelConfig& mcfg,
                                 const EDMConfig& edm, const TrainSettings& ts,
                                 std::int64_t factor, Rng rng,
                                 const SemanticEncoder& enc) {
  const Image& src = dataset[rng.below(dataset.size())];
  CropPolicy policy;
  policy.target = ts.crop_target;
  policy.mode = CropMode::kRandomChoice;
  const Image crop = crop_training(src, policy, rng.next_u64());

  DegradationConfig deg = ts.degradation;
  deg.factor = factor;
  deg.seed = rng.next_u64();
  const Image lr = degrade(crop, deg);
  const Image lr_up = resize_bicubic(lr, crop.height, crop.width);

  const SemanticEmbedding emb = enc.encode_image(lr);

  TrainSample<S> s;
  s.x0 = image_to_model_range<S>(crop);
  s.lr_up = image_to_model_range<S>(lr_up);
  s.sem = Tensor<S>({mcfg.semantic_dim});
  for (std::int64_t i = 0; i < mcfg.semantic_dim; ++i)
    s.sem[i] = static_cast<S>(emb[static_cast<std::size_t>(i)]);
  s.start_x = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(ts.max_start_offset) + 1));
  s.start_y = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(ts.max_start_offset) + 1));
  Rng noise_rng(rng.next_u64());
  s.edm = make_edm_sample(s.x0, edm, noise_rng);
  return s;
}

template <typename S>
struct TrainResult {
  ModelParams<S> params;
  OptimizerState<S> opt;
  std::vector<double> losses;  // per step, batch-mean
  std::int64_t steps_done = 0;
};

// Toy training loop: EDM objective over crops of the dataset, the
// whole-image forward path, hand-written backward, Adam or SGD. Resuming
// from a checkpointed (params, moments, step) reproduces the exact
// continuation because every step derives its own rng stream.
template <typename S>
TrainResult<S> train_toy(const std::vector<Image>& dataset, const ModelConfig& mcfg,
                         const EDMConfig& edm, const TrainSettings& ts, std::int64_t factor,
                         const std::string& checkpoint_out = "",
                         const std::function<void(std::int64_t, double)>& log = nullptr,
                         const LoadedCheckpoint<S>* resume = nullptr) {
  if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
  mcfg.validate();
  if (ts.crop_target % mcfg.block_size != 0)
    throw std::invalid_argument("train: crop target must be a multiple of block size");

  TrainResult<S> result;
  std::int64_t start_step = 0;
  if (resume) {
    result.params = resume->params;
    result.opt.m = resume->opt_m;
    result.opt.v = resume->opt_v;
    result.opt.step = resume->train ? resume->train->step : 0;
    start_step = result.opt.step;
  } else {
    result.params = init_model_params<S>(mcfg, ts.seed, /*zero_init_mod=*/true);
    result.opt = OptimizerState<S>::make(mcfg);
  }

  const std::int64_t patches = ts.crop_target / mcfg.patch_size;
  RopeTable<S> rope =
      RopeTable<S>::create(ts.max_start_offset + patches + 1, mcfg.head_dim, mcfg.rope_base);
  const ToySemanticEncoder encoder(mcfg.semantic_dim);

  const Rng master(ts.seed);
  for (std::int64_t step = start_step; step < ts.steps; ++step) {
    ModelParams<S> grads = make_zero_grads<S>(mcfg);
    double loss_acc = 0;
    for (std::int64_t item = 0; item < ts.batch; ++item) {
      Rng sample_rng = master.child(static_cast<std::uint64_t>(step) * 4096 +
                                    static_cast<std::uint64_t>(item) + 7);
      TrainSample<S> s = make_train_sample<S>(dataset, mcfg, edm, ts, factor, sample_rng, encoder);
      rope.start_x = s.start_x;
      rope.start_y = s.start_y;

      ModelInputs<S> in{s.edm.x_in, s.lr_up, s.edm.sigma, s.sem};
      ForwardTape<S> tape;
      Tensor<S> raw = model_forward_full(result.params, rope, in, &tape);
      Tensor<S> d_raw;
      loss_acc += edm_loss_from_raw(s.x0, s.edm, raw, edm, &d_raw);
      for (auto& v : d_raw.data) v = static_cast<S>(static_cast<double>(v) / ts.batch);
      model_backward(result.params, rope, tape, d_raw, grads);
    }
    optimizer_step(result.params, grads, result.opt, ts);
    const double loss = loss_acc / static_cast<double>(ts.batch);
    result.losses.push_back(loss);
    if (log) log(step, loss);

    if (!checkpoint_out.empty() && ts.checkpoint_every > 0 &&
        (step + 1) % ts.checkpoint_every == 0 && step + 1 < ts.steps) {
      CheckpointTrainState cts{result.opt.step, ts.seed, 0};
      save_checkpoint(checkpoint_out, result.params, &result.opt.m, &result.opt.v, &cts);
    }
  }
  result.steps_done = ts.steps;
  if (!checkpoint_out.empty()) {
    CheckpointTrainState cts{result.opt.step, ts.seed, 0};
    save_checkpoint(checkpoint_out, result.params, &result.opt.m, &result.opt.v, &cts);
  }
  return result;
}

}  // namespace infdit
