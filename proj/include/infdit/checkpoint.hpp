#pragma once

#include <cstdint>
#include <cstring>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "infdit/image_io.hpp"
#include "infdit/model.hpp"

namespace infdit {

// INFD checkpoint: magic, u32 version, u64 header length, JSON header
// (config + tensor directory), raw little-endian payload. Offsets are
// payload-relative.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointTrainState {
  std::int64_t step = 0;
  std::uint64_t rng_seed = 0;
  std::uint64_t rng_counter = 0;
};

namespace detail {

inline nlohmann::json config_to_json(const ModelConfig& c) {
  return {{"layers", c.layers},       {"hidden", c.hidden},
          {"heads", c.heads},         {"head_dim", c.head_dim},
          {"ffn_dim", c.ffn_dim},     {"block_size", c.block_size},
          {"patch_size", c.patch_size}, {"in_channels", c.in_channels},
          {"semantic_dim", c.semantic_dim}, {"rope_base", c.rope_base},
          {"ln_eps", c.ln_eps}};
}

inline ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.layers = j.at("layers");
  c.hidden = j.at("hidden");
  c.heads = j.at("heads");
  c.head_dim = j.at("head_dim");
  c.ffn_dim = j.at("ffn_dim");
  c.block_size = j.at("block_size");
  c.patch_size = j.at("patch_size");
  c.in_channels = j.value("in_channels", std::int64_t{6});
  c.semantic_dim = j.at("semantic_dim");
  c.rope_base = j.value("rope_base", 10000.0);
  c.ln_eps = j.value("ln_eps", 1e-6);
  return c;
}

template <typename S>
const char* dtype_name() {
  return sizeof(S) == 4 ? "f32" : "f64";
}

}  // namespace detail

template <typename S>
void save_checkpoint(const std::string& path, const ModelParams<S>& params,
                     const ModelParams<S>* opt_m = nullptr, const ModelParams<S>* opt_v = nullptr,
                     const CheckpointTrainState* train = nullptr) {
  nlohmann::json header;
  header["version"] = kCheckpointVersion;
  header["config"] = detail::config_to_json(params.cfg);

  std::vector<std::uint8_t> payload;
  nlohmann::json tensors = nlohmann::json::object();
  auto emit = [&](const std::string& name, const Tensor<S>& t) {
    nlohmann::json entry;
    entry["dtype"] = detail::dtype_name<S>();
    entry["shape"] = t.shape;
    entry["offset"] = payload.size();
    tensors[name] = entry;
    const std::size_t at = payload.size();
    payload.resize(at + static_cast<std::size_t>(t.numel()) * sizeof(S));
    std::memcpy(payload.data() + at, t.data.data(),
                static_cast<std::size_t>(t.numel()) * sizeof(S));
  };
  const_cast<ModelParams<S>&>(params).visit(
      [&](const std::string& n, Tensor<S>& t) { emit(n, t); });
  if (opt_m && opt_v) {
    const_cast<ModelParams<S>*>(opt_m)->visit(
        [&](const std::string& n, Tensor<S>& t) { emit("opt.m." + n, t); });
    const_cast<ModelParams<S>*>(opt_v)->visit(
        [&](const std::string& n, Tensor<S>& t) { emit("opt.v." + n, t); });
  }
  header["tensors"] = tensors;
  if (train) {
    header["train_state"] = {{"step", train->step},
                             {"rng_seed", train->rng_seed},
                             {"rng_counter", train->rng_counter}};
  }

  const std::string hs = header.dump();
  std::vector<std::uint8_t> bytes;
  bytes.insert(bytes.end(), {'I', 'N', 'F', 'D'});
  for (int i = 0; i < 4; ++i)
    bytes.push_back(static_cast<std::uint8_t>(kCheckpointVersion >> (8 * i)));
  const std::uint64_t hlen = hs.size();
  for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<std::uint8_t>(hlen >> (8 * i)));
  bytes.insert(bytes.end(), hs.begin(), hs.end());
  bytes.insert(bytes.end(), payload.begin(), payload.end());
  write_file_bytes(path, bytes);
}

inline ModelConfig checkpoint_config(const std::string& path) {
  const auto bytes = read_file_bytes(path);
  if (bytes.size() < 16 || std::memcmp(bytes.data(), "INFD", 4) != 0)
    throw std::runtime_error("checkpoint: bad magic");
  std::uint32_t version = 0;
  for (int i = 0; i < 4; ++i) version |= static_cast<std::uint32_t>(bytes[4 + i]) << (8 * i);
  if (version != kCheckpointVersion) throw std::runtime_error("checkpoint: version mismatch");
  std::uint64_t hlen = 0;
  for (int i = 0; i < 8; ++i) hlen |= static_cast<std::uint64_t>(bytes[8 + i]) << (8 * i);
  if (bytes.size() < 16 + hlen) throw std::runtime_error("checkpoint: truncated header");
  const nlohmann::json header =
      nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(hlen));
  return detail::config_from_json(header.at("config"));
}

template <typename S>
struct LoadedCheckpoint {
  ModelParams<S> params;
  ModelParams<S> opt_m, opt_v;
  bool has_optimizer = false;
  std::optional<CheckpointTrainState> train;
};

// Loads and validates: every expected tensor present exactly once with
// the right shape, offsets in bounds, optional optimizer moments.
template <typename S>
LoadedCheckpoint<S> load_checkpoint(const std::string& path) {
  const auto bytes = read_file_bytes(path);
  if (bytes.size() < 16 || std::memcmp(bytes.data(), "INFD", 4) != 0)
    throw std::runtime_error("checkpoint: bad magic");
  std::uint32_t version = 0;
  for (int i = 0; i < 4; ++i) version |= static_cast<std::uint32_t>(bytes[4 + i]) << (8 * i);
  if (version != kCheckpointVersion) throw std::runtime_error("checkpoint: version mismatch");
  std::uint64_t hlen = 0;
  for (int i = 0; i < 8; ++i) hlen |= static_cast<std::uint64_t>(bytes[8 + i]) << (8 * i);
  if (bytes.size() < 16 + hlen) throw std::runtime_error("checkpoint: truncated header");
  const nlohmann::json header =
      nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(hlen));

  const std::uint8_t* payload = bytes.data() + 16 + hlen;
  const std::size_t payload_size = bytes.size() - 16 - static_cast<std::size_t>(hlen);
  const nlohmann::json& tensors = header.at("tensors");

  LoadedCheckpoint<S> out;
  const ModelConfig cfg = detail::config_from_json(header.at("config"));
  out.params = make_model_params<S>(cfg);
  out.has_optimizer = tensors.contains("opt.m.patch_embed.weight");
  if (out.has_optimizer) {
    out.opt_m = make_zero_grads<S>(cfg);
    out.opt_v = make_zero_grads<S>(cfg);
  }

  std::size_t expected = 0;
  auto read_tensor = [&](const std::string& name, Tensor<S>& t) {
    ++expected;
    if (!tensors.contains(name))
      throw std::runtime_error("checkpoint: missing tensor " + name);
    const nlohmann::json& e = tensors.at(name);
    const std::vector<std::int64_t> shape = e.at("shape").get<std::vector<std::int64_t>>();
    if (shape != t.shape)
      throw std::runtime_error("checkpoint: shape mismatch for " + name);
    const std::string dtype = e.at("dtype");
    const std::size_t elem = dtype == "f32" ? 4 : 8;
    if (dtype != "f32" && dtype != "f64")
      throw std::runtime_error("checkpoint: unknown dtype for " + name);
    const std::uint64_t offset = e.at("offset");
    const std::size_t need = static_cast<std::size_t>(t.numel()) * elem;
    if (offset + need > payload_size)
      throw std::runtime_error("checkpoint: truncated payload at tensor " + name);
    if (elem == sizeof(S)) {
      std::memcpy(t.data.data(), payload + offset, need);
    } else if (elem == 4) {
      const float* src = reinterpret_cast<const float*>(payload + offset);
      for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<S>(src[i]);
    } else {
      const double* src = reinterpret_cast<const double*>(payload + offset);
      for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<S>(src[i]);
    }
  };

  out.params.visit(read_tensor);
  if (out.has_optimizer) {
    out.opt_m.visit([&](const std::string& n, Tensor<S>& t) { read_tensor("opt.m." + n, t); });
    out.opt_v.visit([&](const std::string& n, Tensor<S>& t) { read_tensor("opt.v." + n, t); });
  }
  if (tensors.size() != expected)
    throw std::runtime_error("checkpoint: unexpected extra tensors in file");

  if (header.contains("train_state")) {
    CheckpointTrainState ts;
    ts.step = header["train_state"].at("step");
    ts.rng_seed = header["train_state"].at("rng_seed");
    ts.rng_counter = header["train_state"].at("rng_counter");
    out.train = ts;
  }
  return out;
}

// Loads with a hard config check; a checkpoint from a different model
// shape is rejected.
template <typename S>
LoadedCheckpoint<S> load_checkpoint_expect(const std::string& path, const ModelConfig& want) {
  const ModelConfig got = checkpoint_config(path);
  if (!(got == want))
    throw std::runtime_error("checkpoint: model config mismatch with requested config");
  return load_checkpoint<S>(path);
}

}  // namespace infdit
