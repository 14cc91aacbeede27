#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "infdit/image.hpp"

namespace infdit {

// Global semantic embedding; unit L2 norm after any normalize-producing
// operation (the all-zeros embedding from empty text is the one exception).
using SemanticEmbedding = std::vector<float>;

inline double embedding_norm(const SemanticEmbedding& e) {
  double acc = 0;
  for (float v : e) acc += static_cast<double>(v) * static_cast<double>(v);
  return std::sqrt(acc);
}

inline SemanticEmbedding normalize_embedding(const SemanticEmbedding& e) {
  const double n = embedding_norm(e);
  if (n == 0.0) throw std::runtime_error("semantic: cannot normalize zero embedding");
  SemanticEmbedding out(e.size());
  for (std::size_t i = 0; i < e.size(); ++i)
    out[i] = static_cast<float>(static_cast<double>(e[i]) / n);
  return out;
}

// Image and text encoders mapping into one shared space. Pluggable so a
// real CLIP embedding computed out of process can replace the toy pair.
class SemanticEncoder {
 public:
  virtual ~SemanticEncoder() = default;
  virtual SemanticEmbedding encode_image(const Image& img) const = 0;
  virtual SemanticEmbedding encode_text(const std::string& text) const = 0;
  virtual std::int64_t dim() const = 0;
};

namespace detail {

constexpr std::int64_t kToyFeatureDim = 16 * 16 * 3;  // pooled 224x224 -> 16x16 RGB

// Fixed seeded projection shared by the image and text toy encoders.
inline std::vector<double> toy_projection(std::uint64_t seed, std::int64_t dim) {
  Rng rng(seed);
  std::vector<double> proj(static_cast<std::size_t>(kToyFeatureDim * dim));
  for (auto& v : proj) v = rng.normal();
  return proj;
}

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace detail

// CLIP stand-in: resize to 224x224, average-pool to 16x16x3, project with
// a fixed seeded matrix, L2-normalize.
class ToySemanticEncoder : public SemanticEncoder {
 public:
  explicit ToySemanticEncoder(std::int64_t dim, std::uint64_t seed = 0x5E3Aull)
      : dim_(dim), seed_(seed), proj_(detail::toy_projection(seed, dim)) {}

  SemanticEmbedding encode_image(const Image& img) const override {
    Image r = (img.height == 224 && img.width == 224) ? img : resize_bicubic(img, 224, 224);
    std::vector<double> feat(static_cast<std::size_t>(detail::kToyFeatureDim), 0.0);
    const std::int64_t cell = 14;  // 224 / 16
    for (std::int64_t gy = 0; gy < 16; ++gy)
      for (std::int64_t gx = 0; gx < 16; ++gx)
        for (int c = 0; c < 3; ++c) {
          double acc = 0;
          for (std::int64_t y = 0; y < cell; ++y)
            for (std::int64_t x = 0; x < cell; ++x)
              acc += r.at(gy * cell + y, gx * cell + x, c);
          feat[static_cast<std::size_t>((gy * 16 + gx) * 3 + c)] =
              acc / static_cast<double>(cell * cell);
        }
    return project_and_normalize(feat);
  }

  SemanticEmbedding encode_text(const std::string& text) const override {
    std::vector<double> bag(static_cast<std::size_t>(detail::kToyFeatureDim), 0.0);
    std::size_t pos = 0;
    bool any = false;
    while (pos < text.size()) {
      while (pos < text.size() && std::isspace(static_cast<unsigned char>(text[pos]))) ++pos;
      std::size_t end = pos;
      while (end < text.size() && !std::isspace(static_cast<unsigned char>(text[end]))) ++end;
      if (end > pos) {
        const std::string token = text.substr(pos, end - pos);
        bag[static_cast<std::size_t>(detail::fnv1a(token) %
                                     static_cast<std::uint64_t>(detail::kToyFeatureDim))] += 1.0;
        any = true;
      }
      pos = end;
    }
    if (!any) return SemanticEmbedding(static_cast<std::size_t>(dim_), 0.0f);  // zero fallback
    return project_and_normalize(bag);
  }

  std::int64_t dim() const override { return dim_; }

 private:
  SemanticEmbedding project_and_normalize(const std::vector<double>& feat) const {
    std::vector<double> out(static_cast<std::size_t>(dim_), 0.0);
    for (std::int64_t i = 0; i < detail::kToyFeatureDim; ++i) {
      const double f = feat[static_cast<std::size_t>(i)];
      if (f == 0.0) continue;
      const double* row = proj_.data() + i * dim_;
      for (std::int64_t j = 0; j < dim_; ++j) out[static_cast<std::size_t>(j)] += f * row[j];
    }
    double n = 0;
    for (double v : out) n += v * v;
    n = std::sqrt(n);
    SemanticEmbedding e(static_cast<std::size_t>(dim_));
    if (n == 0.0) return e;
    for (std::int64_t j = 0; j < dim_; ++j)
      e[static_cast<std::size_t>(j)] = static_cast<float>(out[static_cast<std::size_t>(j)] / n);
    return e;
  }

  std::int64_t dim_;
  std::uint64_t seed_;
  std::vector<double> proj_;
};

// Text-guided update of the image embedding:
// normalize(I + alpha * (enc(c_pos) - enc(c_neg))).
inline SemanticEmbedding text_guidance(const SemanticEmbedding& image_emb,
                                       const std::string& c_pos, const std::string& c_neg,
                                       double alpha, const SemanticEncoder& enc) {
  if (static_cast<std::int64_t>(image_emb.size()) != enc.dim())
    throw std::invalid_argument("text_guidance: embedding dimension mismatch");
  const SemanticEmbedding pos = enc.encode_text(c_pos);
  const SemanticEmbedding neg = enc.encode_text(c_neg);
  SemanticEmbedding out(image_emb.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = static_cast<float>(static_cast<double>(image_emb[i]) +
                                alpha * (static_cast<double>(pos[i]) -
                                         static_cast<double>(neg[i])));
  if (embedding_norm(out) == 0.0)
    throw std::runtime_error("text_guidance: guidance cancelled the embedding, change alpha");
  return normalize_embedding(out);
}

// SEMB file: 4-byte magic, u32 dim (LE), then dim little-endian f32.
inline void save_embedding_file(const SemanticEmbedding& e, const std::string& path) {
  std::vector<std::uint8_t> bytes;
  bytes.insert(bytes.end(), {'S', 'E', 'M', 'B'});
  const std::uint32_t dim = static_cast<std::uint32_t>(e.size());
  for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<std::uint8_t>(dim >> (8 * i)));
  const std::size_t at = bytes.size();
  bytes.resize(at + e.size() * 4);
  std::memcpy(bytes.data() + at, e.data(), e.size() * 4);
  write_file_bytes(path, bytes);
}

inline SemanticEmbedding load_embedding_file(const std::string& path) {
  const auto bytes = read_file_bytes(path);
  if (bytes.size() < 8 || std::memcmp(bytes.data(), "SEMB", 4) != 0)
    throw std::runtime_error("embedding file: bad magic");
  std::uint32_t dim = 0;
  for (int i = 0; i < 4; ++i) dim |= static_cast<std::uint32_t>(bytes[4 + i]) << (8 * i);
  if (bytes.size() != 8 + static_cast<std::size_t>(dim) * 4)
    throw std::runtime_error("embedding file: truncated payload");
  SemanticEmbedding e(dim);
  std::memcpy(e.data(), bytes.data() + 8, static_cast<std::size_t>(dim) * 4);
  return e;
}

}  // namespace infdit
