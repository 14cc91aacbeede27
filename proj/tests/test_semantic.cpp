#include <gtest/gtest.h>

#include <filesystem>

#include "infdit/semantic.hpp"
#include "test_util.hpp"

using namespace infdit;

namespace {

// Fixed-output encoder for exercising the guidance arithmetic directly.
class StubEncoder : public SemanticEncoder {
 public:
  StubEncoder(SemanticEmbedding pos, SemanticEmbedding neg)
      : pos_(std::move(pos)), neg_(std::move(neg)) {}
  SemanticEmbedding encode_image(const Image&) const override { return pos_; }
  SemanticEmbedding encode_text(const std::string& text) const override {
    return text == "pos" ? pos_ : neg_;
  }
  std::int64_t dim() const override { return static_cast<std::int64_t>(pos_.size()); }

 private:
  SemanticEmbedding pos_, neg_;
};

Image constant_image(float r, float g, float b) {
  Image img(32, 32);
  for (std::int64_t i = 0; i < img.pixels(); ++i) {
    img.data[static_cast<std::size_t>(i * 3 + 0)] = r;
    img.data[static_cast<std::size_t>(i * 3 + 1)] = g;
    img.data[static_cast<std::size_t>(i * 3 + 2)] = b;
  }
  return img;
}

double cosine(const SemanticEmbedding& a, const SemanticEmbedding& b) {
  double acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += double(a[i]) * double(b[i]);
  return acc;
}

}  // namespace

TEST(ImageEncode, UnitNorm) {
  ToySemanticEncoder enc(64);
  auto e = enc.encode_image(constant_image(0.2f, 0.5f, 0.9f));
  EXPECT_NEAR(embedding_norm(e), 1.0, 1e-6);
}

TEST(ImageEncode, Deterministic) {
  ToySemanticEncoder enc(64);
  Image img = constant_image(0.3f, 0.1f, 0.7f);
  EXPECT_EQ(enc.encode_image(img), enc.encode_image(img));
}

TEST(ImageEncode, DistinctColorsSeparate) {
  ToySemanticEncoder enc(64);
  auto a = enc.encode_image(constant_image(1.0f, 0.0f, 0.0f));
  auto b = enc.encode_image(constant_image(0.0f, 0.0f, 1.0f));
  EXPECT_LT(cosine(a, b), 1.0 - 1e-4);
}

TEST(TextEncode, EmptyIsZeroFallback) {
  ToySemanticEncoder enc(32);
  auto e = enc.encode_text("");
  EXPECT_EQ(embedding_norm(e), 0.0);
  auto ws = enc.encode_text("   \t\n");
  EXPECT_EQ(embedding_norm(ws), 0.0);
}

TEST(TextEncode, DeterministicAndDistinct) {
  ToySemanticEncoder enc(32);
  EXPECT_EQ(enc.encode_text("clear"), enc.encode_text("clear"));
  EXPECT_NE(enc.encode_text("clear"), enc.encode_text("blur"));
  EXPECT_NEAR(embedding_norm(enc.encode_text("clear")), 1.0, 1e-6);
}

TEST(Guidance, AlphaZeroIsIdentity) {
  ToySemanticEncoder enc(32);
  auto img_emb = enc.encode_image(constant_image(0.4f, 0.4f, 0.2f));
  auto out = text_guidance(img_emb, "clear", "blur", 0.0, enc);
  for (std::size_t i = 0; i < out.size(); ++i) EXPECT_NEAR(out[i], img_emb[i], 1e-6);
}

TEST(Guidance, EqualPromptsCancel) {
  ToySemanticEncoder enc(32);
  auto img_emb = enc.encode_image(constant_image(0.8f, 0.1f, 0.3f));
  auto out = text_guidance(img_emb, "same words", "same words", 1.7, enc);
  for (std::size_t i = 0; i < out.size(); ++i) EXPECT_NEAR(out[i], img_emb[i], 1e-6);
}

TEST(Guidance, UnitNormAcrossAlphas) {
  ToySemanticEncoder enc(48);
  auto img_emb = enc.encode_image(constant_image(0.5f, 0.6f, 0.7f));
  Rng rng(9);
  for (int i = 0; i < 20; ++i) {
    const double alpha = rng.uniform(-2.0, 2.0);
    auto out = text_guidance(img_emb, "clear", "blur", alpha, enc);
    EXPECT_NEAR(embedding_norm(out), 1.0, 1e-6) << "alpha " << alpha;
  }
}

TEST(Guidance, ExactCancellationIsError) {
  SemanticEmbedding i{1.0f, 0.0f};
  StubEncoder enc({0.0f, 0.0f}, {1.0f, 0.0f});  // pos - neg == -i
  EXPECT_THROW(text_guidance(i, "pos", "neg", 1.0, enc), std::runtime_error);
}

TEST(Guidance, InvariantToCommonTextOffset) {
  // only the difference of the two text embeddings matters
  SemanticEmbedding i = normalize_embedding({0.3f, -0.2f, 0.9f, 0.1f});
  SemanticEmbedding pos{0.5f, 0.1f, -0.3f, 0.2f};
  SemanticEmbedding neg{-0.1f, 0.4f, 0.0f, 0.6f};
  SemanticEmbedding offset{0.7f, -0.9f, 0.2f, 0.05f};
  SemanticEmbedding pos2(4), neg2(4);
  for (int k = 0; k < 4; ++k) {
    pos2[k] = pos[k] + offset[k];
    neg2[k] = neg[k] + offset[k];
  }
  StubEncoder e1(pos, neg), e2(pos2, neg2);
  auto a = text_guidance(i, "pos", "neg", 0.6, e1);
  auto b = text_guidance(i, "pos", "neg", 0.6, e2);
  for (int k = 0; k < 4; ++k) EXPECT_NEAR(a[k], b[k], 1e-6);
}

TEST(Normalize, Idempotent) {
  SemanticEmbedding e{3.0f, -4.0f, 12.0f};
  auto n1 = normalize_embedding(e);
  auto n2 = normalize_embedding(n1);
  for (std::size_t i = 0; i < e.size(); ++i) EXPECT_NEAR(n1[i], n2[i], 1e-7);
}

TEST(EmbeddingFile, RoundTripBitwise) {
  ToySemanticEncoder enc(512);
  auto e = enc.encode_image(constant_image(0.9f, 0.2f, 0.4f));
  const auto path = (std::filesystem::temp_directory_path() / "emb.semb").string();
  save_embedding_file(e, path);
  auto back = load_embedding_file(path);
  ASSERT_EQ(back.size(), e.size());
  EXPECT_EQ(std::memcmp(back.data(), e.data(), e.size() * 4), 0);
}

TEST(EmbeddingFile, BadMagicRejected) {
  const auto path = (std::filesystem::temp_directory_path() / "notsemb.bin").string();
  write_file_bytes(path, {'X', 'E', 'M', 'B', 4, 0, 0, 0, 1, 2, 3, 4});
  EXPECT_THROW(load_embedding_file(path), std::runtime_error);
}

TEST(EmbeddingFile, TruncatedRejected) {
  ToySemanticEncoder enc(16);
  auto e = enc.encode_text("hello world");
  const auto path = (std::filesystem::temp_directory_path() / "trunc.semb").string();
  save_embedding_file(e, path);
  auto bytes = read_file_bytes(path);
  bytes.pop_back();
  write_file_bytes(path, bytes);
  EXPECT_THROW(load_embedding_file(path), std::runtime_error);
}
