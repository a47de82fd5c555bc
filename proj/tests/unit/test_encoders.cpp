#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "encoders.hpp"
#include "error.hpp"
#include "fixtures.hpp"
#include "preprocess.hpp"

using namespace memefusion;

namespace {

double max_abs_diff(std::span<const float> got, const std::vector<double>& want) {
  EXPECT_EQ(got.size(), want.size());
  double worst = 0.0;
  for (std::size_t i = 0; i < std::min(got.size(), want.size()); ++i) {
    worst = std::max(worst, std::abs(static_cast<double>(got[i]) - want[i]));
  }
  return worst;
}

double max_abs(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

template <typename Encoder>
std::map<std::string, nn::ParamSlot<float>> slots_by_name(Encoder& enc) {
  std::map<std::string, nn::ParamSlot<float>> out;
  for (const auto& s : enc.parameters()) out[s.name] = s;
  return out;
}

void expect_grads(const std::map<std::string, nn::ParamSlot<float>>& slots,
                  const nlohmann::json& grads) {
  for (const auto& [name, values] : grads.items()) {
    ASSERT_TRUE(slots.count(name)) << name;
    const auto& slot = slots.at(name);
    const auto want = values.get<std::vector<double>>();
    ASSERT_EQ(slot.size, want.size()) << name;
    const double tol = 1e-4 * std::max(1.0, max_abs(want));
    EXPECT_LT(max_abs_diff({slot.grad, slot.size}, want), tol) << name;
  }
}

TokenSequence golden_sequence(const nlohmann::json& c) {
  TokenSequence seq;
  seq.token_ids = c.at("ids").get<std::vector<int>>();
  seq.attention_mask = c.at("mask").get<std::vector<std::uint8_t>>();
  seq.max_len = static_cast<int>(seq.token_ids.size());
  return seq;
}

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected an Error";
  return ErrorKind::kIo;
}

}  // namespace

TEST(TextEncoder, ClsAndMeanMatchReferenceTransformer) {
  const auto dir = (mftest::data_dir() / "tiny_bert").string();
  const auto golden = mftest::read_json(mftest::data_dir() / "text_encoder_golden.json");
  const auto cls = TextEncoder::load(dir, true, TextPooling::kCls, std::nullopt);
  const auto mean = TextEncoder::load(dir, true, TextPooling::kMean, std::nullopt);
  EXPECT_EQ(cls->output_dim(), 32);
  for (const auto& c : golden.at("cases")) {
    const auto seq = golden_sequence(c);
    EXPECT_LT(max_abs_diff(cls->encode(seq).values, c.at("cls")), 2e-5);
    EXPECT_LT(max_abs_diff(mean->encode(seq).values, c.at("mean")), 2e-5);
  }
}

TEST(TextEncoder, BackwardMatchesReferenceGradients) {
  const auto dir = (mftest::data_dir() / "tiny_bert").string();
  const auto golden = mftest::read_json(mftest::data_dir() / "text_encoder_golden.json");
  auto enc = TextEncoder::load(dir, false, TextPooling::kCls, std::nullopt);
  for (const auto& c : golden.at("cases")) {
    const auto seq = golden_sequence(c);
    const auto direction = c.at("direction").get<std::vector<float>>();
    enc->zero_grad();
    Rng rng(1);
    auto tape = TextEncoder::new_tape();
    const auto out = enc->forward_train(seq, rng, *tape);
    EXPECT_LT(max_abs_diff(out.values, c.at("cls")), 2e-5);
    enc->backward(*tape, direction);
    expect_grads(slots_by_name(*enc), c.at("grads"));
  }
}

TEST(ImageEncoder, BackboneProjectionAndGradientsMatchReference) {
  const auto golden = mftest::read_json(mftest::data_dir() / "image_encoder_golden.json");
  auto enc = ImageEncoder::load((mftest::data_dir() / "tiny_vgg").string(), false, 0,
                                std::nullopt);
  EXPECT_EQ(enc->backbone_dim(), 16);
  EXPECT_EQ(enc->output_dim(), 256);
  PreprocessConfig config;
  config.image_size = golden.at("size");
  const auto img = prepare_image(mftest::data_dir() / golden.at("image").get<std::string>(),
                                 config);
  EXPECT_LT(max_abs_diff(enc->backbone_features(img), golden.at("backbone")), 2e-5);
  EXPECT_LT(max_abs_diff(enc->encode(img).values, golden.at("embedding")), 2e-5);

  enc->zero_grad();
  auto tape = ImageEncoder::new_tape();
  const auto out = enc->forward_train(img, *tape);
  EXPECT_LT(max_abs_diff(out.values, golden.at("embedding")), 2e-5);
  enc->backward(*tape, golden.at("direction").get<std::vector<float>>());
  expect_grads(slots_by_name(*enc), golden.at("grads"));
}

TEST(TextEncoder, FullWidthOutputAndBatchInvariance) {
  const auto& dirs = mftest::small_encoders();
  const auto enc = TextEncoder::load(dirs.text.string(), true);
  EXPECT_EQ(enc->output_dim(), kTextEmbeddingDim);
  std::vector<TokenSequence> batch;
  for (const char* t : {"troll meme", "", "a much longer caption with many words in it", "aaa"}) {
    batch.push_back(prepare_text(enc->tokenizer(), t, 16));
  }
  const auto together = enc->encode(batch);
  ASSERT_EQ(together.size(), batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    EXPECT_EQ(together[i], enc->encode(batch[i])) << i;
    EXPECT_EQ(together[i].dim(), kTextEmbeddingDim);
    EXPECT_EQ(together[i].modality, Modality::kText);
  }
  const std::vector<TokenSequence> reversed(batch.rbegin(), batch.rend());
  EXPECT_EQ(enc->encode(reversed)[0], together.back());
}

TEST(ImageEncoder, FullWidthOutputAndBatchInvariance) {
  const auto& dirs = mftest::small_encoders();
  const auto enc = ImageEncoder::load(dirs.image.string(), true, 99);
  EXPECT_EQ(enc->backbone_dim(), kImageBackboneDim);
  EXPECT_EQ(enc->output_dim(), kImageEmbeddingDim);
  mftest::TempDir dir;
  const auto set = mftest::write_color_memes(dir.path(), 2, 4);
  PreprocessConfig config;
  config.image_size = 32;
  std::vector<ImageTensor> batch;
  for (const auto& id : set.ids) batch.push_back(prepare_image(set.images / (id + ".png"), config));
  const auto together = enc->encode(batch);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    EXPECT_EQ(together[i], enc->encode(batch[i]));
    EXPECT_EQ(together[i].dim(), kImageEmbeddingDim);
  }
}

TEST(ImageEncoder, ProjectionIsSeeded) {
  const auto& dirs = mftest::small_encoders();
  const auto a = ImageEncoder::load(dirs.image.string(), true, 5);
  const auto b = ImageEncoder::load(dirs.image.string(), true, 5);
  const auto c = ImageEncoder::load(dirs.image.string(), true, 6);
  EXPECT_EQ(a->projection().weight, b->projection().weight);
  EXPECT_NE(a->projection().weight, c->projection().weight);
  EXPECT_EQ(a->checksum(), b->checksum());
  EXPECT_NE(a->checksum(), c->checksum());
}

TEST(Encoders, LoadFailuresAreTyped) {
  EXPECT_EQ(kind_of([] { TextEncoder::load("/nonexistent/encoder", true); }), ErrorKind::kLoad);
  EXPECT_EQ(kind_of([] { ImageEncoder::load("/nonexistent/encoder", true, 0); }),
            ErrorKind::kLoad);
  // A 32-wide encoder cannot stand in where 768 is required.
  const auto tiny = (mftest::data_dir() / "tiny_bert").string();
  EXPECT_EQ(kind_of([&] { TextEncoder::load(tiny, true); }), ErrorKind::kConfig);
  const auto vgg = (mftest::data_dir() / "tiny_vgg").string();
  EXPECT_EQ(kind_of([&] { ImageEncoder::load(vgg, true, 0); }), ErrorKind::kConfig);
}

TEST(Encoders, FrozenEncodersRefuseTraining) {
  auto enc = TextEncoder::load((mftest::data_dir() / "tiny_bert").string(), true,
                               TextPooling::kCls, std::nullopt);
  Rng rng(0);
  auto tape = TextEncoder::new_tape();
  const auto seq = prepare_text(enc->tokenizer(), "troll", 8);
  EXPECT_EQ(kind_of([&] { enc->forward_train(seq, rng, *tape); }), ErrorKind::kInvalidArgument);
}

TEST(Encoders, ExportImportRoundTrip) {
  const auto dir = (mftest::data_dir() / "tiny_bert").string();
  auto a = TextEncoder::load(dir, false, TextPooling::kCls, std::nullopt);
  auto b = TextEncoder::load(dir, false, TextPooling::kCls, std::nullopt);
  for (auto& s : a->parameters()) s.value[0] += 0.25f;
  EXPECT_NE(a->checksum(), b->checksum());
  b->import_weights(a->export_weights(), "");
  EXPECT_EQ(a->checksum(), b->checksum());
  const auto seq = prepare_text(a->tokenizer(), "vera level", 16);
  EXPECT_EQ(a->encode(seq), b->encode(seq));
}
