#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <limits>

#include "error.hpp"
#include "fixtures.hpp"
#include "trainer.hpp"

using namespace memefusion;
using mftest::TempDir;

namespace {

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected an Error";
  return ErrorKind::kIo;
}

// Linearly separable embeddings: the label flips the sign of a shared offset.
EmbeddingTable separable_table(const ModelSpec& spec, int rows, std::uint64_t seed) {
  const auto batch = mftest::random_batch(spec, rows, seed);
  EmbeddingTable t;
  const auto labels = mftest::alternating_labels(rows);
  t.text = batch.text;
  t.image = batch.image;
  for (int i = 0; i < rows; ++i) {
    t.ids.push_back("r" + std::to_string(i));
    t.labels.push_back(labels[i]);
    const double shift = labels[i] == Label::kTroll ? 0.6 : -0.6;
    if (t.text.size()) t.text.row(i).array() += shift;
    if (t.image.size()) t.image.row(i).array() += shift;
  }
  return t;
}

RunConfig head_config(ModelKind kind, int epochs = 6) {
  RunConfig c;
  c.model.kind = kind;
  c.train.epochs = epochs;
  c.train.batch_size = 8;
  c.train.seed = 11;
  return c;
}

std::string history_text(const TrainHistory& h) {
  std::string out;
  for (const auto& r : h) out += to_json(r).dump() + "\n";
  return out;
}

}  // namespace

TEST(Bce, ReferenceValues) {
  const auto golden = mftest::read_json(mftest::data_dir() / "scalar_golden.json");
  const std::vector<double> half{0.5};
  const std::vector<Label> troll{Label::kTroll};
  EXPECT_NEAR(bce_loss(half, troll), golden.at("bce_half_troll").get<double>(), 1e-15);
  const std::vector<double> p{0.9, 0.2};
  const std::vector<Label> y{Label::kTroll, Label::kNotTroll};
  EXPECT_NEAR(bce_loss(p, y), golden.at("bce_09_02").get<double>(), 1e-15);
}

TEST(Bce, ClampsAtEpsilon) {
  const std::vector<Label> troll{Label::kTroll};
  const std::vector<Label> not_troll{Label::kNotTroll};
  const double cap = -std::log(kBceEpsilon);
  EXPECT_NEAR(bce_loss(std::vector<double>{0.0}, troll), cap, 1e-9);
  EXPECT_NEAR(bce_loss(std::vector<double>{1.0}, not_troll), cap, 1e-9);
  EXPECT_TRUE(std::isfinite(bce_with_logits(-1e6, Label::kTroll)));
  EXPECT_NEAR(bce_with_logits(-1e6, Label::kTroll), cap, 1e-6);
  double d = 1.0;
  bce_with_logits(-1e6, Label::kTroll, 1.0, &d);
  EXPECT_EQ(d, 0.0);
}

TEST(Bce, LengthMismatchIsAShapeError) {
  const std::vector<double> p{0.3, 0.4};
  const std::vector<Label> y{Label::kTroll};
  EXPECT_EQ(kind_of([&] { bce_loss(p, y); }), ErrorKind::kShape);
  EXPECT_EQ(kind_of([] { bce_loss({}, {}); }), ErrorKind::kInput);
}

TEST(Bce, LogitFormAgreesWithProbabilityForm) {
  for (double z : {-6.0, -0.3, 0.0, 0.4, 5.0}) {
    for (Label y : {Label::kTroll, Label::kNotTroll}) {
      const std::vector<double> p{sigmoid(z)};
      const std::vector<Label> l{y};
      double d = 0.0;
      EXPECT_NEAR(bce_with_logits(z, y, 1.0, &d), bce_loss(p, l), 1e-12);
      EXPECT_NEAR(d, sigmoid(z) - (y == Label::kTroll ? 1.0 : 0.0), 1e-12);
    }
  }
  EXPECT_NEAR(bce_with_logits(0.2, Label::kTroll, 3.0), 3.0 * bce_with_logits(0.2, Label::kTroll),
              1e-12);
}

TEST(Adam, MatchesReferenceTrajectory) {
  const auto g = mftest::read_json(mftest::data_dir() / "adam_golden.json");
  auto w = g.at("start").get<std::vector<double>>();
  const auto target = g.at("target").get<std::vector<double>>();
  const auto scale = g.at("scale").get<std::vector<double>>();
  std::vector<double> grad(w.size());
  Adam<double> adam(g.at("lr").get<double>(), 0.9, 0.999, 1e-8);
  const std::vector<nn::ParamSlot<double>> slots{{"w", w.data(), grad.data(), w.size()}};
  for (const auto& expected : g.at("trajectory")) {
    for (std::size_t i = 0; i < w.size(); ++i) grad[i] = 2.0 * scale[i] * (w[i] - target[i]);
    adam.step(slots);
    const auto want = expected.get<std::vector<double>>();
    for (std::size_t i = 0; i < w.size(); ++i) ASSERT_NEAR(w[i], want[i], 1e-12);
  }
  EXPECT_EQ(adam.steps(), 25);
}

TEST(Training, HistoryHasOneRecordPerEpochWithoutEarlyStopping) {
  for (auto kind : {ModelKind::kTextOnly, ModelKind::kImageOnly, ModelKind::kFusion}) {
    const auto config = head_config(kind, 9);
    const auto train = separable_table(config.model, 40, 1);
    const auto val = separable_table(config.model, 12, 2);
    const auto result = train_on_embeddings(config, train, &val);
    ASSERT_EQ(result.history.size(), 9u);
    for (int e = 0; e < 9; ++e) {
      EXPECT_EQ(result.history[e].epoch, e + 1);
      EXPECT_TRUE(result.history[e].val_loss.has_value());
    }
    EXPECT_LT(result.history.back().train_loss, result.history.front().train_loss);
    EXPECT_EQ(result.history.back().train_accuracy, 1.0);
  }
}

TEST(Training, SameSeedSameBytesOtherSeedDiffers) {
  auto config = head_config(ModelKind::kImageOnly);
  config.preprocess.augment_flip = false;
  const auto train = separable_table(config.model, 37, 3);
  const auto a = train_on_embeddings(config, train);
  const auto b = train_on_embeddings(config, train);
  EXPECT_EQ(history_text(a.history), history_text(b.history));
  EXPECT_EQ(predict_logits(a.model.classifier, train), predict_logits(b.model.classifier, train));
  config.train.seed = 12;
  const auto c = train_on_embeddings(config, train);
  EXPECT_NE(history_text(a.history), history_text(c.history));
}

TEST(Training, RejectsUnlabeledAndNonFiniteInputs) {
  const auto config = head_config(ModelKind::kTextOnly, 2);
  auto train = separable_table(config.model, 8, 1);
  auto unlabeled = train;
  unlabeled.labels[3].reset();
  EXPECT_EQ(kind_of([&] { train_on_embeddings(config, unlabeled); }), ErrorKind::kValidation);
  train.text(2, 5) = std::numeric_limits<double>::quiet_NaN();
  try {
    train_on_embeddings(config, train);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kNumeric);
    EXPECT_NE(std::string(e.what()).find("epoch 1"), std::string::npos);
  }
}

TEST(Checkpoint, RoundTripIsExact) {
  TempDir dir;
  for (auto taps : {FusionTaps::kEncoder, FusionTaps::kHidden}) {
    auto config = head_config(ModelKind::kFusion, 2);
    config.model.fusion_taps = taps;
    const auto train = separable_table(config.model, 16, 4);
    const auto result = train_on_embeddings(config, train);
    save_checkpoint(result.model, dir / "ckpt");
    const auto loaded = load_checkpoint(dir / "ckpt", &config);
    EXPECT_EQ(loaded.config, config) << to_json(loaded.config).dump() << "\n" << to_json(config).dump();
    EXPECT_EQ(loaded.fingerprint, result.model.fingerprint);
    const VecD before = predict_logits(result.model.classifier, train);
    const VecD after = predict_logits(loaded.classifier, train);
    EXPECT_EQ((before - after).cwiseAbs().maxCoeff(), 0.0);
  }
}

TEST(Checkpoint, RefusesAFingerprintMismatch) {
  TempDir dir;
  auto config = head_config(ModelKind::kFusion, 1);
  const auto result = train_on_embeddings(config, separable_table(config.model, 8, 4));
  save_checkpoint(result.model, dir / "ckpt");
  auto other = config;
  other.preprocess.image_size = 96;
  EXPECT_EQ(kind_of([&] { load_checkpoint(dir / "ckpt", &other); }), ErrorKind::kFingerprint);
  other = config;
  other.encoders.text_encoder = "some/other-model";
  EXPECT_EQ(kind_of([&] { load_checkpoint(dir / "ckpt", &other); }), ErrorKind::kFingerprint);
  other = config;
  other.train.epochs = 40;  // training settings do not bind the checkpoint
  EXPECT_NO_THROW(load_checkpoint(dir / "ckpt", &other));
}

TEST(Checkpoint, TruncatedOrEditedFilesAreFormatErrors) {
  TempDir dir;
  auto config = head_config(ModelKind::kTextOnly, 1);
  const auto result = train_on_embeddings(config, separable_table(config.model, 8, 4));
  save_checkpoint(result.model, dir / "ckpt");
  const auto blob = dir / "ckpt.safetensors";
  const auto json = dir / "ckpt.json";
  const std::string blob_bytes = mftest::read_text(blob);
  const std::string json_text = mftest::read_text(json);

  mftest::write_text(blob, blob_bytes.substr(0, blob_bytes.size() - 100));
  EXPECT_EQ(kind_of([&] { load_checkpoint(dir / "ckpt"); }), ErrorKind::kFormat);
  mftest::write_text(blob, blob_bytes.substr(0, 5));
  EXPECT_EQ(kind_of([&] { load_checkpoint(dir / "ckpt"); }), ErrorKind::kFormat);

  std::string flipped = blob_bytes;
  flipped[flipped.size() - 3] ^= 0x10;
  mftest::write_text(blob, flipped);
  EXPECT_EQ(kind_of([&] { load_checkpoint(dir / "ckpt"); }), ErrorKind::kFormat);

  mftest::write_text(blob, blob_bytes);
  mftest::write_text(json, json_text.substr(0, json_text.size() / 2));
  EXPECT_EQ(kind_of([&] { load_checkpoint(dir / "ckpt"); }), ErrorKind::kFormat);

  std::filesystem::remove(json);
  EXPECT_ANY_THROW(load_checkpoint(dir / "ckpt"));
}

TEST(RunDirectory, WritesAllArtifacts) {
  TempDir dir;
  auto config = head_config(ModelKind::kImageOnly, 3);
  config.train.seed = 77;
  const auto result = train_on_embeddings(config, separable_table(config.model, 8, 4));
  write_run_directory(dir / "run", result);
  for (const char* f : {"config.json", "history.jsonl", "checkpoint.json",
                        "checkpoint.safetensors", "seed.txt"}) {
    EXPECT_TRUE(std::filesystem::exists(dir / "run" / f)) << f;
  }
  EXPECT_EQ(mftest::read_text(dir / "run" / "seed.txt"), "77\n");
  EXPECT_EQ(mftest::read_text(dir / "run" / "history.jsonl"), history_text(result.history));
  EXPECT_EQ(read_run_config(dir / "run"), config);
  const auto loaded = load_run_directory(dir / "run", &config);
  EXPECT_EQ(loaded.fingerprint, result.model.fingerprint);
}

TEST(Pipeline, CachedAndFreshEmbeddingsTrainIdentically) {
  TempDir dir;
  const auto set = mftest::write_color_memes(dir.path(), 4, 2);
  const auto split = load_manifest(set.manifest, set.images, SplitRole::kTrain);
  auto config = mftest::small_config(ModelKind::kFusion);
  auto encoders = load_encoders(config);
  const CacheOptions cache{true, dir / "cache"};
  const auto fresh = train(split, config, encoders, CacheOptions{});
  const auto cold = train(split, config, encoders, cache);
  const auto warm = train(split, config, encoders, cache);
  EXPECT_EQ(history_text(fresh.history), history_text(cold.history));
  EXPECT_EQ(history_text(fresh.history), history_text(warm.history));
}

TEST(Pipeline, ValidationHoldoutIsReported) {
  TempDir dir;
  const auto set = mftest::write_color_memes(dir.path(), 5, 2);
  const auto split = load_manifest(set.manifest, set.images, SplitRole::kTrain);
  auto config = mftest::small_config(ModelKind::kTextOnly);
  config.train.val_fraction = 0.2;
  auto encoders = load_encoders(config);
  const auto result = train(split, config, encoders, CacheOptions{});
  ASSERT_EQ(result.history.size(), 5u);
  EXPECT_TRUE(result.history[0].val_accuracy.has_value());
}

TEST(Pipeline, FinetuningUpdatesEncoderWeights) {
  TempDir dir;
  const auto set = mftest::write_color_memes(dir.path(), 2, 2);
  const auto split = load_manifest(set.manifest, set.images, SplitRole::kTrain);
  auto config = mftest::small_config(ModelKind::kFusion);
  config.train.epochs = 1;
  config.encoders.finetune = true;
  config.train.encoder_learning_rate = 1e-3;
  auto encoders = load_encoders(config);
  const auto text_before = encoders.text->checksum();
  const auto image_before = encoders.image->checksum();
  const auto result = train(split, config, encoders, CacheOptions{});
  EXPECT_TRUE(result.model.finetuned());
  EXPECT_NE(encoders.text->checksum(), text_before);
  EXPECT_NE(encoders.image->checksum(), image_before);

  // A fresh encoder set restored from the checkpoint reproduces the logits.
  save_checkpoint(result.model, dir / "ft");
  const auto loaded = load_checkpoint(dir / "ft", &config);
  auto restored = load_encoders(config);
  restore_encoders(loaded, restored);
  EXPECT_EQ(restored.text->checksum(), encoders.text->checksum());
  EXPECT_EQ(restored.image->checksum(), encoders.image->checksum());
}
