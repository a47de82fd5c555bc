#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "config.hpp"
#include "dataset.hpp"
#include "features.hpp"
#include "models.hpp"
#include "nn.hpp"
#include "safetensors.hpp"

namespace memefusion {

inline constexpr double kBceEpsilon = 1e-7;

// Mean binary cross-entropy over probabilities clamped to [eps, 1 - eps].
double bce_loss(std::span<const double> probabilities, std::span<const Label> labels);

// Per-sample BCE computed from the logit (the clamp applied to the
// probability maps to a clamp on the logit). `pos_weight` scales the troll
// term. Writes dL/dlogit when `d_logit` is given.
double bce_with_logits(double logit, Label label, double pos_weight = 1.0,
                       double* d_logit = nullptr);

// Adam over a fixed list of parameter slots. Moments are keyed by slot
// position, so the same list (same order) must be passed every step.
template <typename T>
class Adam {
 public:
  Adam(double learning_rate, double beta1, double beta2, double epsilon)
      : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(epsilon) {}

  void step(const std::vector<nn::ParamSlot<T>>& slots);
  long steps() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;  // eval-mode pass after the epoch's updates
  std::optional<double> val_loss;
  std::optional<double> val_accuracy;
  std::optional<double> val_f1_weighted;
};

using TrainHistory = std::vector<EpochRecord>;

nlohmann::json to_json(const EpochRecord& record);

// A trained classifier plus everything needed to reproduce its inputs.
struct TrainedModel {
  RunConfig config;
  Classifier classifier;
  std::string fingerprint;
  // Encoder parameters after fine-tuning, prefixed "text_encoder." /
  // "image_encoder."; empty for frozen runs.
  safetensors::File encoder_tensors;

  bool finetuned() const { return !encoder_tensors.tensors.empty(); }
};

struct TrainResult {
  TrainedModel model;
  TrainHistory history;
};

// Fits a head on precomputed (frozen) embeddings. `val` may be null.
TrainResult train_on_embeddings(const RunConfig& config, const EmbeddingTable& train,
                                const EmbeddingTable* val = nullptr);

// Full pipeline: embeds or fine-tunes through `encoders` as the config
// asks. A nonzero val_fraction carves a stratified validation holdout out
// of `train_split`; otherwise `val_split` (may be null) is used.
TrainResult train(const DatasetSplit& train_split, const RunConfig& config,
                  EncoderSet& encoders, const CacheOptions& cache,
                  const DatasetSplit* val_split = nullptr);

// Logits for every row of a table in eval mode.
VecD predict_logits(const Classifier& model, const EmbeddingTable& table);

// ---------------------------------------------------------------------------
// Checkpoints: `<stem>.json` (spec, fingerprint, config) next to
// `<stem>.safetensors` (parameters).

void save_checkpoint(const TrainedModel& model, const std::filesystem::path& stem);

// Refuses (kFingerprint) when `expected` is given and its fingerprint
// differs from the stored one. Corrupt or truncated files raise kFormat.
TrainedModel load_checkpoint(const std::filesystem::path& stem,
                             const RunConfig* expected = nullptr);

// Applies fine-tuned encoder tensors from a checkpoint, if any.
void restore_encoders(const TrainedModel& model, EncoderSet& encoders);

// Run directory: config.json, history.jsonl, checkpoint.{json,safetensors},
// seed.txt.
void write_run_directory(const std::filesystem::path& dir, const TrainResult& result);
TrainedModel load_run_directory(const std::filesystem::path& dir,
                                const RunConfig* expected = nullptr);
RunConfig read_run_config(const std::filesystem::path& dir);

}  // namespace memefusion
