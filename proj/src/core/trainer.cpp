#include "trainer.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "error.hpp"
#include "metrics.hpp"
#include "random.hpp"

namespace memefusion {

namespace fs = std::filesystem;

namespace {

double label_value(Label label) { return label == Label::kTroll ? 1.0 : 0.0; }

// log(1 + exp(x)) without overflow.
double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

// Logit at which sigmoid reaches 1 - eps; clamping the probability to
// [eps, 1 - eps] is clamping the logit to +-this.
const double kLogitClamp = std::log((1.0 - kBceEpsilon) / kBceEpsilon);

}  // namespace

double bce_loss(std::span<const double> probabilities, std::span<const Label> labels) {
  if (probabilities.size() != labels.size()) {
    throw Error(ErrorKind::kShape, "probabilities and labels differ in length");
  }
  if (probabilities.empty()) throw Error(ErrorKind::kInput, "loss of an empty batch");
  double sum = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double p = std::clamp(probabilities[i], kBceEpsilon, 1.0 - kBceEpsilon);
    sum -= labels[i] == Label::kTroll ? std::log(p) : std::log(1.0 - p);
  }
  return sum / static_cast<double>(labels.size());
}

double bce_with_logits(double logit, Label label, double pos_weight, double* d_logit) {
  const double z = std::clamp(logit, -kLogitClamp, kLogitClamp);
  const double y = label_value(label);
  const double loss = pos_weight * y * softplus(-z) + (1.0 - y) * softplus(z);
  if (d_logit) {
    if (std::abs(logit) > kLogitClamp) {
      *d_logit = 0.0;  // flat beyond the clamp
    } else {
      const double p = sigmoid(z);
      *d_logit = pos_weight * y * (p - 1.0) + (1.0 - y) * p;
    }
  }
  return loss;
}

template <typename T>
void Adam<T>::step(const std::vector<nn::ParamSlot<T>>& slots) {
  if (m_.empty()) {
    m_.resize(slots.size());
    v_.resize(slots.size());
    for (std::size_t i = 0; i < slots.size(); ++i) {
      m_[i].assign(slots[i].size, 0.0);
      v_[i].assign(slots[i].size, 0.0);
    }
  } else if (m_.size() != slots.size()) {
    throw Error(ErrorKind::kInvalidArgument, "optimizer parameter list changed between steps");
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < slots.size(); ++i) {
    const auto& s = slots[i];
    if (!s.grad) continue;
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < s.size; ++j) {
      const double g = s.grad[j];
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * g;
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * g * g;
      const double update = lr_ * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps_);
      s.value[j] = static_cast<T>(s.value[j] - update);
    }
  }
}

template class Adam<float>;
template class Adam<double>;

nlohmann::json to_json(const EpochRecord& r) {
  nlohmann::json j{{"epoch", r.epoch},
                   {"train_loss", r.train_loss},
                   {"train_accuracy", r.train_accuracy}};
  if (r.val_loss) j["val_loss"] = *r.val_loss;
  if (r.val_accuracy) j["val_accuracy"] = *r.val_accuracy;
  if (r.val_f1_weighted) j["val_f1_weighted"] = *r.val_f1_weighted;
  return j;
}

VecD predict_logits(const Classifier& model, const EmbeddingTable& table) {
  Classifier::Batch batch{table.text, table.image};
  if (table.size() == 0) return VecD();
  return model.forward(batch, false, nullptr, nullptr);
}

namespace {

std::vector<Label> require_labels(const std::vector<std::optional<Label>>& labels,
                                  const std::vector<std::string>& ids, const char* what) {
  std::vector<Label> out;
  std::vector<std::string> missing;
  out.reserve(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i]) {
      out.push_back(*labels[i]);
    } else {
      missing.push_back(ids[i]);
    }
  }
  if (!missing.empty()) {
    throw Error(ErrorKind::kValidation, std::string(what) + " records without a label: " +
                                            join_for_message(missing));
  }
  if (out.empty()) throw Error(ErrorKind::kValidation, std::string(what) + " split is empty");
  return out;
}

std::string epoch_label(const char* stream, int epoch) {
  return std::string(stream) + "/epoch=" + std::to_string(epoch);
}

struct Scores {
  double loss = 0.0;
  double accuracy = 0.0;
  double f1_weighted = 0.0;
};

Scores score(const VecD& logits, const std::vector<Label>& gold, const RunConfig& config) {
  Scores s;
  std::vector<Label> pred;
  pred.reserve(gold.size());
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const double z = logits(static_cast<Eigen::Index>(i));
    s.loss += bce_with_logits(z, gold[i], config.train.pos_weight);
    pred.push_back(predict_label(z, config.model.threshold));
  }
  s.loss /= static_cast<double>(gold.size());
  const ConfusionMatrix cm = confusion_matrix(gold, pred);
  s.accuracy = accuracy(cm);
  s.f1_weighted = weighted_prf(cm).f1;
  return s;
}

void check_finite(double loss, int epoch, std::size_t batch) {
  if (!std::isfinite(loss)) {
    throw Error(ErrorKind::kNumeric, "non-finite loss at epoch " + std::to_string(epoch) +
                                         ", batch " + std::to_string(batch));
  }
}

void apply_determinism(const RunConfig& config) {
  // Every kernel here is serial; strict mode also pins Eigen to one
  // thread in case it was built with a parallel backend.
  if (config.train.strict_determinism) Eigen::setNbThreads(1);
}

// Loss/gradient for one batch of logits. Gradients are scaled to the
// batch mean.
double batch_loss(const VecD& logits, std::span<const std::size_t> rows,
                  const std::vector<Label>& labels, double pos_weight, VecD& d_logits) {
  const auto n = static_cast<Eigen::Index>(rows.size());
  d_logits.resize(n);
  double sum = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    double g = 0.0;
    sum += bce_with_logits(logits(i), labels[rows[i]], pos_weight, &g);
    d_logits(i) = g / static_cast<double>(n);
  }
  return sum;
}

}  // namespace

TrainResult train_on_embeddings(const RunConfig& config, const EmbeddingTable& train,
                                const EmbeddingTable* val) {
  validate(config);
  apply_determinism(config);
  const auto labels = require_labels(train.labels, train.ids, "training");
  std::optional<std::vector<Label>> val_labels;
  if (val) val_labels = require_labels(val->labels, val->ids, "validation");

  const TrainConfig& tc = config.train;
  TrainResult result;
  result.model.config = config;
  result.model.fingerprint = config_fingerprint(config);
  Classifier& model = result.model.classifier;
  model = Classifier(config.model, tc.seed);
  Adam<double> adam(tc.learning_rate, tc.adam_beta1, tc.adam_beta2, tc.adam_epsilon);
  const auto params = model.parameters();

  const bool flip = config.preprocess.augment_flip && train.image_flipped.size() > 0;
  const std::size_t n = train.size();
  for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
    const auto order = Rng(derive_seed(tc.seed, epoch_label("shuffle", epoch))).permutation(n);
    Rng dropout(derive_seed(tc.seed, epoch_label("dropout", epoch)));
    Rng flips(derive_seed(tc.seed, epoch_label("flip", epoch)));
    double loss_sum = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < n; start += tc.batch_size, ++batch_index) {
      const std::span<const std::size_t> rows(order.data() + start,
                                              std::min<std::size_t>(tc.batch_size, n - start));
      std::vector<bool> flip_rows;
      if (flip) {
        for (std::size_t i = 0; i < rows.size(); ++i) flip_rows.push_back(flips.bernoulli(0.5));
      }
      const Classifier::Batch batch = train.gather(rows, flip ? &flip_rows : nullptr);
      Classifier::Cache cache;
      const VecD logits = model.forward(batch, true, &dropout, &cache);
      VecD d_logits;
      const double loss = batch_loss(logits, rows, labels, tc.pos_weight, d_logits);
      check_finite(loss, epoch, batch_index);
      loss_sum += loss;
      model.zero_grad();
      model.backward(cache, d_logits);
      adam.step(params);
    }
    EpochRecord record;
    record.epoch = epoch;
    record.train_loss = loss_sum / static_cast<double>(n);
    record.train_accuracy = score(predict_logits(model, train), labels, config).accuracy;
    if (val) {
      const Scores s = score(predict_logits(model, *val), *val_labels, config);
      record.val_loss = s.loss;
      record.val_accuracy = s.accuracy;
      record.val_f1_weighted = s.f1_weighted;
    }
    result.history.push_back(record);
  }
  return result;
}

namespace {

nn::RowF to_row_f(const MatD& m, Eigen::Index row) { return m.row(row).cast<float>(); }

MatD row_of(const Embedding& e) {
  return Eigen::Map<const nn::RowF>(e.values.data(), e.dim()).cast<double>();
}

safetensors::File export_encoder_slots(EncoderSet& encoders) {
  safetensors::File file;
  auto put = [&](const std::string& prefix, const std::vector<nn::ParamSlot<float>>& slots) {
    for (const auto& s : slots) {
      file.tensors[prefix + s.name] = safetensors::make_f32(
          {static_cast<std::int64_t>(s.size)}, std::span<const float>(s.value, s.size));
    }
  };
  if (encoders.text) put("text_encoder.", encoders.text->parameters());
  if (encoders.image) put("image_encoder.", encoders.image->parameters());
  return file;
}

// Fine-tuning: each record runs through its encoders in train mode and
// back, accumulating gradients for one optimizer step per batch.
TrainResult train_finetune(const RunConfig& config, const DatasetSplit& fit,
                           const std::optional<DatasetSplit>& val, EncoderSet& encoders) {
  const TrainConfig& tc = config.train;
  std::vector<std::optional<Label>> maybe;
  std::vector<std::string> ids;
  for (const auto& r : fit.records()) {
    maybe.push_back(r.label);
    ids.push_back(r.id);
  }
  const auto labels = require_labels(maybe, ids, "training");
  std::vector<TokenSequence> tokens;
  if (config.model.uses_text()) tokens = tokenize_split(fit, *encoders.text, config);

  TrainResult result;
  result.model.config = config;
  result.model.fingerprint = config_fingerprint(config);
  Classifier& model = result.model.classifier;
  model = Classifier(config.model, tc.seed);
  Adam<double> head_adam(tc.learning_rate, tc.adam_beta1, tc.adam_beta2, tc.adam_epsilon);
  const auto head_params = model.parameters();

  std::vector<nn::ParamSlot<float>> text_params, image_params;
  if (encoders.text) {
    encoders.text->zero_grad();
    text_params = encoders.text->parameters();
  }
  if (encoders.image) {
    encoders.image->zero_grad();
    image_params = encoders.image->parameters();
  }
  Adam<float> text_adam(tc.encoder_learning_rate, tc.adam_beta1, tc.adam_beta2, tc.adam_epsilon);
  Adam<float> image_adam(tc.encoder_learning_rate, tc.adam_beta1, tc.adam_beta2,
                         tc.adam_epsilon);

  const CacheOptions no_cache;  // weights move every step
  const std::size_t n = fit.size();
  for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
    const auto order = Rng(derive_seed(tc.seed, epoch_label("shuffle", epoch))).permutation(n);
    Rng dropout(derive_seed(tc.seed, epoch_label("dropout", epoch)));
    Rng flips(derive_seed(tc.seed, epoch_label("flip", epoch)));
    double loss_sum = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < n; start += tc.batch_size, ++batch_index) {
      const std::size_t count = std::min<std::size_t>(tc.batch_size, n - start);
      model.zero_grad();
      if (encoders.text) encoders.text->zero_grad();
      if (encoders.image) encoders.image->zero_grad();
      double batch_sum = 0.0;
      for (std::size_t k = 0; k < count; ++k) {
        const std::size_t row = order[start + k];
        Classifier::Batch input;
        auto text_tape = TextEncoder::new_tape();
        auto image_tape = ImageEncoder::new_tape();
        if (encoders.text) {
          input.text = row_of(encoders.text->forward_train(tokens[row], dropout, *text_tape));
        }
        if (encoders.image) {
          const bool flip = config.preprocess.augment_flip && flips.bernoulli(0.5);
          const ImageTensor t =
              prepare_image(fit.records()[row].image_path, config.preprocess, flip);
          input.image = row_of(encoders.image->forward_train(t, *image_tape));
        }
        Classifier::Cache cache;
        const VecD logits = model.forward(input, true, &dropout, &cache);
        double g = 0.0;
        batch_sum += bce_with_logits(logits(0), labels[row], tc.pos_weight, &g);
        VecD d_logit(1);
        d_logit(0) = g / static_cast<double>(count);
        const Classifier::Batch d_input = model.backward(cache, d_logit);
        if (encoders.text) {
          const nn::RowF d = to_row_f(d_input.text, 0);
          encoders.text->backward(*text_tape, std::span<const float>(d.data(), d.size()));
        }
        if (encoders.image) {
          const nn::RowF d = to_row_f(d_input.image, 0);
          encoders.image->backward(*image_tape, std::span<const float>(d.data(), d.size()));
        }
      }
      check_finite(batch_sum, epoch, batch_index);
      loss_sum += batch_sum;
      head_adam.step(head_params);
      if (encoders.text) text_adam.step(text_params);
      if (encoders.image) image_adam.step(image_params);
    }
    encoders.refresh_identities();
    EpochRecord record;
    record.epoch = epoch;
    record.train_loss = loss_sum / static_cast<double>(n);
    const EmbeddingTable train_table = embed_split(fit, encoders, config, no_cache);
    record.train_accuracy = score(predict_logits(model, train_table), labels, config).accuracy;
    if (val) {
      const EmbeddingTable vt = embed_split(*val, encoders, config, no_cache);
      const auto vl = require_labels(vt.labels, vt.ids, "validation");
      const Scores s = score(predict_logits(model, vt), vl, config);
      record.val_loss = s.loss;
      record.val_accuracy = s.accuracy;
      record.val_f1_weighted = s.f1_weighted;
    }
    result.history.push_back(record);
  }
  result.model.encoder_tensors = export_encoder_slots(encoders);
  return result;
}

}  // namespace

TrainResult train(const DatasetSplit& train_split, const RunConfig& config,
                  EncoderSet& encoders, const CacheOptions& cache,
                  const DatasetSplit* val_split) {
  validate(config);
  apply_determinism(config);
  if (config.model.uses_text() && !encoders.text) {
    throw Error(ErrorKind::kInvalidArgument, "model needs a text encoder");
  }
  if (config.model.uses_image() && !encoders.image) {
    throw Error(ErrorKind::kInvalidArgument, "model needs an image encoder");
  }
  DatasetSplit fit = train_split;
  std::optional<DatasetSplit> val;
  if (config.train.val_fraction > 0.0) {
    auto [rest, held] = stratified_holdout(train_split, config.train.val_fraction,
                                           config.train.seed);
    fit = std::move(rest);
    val = std::move(held);
  } else if (val_split) {
    val = *val_split;
  }
  if (config.encoders.finetune) {
    if ((encoders.text && encoders.text->frozen()) ||
        (encoders.image && encoders.image->frozen())) {
      throw Error(ErrorKind::kInvalidArgument, "fine-tuning needs unfrozen encoders");
    }
    return train_finetune(config, fit, val, encoders);
  }
  const EmbeddingTable table =
      embed_split(fit, encoders, config, cache, config.preprocess.augment_flip);
  if (val) {
    const EmbeddingTable val_table = embed_split(*val, encoders, config, cache);
    return train_on_embeddings(config, table, &val_table);
  }
  return train_on_embeddings(config, table, nullptr);
}

// ---------------------------------------------------------------------------

namespace {

constexpr const char* kCheckpointFormat = "memefusion-checkpoint";
constexpr int kCheckpointVersion = 1;

std::string file_sha256(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot read " + path.string());
  Sha256 h;
  std::vector<char> buffer(1 << 16);
  while (in) {
    in.read(buffer.data(), static_cast<std::streamsize>(buffer.size()));
    h.update(buffer.data(), static_cast<std::size_t>(in.gcount()));
  }
  return h.hex_digest();
}

fs::path with_suffix(const fs::path& stem, const char* suffix) {
  return fs::path(stem.string() + suffix);
}

nlohmann::json spec_json(const ModelSpec& spec) {
  return {{"kind", to_string(spec.kind)},
          {"text_hidden_sizes", spec.text_hidden},
          {"image_hidden_sizes", spec.image_hidden},
          {"image_dropout", spec.image_dropout},
          {"fusion_hidden_sizes", spec.fusion_hidden},
          {"fusion_taps", to_string(spec.fusion_taps)},
          {"threshold", spec.threshold},
          {"activation", "relu"},
          {"output", "logit"},
          {"positive_class", "troll"}};
}

}  // namespace

void save_checkpoint(const TrainedModel& model, const fs::path& stem) {
  safetensors::File blob = model.classifier.export_parameters();
  for (const auto& [name, tensor] : model.encoder_tensors.tensors) blob.tensors[name] = tensor;
  blob.metadata["fingerprint"] = model.fingerprint;
  const fs::path tensors_path = with_suffix(stem, ".safetensors");
  safetensors::write(tensors_path, blob);

  nlohmann::json j{{"format", kCheckpointFormat},
                   {"version", kCheckpointVersion},
                   {"model", spec_json(model.classifier.spec())},
                   {"fingerprint", model.fingerprint},
                   {"config", to_json(model.config)},
                   {"finetuned_encoders", model.finetuned()},
                   {"tensors", tensors_path.filename().string()},
                   {"tensors_sha256", file_sha256(tensors_path)}};
  std::ofstream out(with_suffix(stem, ".json"), std::ios::trunc);
  out << j.dump(2) << '\n';
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + with_suffix(stem, ".json").string());
}

TrainedModel load_checkpoint(const fs::path& stem, const RunConfig* expected) {
  const fs::path json_path = with_suffix(stem, ".json");
  std::ifstream in(json_path);
  if (!in) throw Error(ErrorKind::kIo, "cannot open checkpoint " + json_path.string());
  nlohmann::json j;
  TrainedModel model;
  std::string tensors_name, tensors_sha;
  try {
    j = nlohmann::json::parse(in);
    if (j.at("format").get<std::string>() != kCheckpointFormat ||
        j.at("version").get<int>() != kCheckpointVersion) {
      throw Error(ErrorKind::kFormat, json_path.string() + ": not a version " +
                                          std::to_string(kCheckpointVersion) + " checkpoint");
    }
    model.fingerprint = j.at("fingerprint").get<std::string>();
    model.config = apply_json(RunConfig{}, j.at("config"));
    tensors_name = j.at("tensors").get<std::string>();
    tensors_sha = j.at("tensors_sha256").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kFormat, json_path.string() + ": malformed checkpoint: " + e.what());
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::kFormat) throw;
    throw Error(ErrorKind::kFormat, json_path.string() + ": " + e.what());
  }
  if (config_fingerprint(model.config) != model.fingerprint) {
    throw Error(ErrorKind::kFormat,
                json_path.string() + ": stored fingerprint does not match stored config");
  }
  if (expected) {
    const std::string want = config_fingerprint(*expected);
    if (want != model.fingerprint) {
      throw Error(ErrorKind::kFingerprint,
                  "checkpoint " + json_path.string() + " was trained under fingerprint " +
                      model.fingerprint.substr(0, 12) + " but the current config has " +
                      want.substr(0, 12) +
                      " (encoder ids, preprocessing or projection seed differ)");
    }
  }
  const fs::path tensors_path = stem.parent_path() / tensors_name;
  if (!fs::exists(tensors_path)) {
    throw Error(ErrorKind::kFormat, "checkpoint tensors missing: " + tensors_path.string());
  }
  if (file_sha256(tensors_path) != tensors_sha) {
    throw Error(ErrorKind::kFormat,
                "checkpoint tensors corrupt or truncated: " + tensors_path.string());
  }
  const safetensors::File blob = safetensors::read(tensors_path);
  model.classifier = Classifier(model.config.model, model.config.train.seed);
  model.classifier.import_parameters(blob);
  for (const auto& [name, tensor] : blob.tensors) {
    if (name.rfind("text_encoder.", 0) == 0 || name.rfind("image_encoder.", 0) == 0) {
      model.encoder_tensors.tensors[name] = tensor;
    }
  }
  return model;
}

void restore_encoders(const TrainedModel& model, EncoderSet& encoders) {
  if (!model.finetuned()) return;
  if (encoders.text) encoders.text->import_weights(model.encoder_tensors, "text_encoder.");
  if (encoders.image) encoders.image->import_weights(model.encoder_tensors, "image_encoder.");
  encoders.refresh_identities();
}

void write_run_directory(const fs::path& dir, const TrainResult& result) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::kIo, "cannot create run directory " + dir.string());
  auto write_text = [&](const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc | std::ios::binary);
    out << text;
    if (!out) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  };
  write_text(dir / "config.json", to_json(result.model.config).dump(2) + "\n");
  std::ostringstream history;
  for (const auto& record : result.history) history << to_json(record).dump() << '\n';
  write_text(dir / "history.jsonl", history.str());
  write_text(dir / "seed.txt", std::to_string(result.model.config.train.seed) + "\n");
  save_checkpoint(result.model, dir / "checkpoint");
}

RunConfig read_run_config(const fs::path& dir) {
  try {
    return load_config_file(dir / "config.json");
  } catch (const Error& e) {
    throw Error(ErrorKind::kFormat, "run directory " + dir.string() + ": " + e.what());
  }
}

TrainedModel load_run_directory(const fs::path& dir, const RunConfig* expected) {
  if (!fs::is_directory(dir)) {
    throw Error(ErrorKind::kIo, "run directory not found: " + dir.string());
  }
  return load_checkpoint(dir / "checkpoint", expected);
}

}  // namespace memefusion
