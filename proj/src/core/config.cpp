#include "config.hpp"

#include <cmath>
#include <fstream>

#include "error.hpp"
#include "random.hpp"

namespace memefusion {

void validate(const TrainConfig& config) {
  if (config.epochs < 1) throw Error(ErrorKind::kValidation, "epochs must be >= 1");
  if (config.batch_size < 1) throw Error(ErrorKind::kValidation, "batch_size must be >= 1");
  auto positive = [](double v, const char* name) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw Error(ErrorKind::kValidation, std::string(name) + " must be a positive number");
    }
  };
  positive(config.learning_rate, "learning_rate");
  positive(config.encoder_learning_rate, "encoder_learning_rate");
  positive(config.adam_epsilon, "adam_epsilon");
  positive(config.pos_weight, "pos_weight");
  for (double beta : {config.adam_beta1, config.adam_beta2}) {
    if (!(beta >= 0.0 && beta < 1.0)) {
      throw Error(ErrorKind::kValidation, "adam betas must lie in [0, 1)");
    }
  }
  if (!(config.val_fraction >= 0.0 && config.val_fraction < 1.0)) {
    throw Error(ErrorKind::kValidation, "val_fraction must lie in [0, 1)");
  }
}

std::uint64_t RunConfig::projection_seed() const {
  return encoders.projection_seed.value_or(derive_seed(train.seed, "projection"));
}

bool RunConfig::operator==(const RunConfig& other) const {
  auto a = encoders, b = other.encoders;
  a.projection_seed = projection_seed();
  b.projection_seed = other.projection_seed();
  return preprocess == other.preprocess && a == b && train == other.train &&
         model == other.model;
}

void validate(const RunConfig& config) {
  validate(config.preprocess);
  validate(config.train);
  validate(config.model);
  if (config.encoders.text_encoder.empty() || config.encoders.image_encoder.empty()) {
    throw Error(ErrorKind::kValidation, "encoder weights ids must not be empty");
  }
}

nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json j;
  j["model"] = to_string(c.model.kind);
  j["image_size"] = c.preprocess.image_size;
  j["text_max_len"] = c.preprocess.text_max_len;
  j["normalization_mean"] = c.preprocess.normalization_mean;
  j["normalization_std"] = c.preprocess.normalization_std;
  j["augment_flip"] = c.preprocess.augment_flip;
  j["text_encoder"] = c.encoders.text_encoder;
  j["image_encoder"] = c.encoders.image_encoder;
  j["projection_seed"] = c.projection_seed();
  j["text_pooling"] = to_string(c.encoders.text_pooling);
  j["finetune"] = c.encoders.finetune;
  j["epochs"] = c.train.epochs;
  j["batch_size"] = c.train.batch_size;
  j["learning_rate"] = c.train.learning_rate;
  j["encoder_learning_rate"] = c.train.encoder_learning_rate;
  j["seed"] = c.train.seed;
  j["adam_beta1"] = c.train.adam_beta1;
  j["adam_beta2"] = c.train.adam_beta2;
  j["adam_epsilon"] = c.train.adam_epsilon;
  j["pos_weight"] = c.train.pos_weight;
  j["strict_determinism"] = c.train.strict_determinism;
  j["val_fraction"] = c.train.val_fraction;
  j["threshold"] = c.model.threshold;
  j["text_hidden_sizes"] = c.model.text_hidden;
  j["image_hidden_sizes"] = c.model.image_hidden;
  j["image_dropout"] = c.model.image_dropout;
  j["fusion_hidden_sizes"] = c.model.fusion_hidden;
  j["fusion_taps"] = to_string(c.model.fusion_taps);
  return j;
}

RunConfig apply_json(const RunConfig& base, const nlohmann::json& overrides) {
  if (!overrides.is_object()) {
    throw Error(ErrorKind::kValidation, "config must be a JSON object");
  }
  RunConfig c = base;
  std::vector<std::string> unknown;
  for (const auto& [key, value] : overrides.items()) {
    try {
      if (key == "model") c.model.kind = parse_model_kind(value.get<std::string>());
      else if (key == "image_size") c.preprocess.image_size = value.get<int>();
      else if (key == "text_max_len") c.preprocess.text_max_len = value.get<int>();
      else if (key == "normalization_mean") c.preprocess.normalization_mean = value.get<std::array<double, 3>>();
      else if (key == "normalization_std") c.preprocess.normalization_std = value.get<std::array<double, 3>>();
      else if (key == "augment_flip") c.preprocess.augment_flip = value.get<bool>();
      else if (key == "text_encoder") c.encoders.text_encoder = value.get<std::string>();
      else if (key == "image_encoder") c.encoders.image_encoder = value.get<std::string>();
      else if (key == "projection_seed") {
        if (value.is_null()) c.encoders.projection_seed.reset();
        else c.encoders.projection_seed = value.get<std::uint64_t>();
      }
      else if (key == "text_pooling") c.encoders.text_pooling = parse_text_pooling(value.get<std::string>());
      else if (key == "finetune") c.encoders.finetune = value.get<bool>();
      else if (key == "epochs") c.train.epochs = value.get<int>();
      else if (key == "batch_size") c.train.batch_size = value.get<int>();
      else if (key == "learning_rate") c.train.learning_rate = value.get<double>();
      else if (key == "encoder_learning_rate") c.train.encoder_learning_rate = value.get<double>();
      else if (key == "seed") c.train.seed = value.get<std::uint64_t>();
      else if (key == "adam_beta1") c.train.adam_beta1 = value.get<double>();
      else if (key == "adam_beta2") c.train.adam_beta2 = value.get<double>();
      else if (key == "adam_epsilon") c.train.adam_epsilon = value.get<double>();
      else if (key == "pos_weight") c.train.pos_weight = value.get<double>();
      else if (key == "strict_determinism") c.train.strict_determinism = value.get<bool>();
      else if (key == "val_fraction") c.train.val_fraction = value.get<double>();
      else if (key == "threshold") c.model.threshold = value.get<double>();
      else if (key == "text_hidden_sizes") c.model.text_hidden = value.get<std::vector<int>>();
      else if (key == "image_hidden_sizes") c.model.image_hidden = value.get<std::vector<int>>();
      else if (key == "image_dropout") c.model.image_dropout = value.get<std::vector<double>>();
      else if (key == "fusion_hidden_sizes") c.model.fusion_hidden = value.get<std::vector<int>>();
      else if (key == "fusion_taps") c.model.fusion_taps = parse_fusion_taps(value.get<std::string>());
      else unknown.push_back(key);
    } catch (const nlohmann::json::exception&) {
      throw Error(ErrorKind::kValidation, "config key '" + key + "' has the wrong type");
    } catch (const Error& e) {
      throw Error(ErrorKind::kValidation, "config key '" + key + "': " + e.what());
    }
  }
  if (!unknown.empty()) {
    throw Error(ErrorKind::kValidation, "unknown config keys: " + join_for_message(unknown));
  }
  validate(c);
  return c;
}

RunConfig load_config_file(const std::filesystem::path& path, const RunConfig& base) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kValidation, "cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kValidation, path.string() + ": invalid JSON: " + e.what());
  }
  return apply_json(base, j);
}

std::string config_fingerprint(const RunConfig& c) {
  // Only settings that shape the embeddings a model of this kind consumes.
  nlohmann::json j{{"model", to_string(c.model.kind)}};
  if (c.model.uses_text()) {
    j["text_max_len"] = c.preprocess.text_max_len;
    j["text_encoder"] = c.encoders.text_encoder;
    j["text_pooling"] = to_string(c.encoders.text_pooling);
  }
  if (c.model.uses_image()) {
    j["image_size"] = c.preprocess.image_size;
    j["normalization_mean"] = c.preprocess.normalization_mean;
    j["normalization_std"] = c.preprocess.normalization_std;
    j["image_encoder"] = c.encoders.image_encoder;
    j["projection_seed"] = c.projection_seed();
  }
  // nlohmann objects iterate in key order, so dump() is canonical.
  return sha256_hex(j.dump());
}

std::string text_preprocess_hash(const RunConfig& c) {
  nlohmann::json j{{"text_max_len", c.preprocess.text_max_len},
                   {"text_pooling", to_string(c.encoders.text_pooling)},
                   {"normalization", "nfc+whitespace"}};
  return sha256_hex(j.dump());
}

std::string image_preprocess_hash(const RunConfig& c) {
  nlohmann::json j{{"image_size", c.preprocess.image_size},
                   {"normalization_mean", c.preprocess.normalization_mean},
                   {"normalization_std", c.preprocess.normalization_std},
                   {"projection_seed", c.projection_seed()},
                   {"resize", "bilinear"}};
  return sha256_hex(j.dump());
}

}  // namespace memefusion
