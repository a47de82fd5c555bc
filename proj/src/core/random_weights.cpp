#include <cctype>
#include <cmath>
#include <fstream>

#include "encoders.hpp"
#include "error.hpp"
#include "json.hpp"

namespace memefusion {

namespace {

void put_random(safetensors::File& file, const std::string& name,
                std::vector<std::int64_t> shape, Rng& rng, double stddev) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  std::vector<float> values(static_cast<std::size_t>(n));
  for (auto& v : values) v = static_cast<float>(stddev * rng.normal());
  file.tensors[name] = safetensors::make_f32(std::move(shape), values);
}

void put_constant(safetensors::File& file, const std::string& name,
                  std::int64_t n, float value) {
  std::vector<float> values(static_cast<std::size_t>(n), value);
  file.tensors[name] = safetensors::make_f32({n}, values);
}

void write_json(const std::filesystem::path& path, const nlohmann::json& doc) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  out << doc.dump(2) << "\n";
}

}  // namespace

std::vector<std::string> default_random_vocab() {
  std::vector<std::string> vocab = {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};
  for (char c = 33; c < 127; ++c) vocab.emplace_back(1, c);
  for (char c = 33; c < 127; ++c) {
    if (std::isalnum(static_cast<unsigned char>(c))) vocab.push_back("##" + std::string(1, c));
  }
  return vocab;
}

void write_random_text_encoder(const std::filesystem::path& dir,
                               const BertConfig& config,
                               const std::vector<std::string>& vocab,
                               std::uint64_t seed) {
  std::filesystem::create_directories(dir);
  BertConfig c = config;
  c.vocab_size = static_cast<int>(vocab.size());

  nlohmann::json doc = {
      {"model_type", "bert"},
      {"vocab_size", c.vocab_size},
      {"hidden_size", c.hidden_size},
      {"num_hidden_layers", c.num_hidden_layers},
      {"num_attention_heads", c.num_attention_heads},
      {"intermediate_size", c.intermediate_size},
      {"max_position_embeddings", c.max_position_embeddings},
      {"type_vocab_size", c.type_vocab_size},
      {"layer_norm_eps", c.layer_norm_eps},
      {"hidden_dropout_prob", c.hidden_dropout_prob},
      {"attention_probs_dropout_prob", c.attention_probs_dropout_prob},
      {"hidden_act", c.hidden_act},
      {"do_lower_case", c.do_lower_case},
      {"memefusion_random_seed", seed},
  };
  write_json(dir / "config.json", doc);

  std::ofstream vocab_out(dir / "vocab.txt");
  for (const auto& token : vocab) vocab_out << token << "\n";

  // Truncated-normal(0.02)-style initialization, as used by BERT.
  Rng rng(derive_seed(seed, "text_encoder"));
  const double sd = 0.02;
  const int h = c.hidden_size;
  safetensors::File file;
  put_random(file, "embeddings.word_embeddings.weight", {c.vocab_size, h}, rng, sd);
  put_random(file, "embeddings.position_embeddings.weight",
             {c.max_position_embeddings, h}, rng, sd);
  put_random(file, "embeddings.token_type_embeddings.weight", {c.type_vocab_size, h},
             rng, sd);
  put_constant(file, "embeddings.LayerNorm.weight", h, 1.0f);
  put_constant(file, "embeddings.LayerNorm.bias", h, 0.0f);
  for (int i = 0; i < c.num_hidden_layers; ++i) {
    const std::string p = "encoder.layer." + std::to_string(i) + ".";
    for (const char* name : {"attention.self.query", "attention.self.key",
                             "attention.self.value", "attention.output.dense"}) {
      put_random(file, p + name + ".weight", {h, h}, rng, sd);
      put_constant(file, p + name + ".bias", h, 0.0f);
    }
    put_constant(file, p + "attention.output.LayerNorm.weight", h, 1.0f);
    put_constant(file, p + "attention.output.LayerNorm.bias", h, 0.0f);
    put_random(file, p + "intermediate.dense.weight", {c.intermediate_size, h}, rng, sd);
    put_constant(file, p + "intermediate.dense.bias", c.intermediate_size, 0.0f);
    put_random(file, p + "output.dense.weight", {h, c.intermediate_size}, rng, sd);
    put_constant(file, p + "output.dense.bias", h, 0.0f);
    put_constant(file, p + "output.LayerNorm.weight", h, 1.0f);
    put_constant(file, p + "output.LayerNorm.bias", h, 0.0f);
  }
  file.metadata["format"] = "pt";
  safetensors::write(dir / "model.safetensors", file);
}

void write_random_image_encoder(const std::filesystem::path& dir,
                                std::uint64_t seed, const std::vector<int>& layout) {
  std::filesystem::create_directories(dir);
  write_json(dir / "config.json", {{"architecture", "vgg16"},
                                   {"layout", layout},
                                   {"memefusion_random_seed", seed}});

  // Kaiming-normal (fan-out, ReLU gain) kernels with zero bias, matching the
  // upstream VGG initialization.
  Rng rng(derive_seed(seed, "image_encoder"));
  safetensors::File file;
  int channels = 3;
  int module_index = 0;
  for (int width : layout) {
    if (width == 0) {
      module_index += 1;
      continue;
    }
    const std::string name = "features." + std::to_string(module_index);
    put_random(file, name + ".weight", {width, channels, 3, 3}, rng,
               std::sqrt(2.0 / (width * 9.0)));
    put_constant(file, name + ".bias", width, 0.0f);
    channels = width;
    module_index += 2;
  }
  file.metadata["format"] = "pt";
  safetensors::write(dir / "model.safetensors", file);
}

}  // namespace memefusion
