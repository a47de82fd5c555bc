#include <cmath>
#include <cstdlib>
#include <fstream>

#include "encoders.hpp"
#include "error.hpp"
#include "json.hpp"

namespace memefusion {

using nn::MatF;
using nn::RowF;

std::string_view to_string(Modality modality) {
  return modality == Modality::kText ? "text" : "image";
}

std::string_view to_string(TextPooling pooling) {
  return pooling == TextPooling::kCls ? "cls" : "mean";
}

TextPooling parse_text_pooling(std::string_view text) {
  if (text == "cls") return TextPooling::kCls;
  if (text == "mean") return TextPooling::kMean;
  throw Error(ErrorKind::kValidation,
              "text_pooling must be 'cls' or 'mean', got '" + std::string(text) + "'");
}

std::filesystem::path resolve_weights(const std::string& weights_id) {
  namespace fs = std::filesystem;
  if (weights_id.empty()) {
    throw Error(ErrorKind::kLoad, "empty encoder weights id");
  }
  std::error_code ec;
  if (fs::is_directory(weights_id, ec)) return fs::path(weights_id);
  if (const char* root = std::getenv("MEMEFUSION_MODELS")) {
    const fs::path candidate = fs::path(root) / weights_id;
    if (fs::is_directory(candidate, ec)) return candidate;
  }
  throw Error(ErrorKind::kLoad,
              "encoder weights '" + weights_id +
                  "' not found. Export them with tools/export_encoders.py "
                  "(or create seeded stand-ins with `memefusion init-encoders`) "
                  "and pass the directory path or set MEMEFUSION_MODELS to its "
                  "parent.");
}

BertConfig read_bert_config(const std::filesystem::path& config_json) {
  std::ifstream in(config_json);
  if (!in) throw Error(ErrorKind::kLoad, "cannot read " + config_json.string());
  BertConfig c;
  try {
    const auto doc = nlohmann::json::parse(in);
    c.vocab_size = doc.at("vocab_size").get<int>();
    c.hidden_size = doc.value("hidden_size", c.hidden_size);
    c.num_hidden_layers = doc.value("num_hidden_layers", c.num_hidden_layers);
    c.num_attention_heads = doc.value("num_attention_heads", c.num_attention_heads);
    c.intermediate_size = doc.value("intermediate_size", c.intermediate_size);
    c.max_position_embeddings =
        doc.value("max_position_embeddings", c.max_position_embeddings);
    c.type_vocab_size = doc.value("type_vocab_size", c.type_vocab_size);
    c.layer_norm_eps = doc.value("layer_norm_eps", c.layer_norm_eps);
    c.hidden_dropout_prob = doc.value("hidden_dropout_prob", c.hidden_dropout_prob);
    c.attention_probs_dropout_prob =
        doc.value("attention_probs_dropout_prob", c.attention_probs_dropout_prob);
    c.hidden_act = doc.value("hidden_act", c.hidden_act);
    c.do_lower_case = doc.value("do_lower_case", c.do_lower_case);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kConfig,
                config_json.string() + ": bad encoder config: " + e.what());
  }
  if (c.hidden_size % c.num_attention_heads != 0) {
    throw Error(ErrorKind::kConfig,
                "hidden_size must be divisible by num_attention_heads");
  }
  return c;
}

struct TextEncoder::Layer {
  nn::Linear query, key, value, attention_output, intermediate, output;
  nn::LayerNorm attention_norm, output_norm;
};

struct LayerTape {
  MatF input;
  MatF q, k, v;
  std::vector<MatF> probs;
  std::vector<MatF> prob_masks;
  MatF context;
  MatF attention_mask;
  nn::LayerNorm::Cache attention_norm;
  MatF attention_out;
  MatF intermediate_pre;
  MatF intermediate;
  MatF output_mask;
  nn::LayerNorm::Cache output_norm;
};

struct TextEncoder::Tape {
  std::vector<int> ids;
  MatF embedding_mask;
  nn::LayerNorm::Cache embedding_norm;
  std::vector<LayerTape> layers;
};

TextEncoder::TextEncoder() = default;
TextEncoder::~TextEncoder() = default;
TextEncoder::TextEncoder(TextEncoder&&) noexcept = default;
TextEncoder& TextEncoder::operator=(TextEncoder&&) noexcept = default;

std::shared_ptr<TextEncoder::Tape> TextEncoder::new_tape() { return std::make_shared<Tape>(); }

namespace {

MatF matrix_from(const safetensors::Tensor& t, std::int64_t rows,
                 std::int64_t cols, const std::string& name) {
  const bool shape_ok =
      (t.shape.size() == 2 && t.shape[0] == rows && t.shape[1] == cols) ||
      (t.shape.size() == 1 && rows == 1 && t.shape[0] == cols);
  if (!shape_ok) {
    throw Error(ErrorKind::kConfig,
                "tensor '" + name + "' has unexpected shape");
  }
  const auto values = t.to_float();
  return Eigen::Map<const MatF>(values.data(), rows, cols);
}

class TensorSource {
 public:
  TensorSource(const safetensors::File& file, std::string prefix)
      : file_(file), prefix_(std::move(prefix)) {}

  // Tries `name`, then the legacy gamma/beta spelling for layer norms.
  const safetensors::Tensor& get(const std::string& name) const {
    const std::string full = prefix_ + name;
    if (file_.contains(full)) return file_.at(full);
    auto swap_suffix = [&](const std::string& from, const std::string& to) {
      if (full.size() > from.size() &&
          full.compare(full.size() - from.size(), from.size(), from) == 0) {
        return full.substr(0, full.size() - from.size()) + to;
      }
      return std::string();
    };
    for (const auto& alt : {swap_suffix("LayerNorm.weight", "LayerNorm.gamma"),
                            swap_suffix("LayerNorm.bias", "LayerNorm.beta")}) {
      if (!alt.empty() && file_.contains(alt)) return file_.at(alt);
    }
    throw Error(ErrorKind::kConfig, "encoder weights lack tensor '" + full + "'");
  }

  MatF matrix(const std::string& name, std::int64_t rows, std::int64_t cols) const {
    return matrix_from(get(name), rows, cols, prefix_ + name);
  }

  nn::Linear linear(const std::string& name, int in, int out) const {
    nn::Linear l;
    l.weight = matrix(name + ".weight", out, in);
    l.bias = matrix(name + ".bias", 1, out);
    return l;
  }

  nn::LayerNorm norm(const std::string& name, int width, double eps) const {
    nn::LayerNorm n;
    n.gamma = matrix(name + ".weight", 1, width);
    n.beta = matrix(name + ".bias", 1, width);
    n.eps = static_cast<float>(eps);
    return n;
  }

 private:
  const safetensors::File& file_;
  std::string prefix_;
};

nn::Activation parse_activation(const std::string& name) {
  if (name == "gelu") return nn::Activation::kGeluErf;
  if (name == "gelu_new" || name == "gelu_pytorch_tanh") return nn::Activation::kGeluTanh;
  if (name == "relu") return nn::Activation::kRelu;
  throw Error(ErrorKind::kConfig, "unsupported hidden_act '" + name + "'");
}

void hash_matrix(Sha256& hasher, const float* data, Eigen::Index n) {
  hasher.update(data, static_cast<std::size_t>(n) * sizeof(float));
}

void put(safetensors::File& file, const std::string& name, const MatF& m,
         bool vector) {
  std::vector<std::int64_t> shape =
      vector ? std::vector<std::int64_t>{m.size()}
             : std::vector<std::int64_t>{m.rows(), m.cols()};
  file.tensors[name] = safetensors::make_f32(
      std::move(shape), std::span<const float>(m.data(), static_cast<std::size_t>(m.size())));
}

void put_linear(safetensors::File& file, const std::string& name,
                const nn::Linear& l) {
  put(file, name + ".weight", l.weight, false);
  put(file, name + ".bias", l.bias, true);
}

void put_norm(safetensors::File& file, const std::string& name,
              const nn::LayerNorm& n) {
  put(file, name + ".weight", n.gamma, true);
  put(file, name + ".bias", n.beta, true);
}

}  // namespace

std::unique_ptr<TextEncoder> TextEncoder::load(const std::string& weights_id,
                                               bool frozen,
                                               TextPooling pooling,
                                               std::optional<int> required_dim) {
  const auto dir = resolve_weights(weights_id);
  std::unique_ptr<TextEncoder> enc(new TextEncoder());
  enc->weights_id_ = weights_id;
  enc->frozen_ = frozen;
  enc->pooling_ = pooling;
  enc->config_ = read_bert_config(dir / "config.json");
  const BertConfig& c = enc->config_;
  if (required_dim && c.hidden_size != *required_dim) {
    throw Error(ErrorKind::kConfig,
                "text encoder '" + weights_id + "' produces " +
                    std::to_string(c.hidden_size) + "-d features, expected " +
                    std::to_string(*required_dim));
  }
  enc->activation_ = parse_activation(c.hidden_act);
  enc->tokenizer_ = std::make_unique<WordPieceTokenizer>(
      WordPieceTokenizer::from_file(dir / "vocab.txt", c.do_lower_case));
  if (enc->tokenizer_->vocab_size() > c.vocab_size) {
    throw Error(ErrorKind::kConfig, "vocab.txt is larger than the embedding table");
  }

  const auto weights_path = dir / "model.safetensors";
  if (!std::filesystem::exists(weights_path)) {
    throw Error(ErrorKind::kLoad, "missing " + weights_path.string());
  }
  const auto file = safetensors::read(weights_path);
  const std::string prefix =
      file.contains("bert.embeddings.word_embeddings.weight") ? "bert." : "";
  const TensorSource src(file, prefix);

  const int h = c.hidden_size;
  enc->word_embeddings_ = src.matrix("embeddings.word_embeddings.weight", c.vocab_size, h);
  enc->position_embeddings_ =
      src.matrix("embeddings.position_embeddings.weight", c.max_position_embeddings, h);
  enc->token_type_embeddings_ =
      src.matrix("embeddings.token_type_embeddings.weight", c.type_vocab_size, h);
  enc->embedding_norm_ = src.norm("embeddings.LayerNorm", h, c.layer_norm_eps);
  for (int i = 0; i < c.num_hidden_layers; ++i) {
    const std::string p = "encoder.layer." + std::to_string(i) + ".";
    Layer layer;
    layer.query = src.linear(p + "attention.self.query", h, h);
    layer.key = src.linear(p + "attention.self.key", h, h);
    layer.value = src.linear(p + "attention.self.value", h, h);
    layer.attention_output = src.linear(p + "attention.output.dense", h, h);
    layer.attention_norm = src.norm(p + "attention.output.LayerNorm", h, c.layer_norm_eps);
    layer.intermediate = src.linear(p + "intermediate.dense", h, c.intermediate_size);
    layer.output = src.linear(p + "output.dense", c.intermediate_size, h);
    layer.output_norm = src.norm(p + "output.LayerNorm", h, c.layer_norm_eps);
    enc->layers_.push_back(std::move(layer));
  }
  if (!frozen) enc->zero_grad();
  return enc;
}

Embedding TextEncoder::encode(const TokenSequence& sequence) const {
  return run(sequence, nullptr, nullptr);
}

std::vector<Embedding> TextEncoder::encode(
    std::span<const TokenSequence> batch) const {
  std::vector<Embedding> out;
  out.reserve(batch.size());
  for (const auto& seq : batch) out.push_back(run(seq, nullptr, nullptr));
  return out;
}

Embedding TextEncoder::forward_train(const TokenSequence& sequence, Rng& rng,
                                     Tape& tape) const {
  if (frozen_) {
    throw Error(ErrorKind::kInvalidArgument, "forward_train on a frozen encoder");
  }
  return run(sequence, &rng, &tape);
}

Embedding TextEncoder::run(const TokenSequence& sequence, Rng* rng,
                           Tape* tape) const {
  const BertConfig& c = config_;
  // Padding positions are masked out as attention keys, so they cannot
  // influence the real positions; only the real prefix is computed.
  const int length = sequence.length();
  if (length < 1 || static_cast<std::size_t>(length) > sequence.token_ids.size()) {
    throw Error(ErrorKind::kInput, "token sequence has no real tokens");
  }
  if (length > c.max_position_embeddings) {
    throw Error(ErrorKind::kInput, "token sequence longer than max_position_embeddings");
  }
  for (int i = 0; i < length; ++i) {
    if (!sequence.attention_mask[i]) {
      throw Error(ErrorKind::kInput, "attention mask is not a real-token prefix");
    }
    const int id = sequence.token_ids[i];
    if (id < 0 || id >= c.vocab_size) {
      throw Error(ErrorKind::kInput,
                  "token id " + std::to_string(id) + " outside vocabulary range [0, " +
                      std::to_string(c.vocab_size) + ")");
    }
  }
  const bool train = tape != nullptr;

  const int h = c.hidden_size;
  MatF x(length, h);
  for (int i = 0; i < length; ++i) {
    x.row(i) = word_embeddings_.row(sequence.token_ids[i]) +
               position_embeddings_.row(i) + token_type_embeddings_.row(0);
  }
  if (train) tape->ids.assign(sequence.token_ids.begin(), sequence.token_ids.begin() + length);
  x = embedding_norm_.forward(x, train ? &tape->embedding_norm : nullptr);
  if (train) {
    tape->embedding_mask = nn::dropout_mask(length, h, c.hidden_dropout_prob, *rng);
    if (tape->embedding_mask.size()) x.array() *= tape->embedding_mask.array();
    tape->layers.assign(layers_.size(), LayerTape{});
  }

  const int heads = c.num_attention_heads;
  const int head_dim = h / heads;
  const float scale = 1.0f / std::sqrt(static_cast<float>(head_dim));

  for (std::size_t li = 0; li < layers_.size(); ++li) {
    const Layer& layer = layers_[li];
    LayerTape* lt = train ? &tape->layers[li] : nullptr;
    MatF q = layer.query.forward(x);
    MatF k = layer.key.forward(x);
    MatF v = layer.value.forward(x);
    MatF context(length, h);
    if (lt) {
      lt->probs.resize(heads);
      lt->prob_masks.resize(heads);
    }
    for (int hd = 0; hd < heads; ++hd) {
      const auto qh = q.middleCols(hd * head_dim, head_dim);
      const auto kh = k.middleCols(hd * head_dim, head_dim);
      const auto vh = v.middleCols(hd * head_dim, head_dim);
      MatF scores = (qh * kh.transpose()) * scale;
      nn::softmax_rows(scores);
      if (lt) {
        lt->probs[hd] = scores;
        lt->prob_masks[hd] =
            nn::dropout_mask(length, length, c.attention_probs_dropout_prob, *rng);
        if (lt->prob_masks[hd].size()) scores.array() *= lt->prob_masks[hd].array();
      }
      context.middleCols(hd * head_dim, head_dim).noalias() = scores * vh;
    }
    MatF attn = layer.attention_output.forward(context);
    if (lt) {
      lt->attention_mask = nn::dropout_mask(length, h, c.hidden_dropout_prob, *rng);
      if (lt->attention_mask.size()) attn.array() *= lt->attention_mask.array();
    }
    MatF attended = layer.attention_norm.forward(attn + x, lt ? &lt->attention_norm : nullptr);
    MatF pre = layer.intermediate.forward(attended);
    MatF inter = nn::activate(activation_, pre);
    MatF out = layer.output.forward(inter);
    if (lt) {
      lt->output_mask = nn::dropout_mask(length, h, c.hidden_dropout_prob, *rng);
      if (lt->output_mask.size()) out.array() *= lt->output_mask.array();
    }
    MatF next = layer.output_norm.forward(out + attended, lt ? &lt->output_norm : nullptr);
    if (lt) {
      lt->input = std::move(x);
      lt->q = std::move(q);
      lt->k = std::move(k);
      lt->v = std::move(v);
      lt->context = std::move(context);
      lt->attention_out = std::move(attended);
      lt->intermediate_pre = std::move(pre);
      lt->intermediate = std::move(inter);
    }
    x = std::move(next);
  }

  Embedding emb;
  emb.modality = Modality::kText;
  RowF pooled = pooling_ == TextPooling::kCls
                    ? RowF(x.row(0))
                    : RowF(x.colwise().sum() / static_cast<float>(length));
  emb.values.assign(pooled.data(), pooled.data() + pooled.size());
  return emb;
}

void TextEncoder::backward(const Tape& tape, std::span<const float> d_embedding) {
  if (frozen_) {
    throw Error(ErrorKind::kInvalidArgument, "backward on a frozen encoder");
  }
  const BertConfig& c = config_;
  const int h = c.hidden_size;
  if (static_cast<int>(d_embedding.size()) != h) {
    throw Error(ErrorKind::kShape, "text embedding gradient has wrong width");
  }
  const int length = static_cast<int>(tape.ids.size());
  const Eigen::Map<const RowF> d_pooled(d_embedding.data(), h);
  MatF dx = MatF::Zero(length, h);
  if (pooling_ == TextPooling::kCls) {
    dx.row(0) = d_pooled;
  } else {
    dx.rowwise() = d_pooled / static_cast<float>(length);
  }

  const int heads = c.num_attention_heads;
  const int head_dim = h / heads;
  const float scale = 1.0f / std::sqrt(static_cast<float>(head_dim));

  for (std::size_t li = layers_.size(); li-- > 0;) {
    Layer& layer = layers_[li];
    const LayerTape& lt = tape.layers[li];

    MatF d_sum = layer.output_norm.backward(lt.output_norm, dx);
    MatF d_attended = d_sum;
    MatF d_out = d_sum;
    if (lt.output_mask.size()) d_out.array() *= lt.output_mask.array();
    const MatF d_inter = layer.output.backward(lt.intermediate, d_out);
    const MatF d_pre = nn::activate_backward(activation_, lt.intermediate_pre, d_inter);
    d_attended += layer.intermediate.backward(lt.attention_out, d_pre);

    MatF d_attn_sum = layer.attention_norm.backward(lt.attention_norm, d_attended);
    MatF d_input = d_attn_sum;
    MatF d_attn = d_attn_sum;
    if (lt.attention_mask.size()) d_attn.array() *= lt.attention_mask.array();
    const MatF d_context = layer.attention_output.backward(lt.context, d_attn);

    MatF dq(length, h), dk(length, h), dv(length, h);
    for (int hd = 0; hd < heads; ++hd) {
      const auto qh = lt.q.middleCols(hd * head_dim, head_dim);
      const auto kh = lt.k.middleCols(hd * head_dim, head_dim);
      const auto vh = lt.v.middleCols(hd * head_dim, head_dim);
      const auto dch = d_context.middleCols(hd * head_dim, head_dim);
      const MatF& probs = lt.probs[hd];
      MatF dropped = probs;
      if (lt.prob_masks[hd].size()) dropped.array() *= lt.prob_masks[hd].array();
      dv.middleCols(hd * head_dim, head_dim).noalias() = dropped.transpose() * dch;
      MatF d_probs = dch * vh.transpose();
      if (lt.prob_masks[hd].size()) d_probs.array() *= lt.prob_masks[hd].array();
      const Eigen::VectorXf row_dot = (d_probs.array() * probs.array()).rowwise().sum();
      MatF d_scores = probs.array() * (d_probs.array().colwise() - row_dot.array());
      d_scores *= scale;
      dq.middleCols(hd * head_dim, head_dim).noalias() = d_scores * kh;
      dk.middleCols(hd * head_dim, head_dim).noalias() = d_scores.transpose() * qh;
    }
    d_input += layer.query.backward(lt.input, dq);
    d_input += layer.key.backward(lt.input, dk);
    d_input += layer.value.backward(lt.input, dv);
    dx = std::move(d_input);
  }

  if (tape.embedding_mask.size()) dx.array() *= tape.embedding_mask.array();
  const MatF d_emb = embedding_norm_.backward(tape.embedding_norm, dx);
  // The token embedding table stays fixed during fine-tuning; positions and
  // token types are updated.
  for (int i = 0; i < length; ++i) grad_position_embeddings_.row(i) += d_emb.row(i);
  grad_token_type_embeddings_.row(0) += d_emb.colwise().sum();
}

std::vector<nn::ParamSlot<float>> TextEncoder::parameters() {
  if (frozen_) return {};
  return slots();
}

std::vector<nn::ParamSlot<float>> TextEncoder::slots() {
  std::vector<nn::ParamSlot<float>> out;
  out.push_back({"embeddings.position_embeddings.weight", position_embeddings_.data(),
                 grad_position_embeddings_.data(),
                 static_cast<std::size_t>(position_embeddings_.size())});
  out.push_back({"embeddings.token_type_embeddings.weight",
                 token_type_embeddings_.data(), grad_token_type_embeddings_.data(),
                 static_cast<std::size_t>(token_type_embeddings_.size())});
  embedding_norm_.collect("embeddings.LayerNorm", out);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const std::string p = "encoder.layer." + std::to_string(i) + ".";
    Layer& l = layers_[i];
    l.query.collect(p + "attention.self.query", out);
    l.key.collect(p + "attention.self.key", out);
    l.value.collect(p + "attention.self.value", out);
    l.attention_output.collect(p + "attention.output.dense", out);
    l.attention_norm.collect(p + "attention.output.LayerNorm", out);
    l.intermediate.collect(p + "intermediate.dense", out);
    l.output.collect(p + "output.dense", out);
    l.output_norm.collect(p + "output.LayerNorm", out);
  }
  return out;
}

void TextEncoder::zero_grad() {
  grad_position_embeddings_ =
      MatF::Zero(position_embeddings_.rows(), position_embeddings_.cols());
  grad_token_type_embeddings_ =
      MatF::Zero(token_type_embeddings_.rows(), token_type_embeddings_.cols());
  embedding_norm_.enable_grad();
  for (auto& l : layers_) {
    for (nn::Linear* lin : {&l.query, &l.key, &l.value, &l.attention_output,
                            &l.intermediate, &l.output}) {
      lin->enable_grad();
    }
    l.attention_norm.enable_grad();
    l.output_norm.enable_grad();
  }
}

safetensors::File TextEncoder::export_weights() const {
  safetensors::File file;
  put(file, "embeddings.word_embeddings.weight", word_embeddings_, false);
  put(file, "embeddings.position_embeddings.weight", position_embeddings_, false);
  put(file, "embeddings.token_type_embeddings.weight", token_type_embeddings_, false);
  put_norm(file, "embeddings.LayerNorm", embedding_norm_);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const std::string p = "encoder.layer." + std::to_string(i) + ".";
    const Layer& l = layers_[i];
    put_linear(file, p + "attention.self.query", l.query);
    put_linear(file, p + "attention.self.key", l.key);
    put_linear(file, p + "attention.self.value", l.value);
    put_linear(file, p + "attention.output.dense", l.attention_output);
    put_norm(file, p + "attention.output.LayerNorm", l.attention_norm);
    put_linear(file, p + "intermediate.dense", l.intermediate);
    put_linear(file, p + "output.dense", l.output);
    put_norm(file, p + "output.LayerNorm", l.output_norm);
  }
  return file;
}

void TextEncoder::import_weights(const safetensors::File& file,
                                 const std::string& prefix) {
  for (const auto& slot : slots()) {
    const std::string name = prefix + slot.name;
    if (!file.contains(name)) continue;
    const auto values = file.at(name).to_float();
    if (values.size() != slot.size) {
      throw Error(ErrorKind::kFormat, "tensor '" + name + "' has the wrong size");
    }
    std::copy(values.begin(), values.end(), slot.value);
  }
}

std::string TextEncoder::checksum() const {
  Sha256 buffer;
  hash_matrix(buffer, word_embeddings_.data(), word_embeddings_.size());
  hash_matrix(buffer, position_embeddings_.data(), position_embeddings_.size());
  hash_matrix(buffer, token_type_embeddings_.data(), token_type_embeddings_.size());
  hash_matrix(buffer, embedding_norm_.gamma.data(), embedding_norm_.gamma.size());
  hash_matrix(buffer, embedding_norm_.beta.data(), embedding_norm_.beta.size());
  for (const auto& l : layers_) {
    for (const nn::Linear* lin : {&l.query, &l.key, &l.value, &l.attention_output,
                                  &l.intermediate, &l.output}) {
      hash_matrix(buffer, lin->weight.data(), lin->weight.size());
      hash_matrix(buffer, lin->bias.data(), lin->bias.size());
    }
    for (const nn::LayerNorm* n : {&l.attention_norm, &l.output_norm}) {
      hash_matrix(buffer, n->gamma.data(), n->gamma.size());
      hash_matrix(buffer, n->beta.data(), n->beta.size());
    }
  }
  return buffer.hex_digest();
}

}  // namespace memefusion
