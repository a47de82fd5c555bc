#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dataset.hpp"
#include "encoders.hpp"
#include "nn.hpp"
#include "random.hpp"
#include "safetensors.hpp"

namespace memefusion {

enum class ModelKind { kTextOnly, kImageOnly, kFusion };

std::string_view to_string(ModelKind kind);
// Accepts text|text_only, image|image_only, fusion.
ModelKind parse_model_kind(std::string_view text);

// Where the fusion head taps the image side: the raw 256-d encoder output
// (default) or the image stack's last hidden layer.
enum class FusionTaps { kEncoder, kHidden };

std::string_view to_string(FusionTaps taps);
FusionTaps parse_fusion_taps(std::string_view text);

struct ModelSpec {
  ModelKind kind = ModelKind::kFusion;
  std::vector<int> text_hidden;                   // none: 768 -> 1
  std::vector<int> image_hidden{256, 64};
  std::vector<double> image_dropout{0.5, 0.0};    // after each image hidden layer
  std::vector<int> fusion_hidden;                 // none: 1024 -> 1
  FusionTaps fusion_taps = FusionTaps::kEncoder;
  double threshold = 0.5;

  bool uses_text() const { return kind != ModelKind::kImageOnly; }
  bool uses_image() const { return kind != ModelKind::kTextOnly; }
  bool operator==(const ModelSpec&) const = default;
};

void validate(const ModelSpec& spec);

using MatD = Eigen::MatrixXd;
using VecD = Eigen::VectorXd;

// Dense stack: ReLU after every hidden layer (followed by optional
// inverted dropout), linear output unless `activate_output`.
class Mlp {
 public:
  struct Dense {
    MatD weight;  // (out, in)
    VecD bias;
    MatD grad_weight;
    VecD grad_bias;
  };

  struct Cache {
    std::vector<MatD> inputs;       // input to each layer
    std::vector<MatD> activations;  // post-activation output of each hidden/activated layer
    std::vector<MatD> masks;        // dropout masks (empty when inactive)
  };

  Mlp() = default;
  Mlp(int in_features, std::vector<int> hidden, std::vector<double> dropout,
      int out_features, bool activate_output);

  int in_features() const;
  int out_features() const;
  std::vector<int> hidden_widths() const;
  const std::vector<double>& dropout_rates() const { return dropout_; }
  std::vector<Dense>& layers() { return layers_; }
  const std::vector<Dense>& layers() const { return layers_; }

  // x: (batch, in). Dropout only when `train` (needs rng).
  MatD forward(const MatD& x, bool train, Rng* rng, Cache* cache) const;
  MatD backward(const Cache& cache, const MatD& dy);

  void init_uniform_fan_in(Rng& rng);
  void zero_grad();
  void collect(const std::string& prefix, std::vector<nn::ParamSlot<double>>& out);

 private:
  std::vector<Dense> layers_;
  std::vector<double> dropout_;
  bool activate_output_ = false;
};

// The three classifier heads behind one interface. Inputs are rows of
// embeddings; the output is one logit per row.
class Classifier {
 public:
  struct Batch {
    MatD text;   // (batch, 768) or empty
    MatD image;  // (batch, 256) or empty
  };

  struct Cache {
    Mlp::Cache branch;
    Mlp::Cache head;
    Eigen::Index text_width = 0;
  };

  Classifier() = default;
  // Weights drawn uniformly in +-1/sqrt(fan_in) from `init_seed`.
  Classifier(const ModelSpec& spec, std::uint64_t init_seed);

  const ModelSpec& spec() const { return spec_; }

  // Width of the final classification stack's input (768, 256, 1024, or
  // 832 with hidden taps).
  int input_width() const { return head_.in_features(); }
  // Hidden widths/dropout of the modality stack: the image stack for
  // image_only (and the fusion image branch), otherwise the head stack.
  std::vector<int> hidden_widths() const;
  std::vector<double> dropout_rates() const;
  const Mlp& head() const { return head_; }
  Mlp& head() { return head_; }
  const std::optional<Mlp>& image_branch() const { return image_branch_; }
  std::optional<Mlp>& image_branch() { return image_branch_; }

  VecD forward(const Batch& batch, bool train, Rng* rng, Cache* cache) const;
  // Accumulates parameter gradients; returns gradients w.r.t. the inputs.
  Batch backward(const Cache& cache, const VecD& d_logits);

  // Eval-mode single-record logit. Pass nullptr for an unused modality.
  double logit(const Embedding* text, const Embedding* image) const;

  std::vector<nn::ParamSlot<double>> parameters();
  void zero_grad();

  safetensors::File export_parameters() const;
  void import_parameters(const safetensors::File& file);

 private:
  MatD assemble(const Batch& batch, bool train, Rng* rng, Cache* cache) const;

  ModelSpec spec_;
  std::optional<Mlp> image_branch_;
  Mlp head_;
};

// Per-head forwards with the dimension checks the heads promise.
double text_head_forward(const Classifier& model, const Embedding& text);
double image_head_forward(const Classifier& model, const Embedding& image,
                          bool train_mode, Rng* rng = nullptr);
double fusion_forward(const Classifier& model, const Embedding& text,
                      const Embedding& image);

double sigmoid(double logit);

// sigmoid(logit) > threshold -> troll; ties go to not_troll.
Label predict_label(double logit, double threshold);

}  // namespace memefusion
