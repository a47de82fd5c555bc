#pragma once

// Small float32 layer kit shared by the two encoders: linear, layer norm,
// GELU, dropout. Activations are row-major (rows = positions or channels).

#include <Eigen/Core>

#include <cstddef>
#include <string>
#include <vector>

#include "random.hpp"

namespace memefusion::nn {

using MatF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowF = Eigen::Matrix<float, 1, Eigen::Dynamic>;
using VecF = Eigen::VectorXf;

// A named trainable buffer together with its gradient accumulator.
template <typename T>
struct ParamSlot {
  std::string name;
  T* value = nullptr;
  T* grad = nullptr;
  std::size_t size = 0;
};

// y = x W^T + b with W stored (out, in), as in the checkpoints it is read from.
struct Linear {
  MatF weight;
  RowF bias;
  MatF grad_weight;
  RowF grad_bias;

  int in_features() const { return static_cast<int>(weight.cols()); }
  int out_features() const { return static_cast<int>(weight.rows()); }

  MatF forward(const MatF& x) const;
  // Accumulates parameter gradients and returns dL/dx.
  MatF backward(const MatF& x, const MatF& dy);
  void enable_grad();
  void collect(const std::string& prefix, std::vector<ParamSlot<float>>& out);
};

struct LayerNorm {
  RowF gamma;
  RowF beta;
  RowF grad_gamma;
  RowF grad_beta;
  float eps = 1e-12f;

  struct Cache {
    MatF normalized;
    VecF inv_std;
  };

  MatF forward(const MatF& x, Cache* cache) const;
  MatF backward(const Cache& cache, const MatF& dy);
  void enable_grad();
  void collect(const std::string& prefix, std::vector<ParamSlot<float>>& out);
};

enum class Activation { kGeluErf, kGeluTanh, kRelu };

MatF activate(Activation act, const MatF& x);
// dL/dx given the pre-activation input x and dL/dy.
MatF activate_backward(Activation act, const MatF& x, const MatF& dy);

// Inverted dropout mask (0 or 1/(1-p)); empty when p == 0.
MatF dropout_mask(Eigen::Index rows, Eigen::Index cols, double p, Rng& rng);

void softmax_rows(MatF& x);

}  // namespace memefusion::nn
