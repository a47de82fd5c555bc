#include "nn.hpp"

#include <cmath>
#include <numbers>

namespace memefusion::nn {

MatF Linear::forward(const MatF& x) const {
  MatF y = x * weight.transpose();
  y.rowwise() += bias;
  return y;
}

MatF Linear::backward(const MatF& x, const MatF& dy) {
  grad_weight.noalias() += dy.transpose() * x;
  grad_bias += dy.colwise().sum();
  return dy * weight;
}

void Linear::enable_grad() {
  grad_weight = MatF::Zero(weight.rows(), weight.cols());
  grad_bias = RowF::Zero(bias.size());
}

void Linear::collect(const std::string& prefix,
                     std::vector<ParamSlot<float>>& out) {
  out.push_back({prefix + ".weight", weight.data(), grad_weight.data(),
                 static_cast<std::size_t>(weight.size())});
  out.push_back({prefix + ".bias", bias.data(), grad_bias.data(),
                 static_cast<std::size_t>(bias.size())});
}

MatF LayerNorm::forward(const MatF& x, Cache* cache) const {
  const auto cols = static_cast<float>(x.cols());
  MatF normalized(x.rows(), x.cols());
  VecF inv_std(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const float mean = x.row(r).sum() / cols;
    const RowF centered = x.row(r).array() - mean;
    const float var = centered.squaredNorm() / cols;
    inv_std(r) = 1.0f / std::sqrt(var + eps);
    normalized.row(r) = centered * inv_std(r);
  }
  MatF y = normalized.array().rowwise() * gamma.array();
  y.rowwise() += beta;
  if (cache) {
    cache->normalized = std::move(normalized);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

MatF LayerNorm::backward(const Cache& cache, const MatF& dy) {
  grad_gamma += (dy.array() * cache.normalized.array()).colwise().sum().matrix();
  grad_beta += dy.colwise().sum();
  const MatF dxhat = dy.array().rowwise() * gamma.array();
  const auto cols = static_cast<float>(dy.cols());
  MatF dx(dy.rows(), dy.cols());
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    const float mean_d = dxhat.row(r).sum() / cols;
    const float mean_dx = dxhat.row(r).dot(cache.normalized.row(r)) / cols;
    dx.row(r) = (dxhat.row(r).array() - mean_d -
                 cache.normalized.row(r).array() * mean_dx) *
                cache.inv_std(r);
  }
  return dx;
}

void LayerNorm::enable_grad() {
  grad_gamma = RowF::Zero(gamma.size());
  grad_beta = RowF::Zero(beta.size());
}

void LayerNorm::collect(const std::string& prefix,
                        std::vector<ParamSlot<float>>& out) {
  out.push_back({prefix + ".weight", gamma.data(), grad_gamma.data(),
                 static_cast<std::size_t>(gamma.size())});
  out.push_back({prefix + ".bias", beta.data(), grad_beta.data(),
                 static_cast<std::size_t>(beta.size())});
}

namespace {

constexpr float kInvSqrt2 = static_cast<float>(1.0 / std::numbers::sqrt2);
constexpr float kInvSqrt2Pi = static_cast<float>(0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2);
constexpr float kTanhScale = 0.7978845608028654f;  // sqrt(2/pi)

}  // namespace

MatF activate(Activation act, const MatF& x) {
  switch (act) {
    case Activation::kGeluErf:
      return x.unaryExpr([](float v) {
        return 0.5f * v * (1.0f + std::erf(v * kInvSqrt2));
      });
    case Activation::kGeluTanh:
      return x.unaryExpr([](float v) {
        return 0.5f * v *
               (1.0f + std::tanh(kTanhScale * (v + 0.044715f * v * v * v)));
      });
    case Activation::kRelu:
      return x.cwiseMax(0.0f);
  }
  return x;
}

MatF activate_backward(Activation act, const MatF& x, const MatF& dy) {
  switch (act) {
    case Activation::kGeluErf:
      return dy.array() * x.unaryExpr([](float v) {
        return 0.5f * (1.0f + std::erf(v * kInvSqrt2)) +
               v * kInvSqrt2Pi * std::exp(-0.5f * v * v);
      }).array();
    case Activation::kGeluTanh:
      return dy.array() * x.unaryExpr([](float v) {
        const float inner = kTanhScale * (v + 0.044715f * v * v * v);
        const float t = std::tanh(inner);
        const float d_inner = kTanhScale * (1.0f + 3.0f * 0.044715f * v * v);
        return 0.5f * (1.0f + t) + 0.5f * v * (1.0f - t * t) * d_inner;
      }).array();
    case Activation::kRelu:
      return (x.array() > 0.0f).select(dy, 0.0f);
  }
  return dy;
}

MatF dropout_mask(Eigen::Index rows, Eigen::Index cols, double p, Rng& rng) {
  if (p <= 0.0) return MatF();
  MatF mask(rows, cols);
  const auto keep = static_cast<float>(1.0 / (1.0 - p));
  for (Eigen::Index i = 0; i < mask.size(); ++i) {
    mask.data()[i] = rng.bernoulli(p) ? 0.0f : keep;
  }
  return mask;
}

void softmax_rows(MatF& x) {
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const float max = x.row(r).maxCoeff();
    x.row(r) = (x.row(r).array() - max).exp();
    x.row(r) /= x.row(r).sum();
  }
}

}  // namespace memefusion::nn
