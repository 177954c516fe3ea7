#pragma once

#include <cmath>
#include <vector>

#include "fdlab/core/tensor.hpp"

namespace fdlab::nn {

/// Heavy-ball SGD with L2 weight decay folded into the gradient.
template <typename T>
class MomentumSgd {
 public:
  MomentumSgd(std::vector<Tensor<T>*> params, double momentum, double weight_decay)
      : params_(std::move(params)), momentum_(momentum), weight_decay_(weight_decay) {
    for (auto* p : params_) velocity_.emplace_back(p->shape());
  }

  void step(const std::vector<Tensor<T>>& grads, double lr) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = *params_[i];
      auto& v = velocity_[i];
      for (std::size_t j = 0; j < p.size(); ++j) {
        const double g = double(grads[i][j]) + weight_decay_ * double(p[j]);
        v[j] = T(momentum_ * double(v[j]) + g);
        p[j] = T(double(p[j]) - lr * double(v[j]));
      }
    }
  }

 private:
  std::vector<Tensor<T>*> params_;
  std::vector<Tensor<T>> velocity_;
  double momentum_, weight_decay_;
};

template <typename T>
class Adam {
 public:
  explicit Adam(std::vector<Tensor<T>*> params, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : params_(std::move(params)), b1_(beta1), b2_(beta2), eps_(eps) {
    for (auto* p : params_) {
      m_.emplace_back(p->shape());
      v_.emplace_back(p->shape());
    }
  }

  void step(const std::vector<Tensor<T>>& grads, double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, double(t_));
    const double c2 = 1.0 - std::pow(b2_, double(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = *params_[i];
      for (std::size_t j = 0; j < p.size(); ++j) {
        const double g = grads[i][j];
        m_[i][j] = T(b1_ * m_[i][j] + (1 - b1_) * g);
        v_[i][j] = T(b2_ * v_[i][j] + (1 - b2_) * g * g);
        const double mh = m_[i][j] / c1, vh = v_[i][j] / c2;
        p[j] = T(p[j] - lr * mh / (std::sqrt(vh) + eps_));
      }
    }
  }

 private:
  std::vector<Tensor<T>*> params_;
  std::vector<Tensor<T>> m_, v_;
  double b1_, b2_, eps_;
  long t_ = 0;
};

}  // namespace fdlab::nn
