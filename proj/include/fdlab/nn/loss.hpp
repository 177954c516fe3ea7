#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "fdlab/core/tensor.hpp"

namespace fdlab::nn {

template <typename T>
T sigmoid(T z) {
  return z >= T{0} ? T{1} / (T{1} + std::exp(-z)) : std::exp(z) / (T{1} + std::exp(z));
}

/// log(1 + e^z) without overflow.
template <typename T>
T softplus(T z) {
  return z > T{0} ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

template <typename T>
std::vector<T> softmax(std::span<const T> z) {
  std::vector<T> p(z.begin(), z.end());
  if (p.empty()) return p;
  const T m = *std::max_element(p.begin(), p.end());
  T sum{0};
  for (auto& v : p) sum += (v = std::exp(v - m));
  for (auto& v : p) v /= sum;
  return p;
}

template <typename T>
std::vector<T> log_softmax(std::span<const T> z) {
  std::vector<T> out(z.begin(), z.end());
  if (out.empty()) return out;
  const T m = *std::max_element(out.begin(), out.end());
  T sum{0};
  for (T v : out) sum += std::exp(v - m);
  const T lse = m + std::log(sum);
  for (auto& v : out) v -= lse;
  return out;
}

/// Per-sample softmax cross-entropy of `logits` {N,C} against `labels`.
/// Writes d loss_i / d logits into `grad` when non-null.
template <typename T>
std::vector<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels, Tensor<T>* grad) {
  const std::size_t n = logits.dim(0), c = logits.sample_size();
  std::vector<T> loss(n);
  if (grad) grad->reset(logits.shape());
  for (std::size_t i = 0; i < n; ++i) {
    auto row = logits.sample(i);
    auto lsm = log_softmax<T>(row);
    loss[i] = -lsm[labels[i]];
    if (grad)
      for (std::size_t k = 0; k < c; ++k) (*grad)[i * c + k] = std::exp(lsm[k]) - (int(k) == labels[i] ? T{1} : T{0});
  }
  return loss;
}

/// Binary cross-entropy on a logit with a positive-class weight:
/// -(w*y*log(sigmoid z) + (1-y)*log(1 - sigmoid z)). Returns {loss, dloss/dz}.
template <typename T>
std::pair<T, T> weighted_bce_logit(T z, T y, T pos_weight) {
  const T loss = pos_weight * y * softplus(-z) + (T{1} - y) * softplus(z);
  const T s = sigmoid(z);
  const T grad = pos_weight * y * (s - T{1}) + (T{1} - y) * s;
  return {loss, grad};
}

/// Index of the largest entry; ties resolve to the lowest index.
template <typename T>
int argmax(std::span<const T> v) {
  int best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = int(i);
  return best;
}

}  // namespace fdlab::nn
