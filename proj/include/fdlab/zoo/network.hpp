#pragma once

#include <string>
#include <utility>
#include <vector>

#include "fdlab/nn/graph.hpp"
#include "fdlab/nn/loss.hpp"

namespace fdlab::zoo {

enum class ArchId { mini_plain, mini_residual, mini_dense, custom };

inline std::string to_string(ArchId a) {
  switch (a) {
    case ArchId::mini_plain: return "mini_plain";
    case ArchId::mini_residual: return "mini_residual";
    case ArchId::mini_dense: return "mini_dense";
    case ArchId::custom: return "custom";
  }
  return "custom";
}

inline ArchId parse_arch(const std::string& s) {
  if (s == "mini_plain") return ArchId::mini_plain;
  if (s == "mini_residual") return ArchId::mini_residual;
  if (s == "mini_dense") return ArchId::mini_dense;
  if (s == "custom") return ArchId::custom;
  throw ArgumentError("unknown architecture '" + s + "'");
}

/// A probed activation. `index` is the relative depth (0 = shallowest);
/// the deepest tap is always the logit layer.
struct TapId {
  int index = 0;
  std::string internal_name;
  int node = 0;

  friend bool operator==(const TapId&, const TapId&) = default;
};

/// Classifier exposing named intermediate activations.
template <typename T>
class TappedNetwork {
 public:
  TappedNetwork() = default;
  TappedNetwork(ArchId arch, nn::Graph<T> graph, std::vector<TapId> taps, int num_classes)
      : arch_(arch), graph_(std::move(graph)), taps_(std::move(taps)), num_classes_(num_classes) {
    require(!taps_.empty(), "network needs at least one tap");
    for (std::size_t i = 0; i < taps_.size(); ++i) {
      require(taps_[i].index == int(i), "tap indices must be 0..n-1 in order");
      require(i == 0 || taps_[i].node > taps_[i - 1].node, "taps must be strictly ordered by depth");
    }
    require(taps_.back().node == graph_.last(), "deepest tap must be the logit node");
    require(numel(graph_.shape(graph_.last())) == std::size_t(num_classes), "logit width must equal num_classes");
  }

  ArchId arch() const { return arch_; }
  int num_classes() const { return num_classes_; }
  const std::vector<TapId>& taps() const { return taps_; }
  int num_taps() const { return int(taps_.size()); }
  const TapId& logit_tap() const { return taps_.back(); }
  const nn::Graph<T>& graph() const { return graph_; }
  nn::Graph<T>& graph() { return graph_; }
  const Shape& input_shape() const { return graph_.input_shape(); }

  const TapId& tap(int index) const {
    if (index < 0 || index >= num_taps())
      throw ArgumentError("unknown tap " + std::to_string(index) + " for " + to_string(arch_) + " (has " +
                          std::to_string(num_taps()) + ")");
    return taps_[index];
  }
  std::size_t feature_size(int tap_index) const { return numel(graph_.shape(tap(tap_index).node)); }
  Shape feature_shape(int tap_index) const { return graph_.shape(tap(tap_index).node); }

  /// Inference-mode forward pass recording everything needed for `backward_input`.
  void forward(const Tensor<T>& batch, int tap_index, nn::Tape<T>& tape) const {
    graph_.forward(batch, tap(tap_index).node, false, tape);
  }

  /// Activation at the tap on the tape, flattened to {N, D}.
  Tensor<T> features(const nn::Tape<T>& tape, int tap_index) const {
    Tensor<T> f = tape.out.at(tap(tap_index).node);
    const std::size_t n = f.dim(0);
    f.reshape({n, f.size() / std::max<std::size_t>(n, 1)});
    return f;
  }

  /// Pulls d scalar / d features ({N, D}) back to the input pixels.
  Tensor<T> backward_input(const nn::Tape<T>& tape, int tap_index, const Tensor<T>& grad_features) const {
    const int node = tap(tap_index).node;
    Tensor<T> seed = grad_features;
    seed.reshape(tape.out.at(node).shape());
    return graph_.backward(tape, node, seed, nullptr, true);
  }

  Tensor<T> forward_to_tap(const Tensor<T>& batch, int tap_index) const {
    nn::Tape<T> tape;
    forward(batch, tap_index, tape);
    return features(tape, tap_index);
  }

  Tensor<T> forward_logits(const Tensor<T>& batch) const { return forward_to_tap(batch, logit_tap().index); }

  std::vector<int> predict(const Tensor<T>& batch) const { return predict_from_logits(forward_logits(batch)); }

  static std::vector<int> predict_from_logits(const Tensor<T>& logits) {
    std::vector<int> out(logits.dim(0));
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = nn::argmax<T>(logits.sample(i));
    return out;
  }

  template <typename U>
  TappedNetwork<U> cast() const {
    return TappedNetwork<U>(arch_, graph_.template cast<U>(), taps_, num_classes_);
  }

 private:
  ArchId arch_ = ArchId::custom;
  nn::Graph<T> graph_;
  std::vector<TapId> taps_;
  int num_classes_ = 0;
};

}  // namespace fdlab::zoo
