#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fdlab/data/dataset.hpp"
#include "fdlab/nn/optim.hpp"
#include "fdlab/zoo/network.hpp"

namespace fdlab::zoo {

struct TrainConfig {
  int epochs = 30;
  int batch_size = 128;
  double learning_rate = 0.05;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  /// Epoch fractions at which the learning rate is multiplied by `lr_decay`.
  std::vector<double> lr_milestones = {0.5, 0.75};
  double lr_decay = 0.1;
  double bn_momentum = 0.1;
  /// Epochs over which the learning rate ramps linearly from 0 (per batch).
  int warmup_epochs = 0;
  std::uint64_t seed = 1;
  /// Called after every epoch with (epoch, mean loss).
  std::function<void(int, double)> on_epoch;
};

struct TrainReport {
  double train_accuracy = 0;
  double test_accuracy = 0;
  int epochs = 0;
  std::vector<double> loss_curve;
};

/// Batched inference-mode predictions over a whole dataset.
template <typename T>
std::vector<int> predict_dataset(const TappedNetwork<T>& net, const data::Dataset& ds, std::size_t batch = 256) {
  std::vector<int> out;
  out.reserve(ds.size());
  for (std::size_t b = 0; b < ds.size(); b += batch) {
    const auto idx = [&] {
      std::vector<std::size_t> v;
      for (std::size_t i = b; i < std::min(ds.size(), b + batch); ++i) v.push_back(i);
      return v;
    }();
    const auto p = net.predict(ds.images<T>(idx));
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

template <typename T>
double accuracy(const TappedNetwork<T>& net, const data::Dataset& ds) {
  if (ds.empty()) return 0.0;
  const auto pred = predict_dataset(net, ds);
  std::size_t ok = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) ok += pred[i] == ds.items[i].label;
  return double(ok) / double(ds.size());
}

/// Step-decayed rate at `epoch`; `progress` in [0,1) is the position inside
/// the epoch and only matters during warmup.
inline double scheduled_lr(const TrainConfig& cfg, int epoch, double progress = 0.0) {
  double lr = cfg.learning_rate;
  if (epoch < cfg.warmup_epochs) lr *= (epoch + progress + 1e-3) / cfg.warmup_epochs;
  for (double m : cfg.lr_milestones)
    if (epoch >= int(std::lround(m * cfg.epochs))) lr *= cfg.lr_decay;
  return lr;
}

/// Mini-batch momentum SGD on softmax cross-entropy. Batch-norm layers use
/// batch statistics while training and running statistics afterwards.
template <typename T>
TrainReport train_classifier(TappedNetwork<T>& net, const data::Dataset& train, const data::Dataset& test,
                             const TrainConfig& cfg) {
  require(cfg.epochs >= 0 && cfg.batch_size >= 1, "train_classifier: invalid epochs/batch size");
  require(!train.empty(), "train_classifier: empty training set");
  require(train.image_shape() == net.input_shape(), "train_classifier: dataset shape " + shape_str(train.image_shape()) +
                                                        " does not match network input " + shape_str(net.input_shape()));
  require(test.empty() || test.image_shape() == net.input_shape(), "train_classifier: test shape mismatch");
  require(train.num_classes == net.num_classes(), "train_classifier: class count mismatch");

  auto& graph = net.graph();
  const int logits = net.logit_tap().node;
  nn::MomentumSgd<T> opt(graph.parameters(), cfg.momentum, cfg.weight_decay);

  // Map each batch-norm op to its position on the tape for running-stat updates.
  std::vector<std::pair<int, std::size_t>> bn_nodes;
  {
    std::size_t buf = 0;
    for (int i = 1; i < graph.size(); ++i)
      if (graph.node(i).op->kind() == "batchnorm") {
        bn_nodes.emplace_back(i, buf);
        buf += 2;
      }
  }
  auto buffers = graph.buffers();

  TrainReport report;
  report.epochs = cfg.epochs;
  nn::Tape<T> tape;
  std::vector<std::size_t> order = iota_indices(train.size());
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng rng(mix_seed(cfg.seed, std::uint64_t(epoch)));
    rng.shuffle(order.begin(), order.end());
    double loss_sum = 0;
    std::size_t seen = 0;
    for (std::size_t b = 0; b < order.size(); b += std::size_t(cfg.batch_size)) {
      std::span<const std::size_t> idx(order.data() + b, std::min(order.size() - b, std::size_t(cfg.batch_size)));
      if (idx.size() < 2 && order.size() >= 2) continue;  // batch statistics need two samples
      const auto x = train.images<T>(idx);
      const auto y = train.labels(idx);
      graph.forward(x, logits, true, tape);
      Tensor<T> g;
      const auto losses = nn::softmax_cross_entropy(tape.out[logits], std::span<const int>(y), &g);
      for (auto& v : g) v /= T(idx.size());
      for (T l : losses) loss_sum += double(l);
      seen += idx.size();
      auto grads = graph.zero_grads();
      graph.backward(tape, logits, g, &grads, false);
      opt.step(grads, scheduled_lr(cfg, epoch, double(b) / double(order.size())));
      for (auto [node, buf] : bn_nodes) {
        const auto& saved = tape.saved[node];
        const std::size_t c = saved.dim(1);
        auto& mean = *buffers[buf];
        auto& var = *buffers[buf + 1];
        for (std::size_t k = 0; k < c; ++k) {
          mean[k] = T((1 - cfg.bn_momentum) * mean[k] + cfg.bn_momentum * saved[k]);
          var[k] = T((1 - cfg.bn_momentum) * var[k] + cfg.bn_momentum * saved[2 * c + k]);
        }
      }
    }
    const double mean_loss = seen ? loss_sum / double(seen) : 0.0;
    if (!std::isfinite(mean_loss)) throw TrainingDiverged("training diverged: non-finite loss at epoch " + std::to_string(epoch));
    report.loss_curve.push_back(mean_loss);
    if (cfg.on_epoch) cfg.on_epoch(epoch, mean_loss);
  }
  report.train_accuracy = accuracy(net, train);
  report.test_accuracy = test.empty() ? 0.0 : accuracy(net, test);
  return report;
}

}  // namespace fdlab::zoo
