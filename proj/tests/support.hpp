#pragma once

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>

#include "fdlab/auxtrain/auxiliary.hpp"
#include "fdlab/data/synthetic.hpp"
#include "fdlab/zoo/architectures.hpp"
#include "fdlab/zoo/train.hpp"

namespace fdtest {

using namespace fdlab;
namespace fs = std::filesystem;

/// conv(3->4) + ReLU (tap 0), then a dense logit layer (tap 1).
template <typename T = double>
zoo::TappedNetwork<T> tiny_net(std::uint64_t seed = 1, int classes = 3, std::size_t side = 6) {
  nn::Graph<T> g(Shape{3, side, side});
  int x = g.add(std::make_unique<nn::Conv2d<T>>(3, 4, 3, 1, 1), 0, "conv");
  x = g.add(std::make_unique<nn::Relu<T>>(), x, "relu");
  const int feat = x;
  x = g.add(std::make_unique<nn::Linear<T>>(numel(g.shape(feat)), std::size_t(classes)), feat, "logits");
  Rng rng(seed);
  g.init(rng);
  std::vector<zoo::TapId> taps{{0, "relu", feat}, {1, "logits", x}};
  return zoo::TappedNetwork<T>(zoo::ArchId::custom, std::move(g), std::move(taps), classes);
}

/// Untrained heads for every (tap, class); enough for gradient and identity checks.
template <typename T = double>
auxtrain::AuxiliaryBank<T> random_bank(std::shared_ptr<const zoo::TappedNetwork<T>> net, std::uint64_t seed = 3,
                                       int hidden = 8) {
  auxtrain::AuxiliaryBank<T> bank(net);
  auxtrain::AuxConfig cfg;
  cfg.hidden = hidden;
  for (int t = 0; t < net->num_taps(); ++t)
    for (int c = 0; c < net->num_classes(); ++c) {
      Rng rng(mix_seed(seed, std::uint64_t(t), std::uint64_t(c)));
      bank.insert(auxtrain::AuxiliaryModel<T>::create(t, c, net->feature_shape(t), cfg, rng), 0.5);
    }
  return bank;
}

template <typename T = double>
Tensor<T> random_images(std::size_t n, std::size_t side, std::uint64_t seed, double lo = 0.2, double hi = 0.8) {
  Tensor<T> x({n, 3, side, side});
  Rng rng(seed);
  for (auto& v : x) v = T(rng.uniform(lo, hi));
  return x;
}

using Pattern = std::function<std::vector<double>(const Tensor<double>&)>;

/// Which side of every ReLU / max-pool decision each unit falls on. Central
/// differences are meaningless when x+h and x-h differ here.
template <typename T>
Pattern activation_pattern(const nn::Graph<T>& g, int upto) {
  return [&g, upto](const Tensor<double>& x) {
    nn::Tape<T> tape;
    g.forward(x.template cast<T>(), upto, false, tape);
    std::vector<double> bits;
    for (int i = 1; i <= upto; ++i) {
      const auto kind = g.node(i).op->kind();
      if (kind == "relu")
        for (auto v : tape.out[i]) bits.push_back(v > T{0});
      else if (kind == "maxpool")
        bits.insert(bits.end(), tape.saved[i].begin(), tape.saved[i].end());
    }
    return bits;
  };
}

/// Largest relative error between an analytic gradient and central differences
/// of `f` at `count` random coordinates. With `pattern`, coordinates whose
/// stencil crosses a kink are redrawn.
inline double fd_check(const std::function<double(const Tensor<double>&)>& f, const Tensor<double>& x,
                       const Tensor<double>& analytic, int count, std::uint64_t seed, double h = 1e-4,
                       const Pattern& pattern = {}) {
  Rng rng(seed);
  double worst = 0;
  int checked = 0;
  for (int attempt = 0; checked < count; ++attempt) {
    if (attempt >= 50 * count) return std::numeric_limits<double>::infinity();
    const auto i = std::size_t(rng.integer(0, std::int64_t(x.size()) - 1));
    Tensor<double> xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    if (pattern && pattern(xp) != pattern(xm)) continue;
    const double num = (f(xp) - f(xm)) / (2 * h);
    const double a = analytic[i];
    const double scale = std::max({std::abs(a), std::abs(num), 1e-7});
    worst = std::max(worst, std::abs(a - num) / scale);
    ++checked;
  }
  return worst;
}

/// A small mini_residual trained once per process on 4 synthetic classes at side 8.
struct Trained {
  data::Dataset train, test;
  std::shared_ptr<zoo::TappedNetwork<float>> net;

  static const Trained& get() {
    static const Trained t = [] {
      Trained r;
      std::tie(r.train, r.test) = data::generate_train_test(17, 60, 30, 4, 8);
      zoo::ArchOptions o;
      o.num_classes = 4;
      o.side = 8;
      o.width = 0.5;
      o.seed = 3;
      auto net = zoo::build_architecture<float>(zoo::ArchId::mini_residual, o);
      zoo::TrainConfig tc;
      tc.epochs = 12;
      tc.batch_size = 16;
      zoo::train_classifier(net, r.train, r.test, tc);
      r.net = std::make_shared<zoo::TappedNetwork<float>>(std::move(net));
      return r;
    }();
    return t;
  }
};

/// Fresh empty directory under the system temp dir.
inline fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("fdlab_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

inline std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace fdtest
