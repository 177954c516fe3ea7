#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>

#include "fdlab/zoo/network.hpp"

namespace fdlab::zoo {

struct ArchOptions {
  int num_classes = 10;
  int side = 32;
  /// Scales every channel count; 1.0 is the reference layout.
  double width = 1.0;
  std::uint64_t seed = 0;
};

namespace detail {

inline std::size_t scaled(double base, double width) {
  return std::max<std::size_t>(2, std::size_t(std::lround(base * width)));
}

template <typename T>
class Builder {
 public:
  explicit Builder(Shape input) : g_(std::move(input)) {}

  int conv(int in, std::size_t cin, std::size_t cout, std::size_t k = 3, std::size_t stride = 1,
           std::string name = {}) {
    return g_.add(std::make_unique<nn::Conv2d<T>>(cin, cout, k, stride, k / 2), in, std::move(name));
  }
  int bn(int in, std::size_t c) { return g_.add(std::make_unique<nn::BatchNorm<T>>(c), in); }
  int relu(int in, std::string name = {}) { return g_.add(std::make_unique<nn::Relu<T>>(), in, std::move(name)); }
  int conv_bn_relu(int in, std::size_t cin, std::size_t cout, std::string name = {}) {
    return relu(bn(conv(in, cin, cout), cout), std::move(name));
  }
  int maxpool(int in, std::string name = {}) { return g_.add(std::make_unique<nn::MaxPool<T>>(2), in, std::move(name)); }
  int avgpool(int in, std::string name = {}) { return g_.add(std::make_unique<nn::AvgPool<T>>(2), in, std::move(name)); }
  int gap(int in) { return g_.add(std::make_unique<nn::GlobalAvgPool<T>>(), in); }
  int linear(int in, std::size_t out, std::string name = {}) {
    return g_.add(std::make_unique<nn::Linear<T>>(numel(g_.shape(in)), out), in, std::move(name));
  }
  int add(int a, int b, std::string name = {}) {
    return g_.add(std::make_unique<nn::Add<T>>(), std::vector<int>{a, b}, std::move(name));
  }
  int concat(std::vector<int> in, std::string name = {}) {
    return g_.add(std::make_unique<nn::Concat<T>>(), std::move(in), std::move(name));
  }
  std::size_t channels(int node) const { return g_.shape(node)[0]; }

  void tap(int node) { taps_.push_back({int(taps_.size()), g_.node(node).name, node}); }

  TappedNetwork<T> finish(ArchId arch, const ArchOptions& opt) {
    Rng rng(opt.seed);
    g_.init(rng);
    return TappedNetwork<T>(arch, std::move(g_), std::move(taps_), opt.num_classes);
  }

 private:
  nn::Graph<T> g_;
  std::vector<TapId> taps_;
};

// Three conv blocks of two 3x3 convs each plus two hidden FC layers.
// Taps: block1.conv1, block1, block2.conv1, block2, block3, fc1, fc2, logits.
template <typename T>
TappedNetwork<T> mini_plain(const ArchOptions& opt) {
  require(opt.side % 8 == 0, "mini_plain needs side divisible by 8");
  const std::size_t w1 = scaled(32, opt.width), w2 = scaled(64, opt.width), w3 = scaled(128, opt.width);
  const std::size_t fc = scaled(256, opt.width);
  Builder<T> b({3, std::size_t(opt.side), std::size_t(opt.side)});
  int x = b.conv_bn_relu(0, 3, w1, "block1.conv1");
  b.tap(x);
  x = b.maxpool(b.conv_bn_relu(x, w1, w1), "block1");
  b.tap(x);
  x = b.conv_bn_relu(x, w1, w2, "block2.conv1");
  b.tap(x);
  x = b.maxpool(b.conv_bn_relu(x, w2, w2), "block2");
  b.tap(x);
  x = b.conv_bn_relu(x, w2, w3);
  x = b.maxpool(b.conv_bn_relu(x, w3, w3), "block3");
  b.tap(x);
  x = b.relu(b.linear(x, fc), "fc1");
  b.tap(x);
  x = b.relu(b.linear(x, fc), "fc2");
  b.tap(x);
  x = b.linear(x, std::size_t(opt.num_classes), "logits");
  b.tap(x);
  return b.finish(ArchId::mini_plain, opt);
}

// Stem conv then six basic residual blocks (widths 16,16,32,32,64,64; stride 2
// on width changes with a projected shortcut), global pooling and logits.
template <typename T>
TappedNetwork<T> mini_residual(const ArchOptions& opt) {
  require(opt.side % 4 == 0, "mini_residual needs side divisible by 4");
  Builder<T> b({3, std::size_t(opt.side), std::size_t(opt.side)});
  const double widths[6] = {16, 16, 32, 32, 64, 64};
  std::size_t cin = scaled(16, opt.width);
  int x = b.conv_bn_relu(0, 3, cin);
  for (int i = 0; i < 6; ++i) {
    const std::size_t cout = scaled(widths[i], opt.width);
    const std::size_t stride = (i == 2 || i == 4) ? 2 : 1;
    int y = b.relu(b.bn(b.conv(x, cin, cout, 3, stride), cout));
    y = b.bn(b.conv(y, cout, cout), cout);
    const int shortcut = (stride != 1 || cin != cout) ? b.bn(b.conv(x, cin, cout, 1, stride), cout) : x;
    x = b.relu(b.add(y, shortcut), "block" + std::to_string(i + 1));
    b.tap(x);
    cin = cout;
  }
  x = b.linear(b.gap(x), std::size_t(opt.num_classes), "logits");
  b.tap(x);
  return b.finish(ArchId::mini_residual, opt);
}

// Densely connected: stem conv, three dense blocks of four BN-ReLU-conv3x3
// layers (growth 12) joined by compressing transitions (BN-ReLU-conv1x1, 2x2
// average pooling). Taps: dense1, trans1, dense2, trans2, dense3, logits.
template <typename T>
TappedNetwork<T> mini_dense(const ArchOptions& opt) {
  require(opt.side % 4 == 0, "mini_dense needs side divisible by 4");
  const std::size_t growth = scaled(12, opt.width);
  Builder<T> b({3, std::size_t(opt.side), std::size_t(opt.side)});
  int x = b.conv(0, 3, 2 * growth);
  for (int blk = 0; blk < 3; ++blk) {
    for (int layer = 0; layer < 4; ++layer) {
      const std::size_t c = b.channels(x);
      const int y = b.conv(b.relu(b.bn(x, c)), c, growth);
      x = b.concat({x, y}, layer == 3 ? "dense" + std::to_string(blk + 1) : std::string{});
    }
    b.tap(x);
    if (blk < 2) {
      const std::size_t c = b.channels(x);
      x = b.avgpool(b.conv(b.relu(b.bn(x, c)), c, c / 2, 1), "trans" + std::to_string(blk + 1));
      b.tap(x);
    }
  }
  const std::size_t c = b.channels(x);
  x = b.linear(b.gap(b.relu(b.bn(x, c))), std::size_t(opt.num_classes), "logits");
  b.tap(x);
  return b.finish(ArchId::mini_dense, opt);
}

}  // namespace detail

/// Randomly initialized network (seeded by `opt.seed`) with the fixed tap
/// table of `arch`.
template <typename T = float>
TappedNetwork<T> build_architecture(ArchId arch, const ArchOptions& opt = {}) {
  require(opt.num_classes >= 2, "build_architecture: num_classes must be >= 2");
  require(opt.width > 0, "build_architecture: width must be positive");
  switch (arch) {
    case ArchId::mini_plain: return detail::mini_plain<T>(opt);
    case ArchId::mini_residual: return detail::mini_residual<T>(opt);
    case ArchId::mini_dense: return detail::mini_dense<T>(opt);
    case ArchId::custom: break;
  }
  throw ArgumentError("build_architecture: no builder for architecture '" + to_string(arch) + "'");
}

}  // namespace fdlab::zoo
