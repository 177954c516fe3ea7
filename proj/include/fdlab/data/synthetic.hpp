#pragma once

#include <array>
#include <cmath>
#include <numbers>

#include "fdlab/core/random.hpp"
#include "fdlab/data/dataset.hpp"

namespace fdlab::data {

/// Geometry recipes of the synthetic corpus; class k uses recipe k % 10.
enum class Pattern { disc, ring, cross, stripes_0, stripes_45, stripes_90, stripes_135, checker, triangle, corner_blob };

inline constexpr std::array<const char*, 10> kPatternNames = {
    "disc", "ring", "cross", "stripes_0", "stripes_45", "stripes_90", "stripes_135", "checker", "triangle", "corner_blob"};

namespace detail {

inline std::array<double, 3> hsv_to_rgb(double h, double s, double v) {
  h = h - std::floor(h);
  const double hh = h * 6.0;
  const int sector = int(hh) % 6;
  const double f = hh - std::floor(hh);
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  switch (sector) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

// Membership of the normalized point (u, v) in the pattern.
inline bool inside(Pattern p, double u, double v, int corner) {
  const double r = std::hypot(u, v);
  auto stripes = [&](double deg) {
    const double th = deg * std::numbers::pi / 180.0;
    const double t = u * std::cos(th) + v * std::sin(th);
    return std::abs(u) <= 1.2 && std::abs(v) <= 1.2 && std::sin(t * 2.0 * std::numbers::pi) > 0.0;
  };
  switch (p) {
    case Pattern::disc: return r <= 1.0;
    case Pattern::ring: return r <= 1.0 && r >= 0.55;
    case Pattern::cross: return (std::abs(u) <= 0.3 && std::abs(v) <= 1.0) || (std::abs(v) <= 0.3 && std::abs(u) <= 1.0);
    case Pattern::stripes_0: return stripes(0);
    case Pattern::stripes_45: return stripes(45);
    case Pattern::stripes_90: return stripes(90);
    case Pattern::stripes_135: return stripes(135);
    case Pattern::checker:
      return std::abs(u) <= 1.1 && std::abs(v) <= 1.1 &&
             (int(std::floor(u * 2.0)) + int(std::floor(v * 2.0))) % 2 == 0;
    case Pattern::triangle: return v <= 0.8 && v >= -1.0 + 1.8 * std::abs(u);
    case Pattern::corner_blob: {
      const double cu = (corner & 1) ? 1.1 : -1.1, cv = (corner & 2) ? 1.1 : -1.1;
      return std::hypot(u - cu, v - cv) <= 0.9;
    }
  }
  return false;
}

inline Tensor<float> render(int label, int side, Rng& rng) {
  const auto pattern = Pattern(label % 10);
  const double cycle = double(label / 10);
  const double px = side / 32.0;
  const double cx = side / 2.0 + rng.uniform(-4.0, 4.0) * px;
  const double cy = side / 2.0 + rng.uniform(-4.0, 4.0) * px;
  const double radius = side * 0.28 * rng.uniform(0.75, 1.25);
  const int corner = int(rng.integer(0, 3));

  const double hue = label * 0.1 + cycle * 0.037 + rng.uniform(-0.1, 0.1);
  const auto fg = hsv_to_rgb(hue, rng.uniform(0.6, 1.0), rng.uniform(0.65, 1.0));
  const auto bg = hsv_to_rgb(rng.uniform(0.0, 1.0), rng.uniform(0.0, 0.35), rng.uniform(0.1, 0.5));
  const double contrast = rng.uniform(0.3, 0.6);

  Tensor<float> img({3, std::size_t(side), std::size_t(side)});
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x) {
      // 2x2 supersampling for soft edges.
      int hits = 0;
      for (int sy = 0; sy < 2; ++sy)
        for (int sx = 0; sx < 2; ++sx) {
          const double u = (x + 0.25 + 0.5 * sx - cx) / radius;
          const double v = (y + 0.25 + 0.5 * sy - cy) / radius;
          hits += inside(pattern, u, v, corner) ? 1 : 0;
        }
      const double cover = hits / 4.0;
      for (int c = 0; c < 3; ++c) {
        double val = bg[c] + (fg[c] - bg[c]) * contrast * cover + rng.uniform(-0.05, 0.05);
        val = std::clamp(val, 0.0, 1.0);
        // 8-bit levels keep folder export lossless.
        img[(std::size_t(c) * side + y) * side + x] = float(std::lround(val * 255.0)) / 255.0f;
      }
    }
  return img;
}

}  // namespace detail

/// Procedural corpus of `per_class * num_classes` images {3, side, side}.
/// Image (class k, copy i) depends only on (seed, k, i).
inline Dataset generate_synthetic_corpus(std::uint64_t seed, int per_class, int num_classes, int side) {
  require(per_class >= 1, "generate_synthetic_corpus: per_class must be >= 1");
  require(num_classes >= 2, "generate_synthetic_corpus: num_classes must be >= 2");
  require(side >= 8, "generate_synthetic_corpus: side must be >= 8");
  Dataset ds;
  ds.num_classes = num_classes;
  ds.provenance = Provenance::synthetic;
  ds.seed = seed;
  for (int k = 0; k < num_classes; ++k) {
    std::string name = kPatternNames[k % 10];
    if (k >= 10) name += "_" + std::to_string(k / 10);
    std::string id = std::to_string(k);
    id.insert(0, id.size() < 3 ? 3 - id.size() : 0, '0');
    ds.class_names.push_back(id + "_" + name);
  }
  ds.items.reserve(std::size_t(per_class) * num_classes);
  for (int i = 0; i < per_class; ++i)
    for (int k = 0; k < num_classes; ++k) {
      Rng rng(mix_seed(seed, std::uint64_t(k), std::uint64_t(i)));
      ds.items.push_back({detail::render(k, side, rng), k});
    }
  return ds;
}

/// Train/test corpora drawn from one seed: copies [0, train_per_class) of
/// each class form the training set and the next `test_per_class` the test set.
inline std::pair<Dataset, Dataset> generate_train_test(std::uint64_t seed, int train_per_class, int test_per_class,
                                                       int num_classes, int side) {
  require(test_per_class >= 1, "generate_train_test: test_per_class must be >= 1");
  Dataset all = generate_synthetic_corpus(seed, train_per_class + test_per_class, num_classes, side);
  Dataset train = all, test = all;
  train.items.clear();
  test.items.clear();
  const std::size_t cut = std::size_t(train_per_class) * num_classes;
  for (std::size_t i = 0; i < all.items.size(); ++i) (i < cut ? train : test).items.push_back(std::move(all.items[i]));
  return {std::move(train), std::move(test)};
}

}  // namespace fdlab::data
