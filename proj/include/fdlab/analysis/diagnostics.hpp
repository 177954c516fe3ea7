#pragma once

#include <cmath>
#include <optional>

#include "fdlab/attacks/optimizer.hpp"
#include "fdlab/core/csv.hpp"
#include "fdlab/data/image_io.hpp"

namespace fdlab::analysis {

// ---- disruption --------------------------------------------------------

/// p(y_tgt | f_l(x_adv)) - p(y_tgt | f_l(x)) per sample.
template <typename T>
std::vector<T> disruption(const auxtrain::AuxiliaryBank<T>& bank, int tap, int y_tgt, const Tensor<T>& x,
                          const Tensor<T>& x_adv) {
  require(x.shape() == x_adv.shape(), "disruption: x and x_adv shapes differ");
  const auto before = auxtrain::aux_probability(bank, tap, y_tgt, x);
  const auto after = x_adv == x ? before : auxtrain::aux_probability(bank, tap, y_tgt, x_adv);
  std::vector<T> d(before.size());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = after[i] - before[i];
  return d;
}

/// Per-sample targets version: sample i is scored with the head of y_tgt[i].
template <typename T>
std::vector<T> disruption(const auxtrain::AuxiliaryBank<T>& bank, int tap, std::span<const int> y_tgt, const Tensor<T>& x,
                          const Tensor<T>& x_adv) {
  require(x.dim(0) == y_tgt.size(), "disruption: one target per sample required");
  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < y_tgt.size(); ++i) groups[y_tgt[i]].push_back(i);
  std::vector<T> out(y_tgt.size());
  for (const auto& [c, rows] : groups) {
    const auto d = disruption(bank, tap, c, gather_rows(x, rows), gather_rows(x_adv, rows));
    for (std::size_t r = 0; r < rows.size(); ++r) out[rows[r]] = d[r];
  }
  return out;
}

struct CurvePoint {
  int tap;
  double mean;
};

/// Mean disruption at every tap of the bank.
template <typename T>
std::vector<CurvePoint> disruption_curve(const auxtrain::AuxiliaryBank<T>& bank, std::span<const int> y_tgt,
                                         const Tensor<T>& x, const Tensor<T>& x_adv) {
  std::vector<CurvePoint> out;
  for (int tap : bank.taps()) {
    const auto d = disruption(bank, tap, y_tgt, x, x_adv);
    double s = 0;
    for (T v : d) s += double(v);
    out.push_back({tap, d.empty() ? 0.0 : s / double(d.size())});
  }
  return out;
}

// ---- discrepancy ---------------------------------------------------------

/// KL(softmax(a) || softmax(b)) in nats.
template <typename T>
T kl_softmax(std::span<const T> a, std::span<const T> b) {
  require(a.size() == b.size() && !a.empty(), "kl_softmax: size mismatch");
  const auto la = nn::log_softmax<T>(a), lb = nn::log_softmax<T>(b);
  T kl = 0;
  for (std::size_t i = 0; i < a.size(); ++i) kl += std::exp(la[i]) * (la[i] - lb[i]);
  return std::max(kl, T(0));
}

/// KL(P || Q) for explicit probability vectors (0 log 0 = 0).
inline double kl_divergence(std::span<const double> p, std::span<const double> q) {
  require(p.size() == q.size(), "kl_divergence: size mismatch");
  double kl = 0;
  for (std::size_t i = 0; i < p.size(); ++i)
    if (p[i] > 0) kl += p[i] * std::log(p[i] / q[i]);
  return kl;
}

inline double correlation_from_discrepancy(double d) { return 1.0 / (1.0 + d); }

/// Per-sample KL between the softmax of the auxiliary logits over the bank's
/// classes and the softmax of the whitebox logits restricted to those classes.
template <typename T>
std::vector<T> discrepancy(const auxtrain::AuxiliaryBank<T>& bank, const zoo::TappedNetwork<T>& net, int tap,
                           const Tensor<T>& x) {
  const auto classes = bank.classes(tap);
  require(!classes.empty(), "discrepancy: no auxiliary models at tap " + std::to_string(tap));
  const std::size_t n = x.dim(0), c = classes.size();
  nn::Tape<T> tape;
  const int deepest = std::max(tap, net.logit_tap().index);
  net.forward(x, deepest, tape);
  const auto feats = net.features(tape, tap);
  const auto logits = net.features(tape, net.logit_tap().index);
  Tensor<T> aux({n, c});
  for (std::size_t k = 0; k < c; ++k) {
    const auto z = bank.model(tap, classes[k]).logits(feats);
    for (std::size_t i = 0; i < n; ++i) aux[i * c + k] = z[i];
  }
  std::vector<T> out(n);
  std::vector<T> wl(c);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < c; ++k) wl[k] = logits[i * logits.sample_size() + std::size_t(classes[k])];
    out[i] = kl_softmax<T>(aux.sample(i), wl);
  }
  return out;
}

struct DiscrepancyRecord {
  int tap = 0;
  double discrepancy = 0;
  double correlation = 1;
  std::size_t n = 0;
};

template <typename T>
DiscrepancyRecord mean_discrepancy(const auxtrain::AuxiliaryBank<T>& bank, const zoo::TappedNetwork<T>& net, int tap,
                                   const Tensor<T>& x, std::size_t batch = 256) {
  double s = 0;
  for (std::size_t b = 0; b < x.dim(0); b += batch) {
    const auto d = discrepancy(bank, net, tap, slice_rows(x, b, std::min(x.dim(0), b + batch)));
    for (T v : d) s += double(v);
  }
  DiscrepancyRecord r;
  r.tap = tap;
  r.n = x.dim(0);
  r.discrepancy = r.n ? s / double(r.n) : 0.0;
  r.correlation = correlation_from_discrepancy(r.discrepancy);
  return r;
}

// ---- SmoothGrad ------------------------------------------------------------

template <typename T>
struct SaliencyMap {
  int tap = 0;
  int class_id = 0;
  Tensor<T> map;  // {H, W}, non-negative

  /// Copy scaled so the largest entry is 1 (all zeros stays zero).
  Tensor<T> normalized() const {
    Tensor<T> m = map;
    T mx = 0;
    for (T v : m) mx = std::max(mx, v);
    if (mx > T(0))
      for (auto& v : m) v /= mx;
    return m;
  }
};

/// Mean |d aux_logit / d x| over `n_samples` copies of the single image `x`
/// ({C,H,W}) with N(0, sigma^2) pixel noise, summed over channels. Noise of
/// copy j comes from its own stream, so the first n copies are shared by every
/// run with the same seed.
template <typename T>
SaliencyMap<T> smoothgrad_saliency(const auxtrain::AuxiliaryBank<T>& bank, int tap, int class_id, const Tensor<T>& x,
                                   double sigma, int n_samples, std::uint64_t seed, std::size_t batch = 32) {
  require(sigma >= 0 && std::isfinite(sigma), "smoothgrad: sigma must be non-negative");
  require(n_samples >= 1, "smoothgrad: n_samples must be at least 1");
  require(x.rank() == 3, "smoothgrad: expects one {C,H,W} image");
  bank.model(tap, class_id);
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2), d = x.size();
  Tensor<T> acc({d});
  for (std::size_t b = 0; b < std::size_t(n_samples); b += batch) {
    const std::size_t m = std::min(std::size_t(n_samples), b + batch) - b;
    Tensor<T> noisy({m, c, h, w});
    for (std::size_t j = 0; j < m; ++j) {
      Rng rng(mix_seed(seed, 0x5a11e, b + j));
      for (std::size_t k = 0; k < d; ++k)
        noisy[j * d + k] = x[k] + (sigma > 0 ? T(rng.normal(0.0, sigma)) : T(0));
    }
    const std::vector<T> ones(m, T(1));
    const auto g = auxtrain::aux_logit_input_gradient<T>(bank, tap, class_id, noisy, ones);
    for (std::size_t j = 0; j < m; ++j)
      for (std::size_t k = 0; k < d; ++k) acc[k] += std::abs(g[j * d + k]);
  }
  SaliencyMap<T> s{tap, class_id, Tensor<T>({h, w})};
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t k = 0; k < h * w; ++k) s.map[k] += acc[ch * h * w + k] / T(n_samples);
  return s;
}

/// Normalized L1 distance sum|a-b| / sum|b| between two maps.
template <typename T>
double normalized_l1(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.shape() == b.shape(), "normalized_l1: shape mismatch");
  double num = 0, den = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += std::abs(double(a[i]) - double(b[i]));
    den += std::abs(double(b[i]));
  }
  return den > 0 ? num / den : num;
}

/// Grid image: one row per sample, the clean image first, then one
/// max-normalized map per tap. Cells are `scale` times the map size.
template <typename T>
void write_saliency_grid(const std::filesystem::path& path, const std::vector<Tensor<T>>& images,
                         const std::vector<std::vector<SaliencyMap<T>>>& maps, std::size_t scale = 4) {
  require(!images.empty() && images.size() == maps.size(), "saliency grid: one row of maps per image");
  const std::size_t h = images[0].dim(1), w = images[0].dim(2), cols = 1 + maps[0].size(), pad = 2;
  const std::size_t cw = w * scale + pad, ch = h * scale + pad;
  data::Rgb8Image im{cols * cw + pad, images.size() * ch + pad, {}};
  im.rgb.assign(im.width * im.height * 3, 255);
  auto put = [&](std::size_t X, std::size_t Y, double r, double g, double b) {
    auto* p = &im.rgb[(Y * im.width + X) * 3];
    p[0] = std::uint8_t(std::lround(std::clamp(r, 0.0, 1.0) * 255));
    p[1] = std::uint8_t(std::lround(std::clamp(g, 0.0, 1.0) * 255));
    p[2] = std::uint8_t(std::lround(std::clamp(b, 0.0, 1.0) * 255));
  };
  for (std::size_t r = 0; r < images.size(); ++r) {
    const auto& x = images[r];
    const std::size_t c = x.dim(0);
    for (std::size_t y = 0; y < h * scale; ++y)
      for (std::size_t xx = 0; xx < w * scale; ++xx) {
        const std::size_t sy = y / scale, sx = xx / scale;
        auto px = [&](std::size_t k) { return double(x[((c == 3 ? k : 0) * h + sy) * w + sx]); };
        put(pad + xx, r * ch + pad + y, px(0), px(1), px(2));
      }
    for (std::size_t m = 0; m < maps[r].size(); ++m) {
      const auto nm = maps[r][m].normalized();
      for (std::size_t y = 0; y < h * scale; ++y)
        for (std::size_t xx = 0; xx < w * scale; ++xx) {
          const double v = double(nm[(y / scale) * w + xx / scale]);
          put((m + 1) * cw + pad + xx, r * ch + pad + y, v, v, v);
        }
    }
  }
  data::write_png(path, im);
}

// ---- separability ----------------------------------------------------------

struct DistanceParams {
  double step_size = 5e-5;
  double threshold = 0.999;
  int cap = 20000;
};

struct Distance {
  int steps = 0;
  bool censored = false;
};

/// Steps of the FDA update (momentum sign steps of `step_size`, no budget,
/// clipped to [0,1]) until p(class | f_tap) reaches the threshold, for every
/// (image row i, class cls[i]) pair. Rows are advanced together; a row stops
/// as soon as it crosses the threshold. Momentum starts at zero for each run.
template <typename T>
std::vector<Distance> class_distance_batch(const auxtrain::AuxiliaryBank<T>& bank, const zoo::TappedNetwork<T>& net,
                                           int tap, const Tensor<T>& x, std::span<const int> cls, const DistanceParams& p) {
  require(x.dim(0) == cls.size(), "class_distance: one class per image required");
  require(p.step_size > 0 && p.cap >= 0, "class_distance: step_size must be positive and cap non-negative");
  for (int c : cls) bank.model(tap, c);
  const std::size_t n = x.dim(0), d = x.sample_size();
  std::vector<Distance> out(n);
  std::vector<char> active(n, 1);
  Tensor<T> I = x;
  attacks::MomentumState<T> state(x.shape());
  const T thr = T(p.threshold), step = T(p.step_size);
  for (int k = 0;; ++k) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < n; ++i)
      if (active[i]) rows.push_back(i);
    if (rows.empty()) break;
    attacks::Targets who;
    for (std::size_t i : rows) {
      who.y_src.push_back(cls[i]);
      who.y_tgt.push_back(cls[i]);
    }
    const auto xi = gather_rows(I, rows);
    const bool can_step = k < p.cap;
    const auto ev = attacks::evaluate_loss<T>(attacks::Variant::fda, attacks::ObjectiveSpace::bce, 0.5, 0.0, tap, net, &bank,
                                              xi, who, nullptr, can_step);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const std::size_t i = rows[r];
      if (ev.p_target[r] >= thr) {
        out[i] = {k, false};
        active[i] = 0;
      } else if (!can_step) {
        out[i] = {k, true};
        active[i] = 0;
      }
    }
    if (!can_step) break;
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const std::size_t i = rows[r];
      if (!active[i]) continue;
      attacks::detail::accumulate_normalized<T>(state.m.sample(i), ev.grad.sample(r));
      auto Ii = I.sample(i);
      auto mi = state.m.sample(i);
      for (std::size_t j = 0; j < d; ++j) Ii[j] = std::clamp(Ii[j] - step * attacks::sign(mi[j]), T(0), T(1));
    }
  }
  return out;
}

/// Single-image form; `x` is {C,H,W} or {1,C,H,W}.
template <typename T>
Distance class_distance(const auxtrain::AuxiliaryBank<T>& bank, const zoo::TappedNetwork<T>& net, int tap,
                        const Tensor<T>& x, int class_id, const DistanceParams& p = {}) {
  Tensor<T> b = x;
  if (b.rank() == 3) {
    Shape s{1};
    s.insert(s.end(), x.shape().begin(), x.shape().end());
    b.reshape(s);
  }
  const int c[] = {class_id};
  return class_distance_batch(bank, net, tap, b, c, p).front();
}

struct SeparabilityReport {
  int tap = 0;
  double mean_intra = 0, mean_inter = 0;
  std::optional<double> separability;  // absent when either side is fully censored
  std::size_t runs = 0, censored = 0, intra_runs = 0, inter_runs = 0;

  bool all_censored() const { return runs > 0 && censored == runs; }
  double censored_fraction() const { return runs ? double(censored) / double(runs) : 0.0; }
};

/// Intra (class = y_src) and inter (every other bank class) distances for
/// each sample; censored runs are counted and left out of the means.
template <typename T>
SeparabilityReport separability(const auxtrain::AuxiliaryBank<T>& bank, const zoo::TappedNetwork<T>& net, int tap,
                                const Tensor<T>& x, std::span<const int> labels, const DistanceParams& p = {}) {
  require(x.dim(0) == labels.size(), "separability: one label per sample required");
  const auto classes = bank.classes(tap);
  std::vector<std::size_t> rows;
  std::vector<int> cls;
  std::vector<char> intra;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    require(std::find(classes.begin(), classes.end(), labels[i]) != classes.end(),
            "separability: sample class " + std::to_string(labels[i]) + " has no auxiliary model");
    for (int c : classes) {
      rows.push_back(i);
      cls.push_back(c);
      intra.push_back(c == labels[i]);
    }
  }
  const auto dist = class_distance_batch(bank, net, tap, gather_rows(x, rows), cls, p);
  SeparabilityReport r;
  r.tap = tap;
  double si = 0, se = 0;
  std::size_t ni = 0, ne = 0;
  for (std::size_t k = 0; k < dist.size(); ++k) {
    ++r.runs;
    (intra[k] ? r.intra_runs : r.inter_runs) += 1;
    if (dist[k].censored) {
      ++r.censored;
      continue;
    }
    if (intra[k]) {
      si += dist[k].steps;
      ++ni;
    } else {
      se += dist[k].steps;
      ++ne;
    }
  }
  r.mean_intra = ni ? si / double(ni) : 0.0;
  r.mean_inter = ne ? se / double(ne) : 0.0;
  if (ni > 0 && (ne > 0 || r.inter_runs == 0)) r.separability = r.mean_inter - r.mean_intra;
  return r;
}

// ---- tables ----------------------------------------------------------------

inline CsvTable disruption_table() {
  return {{"model", "attack", "source_tap", "tap", "mean_disruption", "n"}, {}};
}
inline CsvTable discrepancy_table() { return {{"model", "tap", "discrepancy", "correlation", "n"}, {}}; }
inline CsvTable separability_table() {
  return {{"model", "tap", "mean_intra", "mean_inter", "separability", "runs", "censored"}, {}};
}

inline std::vector<std::string> to_row(const std::string& model, const DiscrepancyRecord& r) {
  return {model, std::to_string(r.tap), fmt(r.discrepancy), fmt(r.correlation), std::to_string(r.n)};
}
inline std::vector<std::string> to_row(const std::string& model, const SeparabilityReport& r) {
  return {model,
          std::to_string(r.tap),
          fmt(r.mean_intra),
          fmt(r.mean_inter),
          r.separability ? fmt(*r.separability) : "undefined",
          std::to_string(r.runs),
          std::to_string(r.censored)};
}

}  // namespace fdlab::analysis
