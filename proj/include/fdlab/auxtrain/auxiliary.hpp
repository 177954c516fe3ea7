#pragma once

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <thread>

#include "fdlab/data/dataset.hpp"
#include "fdlab/data/folder.hpp"
#include "fdlab/nn/loss.hpp"
#include "fdlab/nn/optim.hpp"
#include "fdlab/zoo/checkpoint.hpp"
#include "fdlab/zoo/network.hpp"

namespace fdlab::auxtrain {

namespace fs = std::filesystem;

struct AuxConfig {
  int epochs = 10;
  int batch_size = 256;
  double learning_rate = 1e-3;
  int hidden = 200;
  /// Largest flattened feature length fed to the first dense layer. Larger
  /// maps are spatially average-pooled first; 0 disables the cap.
  std::size_t max_input_dim = 0;
  /// Fraction of the training set held out for the reported binary accuracy.
  double validation_fraction = 0.1;
  /// Weight positives by (#negatives / #positives) in the cross-entropy.
  bool balance_classes = true;
  std::uint64_t seed = 2;
  /// Batch size used for feature extraction through the frozen network.
  std::size_t extract_batch = 256;
};

/// One-vs-all head g_{l,c}: dense(200)-ReLU-dense(200)-ReLU-dense(1) on the
/// flattened tap activation; the output logit is squashed by a sigmoid.
template <typename T>
class AuxiliaryModel {
 public:
  AuxiliaryModel() = default;
  AuxiliaryModel(int tap, int class_id, nn::Graph<T> mlp, std::size_t input_dim, std::size_t pool)
      : tap_(tap), class_id_(class_id), mlp_(std::move(mlp)), input_dim_(input_dim), pool_(pool) {}

  static AuxiliaryModel create(int tap, int class_id, const Shape& feature_shape, const AuxConfig& cfg, Rng& rng) {
    const std::size_t dim = numel(feature_shape);
    std::size_t pool = 1;
    if (cfg.max_input_dim > 0 && dim > cfg.max_input_dim && feature_shape.size() == 3) {
      while (feature_shape[0] * (feature_shape[1] / (2 * pool)) * (feature_shape[2] / (2 * pool)) > 0 &&
             feature_shape[0] * (feature_shape[1] / pool) * (feature_shape[2] / pool) > cfg.max_input_dim)
        pool *= 2;
    }
    nn::Graph<T> g(feature_shape);
    int x = 0;
    if (pool > 1) x = g.add(std::make_unique<nn::AvgPool<T>>(pool), x, "pool");
    const std::size_t in = numel(g.shape(x));
    const auto hidden = std::size_t(cfg.hidden);
    x = g.add(std::make_unique<nn::Linear<T>>(in, hidden), x, "fc1");
    x = g.add(std::make_unique<nn::Relu<T>>(), x);
    x = g.add(std::make_unique<nn::Linear<T>>(hidden, hidden), x, "fc2");
    x = g.add(std::make_unique<nn::Relu<T>>(), x);
    g.add(std::make_unique<nn::Linear<T>>(hidden, 1), x, "out");
    g.init(rng);
    return AuxiliaryModel(tap, class_id, std::move(g), dim, pool);
  }

  int tap() const { return tap_; }
  int class_id() const { return class_id_; }
  std::size_t input_dim() const { return input_dim_; }
  std::size_t pool() const { return pool_; }
  const nn::Graph<T>& graph() const { return mlp_; }
  nn::Graph<T>& graph() { return mlp_; }

  /// Pre-sigmoid outputs for flattened features {N, input_dim}.
  std::vector<T> logits(const Tensor<T>& features) const {
    nn::Tape<T> tape;
    return forward(features, tape);
  }

  std::vector<T> probabilities(const Tensor<T>& features) const {
    auto z = logits(features);
    for (auto& v : z) v = nn::sigmoid(v);
    return z;
  }

  std::vector<T> forward(const Tensor<T>& features, nn::Tape<T>& tape) const {
    require(features.sample_size() == input_dim_, "auxiliary model expects " + std::to_string(input_dim_) +
                                                     " features, got " + std::to_string(features.sample_size()));
    Tensor<T> x = features;
    x.reshape(detail_with_batch(features.dim(0)));
    mlp_.forward(x, mlp_.last(), false, tape);
    const auto& out = tape.out[mlp_.last()];
    return {out.begin(), out.end()};
  }

  /// d loss / d features given d loss / d logit per sample.
  Tensor<T> backward(const nn::Tape<T>& tape, std::span<const T> dlogit) const {
    Tensor<T> seed({dlogit.size(), 1}, std::vector<T>(dlogit.begin(), dlogit.end()));
    Tensor<T> g = mlp_.backward(tape, mlp_.last(), seed, nullptr, true);
    g.reshape({dlogit.size(), input_dim_});
    return g;
  }

  template <typename U>
  AuxiliaryModel<U> cast() const {
    return AuxiliaryModel<U>(tap_, class_id_, mlp_.template cast<U>(), input_dim_, pool_);
  }

 private:
  Shape detail_with_batch(std::size_t n) const {
    Shape s{n};
    const auto& in = mlp_.input_shape();
    s.insert(s.end(), in.begin(), in.end());
    return s;
  }

  int tap_ = 0;
  int class_id_ = 0;
  nn::Graph<T> mlp_;
  std::size_t input_dim_ = 0;
  std::size_t pool_ = 1;
};

/// Frozen features of a dataset at one tap, {N, D}.
template <typename T>
Tensor<T> extract_features(const zoo::TappedNetwork<T>& net, int tap, const data::Dataset& ds,
                           std::size_t batch = 256) {
  const std::size_t d = net.feature_size(tap);
  Tensor<T> out({ds.size(), d});
  for (std::size_t b = 0; b < ds.size(); b += batch) {
    std::vector<std::size_t> idx;
    for (std::size_t i = b; i < std::min(ds.size(), b + batch); ++i) idx.push_back(i);
    const auto f = net.forward_to_tap(ds.images<T>(idx), tap);
    std::copy(f.begin(), f.end(), out.data() + b * d);
  }
  return out;
}

struct AuxTrainResult {
  double validation_accuracy = 0;
  double majority_baseline = 0;
  std::vector<double> loss_curve;
};

namespace detail {

// Adam on weighted binary cross-entropy over precomputed features.
template <typename T>
AuxTrainResult fit(AuxiliaryModel<T>& model, const Tensor<T>& feats, std::span<const int> labels,
                   std::span<const std::size_t> train_rows, std::span<const std::size_t> val_rows,
                   const AuxConfig& cfg, std::uint64_t seed) {
  const int c = model.class_id();
  std::size_t pos = 0;
  for (std::size_t r : train_rows) pos += labels[r] == c;
  const std::size_t neg = train_rows.size() - pos;
  const T pos_weight = (cfg.balance_classes && pos > 0) ? T(double(neg) / double(pos)) : T(1);

  auto& g = model.graph();
  nn::Adam<T> opt(g.parameters());
  nn::Tape<T> tape;
  std::vector<std::size_t> order(train_rows.begin(), train_rows.end());
  AuxTrainResult res;
  Shape in_shape{0};
  in_shape.insert(in_shape.end(), g.input_shape().begin(), g.input_shape().end());
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng rng(mix_seed(seed, 0x5eed, std::uint64_t(epoch)));
    rng.shuffle(order.begin(), order.end());
    double total = 0;
    for (std::size_t b = 0; b < order.size(); b += std::size_t(cfg.batch_size)) {
      std::span<const std::size_t> idx(order.data() + b, std::min(order.size() - b, std::size_t(cfg.batch_size)));
      Tensor<T> x = gather_rows(feats, idx);
      in_shape[0] = idx.size();
      x.reshape(in_shape);
      g.forward(x, g.last(), true, tape);
      const auto& z = tape.out[g.last()];
      Tensor<T> dz({idx.size(), 1});
      for (std::size_t i = 0; i < idx.size(); ++i) {
        const auto [l, d] = nn::weighted_bce_logit(z[i], T(labels[idx[i]] == c ? 1 : 0), pos_weight);
        total += double(l);
        dz[i] = d / T(idx.size());
      }
      auto grads = g.zero_grads();
      g.backward(tape, g.last(), dz, &grads, false);
      opt.step(grads, cfg.learning_rate);
    }
    const double mean = total / double(std::max<std::size_t>(1, order.size()));
    if (!std::isfinite(mean))
      throw TrainingDiverged("auxiliary training diverged (tap " + std::to_string(model.tap()) + ", class " +
                             std::to_string(c) + ") at epoch " + std::to_string(epoch));
    res.loss_curve.push_back(mean);
  }
  std::size_t ok = 0, val_pos = 0;
  if (!val_rows.empty()) {
    const auto z = model.logits(gather_rows(feats, val_rows));
    for (std::size_t i = 0; i < val_rows.size(); ++i) {
      const bool is_c = labels[val_rows[i]] == c;
      val_pos += is_c;
      ok += (z[i] > T(0)) == is_c;
    }
    res.validation_accuracy = double(ok) / double(val_rows.size());
    res.majority_baseline = double(std::max(val_pos, val_rows.size() - val_pos)) / double(val_rows.size());
  }
  return res;
}

// Stratified train/validation partition of row ids.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> holdout(std::span<const int> labels, int num_classes,
                                                                             double fraction, std::uint64_t seed) {
  std::vector<std::vector<std::size_t>> by_class(num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  std::vector<char> val(labels.size(), 0);
  Rng rng(seed);
  for (auto& v : by_class) {
    rng.shuffle(v.begin(), v.end());
    const auto k = std::size_t(std::llround(fraction * double(v.size())));
    for (std::size_t j = 0; j < k && j < v.size(); ++j) val[v[j]] = 1;
  }
  std::vector<std::size_t> tr, va;
  for (std::size_t i = 0; i < labels.size(); ++i) (val[i] ? va : tr).push_back(i);
  return {tr, va};
}

}  // namespace detail

inline std::uint64_t job_seed(std::uint64_t base, int tap, int class_id) {
  return mix_seed(base, std::uint64_t(tap) + 1, std::uint64_t(class_id) + 1);
}

/// Trains g_{tap,class} on frozen features of `train` (inference-mode network).
template <typename T>
std::pair<AuxiliaryModel<T>, AuxTrainResult> train_auxiliary(const zoo::TappedNetwork<T>& net, int tap, int class_id,
                                                             const data::Dataset& train, const AuxConfig& cfg) {
  net.tap(tap);
  require(class_id >= 0 && class_id < net.num_classes(), "train_auxiliary: class " + std::to_string(class_id) + " out of range");
  require(!train.empty(), "train_auxiliary: empty training set");
  const auto feats = extract_features(net, tap, train, cfg.extract_batch);
  const auto labels = train.labels(iota_indices(train.size()));
  const auto [tr, va] = detail::holdout(labels, train.num_classes, cfg.validation_fraction, cfg.seed);
  const auto seed = job_seed(cfg.seed, tap, class_id);
  Rng rng(seed);
  auto model = AuxiliaryModel<T>::create(tap, class_id, net.feature_shape(tap), cfg, rng);
  auto res = detail::fit(model, feats, labels, tr, va, cfg, seed);
  return {std::move(model), std::move(res)};
}

/// Grid of auxiliary heads over taps x classes bound to one whitebox network.
template <typename T>
class AuxiliaryBank {
 public:
  struct Failure {
    int tap;
    int class_id;
    std::string message;
  };

  AuxiliaryBank() = default;
  explicit AuxiliaryBank(std::shared_ptr<const zoo::TappedNetwork<T>> whitebox) : whitebox_(std::move(whitebox)) {}

  const zoo::TappedNetwork<T>& whitebox() const {
    if (!whitebox_) throw LookupError("auxiliary bank has no whitebox network");
    return *whitebox_;
  }
  std::shared_ptr<const zoo::TappedNetwork<T>> whitebox_ptr() const { return whitebox_; }

  bool contains(int tap, int class_id) const { return models_.count({tap, class_id}) > 0; }
  const AuxiliaryModel<T>& model(int tap, int class_id) const {
    auto it = models_.find({tap, class_id});
    if (it == models_.end())
      throw LookupError("no auxiliary model for (tap " + std::to_string(tap) + ", class " + std::to_string(class_id) + ")");
    return it->second;
  }
  void insert(AuxiliaryModel<T> m, double validation_accuracy) {
    const std::pair<int, int> key{m.tap(), m.class_id()};
    accuracy_[key] = validation_accuracy;
    models_.insert_or_assign(key, std::move(m));
  }
  double validation_accuracy(int tap, int class_id) const {
    model(tap, class_id);
    return accuracy_.at({tap, class_id});
  }

  std::size_t size() const { return models_.size(); }
  std::vector<int> taps() const {
    std::vector<int> t;
    for (const auto& [k, _] : models_)
      if (t.empty() || t.back() != k.first) t.push_back(k.first);
    return t;
  }
  std::vector<int> classes(int tap) const {
    std::vector<int> c;
    for (const auto& [k, _] : models_)
      if (k.first == tap) c.push_back(k.second);
    return c;
  }
  /// Union of classes over all taps.
  std::vector<int> classes() const {
    std::vector<int> c;
    for (const auto& [k, _] : models_)
      if (std::find(c.begin(), c.end(), k.second) == c.end()) c.push_back(k.second);
    std::sort(c.begin(), c.end());
    return c;
  }
  const std::map<std::pair<int, int>, AuxiliaryModel<T>>& models() const { return models_; }
  std::vector<Failure>& failures() { return failures_; }
  const std::vector<Failure>& failures() const { return failures_; }

  double mean_accuracy(int tap) const {
    double s = 0;
    int n = 0;
    for (const auto& [k, v] : accuracy_)
      if (k.first == tap) {
        s += v;
        ++n;
      }
    return n ? s / n : 0.0;
  }

  template <typename U>
  AuxiliaryBank<U> cast() const {
    AuxiliaryBank<U> b(whitebox_ ? std::make_shared<const zoo::TappedNetwork<U>>(whitebox_->template cast<U>()) : nullptr);
    for (const auto& [k, m] : models_) b.insert(m.template cast<U>(), accuracy_.at(k));
    return b;
  }

  /// Same models bound to another whitebox instance (e.g. a reloaded checkpoint).
  void rebind(std::shared_ptr<const zoo::TappedNetwork<T>> whitebox) { whitebox_ = std::move(whitebox); }

 private:
  std::shared_ptr<const zoo::TappedNetwork<T>> whitebox_;
  std::map<std::pair<int, int>, AuxiliaryModel<T>> models_;
  std::map<std::pair<int, int>, double> accuracy_;
  std::vector<Failure> failures_;
};

/// Trains |taps| x |classes| independent heads. Jobs within a tap share the
/// extracted features and run on up to `jobs` threads; every job has its own
/// seed so the result does not depend on scheduling. Failed jobs are listed
/// in `failures()` rather than dropped.
template <typename T>
AuxiliaryBank<T> train_bank(std::shared_ptr<const zoo::TappedNetwork<T>> net, std::vector<int> taps,
                            std::vector<int> classes, const data::Dataset& train, const AuxConfig& cfg,
                            int jobs = 1, std::function<void(int, int, double)> on_done = {}) {
  require(net != nullptr, "train_bank: null network");
  for (int t : taps) net->tap(t);
  for (int c : classes)
    require(c >= 0 && c < net->num_classes(), "train_bank: class " + std::to_string(c) + " out of range");
  AuxiliaryBank<T> bank(net);
  const auto labels = train.labels(iota_indices(train.size()));
  const auto [tr, va] = detail::holdout(labels, train.num_classes, cfg.validation_fraction, cfg.seed);
  std::mutex mu;
  for (int tap : taps) {
    const auto feats = extract_features(*net, tap, train, cfg.extract_batch);
    std::vector<std::optional<std::pair<AuxiliaryModel<T>, double>>> done(classes.size());
    std::vector<std::string> errors(classes.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
      for (std::size_t j = next++; j < classes.size(); j = next++) {
        const int c = classes[j];
        try {
          const auto seed = job_seed(cfg.seed, tap, c);
          Rng rng(seed);
          auto model = AuxiliaryModel<T>::create(tap, c, net->feature_shape(tap), cfg, rng);
          auto res = detail::fit(model, feats, labels, tr, va, cfg, seed);
          done[j].emplace(std::move(model), res.validation_accuracy);
          if (on_done) {
            std::lock_guard lock(mu);
            on_done(tap, c, res.validation_accuracy);
          }
        } catch (const std::exception& e) {
          errors[j] = e.what();
        }
      }
    };
    const int n_threads = std::max(1, std::min<int>(jobs, int(classes.size())));
    if (n_threads == 1) {
      worker();
    } else {
      std::vector<std::thread> pool;
      for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker);
      for (auto& th : pool) th.join();
    }
    for (std::size_t j = 0; j < classes.size(); ++j) {
      if (done[j]) bank.insert(std::move(done[j]->first), done[j]->second);
      else bank.failures().push_back({tap, classes[j], errors[j]});
    }
  }
  return bank;
}

/// p(y = class | f_tap(x)) per sample of the image batch `x`.
template <typename T>
std::vector<T> aux_probability(const AuxiliaryBank<T>& bank, int tap, int class_id, const Tensor<T>& x) {
  const auto& m = bank.model(tap, class_id);
  return m.probabilities(bank.whitebox().forward_to_tap(x, tap));
}

/// Pre-sigmoid auxiliary outputs per sample.
template <typename T>
std::vector<T> aux_logit(const AuxiliaryBank<T>& bank, int tap, int class_id, const Tensor<T>& x) {
  return bank.model(tap, class_id).logits(bank.whitebox().forward_to_tap(x, tap));
}

/// Gradient of sum_i w_i * logit_i with respect to the input pixels.
template <typename T>
Tensor<T> aux_logit_input_gradient(const AuxiliaryBank<T>& bank, int tap, int class_id, const Tensor<T>& x,
                                   std::span<const T> weights) {
  const auto& net = bank.whitebox();
  const auto& m = bank.model(tap, class_id);
  nn::Tape<T> net_tape, aux_tape;
  net.forward(x, tap, net_tape);
  m.forward(net.features(net_tape, tap), aux_tape);
  return net.backward_input(net_tape, tap, m.backward(aux_tape, weights));
}

// Persistence: one archive per (tap, class) plus manifest.json.

template <typename T>
void save_bank(const AuxiliaryBank<T>& bank, const fs::path& dir, const nlohmann::json& extra = nlohmann::json::object()) {
  fs::create_directories(dir);
  nlohmann::json models = nlohmann::json::array();
  bool pooled = false;
  for (const auto& [key, m] : bank.models()) {
    const std::string file = "tap" + std::to_string(key.first) + "_class" + std::to_string(key.second) + ".weights";
    TensorArchive ar;
    m.graph().store(ar, "");
    ar.save(dir / file);
    pooled = pooled || m.pool() > 1;
    models.push_back({{"tap", key.first},
                      {"class", key.second},
                      {"file", file},
                      {"input_dim", m.input_dim()},
                      {"pool", m.pool()},
                      {"graph", zoo::describe_graph(m.graph())},
                      {"validation_accuracy", bank.validation_accuracy(key.first, key.second)}});
  }
  nlohmann::json failures = nlohmann::json::array();
  for (const auto& f : bank.failures()) failures.push_back({{"tap", f.tap}, {"class", f.class_id}, {"error", f.message}});
  nlohmann::json deviations = nlohmann::json::array();
  if (pooled) deviations.push_back("spatial average pooling inserted before oversized feature maps (see models[].pool)");
  std::vector<int> taps = bank.taps();
  nlohmann::json m = {{"whitebox_arch", zoo::to_string(bank.whitebox().arch())},
                      {"taps", taps},
                      {"classes", bank.classes()},
                      {"models", models},
                      {"failures", failures},
                      {"deviations", deviations},
                      {"extra", extra}};
  std::ofstream(dir / "manifest.json") << m.dump(2) << '\n';
}

template <typename T>
AuxiliaryBank<T> load_bank(const fs::path& dir, std::shared_ptr<const zoo::TappedNetwork<T>> whitebox) {
  const auto m = zoo::read_manifest(dir / "manifest.json");
  AuxiliaryBank<T> bank(std::move(whitebox));
  try {
    for (const auto& e : m.at("models")) {
      auto g = zoo::graph_from_description<T>(e.at("graph"));
      g.restore(TensorArchive::load(dir / e.at("file").get<std::string>()), "");
      bank.insert(AuxiliaryModel<T>(e.at("tap").get<int>(), e.at("class").get<int>(), std::move(g),
                                    e.at("input_dim").get<std::size_t>(), e.at("pool").get<std::size_t>()),
                  e.at("validation_accuracy").get<double>());
    }
    for (const auto& f : m.at("failures"))
      bank.failures().push_back({f.at("tap").get<int>(), f.at("class").get<int>(), f.at("error").get<std::string>()});
  } catch (const nlohmann::json::exception& e) {
    throw LoadError("malformed bank manifest in " + dir.string() + ": " + e.what());
  }
  return bank;
}

}  // namespace fdlab::auxtrain
