#pragma once

#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <thread>

#include "fdlab/attacks/loss.hpp"

namespace fdlab::attacks {

template <typename T>
struct MomentumState {
  Tensor<T> m;

  MomentumState() = default;
  explicit MomentumState(const Shape& shape) : m(shape, T(0)) {}
};

template <typename T>
T sign(T v) {
  return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0));
}

namespace detail {

template <typename T>
void accumulate_normalized(std::span<T> m, std::span<const T> g) {
  T l1 = T(0);
  for (T v : g) l1 += std::abs(v);
  if (l1 == T(0)) return;
  for (std::size_t i = 0; i < m.size(); ++i) m[i] += g[i] / l1;
}

}  // namespace detail

/// m' = m + g / ||g||_1 over the whole tensor; m' = m when g = 0.
template <typename T>
MomentumState<T> momentum_update(MomentumState<T> state, const Tensor<T>& g) {
  require(state.m.shape() == g.shape(),
          "momentum_update: gradient shape " + shape_str(g.shape()) + " does not match " + shape_str(state.m.shape()));
  detail::accumulate_normalized<T>(state.m.values(), g.values());
  return state;
}

/// Batch form: each sample (leading index) is normalized by its own L1 norm.
template <typename T>
void momentum_update_batch(MomentumState<T>& state, const Tensor<T>& g) {
  require(state.m.shape() == g.shape(),
          "momentum_update: gradient shape " + shape_str(g.shape()) + " does not match " + shape_str(state.m.shape()));
  for (std::size_t i = 0; i < g.dim(0); ++i) detail::accumulate_normalized<T>(state.m.sample(i), g.sample(i));
}

/// Counts pixels the projection or the box clip actually moved.
struct StepStats {
  std::size_t projected = 0;
  std::size_t clipped = 0;
};

namespace detail {

template <typename T>
void step_span(std::span<const T> I, std::span<const T> m, std::span<const T> x0, std::span<T> out, T a, T eps,
               StepStats* stats) {
  // A projection that only undoes floating-point round-off is not counted.
  const T tol = T(8) * std::numeric_limits<T>::epsilon();
  for (std::size_t i = 0; i < I.size(); ++i) {
    const T stepped = I[i] - a * sign(m[i]);
    const T projected = std::clamp(stepped, x0[i] - eps, x0[i] + eps);
    const T clipped = std::clamp(projected, T(0), T(1));
    if (stats) {
      stats->projected += std::abs(projected - stepped) > tol;
      stats->clipped += clipped != projected;
    }
    out[i] = clipped;
  }
}

}  // namespace detail

/// I' = clip01(project_eps(I - alpha * sign(m), x0)).
template <typename T>
Tensor<T> perturb_step(const Tensor<T>& I, const MomentumState<T>& state, double alpha, double epsilon, const Tensor<T>& x0,
                       StepStats* stats = nullptr) {
  require(I.shape() == state.m.shape() && I.shape() == x0.shape(), "perturb_step: shape mismatch");
  Tensor<T> out(I.shape());
  detail::step_span<T>(I.values(), state.m.values(), x0.values(), out.values(), T(alpha), T(epsilon), stats);
  return out;
}

template <typename T>
Tensor<T> perturb_step(const Tensor<T>& I, const MomentumState<T>& state, const AttackSpec& spec, const Tensor<T>& x0,
                       StepStats* stats = nullptr) {
  return perturb_step(I, state, spec.alpha, spec.epsilon, x0, stats);
}

template <typename T>
struct AttackResult {
  std::size_t index = 0;  // caller-assigned instance id
  Tensor<T> x, x_adv, delta;
  std::vector<double> loss_trace;  // loss at I_0 ... I_K
  AttackSpec spec;                 // with this instance's y_src / y_tgt
  std::size_t projected_pixels = 0;

  double linf() const {
    double m = 0;
    for (T v : delta) m = std::max(m, std::abs(double(v)));
    return m;
  }
  double l2() const {
    double s = 0;
    for (T v : delta) s += double(v) * double(v);
    return std::sqrt(s);
  }
};

/// One attack instance: a clean image with its own class roles.
struct Instance {
  std::size_t index = 0;
  int y_src = 0;
  std::optional<int> y_tgt;
};

template <typename T>
struct AttackOptions {
  /// Samples processed together; fixed so results never depend on `jobs`.
  std::size_t chunk = 32;
  int jobs = 1;
};

namespace detail {

template <typename T>
std::vector<AttackResult<T>> run_chunk(const AttackSpec& tmpl, const zoo::TappedNetwork<T>& net,
                                       const auxtrain::AuxiliaryBank<T>* bank, const Tensor<T>& x0,
                                       std::span<const Instance> inst) {
  const std::size_t n = x0.dim(0);
  Targets who;
  for (const auto& in : inst) {
    who.y_src.push_back(in.y_src);
    who.y_tgt.push_back(in.y_tgt);
  }
  Tensor<T> I = x0;
  if (random_start(tmpl.variant)) {
    const std::size_t d = x0.sample_size();
    for (std::size_t i = 0; i < n; ++i) {
      Rng rng(mix_seed(tmpl.seed, 0x0a77ac4, inst[i].index));
      for (std::size_t j = 0; j < d; ++j)
        I[i * d + j] = std::clamp(T(double(x0[i * d + j]) + rng.uniform(-tmpl.epsilon, tmpl.epsilon)), T(0), T(1));
    }
  }
  std::optional<Tensor<T>> f0;
  if (uses_disruption(tmpl.variant)) f0 = net.forward_to_tap(x0, tmpl.tap);
  const Tensor<T>* f0p = f0 ? &*f0 : nullptr;

  std::vector<std::vector<double>> trace(n);
  MomentumState<T> state(x0.shape());
  std::vector<std::size_t> projected(n, 0);
  for (int k = 0; k <= tmpl.K; ++k) {
    const bool last = k == tmpl.K;
    LossEval<T> ev;
    try {
      ev = evaluate_loss(tmpl.variant, tmpl.objective_space, tmpl.lambda_weight, tmpl.eta, tmpl.tap, net, bank, I, who,
                         f0p, !last);
    } catch (const NumericError& e) {
      throw NumericError(std::string(e.what()) + " (instance " + std::to_string(inst.front().index) + "+, iteration " +
                         std::to_string(k) + ")");
    }
    for (std::size_t i = 0; i < n; ++i) trace[i].push_back(double(ev.loss[i]));
    if (last) break;
    if (uses_momentum(tmpl.variant)) {
      momentum_update_batch(state, ev.grad);
    } else {
      state.m = std::move(ev.grad);
    }
    Tensor<T> next(I.shape());
    for (std::size_t i = 0; i < n; ++i) {
      StepStats st;
      detail::step_span<T>(I.sample(i), state.m.sample(i), x0.sample(i), next.sample(i), T(tmpl.alpha), T(tmpl.epsilon),
                           &st);
      projected[i] += st.projected;
    }
    I = std::move(next);
  }

  std::vector<AttackResult<T>> out(n);
  const Shape sample_shape = x0.sample_shape();
  for (std::size_t i = 0; i < n; ++i) {
    auto& r = out[i];
    r.index = inst[i].index;
    r.spec = tmpl;
    r.spec.y_src = inst[i].y_src;
    r.spec.y_tgt = inst[i].y_tgt;
    const auto xs = x0.sample(i);
    const auto as = I.sample(i);
    r.x = Tensor<T>(sample_shape, std::vector<T>(xs.begin(), xs.end()));
    r.x_adv = Tensor<T>(sample_shape, std::vector<T>(as.begin(), as.end()));
    r.delta = Tensor<T>(sample_shape);
    for (std::size_t j = 0; j < r.delta.size(); ++j) r.delta[j] = r.x_adv[j] - r.x[j];
    r.loss_trace = std::move(trace[i]);
    r.projected_pixels = projected[i];
  }
  return out;
}

}  // namespace detail

/// Runs `tmpl` on every instance of the batch `x0` (one row per instance).
/// Per-instance random starts are seeded from (tmpl.seed, instance.index), and
/// chunks have a fixed size, so results are independent of `opt.jobs`.
template <typename T>
std::vector<AttackResult<T>> run_attack_instances(const AttackSpec& tmpl, const zoo::TappedNetwork<T>& net,
                                                  const auxtrain::AuxiliaryBank<T>* bank, const Tensor<T>& x0,
                                                  std::span<const Instance> instances, const AttackOptions<T>& opt = {}) {
  require(x0.dim(0) == instances.size(), "run_attack: one instance record per sample required");
  if (!is_baseline(tmpl.variant)) net.tap(tmpl.tap);
  for (const auto& in : instances) {
    AttackSpec s = tmpl;
    s.y_src = in.y_src;
    s.y_tgt = in.y_tgt;
    try {
      s.validate(net.num_classes());
    } catch (const ArgumentError& e) {
      throw ArgumentError("instance " + std::to_string(in.index) + ": " + e.what());
    }
    if (bank && uses_aux(tmpl.variant)) {
      const auto k = coefficients(tmpl.variant, tmpl.objective_space, tmpl.lambda_weight, tmpl.eta);
      if (k.needs_target()) bank->model(tmpl.tap, *in.y_tgt);
      if (k.needs_source()) bank->model(tmpl.tap, in.y_src);
    } else if (uses_aux(tmpl.variant)) {
      throw LookupError("attack " + to_string(tmpl.variant) + " needs an auxiliary bank");
    }
  }
  const std::size_t n = instances.size(), chunk = std::max<std::size_t>(1, opt.chunk);
  const std::size_t n_chunks = (n + chunk - 1) / chunk;
  std::vector<std::vector<AttackResult<T>>> parts(n_chunks);
  std::vector<std::exception_ptr> errors(n_chunks);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t c = next++; c < n_chunks; c = next++) {
      const std::size_t b = c * chunk, e = std::min(n, b + chunk);
      try {
        parts[c] = detail::run_chunk(tmpl, net, bank, slice_rows(x0, b, e), instances.subspan(b, e - b));
      } catch (...) {
        errors[c] = std::current_exception();
      }
    }
  };
  const int threads = std::max(1, std::min<int>(opt.jobs, int(n_chunks)));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < threads; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  std::vector<AttackResult<T>> out;
  out.reserve(n);
  for (auto& p : parts)
    for (auto& r : p) out.push_back(std::move(r));
  return out;
}

/// Attacks every sample of `batch` with spec.y_src / spec.y_tgt.
template <typename T>
std::vector<AttackResult<T>> run_attack(const AttackSpec& spec, const zoo::TappedNetwork<T>& net,
                                        const auxtrain::AuxiliaryBank<T>* bank, const Tensor<T>& batch,
                                        const AttackOptions<T>& opt = {}) {
  std::vector<Instance> inst(batch.dim(0));
  for (std::size_t i = 0; i < inst.size(); ++i) inst[i] = {i, spec.y_src, spec.y_tgt};
  return run_attack_instances(spec, net, bank, batch, inst, opt);
}

}  // namespace fdlab::attacks
