#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "fdlab/attacks/spec.hpp"
#include "fdlab/auxtrain/auxiliary.hpp"

namespace fdlab::attacks {

inline constexpr double bce_clamp = 1e-7;
inline constexpr double disruption_smoothing = 1e-12;

/// BCE(p, target) with p clamped to [1e-7, 1 - 1e-7].
template <typename T>
T bce(T p, int target) {
  const T pc = std::clamp(p, T(bce_clamp), T(1 - bce_clamp));
  return target == 1 ? -std::log(pc) : -std::log(T(1) - pc);
}

/// d BCE(sigmoid(z), target) / dz of the unclamped logistic loss. The clamp
/// bounds the value only; a saturated head still gets a descent direction.
template <typename T>
T bce_dlogit(T p, int target) {
  return target == 1 ? p - T(1) : p;
}

/// The loss as a linear combination of its terms:
/// L = a_t BCE(p_t,1) + a_s BCE(p_s,0) + b_t p_t + b_s p_s + c D.
struct LossCoefficients {
  double a_t = 0, a_s = 0, b_t = 0, b_s = 0, c = 0;
  bool needs_target() const { return a_t != 0 || b_t != 0; }
  bool needs_source() const { return a_s != 0 || b_s != 0; }
};

inline LossCoefficients coefficients(Variant v, ObjectiveSpace space, double lambda, double eta) {
  LossCoefficients k;
  const bool bce_space = space == ObjectiveSpace::bce;
  switch (v) {
    case Variant::fda: (bce_space ? k.a_t : k.b_t) = bce_space ? 1 : -1; break;
    case Variant::fda_ms:
      if (bce_space) {
        k.a_t = lambda;
        k.a_s = 1 - lambda;
      } else {
        k.b_t = -lambda;
        k.b_s = 1 - lambda;
      }
      break;
    case Variant::fda_fd:
      (bce_space ? k.a_t : k.b_t) = bce_space ? 1 : -1;
      k.c = -eta;
      break;
    case Variant::ufda: (bce_space ? k.a_s : k.b_s) = 1; break;
    case Variant::ufda_fd:
      (bce_space ? k.a_s : k.b_s) = 1;
      k.c = -eta;
      break;
    case Variant::fd_only: k.c = -1; break;
    default: break;
  }
  return k;
}

/// Loss from already-computed probabilities and disruption (no gradient).
template <typename T>
T compose_loss(const LossCoefficients& k, T p_t, T p_s, T d) {
  T l = T(0);
  if (k.a_t != 0) l += T(k.a_t) * bce(p_t, 1);
  if (k.a_s != 0) l += T(k.a_s) * bce(p_s, 0);
  l += T(k.b_t) * p_t + T(k.b_s) * p_s + T(k.c) * d;
  return l;
}

/// ||f - f0|| / (||f0|| + 1e-12) per row of {N, D} feature matrices.
template <typename T>
std::vector<T> feature_disruption(const Tensor<T>& f, const Tensor<T>& f0) {
  require(f.shape() == f0.shape(), "feature_disruption: shape mismatch");
  const std::size_t n = f.dim(0), d = f.sample_size();
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    T num = 0, den = 0;
    for (std::size_t j = 0; j < d; ++j) {
      const T diff = f[i * d + j] - f0[i * d + j];
      num += diff * diff;
      den += f0[i * d + j] * f0[i * d + j];
    }
    out[i] = std::sqrt(num) / (std::sqrt(den) + T(disruption_smoothing));
  }
  return out;
}

/// Per-sample class roles of an attack batch.
struct Targets {
  std::vector<int> y_src;
  std::vector<std::optional<int>> y_tgt;
};

template <typename T>
struct LossEval {
  std::vector<T> loss;
  Tensor<T> grad;  // d loss_i / d x_i, empty unless requested
  std::vector<T> p_target, p_source, disruption;
};

/// Evaluates the attack loss for a batch where every sample has its own
/// (y_src, y_tgt). `f_orig` holds the tap features of the clean batch and is
/// required by the disruption variants. No spec validation happens here.
template <typename T>
LossEval<T> evaluate_loss(Variant variant, ObjectiveSpace space, double lambda, double eta, int tap,
                          const zoo::TappedNetwork<T>& net, const auxtrain::AuxiliaryBank<T>* bank,
                          const Tensor<T>& x, const Targets& who, const Tensor<T>* f_orig, bool want_grad) {
  const std::size_t n = x.dim(0);
  require(who.y_src.size() == n && who.y_tgt.size() == n, "attack loss: one target record per sample required");
  LossEval<T> ev;
  ev.loss.assign(n, T(0));
  nn::Tape<T> tape;

  if (is_baseline(variant)) {
    const int logit = net.logit_tap().index;
    net.forward(x, logit, tape);
    const Tensor<T> z = net.features(tape, logit);
    std::vector<int> labels(n);
    const bool targeted = is_targeted(variant);
    for (std::size_t i = 0; i < n; ++i) {
      if (targeted && !who.y_tgt[i]) throw ArgumentError("sample " + std::to_string(i) + ": missing y_tgt");
      labels[i] = targeted ? *who.y_tgt[i] : who.y_src[i];
    }
    Tensor<T> dz;
    auto ce = nn::softmax_cross_entropy(z, labels, want_grad ? &dz : nullptr);
    const T sgn = targeted ? T(1) : T(-1);
    for (std::size_t i = 0; i < n; ++i) ev.loss[i] = sgn * ce[i];
    if (want_grad) {
      for (auto& v : dz) v *= sgn;
      ev.grad = net.backward_input(tape, logit, dz);
    }
  } else {
    const auto k = coefficients(variant, space, lambda, eta);
    net.forward(x, tap, tape);
    const Tensor<T> f = net.features(tape, tap);
    const std::size_t d = f.sample_size();
    Tensor<T> df;
    if (want_grad) df.reset(f.shape());
    ev.p_target.assign(n, T(0));
    ev.p_source.assign(n, T(0));
    ev.disruption.assign(n, T(0));

    // One pass per (role, class): rows sharing a class share an auxiliary head.
    auto aux_term = [&](bool target_role) {
      const double a = target_role ? k.a_t : k.a_s, b = target_role ? k.b_t : k.b_s;
      if (a == 0 && b == 0) return;
      if (!bank) throw LookupError("attack " + to_string(variant) + " needs an auxiliary bank");
      std::map<int, std::vector<std::size_t>> groups;
      for (std::size_t i = 0; i < n; ++i) {
        if (target_role && !who.y_tgt[i]) throw ArgumentError("sample " + std::to_string(i) + ": missing y_tgt");
        groups[target_role ? *who.y_tgt[i] : who.y_src[i]].push_back(i);
      }
      for (const auto& [cls, rows] : groups) {
        const auto& model = bank->model(tap, cls);
        nn::Tape<T> aux_tape;
        const auto z = model.forward(gather_rows(f, rows), aux_tape);
        std::vector<T> dz(rows.size());
        for (std::size_t r = 0; r < rows.size(); ++r) {
          const T p = nn::sigmoid(z[r]);
          const std::size_t i = rows[r];
          (target_role ? ev.p_target : ev.p_source)[i] = p;
          if (a != 0) ev.loss[i] += T(a) * bce(p, target_role ? 1 : 0);
          ev.loss[i] += T(b) * p;
          dz[r] = T(a) * bce_dlogit(p, target_role ? 1 : 0) + T(b) * p * (T(1) - p);
        }
        if (want_grad) {
          const auto g = model.backward(aux_tape, dz);
          for (std::size_t r = 0; r < rows.size(); ++r)
            for (std::size_t j = 0; j < d; ++j) df[rows[r] * d + j] += g[r * d + j];
        }
      }
    };
    aux_term(true);
    aux_term(false);

    if (k.c != 0) {
      require(f_orig != nullptr, "attack " + to_string(variant) + " needs clean features");
      require(f_orig->shape() == f.shape(), "attack loss: clean feature shape mismatch");
      for (std::size_t i = 0; i < n; ++i) {
        T num = 0, den = 0;
        for (std::size_t j = 0; j < d; ++j) {
          const T diff = f[i * d + j] - (*f_orig)[i * d + j];
          num += diff * diff;
          den += (*f_orig)[i * d + j] * (*f_orig)[i * d + j];
        }
        const T dist = std::sqrt(num), scale = std::sqrt(den) + T(disruption_smoothing);
        ev.disruption[i] = dist / scale;
        ev.loss[i] += T(k.c) * ev.disruption[i];
        if (want_grad && dist > T(0)) {
          const T w = T(k.c) / (dist * scale);
          for (std::size_t j = 0; j < d; ++j) df[i * d + j] += w * (f[i * d + j] - (*f_orig)[i * d + j]);
        }
      }
    }
    if (want_grad) ev.grad = net.backward_input(tape, tap, df);
  }

  for (std::size_t i = 0; i < n; ++i)
    if (!std::isfinite(double(ev.loss[i])))
      throw NumericError("attack " + to_string(variant) + ": non-finite loss at sample " + std::to_string(i));
  return ev;
}

/// Loss (and optionally its input gradient) of `spec` for every sample of
/// `x_current`; all samples use spec.y_src / spec.y_tgt.
template <typename T>
LossEval<T> attack_loss(const AttackSpec& spec, const zoo::TappedNetwork<T>& net, const auxtrain::AuxiliaryBank<T>* bank,
                        const Tensor<T>& x_current, const Tensor<T>& x_orig, bool want_grad = true) {
  spec.validate(net.num_classes());
  require(x_current.shape() == x_orig.shape(), "attack_loss: x_current and x_orig shapes differ");
  if (!is_baseline(spec.variant)) net.tap(spec.tap);
  const std::size_t n = x_current.dim(0);
  Targets who{std::vector<int>(n, spec.y_src), std::vector<std::optional<int>>(n, spec.y_tgt)};
  std::optional<Tensor<T>> f0;
  if (uses_disruption(spec.variant)) f0 = net.forward_to_tap(x_orig, spec.tap);
  return evaluate_loss(spec.variant, spec.objective_space, spec.lambda_weight, spec.eta, spec.tap, net, bank, x_current,
                       who, f0 ? &*f0 : nullptr, want_grad);
}

}  // namespace fdlab::attacks
