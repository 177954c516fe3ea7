#pragma once

#include <array>
#include <cmath>
#include <json.hpp>
#include <optional>
#include <string>

#include "fdlab/core/archive.hpp"
#include "fdlab/core/error.hpp"

namespace fdlab::attacks {

enum class Variant { fda, fda_ms, fda_fd, ufda, ufda_fd, fd_only, tpgd, tmim, upgd, umim };
enum class ObjectiveSpace { bce, probability };

inline constexpr std::array<Variant, 10> all_variants{Variant::fda,     Variant::fda_ms,  Variant::fda_fd, Variant::ufda,
                                                      Variant::ufda_fd, Variant::fd_only, Variant::tpgd,   Variant::tmim,
                                                      Variant::upgd,    Variant::umim};

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::fda: return "fda";
    case Variant::fda_ms: return "fda_ms";
    case Variant::fda_fd: return "fda_fd";
    case Variant::ufda: return "ufda";
    case Variant::ufda_fd: return "ufda_fd";
    case Variant::fd_only: return "fd_only";
    case Variant::tpgd: return "tpgd";
    case Variant::tmim: return "tmim";
    case Variant::upgd: return "upgd";
    case Variant::umim: return "umim";
  }
  return "?";
}

inline Variant parse_variant(const std::string& s) {
  for (Variant v : all_variants)
    if (to_string(v) == s) return v;
  throw ArgumentError("unknown attack variant '" + s + "'");
}

inline std::string to_string(ObjectiveSpace s) { return s == ObjectiveSpace::bce ? "bce" : "probability"; }
inline ObjectiveSpace parse_space(const std::string& s) {
  if (s == "bce") return ObjectiveSpace::bce;
  if (s == "probability") return ObjectiveSpace::probability;
  throw ArgumentError("unknown objective space '" + s + "'");
}

inline bool is_targeted(Variant v) {
  return v == Variant::fda || v == Variant::fda_ms || v == Variant::fda_fd || v == Variant::tpgd || v == Variant::tmim;
}
/// Logit-layer baselines; the tap is ignored for these.
inline bool is_baseline(Variant v) {
  return v == Variant::tpgd || v == Variant::tmim || v == Variant::upgd || v == Variant::umim;
}
/// Variants whose loss reads auxiliary models.
inline bool uses_aux(Variant v) { return !is_baseline(v) && v != Variant::fd_only; }
inline bool uses_disruption(Variant v) { return v == Variant::fda_fd || v == Variant::ufda_fd || v == Variant::fd_only; }
inline bool random_start(Variant v) { return v == Variant::tpgd || v == Variant::upgd; }
/// PGD steps along sign(gradient) with no accumulated momentum.
inline bool uses_momentum(Variant v) { return v != Variant::tpgd && v != Variant::upgd; }

inline constexpr double default_targeted_epsilon = 16.0 / 255.0;
inline constexpr double default_untargeted_epsilon = 8.0 / 255.0;

struct AttackSpec {
  Variant variant = Variant::fda;
  int tap = 0;
  int y_src = 0;
  std::optional<int> y_tgt;
  double epsilon = default_targeted_epsilon;
  int K = 10;
  double alpha = default_targeted_epsilon / 10;
  double lambda_weight = 0.8;
  double eta = 1e-6;
  ObjectiveSpace objective_space = ObjectiveSpace::bce;
  std::uint64_t seed = 0;

  /// Defaults for `v`: K = 10, alpha = epsilon / K, epsilon 16/255
  /// targeted and 8/255 untargeted unless given.
  static AttackSpec defaults(Variant v, int tap, int y_src, std::optional<int> y_tgt = std::nullopt,
                             std::optional<double> epsilon = std::nullopt) {
    AttackSpec s;
    s.variant = v;
    s.tap = tap;
    s.y_src = y_src;
    s.y_tgt = y_tgt;
    s.epsilon = epsilon.value_or(is_targeted(v) ? default_targeted_epsilon : default_untargeted_epsilon);
    s.alpha = s.epsilon / s.K;
    return s;
  }

  /// Sets K and re-derives alpha = epsilon / K.
  AttackSpec& with_iterations(int k) {
    K = k;
    alpha = k > 0 ? epsilon / k : 0.0;
    return *this;
  }

  /// Checks every field. `num_classes` > 0 also bounds the class ids.
  void validate(int num_classes = 0) const {
    const std::string who = "attack spec (" + to_string(variant) + "): ";
    if (is_targeted(variant)) {
      require(y_tgt.has_value(), who + "targeted variant needs y_tgt");
      require(*y_tgt != y_src, who + "y_tgt must differ from y_src");
    } else {
      require(!y_tgt.has_value(), who + "untargeted variant must not set y_tgt");
    }
    require(std::isfinite(epsilon) && epsilon >= 0, who + "epsilon must be a non-negative number");
    require(K >= 0, who + "K must be non-negative");
    require(std::isfinite(alpha) && alpha >= 0, who + "alpha must be a non-negative number");
    require(lambda_weight > 0 && lambda_weight < 1, who + "lambda_weight must lie in (0,1)");
    require(std::isfinite(eta) && eta >= 0, who + "eta must be non-negative");
    require(is_baseline(variant) || tap >= 0, who + "tap must be non-negative");
    if (num_classes > 0) {
      require(y_src >= 0 && y_src < num_classes, who + "y_src out of range");
      require(!y_tgt || (*y_tgt >= 0 && *y_tgt < num_classes), who + "y_tgt out of range");
    }
  }

  nlohmann::json to_json() const {
    nlohmann::json j = {{"variant", to_string(variant)},
                        {"tap", tap},
                        {"y_src", y_src},
                        {"y_tgt", y_tgt ? nlohmann::json(*y_tgt) : nlohmann::json(nullptr)},
                        {"epsilon", epsilon},
                        {"K", K},
                        {"alpha", alpha},
                        {"lambda_weight", lambda_weight},
                        {"eta", eta},
                        {"objective_space", to_string(objective_space)},
                        {"seed", seed}};
    return j;
  }

  /// Missing fields fall back to `defaults(variant, ...)`; alpha defaults to epsilon / K.
  static AttackSpec from_json(const nlohmann::json& j) {
    try {
      const Variant v = parse_variant(j.at("variant").get<std::string>());
      std::optional<int> tgt;
      if (j.contains("y_tgt") && !j["y_tgt"].is_null()) tgt = j["y_tgt"].get<int>();
      std::optional<double> eps;
      if (j.contains("epsilon")) eps = j["epsilon"].get<double>();
      AttackSpec s = defaults(v, j.value("tap", 0), j.value("y_src", 0), tgt, eps);
      s.with_iterations(j.value("K", s.K));
      if (j.contains("alpha")) s.alpha = j["alpha"].get<double>();
      s.lambda_weight = j.value("lambda_weight", s.lambda_weight);
      s.eta = j.value("eta", s.eta);
      if (j.contains("objective_space")) s.objective_space = parse_space(j["objective_space"].get<std::string>());
      s.seed = j.value("seed", s.seed);
      return s;
    } catch (const nlohmann::json::exception& e) {
      throw ArgumentError(std::string("malformed attack spec: ") + e.what());
    }
  }

  std::string hash() const { return hash_string(to_json().dump()); }
};

}  // namespace fdlab::attacks
