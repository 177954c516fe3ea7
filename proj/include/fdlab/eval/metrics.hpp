#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fdlab/attacks/optimizer.hpp"
#include "fdlab/core/csv.hpp"

namespace fdlab::eval {

/// Predictions of both models on one adversarial example.
struct Outcome {
  int y_src = 0;
  std::optional<int> y_tgt;
  int white_pred = 0;
  int black_pred = 0;

  bool white_fooled() const { return white_pred != y_src; }
  bool white_hit() const { return y_tgt && white_pred == *y_tgt; }
  bool black_fooled() const { return black_pred != y_src; }
  bool black_hit() const { return y_tgt && black_pred == *y_tgt; }
};

struct TransferReport {
  std::string whitebox, blackbox;
  attacks::Variant variant = attacks::Variant::fda;
  int tap = -1;  // -1 for logit-layer baselines
  double epsilon = 0;
  std::uint64_t seed = 0;
  double error = 0, tsuc = 0, utr = 0, ttr = 0;
  std::size_t n = 0, n_white_fooled = 0, n_white_targeted = 0;
  bool utr_undefined = false, ttr_undefined = false;
  std::string status = "ok";

  bool failed() const { return status != "ok"; }
  std::string tap_label() const { return tap < 0 ? "logit" : std::to_string(tap); }
};

/// error / tSuc / uTR / tTR over an outcome table. Zero denominators give 0
/// and set the matching `*_undefined` flag.
inline TransferReport score_outcomes(std::span<const Outcome> rows) {
  TransferReport r;
  r.n = rows.size();
  std::size_t black_fooled = 0, black_hit = 0, both_fooled = 0, both_hit = 0;
  for (const auto& o : rows) {
    black_fooled += o.black_fooled();
    black_hit += o.black_hit();
    r.n_white_fooled += o.white_fooled();
    r.n_white_targeted += o.white_hit();
    both_fooled += o.white_fooled() && o.black_fooled();
    both_hit += o.white_hit() && o.black_hit();
  }
  const auto ratio = [](std::size_t a, std::size_t b) { return b ? double(a) / double(b) : 0.0; };
  r.error = ratio(black_fooled, r.n);
  r.tsuc = ratio(black_hit, r.n);
  r.utr = ratio(both_fooled, r.n_white_fooled);
  r.ttr = ratio(both_hit, r.n_white_targeted);
  r.utr_undefined = r.n_white_fooled == 0;
  r.ttr_undefined = r.n_white_targeted == 0;
  return r;
}

/// Classifies every x_adv with both models and scores the transfer.
template <typename T>
TransferReport score_transfer(std::span<const attacks::AttackResult<T>> results, const zoo::TappedNetwork<T>& white,
                              const zoo::TappedNetwork<T>& black, std::size_t batch = 256) {
  std::vector<Outcome> rows;
  rows.reserve(results.size());
  for (std::size_t b = 0; b < results.size(); b += batch) {
    const std::size_t e = std::min(results.size(), b + batch);
    const Shape s = results[b].x_adv.shape();
    Shape bs{e - b};
    bs.insert(bs.end(), s.begin(), s.end());
    Tensor<T> x(bs);
    const std::size_t d = numel(s);
    for (std::size_t i = b; i < e; ++i) {
      require(results[i].x_adv.shape() == s, "score_transfer: adversarial examples differ in shape");
      std::copy(results[i].x_adv.begin(), results[i].x_adv.end(), x.data() + (i - b) * d);
    }
    const auto pw = white.predict(x), pb = black.predict(x);
    for (std::size_t i = b; i < e; ++i)
      rows.push_back({results[i].spec.y_src, results[i].spec.y_tgt, pw[i - b], pb[i - b]});
  }
  auto r = score_outcomes(rows);
  if (!results.empty()) {
    r.variant = results.front().spec.variant;
    r.tap = attacks::is_baseline(r.variant) ? -1 : results.front().spec.tap;
    r.epsilon = results.front().spec.epsilon;
    r.seed = results.front().spec.seed;
  }
  return r;
}

inline const std::vector<std::string>& report_columns() {
  static const std::vector<std::string> cols{"whitebox", "blackbox", "variant", "tap", "epsilon", "seed",
                                             "n", "error", "tsuc", "utr", "ttr", "n_white_fooled",
                                             "n_white_targeted", "utr_undefined", "ttr_undefined", "status"};
  return cols;
}

inline std::vector<std::string> to_row(const TransferReport& r) {
  return {r.whitebox,
          r.blackbox,
          attacks::to_string(r.variant),
          r.tap_label(),
          fmt(r.epsilon),
          std::to_string(r.seed),
          std::to_string(r.n),
          fmt(r.error),
          fmt(r.tsuc),
          fmt(r.utr),
          fmt(r.ttr),
          std::to_string(r.n_white_fooled),
          std::to_string(r.n_white_targeted),
          r.utr_undefined ? "1" : "0",
          r.ttr_undefined ? "1" : "0",
          csv_field(r.status)};
}

inline TransferReport from_row(const CsvTable& t, std::size_t i) {
  TransferReport r;
  try {
    r.whitebox = t.at(i, "whitebox");
    r.blackbox = t.at(i, "blackbox");
    r.variant = attacks::parse_variant(t.at(i, "variant"));
    r.tap = t.at(i, "tap") == "logit" ? -1 : std::stoi(t.at(i, "tap"));
    r.epsilon = std::stod(t.at(i, "epsilon"));
    r.seed = std::stoull(t.at(i, "seed"));
    r.n = std::stoull(t.at(i, "n"));
    r.error = std::stod(t.at(i, "error"));
    r.tsuc = std::stod(t.at(i, "tsuc"));
    r.utr = std::stod(t.at(i, "utr"));
    r.ttr = std::stod(t.at(i, "ttr"));
    r.n_white_fooled = std::stoull(t.at(i, "n_white_fooled"));
    r.n_white_targeted = std::stoull(t.at(i, "n_white_targeted"));
    r.utr_undefined = t.at(i, "utr_undefined") == "1";
    r.ttr_undefined = t.at(i, "ttr_undefined") == "1";
    r.status = t.at(i, "status");
  } catch (const std::logic_error& e) {
    throw LoadError("malformed report row " + std::to_string(i) + ": " + e.what());
  }
  return r;
}

}  // namespace fdlab::eval
