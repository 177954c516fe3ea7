#pragma once

#include <filesystem>
#include <functional>
#include <map>

#include "fdlab/attacks/records.hpp"
#include "fdlab/data/dataset.hpp"
#include "fdlab/eval/metrics.hpp"

namespace fdlab::eval {

namespace fs = std::filesystem;

enum class TargetMode { all_others, random_one };

inline TargetMode parse_target_mode(const std::string& s) {
  if (s == "all_others") return TargetMode::all_others;
  if (s == "random_one") return TargetMode::random_one;
  throw ArgumentError("unknown target_mode '" + s + "'");
}
inline std::string to_string(TargetMode m) { return m == TargetMode::all_others ? "all_others" : "random_one"; }

struct EvalSample {
  std::size_t dataset_index = 0;
  int y_src = 0;
  std::vector<int> targets;
};

/// Test samples both models classify correctly, with their assigned targets.
struct EvalSubset {
  std::vector<EvalSample> samples;
  Tensor<float> images;  // {n, C, H, W}, row i belongs to samples[i]

  std::size_t size() const { return samples.size(); }
  std::size_t num_targeted_instances() const {
    std::size_t n = 0;
    for (const auto& s : samples) n += s.targets.size();
    return n;
  }
};

/// Keeps the doubly-correct test samples whose class is in `classes` (all
/// classes when empty), optionally capped at `max_samples` by a seeded draw,
/// and assigns targets from `classes` minus y_src.
template <typename T>
EvalSubset build_eval_subset(const zoo::TappedNetwork<T>& white, const zoo::TappedNetwork<T>& black,
                             const data::Dataset& test, TargetMode mode, std::uint64_t seed, std::size_t max_samples = 0,
                             std::vector<int> classes = {}) {
  require(white.num_classes() == black.num_classes(), "build_eval_subset: models disagree on the class set");
  if (classes.empty())
    for (int c = 0; c < white.num_classes(); ++c) classes.push_back(c);
  std::sort(classes.begin(), classes.end());
  std::vector<std::size_t> keep;
  const std::size_t batch = 256;
  for (std::size_t b = 0; b < test.size(); b += batch) {
    std::vector<std::size_t> idx;
    for (std::size_t i = b; i < std::min(test.size(), b + batch); ++i) idx.push_back(i);
    const auto x = test.images<T>(idx);
    const auto pw = white.predict(x), pb = black.predict(x);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const int y = test.items[idx[k]].label;
      if (pw[k] == y && pb[k] == y && std::binary_search(classes.begin(), classes.end(), y)) keep.push_back(idx[k]);
    }
  }
  if (max_samples > 0 && keep.size() > max_samples) {
    Rng rng(mix_seed(seed, 0x5b5e7));
    rng.shuffle(keep.begin(), keep.end());
    keep.resize(max_samples);
    std::sort(keep.begin(), keep.end());
  }
  if (keep.empty()) throw EvaluationError("evaluation subset is empty: no test sample is correctly classified by both models");
  EvalSubset s;
  for (std::size_t idx : keep) {
    EvalSample e{idx, test.items[idx].label, {}};
    std::vector<int> others;
    for (int c : classes)
      if (c != e.y_src) others.push_back(c);
    if (mode == TargetMode::all_others) {
      e.targets = others;
    } else if (!others.empty()) {
      Rng rng(mix_seed(seed, 0x7a26e7, idx));
      e.targets = {others[std::size_t(rng.integer(0, std::int64_t(others.size()) - 1))]};
    }
    s.samples.push_back(std::move(e));
  }
  s.images = test.images<float>(keep);
  return s;
}

/// Attack instances for one variant: every (sample, target) pair for targeted
/// variants, one per sample otherwise. Instance ids are stable across runs.
inline std::pair<std::vector<attacks::Instance>, std::vector<std::size_t>> make_instances(const EvalSubset& s, bool targeted) {
  std::vector<attacks::Instance> inst;
  std::vector<std::size_t> rows;
  std::size_t id = 0;
  for (std::size_t i = 0; i < s.samples.size(); ++i) {
    const auto& e = s.samples[i];
    if (targeted) {
      for (int t : e.targets) {
        inst.push_back({id++, e.y_src, t});
        rows.push_back(i);
      }
    } else {
      inst.push_back({id++, e.y_src, std::nullopt});
      rows.push_back(i);
    }
  }
  return {inst, rows};
}

struct SweepConfig {
  std::string whitebox = "white", blackbox = "black";
  std::vector<attacks::Variant> variants;
  std::vector<int> taps;
  int K = 10;
  double targeted_epsilon = attacks::default_targeted_epsilon;
  double untargeted_epsilon = attacks::default_untargeted_epsilon;
  double lambda_weight = 0.8;
  double eta = 1e-6;
  attacks::ObjectiveSpace objective_space = attacks::ObjectiveSpace::bce;
  std::uint64_t seed = 0;
  std::size_t chunk = 32;
  int jobs = 1;
  /// Directory for reports.csv, per-cell outcome JSON-lines and delta archives.
  /// Empty keeps everything in memory.
  fs::path out_dir;
  bool store_deltas = false;
  bool resume = true;
  std::function<void(const TransferReport&)> on_cell;
};

struct Cell {
  attacks::Variant variant;
  int tap;  // -1 for baselines
};

/// Baselines contribute one tap-independent cell each.
inline std::vector<Cell> sweep_cells(const SweepConfig& cfg) {
  std::vector<Cell> cells;
  for (auto v : cfg.variants) {
    if (attacks::is_baseline(v)) cells.push_back({v, -1});
    else
      for (int t : cfg.taps) cells.push_back({v, t});
  }
  return cells;
}

inline std::string cell_key(const std::string& white, const std::string& black, attacks::Variant v, int tap,
                            double epsilon, std::uint64_t seed) {
  return white + "|" + black + "|" + attacks::to_string(v) + "|" + (tap < 0 ? "logit" : std::to_string(tap)) + "|" +
         fmt(epsilon) + "|" + std::to_string(seed);
}
inline std::string cell_key(const TransferReport& r) {
  return cell_key(r.whitebox, r.blackbox, r.variant, r.tap, r.epsilon, r.seed);
}

inline std::string cell_stem(const std::string& white, const std::string& black, attacks::Variant v, int tap,
                             double epsilon, std::uint64_t seed) {
  char eps[32];
  std::snprintf(eps, sizeof eps, "%.0f", epsilon * 255.0);
  return white + "__" + black + "__" + attacks::to_string(v) + "__" + (tap < 0 ? "logit" : "t" + std::to_string(tap)) +
         "__e" + eps + "__s" + std::to_string(seed);
}

/// Writes every report (previous plus new) in canonical cell order.
inline void write_reports(const fs::path& path, const std::vector<TransferReport>& reports) {
  CsvTable t{report_columns(), {}};
  for (const auto& r : reports) t.rows.push_back(to_row(r));
  write_csv(path, t);
}

inline std::vector<TransferReport> read_reports(const fs::path& path) {
  const auto t = read_csv(path);
  std::vector<TransferReport> out;
  for (std::size_t i = 0; i < t.rows.size(); ++i) out.push_back(from_row(t, i));
  return out;
}

/// One report per (variant, tap) cell. With an output directory, reports.csv
/// is rewritten after every cell; on resume, cells already present with
/// status ok are reused, and rows of other sweeps sharing the file are kept.
template <typename T>
std::vector<TransferReport> sweep(const zoo::TappedNetwork<T>& white, const zoo::TappedNetwork<T>& black,
                                  const auxtrain::AuxiliaryBank<T>* bank, const EvalSubset& subset, const SweepConfig& cfg) {
  const fs::path csv = cfg.out_dir.empty() ? fs::path() : cfg.out_dir / "reports.csv";
  std::map<std::string, TransferReport> done;
  std::vector<TransferReport> all;  // rows of this file in order
  if (!csv.empty()) {
    fs::create_directories(cfg.out_dir / "outcomes");
    if (cfg.resume && fs::exists(csv)) all = read_reports(csv);
    for (const auto& r : all)
      if (!r.failed()) done.emplace(cell_key(r), r);
  }
  const Tensor<T> images = subset.images.template cast<T>();
  std::vector<TransferReport> out;
  for (const Cell& cell : sweep_cells(cfg)) {
    const bool targeted = attacks::is_targeted(cell.variant);
    const double eps = targeted ? cfg.targeted_epsilon : cfg.untargeted_epsilon;
    const std::string key = cell_key(cfg.whitebox, cfg.blackbox, cell.variant, cell.tap, eps, cfg.seed);
    if (auto it = done.find(key); it != done.end()) {
      out.push_back(it->second);
      continue;
    }
    TransferReport rep;
    try {
      auto spec = attacks::AttackSpec::defaults(cell.variant, std::max(cell.tap, 0), 0, std::nullopt, eps);
      spec.with_iterations(cfg.K);
      spec.lambda_weight = cfg.lambda_weight;
      spec.eta = cfg.eta;
      spec.objective_space = cfg.objective_space;
      spec.seed = cfg.seed;
      const auto [inst, rows] = make_instances(subset, targeted);
      const auto x0 = gather_rows(images, rows);
      const auto results = attacks::run_attack_instances<T>(spec, white, bank, x0, inst, {cfg.chunk, cfg.jobs});
      rep = score_transfer<T>(results, white, black);
      if (!csv.empty()) {
        const std::string stem = cell_stem(cfg.whitebox, cfg.blackbox, cell.variant, cell.tap, eps, cfg.seed);
        const fs::path jl = cfg.out_dir / "outcomes" / (stem + ".jsonl");
        fs::remove(jl);
        TensorArchive ar;
        attacks::append_results(jl, results, spec.hash(), cfg.store_deltas ? &ar : nullptr);
        if (cfg.store_deltas) ar.save(cfg.out_dir / "outcomes" / (stem + ".deltas"));
      }
    } catch (const std::exception& e) {
      rep = TransferReport{};
      rep.status = std::string("failed: ") + e.what();
    }
    rep.whitebox = cfg.whitebox;
    rep.blackbox = cfg.blackbox;
    rep.variant = cell.variant;
    rep.tap = cell.tap;
    rep.epsilon = eps;
    rep.seed = cfg.seed;
    out.push_back(rep);
    if (!csv.empty()) {
      bool replaced = false;
      for (auto& r : all)
        if (cell_key(r) == key) {
          r = rep;
          replaced = true;
        }
      if (!replaced) all.push_back(rep);
      write_reports(csv, all);
    }
    if (cfg.on_cell) cfg.on_cell(rep);
  }
  return out;
}

}  // namespace fdlab::eval
