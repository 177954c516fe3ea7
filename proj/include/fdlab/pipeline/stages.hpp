#pragma once

#include <chrono>
#include <functional>
#include <iostream>
#include <memory>

#include "fdlab/attacks/records.hpp"
#include "fdlab/data/folder.hpp"
#include "fdlab/data/synthetic.hpp"
#include "fdlab/eval/plot.hpp"
#include "fdlab/pipeline/config.hpp"
#include "fdlab/zoo/architectures.hpp"
#include "fdlab/zoo/checkpoint.hpp"

#ifndef FDLAB_VERSION
#define FDLAB_VERSION "0.1.0"
#endif

namespace fdlab::pipeline {

struct Options {
  int jobs = 1;
  bool resume = false;
  bool timestamps = true;
  std::function<void(const std::string&)> log;
};

using Net = zoo::TappedNetwork<float>;
using Bank = auxtrain::AuxiliaryBank<float>;

/// Result of one stage invocation.
struct StageResult {
  std::string status;  // "done", "cached", "no-op"
  json details = json::object();
};

/// Runs the pipeline stages against one output directory. Each stage reads
/// its inputs from disk, so stages can run in separate processes.
class Pipeline {
 public:
  Pipeline(RunConfig cfg, Options opt) : cfg_(std::move(cfg)), opt_(std::move(opt)) {
    out_ = cfg_.output_dir;
    fs::create_directories(out_);
    write_json(out_ / "config.json", cfg_.source);
  }

  const RunConfig& config() const { return cfg_; }
  const fs::path& out() const { return out_; }

  StageResult run(const std::string& stage) {
    const auto t0 = std::chrono::steady_clock::now();
    StageResult r;
    if (stage == "train-zoo") r = train_zoo();
    else if (stage == "train-banks") r = train_banks();
    else if (stage == "attack") r = attack();
    else if (stage == "sweep") r = sweep();
    else if (stage == "analyze") r = analyze();
    else if (stage == "report") r = report();
    else throw ArgumentError("unknown stage '" + stage + "'");
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    record_stage(stage, r, secs);
    return r;
  }

  // ---- shared inputs ----------------------------------------------------

  const std::pair<data::Dataset, data::Dataset>& datasets() {
    if (!data_) {
      const auto& d = cfg_.dataset;
      if (d.provenance == "synthetic") {
        data_ = data::generate_train_test(d.seed, d.train_per_class, d.test_per_class, d.num_classes, d.side);
      } else {
        data_ = data::split(data::load_image_folder(d.path, std::size_t(d.side)), d.train_fraction, d.seed);
      }
      data_->first.validate();
      data_->second.validate();
    }
    return *data_;
  }

  std::string dataset_key() const { return hash_json(cfg_.source.value("dataset", json::object())) + ":" + std::to_string(cfg_.dataset.seed); }

  std::string model_key(const std::string& arch) const {
    json j = {{"dataset", dataset_key()},
              {"arch", arch},
              {"width", cfg_.zoo.width},
              {"train", cfg_.source.value("zoo", json::object()).value("train", json::object())},
              {"seed", training_seed(arch)}};
    return hash_json(j);
  }

  std::string bank_key(const std::string& arch) const {
    json j = {{"model", model_key(arch)}, {"bank", cfg_.source.value("bank", json::object())}, {"seed", cfg_.seed}};
    return hash_json(j);
  }

  std::uint64_t training_seed(const std::string& arch) const {
    Fnv1a h;
    h.update(arch);
    return mix_seed(cfg_.seed, h.digest());
  }

  fs::path checkpoint_stem(const std::string& arch) const { return out_ / "zoo" / arch; }
  fs::path bank_dir(const std::string& arch) const { return out_ / "banks" / arch; }

  std::shared_ptr<const Net> model(const std::string& arch) {
    if (auto it = models_.find(arch); it != models_.end()) return it->second;
    const auto stem = checkpoint_stem(arch);
    if (!fs::exists(zoo::manifest_path(stem)))
      throw DependencyError("missing checkpoint for model '" + arch + "' (" + zoo::manifest_path(stem).string() +
                            "); run `fdlab train-zoo` first");
    auto net = std::make_shared<const Net>(zoo::load_checkpoint<float>(stem));
    models_[arch] = net;
    return net;
  }

  const Bank& bank(const std::string& arch) {
    if (auto it = banks_.find(arch); it != banks_.end()) return it->second;
    const auto dir = bank_dir(arch);
    if (!fs::exists(dir / "manifest.json"))
      throw DependencyError("missing auxiliary bank for model '" + arch + "' (" + dir.string() +
                            "); run `fdlab train-banks` first");
    auto b = auxtrain::load_bank<float>(dir, model(arch));
    return banks_.emplace(arch, std::move(b)).first->second;
  }

  std::vector<std::string> bank_models() const { return cfg_.bank.models.empty() ? cfg_.zoo.archs : cfg_.bank.models; }

  // ---- stages -----------------------------------------------------------

  StageResult train_zoo() {
    const auto& [train, test] = datasets();
    write_json(out_ / "dataset.json", {{"train", train.manifest()}, {"test", test.manifest()}});
    CsvTable summary{{"model", "train_accuracy", "test_accuracy", "epochs", "final_loss"}, {}};
    CsvTable curves{{"model", "epoch", "loss"}, {}};
    StageResult res;
    bool all_cached = true;
    for (const auto& arch : cfg_.zoo.archs) {
      const auto stem = checkpoint_stem(arch);
      const std::string key = model_key(arch);
      json info;
      if (checkpoint_current(stem, key)) {
        info = zoo::read_manifest(zoo::manifest_path(stem)).at("extra");
        log("train-zoo: " + arch + " cached");
        res.details[arch] = "cached";
      } else {
        all_cached = false;
        fs::create_directories(stem.parent_path());
        zoo::ArchOptions ao;
        ao.num_classes = train.num_classes;
        ao.side = cfg_.dataset.side;
        ao.width = cfg_.zoo.width;
        ao.seed = training_seed(arch);
        auto net = zoo::build_architecture<float>(zoo::parse_arch(arch), ao);
        auto tc = cfg_.zoo.train;
        tc.seed = training_seed(arch);
        tc.on_epoch = [&](int e, double l) { log("train-zoo: " + arch + " epoch " + std::to_string(e) + " loss " + fmt(l)); };
        zoo::TrainReport rep;
        try {
          rep = zoo::train_classifier(net, train, test, tc);
        } catch (const Error& e) {
          throw Error("training model '" + arch + "' failed: " + e.what());
        }
        info = {{"config_key", key},
                {"train_accuracy", rep.train_accuracy},
                {"test_accuracy", rep.test_accuracy},
                {"epochs", rep.epochs},
                {"loss_curve", rep.loss_curve}};
        zoo::CheckpointInfo ci{tc.seed, train.content_hash(), info};
        zoo::save_checkpoint(net, stem, ci);
        models_.erase(arch);
        log("train-zoo: " + arch + " test accuracy " + fmt(rep.test_accuracy));
        res.details[arch] = "trained";
      }
      const auto lc = info.at("loss_curve").get<std::vector<double>>();
      summary.rows.push_back({arch, fmt(info.at("train_accuracy").get<double>()), fmt(info.at("test_accuracy").get<double>()),
                              std::to_string(info.at("epochs").get<int>()), lc.empty() ? "" : fmt(lc.back())});
      for (std::size_t e = 0; e < lc.size(); ++e) curves.rows.push_back({arch, std::to_string(e), fmt(lc[e])});
    }
    write_csv(out_ / "zoo" / "summary.csv", summary);
    write_csv(out_ / "zoo" / "loss_curves.csv", curves);
    res.status = all_cached ? "cached" : "done";
    return res;
  }

  StageResult train_banks() {
    const auto& train = datasets().first;
    CsvTable acc{{"model", "tap", "class", "validation_accuracy"}, {}};
    CsvTable failures{{"model", "tap", "class", "error"}, {}};
    StageResult res;
    bool all_cached = true;
    for (const auto& arch : bank_models()) {
      auto net = model(arch);
      const auto dir = bank_dir(arch);
      const std::string key = bank_key(arch);
      if (bank_current(arch, dir, key)) {
        log("train-banks: " + arch + " cached");
        res.details[arch] = "cached";
      } else {
        all_cached = false;
        std::vector<int> taps = cfg_.bank.taps, classes = cfg_.bank.classes;
        if (taps.empty())
          for (int t = 0; t < net->num_taps(); ++t) taps.push_back(t);
        if (classes.empty())
          for (int c = 0; c < net->num_classes(); ++c) classes.push_back(c);
        auto ac = cfg_.bank.aux;
        ac.seed = mix_seed(training_seed(arch), 0xa0c);
        try {
          for (int t : taps) net->tap(t);
        } catch (const ArgumentError& e) {
          throw ConfigError(std::string("config field 'bank.taps': ") + e.what());
        }
        auto b = auxtrain::train_bank<float>(net, taps, classes, train, ac, opt_.jobs, [&](int t, int c, double a) {
          log("train-banks: " + arch + " tap " + std::to_string(t) + " class " + std::to_string(c) + " acc " + fmt(a));
        });
        if (fs::exists(dir)) fs::remove_all(dir);
        auxtrain::save_bank(b, dir,
                            {{"config_key", key},
                             {"whitebox_weights_hash", hash_file(zoo::weights_path(checkpoint_stem(arch)))},
                             {"aux_seed", ac.seed}});
        banks_.erase(arch);
        res.details[arch] = {{"models", b.size()}, {"failures", b.failures().size()}};
      }
      const auto& b = bank(arch);
      for (const auto& [k, m] : b.models())
        acc.rows.push_back({arch, std::to_string(k.first), std::to_string(k.second), fmt(b.validation_accuracy(k.first, k.second))});
      for (const auto& f : b.failures())
        failures.rows.push_back({arch, std::to_string(f.tap), std::to_string(f.class_id), csv_field(f.message)});
    }
    write_csv(out_ / "banks" / "accuracy.csv", acc);
    write_csv(out_ / "banks" / "failures.csv", failures);
    res.status = all_cached ? "cached" : "done";
    return res;
  }

  /// Runs the configured attack specs on correctly classified test samples.
  StageResult attack() {
    const auto& test = datasets().second;
    const auto& a = cfg_.attack;
    if (a.specs.empty()) return {"no-op", {{"reason", "attack.specs is empty"}}};
    const fs::path dir = out_ / "attacks";
    const std::string key = attack_key();
    if (fs::exists(dir / "index.json") && read_json(dir / "index.json").value("config_key", "") == key)
      return {"cached", {}};
    if (fs::exists(dir)) fs::remove_all(dir);
    fs::create_directories(dir);
    CsvTable summary{{"run", "model", "variant", "tap", "epsilon", "n", "mean_initial_loss", "mean_final_loss",
                      "mean_linf", "whitebox_success"},
                     {}};
    json runs = json::array();
    for (std::size_t s = 0; s < a.specs.size(); ++s) {
      const json& sj = a.specs[s];
      const std::string arch = sj.value("model", a.model.empty() ? cfg_.zoo.archs.front() : a.model);
      auto net = model(arch);
      attacks::AttackSpec spec = attacks::AttackSpec::from_json(sj.contains("seed") ? sj : merged(sj, {{"seed", cfg_.seed}}));
      const bool fixed_src = sj.contains("y_src");
      const bool targeted = attacks::is_targeted(spec.variant);
      // Candidate samples: correctly classified by the whitebox, of class y_src when given.
      std::vector<std::size_t> idx;
      std::vector<attacks::Instance> inst;
      const auto pred = zoo::predict_dataset(*net, test);
      for (std::size_t i = 0; i < test.size() && int(inst.size()) < a.samples_per_spec; ++i) {
        const int y = test.items[i].label;
        if (pred[i] != y || (fixed_src && y != spec.y_src)) continue;
        std::optional<int> tgt;
        if (targeted) tgt = sj.contains("y_tgt") ? *spec.y_tgt : (y + 1) % net->num_classes();
        if (tgt && *tgt == y) continue;
        idx.push_back(i);
        inst.push_back({i, y, tgt});
      }
      if (inst.empty()) throw EvaluationError("attack spec " + std::to_string(s) + ": no eligible test samples");
      const Bank* bk = attacks::uses_aux(spec.variant) ? &bank(arch) : nullptr;
      const auto x0 = test.images<float>(idx);
      const auto results = attacks::run_attack_instances<float>(spec, *net, bk, x0, inst, {32, opt_.jobs});
      char name[128];
      std::snprintf(name, sizeof name, "%03zu_%s_%s_%s", s, arch.c_str(), attacks::to_string(spec.variant).c_str(),
                    attacks::is_baseline(spec.variant) ? "logit" : ("t" + std::to_string(spec.tap)).c_str());
      TensorArchive ar;
      attacks::append_results(dir / (std::string(name) + ".jsonl"), results, spec.hash(), a.store_tensors ? &ar : nullptr);
      if (a.store_tensors) ar.save(dir / (std::string(name) + ".deltas"));
      double l0 = 0, lk = 0, linf = 0;
      std::size_t hit = 0;
      Tensor<float> xadv(x0.shape());
      for (std::size_t i = 0; i < results.size(); ++i) {
        l0 += results[i].loss_trace.front();
        lk += results[i].loss_trace.back();
        linf = std::max(linf, results[i].linf());
        std::copy(results[i].x_adv.begin(), results[i].x_adv.end(), xadv.data() + i * x0.sample_size());
      }
      const auto p = net->predict(xadv);
      for (std::size_t i = 0; i < results.size(); ++i)
        hit += targeted ? p[i] == *inst[i].y_tgt : p[i] != inst[i].y_src;
      const double n = double(results.size());
      summary.rows.push_back({name, arch, attacks::to_string(spec.variant),
                              attacks::is_baseline(spec.variant) ? "logit" : std::to_string(spec.tap), fmt(spec.epsilon),
                              std::to_string(results.size()), fmt(l0 / n), fmt(lk / n), fmt(linf), fmt(hit / n)});
      runs.push_back({{"name", name},
                      {"model", arch},
                      {"spec", spec.to_json()},
                      {"records", std::string(name) + ".jsonl"},
                      {"deltas", a.store_tensors ? json(std::string(name) + ".deltas") : json(nullptr)}});
      log("attack: " + std::string(name) + " whitebox success " + fmt(hit / n));
    }
    write_csv(dir / "summary.csv", summary);
    write_json(dir / "index.json", {{"config_key", key}, {"runs", runs}});
    return {"done", {{"runs", runs.size()}}};
  }

  StageResult sweep() {
    const auto& e = cfg_.eval;
    if (e.pairs.empty()) return {"no-op", {{"reason", "eval.pairs is empty"}}};
    const fs::path dir = out_ / "sweep";
    const std::string key = sweep_key();
    const fs::path state = dir / "state.json";
    if (fs::exists(dir / "reports.csv")) {
      const bool same = fs::exists(state) && read_json(state).value("config_key", "") == key;
      if (opt_.resume && !same)
        throw ConfigError("cannot resume sweep in " + dir.string() + ": configuration or upstream artifacts changed");
      if (!opt_.resume) fs::remove_all(dir);
    }
    fs::create_directories(dir);
    write_json(state, {{"config_key", key}});
    const auto& test = datasets().second;
    std::size_t computed = 0, reused = 0;
    for (const auto& [white_id, black_id] : e.pairs) {
      auto white = model(white_id);
      auto black = model(black_id);
      const bool needs_bank = std::any_of(e.variants.begin(), e.variants.end(), [](auto v) { return !attacks::is_baseline(v); });
      const Bank* bk = needs_bank ? &bank(white_id) : nullptr;
      std::vector<int> taps = e.taps;
      if (taps.empty()) taps = bk ? bk->taps() : std::vector<int>{};
      std::vector<int> classes = bk ? bk->classes() : std::vector<int>{};
      for (std::uint64_t seed : e.seeds) {
        const auto subset = eval::build_eval_subset(*white, *black, test, e.target_mode, seed, e.max_samples, classes);
        eval::SweepConfig sc;
        sc.whitebox = white_id;
        sc.blackbox = black_id;
        sc.variants = e.variants;
        sc.taps = taps;
        sc.K = e.K;
        sc.targeted_epsilon = e.targeted_epsilon;
        sc.untargeted_epsilon = e.untargeted_epsilon;
        sc.lambda_weight = e.lambda_weight;
        sc.eta = e.eta;
        sc.objective_space = e.objective_space;
        sc.seed = seed;
        sc.chunk = e.chunk;
        sc.jobs = opt_.jobs;
        sc.out_dir = dir;
        sc.store_deltas = e.store_tensors;
        sc.resume = true;  // rows of earlier pairs/seeds in this invocation stay
        const std::size_t before = fs::exists(dir / "reports.csv") ? eval::read_reports(dir / "reports.csv").size() : 0;
        std::size_t cells = 0;
        sc.on_cell = [&](const eval::TransferReport& r) {
          ++cells;
          log("sweep: " + white_id + "->" + black_id + " " + attacks::to_string(r.variant) + " tap " + r.tap_label() +
              " tSuc " + fmt(r.tsuc) + " error " + fmt(r.error) + (r.failed() ? " [" + r.status + "]" : ""));
        };
        const auto reps = eval::sweep<float>(*white, *black, bk, subset, sc);
        computed += cells;
        reused += reps.size() - cells;
        (void)before;
      }
    }
    const auto plots = plot::render_transfer_plots(dir / "reports.csv", dir / "plots", opt_.timestamps);
    return {"done", {{"computed_cells", computed}, {"reused_cells", reused}, {"plots", plots.size()}}};
  }

  StageResult analyze() {
    const auto& a = cfg_.analysis;
    if (a.diagnostics.empty()) return {"no-op", {{"reason", "analysis.diagnostics is empty"}}};
    const std::string key = analysis_key();
    const fs::path dir = out_ / "analysis" / key;
    if (fs::exists(dir / "done.json")) return {"cached", {{"dir", rel(dir)}}};
    const auto has = [&](const char* d) { return std::find(a.diagnostics.begin(), a.diagnostics.end(), d) != a.diagnostics.end(); };
    // Dependencies are checked before any work so a failing run leaves nothing behind.
    json attack_index;
    if (has("disruption")) {
      const fs::path idx = out_ / "attacks" / "index.json";
      if (!fs::exists(idx))
        throw DependencyError("disruption needs persisted attack results; run `fdlab attack` with attack.store_tensors = true first");
      attack_index = read_json(idx);
      for (const auto& r : attack_index.at("runs"))
        if (r.at("deltas").is_null())
          throw DependencyError("disruption needs stored perturbation tensors but attack run '" +
                                r.at("name").get<std::string>() + "' has none; set attack.store_tensors = true and rerun `fdlab attack`");
    }
    std::vector<std::string> models = a.models.empty() ? bank_models() : a.models;
    for (const auto& m : models) bank(m);
    fs::create_directories(dir);
    const auto& test = datasets().second;

    if (has("disruption")) {
      auto t = analysis::disruption_table();
      for (const auto& r : attack_index.at("runs")) {
        const auto spec = attacks::AttackSpec::from_json(r.at("spec"));
        if (!attacks::is_targeted(spec.variant)) continue;
        const auto recs = attacks::read_records(out_ / "attacks" / r.at("records").get<std::string>());
        const auto deltas = TensorArchive::load(out_ / "attacks" / r.at("deltas").get<std::string>());
        std::vector<std::size_t> idx;
        std::vector<int> tgt;
        for (const auto& rec : recs) {
          idx.push_back(rec.at("index").get<std::size_t>());
          tgt.push_back(rec.at("y_tgt").get<int>());
        }
        const auto x = test.images<float>(idx);
        Tensor<float> xadv = x;
        for (std::size_t i = 0; i < recs.size(); ++i) {
          const auto& d = deltas.at(recs[i].at("delta_key").get<std::string>());
          for (std::size_t j = 0; j < d.size(); ++j)
            xadv[i * x.sample_size() + j] = std::clamp(x[i * x.sample_size() + j] + float(d[j]), 0.0f, 1.0f);
        }
        const std::string attack_name = r.at("model").get<std::string>() + ":" + attacks::to_string(spec.variant);
        const std::string src_tap = attacks::is_baseline(spec.variant) ? "logit" : std::to_string(spec.tap);
        for (const auto& m : models) {
          for (const auto& pt : analysis::disruption_curve<float>(bank(m), tgt, x, xadv))
            t.rows.push_back({m, attack_name, src_tap, std::to_string(pt.tap), fmt(pt.mean), std::to_string(idx.size())});
        }
      }
      write_csv(dir / "disruption.csv", t);
    }
    if (has("discrepancy")) {
      auto t = analysis::discrepancy_table();
      for (const auto& m : models) {
        const auto& b = bank(m);
        const auto x = test.images<float>(samples_in(test, b.classes(), a.discrepancy_samples));
        for (int tap : b.taps()) t.rows.push_back(analysis::to_row(m, analysis::mean_discrepancy(b, *model(m), tap, x)));
      }
      write_csv(dir / "discrepancy.csv", t);
    }
    if (has("saliency")) {
      CsvTable t{{"model", "sample", "tap", "class", "total", "max"}, {}};
      for (const auto& m : models) {
        const auto& b = bank(m);
        const auto idx = samples_in(test, b.classes(), std::size_t(a.saliency_images));
        std::vector<Tensor<float>> imgs;
        std::vector<std::vector<analysis::SaliencyMap<float>>> maps;
        for (std::size_t i : idx) {
          imgs.push_back(test.items[i].pixels);
          maps.emplace_back();
          for (int tap : b.taps()) {
            const int c = test.items[i].label;
            auto s = analysis::smoothgrad_saliency(b, tap, c, test.items[i].pixels, a.saliency_sigma, a.saliency_samples,
                                                   mix_seed(cfg_.seed, i, std::uint64_t(tap)));
            double tot = 0, mx = 0;
            for (float v : s.map) {
              tot += v;
              mx = std::max(mx, double(v));
            }
            t.rows.push_back({m, std::to_string(i), std::to_string(tap), std::to_string(c), fmt(tot), fmt(mx)});
            maps.back().push_back(std::move(s));
          }
        }
        analysis::write_saliency_grid(dir / ("saliency_" + m + ".png"), imgs, maps);
      }
      write_csv(dir / "saliency.csv", t);
    }
    if (has("separability")) {
      auto t = analysis::separability_table();
      for (const auto& m : models) {
        const auto& b = bank(m);
        const auto idx = samples_in(test, b.classes(), std::size_t(a.separability_samples));
        const auto x = test.images<float>(idx);
        const auto y = test.labels(idx);
        std::vector<int> taps = a.separability_taps.empty() ? b.taps() : a.separability_taps;
        for (int tap : taps) {
          const auto rep = analysis::separability<float>(b, *model(m), tap, x, y, a.distance);
          t.rows.push_back(analysis::to_row(m, rep));
          log("analyze: separability " + m + " tap " + std::to_string(tap) + " = " +
              (rep.separability ? fmt(*rep.separability) : "undefined"));
        }
      }
      write_csv(dir / "separability.csv", t);
    }
    render_analysis_plots(dir);
    write_json(dir / "done.json", {{"config_key", key}, {"diagnostics", a.diagnostics}});
    return {"done", {{"dir", rel(dir)}}};
  }

  /// Re-renders every figure from persisted CSVs and writes a summary.
  StageResult report() {
    json files = json::array();
    if (fs::exists(out_ / "sweep" / "reports.csv"))
      for (const auto& p : plot::render_transfer_plots(out_ / "sweep" / "reports.csv", out_ / "sweep" / "plots", opt_.timestamps))
        files.push_back(rel(p));
    if (fs::exists(out_ / "analysis"))
      for (const auto& e : fs::directory_iterator(out_ / "analysis"))
        if (e.is_directory())
          for (const auto& p : render_analysis_plots(e.path())) files.push_back(rel(p));
    std::ostringstream md;
    md << "# Run summary\n\n";
    auto table = [&](const std::string& title, const fs::path& csv) {
      if (!fs::exists(csv)) return;
      const auto t = read_csv(csv);
      md << "## " << title << "\n\n|";
      for (const auto& h : t.header) md << ' ' << h << " |";
      md << "\n|";
      for (std::size_t i = 0; i < t.header.size(); ++i) md << " --- |";
      md << '\n';
      for (const auto& r : t.rows) {
        md << '|';
        for (const auto& f : r) md << ' ' << f << " |";
        md << '\n';
      }
      md << '\n';
    };
    table("Classifiers", out_ / "zoo" / "summary.csv");
    table("Attacks", out_ / "attacks" / "summary.csv");
    table("Transfer sweep", out_ / "sweep" / "reports.csv");
    plot::write_text(out_ / "report" / "summary.md", md.str());
    return {"done", {{"plots", files}}};
  }

  std::vector<fs::path> render_analysis_plots(const fs::path& dir) {
    std::vector<fs::path> files;
    const std::string stamp = opt_.timestamps ? plot::timestamp_now() : "";
    if (fs::exists(dir / "disruption.csv")) {
      const auto t = read_csv(dir / "disruption.csv");
      // One chart per (attack, source tap); one curve per measured model.
      std::map<std::string, std::map<std::string, plot::Series>> charts;
      for (std::size_t i = 0; i < t.rows.size(); ++i) {
        const std::string chart = t.at(i, "attack") + " @ " + t.at(i, "source_tap");
        auto& s = charts[chart][t.at(i, "model")];
        s.label = t.at(i, "model");
        s.points.push_back({std::stod(t.at(i, "tap")), std::stod(t.at(i, "mean_disruption"))});
      }
      std::size_t k = 0;
      for (const auto& [name, series] : charts) {
        plot::LineChart c{"disruption: " + name, "relative tap depth", "mean disruption", -1, 1, {}};
        for (const auto& [_, s] : series) c.series.push_back(s);
        char fn[64];
        std::snprintf(fn, sizeof fn, "disruption_%02zu.svg", k++);
        plot::write_text(dir / fn, plot::render_svg(c, stamp));
        files.push_back(dir / fn);
      }
    }
    auto per_model = [&](const std::string& csv, const std::string& col, const std::string& title, double lo, double hi,
                         const std::string& out) {
      if (!fs::exists(dir / csv)) return;
      const auto t = read_csv(dir / csv);
      std::map<std::string, plot::Series> series;
      double top = hi;
      for (std::size_t i = 0; i < t.rows.size(); ++i) {
        if (t.at(i, col) == "undefined") continue;
        auto& s = series[t.at(i, "model")];
        s.label = t.at(i, "model");
        const double v = std::stod(t.at(i, col));
        top = std::max(top, v);
        s.points.push_back({std::stod(t.at(i, "tap")), v});
      }
      plot::LineChart c{title, "relative tap depth", col, lo, top, {}};
      for (const auto& [_, s] : series) c.series.push_back(s);
      plot::write_text(dir / out, plot::render_svg(c, stamp));
      files.push_back(dir / out);
    };
    per_model("discrepancy.csv", "correlation", "auxiliary / whitebox correlation", 0, 1, "correlation.svg");
    per_model("discrepancy.csv", "discrepancy", "auxiliary / whitebox discrepancy (KL)", 0, 1, "discrepancy.svg");
    per_model("separability.csv", "separability", "separability (steps)", 0, 1, "separability.svg");
    return files;
  }

  // ---- manifest -----------------------------------------------------------

  void record_stage(const std::string& stage, const StageResult& r, double secs) {
    const fs::path mp = out_ / "manifest.json";
    json m = fs::exists(mp) ? read_json(mp) : json::object();
    m["tool_version"] = FDLAB_VERSION;
    m["config_hash"] = hash_json(cfg_.source);
    json entry = {{"status", r.status}, {"wall_seconds", secs}, {"details", r.details}};
    if (opt_.timestamps) entry["finished_at"] = plot::timestamp_now();
    m["stages"][stage] = entry;
    std::vector<std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(out_))
      if (e.is_regular_file() && e.path() != mp) files.push_back(rel(e.path()));
    std::sort(files.begin(), files.end());
    m["artifacts"] = files;
    write_json(mp, m);
  }

 private:
  static json read_json(const fs::path& p) { return zoo::read_manifest(p); }
  static void write_json(const fs::path& p, const json& j) { plot::write_text(p, j.dump(2) + "\n"); }
  static json merged(json a, const json& b) {
    a.update(b);
    return a;
  }
  std::string rel(const fs::path& p) const { return fs::relative(p, out_).generic_string(); }

  void log(const std::string& s) const {
    if (opt_.log) opt_.log(s);
  }

  bool checkpoint_current(const fs::path& stem, const std::string& key) const {
    if (!fs::exists(zoo::manifest_path(stem)) || !fs::exists(zoo::weights_path(stem))) return false;
    try {
      const auto m = zoo::read_manifest(zoo::manifest_path(stem));
      return m.at("extra").value("config_key", "") == key && m.at("weights_hash") == hash_file(zoo::weights_path(stem));
    } catch (const std::exception&) {
      return false;
    }
  }

  bool bank_current(const std::string& arch, const fs::path& dir, const std::string& key) const {
    if (!fs::exists(dir / "manifest.json")) return false;
    try {
      const auto m = zoo::read_manifest(dir / "manifest.json");
      if (m.at("extra").value("config_key", "") != key) return false;
      if (m.at("extra").value("whitebox_weights_hash", "") != hash_file(zoo::weights_path(checkpoint_stem(arch))))
        return false;
      for (const auto& e : m.at("models"))
        if (!fs::exists(dir / e.at("file").get<std::string>())) return false;
      return true;
    } catch (const std::exception&) {
      return false;
    }
  }

  std::string attack_key() const {
    json j = {{"attack", cfg_.source.value("attack", json::object())}, {"seed", cfg_.seed}, {"dataset", dataset_key()}};
    for (const auto& m : cfg_.zoo.archs) j["models"][m] = bank_key(m);
    return hash_json(j);
  }
  std::string sweep_key() const {
    json j = {{"eval", cfg_.source.value("eval", json::object())}, {"seed", cfg_.seed}, {"dataset", dataset_key()}};
    for (const auto& m : cfg_.zoo.archs) j["models"][m] = bank_key(m);
    return hash_json(j);
  }
  std::string analysis_key() const {
    json j = {{"analysis", cfg_.source.value("analysis", json::object())}, {"attack", attack_key()}};
    return hash_json(j).substr(0, 12);
  }

  /// First `cap` test indices whose label is in `classes` (0 = no cap).
  static std::vector<std::size_t> samples_in(const data::Dataset& ds, const std::vector<int>& classes, std::size_t cap) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < ds.size() && (cap == 0 || out.size() < cap); ++i)
      if (std::find(classes.begin(), classes.end(), ds.items[i].label) != classes.end()) out.push_back(i);
    return out;
  }

  RunConfig cfg_;
  Options opt_;
  fs::path out_;
  std::optional<std::pair<data::Dataset, data::Dataset>> data_;
  std::map<std::string, std::shared_ptr<const Net>> models_;
  std::map<std::string, Bank> banks_;
};

}  // namespace fdlab::pipeline
