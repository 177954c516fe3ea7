#pragma once

#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <set>
#include <string>
#include <vector>

#include "fdlab/analysis/diagnostics.hpp"
#include "fdlab/auxtrain/auxiliary.hpp"
#include "fdlab/eval/sweep.hpp"
#include "fdlab/zoo/train.hpp"

namespace fdlab::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

/// Reads typed fields out of a JSON object, reporting the full field path on
/// any error and rejecting keys that were never read.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("config field '" + display() + "': expected an object");
  }

  template <typename V>
  V get(const std::string& key, V fallback) {
    seen_.insert(key);
    if (!j_.contains(key) || j_.at(key).is_null()) return fallback;
    return convert<V>(j_.at(key), key);
  }

  template <typename V>
  V required(const std::string& key) {
    seen_.insert(key);
    if (!j_.contains(key)) throw ConfigError("config field '" + field(key) + "' is required");
    return convert<V>(j_.at(key), key);
  }

  bool has(const std::string& key) const { return j_.contains(key) && !j_.at(key).is_null(); }

  Section sub(const std::string& key) {
    seen_.insert(key);
    static const json empty = json::object();
    return Section(j_.contains(key) ? j_.at(key) : empty, field(key));
  }

  /// Either the string "all" (returned as an empty list) or a list of integers.
  std::vector<int> int_list_or_all(const std::string& key) {
    seen_.insert(key);
    if (!j_.contains(key) || j_.at(key).is_null()) return {};
    const auto& v = j_.at(key);
    if (v.is_string() && v.get<std::string>() == "all") return {};
    return convert<std::vector<int>>(v, key);
  }

  const json& raw(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  void finish() const {
    for (const auto& [k, _] : j_.items())
      if (!seen_.count(k)) throw ConfigError("config field '" + field(k) + "' is not recognized");
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

 private:
  std::string display() const { return path_.empty() ? "<root>" : path_; }

  template <typename V>
  V convert(const json& v, const std::string& key) const {
    try {
      if constexpr (std::is_same_v<V, double>) {
        if (!v.is_number()) throw ConfigError("");
      } else if constexpr (std::is_integral_v<V> && !std::is_same_v<V, bool>) {
        if (!v.is_number_integer()) throw ConfigError("");
        if constexpr (std::is_unsigned_v<V>)
          if (v.get<long long>() < 0) throw ConfigError("");
      } else if constexpr (std::is_same_v<V, bool>) {
        if (!v.is_boolean()) throw ConfigError("");
      } else if constexpr (std::is_same_v<V, std::string>) {
        if (!v.is_string()) throw ConfigError("");
      }
      return v.get<V>();
    } catch (const std::exception&) {
      throw ConfigError("config field '" + field(key) + "': unexpected value " + v.dump());
    }
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

struct DatasetSection {
  std::string provenance = "synthetic";
  std::uint64_t seed = 0;
  int num_classes = 10;
  int side = 32;
  int train_per_class = 500;
  int test_per_class = 100;
  std::string path;  // folder provenance
  double train_fraction = 0.8;
};

struct ZooSection {
  std::vector<std::string> archs{"mini_plain", "mini_residual", "mini_dense"};
  double width = 1.0;
  zoo::TrainConfig train;
};

struct BankSection {
  std::vector<std::string> models;  // empty = every zoo model
  std::vector<int> taps;            // empty = all taps
  std::vector<int> classes;         // empty = all classes
  auxtrain::AuxConfig aux;
};

struct AttackSection {
  std::string model;  // whitebox for the attack stage
  std::vector<json> specs;
  int samples_per_spec = 10;
  bool store_tensors = true;
};

struct EvalSection {
  std::vector<std::pair<std::string, std::string>> pairs;
  std::vector<attacks::Variant> variants;
  std::vector<int> taps;  // empty = all taps of the whitebox
  eval::TargetMode target_mode = eval::TargetMode::all_others;
  std::size_t max_samples = 50;
  int K = 10;
  double targeted_epsilon = attacks::default_targeted_epsilon;
  double untargeted_epsilon = attacks::default_untargeted_epsilon;
  double lambda_weight = 0.8;
  double eta = 1e-6;
  attacks::ObjectiveSpace objective_space = attacks::ObjectiveSpace::bce;
  std::vector<std::uint64_t> seeds;  // empty = {global seed}
  bool store_tensors = false;
  std::size_t chunk = 32;
};

struct AnalysisSection {
  std::vector<std::string> diagnostics;
  std::vector<std::string> models;  // empty = models with banks
  std::size_t discrepancy_samples = 500;
  double saliency_sigma = 0.15;
  int saliency_samples = 50;
  int saliency_images = 4;
  int separability_samples = 20;
  std::vector<int> separability_taps;  // empty = all bank taps
  analysis::DistanceParams distance;
};

struct RunConfig {
  fs::path output_dir = "runs/default";
  std::uint64_t seed = 1;
  DatasetSection dataset;
  ZooSection zoo;
  BankSection bank;
  AttackSection attack;
  EvalSection eval;
  AnalysisSection analysis;
  json source = json::object();  // the parsed document, for hashing and persistence
};

inline const std::set<std::string>& known_diagnostics() {
  static const std::set<std::string> d{"disruption", "discrepancy", "saliency", "separability"};
  return d;
}

inline RunConfig parse_config(const json& doc) {
  RunConfig c;
  c.source = doc;
  Section root(doc, "");
  c.output_dir = root.get<std::string>("output_dir", c.output_dir.string());
  c.seed = root.get<std::uint64_t>("seed", c.seed);

  {
    auto s = root.sub("dataset");
    auto& d = c.dataset;
    d.provenance = s.get<std::string>("provenance", d.provenance);
    if (d.provenance != "synthetic" && d.provenance != "folder")
      throw ConfigError("config field 'dataset.provenance': expected \"synthetic\" or \"folder\"");
    d.seed = s.get<std::uint64_t>("seed", c.seed);
    d.num_classes = s.get<int>("num_classes", d.num_classes);
    d.side = s.get<int>("side", d.side);
    d.train_per_class = s.get<int>("train_per_class", d.train_per_class);
    d.test_per_class = s.get<int>("test_per_class", d.test_per_class);
    d.path = s.get<std::string>("path", d.path);
    d.train_fraction = s.get<double>("train_fraction", d.train_fraction);
    if (d.provenance == "folder" && d.path.empty()) throw ConfigError("config field 'dataset.path' is required for folder provenance");
    if (d.side < 8) throw ConfigError("config field 'dataset.side': must be at least 8");
    if (d.num_classes < 2) throw ConfigError("config field 'dataset.num_classes': must be at least 2");
    s.finish();
  }
  {
    auto s = root.sub("zoo");
    auto& z = c.zoo;
    z.archs = s.get<std::vector<std::string>>("archs", z.archs);
    for (std::size_t i = 0; i < z.archs.size(); ++i) {
      try {
        zoo::parse_arch(z.archs[i]);
      } catch (const ArgumentError& e) {
        throw ConfigError("config field 'zoo.archs[" + std::to_string(i) + "]': " + e.what());
      }
    }
    z.width = s.get<double>("width", z.width);
    auto t = s.sub("train");
    z.train.epochs = t.get<int>("epochs", z.train.epochs);
    z.train.batch_size = t.get<int>("batch_size", z.train.batch_size);
    z.train.learning_rate = t.get<double>("learning_rate", z.train.learning_rate);
    z.train.momentum = t.get<double>("momentum", z.train.momentum);
    z.train.weight_decay = t.get<double>("weight_decay", z.train.weight_decay);
    z.train.lr_milestones = t.get<std::vector<double>>("lr_milestones", z.train.lr_milestones);
    z.train.lr_decay = t.get<double>("lr_decay", z.train.lr_decay);
    z.train.warmup_epochs = t.get<int>("warmup_epochs", z.train.warmup_epochs);
    t.finish();
    s.finish();
  }
  {
    auto s = root.sub("bank");
    auto& b = c.bank;
    b.models = s.get<std::vector<std::string>>("models", b.models);
    b.taps = s.int_list_or_all("taps");
    b.classes = s.int_list_or_all("classes");
    b.aux.epochs = s.get<int>("epochs", b.aux.epochs);
    b.aux.batch_size = s.get<int>("batch_size", b.aux.batch_size);
    b.aux.learning_rate = s.get<double>("learning_rate", b.aux.learning_rate);
    b.aux.hidden = s.get<int>("hidden", b.aux.hidden);
    b.aux.max_input_dim = s.get<std::size_t>("max_input_dim", b.aux.max_input_dim);
    b.aux.validation_fraction = s.get<double>("validation_fraction", b.aux.validation_fraction);
    b.aux.balance_classes = s.get<bool>("balance_classes", b.aux.balance_classes);
    s.finish();
  }
  {
    auto s = root.sub("attack");
    auto& a = c.attack;
    a.model = s.get<std::string>("model", a.model);
    if (s.has("specs")) {
      const auto& specs = s.raw("specs");
      if (!specs.is_array()) throw ConfigError("config field 'attack.specs': expected a list");
      for (std::size_t i = 0; i < specs.size(); ++i) {
        try {
          auto spec = attacks::AttackSpec::from_json(specs[i]);
          // Targets may be left to the attack stage; check the rest with a stand-in.
          if (attacks::is_targeted(spec.variant) && !spec.y_tgt) spec.y_tgt = spec.y_src + 1;
          spec.validate();
        } catch (const Error& e) {
          throw ConfigError("config field 'attack.specs[" + std::to_string(i) + "]': " + e.what());
        }
        a.specs.push_back(specs[i]);
      }
    } else {
      s.get<json>("specs", json());
    }
    a.samples_per_spec = s.get<int>("samples_per_spec", a.samples_per_spec);
    a.store_tensors = s.get<bool>("store_tensors", a.store_tensors);
    s.finish();
  }
  {
    auto s = root.sub("eval");
    auto& e = c.eval;
    const auto pairs = s.get<std::vector<std::vector<std::string>>>("pairs", {});
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      if (pairs[i].size() != 2) throw ConfigError("config field 'eval.pairs[" + std::to_string(i) + "]': expected [whitebox, blackbox]");
      e.pairs.emplace_back(pairs[i][0], pairs[i][1]);
    }
    const auto variants = s.get<std::vector<std::string>>("variants", {"fda", "fda_ms", "fda_fd", "tpgd", "tmim"});
    for (std::size_t i = 0; i < variants.size(); ++i) {
      try {
        e.variants.push_back(attacks::parse_variant(variants[i]));
      } catch (const ArgumentError& ex) {
        throw ConfigError("config field 'eval.variants[" + std::to_string(i) + "]': " + ex.what());
      }
    }
    e.taps = s.int_list_or_all("taps");
    try {
      e.target_mode = eval::parse_target_mode(s.get<std::string>("target_mode", "all_others"));
      e.objective_space = attacks::parse_space(s.get<std::string>("objective_space", "bce"));
    } catch (const ArgumentError& ex) {
      throw ConfigError(std::string("config section 'eval': ") + ex.what());
    }
    e.max_samples = s.get<std::size_t>("max_samples", e.max_samples);
    e.K = s.get<int>("K", e.K);
    e.targeted_epsilon = s.get<double>("targeted_epsilon", e.targeted_epsilon);
    e.untargeted_epsilon = s.get<double>("untargeted_epsilon", e.untargeted_epsilon);
    e.lambda_weight = s.get<double>("lambda_weight", e.lambda_weight);
    e.eta = s.get<double>("eta", e.eta);
    e.seeds = s.get<std::vector<std::uint64_t>>("seeds", {});
    e.store_tensors = s.get<bool>("store_tensors", e.store_tensors);
    e.chunk = s.get<std::size_t>("chunk", e.chunk);
    s.finish();
  }
  {
    auto s = root.sub("analysis");
    auto& a = c.analysis;
    a.diagnostics = s.get<std::vector<std::string>>("diagnostics", a.diagnostics);
    for (std::size_t i = 0; i < a.diagnostics.size(); ++i)
      if (!known_diagnostics().count(a.diagnostics[i]))
        throw ConfigError("config field 'analysis.diagnostics[" + std::to_string(i) + "]': unknown diagnostic '" +
                          a.diagnostics[i] + "'");
    a.models = s.get<std::vector<std::string>>("models", a.models);
    a.discrepancy_samples = s.get<std::size_t>("discrepancy_samples", a.discrepancy_samples);
    a.saliency_sigma = s.get<double>("saliency_sigma", a.saliency_sigma);
    a.saliency_samples = s.get<int>("saliency_samples", a.saliency_samples);
    a.saliency_images = s.get<int>("saliency_images", a.saliency_images);
    a.separability_samples = s.get<int>("separability_samples", a.separability_samples);
    a.separability_taps = s.int_list_or_all("separability_taps");
    a.distance.step_size = s.get<double>("step_size", a.distance.step_size);
    a.distance.threshold = s.get<double>("threshold", a.distance.threshold);
    a.distance.cap = s.get<int>("cap", a.distance.cap);
    s.finish();
  }
  root.finish();
  if (c.eval.seeds.empty()) c.eval.seeds = {c.seed};
  return c;
}

inline RunConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return parse_config(doc);
}

/// Stable hash of a JSON value (keys are sorted by nlohmann's object map).
inline std::string hash_json(const json& j) { return hash_string(j.dump()); }

}  // namespace fdlab::pipeline
