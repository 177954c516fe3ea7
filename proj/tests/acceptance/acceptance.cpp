// Acceptance suite: runs the full pipeline from one config, then checks the
// ten acceptance criteria and prints one PASS/FAIL line for each.

#include <CLI11.hpp>
#include <chrono>
#include <cstdio>
#include <iostream>
#include <sstream>

#include "../support.hpp"
#include "fdlab/pipeline/stages.hpp"

using namespace fdtest;
using namespace fdlab::attacks;
using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Verdict {
  bool pass = true;
  std::ostringstream detail;
  std::vector<std::string> dump;  // printed only on failure

  void fail(const std::string& why) {
    pass = false;
    dump.push_back(why);
  }
};

struct Run {
  fs::path dir;
  double seconds = 0;
};

const std::vector<std::string> kStages{"train-zoo", "train-banks", "attack", "sweep", "analyze", "report"};

Run run_pipeline(const json& cfg, const fs::path& dir, int jobs) {
  auto c = cfg;
  c["output_dir"] = dir.string();
  pipeline::Options o;
  o.jobs = jobs;
  o.timestamps = false;
  o.log = [](const std::string& s) { std::cerr << "  " << s << '\n'; };
  const auto t0 = Clock::now();
  pipeline::Pipeline p(pipeline::parse_config(c), o);
  for (const auto& s : kStages) {
    std::cerr << "[pipeline] " << s << '\n';
    p.run(s);
  }
  return {dir, seconds_since(t0)};
}

std::string fmt3(double v) {
  char b[32];
  std::snprintf(b, sizeof b, "%.3f", v);
  return b;
}

// ---- shared helpers ----------------------------------------------------------

std::vector<Instance> eligible(const zoo::TappedNetwork<float>& net, const data::Dataset& test, std::size_t n,
                               bool targeted, std::vector<std::size_t>& idx) {
  const auto pred = zoo::predict_dataset(net, test);
  std::vector<Instance> inst;
  idx.clear();
  for (std::size_t i = 0; i < test.size() && inst.size() < n; ++i) {
    const int y = test.items[i].label;
    if (pred[i] != y) continue;
    idx.push_back(i);
    inst.push_back({i, y, targeted ? std::optional<int>((y + 1) % net.num_classes()) : std::nullopt});
  }
  return inst;
}

/// Worst violation of the budget and box over a set of results.
struct Bounds {
  std::size_t n = 0, bad = 0;
  double worst_excess = -1;
};

template <typename T>
void check_bounds(const std::vector<AttackResult<T>>& rs, double eps, Bounds& b) {
  for (const auto& r : rs) {
    ++b.n;
    const double linf = r.linf();
    b.worst_excess = std::max(b.worst_excess, linf - eps);
    bool ok = linf <= eps + 1e-6;
    for (T v : r.x_adv) ok = ok && v >= T(0) && v <= T(1);
    b.bad += !ok;
  }
}

/// Central finite-difference check of every attack loss on the tiny network.
/// Returns the number of failing (variant, space, tap) cases among `variants`.
std::size_t gradient_suite(std::span<const Variant> variants, std::ostringstream& log, std::size_t& cases) {
  auto net = std::make_shared<const zoo::TappedNetwork<double>>(tiny_net<double>(11));
  const auto bank = random_bank<double>(net, 12);
  const auto x0 = random_images<double>(2, 6, 13);
  auto x = x0;
  Rng jitter(14);
  for (auto& v : x) v += jitter.uniform(-0.03, 0.03);
  std::size_t failures = 0;
  for (Variant v : variants)
    for (auto space : {ObjectiveSpace::bce, ObjectiveSpace::probability})
      for (int tap : {0, 1}) {
        auto s = AttackSpec::defaults(v, tap, 0, is_targeted(v) ? std::optional<int>(2) : std::nullopt);
        s.objective_space = space;
        s.eta = 0.3;
        const auto ev = attack_loss(s, *net, &bank, x, x0);
        auto f = [&](const Tensor<double>& in) {
          double sum = 0;
          for (double l : attack_loss(s, *net, &bank, in, x0, false).loss) sum += l;
          return sum;
        };
        const int upto = is_baseline(v) ? net->logit_tap().node : net->tap(tap).node;
        const auto net_pattern = activation_pattern(net->graph(), upto);
        std::vector<Pattern> heads;
        std::vector<const auxtrain::AuxiliaryModel<double>*> models;
        if (uses_aux(v))
          for (int c : {s.y_src, 2}) {
            models.push_back(&bank.model(tap, c));
            heads.push_back(activation_pattern(models.back()->graph(), models.back()->graph().last()));
          }
        auto pattern = [&](const Tensor<double>& in) {
          auto bits = net_pattern(in);
          for (std::size_t h = 0; h < heads.size(); ++h) {
            auto feats = net->forward_to_tap(in, tap);
            Shape shp{in.dim(0)};
            const auto& is = models[h]->graph().input_shape();
            shp.insert(shp.end(), is.begin(), is.end());
            feats.reshape(shp);
            const auto more = heads[h](feats);
            bits.insert(bits.end(), more.begin(), more.end());
          }
          return bits;
        };
        const double err = fd_check(f, x, ev.grad, 10, 900 + std::uint64_t(v) * 4 + std::uint64_t(tap), 1e-4, pattern);
        ++cases;
        if (!(err < 1e-3)) {
          ++failures;
          log << " " << to_string(v) << "/" << to_string(space) << "/tap" << tap << " rel err " << err << ";";
        }
      }
  return failures;
}

/// Seed-averaged value of `metric` per (whitebox, blackbox, variant, tap).
using CurveKey = std::tuple<std::string, std::string, Variant, int>;
std::map<CurveKey, double> seed_average(const std::vector<eval::TransferReport>& reps,
                                        const std::function<double(const eval::TransferReport&)>& metric) {
  std::map<CurveKey, std::pair<double, int>> acc;
  for (const auto& r : reps) {
    if (r.failed()) continue;
    auto& a = acc[{r.whitebox, r.blackbox, r.variant, r.tap}];
    a.first += metric(r);
    a.second += 1;
  }
  std::map<CurveKey, double> out;
  for (const auto& [k, v] : acc) out[k] = v.first / v.second;
  return out;
}

std::string curve_text(const std::map<CurveKey, double>& m, const std::string& w, const std::string& b, Variant v) {
  std::ostringstream s;
  s << w << "->" << b << " " << to_string(v) << ":";
  for (const auto& [k, val] : m)
    if (std::get<0>(k) == w && std::get<1>(k) == b && std::get<2>(k) == v)
      s << " t" << (std::get<3>(k) < 0 ? std::string("logit") : std::to_string(std::get<3>(k))) << "=" << fmt3(val);
  return s.str();
}

std::map<std::string, std::string> csv_files(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".csv") out[fs::relative(e.path(), dir).generic_string()] = slurp(e.path());
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fdlab acceptance suite"};
  std::string config = std::string(FDLAB_SOURCE_DIR) + "/configs/acceptance.json";
  std::string work = (fs::temp_directory_path() / "fdlab_acceptance").string();
  int jobs = int(std::max(1u, std::thread::hardware_concurrency()));
  bool reuse = false;
  app.add_option("--config", config, "pipeline config for the trained-model criteria")->check(CLI::ExistingFile);
  app.add_option("--work", work, "scratch directory");
  app.add_option("--jobs", jobs, "worker threads")->check(CLI::PositiveNumber);
  app.add_flag("--reuse", reuse, "keep an existing first run instead of recomputing it");
  CLI11_PARSE(app, argc, argv);

  json cfg;
  try {
    std::ifstream in(config);
    cfg = json::parse(in);
    pipeline::parse_config(cfg);
  } catch (const std::exception& e) {
    std::cerr << "acceptance: bad config " << config << ": " << e.what() << '\n';
    return 2;
  }
  const std::string config_hash = pipeline::hash_json(cfg);
  const fs::path run1 = fs::path(work) / "run1", run2 = fs::path(work) / "run2";

  std::map<int, Verdict> v;
  for (int i = 1; i <= 10; ++i) v[i];

  // ---- full pipeline, first run --------------------------------------------
  Run first{run1, 0};
  if (reuse && fs::exists(run1 / "report" / "summary.md")) {
    const auto m = json::parse(slurp(run1 / "manifest.json"));
    for (const auto& [_, st] : m.at("stages").items()) first.seconds += st.at("wall_seconds").get<double>();
  } else {
    fs::remove_all(run1);
    first = run_pipeline(cfg, run1, jobs);
  }
  auto c1 = cfg;
  c1["output_dir"] = run1.string();
  pipeline::Options quiet;
  quiet.jobs = jobs;
  quiet.timestamps = false;
  pipeline::Pipeline P(pipeline::parse_config(c1), quiet);
  const auto& pc = P.config();
  const auto& test = P.datasets().second;
  const auto reports = eval::read_reports(run1 / "sweep" / "reports.csv");

  // ---- 1 and 9 (constraints): every variant on a trained model ----------------
  {
    const auto t0 = Clock::now();
    const std::string arch = pc.zoo.archs.front();
    const auto net = P.model(arch);
    const auto& bank = P.bank(arch);
    const int tap = bank.taps()[bank.taps().size() / 2];
    Bounds all, untargeted;
    std::size_t per_variant = 110;
    for (Variant var : all_variants) {
      std::vector<double> budgets{is_targeted(var) ? default_targeted_epsilon : default_untargeted_epsilon};
      const bool untargeted_aux = var == Variant::ufda || var == Variant::ufda_fd || var == Variant::fd_only;
      if (untargeted_aux) budgets = {4.0 / 255.0, 8.0 / 255.0};
      for (double eps : budgets) {
        std::vector<std::size_t> idx;
        const auto inst = eligible(*net, test, per_variant, is_targeted(var), idx);
        auto s = AttackSpec::defaults(var, tap, 0, is_targeted(var) ? std::optional<int>(1) : std::nullopt, eps);
        s.seed = 17;
        const auto rs = run_attack_instances<float>(s, *net, &bank, test.images<float>(idx), inst, {32, jobs});
        check_bounds(rs, eps, all);
        if (untargeted_aux) check_bounds(rs, eps, untargeted);
      }
    }
    const double secs = seconds_since(t0);
    v[1].detail << all.n << " examples over 10 variants, " << all.bad << " violations, worst max|d|-eps "
                << all.worst_excess << ", " << fmt3(secs) << " s";
    if (all.n < 1000) v[1].fail("fewer than 1000 examples");
    if (all.bad) v[1].fail(std::to_string(all.bad) + " examples out of budget or box");
    if (secs >= 300) v[1].fail("runtime " + fmt3(secs) + " s >= 300 s");
    v[9].detail << "constraints: " << untargeted.n << " untargeted examples at eps 4/255 and 8/255, " << untargeted.bad
                << " violations; ";
    if (untargeted.bad) v[9].fail("untargeted constraint violations");
  }

  // ---- 2: optimizer hand values, exact in double -------------------------------
  {
    std::size_t checks = 0;
    auto expect = [&](bool ok, const std::string& what) {
      ++checks;
      if (!ok) v[2].fail(what);
    };
    MomentumState<double> st({2});
    expect(st.m[0] == 0.0 && st.m[1] == 0.0, "m0 is not zero");
    st = momentum_update(st, Tensor<double>({2}, std::vector<double>{2, -2}));
    expect(st.m[0] == 0.5 && st.m[1] == -0.5, "m=0,g=(2,-2) should give (0.5,-0.5)");
    st = momentum_update(st, Tensor<double>({2}, std::vector<double>{0, 0}));
    expect(st.m[0] == 0.5 && st.m[1] == -0.5, "zero gradient should leave m unchanged");
    st = momentum_update(st, Tensor<double>({2}, std::vector<double>{1, 3}));
    expect(st.m[0] == 0.75 && st.m[1] == 0.25, "m=(0.5,-0.5),g=(1,3) should give (0.75,0.25)");

    const Tensor<double> x0({1, 1, 2, 2}, std::vector<double>{0.3, 0.4, 0.5, 0.6});
    MomentumState<double> pos(x0.shape());
    for (auto& m : pos.m) m = 0.25;
    const double alpha = 0.01, eps = 0.05;
    const auto dec = perturb_step(x0, pos, alpha, eps, x0);
    for (std::size_t i = 0; i < 4; ++i) expect(dec[i] == x0[i] - alpha, "sign step should subtract alpha exactly");

    const Tensor<double> edge({1, 1, 1, 3}, std::vector<double>{0.0, 1.0, 0.5});
    MomentumState<double> se(edge.shape());
    se.m = Tensor<double>(edge.shape(), std::vector<double>{1.0, -1.0, 0.0});
    const auto clipped = perturb_step(edge, se, 0.1, 0.2, edge);
    expect(clipped[0] == 0.0, "pixel at 0 with positive m must stay 0");
    expect(clipped[1] == 1.0, "pixel at 1 with negative m must stay 1");
    expect(clipped[2] == 0.5, "sign(0) must leave the pixel unchanged");

    const Tensor<double> c({1, 1, 1, 2}, std::vector<double>{0.5, 0.5});
    const Tensor<double> I({1, 1, 1, 2}, std::vector<double>{0.45, 0.56});
    MomentumState<double> sp(c.shape());
    sp.m = Tensor<double>(c.shape(), std::vector<double>{1.0, -1.0});
    StepStats stats;
    const auto proj = perturb_step(I, sp, 0.02, 0.06, c, &stats);
    expect(proj[0] == 0.5 - 0.06, "projection onto the lower face of the ball");
    expect(proj[1] == 0.5 + 0.06, "projection onto the upper face of the ball");
    v[2].detail << checks << " hand-evaluated values";
  }

  // ---- 3 and 9 (gradients): finite differences on the tiny network -------------
  {
    const auto t0 = Clock::now();
    std::ostringstream log;
    std::size_t cases = 0;
    const std::size_t bad = gradient_suite(all_variants, log, cases);
    const double secs = seconds_since(t0);
    v[3].detail << cases << " loss cases (10 variants x 2 spaces x 2 taps), " << bad << " failing, " << fmt3(secs) << " s";
    if (bad) v[3].fail("finite-difference mismatch:" + log.str());
    if (secs >= 60) v[3].fail("runtime " + fmt3(secs) + " s >= 60 s");
    const Variant untargeted_aux[] = {Variant::ufda, Variant::ufda_fd, Variant::fd_only};
    std::ostringstream ulog;
    std::size_t ucases = 0;
    const std::size_t ubad = gradient_suite(untargeted_aux, ulog, ucases);
    v[9].detail << "gradients: " << ucases - ubad << "/" << ucases << " pass; ";
    if (ubad) v[9].fail("untargeted finite-difference mismatch:" + ulog.str());
  }

  // ---- 4: metric oracle and tSuc <= error on every report ----------------------
  {
    Rng rng(31);
    std::size_t mismatches = 0;
    for (int table = 0; table < 20; ++table) {
      std::vector<eval::Outcome> rows(std::size_t(rng.integer(1, 60)));
      for (auto& o : rows) {
        o.y_src = int(rng.integer(0, 9));
        const int t = int(rng.integer(0, 8));
        o.y_tgt = t >= o.y_src ? t + 1 : t;
        o.white_pred = int(rng.integer(0, 9));
        o.black_pred = int(rng.integer(0, 9));
      }
      std::size_t bf = 0, bh = 0, wf = 0, wh = 0, tf = 0, th = 0;
      for (const auto& o : rows) {
        bf += o.black_pred != o.y_src;
        bh += o.black_pred == *o.y_tgt;
        if (o.white_pred != o.y_src) {
          ++wf;
          tf += o.black_pred != o.y_src;
        }
        if (o.white_pred == *o.y_tgt) {
          ++wh;
          th += o.black_pred == *o.y_tgt;
        }
      }
      const double n = double(rows.size());
      const auto r = eval::score_outcomes(rows);
      const bool ok = r.error == bf / n && r.tsuc == bh / n && r.utr == (wf ? double(tf) / double(wf) : 0.0) &&
                      r.ttr == (wh ? double(th) / double(wh) : 0.0);
      mismatches += !ok;
    }
    std::size_t violations = 0;
    for (const auto& r : reports) violations += r.tsuc > r.error;
    v[4].detail << "20 tables, " << mismatches << " mismatches; " << reports.size() << " emitted reports, " << violations
                << " with tSuc > error";
    if (mismatches) v[4].fail("score_outcomes differs from enumeration");
    if (violations) v[4].fail("tSuc exceeds error on some report");
    if (reports.empty()) v[4].fail("no reports emitted");
  }

  // ---- 5: whitebox efficacy ----------------------------------------------------
  {
    const auto white_tsuc =
        seed_average(reports, [](const eval::TransferReport& r) { return r.n ? double(r.n_white_targeted) / double(r.n) : 0.0; });
    std::set<std::string> whites;
    for (const auto& [w, b] : pc.eval.pairs) whites.insert(w);
    for (const auto& w : whites) {
      const int logit = P.model(w)->logit_tap().index;
      double tmim = -1, fda = -1;
      for (const auto& [k, val] : white_tsuc) {
        if (std::get<0>(k) != w) continue;
        if (std::get<2>(k) == Variant::tmim) tmim = val;
        if (std::get<2>(k) == Variant::fda && std::get<3>(k) == logit) fda = val;
      }
      v[5].detail << w << ": tmim " << fmt3(tmim) << ", fda@logit " << fmt3(fda) << "; ";
      if (tmim < 0.90) v[5].fail(w + " tmim whitebox targeted success " + fmt3(tmim) + " < 0.90");
      if (fda < 0.70) v[5].fail(w + " fda@logit whitebox targeted success " + fmt3(fda) + " < 0.70");
    }
    v[5].detail << "config " << config_hash.substr(0, 12);
  }

  // ---- 6: depth trends -----------------------------------------------------------
  {
    const auto tsuc = seed_average(reports, [](const eval::TransferReport& r) { return r.tsuc; });
    for (const auto& [w, b] : pc.eval.pairs) {
      const auto& bank = P.bank(w);
      const int logit = P.model(w)->logit_tap().index;
      const auto& taps = bank.taps();
      const int shallow = taps.front();
      int best = -1;
      double best_val = -1;
      for (int t : taps) {
        if (t == shallow || t == logit) continue;
        const auto it = tsuc.find({w, b, Variant::fda_fd, t});
        if (it != tsuc.end() && it->second > best_val) {
          best_val = it->second;
          best = t;
        }
      }
      const auto at = [&](Variant var, int t) {
        const auto it = tsuc.find({w, b, var, t});
        return it == tsuc.end() ? -1.0 : it->second;
      };
      const double s = at(Variant::fda_fd, shallow), fd_best = at(Variant::fda_fd, best), fda_best = at(Variant::fda, best);
      v[6].detail << w << "->" << b << ": (a) best t" << best << " " << fmt3(fd_best) << " vs t" << shallow << " " << fmt3(s)
                  << ", (b) fda_fd " << fmt3(fd_best) << " vs fda " << fmt3(fda_best) << "; ";
      bool curve = false;
      if (best < 0 || fd_best < s) {
        v[6].fail("(a) " + w + "->" + b + ": best intermediate tSuc " + fmt3(fd_best) + " < shallowest " + fmt3(s));
        curve = true;
      }
      if (best < 0 || fd_best < fda_best) {
        v[6].fail("(b) " + w + "->" + b + ": fda_fd " + fmt3(fd_best) + " < fda " + fmt3(fda_best) + " at t" +
                  std::to_string(best));
        curve = true;
      }
      if (curve) {
        v[6].dump.push_back("  " + curve_text(tsuc, w, b, Variant::fda_fd));
        v[6].dump.push_back("  " + curve_text(tsuc, w, b, Variant::fda));
      }
    }
    // (c) from the persisted discrepancy table.
    fs::path disc;
    for (const auto& e : fs::directory_iterator(run1 / "analysis"))
      if (fs::exists(e.path() / "discrepancy.csv")) disc = e.path() / "discrepancy.csv";
    if (disc.empty()) {
      v[6].fail("(c) no discrepancy table; add \"discrepancy\" to analysis.diagnostics");
    } else {
      const auto t = read_csv(disc);
      std::map<std::string, std::map<int, double>> by_model;
      for (std::size_t i = 0; i < t.rows.size(); ++i) by_model[t.at(i, "model")][std::stoi(t.at(i, "tap"))] = std::stod(t.at(i, "discrepancy"));
      for (const auto& [m, curve] : by_model) {
        const double shallow = curve.begin()->second, deep = curve.rbegin()->second;
        v[6].detail << "(c) " << m << " KL t" << curve.rbegin()->first << " " << fmt3(deep) << " vs t" << curve.begin()->first
                    << " " << fmt3(shallow) << "; ";
        if (!(deep < shallow)) {
          std::ostringstream s;
          s << "  " << m << " discrepancy:";
          for (const auto& [tap, d] : curve) s << " t" << tap << "=" << d;
          v[6].fail("(c) " + m + ": deepest-tap discrepancy not below shallowest");
          v[6].dump.push_back(s.str());
        }
      }
    }
  }

  // ---- 7: analysis identities ------------------------------------------------------
  {
    std::size_t checks = 0;
    const std::string arch = pc.zoo.archs.front();
    const auto& bank = P.bank(arch);
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < 50 && i < test.size(); ++i) idx.push_back(i);
    const auto x = test.images<float>(idx);
    std::vector<int> tgt;
    for (std::size_t i : idx) tgt.push_back((test.items[i].label + 1) % test.num_classes);
    for (int tap : bank.taps())
      for (float d : analysis::disruption<float>(bank, tap, tgt, x, x)) {
        ++checks;
        if (d != 0.0f) v[7].fail("disruption(x, x) != 0 at tap " + std::to_string(tap));
      }

    Rng rng(77);
    std::size_t negative = 0;
    for (int i = 0; i < 1000; ++i) {
      std::vector<double> a(10), b(10);
      for (auto& e : a) e = rng.normal() * 3;
      for (auto& e : b) e = rng.normal() * 3;
      negative += analysis::kl_softmax<double>(a, b) < 0;
    }
    if (negative) v[7].fail(std::to_string(negative) + " negative KL values");

    auto net = std::make_shared<const zoo::TappedNetwork<double>>(tiny_net<double>(10));
    const int logit = net->logit_tap().index;
    auxtrain::AuxiliaryBank<double> copy(net);
    auxtrain::AuxConfig ac;
    ac.hidden = 2;
    for (int c = 0; c < net->num_classes(); ++c) {
      Rng r(1);
      auto m = auxtrain::AuxiliaryModel<double>::create(logit, c, net->feature_shape(logit), ac, r);
      auto p = m.graph().parameters();
      for (auto* t : p)
        for (auto& e : *t) e = 0;
      // z_c = relu(z_c) - relu(-z_c), carried through both hidden layers.
      const std::size_t in = net->feature_size(logit);
      (*p[0])[std::size_t(c)] = 1;
      (*p[0])[in + std::size_t(c)] = -1;
      (*p[2])[0] = 1;
      (*p[2])[3] = 1;
      (*p[4])[0] = 1;
      (*p[4])[1] = -1;
      copy.insert(std::move(m), 1.0);
    }
    const auto xd = random_images<double>(100, 6, 11, 0.0, 1.0);
    double worst = 0;
    for (double d : analysis::discrepancy<double>(copy, *net, logit, xd)) worst = std::max(worst, d);
    if (!(worst < 1e-9)) v[7].fail("logit-copy bank discrepancy " + std::to_string(worst));

    std::size_t maps = 0;
    for (std::size_t i = 0; i < 3; ++i) {
      const auto& img = test.items[i].pixels;
      for (int tap : bank.taps()) {
        const int c = test.items[i].label;
        const auto a = analysis::smoothgrad_saliency<float>(bank, tap, c, img, 0.15, 8, 5 + i);
        const auto b = analysis::smoothgrad_saliency<float>(bank, tap, c, img, 0.15, 8, 5 + i);
        ++maps;
        if (!std::equal(a.map.begin(), a.map.end(), b.map.begin())) v[7].fail("saliency map not seed-deterministic");
        for (float e : a.map)
          if (e < 0) {
            v[7].fail("negative saliency value");
            break;
          }
      }
    }
    v[7].detail << checks << " disruption values, 1000 KL pairs, logit-copy max KL " << worst << ", " << maps
                << " saliency maps";
  }

  // ---- 8: separability at the logit tap --------------------------------------------
  {
    const auto t0 = Clock::now();
    analysis::DistanceParams dp;
    dp.step_size = 1e-3;
    dp.cap = 3000;
    for (const auto& arch : P.bank_models()) {
      const auto net = P.model(arch);
      const auto& bank = P.bank(arch);
      const int logit = net->logit_tap().index;
      std::vector<std::size_t> idx;
      for (std::size_t i = 0; i < test.size() && idx.size() < 20; ++i) idx.push_back(i);
      const auto rep = analysis::separability<float>(bank, *net, logit, test.images<float>(idx), test.labels(idx), dp);
      v[8].detail << arch << " " << (rep.separability ? fmt3(*rep.separability) : std::string("undefined")) << " (intra "
                  << fmt3(rep.mean_intra) << ", inter " << fmt3(rep.mean_inter) << ", censored " << rep.censored << "/"
                  << rep.runs << "); ";
      if (!rep.separability || !(*rep.separability > 0)) v[8].fail(arch + ": separability not positive at the logit tap");
    }
    v[8].detail << "step " << dp.step_size << ", cap " << dp.cap << ", " << fmt3(seconds_since(t0)) << " s";
  }

  // ---- 9 (trend): uFDA+fd vs uFDA whitebox error ---------------------------------
  {
    const auto werr =
        seed_average(reports, [](const eval::TransferReport& r) { return r.n ? double(r.n_white_fooled) / double(r.n) : 0.0; });
    std::set<std::string> whites;
    for (const auto& [w, b] : pc.eval.pairs) whites.insert(w);
    std::size_t compared = 0;
    for (const auto& w : whites) {
      // Whitebox error does not depend on the blackbox; use the first pair of this whitebox.
      std::string b;
      for (const auto& p : pc.eval.pairs)
        if (p.first == w) {
          b = p.second;
          break;
        }
      int best = -1;
      double best_val = -1;
      for (const auto& [k, val] : werr)
        if (std::get<0>(k) == w && std::get<1>(k) == b && std::get<2>(k) == Variant::ufda_fd && val > best_val) {
          best_val = val;
          best = std::get<3>(k);
        }
      const auto it = werr.find({w, b, Variant::ufda, best});
      if (best < 0 || it == werr.end()) {
        v[9].fail(w + ": sweep lacks ufda/ufda_fd cells");
        continue;
      }
      ++compared;
      v[9].detail << w << " t" << best << ": ufda_fd " << fmt3(best_val) << " vs ufda " << fmt3(it->second) << "; ";
      if (best_val < it->second) {
        v[9].fail(w + ": ufda_fd whitebox error below ufda at its best tap");
        v[9].dump.push_back("  " + curve_text(werr, w, b, Variant::ufda_fd));
        v[9].dump.push_back("  " + curve_text(werr, w, b, Variant::ufda));
      }
    }
    if (!compared) v[9].fail("no whitebox compared");
  }

  // ---- 10: rerun from the same config, byte-identical CSVs --------------------------
  {
    fs::remove_all(run2);
    const auto second = run_pipeline(cfg, run2, jobs);
    const auto a = csv_files(run1), b = csv_files(run2);
    std::size_t differ = 0;
    for (const auto& [name, bytes] : a) {
      const auto it = b.find(name);
      if (it == b.end() || it->second != bytes) {
        ++differ;
        v[10].dump.push_back("  differs: " + name);
      }
    }
    for (const auto& [name, _] : b)
      if (!a.count(name)) {
        ++differ;
        v[10].dump.push_back("  only in rerun: " + name);
      }
    v[10].detail << a.size() << " CSVs compared, " << differ << " differ; pipeline " << fmt3(first.seconds) << " s and "
                 << fmt3(second.seconds) << " s";
    if (differ) v[10].fail("CSV contents differ between runs");
    if (a.empty()) v[10].fail("no CSVs produced");
    if (std::max(first.seconds, second.seconds) > 3600) v[10].fail("pipeline runtime above 60 min");
  }

  const char* names[] = {"",
                         "constraint suite",
                         "optimizer unit suite",
                         "gradient suite",
                         "metric oracle",
                         "whitebox efficacy",
                         "depth-trend suite",
                         "analysis identities",
                         "separability sanity",
                         "untargeted suite",
                         "end-to-end reproducibility"};
  int failed = 0;
  for (auto& [i, r] : v) {
    std::cout << (r.pass ? "PASS" : "FAIL") << " " << i << " " << names[i] << ": " << r.detail.str() << '\n';
    if (!r.pass) {
      ++failed;
      for (const auto& d : r.dump) std::cout << "    " << d << '\n';
    }
  }
  std::cout << (10 - failed) << "/10 criteria passed\n";
  return failed ? 1 : 0;
}
