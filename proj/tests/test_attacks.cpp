#include "fdlab/attacks/records.hpp"
#include "support.hpp"

using namespace fdtest;
using namespace fdlab::attacks;

namespace {

const auxtrain::AuxiliaryBank<double>* const kNoBank = nullptr;

Tensor<double> vec(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor<double>({n}, std::move(v));
}

std::shared_ptr<const zoo::TappedNetwork<double>> tiny(std::uint64_t seed = 1) {
  return std::make_shared<const zoo::TappedNetwork<double>>(tiny_net<double>(seed));
}

// Zeroes a head and sets its output bias, so p = sigmoid(bias) for every input.
void make_constant(auxtrain::AuxiliaryModel<double>& m, double bias) {
  auto params = m.graph().parameters();
  for (auto* p : params)
    for (auto& v : *p) v = 0;
  (*params.back())[0] = bias;
}

auxtrain::AuxiliaryBank<double> constant_bank(std::shared_ptr<const zoo::TappedNetwork<double>> net, double bias) {
  auxtrain::AuxiliaryBank<double> bank(net);
  auxtrain::AuxConfig cfg;
  cfg.hidden = 4;
  for (int t = 0; t < net->num_taps(); ++t)
    for (int c = 0; c < net->num_classes(); ++c) {
      Rng rng(1);
      auto m = auxtrain::AuxiliaryModel<double>::create(t, c, net->feature_shape(t), cfg, rng);
      make_constant(m, bias);
      bank.insert(std::move(m), 0.5);
    }
  return bank;
}

AttackSpec spec_for(Variant v, int tap = 0, int y_src = 0) {
  return AttackSpec::defaults(v, tap, y_src, is_targeted(v) ? std::optional<int>(2) : std::nullopt);
}

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

// ---- loss ----

TEST(AttackLoss, BceAtTargetIsClamped) {
  EXPECT_NEAR(bce(1.0 - 1e-7, 1), 1e-7, 1e-12);
  EXPECT_NEAR(bce(1.0, 1), -std::log(1 - 1e-7), 1e-15);
  EXPECT_TRUE(std::isfinite(bce(0.0, 1)));
  EXPECT_NEAR(bce(0.0, 1), -std::log(1e-7), 1e-9);
}

TEST(AttackLoss, SaturatedTargetHeadGivesTinyLoss) {
  auto net = tiny();
  const auto bank = constant_bank(net, 40.0);  // sigmoid(40) rounds above 1 - 1e-7
  const auto x = random_images<double>(3, 6, 1);
  const auto ev = attack_loss(spec_for(Variant::fda), *net, &bank, x, x);
  for (double l : ev.loss) EXPECT_NEAR(l, 1e-7, 1e-12);
}

TEST(AttackLoss, HalfProbabilityGivesLn2) {
  auto net = tiny();
  const auto bank = constant_bank(net, 0.0);
  const auto x = random_images<double>(3, 6, 2);
  for (int tap : {0, 1}) {
    const auto ev = attack_loss(spec_for(Variant::fda, tap), *net, &bank, x, x);
    for (double l : ev.loss) EXPECT_NEAR(l, -std::log(0.5), 1e-15);
    EXPECT_NEAR(ev.loss[0], 0.6931, 1e-4);
  }
}

TEST(AttackLoss, ProbabilitySpaceNegatesObjectives) {
  auto net = tiny();
  const auto bank = constant_bank(net, 0.0);
  const auto x = random_images<double>(2, 6, 3);
  auto s = spec_for(Variant::fda);
  s.objective_space = ObjectiveSpace::probability;
  for (double l : attack_loss(s, *net, &bank, x, x).loss) EXPECT_DOUBLE_EQ(l, -0.5);
  s = spec_for(Variant::fda_ms);
  s.objective_space = ObjectiveSpace::probability;
  for (double l : attack_loss(s, *net, &bank, x, x).loss) EXPECT_DOUBLE_EQ(l, -0.8 * 0.5 + 0.2 * 0.5);
  s = spec_for(Variant::ufda);
  s.objective_space = ObjectiveSpace::probability;
  for (double l : attack_loss(s, *net, &bank, x, x).loss) EXPECT_DOUBLE_EQ(l, 0.5);
  // BCE space composition for comparison.
  s = spec_for(Variant::fda_ms);
  for (double l : attack_loss(s, *net, &bank, x, x).loss) EXPECT_NEAR(l, 0.8 * std::log(2.0) + 0.2 * std::log(2.0), 1e-15);
}

TEST(AttackLoss, FdOnlyAtCleanInputIsZero) {
  auto net = tiny();
  const auto x = random_images<double>(4, 6, 4);
  for (int tap : {0, 1}) {
    const auto ev = attack_loss(spec_for(Variant::fd_only, tap), *net, kNoBank, x, x);
    for (double l : ev.loss) EXPECT_EQ(l, 0.0);
    for (double g : ev.grad) EXPECT_EQ(g, 0.0);
  }
}

TEST(AttackLoss, FdaFdWithZeroEtaEqualsFda) {
  auto net = tiny();
  const auto bank = random_bank<double>(net, 6);
  const auto x0 = random_images<double>(3, 6, 5);
  const auto x = random_images<double>(3, 6, 6);
  for (int tap : {0, 1}) {
    auto fd = spec_for(Variant::fda_fd, tap);
    fd.eta = 0;
    const auto a = attack_loss(spec_for(Variant::fda, tap), *net, &bank, x, x0);
    const auto b = attack_loss(fd, *net, &bank, x, x0);
    EXPECT_EQ(a.loss, b.loss);
    EXPECT_TRUE(std::equal(a.grad.begin(), a.grad.end(), b.grad.begin()));
  }
}

TEST(AttackLoss, DisruptionMatchesDefinition) {
  auto net = tiny();
  const auto x0 = random_images<double>(2, 6, 7);
  const auto x = random_images<double>(2, 6, 8);
  const auto ev = attack_loss(spec_for(Variant::fd_only, 0), *net, kNoBank, x, x0);
  const auto f = net->forward_to_tap(x, 0), f0 = net->forward_to_tap(x0, 0);
  const std::size_t d = f.sample_size();
  for (std::size_t i = 0; i < 2; ++i) {
    double num = 0, den = 0;
    for (std::size_t j = 0; j < d; ++j) {
      num += (f[i * d + j] - f0[i * d + j]) * (f[i * d + j] - f0[i * d + j]);
      den += f0[i * d + j] * f0[i * d + j];
    }
    EXPECT_NEAR(ev.loss[i], -std::sqrt(num) / (std::sqrt(den) + 1e-12), 1e-12);
  }
}

TEST(AttackLoss, BaselinesUseCrossEntropyOnLogits) {
  auto net = tiny();
  const auto x = random_images<double>(2, 6, 9);
  const auto z = net->forward_logits(x);
  auto ce = [&](std::size_t i, int y) {
    double mx = -1e300;
    for (int c = 0; c < 3; ++c) mx = std::max(mx, z[i * 3 + c]);
    double s = 0;
    for (int c = 0; c < 3; ++c) s += std::exp(z[i * 3 + c] - mx);
    return std::log(s) + mx - z[i * 3 + y];
  };
  for (Variant v : {Variant::tpgd, Variant::tmim, Variant::upgd, Variant::umim}) {
    const auto ev = attack_loss(spec_for(v, 0, 1), *net, kNoBank, x, x);
    for (std::size_t i = 0; i < 2; ++i) EXPECT_NEAR(ev.loss[i], is_targeted(v) ? ce(i, 2) : -ce(i, 1), 1e-12);
  }
}

TEST(AttackLoss, MissingAuxModelIsLookupError) {
  auto net = tiny();
  auxtrain::AuxiliaryBank<double> bank(net);
  const auto x = random_images<double>(1, 6, 1);
  EXPECT_THROW(attack_loss(spec_for(Variant::fda), *net, &bank, x, x), LookupError);
  EXPECT_THROW(attack_loss(spec_for(Variant::ufda), *net, kNoBank, x, x), LookupError);
  EXPECT_THROW(run_attack(spec_for(Variant::fda_ms), *net, &bank, x), LookupError);
}

TEST(AttackLoss, NonFiniteLossIsNumericErrorNamingSample) {
  auto net = tiny();
  auto bank = constant_bank(net, 0.0);
  // A corrupt head for class 1 only; sample 2 is the one targeting it.
  auxtrain::AuxConfig cfg;
  cfg.hidden = 4;
  Rng rng(1);
  auto bad = auxtrain::AuxiliaryModel<double>::create(0, 1, net->feature_shape(0), cfg, rng);
  make_constant(bad, std::numeric_limits<double>::quiet_NaN());
  bank.insert(std::move(bad), 0.5);
  const auto x = random_images<double>(3, 6, 1);
  Targets who{{0, 0, 0}, {2, 2, 1}};
  try {
    evaluate_loss<double>(Variant::fda, ObjectiveSpace::bce, 0.8, 0.0, 0, *net, &bank, x, who, nullptr, false);
    FAIL() << "expected a numeric error";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("sample 2"), std::string::npos) << e.what();
  }
}

TEST(AttackLoss, GradientMatchesFiniteDifferencesAllVariantsBothSpaces) {
  auto net = tiny(11);
  const auto bank = random_bank<double>(net, 12);
  const auto x0 = random_images<double>(2, 6, 13);
  auto x = x0;
  Rng jitter(14);
  for (auto& v : x) v += jitter.uniform(-0.03, 0.03);
  for (Variant v : all_variants)
    for (auto space : {ObjectiveSpace::bce, ObjectiveSpace::probability})
      for (int tap : {0, 1}) {
        auto s = spec_for(v, tap);
        s.objective_space = space;
        s.eta = 0.3;  // large enough for the disruption term to matter
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
        EXPECT_LT(fd_check(f, x, ev.grad, 10, 500 + std::uint64_t(v) * 4 + std::uint64_t(tap), 1e-4, pattern), 1e-3)
            << to_string(v) << " " << to_string(space) << " tap " << tap;
      }
}

// ---- momentum ----

TEST(Momentum, HandEvaluatedStep) {
  MomentumState<double> st({2});
  EXPECT_EQ(st.m[0], 0.0);
  EXPECT_EQ(st.m[1], 0.0);
  st = momentum_update(st, vec({2, -2}));
  EXPECT_DOUBLE_EQ(st.m[0], 0.5);
  EXPECT_DOUBLE_EQ(st.m[1], -0.5);
}

TEST(Momentum, ZeroGradientLeavesStateUnchanged) {
  MomentumState<double> st({2});
  st.m = vec({0.5, -0.5});
  st = momentum_update(st, vec({0, 0}));
  EXPECT_EQ(st.m[0], 0.5);
  EXPECT_EQ(st.m[1], -0.5);
}

TEST(Momentum, ShapeMismatchIsArgumentError) {
  MomentumState<double> st({2});
  EXPECT_THROW(momentum_update(st, vec({1, 2, 3})), ArgumentError);
  MomentumState<double> b({2, 3});
  EXPECT_THROW(momentum_update_batch(b, Tensor<double>({3, 2})), ArgumentError);
}

TEST(MomentumProperty, UnitL1Increment) {
  Rng rng(3);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = std::size_t(rng.integer(1, 40));
    MomentumState<double> st({n});
    for (auto& v : st.m) v = rng.normal();
    Tensor<double> g({n});
    for (auto& v : g) v = rng.uniform() < 0.3 ? 0.0 : rng.normal() * std::pow(10.0, rng.uniform(-5, 5));
    const auto before = st.m;
    double gl1 = 0;
    for (double v : g) gl1 += std::abs(v);
    st = momentum_update(st, g);
    double d = 0;
    for (std::size_t i = 0; i < n; ++i) d += std::abs(st.m[i] - before[i]);
    if (gl1 > 0) EXPECT_NEAR(d, 1.0, 1e-12);
    else EXPECT_EQ(d, 0.0);
  }
}

TEST(Momentum, BatchFormNormalizesPerSample) {
  MomentumState<double> st({2, 2});
  Tensor<double> g({2, 2}, std::vector<double>{2, -2, 0, 10});
  momentum_update_batch(st, g);
  EXPECT_DOUBLE_EQ(st.m[0], 0.5);
  EXPECT_DOUBLE_EQ(st.m[1], -0.5);
  EXPECT_DOUBLE_EQ(st.m[2], 0.0);
  EXPECT_DOUBLE_EQ(st.m[3], 1.0);
}

// ---- perturb_step ----

TEST(PerturbStep, PositiveMomentumDecreasesByAlpha) {
  const auto x0 = random_images<double>(2, 4, 1, 0.3, 0.7);
  MomentumState<double> st(x0.shape());
  for (auto& v : st.m) v = 0.25;
  const double alpha = 0.01;
  StepStats stats;
  const auto out = perturb_step(x0, st, alpha, 0.05, x0, &stats);
  for (std::size_t i = 0; i < out.size(); ++i) EXPECT_EQ(out[i], x0[i] - alpha);
  EXPECT_EQ(stats.projected, 0u);
  EXPECT_EQ(stats.clipped, 0u);
}

TEST(PerturbStep, PixelAtZeroStaysZero) {
  Tensor<double> x0({1, 1, 1, 3}, std::vector<double>{0.0, 1.0, 0.5});
  MomentumState<double> st(x0.shape());
  st.m = Tensor<double>(x0.shape(), std::vector<double>{1.0, -1.0, 0.0});
  const auto out = perturb_step(x0, st, 0.1, 0.2, x0);
  EXPECT_EQ(out[0], 0.0);
  EXPECT_EQ(out[1], 1.0);
  EXPECT_EQ(out[2], 0.5);  // sign(0) = 0
}

TEST(PerturbStep, ProjectsOntoBall) {
  Tensor<double> x0({1, 1, 1, 2}, std::vector<double>{0.5, 0.5});
  Tensor<double> I({1, 1, 1, 2}, std::vector<double>{0.45, 0.56});
  MomentumState<double> st(x0.shape());
  st.m = Tensor<double>(x0.shape(), std::vector<double>{1.0, -1.0});
  StepStats stats;
  const auto out = perturb_step(I, st, 0.02, 0.06, x0, &stats);
  EXPECT_DOUBLE_EQ(out[0], 0.44);
  EXPECT_DOUBLE_EQ(out[1], 0.56);
  EXPECT_EQ(stats.projected, 2u);
  EXPECT_THROW(perturb_step(I, MomentumState<double>({3}), 0.1, 0.1, x0), ArgumentError);
}

TEST(PerturbStep, RandomStartTpgdStaysInBall) {
  auto net = tiny(2);
  const auto x = random_images<double>(3, 6, 2, 0.0, 1.0);
  double worst = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    auto s = spec_for(Variant::tpgd, 0, 1);
    s.seed = seed;
    for (const auto& r : run_attack(s, *net, kNoBank, x)) {
      worst = std::max(worst, r.linf());
      for (double v : r.x_adv) {
        ASSERT_GE(v, 0.0);
        ASSERT_LE(v, 1.0);
      }
    }
  }
  EXPECT_LE(worst, 16.0 / 255.0 + 1e-12);
}

// ---- run_attack ----

TEST(RunAttack, ZeroIterationsIsIdentityWithoutRandomStart) {
  auto net = tiny(3);
  const auto bank = random_bank<double>(net);
  const auto x = random_images<double>(2, 6, 3);
  for (Variant v : all_variants) {
    auto s = spec_for(v, 1);
    s.with_iterations(0);
    for (const auto& r : run_attack(s, *net, &bank, x)) {
      ASSERT_EQ(r.loss_trace.size(), 1u);
      if (random_start(v)) {
        EXPECT_LE(r.linf(), s.epsilon + 1e-12);
      } else {
        EXPECT_TRUE(std::equal(r.x.begin(), r.x.end(), r.x_adv.begin())) << to_string(v);
        EXPECT_EQ(r.linf(), 0.0);
      }
    }
  }
}

TEST(RunAttack, InvariantsHoldAtEveryIterationForAllVariants) {
  auto net = tiny(4);
  const auto bank = random_bank<double>(net, 5);
  // Pixels near the box edges exercise the clip.
  const auto x = random_images<double>(3, 6, 4, 0.0, 1.0);
  for (Variant v : all_variants)
    for (int K = 0; K <= 10; ++K) {
      auto s = spec_for(v, 0);
      s.K = K;
      s.alpha = s.epsilon / 10;
      for (const auto& r : run_attack(s, *net, &bank, x)) {
        EXPECT_LE(r.linf(), s.epsilon + 1e-6) << to_string(v) << " K " << K;
        for (double p : r.x_adv) {
          ASSERT_GE(p, 0.0);
          ASSERT_LE(p, 1.0);
        }
        EXPECT_EQ(r.loss_trace.size(), std::size_t(K + 1));
        if (!random_start(v)) EXPECT_EQ(r.projected_pixels, 0u) << to_string(v) << " K " << K;
      }
    }
}

TEST(RunAttack, FloatRunsRespectBudget) {
  auto net = std::make_shared<const zoo::TappedNetwork<float>>(tiny_net<float>(5));
  const auto bank = random_bank<float>(net, 6);
  const auto x = random_images<float>(4, 6, 5, 0.0, 1.0);
  for (Variant v : all_variants)
    for (const auto& r : run_attack(spec_for(v, 0), *net, &bank, x)) {
      EXPECT_LE(r.linf(), spec_for(v).epsilon + 1e-6) << to_string(v);
      if (!random_start(v)) EXPECT_EQ(r.projected_pixels, 0u) << to_string(v);
    }
}

TEST(RunAttack, SameSeedBitIdenticalAndJobsIndependent) {
  auto net = tiny(6);
  const auto bank = random_bank<double>(net, 7);
  const auto x = random_images<double>(7, 6, 6);
  for (Variant v : {Variant::tpgd, Variant::fda_fd, Variant::umim}) {
    auto s = spec_for(v, 0);
    s.seed = 9;
    AttackOptions<double> one{2, 1}, many{2, 3};
    const auto a = run_attack(s, *net, &bank, x, one);
    const auto b = run_attack(s, *net, &bank, x, many);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      EXPECT_TRUE(std::equal(a[i].delta.begin(), a[i].delta.end(), b[i].delta.begin())) << to_string(v);
      EXPECT_EQ(a[i].loss_trace, b[i].loss_trace);
    }
  }
  auto s = spec_for(Variant::tpgd, 0);
  s.seed = 1;
  const auto a = run_attack(s, *net, &bank, x);
  s.seed = 2;
  const auto b = run_attack(s, *net, &bank, x);
  EXPECT_GT(max_abs_diff(a[0].delta, b[0].delta), 0.0);
}

TEST(RunAttack, InvalidInstanceNamesIndex) {
  auto net = tiny(6);
  const auto x = random_images<double>(2, 6, 6);
  std::vector<Instance> inst{{10, 0, 1}, {11, 1, 1}};
  try {
    run_attack_instances(spec_for(Variant::tmim), *net, kNoBank, x, inst);
    FAIL() << "expected an argument error";
  } catch (const ArgumentError& e) {
    EXPECT_NE(std::string(e.what()).find("instance 11"), std::string::npos) << e.what();
  }
}

class WhiteboxFda : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    const auto& t = Trained::get();
    auxtrain::AuxConfig cfg;
    cfg.epochs = 10;
    cfg.hidden = 32;
    cfg.batch_size = 32;
    bank_ = new auxtrain::AuxiliaryBank<float>(
        auxtrain::train_bank<float>(t.net, {t.net->logit_tap().index}, {0, 1, 2, 3}, t.train, cfg));
  }
  static void TearDownTestSuite() { delete bank_; }
  static auxtrain::AuxiliaryBank<float>* bank_;
};
auxtrain::AuxiliaryBank<float>* WhiteboxFda::bank_ = nullptr;

TEST_F(WhiteboxFda, RaisesTargetProbabilityAndLowersLoss) {
  const auto& t = Trained::get();
  const int tap = t.net->logit_tap().index;
  std::vector<std::size_t> rows(100);
  std::iota(rows.begin(), rows.end(), 0);
  const auto x = t.test.images(rows);
  std::vector<Instance> inst;
  for (std::size_t i : rows) inst.push_back({i, t.test.items[i].label, (t.test.items[i].label + 1) % 4});
  const auto spec = AttackSpec::defaults(Variant::fda, tap, 0, 1);
  const auto res = run_attack_instances(spec, *t.net, bank_, x, inst);
  std::size_t raised = 0;
  double first = 0, last = 0;
  for (const auto& r : res) {
    Tensor<float> a({1, 3, 8, 8}, std::vector<float>(r.x.begin(), r.x.end()));
    Tensor<float> b({1, 3, 8, 8}, std::vector<float>(r.x_adv.begin(), r.x_adv.end()));
    const int tgt = *r.spec.y_tgt;
    raised += auxtrain::aux_probability(*bank_, tap, tgt, b)[0] > auxtrain::aux_probability(*bank_, tap, tgt, a)[0];
    first += r.loss_trace.front();
    last += r.loss_trace.back();
  }
  EXPECT_GE(raised, 90u);
  EXPECT_LT(last / 100, first / 100);
}

// ---- spec ----

TEST(Spec, Defaults) {
  const auto t = AttackSpec::defaults(Variant::fda, 3, 0, 1);
  EXPECT_DOUBLE_EQ(t.epsilon, 16.0 / 255.0);
  EXPECT_EQ(t.K, 10);
  EXPECT_DOUBLE_EQ(t.alpha, t.epsilon / 10);
  EXPECT_DOUBLE_EQ(t.lambda_weight, 0.8);
  EXPECT_DOUBLE_EQ(t.eta, 1e-6);
  EXPECT_EQ(t.objective_space, ObjectiveSpace::bce);
  const auto u = AttackSpec::defaults(Variant::ufda, 3, 0);
  EXPECT_DOUBLE_EQ(u.epsilon, 8.0 / 255.0);
  EXPECT_DOUBLE_EQ(AttackSpec::defaults(Variant::umim, 0, 0, std::nullopt, 4.0 / 255).alpha, 0.4 / 255);
}

TEST(Spec, ValidationRules) {
  EXPECT_THROW(AttackSpec::defaults(Variant::fda, 0, 1).validate(), ArgumentError);
  EXPECT_THROW(AttackSpec::defaults(Variant::tpgd, 0, 1, 1).validate(), ArgumentError);
  EXPECT_THROW(AttackSpec::defaults(Variant::ufda, 0, 1, 2).validate(), ArgumentError);
  EXPECT_NO_THROW(AttackSpec::defaults(Variant::ufda, 0, 1).validate());
  auto s = AttackSpec::defaults(Variant::fda_ms, 0, 1, 2);
  s.lambda_weight = 1.0;
  EXPECT_THROW(s.validate(), ArgumentError);
  s.lambda_weight = 0.0;
  EXPECT_THROW(s.validate(), ArgumentError);
  s = AttackSpec::defaults(Variant::fda, 0, 1, 2);
  s.epsilon = -1;
  EXPECT_THROW(s.validate(), ArgumentError);
  s = AttackSpec::defaults(Variant::fda, 0, 1, 2);
  s.K = -1;
  EXPECT_THROW(s.validate(), ArgumentError);
  s = AttackSpec::defaults(Variant::fda, 0, 1, 2);
  s.eta = -1e-6;
  EXPECT_THROW(s.validate(), ArgumentError);
  s = AttackSpec::defaults(Variant::fda, 0, 1, 5);
  EXPECT_NO_THROW(s.validate());
  EXPECT_THROW(s.validate(4), ArgumentError);
  EXPECT_THROW(parse_variant("aa"), ArgumentError);
}

TEST(Spec, JsonRoundTrip) {
  Rng rng(8);
  for (Variant v : all_variants) {
    auto s = AttackSpec::defaults(v, int(rng.integer(0, 7)), 1, is_targeted(v) ? std::optional<int>(4) : std::nullopt);
    s.with_iterations(int(rng.integer(1, 20)));
    s.lambda_weight = rng.uniform(0.1, 0.9);
    s.seed = std::uint64_t(rng.integer(0, 1LL << 62));
    s.objective_space = rng.uniform() < 0.5 ? ObjectiveSpace::bce : ObjectiveSpace::probability;
    const auto back = AttackSpec::from_json(nlohmann::json::parse(s.to_json().dump()));
    EXPECT_EQ(back.to_json(), s.to_json());
    EXPECT_EQ(back.hash(), s.hash());
  }
  const auto partial = AttackSpec::from_json({{"variant", "fda"}, {"y_tgt", 3}, {"K", 4}});
  EXPECT_DOUBLE_EQ(partial.alpha, 16.0 / 255.0 / 4);
  EXPECT_THROW(AttackSpec::from_json({{"tap", 1}}), ArgumentError);
  EXPECT_THROW(AttackSpec::from_json({{"variant", "fda"}, {"K", "ten"}}), ArgumentError);
}

// ---- records ----

TEST(Records, JsonLinesRoundTripWithDeltas) {
  auto net = tiny(7);
  const auto bank = random_bank<double>(net);
  const auto x = random_images<double>(3, 6, 7);
  const auto s = spec_for(Variant::fda_fd, 1);
  const auto res = run_attack(s, *net, &bank, x);
  const auto dir = scratch_dir("records");
  TensorArchive ar;
  append_results(dir / "r.jsonl", res, s.hash(), &ar);
  ar.save(dir / "r.deltas");
  const auto recs = read_records(dir / "r.jsonl");
  ASSERT_EQ(recs.size(), 3u);
  const auto back = TensorArchive::load(dir / "r.deltas");
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(recs[i].at("spec_hash"), s.hash());
    EXPECT_EQ(recs[i].at("index"), i);
    EXPECT_EQ(recs[i].at("variant"), "fda_fd");
    EXPECT_EQ(recs[i].at("loss_trace").get<std::vector<double>>(), res[i].loss_trace);
    EXPECT_DOUBLE_EQ(recs[i].at("delta_linf").get<double>(), res[i].linf());
    const auto d = back.at(recs[i].at("delta_key").get<std::string>());
    EXPECT_TRUE(std::equal(d.begin(), d.end(), res[i].delta.begin()));
  }
  std::ofstream(dir / "r.jsonl", std::ios::app) << "{broken\n";
  try {
    read_records(dir / "r.jsonl");
    FAIL() << "expected a load error";
  } catch (const LoadError& e) {
    EXPECT_NE(std::string(e.what()).find(":4:"), std::string::npos) << e.what();
  }
}
