#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "iatt/training.hpp"

namespace iatt {
namespace {

const FieldPair& fields() {
  static const FieldPair f{std::make_shared<const ScoreNet>(FieldKind::entity, 4, NoiseSchedule{}, 64, 1),
                           std::make_shared<const ScoreNet>(FieldKind::boundary, 2, NoiseSchedule{}, 64, 2), 0.01};
  return f;
}

TrainConfig small_config(std::uint64_t seed = 1) {
  TrainConfig c;
  c.seed = seed;
  c.n_envs = 2;
  c.rollout_length = 50;
  c.ppo_epochs = 2;
  c.hidden = 16;
  return c;
}

ScenarioSpec short_spread(int n, int horizon = 50) {
  ScenarioSpec s = default_spec(ScenarioKind::spread, n);
  s.horizon = horizon;
  return s;
}

// A_t = sum_l (gamma lambda)^l delta_{t+l}, stopping after a terminal step.
std::vector<double> brute_force_advantages(const std::vector<double>& r, const std::vector<double>& v,
                                           const std::vector<bool>& d, double gamma, double lambda) {
  std::vector<double> out;
  for (size_t t = 0; t < r.size(); ++t) {
    double a = 0.0, coef = 1.0;
    for (size_t l = t; l < r.size(); ++l) {
      const double delta = r[l] + (d[l] ? 0.0 : gamma * v[l + 1]) - v[l];
      a += coef * delta;
      if (d[l]) break;
      coef *= gamma * lambda;
    }
    out.push_back(a);
  }
  return out;
}

TEST(Gae, ZeroRewardsAndValuesGiveZero) {
  GaeResult g = gae({0, 0, 0, 0}, {0, 0, 0, 0, 0}, {false, false, true, false}, 0.99, 0.95);
  for (double a : g.advantages) EXPECT_EQ(a, 0.0);
  for (double r : g.returns) EXPECT_EQ(r, 0.0);
}

TEST(Gae, LambdaZeroIsOneStepTd) {
  std::vector<double> r{1.0, -0.5, 2.0}, v{0.3, 0.1, -0.2, 0.7};
  std::vector<bool> d{false, true, false};
  GaeResult g = gae(r, v, d, 0.9, 0.0);
  EXPECT_DOUBLE_EQ(g.advantages[0], 1.0 + 0.9 * 0.1 - 0.3);
  EXPECT_DOUBLE_EQ(g.advantages[1], -0.5 - 0.1);
  EXPECT_DOUBLE_EQ(g.advantages[2], 2.0 + 0.9 * 0.7 + 0.2);
}

TEST(Gae, ThreeStepTerminalMatchesRecursion) {
  std::vector<double> r{1, 0, 1}, v{0.5, 0.5, 0.5, 0.0};
  std::vector<bool> d{false, false, true};
  GaeResult g = gae(r, v, d, 0.9, 0.95);
  auto expect = brute_force_advantages(r, v, d, 0.9, 0.95);
  for (size_t i = 0; i < 3; ++i) {
    EXPECT_NEAR(g.advantages[i], expect[i], 1e-14);
    EXPECT_NEAR(g.returns[i], expect[i] + v[i], 1e-14);
  }
  // Hand values: A2 = 0.5, A1 = -0.5 + 0.9*0.5 + 0.855*0.5, A0 = 1 - 0.05 + 0.855*A1.
  EXPECT_NEAR(g.advantages[2], 0.5, 1e-14);
  EXPECT_NEAR(g.advantages[1], 0.3775, 1e-14);
  EXPECT_NEAR(g.advantages[0], 0.95 + 0.855 * 0.3775, 1e-14);
}

TEST(Gae, RandomSequencesMatchRecursion) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0.0, 1.0);
  std::bernoulli_distribution done(0.1);
  for (int trial = 0; trial < 50; ++trial) {
    const size_t len = 1 + trial % 17;
    std::vector<double> r, v;
    std::vector<bool> d;
    for (size_t i = 0; i < len; ++i) {
      r.push_back(n(rng));
      v.push_back(n(rng));
      d.push_back(done(rng));
    }
    v.push_back(n(rng));
    GaeResult g = gae(r, v, d, 0.97, 0.9);
    auto expect = brute_force_advantages(r, v, d, 0.97, 0.9);
    for (size_t i = 0; i < len; ++i) EXPECT_NEAR(g.advantages[i], expect[i], 1e-12);
  }
  EXPECT_THROW(gae({1.0}, {0.0}, {false}, 0.9, 0.9), ContractViolation);
}

TEST(ValueNorm, IncrementalMatchesBatchMoments) {
  ParamStore c;
  ValueNorm::ensure(c);
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(3.0, 2.0);
  std::vector<double> all;
  for (int chunk = 0; chunk < 5; ++chunk) {
    std::vector<double> xs;
    for (int i = 0; i < 37 + chunk; ++i) xs.push_back(n(rng));
    all.insert(all.end(), xs.begin(), xs.end());
    ValueNorm::update(c, xs);
  }
  double mean = 0.0;
  for (double x : all) mean += x;
  mean /= all.size();
  double var = 0.0;
  for (double x : all) var += (x - mean) * (x - mean);
  var /= all.size();
  EXPECT_NEAR(ValueNorm::mean(c), mean, 1e-12);
  EXPECT_NEAR(ValueNorm::stddev(c), std::sqrt(var), 1e-12);
  EXPECT_NEAR(ValueNorm::denormalize(c, ValueNorm::normalize(c, 1.7)), 1.7, 1e-12);
  EXPECT_FALSE(c.at("vn").trainable);
}

PairDataset filled(size_t n, size_t capacity = std::numeric_limits<size_t>::max()) {
  PairDataset d(capacity);
  for (size_t i = 0; i < n; ++i) {
    Pair p;
    p.w.w = {static_cast<double>(i)};
    d.push(p);
  }
  return d;
}

TEST(Trim, HundredKeepsNewestTen) {
  PairDataset t = trim_dataset(filled(100));
  ASSERT_EQ(t.size(), 10u);
  for (size_t i = 0; i < 10; ++i) EXPECT_EQ(t[i].seq, static_cast<long>(90 + i));
}

TEST(Trim, FloorSemantics) {
  EXPECT_EQ(trim_dataset(filled(9)).size(), 0u);
  EXPECT_EQ(trim_dataset(filled(0)).size(), 0u);
  EXPECT_EQ(trim_dataset(filled(19)).size(), 1u);
}

TEST(Trim, ChronologyPropertyWithRing) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 40; ++trial) {
    const size_t n = rng() % 5000;
    const size_t cap = n / 10 + rng() % 50 + 1;
    PairDataset d = filled(n, cap);
    EXPECT_EQ(d.total(), static_cast<long>(n));
    EXPECT_LE(d.size(), cap);
    PairDataset t = trim_dataset(d);
    ASSERT_EQ(t.size(), n / 10);
    for (size_t i = 0; i < t.size(); ++i) {
      // Survivors are exactly the newest n/10, in order.
      EXPECT_EQ(t[i].seq, static_cast<long>(n - n / 10 + i));
      EXPECT_EQ(t[i].w.w[0], static_cast<double>(t[i].seq));
    }
  }
}

TEST(Trim, RingTooSmallRejected) { EXPECT_THROW(trim_dataset(filled(1000, 50)), ContractViolation); }

TEST(Rollout, HorizonLengthGivesOneEpisodePerWorld) {
  ScenarioSpec spec = short_spread(2, 200);
  AgentSystem sys = make_system("self-att", spec, fields(), false, small_config().net(), 1);
  std::mt19937_64 rng(5);
  EnvSet envs = make_envs(spec, 3, rng);
  RolloutBuffer buf = collect_rollout(envs, sys, 200, rng);
  EXPECT_EQ(buf.episodes_started, 3);
  EXPECT_EQ(buf.episode_scores.size(), 3u);
  for (int w = 0; w < 3; ++w) {
    for (int m = 0; m < 2; ++m) {
      for (int t = 0; t < 200; ++t) EXPECT_EQ(buf.at(w, m, t).done, t == 199);
    }
  }
}

TEST(Rollout, SeededDeterminism) {
  ScenarioSpec spec = default_spec(ScenarioKind::adversary, 2);
  AgentSystem sys = make_system("mappo", spec, fields(), false, small_config().net(), 1);
  auto run = [&] {
    std::mt19937_64 rng(9);
    EnvSet envs = make_envs(spec, 2, rng);
    return collect_rollout(envs, sys, 30, rng);
  };
  RolloutBuffer a = run(), b = run();
  ASSERT_EQ(a.records.size(), b.records.size());
  for (size_t i = 0; i < a.records.size(); ++i) {
    EXPECT_EQ(a.records[i].raw, b.records[i].raw);
    EXPECT_EQ(a.records[i].reward, b.records[i].reward);
  }
}

TEST(Rollout, OnePairPerAgentStep) {
  ScenarioSpec spec = short_spread(3);
  AgentSystem sys = make_system("self-att", spec, fields(), false, small_config().net(), 1);
  std::vector<PairDataset> pairs(sys.policies.size());
  std::mt19937_64 rng(5);
  EnvSet envs = make_envs(spec, 2, rng);
  RolloutBuffer buf = collect_rollout(envs, sys, 40, rng, &pairs);
  ASSERT_EQ(pairs.size(), 3u);
  for (int m = 0; m < 3; ++m) {
    ASSERT_EQ(pairs[static_cast<size_t>(m)].total(), 80);
    // The first pair is world 0's first decision for this mover.
    const Pair& p = pairs[static_cast<size_t>(m)][0];
    const StepRecord& r = buf.at(0, m, 0);
    EXPECT_EQ(p.features.action, r.action);
    EXPECT_EQ(p.w.w, r.w_self.w);
    EXPECT_EQ(p.features.goals, r.input.own.goals);
    EXPECT_EQ(p.obs.self_id, m);
    EXPECT_TRUE(p.obs.teammates.empty());
    double s = 0.0;
    for (double x : p.w.w) s += x;
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Rollout, SharedPolicyPoolsPairs) {
  ScenarioSpec spec = short_spread(3);
  AgentSystem sys = make_system("self-att", spec, fields(), true, small_config().net(), 1);
  ASSERT_EQ(sys.policies.size(), 1u);
  std::vector<PairDataset> pairs(1);
  std::mt19937_64 rng(5);
  EnvSet envs = make_envs(spec, 2, rng);
  collect_rollout(envs, sys, 10, rng, &pairs);
  EXPECT_EQ(pairs[0].total(), 60);
}

TEST(Surrogate, RatioOneBeforeUpdate) {
  Graph g(false);
  Matrix lp(4, 1);
  lp << -1.0, -2.5, 0.3, -0.7;
  Matrix adv(4, 1);
  adv << 1.0, -2.0, 0.5, 3.0;
  Surrogate s = surrogate(g.constant(lp), lp, adv, 0.2);
  for (int i = 0; i < 4; ++i) {
    EXPECT_EQ(g.value(s.ratio)(i, 0), 1.0);
    EXPECT_EQ(g.value(s.unclipped)(i, 0), g.value(s.clipped)(i, 0));
  }
}

TEST(Surrogate, ZeroAdvantageGivesNoPolicyGradient) {
  ParamStore p;
  p.add("x", Matrix::Constant(3, 1, 0.4));
  Matrix old(3, 1);
  old << 0.1, 0.2, 0.3;
  Graph g;
  Var lp = g.param(p, "x");
  Surrogate s = surrogate(lp, old, Matrix::Zero(3, 1), 0.2);
  g.backward(ops::scale(ops::mean(ops::minimum(s.unclipped, s.clipped)), -1.0));
  EXPECT_TRUE(p.at("x").grad.isZero());
}

TEST(Surrogate, ClippedNeverExceedsUnclipped) {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> n(0.0, 1.0);
  Graph g(false);
  Matrix lp(500, 1), old(500, 1), adv(500, 1);
  for (int i = 0; i < 500; ++i) {
    lp(i, 0) = n(rng);
    old(i, 0) = n(rng);
    adv(i, 0) = n(rng);
  }
  Surrogate s = surrogate(g.constant(lp), old, adv, 0.2);
  Var obj = ops::minimum(s.unclipped, s.clipped);
  for (int i = 0; i < 500; ++i) EXPECT_LE(g.value(obj)(i, 0), g.value(s.unclipped)(i, 0) + 1e-12);
}

TEST(Ppo, PostUpdateObjectiveRespectsClip) {
  ScenarioSpec spec = short_spread(2);
  TrainConfig cfg = small_config();
  AgentSystem sys = make_system("self-att", spec, fields(), false, cfg.net(), 1);
  std::mt19937_64 rng(5);
  EnvSet envs = make_envs(spec, 2, rng);
  RolloutBuffer buf = collect_rollout(envs, sys, 50, rng);
  auto stats = ppo_update(sys, buf, cfg, rng);
  ASSERT_EQ(stats.size(), 2u);
  for (const auto& s : stats) {
    EXPECT_GT(s.updates, 0);
    EXPECT_TRUE(std::isfinite(s.policy_loss));
    EXPECT_TRUE(std::isfinite(s.value_loss));
  }
  // Re-evaluate the new policy on the old samples.
  const PolicyBundle& b = sys.policies[0];
  std::vector<const AgentInput*> in;
  Matrix raw(50, 2), old(50, 1), adv(50, 1);
  for (int t = 0; t < 50; ++t) {
    const StepRecord& r = buf.at(0, 0, t);
    in.push_back(&r.input);
    raw(t, 0) = r.raw.x;
    raw(t, 1) = r.raw.y;
    old(t, 0) = r.log_prob;
    adv(t, 0) = r.advantage;
  }
  Graph g(false);
  PolicyOutput out = policy_forward(g, b.actor, b, make_batch(b, in));
  Surrogate s = surrogate(gaussian_log_prob(out.mean, out.log_std, raw), old, adv, cfg.clip_eps);
  Var obj = ops::minimum(s.unclipped, s.clipped);
  for (int t = 0; t < 50; ++t) {
    EXPECT_LE(g.value(obj)(t, 0), g.value(s.unclipped)(t, 0) + 1e-12);
    EXPECT_LE(g.value(obj)(t, 0), g.value(s.clipped)(t, 0) + 1e-12);
  }
}

TEST(Ppo, NonFiniteLossAborts) {
  ScenarioSpec spec = short_spread(1);
  TrainConfig cfg = small_config();
  AgentSystem sys = make_system("mappo", spec, fields(), false, cfg.net(), 1);
  std::mt19937_64 rng(5);
  EnvSet envs = make_envs(spec, 1, rng);
  RolloutBuffer buf = collect_rollout(envs, sys, 10, rng);
  buf.at(0, 0, 3).reward = std::numeric_limits<double>::quiet_NaN();
  try {
    ppo_update(sys, buf, cfg, rng);
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find("policy 0"), std::string::npos);
  }
}

TEST(Convergence, RisingHistoryNotConverged) {
  std::vector<double> h;
  for (int i = 0; i < 40; ++i) h.push_back(10.0 * i + 1.0);
  EXPECT_FALSE(convergence_check(h, 5, 0.01));
}

TEST(Convergence, ConstantHistoryConverged) {
  EXPECT_TRUE(convergence_check(std::vector<double>(10, 3.0), 5, 0.01));
  EXPECT_TRUE(convergence_check(std::vector<double>(10, 0.0), 5, 0.01));
  EXPECT_FALSE(convergence_check(std::vector<double>(9, 3.0), 5, 0.01));
}

TEST(Convergence, PlateauAfterRampConvergesAtPlateauWindow) {
  // Geometric ramp 2^i up to index R, then flat: the check first passes
  // once both windows lie entirely on the plateau.
  const int ramp = 12, window = 5;
  std::vector<double> series;
  for (int i = 0; i < 40; ++i) series.push_back(std::pow(2.0, std::min(i, ramp)));
  int first = -1;
  for (size_t len = 1; len <= series.size(); ++len) {
    std::vector<double> h(series.begin(), series.begin() + static_cast<long>(len));
    if (convergence_check(h, window, 0.01)) {
      first = static_cast<int>(len);
      break;
    }
  }
  EXPECT_EQ(first, ramp + 2 * window);
}

TEST(Convergence, BudgetReachedCountsAsConverged) {
  EXPECT_TRUE(convergence_check({1.0, 2.0}, 5, 0.01, 1000, 1000));
}

TEST(TrainConfig, InvalidValuesRejected) {
  TrainConfig c;
  c.gamma = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.clip_eps = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.phase1_steps = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_NO_THROW(TrainConfig{}.validate());
}

TEST(Train, IdenticalSeedsIdenticalParameters) {
  ScenarioSpec spec = short_spread(2);
  TrainConfig cfg = small_config(7);
  auto run = [&] {
    AgentSystem sys = make_system("self-att", spec, fields(), false, cfg.net(), 3);
    train_system(sys, cfg, 200);
    return sys;
  };
  AgentSystem a = run(), b = run();
  for (size_t p = 0; p < a.policies.size(); ++p) {
    const auto& pa = a.policies[p].actor.params();
    const auto& pb = b.policies[p].actor.params();
    for (size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(pa[i].value, pb[i].value) << pa[i].name;
    EXPECT_EQ(a.policies[p].critic.at("c.1.w").value, b.policies[p].critic.at("c.1.w").value);
  }
}

TEST(Train, BudgetRespectedAndHookCalled) {
  ScenarioSpec spec = short_spread(1);
  TrainConfig cfg = small_config();
  AgentSystem sys = make_system("ippo", spec, fields(), false, cfg.net(), 3);
  int calls = 0;
  TrainResult r = train_system(sys, cfg, 250, nullptr, [&](const IterationStats& s) {
    ++calls;
    EXPECT_EQ(s.ppo.size(), 1u);
  });
  EXPECT_EQ(calls, r.iterations);
  EXPECT_GE(r.steps, 250);
  EXPECT_LT(r.steps, 250 + cfg.n_envs * cfg.rollout_length);
}

TEST(Phase1, TrimsToTenthOfCollectedPairs) {
  ScenarioSpec spec = short_spread(2);
  TrainConfig cfg = small_config();
  cfg.phase1_steps = 400;
  Phase1Result r = phase1(cfg, spec, fields());
  ASSERT_EQ(r.datasets.size(), 2u);
  for (const auto& d : r.datasets) {
    EXPECT_EQ(d.size(), 40u);
    for (size_t i = 0; i < d.size(); ++i) EXPECT_EQ(d[i].seq, static_cast<long>(360 + i));
  }
  EXPECT_EQ(r.system.method, "self-att");
}

PairDataset rollout_pairs(const AgentSystem& sys, int n_steps) {
  std::vector<PairDataset> pairs(sys.policies.size());
  std::mt19937_64 rng(8);
  EnvSet envs = make_envs(sys.spec, 4, rng);
  collect_rollout(envs, sys, n_steps, rng, &pairs);
  return pairs[0];
}

TEST(Phase2, SplitSizes) {
  SplitSizes s = split_sizes(1000);
  EXPECT_EQ(s.train, 700u);
  EXPECT_EQ(s.val, 100u);
  EXPECT_EQ(s.test, 200u);
  SplitSizes t = split_sizes(15);
  EXPECT_EQ(t.train + t.val + t.test, 15u);
}

TEST(Phase2, TooSmallDatasetRejected) {
  ScenarioSpec spec = short_spread(2);
  AgentSystem sys = make_system("self-att", spec, fields(), false, small_config().net(), 1);
  PairDataset d = rollout_pairs(sys, 2);
  ASSERT_EQ(d.size(), 8u);
  EXPECT_THROW(phase2(d, sys.policies[0], IWTrainConfig{}), ConfigError);
}

TEST(Phase2, EarlyStoppingRestoresBestAndBeatsUniform) {
  ScenarioSpec spec = short_spread(2);
  AgentSystem sys = make_system("self-att", spec, fields(), false, small_config().net(), 1);
  PairDataset d = rollout_pairs(sys, 250);
  IWTrainConfig cfg;
  cfg.max_epochs = 40;
  cfg.patience = 5;
  cfg.seed = 2;
  IWReport rep;
  IWNet iw = phase2(d, sys.policies[0], cfg, &rep);
  EXPECT_EQ(rep.split.train + rep.split.val + rep.split.test, d.size());
  EXPECT_LE(rep.best_val_loss, rep.final_val_loss);
  EXPECT_LT(rep.test_loss, rep.uniform_test_loss);
  EXPECT_EQ(rep.test_rank_accuracy.size(), 4u);
  ASSERT_GE(rep.best_epoch, 1);
  EXPECT_DOUBLE_EQ(rep.val_history[static_cast<size_t>(rep.best_epoch - 1)], rep.best_val_loss);
  EXPECT_FALSE(iw.params.at("iw.q.0.w").value.hasNaN());
}

TEST(Phase3, StepZeroMatchesSelfAttBehaviour) {
  ScenarioSpec spec = default_spec(ScenarioKind::spread, 3);
  AgentSystem sa = make_system("self-att", spec, fields(), false, NetConfig{}, 4);
  std::vector<IWNet> iws;
  for (size_t p = 0; p < sa.policies.size(); ++p) iws.push_back(make_iw(sa.policies[p], 10 + p));
  AgentSystem inv = compose_system(sa, iws);
  EXPECT_EQ(inv.method, "inverse-att");
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  int checked = 0;
  for (std::uint64_t seed = 1; checked < 100; ++seed) {
    WorldState w = make_world(spec, seed);
    for (int t = 0; t < 3; ++t) step(w, {{u(rng), u(rng)}, {u(rng), u(rng)}, {u(rng), u(rng)}});
    std::mt19937_64 r1(seed), r2(seed);
    auto a = decide({&w}, {controllers_of(sa)}, r1, false, false);
    auto b = decide({&w}, {controllers_of(inv)}, r2, false, false);
    for (size_t m = 0; m < 3; ++m, ++checked) {
      EXPECT_NEAR(a[0][m].sample.raw.x, b[0][m].sample.raw.x, 1e-12);
      EXPECT_NEAR(a[0][m].sample.raw.y, b[0][m].sample.raw.y, 1e-12);
    }
  }
}

TEST(Phase3, RequiresInverseSystem) {
  ScenarioSpec spec = short_spread(2);
  AgentSystem sa = make_system("self-att", spec, fields(), false, small_config().net(), 4);
  EXPECT_THROW(phase3(sa, small_config()), ContractViolation);
  EXPECT_THROW(compose_system(sa, {}), ContractViolation);
}

TEST(Phase3, TrainsWithFrozenIw) {
  ScenarioSpec spec = short_spread(2);
  TrainConfig cfg = small_config();
  cfg.phase3_steps = 100;
  AgentSystem sa = make_system("self-att", spec, fields(), false, cfg.net(), 4);
  std::vector<IWNet> iws;
  for (const auto& p : sa.policies) iws.push_back(make_iw(p, 3));
  AgentSystem inv = compose_system(sa, iws);
  const Matrix iw_before = inv.policies[0].actor.at("iw.q.0.w").value;
  const Matrix uw_before = inv.policies[0].actor.at("uw.w").value;
  phase3(inv, cfg);
  EXPECT_EQ(inv.policies[0].actor.at("iw.q.0.w").value, iw_before);
  EXPECT_NE(inv.policies[0].actor.at("uw.w").value, uw_before);
}

}  // namespace
}  // namespace iatt
