#include <gtest/gtest.h>

#include <random>

#include "iatt/engine.hpp"

namespace iatt {
namespace {

WorldState still_world(ScenarioKind kind, int n, std::uint64_t seed = 1) {
  WorldState w = make_world(default_spec(kind, n), seed);
  for (auto& e : w.entities) e.vel = {};
  return w;
}

JointAction zeros(const WorldState& w) { return JointAction(mover_ids(w).size()); }

int count_role(const WorldState& w, Role r) {
  int c = 0;
  for (const auto& e : w.entities) c += e.role == r;
  return c;
}

TEST(MakeWorld, SameSeedSameWorld) {
  auto a = make_world(default_spec(ScenarioKind::spread, 3), 7);
  auto b = make_world(default_spec(ScenarioKind::spread, 3), 7);
  ASSERT_EQ(a.entities.size(), b.entities.size());
  for (size_t i = 0; i < a.entities.size(); ++i) {
    EXPECT_EQ(a.entities[i].pos, b.entities[i].pos);
  }
  auto c = make_world(default_spec(ScenarioKind::spread, 3), 8);
  EXPECT_NE(a.entities[0].pos, c.entities[0].pos);
}

TEST(MakeWorld, GrasslandEntityCounts) {
  for (std::uint64_t seed : {1u, 2u, 99u}) {
    auto w = make_world(default_spec(ScenarioKind::grassland, 3), seed);
    EXPECT_EQ(count_role(w, Role::sheep), 3);
    EXPECT_EQ(count_role(w, Role::wolf), 3);
    EXPECT_EQ(count_role(w, Role::grass), 4);
  }
}

TEST(MakeWorld, TagEntityCounts) {
  auto w = make_world(default_spec(ScenarioKind::tag, 3), 4);
  EXPECT_EQ(count_role(w, Role::wolf), 3);
  EXPECT_EQ(count_role(w, Role::sheep), 3);
  EXPECT_EQ(count_role(w, Role::obstacle), 3);
}

TEST(MakeWorld, StartsAtRestInsideArena) {
  auto w = make_world(default_spec(ScenarioKind::navigation, 3), 5);
  EXPECT_EQ(w.step_index, 0);
  for (const auto& e : w.entities) {
    EXPECT_EQ(e.vel, Vec2{});
    EXPECT_LE(std::abs(e.pos.x), 1.0);
    EXPECT_LE(std::abs(e.pos.y), 1.0);
  }
}

TEST(MakeWorld, InvalidSpecIsConfigError) {
  EXPECT_THROW(make_world(default_spec(ScenarioKind::spread, 0), 1), ConfigError);
  auto s = default_spec(ScenarioKind::spread, 2);
  s.horizon = 0;
  EXPECT_THROW(make_world(s, 1), ConfigError);
  s = default_spec(ScenarioKind::spread, 2);
  s.visibility_radius = -1.0;
  EXPECT_THROW(make_world(s, 1), ConfigError);
}

TEST(Step, ZeroForceAtRestStaysPut) {
  auto w = still_world(ScenarioKind::spread, 1);
  const Vec2 before = w.entities[0].pos;
  step(w, zeros(w));
  EXPECT_EQ(w.entities[0].pos, before);
}

TEST(Step, UnitForceKinematics) {
  auto w = still_world(ScenarioKind::spread, 1);
  w.entities[0].pos = {0.0, 0.0};
  w.entities[1].pos = {0.9, 0.9};
  const auto& ph = w.spec.physics;
  ASSERT_EQ(ph.dt, 0.1);
  ASSERT_EQ(ph.damping, 0.25);
  ASSERT_EQ(w.entities[0].accel, 3.0);
  // Hand oracle: v1 = (1 - damping) * 0 + 1 * accel * dt ; x1 = x0 + v1 * dt.
  const double v1 = 0.75 * 0.0 + 1.0 * 3.0 * 0.1;
  step(w, {Vec2{1.0, 0.0}});
  EXPECT_NEAR(w.entities[0].vel.x, v1, 1e-15);
  EXPECT_NEAR(w.entities[0].vel.x, 0.3, 1e-15);
  EXPECT_NEAR(w.entities[0].pos.x, 0.03, 1e-15);
  EXPECT_EQ(w.entities[0].vel.y, 0.0);
}

TEST(Step, BoundaryClampHoldsAtEdge) {
  auto w = still_world(ScenarioKind::spread, 1);
  w.entities[0].pos = {1.0, 0.0};
  w.entities[0].vel = {0.5, 0.0};
  w.entities[1].pos = {-0.9, -0.9};
  step(w, {Vec2{1.0, 0.0}});
  EXPECT_EQ(w.entities[0].pos.x, 1.0);
}

TEST(Step, ActionCountMismatchIsContractViolation) {
  auto w = still_world(ScenarioKind::spread, 2);
  EXPECT_THROW(step(w, {Vec2{}}), ContractViolation);
}

TEST(Step, DoneExactlyAtHorizon) {
  auto spec = default_spec(ScenarioKind::spread, 1);
  spec.horizon = 3;
  auto w = make_world(spec, 1);
  EXPECT_FALSE(step(w, zeros(w)).done);
  EXPECT_FALSE(step(w, zeros(w)).done);
  EXPECT_TRUE(step(w, zeros(w)).done);
  EXPECT_THROW(step(w, zeros(w)), ContractViolation);
}

TEST(Step, ActionsClampedToUnitBox) {
  auto w = still_world(ScenarioKind::spread, 1);
  step(w, {Vec2{5.0, -3.0}});
  EXPECT_EQ(w.entities[0].prev_action, (Vec2{1.0, -1.0}));
}

TEST(Step, OverlappingAgentsArePushedApart) {
  auto w = still_world(ScenarioKind::spread, 2);
  w.entities[0].pos = {0.0, 0.0};
  w.entities[1].pos = {0.1, 0.0};
  w.entities[2].pos = {0.9, 0.9};
  w.entities[3].pos = {-0.9, 0.9};
  step(w, zeros(w));
  EXPECT_LT(w.entities[0].pos.x, 0.0);
  EXPECT_GT(w.entities[1].pos.x, 0.1);
}

TEST(Step, ConsumedGrassRespawns) {
  auto w = still_world(ScenarioKind::grassland, 1);
  // ids: wolf 0, sheep 1, grass 2..5
  w.entities[0].pos = {-0.9, -0.9};
  w.entities[1].pos = {0.5, 0.5};
  w.entities[2].pos = {0.5, 0.5};
  const auto res = step(w, zeros(w), RewardMode::scoring);
  ASSERT_EQ(w.events.grass_eaten.size(), 1u);
  EXPECT_EQ(w.events.grass_eaten[0], (std::pair<int, int>{1, 2}));
  EXPECT_NE(w.entities[2].pos, (Vec2{0.5, 0.5}));
  EXPECT_EQ(count_role(w, Role::grass), 4);
  EXPECT_DOUBLE_EQ(res.rewards[1], 3.0);
}

TEST(Reward, SpreadTrainingOnLandmark) {
  auto w = still_world(ScenarioKind::spread, 1);
  w.entities[1].pos = w.entities[0].pos;
  EXPECT_DOUBLE_EQ(reward(w, RewardMode::training)[0], 100.0 - 0.2 * 0.0);
  EXPECT_DOUBLE_EQ(reward(w, RewardMode::scoring)[0], 5.0);
}

TEST(Reward, SpreadTrainingDistanceShaping) {
  auto w = still_world(ScenarioKind::spread, 1);
  w.entities[0].pos = {0.0, 0.0};
  w.entities[1].pos = {1.0, 0.0};
  EXPECT_DOUBLE_EQ(reward(w, RewardMode::training)[0], -0.2);
  EXPECT_DOUBLE_EQ(reward(w, RewardMode::scoring)[0], 0.0);
}

TEST(Reward, AdversaryScoringCatch) {
  auto w = still_world(ScenarioKind::adversary, 1);
  w.entities[0].pos = {0.0, 0.0};   // wolf
  w.entities[1].pos = {0.0, 0.0};  // sheep on top of the wolf: no contact direction
  const auto res = step(w, zeros(w), RewardMode::scoring);
  ASSERT_EQ(w.events.catches.size(), 1u);
  EXPECT_DOUBLE_EQ(res.rewards[0], 5.0);
  EXPECT_DOUBLE_EQ(res.rewards[1], -5.0);
}

TEST(Reward, NavigationGroupRewardSharedEqually) {
  auto w = still_world(ScenarioKind::navigation, 3);
  // agents 0..2, landmarks 3..5; one landmark occupied.
  w.entities[0].pos = {0.0, 0.0};
  w.entities[1].pos = {0.8, 0.8};
  w.entities[2].pos = {-0.8, 0.8};
  w.entities[3].pos = {0.0, 0.0};
  w.entities[4].pos = {0.8, -0.8};
  w.entities[5].pos = {-0.8, -0.8};
  const auto r = reward(w, RewardMode::scoring);
  for (double x : r) EXPECT_DOUBLE_EQ(x, 5.0 / 3.0);
}

TEST(Reward, TagGroupReward) {
  auto w = still_world(ScenarioKind::tag, 2);
  // wolves 0,1 ; sheep 2,3 ; obstacles 4..6
  w.entities[0].pos = {0.0, 0.0};
  w.entities[2].pos = {0.0, 0.0};
  w.entities[1].pos = {0.9, 0.9};
  w.entities[3].pos = {-0.9, -0.9};
  for (int i = 4; i < 7; ++i) w.entities[static_cast<size_t>(i)].pos = {0.9, -0.9 + 0.3 * (i - 4)};
  const auto r = step(w, zeros(w), RewardMode::scoring).rewards;
  ASSERT_EQ(w.events.catches.size(), 1u);
  EXPECT_DOUBLE_EQ(r[0], 5.0);
  EXPECT_DOUBLE_EQ(r[1], 5.0);
  EXPECT_DOUBLE_EQ(r[2], -5.0);
  EXPECT_DOUBLE_EQ(r[3], -5.0);
}

TEST(Observe, RelativePositions) {
  auto w = still_world(ScenarioKind::spread, 2);
  w.entities[0].pos = {0.0, 0.0};
  w.entities[1].pos = {0.5, 0.0};
  const auto o = observe(w, 0);
  ASSERT_EQ(o.entities[0].id, 1);
  EXPECT_EQ(o.entities[0].rel_pos, (Vec2{0.5, 0.0}));
  EXPECT_EQ(o.entities.size(), 3u);
}

TEST(Observe, VisibilityOmitsFarEntities) {
  auto spec = default_spec(ScenarioKind::spread, 2);
  spec.visibility_radius = 0.5;
  auto w = make_world(spec, 1);
  w.entities[0].pos = {0.0, 0.0};
  w.entities[1].pos = {1.0, 0.0};
  w.entities[2].pos = {0.2, 0.0};
  w.entities[3].pos = {-0.9, -0.9};
  const auto o = observe(w, 0);
  ASSERT_EQ(o.entities.size(), 1u);
  EXPECT_EQ(o.entities[0].id, 2);
  EXPECT_TRUE(o.teammates.empty());
}

TEST(Observe, TeammatePrevActionsTrackLastJointAction) {
  auto w = still_world(ScenarioKind::spread, 3);
  const JointAction a{Vec2{0.1, 0.2}, Vec2{-0.3, 0.4}, Vec2{0.5, -0.6}};
  const auto prev_positions = w.entities;
  step(w, a);
  const auto o = observe(w, 0);
  ASSERT_EQ(o.teammates.size(), 2u);
  EXPECT_EQ(o.teammates[0].prev_action, a[1]);
  EXPECT_EQ(o.teammates[1].prev_action, a[2]);
  // Nested observation is the teammate's view one step earlier.
  EXPECT_EQ(o.teammates[0].prev_observation->self_pos, prev_positions[1].pos);
}

TEST(Observe, StaticEntityIsContractViolation) {
  auto w = still_world(ScenarioKind::spread, 1);
  EXPECT_THROW(observe(w, 1), ContractViolation);
  EXPECT_THROW(observe(w, 9), ContractViolation);
}

TEST(VisibleSet, OppositeCornerExcludedAtRadius1_5) {
  auto w = still_world(ScenarioKind::spread, 1);
  w.entities[0].pos = {-1.0, -1.0};
  w.entities[1].pos = {1.0, 1.0};
  EXPECT_TRUE(visible_set(w, 0, 1.5).empty());
}

TEST(VisibleSet, HugeRadiusSeesEverything) {
  auto w = still_world(ScenarioKind::grassland, 3);
  EXPECT_EQ(visible_set(w, 0, 10.0).size(), w.entities.size() - 1);
}

TEST(VisibleSet, ThresholdsByDistance) {
  auto w = still_world(ScenarioKind::spread, 2);
  w.entities[0].pos = {0.0, 0.0};
  w.entities[1].pos = {0.4, 0.0};
  w.entities[2].pos = {0.0, 0.9};
  w.entities[3].pos = {-1.0, -std::sqrt(1.2 * 1.2 - 1.0)};
  EXPECT_EQ(visible_set(w, 0, 1.0), (std::vector<int>{1, 2}));
  EXPECT_THROW(visible_set(w, 0, 0.0), ContractViolation);
}

TEST(Invariants, SheepFasterThanWolves) {
  auto s = default_spec(ScenarioKind::adversary, 3);
  EXPECT_GT(s.sheep.max_speed, s.wolf.max_speed);
}

TEST(Invariants, TrajectoriesAreDeterministic) {
  auto run = [](std::uint64_t seed) {
    auto w = make_world(default_spec(ScenarioKind::grassland, 2), seed);
    std::mt19937_64 rng(seed + 1);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<double> trace;
    for (int t = 0; t < 200; ++t) {
      JointAction a;
      for (size_t i = 0; i < mover_ids(w).size(); ++i) a.push_back({u(rng), u(rng)});
      for (double r : step(w, a).rewards) trace.push_back(r);
      for (const auto& e : w.entities) {
        trace.push_back(e.pos.x);
        trace.push_back(e.pos.y);
      }
    }
    return trace;
  };
  EXPECT_EQ(run(3), run(3));
}

TEST(Invariants, AdversaryEpisodeRewardConservation) {
  auto w = make_world(default_spec(ScenarioKind::adversary, 3), 12);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  double wolves = 0.0, sheep = 0.0;
  int catches = 0;
  // Wolves chase the first sheep so catches actually happen.
  for (int t = 0; t < 200; ++t) {
    JointAction a;
    for (int id : mover_ids(w)) {
      const auto& e = w.entity(id);
      if (e.role == Role::wolf) {
        const Vec2 d = w.entity(3).pos - e.pos;
        a.push_back(d * (1.0 / std::max(d.norm(), 1e-9)));
      } else {
        a.push_back({u(rng), u(rng)});
      }
    }
    const auto r = step(w, a, RewardMode::scoring).rewards;
    catches += static_cast<int>(w.events.catches.size());
    for (size_t i = 0; i < r.size(); ++i) (i < 3 ? wolves : sheep) += r[i];
  }
  EXPECT_GT(catches, 0);
  EXPECT_DOUBLE_EQ(wolves, 5.0 * catches);
  EXPECT_DOUBLE_EQ(wolves, -sheep);
}

}  // namespace
}  // namespace iatt
