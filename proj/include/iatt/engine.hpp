#pragma once

// Continuous 2-D particle world: five scenarios, semi-implicit Euler
// physics with soft contacts, and the training/scoring reward sets.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "iatt/errors.hpp"

namespace iatt {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  Vec2& operator+=(Vec2 o) {
    x += o.x;
    y += o.y;
    return *this;
  }
  bool operator==(const Vec2&) const = default;
  double norm() const { return std::hypot(x, y); }
  double dot(Vec2 o) const { return x * o.x + y * o.y; }
};

inline double distance(Vec2 a, Vec2 b) { return (a - b).norm(); }

enum class Role { agent, sheep, wolf, landmark, grass, obstacle };
inline constexpr int kRoleCount = 6;

inline std::string_view role_name(Role r) {
  switch (r) {
    case Role::agent:
      return "agent";
    case Role::sheep:
      return "sheep";
    case Role::wolf:
      return "wolf";
    case Role::landmark:
      return "landmark";
    case Role::grass:
      return "grass";
    case Role::obstacle:
      return "obstacle";
  }
  return "?";
}

inline Role parse_role(std::string_view s) {
  for (int i = 0; i < kRoleCount; ++i) {
    if (role_name(static_cast<Role>(i)) == s) return static_cast<Role>(i);
  }
  throw ConfigError("unknown role '" + std::string(s) + "'");
}

inline bool is_static(Role r) { return r == Role::landmark || r == Role::grass || r == Role::obstacle; }

enum class ScenarioKind { spread, adversary, grassland, navigation, tag };

inline std::string_view scenario_name(ScenarioKind k) {
  switch (k) {
    case ScenarioKind::spread:
      return "spread";
    case ScenarioKind::adversary:
      return "adversary";
    case ScenarioKind::grassland:
      return "grassland";
    case ScenarioKind::navigation:
      return "navigation";
    case ScenarioKind::tag:
      return "tag";
  }
  return "?";
}

inline ScenarioKind parse_scenario(std::string_view s) {
  for (auto k : {ScenarioKind::spread, ScenarioKind::adversary, ScenarioKind::grassland, ScenarioKind::navigation,
                 ScenarioKind::tag}) {
    if (scenario_name(k) == s) return k;
  }
  throw ConfigError("unknown scenario '" + std::string(s) + "'");
}

enum class RewardMode { training, scoring };

struct MoverConstants {
  double radius = 0.15;
  double accel = 3.0;
  double max_speed = 1.0;
};

struct PhysicsConstants {
  double dt = 0.1;
  double damping = 0.25;
  double contact_force = 100.0;
  double contact_margin = 1e-3;
};

// Reward constants are a flat named map. Keys are "<mode>.<name>" with mode
// in {train, score} and name in {occupy, catch, caught, grass, distance}.
using RewardConstants = std::map<std::string, double>;

struct ScenarioSpec {
  ScenarioKind kind = ScenarioKind::spread;
  int n_per_side = 3;
  int horizon = 200;
  std::optional<double> visibility_radius;
  RewardConstants rewards;
  PhysicsConstants physics;
  MoverConstants agent{0.15, 3.0, 1.0};
  MoverConstants slow_agent{0.15, 2.0, 0.6};  // Navigation's slow member
  MoverConstants fast_agent{0.15, 4.0, 1.3};  // Navigation's fast members
  MoverConstants wolf{0.075, 3.0, 1.0};
  MoverConstants sheep{0.05, 4.0, 1.3};
  double landmark_radius = 0.05;
  double grass_radius = 0.05;
  double obstacle_radius = 0.15;
  int grass_count = 4;
  int obstacle_count = 3;

  double reward(RewardMode mode, const std::string& name) const {
    const std::string key = std::string(mode == RewardMode::training ? "train." : "score.") + name;
    auto it = rewards.find(key);
    return it == rewards.end() ? 0.0 : it->second;
  }

  void validate() const {
    if (n_per_side < 1) throw ConfigError("scenario: n_per_side must be >= 1");
    if (horizon < 1) throw ConfigError("scenario: horizon must be >= 1");
    if (visibility_radius && !(*visibility_radius > 0.0)) throw ConfigError("scenario: visibility_radius must be > 0");
    if (kind == ScenarioKind::navigation && n_per_side < 1) throw ConfigError("scenario: navigation needs agents");
    if (!(physics.dt > 0.0) || physics.damping < 0.0 || physics.damping >= 1.0) {
      throw ConfigError("scenario: invalid physics constants");
    }
  }
};

inline RewardConstants default_rewards(ScenarioKind kind) {
  RewardConstants r;
  // Scoring values are shared by every scenario.
  r["score.occupy"] = 5.0;
  r["score.catch"] = 5.0;
  r["score.caught"] = 5.0;
  r["score.grass"] = 3.0;
  r["score.distance"] = 0.0;
  switch (kind) {
    case ScenarioKind::spread:
      r["train.occupy"] = 100.0;
      r["train.distance"] = 0.2;
      break;
    case ScenarioKind::adversary:
      r["train.catch"] = 100.0;
      r["train.caught"] = 100.0;
      r["train.distance"] = 0.2;
      break;
    case ScenarioKind::grassland:
      r["train.catch"] = 5.0;
      r["train.caught"] = 5.0;
      r["train.grass"] = 2.0;
      r["train.distance"] = 0.2;
      break;
    case ScenarioKind::navigation:
      r["train.occupy"] = 5.0;
      break;
    case ScenarioKind::tag:
      r["train.catch"] = 5.0;
      r["train.caught"] = 5.0;
      break;
  }
  return r;
}

inline ScenarioSpec default_spec(ScenarioKind kind, int n_per_side = 3) {
  ScenarioSpec s;
  s.kind = kind;
  s.n_per_side = n_per_side;
  s.rewards = default_rewards(kind);
  return s;
}

struct EntityState {
  int id = 0;
  Role role = Role::agent;
  Vec2 pos;
  Vec2 vel;
  double radius = 0.0;
  double max_speed = 0.0;
  double accel = 0.0;
  Vec2 prev_action;
  bool collide = false;
};

struct StepEvents {
  std::vector<std::pair<int, int>> catches;      // (wolf id, sheep id)
  std::vector<std::pair<int, int>> grass_eaten;  // (sheep id, grass id)
};

struct WorldState {
  ScenarioSpec spec;
  std::vector<EntityState> entities;  // indexed by id
  std::vector<EntityState> previous;  // snapshot before the last step
  int step_index = 0;
  std::mt19937_64 rng;
  StepEvents events;

  const EntityState& entity(int id) const {
    require(id >= 0 && id < static_cast<int>(entities.size()), "unknown entity id " + std::to_string(id));
    return entities[static_cast<size_t>(id)];
  }
};

// Non-static entity ids in id order; JointAction is indexed the same way.
inline std::vector<int> mover_ids(const WorldState& w) {
  std::vector<int> ids;
  for (const auto& e : w.entities) {
    if (!is_static(e.role)) ids.push_back(e.id);
  }
  return ids;
}

using JointAction = std::vector<Vec2>;

struct StepResult {
  std::vector<double> rewards;  // per mover, mover_ids order
  bool done = false;
};

namespace detail {

inline EntityState make_entity(int id, Role role, const MoverConstants& c) {
  EntityState e;
  e.id = id;
  e.role = role;
  e.radius = c.radius;
  e.accel = c.accel;
  e.max_speed = c.max_speed;
  e.collide = true;
  return e;
}

inline EntityState make_static(int id, Role role, double radius, bool collide) {
  EntityState e;
  e.id = id;
  e.role = role;
  e.radius = radius;
  e.collide = collide;
  return e;
}

inline Vec2 uniform_position(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const double x = u(rng);
  const double y = u(rng);
  return {x, y};
}

inline double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

}  // namespace detail

inline WorldState make_world(const ScenarioSpec& spec, std::uint64_t seed) {
  spec.validate();
  WorldState w;
  w.spec = spec;
  w.rng.seed(seed);
  const int n = spec.n_per_side;
  auto& es = w.entities;
  auto next = [&]() { return static_cast<int>(es.size()); };
  switch (spec.kind) {
    case ScenarioKind::spread:
      for (int i = 0; i < n; ++i) es.push_back(detail::make_entity(next(), Role::agent, spec.agent));
      for (int i = 0; i < n; ++i) es.push_back(detail::make_static(next(), Role::landmark, spec.landmark_radius, false));
      break;
    case ScenarioKind::navigation:
      for (int i = 0; i < n; ++i) {
        const bool slow = (i == n - 1) && n > 1;
        es.push_back(detail::make_entity(next(), Role::agent, slow ? spec.slow_agent : spec.fast_agent));
      }
      for (int i = 0; i < n; ++i) es.push_back(detail::make_static(next(), Role::landmark, spec.landmark_radius, false));
      break;
    case ScenarioKind::adversary:
    case ScenarioKind::grassland:
    case ScenarioKind::tag:
      for (int i = 0; i < n; ++i) es.push_back(detail::make_entity(next(), Role::wolf, spec.wolf));
      for (int i = 0; i < n; ++i) es.push_back(detail::make_entity(next(), Role::sheep, spec.sheep));
      if (spec.kind == ScenarioKind::grassland) {
        for (int i = 0; i < spec.grass_count; ++i) {
          es.push_back(detail::make_static(next(), Role::grass, spec.grass_radius, false));
        }
      }
      if (spec.kind == ScenarioKind::tag) {
        for (int i = 0; i < spec.obstacle_count; ++i) {
          es.push_back(detail::make_static(next(), Role::obstacle, spec.obstacle_radius, true));
        }
      }
      break;
  }
  for (auto& e : es) e.pos = detail::uniform_position(w.rng);
  w.previous = w.entities;
  return w;
}

inline std::vector<int> visible_set(const WorldState& w, int agent_id, double radius) {
  require(radius > 0.0, "visible_set: radius must be > 0");
  const EntityState& self = w.entity(agent_id);
  std::vector<int> ids;
  for (const auto& e : w.entities) {
    if (e.id != agent_id && distance(e.pos, self.pos) <= radius) ids.push_back(e.id);
  }
  return ids;
}

namespace detail {

inline bool overlaps(const EntityState& a, const EntityState& b) {
  return distance(a.pos, b.pos) < a.radius + b.radius;
}

inline double min_distance_to(const WorldState& w, const EntityState& self, Role target) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& e : w.entities) {
    if (e.role == target && e.id != self.id) best = std::min(best, distance(self.pos, e.pos));
  }
  return std::isfinite(best) ? best : 0.0;
}

inline bool occupies(const WorldState& w, const EntityState& self) {
  for (const auto& e : w.entities) {
    if (e.role == Role::landmark && overlaps(self, e)) return true;
  }
  return false;
}

}  // namespace detail

// Per-mover rewards of the current state plus the last step's events.
// Occupancy and capture both mean center distance < sum of radii.
inline std::vector<double> reward(const WorldState& w, RewardMode mode) {
  const ScenarioSpec& s = w.spec;
  const std::vector<int> movers = mover_ids(w);
  std::vector<double> out(movers.size(), 0.0);
  const double occupy = s.reward(mode, "occupy");
  const double catch_r = s.reward(mode, "catch");
  const double caught = s.reward(mode, "caught");
  const double grass = s.reward(mode, "grass");
  const double dist = s.reward(mode, "distance");

  for (size_t i = 0; i < movers.size(); ++i) {
    const EntityState& e = w.entity(movers[i]);
    double r = 0.0;
    switch (s.kind) {
      case ScenarioKind::spread:
        if (detail::occupies(w, e)) r += occupy;
        r -= dist * detail::min_distance_to(w, e, Role::landmark);
        break;
      case ScenarioKind::navigation: {
        int occupied = 0;
        for (const auto& l : w.entities) {
          if (l.role != Role::landmark) continue;
          for (int m : movers) {
            if (detail::overlaps(w.entity(m), l)) {
              ++occupied;
              break;
            }
          }
        }
        r += occupy * occupied / static_cast<double>(movers.size());
        break;
      }
      case ScenarioKind::adversary:
      case ScenarioKind::grassland:
        for (auto [wolf, sheep] : w.events.catches) {
          if (wolf == e.id) r += catch_r;
          if (sheep == e.id) r -= caught;
        }
        if (e.role == Role::wolf) {
          r -= dist * detail::min_distance_to(w, e, Role::sheep);
        } else if (s.kind == ScenarioKind::grassland) {
          for (auto [sheep, g] : w.events.grass_eaten) {
            if (sheep == e.id) r += grass;
          }
          r -= dist * detail::min_distance_to(w, e, Role::grass);
        }
        break;
      case ScenarioKind::tag: {
        const double n = static_cast<double>(w.events.catches.size());
        r += e.role == Role::wolf ? catch_r * n : -caught * n;
        break;
      }
    }
    out[i] = r;
  }
  return out;
}

inline StepResult step(WorldState& w, const JointAction& actions, RewardMode mode = RewardMode::training) {
  const std::vector<int> movers = mover_ids(w);
  require(actions.size() == movers.size(), "step: expected " + std::to_string(movers.size()) + " actions, got " +
                                               std::to_string(actions.size()));
  require(w.step_index < w.spec.horizon, "step: episode already finished");
  const PhysicsConstants& ph = w.spec.physics;
  w.previous = w.entities;

  std::vector<Vec2> force(w.entities.size());
  for (size_t i = 0; i < movers.size(); ++i) {
    EntityState& e = w.entities[static_cast<size_t>(movers[i])];
    require(std::isfinite(actions[i].x) && std::isfinite(actions[i].y), "step: non-finite action");
    const Vec2 a{std::clamp(actions[i].x, -1.0, 1.0), std::clamp(actions[i].y, -1.0, 1.0)};
    e.prev_action = a;
    force[static_cast<size_t>(e.id)] = a * e.accel;
  }

  // Soft contacts: softplus penetration along the center line.
  const size_t n = w.entities.size();
  for (size_t i = 0; i < n; ++i) {
    const EntityState& a = w.entities[i];
    if (!a.collide) continue;
    for (size_t j = i + 1; j < n; ++j) {
      const EntityState& b = w.entities[j];
      if (!b.collide || (is_static(a.role) && is_static(b.role))) continue;
      const Vec2 delta = a.pos - b.pos;
      const double d = delta.norm();
      if (d < 1e-12) continue;
      const double k = ph.contact_margin;
      const double pen = k * detail::softplus(-(d - (a.radius + b.radius)) / k);
      const Vec2 f = delta * (ph.contact_force * pen / d);
      if (!is_static(a.role)) force[i] += f;
      if (!is_static(b.role)) force[j] += f * -1.0;
    }
  }

  for (int id : movers) {
    EntityState& e = w.entities[static_cast<size_t>(id)];
    e.vel = e.vel * (1.0 - ph.damping) + force[static_cast<size_t>(id)] * ph.dt;
    const double speed = e.vel.norm();
    if (speed > e.max_speed) e.vel = e.vel * (e.max_speed / speed);
    e.pos += e.vel * ph.dt;
    if (e.pos.x > 1.0 || e.pos.x < -1.0) {
      e.pos.x = std::clamp(e.pos.x, -1.0, 1.0);
      e.vel.x = 0.0;
    }
    if (e.pos.y > 1.0 || e.pos.y < -1.0) {
      e.pos.y = std::clamp(e.pos.y, -1.0, 1.0);
      e.vel.y = 0.0;
    }
  }

  w.events = {};
  for (const auto& wolf : w.entities) {
    if (wolf.role != Role::wolf) continue;
    for (const auto& sheep : w.entities) {
      if (sheep.role == Role::sheep && detail::overlaps(wolf, sheep)) w.events.catches.emplace_back(wolf.id, sheep.id);
    }
  }
  for (auto& g : w.entities) {
    if (g.role != Role::grass) continue;
    for (const auto& sheep : w.entities) {
      if (sheep.role == Role::sheep && detail::overlaps(sheep, g)) {
        w.events.grass_eaten.emplace_back(sheep.id, g.id);
        g.pos = detail::uniform_position(w.rng);
        break;
      }
    }
  }

  ++w.step_index;
  StepResult res;
  res.rewards = reward(w, mode);
  res.done = w.step_index == w.spec.horizon;
  return res;
}

// --- observations ----------------------------------------------------------

struct EntityView {
  int id = 0;
  Role role = Role::agent;
  Vec2 rel_pos;
};

struct RawObservation;

struct TeammateView {
  int id = 0;
  Vec2 prev_action;
  std::shared_ptr<const RawObservation> prev_observation;
};

struct RawObservation {
  int self_id = 0;
  Role self_role = Role::agent;
  Vec2 self_vel;
  Vec2 self_pos;
  std::vector<EntityView> entities;    // every visible non-self entity, id order
  std::vector<TeammateView> teammates;  // visible same-role movers, id order
};

namespace detail {

inline RawObservation observe_snapshot(const ScenarioSpec& spec, const std::vector<EntityState>& ents, int id) {
  const EntityState& self = ents[static_cast<size_t>(id)];
  RawObservation o;
  o.self_id = id;
  o.self_role = self.role;
  o.self_vel = self.vel;
  o.self_pos = self.pos;
  for (const auto& e : ents) {
    if (e.id == id) continue;
    if (spec.visibility_radius && distance(e.pos, self.pos) > *spec.visibility_radius) continue;
    o.entities.push_back({e.id, e.role, e.pos - self.pos});
  }
  return o;
}

}  // namespace detail

inline RawObservation observe(const WorldState& w, int agent_id) {
  const EntityState& self = w.entity(agent_id);
  require(!is_static(self.role), "observe: entity " + std::to_string(agent_id) + " is static");
  RawObservation o = detail::observe_snapshot(w.spec, w.entities, agent_id);
  for (const auto& v : o.entities) {
    const EntityState& mate = w.entity(v.id);
    if (mate.role != self.role) continue;
    TeammateView t;
    t.id = mate.id;
    t.prev_action = mate.prev_action;
    t.prev_observation =
        std::make_shared<const RawObservation>(detail::observe_snapshot(w.spec, w.previous, mate.id));
    o.teammates.push_back(std::move(t));
  }
  return o;
}

}  // namespace iatt
