#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "iatt/agents.hpp"
#include "iatt/engine.hpp"
#include "iatt/evaluation.hpp"
#include "iatt/io.hpp"

namespace iatt {

inline constexpr int kProtocolVersion = 1;
inline constexpr int kTickHz = 10;

class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Key { none, up, down, left, right };

inline std::string_view key_name(Key k) {
  switch (k) {
    case Key::up: return "up";
    case Key::down: return "down";
    case Key::left: return "left";
    case Key::right: return "right";
    case Key::none: break;
  }
  return "none";
}

inline Key parse_key(std::string_view s) {
  for (Key k : {Key::none, Key::up, Key::down, Key::left, Key::right}) {
    if (key_name(k) == s) return k;
  }
  throw ProtocolError("unknown key '" + std::string(s) + "'");
}

// Keyboards give direction only, so every key is a unit force.
inline Vec2 key_force(Key k) {
  switch (k) {
    case Key::up: return {0.0, 1.0};
    case Key::down: return {0.0, -1.0};
    case Key::left: return {-1.0, 0.0};
    case Key::right: return {1.0, 0.0};
    case Key::none: break;
  }
  return {0.0, 0.0};
}

struct ClientMessage {
  enum class Type { join, action } type = Type::action;
  std::optional<Role> role;
  int version = kProtocolVersion;
  Key key = Key::none;
};

inline ClientMessage parse_client_message(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception&) {
    throw ProtocolError("message is not valid JSON");
  }
  if (!j.is_object() || !j.contains("type") || !j["type"].is_string()) {
    throw ProtocolError("message must be an object with a string \"type\"");
  }
  const std::string type = j["type"].get<std::string>();
  ClientMessage m;
  if (type == "join") {
    m.type = ClientMessage::Type::join;
    if (j.contains("role")) {
      if (!j["role"].is_string()) throw ProtocolError("join: \"role\" must be a string");
      try {
        m.role = parse_role(j["role"].get<std::string>());
      } catch (const std::exception&) {
        throw ProtocolError("join: unknown role '" + j["role"].get<std::string>() + "'");
      }
    }
    if (j.contains("version")) {
      if (!j["version"].is_number_integer()) throw ProtocolError("join: \"version\" must be an integer");
      m.version = j["version"].get<int>();
    }
  } else if (type == "action") {
    if (!j.contains("key") || !j["key"].is_string()) throw ProtocolError("action: \"key\" must be a string");
    m.key = parse_key(j["key"].get<std::string>());
  } else {
    throw ProtocolError("unknown message type '" + type + "'");
  }
  return m;
}

inline json error_message(const std::string& what) { return {{"type", "error"}, {"message", what}}; }

struct PlayConfig {
  ScenarioSpec spec = default_spec(ScenarioKind::grassland, 2);
  Role human_role = Role::sheep;
  int episodes = 5;
  int steps = 100;
  std::uint64_t seed = 0;
  // Systems cycled over the non-human slots of the human's role / other
  // roles. Empty means uniform random agents.
  std::vector<std::shared_ptr<const AgentSystem>> teammates;
  std::vector<std::shared_ptr<const AgentSystem>> opponents;
};

struct EpisodeLog {
  int episode = 0;
  std::uint64_t world_seed = 0;
  std::vector<Key> keys;             // applied human key per step
  std::vector<double> slot_rewards;  // scoring-mode return per mover slot
  bool complete = false;
};

struct SessionLog {
  std::uint64_t seed = 0;
  int human_slot = 0;
  std::vector<std::string> slot_methods;
  std::vector<EpisodeLog> episodes;

  // Per-method scoring totals over completed episodes.
  std::map<std::string, double> method_rewards() const {
    std::map<std::string, double> out;
    for (const auto& e : episodes) {
      if (!e.complete) continue;
      for (size_t s = 0; s < e.slot_rewards.size(); ++s) out[slot_methods[s]] += e.slot_rewards[s];
    }
    return out;
  }
};

inline json to_json(const SessionLog& log) {
  json eps = json::array();
  for (const auto& e : log.episodes) {
    std::vector<std::string> keys;
    for (Key k : e.keys) keys.emplace_back(key_name(k));
    eps.push_back({{"episode", e.episode},
                   {"world_seed", e.world_seed},
                   {"keys", keys},
                   {"slot_rewards", e.slot_rewards},
                   {"complete", e.complete}});
  }
  return {{"type", "session_log"},
          {"seed", log.seed},
          {"human_slot", log.human_slot},
          {"slot_methods", log.slot_methods},
          {"method_rewards", log.method_rewards()},
          {"episodes", eps}};
}

// One human, one world, fixed episode count. The network layer posts keys
// into a single-slot mailbox and calls tick() at a fixed rate; each tick
// consumes the mailbox (empty = no key) and advances the world one step.
class PlaySession {
 public:
  explicit PlaySession(PlayConfig cfg) : cfg_(std::move(cfg)) {
    if (cfg_.episodes < 1 || cfg_.steps < 1) throw ConfigError("play: episodes and steps must be >= 1");
    cfg_.spec.horizon = cfg_.steps;
    cfg_.spec.validate();
    const std::vector<Role> roles = mover_roles(cfg_.spec);
    auto it = std::find(roles.begin(), roles.end(), cfg_.human_role);
    if (it == roles.end()) {
      throw ConfigError("play: role " + std::string(role_name(cfg_.human_role)) + " not in scenario " +
                        std::string(scenario_name(cfg_.spec.kind)));
    }
    human_slot_ = static_cast<int>(it - roles.begin());
    for (const auto* list : {&cfg_.teammates, &cfg_.opponents}) {
      for (const auto& s : *list) {
        if (!s || s->spec.kind != cfg_.spec.kind || s->spec.n_per_side != cfg_.spec.n_per_side) {
          throw ConfigError("play: checkpoint does not match scenario " + std::string(scenario_name(cfg_.spec.kind)) +
                            " N=" + std::to_string(cfg_.spec.n_per_side));
        }
      }
    }
    size_t mate = 0, opp = 0;
    log_.seed = cfg_.seed;
    log_.human_slot = human_slot_;
    for (size_t s = 0; s < roles.size(); ++s) {
      if (static_cast<int>(s) == human_slot_) {
        controllers_.push_back({nullptr, nullptr});
        log_.slot_methods.push_back("human");
        continue;
      }
      const auto& list = roles[s] == cfg_.human_role ? cfg_.teammates : cfg_.opponents;
      size_t& next = roles[s] == cfg_.human_role ? mate : opp;
      if (list.empty()) {
        controllers_.push_back({nullptr, nullptr});
        log_.slot_methods.push_back("random");
      } else {
        const auto& sys = list[next++ % list.size()];
        controllers_.push_back({&sys->policy_for(static_cast<int>(s)), &sys->fields});
        log_.slot_methods.push_back(sys->method);
      }
    }
    start_episode();
  }

  const PlayConfig& config() const { return cfg_; }
  const SessionLog& log() const { return log_; }
  bool finished() const { return finished_; }
  int human_id() const { return mover_ids(world_).at(static_cast<size_t>(human_slot_)); }
  int episode() const { return episode_; }
  const WorldState& world() const { return world_; }

  // Last key wins until the next tick.
  void post(Key k) { mailbox_ = k; }

  json joined_message() const {
    return {{"type", "joined"},
            {"version", kProtocolVersion},
            {"role", std::string(role_name(cfg_.human_role))},
            {"self", human_id()},
            {"episodes", cfg_.episodes},
            {"steps", cfg_.steps},
            {"tick_hz", kTickHz}};
  }

  json state_message() const {
    json ents = json::array();
    for (const auto& e : world_.entities) {
      ents.push_back({{"id", e.id},
                      {"role", std::string(role_name(e.role))},
                      {"x", e.pos.x},
                      {"y", e.pos.y},
                      {"vx", e.vel.x},
                      {"vy", e.vel.y}});
    }
    return {{"type", "state"},
            {"tick", tick_},
            {"step", world_.step_index},
            {"episode", episode_},
            {"entities", ents},
            {"scores", scores()}};
  }

  // Advances one step; returns the messages to broadcast.
  std::vector<json> tick() {
    require(!finished_, "PlaySession::tick: session finished");
    const Key key = mailbox_.value_or(Key::none);
    mailbox_.reset();
    std::vector<const WorldState*> ptrs{&world_};
    auto dec = decide(ptrs, {controllers_}, rng_, false, false);
    JointAction a = joint_action(dec[0]);
    a[static_cast<size_t>(human_slot_)] = key_force(key);
    const StepResult r = step(world_, a, RewardMode::scoring);
    EpisodeLog& ep = log_.episodes.back();
    ep.keys.push_back(key);
    for (size_t s = 0; s < r.rewards.size(); ++s) ep.slot_rewards[s] += r.rewards[s];
    ++tick_;
    std::vector<json> out{state_message()};
    if (r.done) {
      ep.complete = true;
      out.push_back({{"type", "episode_end"}, {"episode", episode_}, {"rewards", scores()}});
      if (episode_ + 1 >= cfg_.episodes) {
        finished_ = true;
        out.push_back({{"type", "session_end"}, {"episodes", cfg_.episodes}});
      } else {
        ++episode_;
        start_episode();
      }
    }
    return out;
  }

  // Client went away: the running episode stays logged as incomplete.
  void abort() { finished_ = true; }

 private:
  // Team totals by role plus the human's own return; method tags stay hidden.
  json scores() const {
    json s = json::object();
    const EpisodeLog& ep = log_.episodes.back();
    const std::vector<Role> roles = mover_roles(cfg_.spec);
    for (size_t i = 0; i < roles.size(); ++i) {
      const std::string r(role_name(roles[i]));
      s[r] = s.value(r, 0.0) + ep.slot_rewards[i];
    }
    s["you"] = ep.slot_rewards[static_cast<size_t>(human_slot_)];
    return s;
  }

  void start_episode() {
    EpisodeLog ep;
    ep.episode = episode_;
    ep.world_seed = detail::mix_seed(cfg_.seed, static_cast<std::uint64_t>(episode_), 11);
    ep.slot_rewards.assign(controllers_.size(), 0.0);
    world_ = make_world(cfg_.spec, ep.world_seed);
    rng_.seed(detail::mix_seed(cfg_.seed, static_cast<std::uint64_t>(episode_), 12));
    log_.episodes.push_back(std::move(ep));
  }

  PlayConfig cfg_;
  int human_slot_ = 0;
  std::vector<Controller> controllers_;
  SessionLog log_;
  WorldState world_;
  std::mt19937_64 rng_;
  std::optional<Key> mailbox_;
  int episode_ = 0;
  long tick_ = 0;
  bool finished_ = false;
};

// Re-simulates a session from its logged keys. Returns the per-episode slot
// returns, covering the logged steps of each episode.
inline std::vector<std::vector<double>> replay_session(const PlayConfig& cfg, const SessionLog& log) {
  PlayConfig c = cfg;
  c.seed = log.seed;
  PlaySession s(c);
  std::vector<std::vector<double>> out;
  for (const auto& ep : log.episodes) {
    require(s.episode() == ep.episode, "replay_session: episode order mismatch");
    for (Key k : ep.keys) {
      s.post(k);
      s.tick();
      if (s.finished() || s.log().episodes.back().episode != ep.episode) break;
    }
    out.push_back(s.log().episodes[static_cast<size_t>(ep.episode)].slot_rewards);
    if (!ep.complete) break;
  }
  return out;
}

}  // namespace iatt
