#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <iomanip>
#include <map>
#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "iatt/agents.hpp"
#include "iatt/engine.hpp"
#include "iatt/errors.hpp"
#include "iatt/ranking.hpp"
#include "iatt/training.hpp"

namespace iatt {

// One pool member. `system` is null only for the "random" method.
struct PoolEntry {
  std::string method;
  Role role = Role::agent;
  int seed_id = 0;
  std::shared_ptr<const AgentSystem> system;
  std::string checkpoint;  // where the system came from, informational
};

struct AgentPool {
  std::vector<PoolEntry> entries;

  void add(std::string method, Role role, int seed_id, std::shared_ptr<const AgentSystem> sys,
           std::string checkpoint = {}) {
    entries.push_back({canonical_method(method), role, seed_id, std::move(sys), std::move(checkpoint)});
  }
  std::vector<size_t> of_role(Role r) const {
    std::vector<size_t> out;
    for (size_t i = 0; i < entries.size(); ++i) {
      if (entries[i].role == r) out.push_back(i);
    }
    return out;
  }
};

inline std::vector<Role> mover_roles(const ScenarioSpec& spec) {
  const WorldState w = make_world(spec, 0);
  std::vector<Role> out;
  for (int id : mover_ids(w)) out.push_back(w.entity(id).role);
  return out;
}

inline void validate_pool(const AgentPool& pool, const ScenarioSpec& spec) {
  const std::vector<Role> roles = mover_roles(spec);
  for (Role r : roles) {
    if (pool.of_role(r).empty()) throw ConfigError("pool has no entry for role " + std::string(role_name(r)));
  }
  for (size_t i = 0; i < pool.entries.size(); ++i) {
    const PoolEntry& e = pool.entries[i];
    const std::string tag = "pool entry " + std::to_string(i) + " (" + e.method + ")";
    if (std::find(roles.begin(), roles.end(), e.role) == roles.end()) {
      throw ConfigError(tag + ": role " + std::string(role_name(e.role)) + " not in scenario");
    }
    if (e.method == "random") continue;
    if (!e.system) throw ConfigError(tag + ": no checkpoint loaded");
    if (e.system->spec.kind != spec.kind || e.system->spec.n_per_side != spec.n_per_side) {
      throw ConfigError(tag + ": checkpoint is for " + std::string(scenario_name(e.system->spec.kind)) + " N=" +
                        std::to_string(e.system->spec.n_per_side) + ", tournament is " +
                        std::string(scenario_name(spec.kind)) + " N=" + std::to_string(spec.n_per_side));
    }
  }
}

// Pool entry index per mover slot.
using Composition = std::vector<int>;

// Independent uniform draw over the role's entries for each slot.
inline Composition sample_composition(const AgentPool& pool, const ScenarioSpec& spec, std::mt19937_64& rng) {
  Composition c;
  for (Role r : mover_roles(spec)) {
    const auto idx = pool.of_role(r);
    require(!idx.empty(), "sample_composition: pool has no " + std::string(role_name(r)));
    std::uniform_int_distribution<size_t> pick(0, idx.size() - 1);
    c.push_back(static_cast<int>(idx[pick(rng)]));
  }
  return c;
}

using CompositionFn = std::function<Composition(const AgentPool&, const ScenarioSpec&, std::mt19937_64&)>;

struct TournamentConfig {
  int episodes = 1000;
  int steps = 200;
  std::uint64_t seed = 0;
  bool deterministic = true;
  int batch = 50;  // episodes simulated side by side
};

struct EpisodeRecord {
  Composition composition;
  std::vector<double> returns;  // scoring-mode return per slot
};

struct CellStats {
  double mean = 0.0;
  double stderr_ = 0.0;
  long count = 0;
  double total = 0.0;
  double team_mean = 0.0;  // team total over episodes where the method holds a slot of the role
  double team_stderr = 0.0;
  long team_count = 0;
};

struct CellKey {
  std::string method;
  Role role = Role::agent;
  bool operator<(const CellKey& o) const { return std::tie(method, role) < std::tie(o.method, o.role); }
  bool operator==(const CellKey& o) const { return method == o.method && role == o.role; }
};

struct MatchReport {
  ScenarioSpec spec;
  std::uint64_t master_seed = 0;
  int episodes = 0;
  int steps = 0;
  std::vector<std::string> entry_methods;  // method tag of each pool entry at run time
  std::vector<EpisodeRecord> log;
  std::map<CellKey, CellStats> cells;
  double mean_visible = 0.0;  // average visible entities per observation
};

inline double standard_error(const std::vector<double>& xs) {
  if (xs.size() < 2) return 0.0;
  double m = 0.0;
  for (double x : xs) m += x;
  m /= static_cast<double>(xs.size());
  double v = 0.0;
  for (double x : xs) v += (x - m) * (x - m);
  v /= static_cast<double>(xs.size() - 1);
  return std::sqrt(v / static_cast<double>(xs.size()));
}

inline std::map<CellKey, CellStats> aggregate(const std::vector<EpisodeRecord>& log,
                                              const std::vector<std::string>& entry_methods,
                                              const std::vector<Role>& roles) {
  std::map<CellKey, std::vector<double>> agent, team;
  for (const EpisodeRecord& ep : log) {
    std::map<Role, double> team_total;
    for (size_t s = 0; s < roles.size(); ++s) team_total[roles[s]] += ep.returns[s];
    std::map<CellKey, bool> present;
    for (size_t s = 0; s < roles.size(); ++s) {
      const CellKey k{entry_methods[static_cast<size_t>(ep.composition[s])], roles[s]};
      agent[k].push_back(ep.returns[s]);
      present[k] = true;
    }
    for (const auto& [k, _] : present) team[k].push_back(team_total[k.role]);
  }
  std::map<CellKey, CellStats> out;
  for (const auto& [k, xs] : agent) {
    CellStats c;
    for (double x : xs) c.total += x;
    c.count = static_cast<long>(xs.size());
    c.mean = c.total / static_cast<double>(c.count);
    c.stderr_ = standard_error(xs);
    const auto& ts = team[k];
    double tt = 0.0;
    for (double x : ts) tt += x;
    c.team_count = static_cast<long>(ts.size());
    c.team_mean = tt / static_cast<double>(c.team_count);
    c.team_stderr = standard_error(ts);
    out[k] = c;
  }
  return out;
}

namespace detail {

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32), static_cast<std::uint32_t>(b)};
  std::array<std::uint32_t, 2> out{};
  seq.generate(out.begin(), out.end());
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

}  // namespace detail

// Each episode draws its composition and world from seeds derived from
// (master seed, episode index); action noise is drawn per batch.
inline MatchReport run_tournament(const AgentPool& pool, const ScenarioSpec& scenario, const TournamentConfig& cfg,
                                  const CompositionFn& compose = sample_composition) {
  if (cfg.episodes < 1 || cfg.steps < 1 || cfg.batch < 1) throw ConfigError("tournament: episodes, steps and batch must be >= 1");
  validate_pool(pool, scenario);
  ScenarioSpec spec = scenario;
  spec.horizon = cfg.steps;
  spec.validate();
  const std::vector<Role> roles = mover_roles(spec);

  MatchReport rep;
  rep.spec = spec;
  rep.master_seed = cfg.seed;
  rep.episodes = cfg.episodes;
  rep.steps = cfg.steps;
  for (const auto& e : pool.entries) rep.entry_methods.push_back(e.method);
  rep.log.resize(static_cast<size_t>(cfg.episodes));

  double visible_sum = 0.0, visible_n = 0.0;
  for (int start = 0; start < cfg.episodes; start += cfg.batch) {
    const int n = std::min(cfg.batch, cfg.episodes - start);
    std::vector<WorldState> worlds;
    std::vector<std::vector<Controller>> ctl;
    for (int e = start; e < start + n; ++e) {
      std::mt19937_64 crng(detail::mix_seed(cfg.seed, static_cast<std::uint64_t>(e), 1));
      EpisodeRecord& rec = rep.log[static_cast<size_t>(e)];
      rec.composition = compose(pool, spec, crng);
      require(rec.composition.size() == roles.size(), "tournament: composition must cover every slot");
      rec.returns.assign(roles.size(), 0.0);
      std::vector<Controller> c;
      for (size_t s = 0; s < roles.size(); ++s) {
        const PoolEntry& pe = pool.entries[static_cast<size_t>(rec.composition[s])];
        require(pe.role == roles[s], "tournament: slot " + std::to_string(s) + " given an entry of the wrong role");
        if (!pe.system) {
          c.push_back({nullptr, nullptr});
        } else {
          c.push_back({&pe.system->policy_for(static_cast<int>(s)), &pe.system->fields});
        }
      }
      ctl.push_back(std::move(c));
      worlds.push_back(make_world(spec, detail::mix_seed(cfg.seed, static_cast<std::uint64_t>(e), 2)));
    }
    std::mt19937_64 arng(detail::mix_seed(cfg.seed, static_cast<std::uint64_t>(start), 3));
    std::vector<const WorldState*> ptrs;
    for (const auto& w : worlds) ptrs.push_back(&w);
    for (int t = 0; t < cfg.steps; ++t) {
      auto dec = decide(ptrs, ctl, arng, !cfg.deterministic, false);
      for (int k = 0; k < n; ++k) {
        WorldState& w = worlds[static_cast<size_t>(k)];
        for (int id : mover_ids(w)) {
          visible_sum += spec.visibility_radius
                             ? static_cast<double>(visible_set(w, id, *spec.visibility_radius).size())
                             : static_cast<double>(w.entities.size() - 1);
          visible_n += 1.0;
        }
        const StepResult r = step(w, joint_action(dec[static_cast<size_t>(k)]), RewardMode::scoring);
        auto& ret = rep.log[static_cast<size_t>(start + k)].returns;
        for (size_t s = 0; s < ret.size(); ++s) ret[s] += r.rewards[s];
      }
    }
  }
  rep.mean_visible = visible_sum / visible_n;
  rep.cells = aggregate(rep.log, rep.entry_methods, roles);
  return rep;
}

inline std::string format_report(const MatchReport& r) {
  std::ostringstream os;
  os << scenario_name(r.spec.kind) << " N=" << r.spec.n_per_side << ", " << r.episodes << " episodes x " << r.steps
     << " steps, seed " << r.master_seed << "\n";
  os << std::left << std::setw(14) << "method" << std::setw(10) << "role" << std::right << std::setw(12) << "agent"
     << std::setw(10) << "+-" << std::setw(12) << "team" << std::setw(10) << "+-" << std::setw(8) << "n"
     << "\n";
  os << std::fixed << std::setprecision(2);
  for (const auto& [k, c] : r.cells) {
    os << std::left << std::setw(14) << k.method << std::setw(10) << role_name(k.role) << std::right << std::setw(12)
       << c.mean << std::setw(10) << c.stderr_ << std::setw(12) << c.team_mean << std::setw(10) << c.team_stderr
       << std::setw(8) << c.count << "\n";
  }
  return os.str();
}

// --- inverse network rank accuracy ------------------------------------------

inline std::vector<double> iw_rank_accuracy(const IWNet& iw, const PairDataset& data) {
  std::vector<std::vector<double>> pred, truth;
  for (size_t i = 0; i < data.size(); ++i) {
    pred.push_back(iw_forward(iw, data[i].features));
    truth.push_back(data[i].w.w);
  }
  return rank_accuracy(pred, truth);
}

// --- multi-Inverse-Att sweep -------------------------------------------------

// Systems available at one scenario scale.
struct SweepPoolSpec {
  std::vector<std::shared_ptr<const AgentSystem>> mappo;
  std::vector<std::shared_ptr<const AgentSystem>> inverse;
};

struct SweepCell {
  int scale = 0;
  int inverse_count = 0;
  double team_mean = 0.0;
  double team_stderr = 0.0;
  int episodes = 0;
};

struct SweepReport {
  ScenarioKind kind = ScenarioKind::spread;
  std::vector<SweepCell> cells;
  std::map<int, bool> monotone;  // per scale, whether team reward never drops as the count grows
};

// Pool with every MAPPO entry ahead of every Inverse-Att entry, so that a
// composition drawn over MAPPO entries alone indexes identically in a
// MAPPO-only pool.
inline AgentPool sweep_pool(const ScenarioSpec& spec, const SweepPoolSpec& s) {
  AgentPool pool;
  for (Role r : team_roles(spec)) {
    for (size_t i = 0; i < s.mappo.size(); ++i) pool.add("mappo", r, static_cast<int>(i), s.mappo[i]);
  }
  for (Role r : team_roles(spec)) {
    for (size_t i = 0; i < s.inverse.size(); ++i) pool.add("inverse-att", r, static_cast<int>(i), s.inverse[i]);
  }
  return pool;
}

// The first role is the team that receives Inverse-Att agents; other roles stay MAPPO.
inline CompositionFn sweep_composer(int inverse_count) {
  return [inverse_count](const AgentPool& pool, const ScenarioSpec& spec, std::mt19937_64& rng) {
    const std::vector<Role> roles = mover_roles(spec);
    Composition c;
    for (Role r : roles) {
      std::vector<size_t> idx;
      for (size_t i : pool.of_role(r)) {
        if (pool.entries[i].method == "mappo") idx.push_back(i);
      }
      std::uniform_int_distribution<size_t> pick(0, idx.size() - 1);
      c.push_back(static_cast<int>(idx[pick(rng)]));
    }
    if (inverse_count > 0) {
      std::vector<size_t> team;
      for (size_t s = 0; s < roles.size(); ++s) {
        if (roles[s] == roles.front()) team.push_back(s);
      }
      std::shuffle(team.begin(), team.end(), rng);
      std::vector<size_t> inv;
      for (size_t i : pool.of_role(roles.front())) {
        if (pool.entries[i].method == "inverse-att") inv.push_back(i);
      }
      require(!inv.empty(), "sweep: no Inverse-Att entries");
      std::uniform_int_distribution<size_t> pick(0, inv.size() - 1);
      for (int k = 0; k < inverse_count; ++k) c[team[static_cast<size_t>(k)]] = static_cast<int>(inv[pick(rng)]);
    }
    return c;
  };
}

inline double team_total_mean(const MatchReport& r, Role role, double* stderr_out) {
  const std::vector<Role> roles = mover_roles(r.spec);
  std::vector<double> totals;
  for (const auto& ep : r.log) {
    double t = 0.0;
    for (size_t s = 0; s < roles.size(); ++s) {
      if (roles[s] == role) t += ep.returns[s];
    }
    totals.push_back(t);
  }
  double m = 0.0;
  for (double x : totals) m += x;
  if (stderr_out) *stderr_out = standard_error(totals);
  return m / static_cast<double>(totals.size());
}

inline SweepReport multi_inverse_sweep(ScenarioKind kind, const std::map<int, SweepPoolSpec>& by_scale,
                                       const TournamentConfig& cfg) {
  SweepReport rep;
  rep.kind = kind;
  for (const auto& [scale, systems] : by_scale) {
    if (systems.mappo.empty()) throw ConfigError("sweep: scale " + std::to_string(scale) + " has no MAPPO systems");
    const ScenarioSpec spec = default_spec(kind, scale);
    const AgentPool pool = sweep_pool(spec, systems);
    const Role team = mover_roles(spec).front();
    int team_size = 0;
    for (Role r : mover_roles(spec)) team_size += r == team ? 1 : 0;
    double prev = -std::numeric_limits<double>::infinity();
    bool mono = true;
    for (int k = 0; k <= team_size; ++k) {
      if (k > 0 && systems.inverse.empty()) break;
      const MatchReport m = run_tournament(pool, spec, cfg, sweep_composer(k));
      SweepCell cell;
      cell.scale = scale;
      cell.inverse_count = k;
      cell.episodes = m.episodes;
      cell.team_mean = team_total_mean(m, team, &cell.team_stderr);
      mono = mono && cell.team_mean >= prev;
      prev = cell.team_mean;
      rep.cells.push_back(cell);
    }
    rep.monotone[scale] = mono;
  }
  return rep;
}

inline std::string format_sweep(const SweepReport& r) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << "# Inverse-Att agents replacing MAPPO agents, " << scenario_name(r.kind) << "\n";
  os << std::left << std::setw(8) << "scale";
  int max_count = 0;
  for (const auto& c : r.cells) max_count = std::max(max_count, c.inverse_count);
  for (int k = 0; k <= max_count; ++k) os << std::right << std::setw(20) << k;
  os << std::setw(10) << "monotone" << "\n";
  for (const auto& [scale, mono] : r.monotone) {
    os << std::left << std::setw(8) << scale;
    for (int k = 0; k <= max_count; ++k) {
      std::ostringstream cell;
      cell << std::fixed << std::setprecision(2);
      for (const auto& c : r.cells) {
        if (c.scale == scale && c.inverse_count == k) cell << c.team_mean << " +- " << c.team_stderr;
      }
      os << std::right << std::setw(20) << cell.str();
    }
    os << std::setw(10) << (mono ? "yes" : "no") << "\n";
  }
  return os.str();
}

// --- partial observability ---------------------------------------------------

struct PartialObsRow {
  std::optional<double> radius;  // empty = full observability
  MatchReport report;
};

inline std::vector<PartialObsRow> partial_obs_eval(const AgentPool& pool, const ScenarioSpec& scenario,
                                                   const std::vector<std::optional<double>>& radii,
                                                   const TournamentConfig& cfg) {
  std::vector<PartialObsRow> rows;
  for (const auto& r : radii) {
    if (r && !(*r > 0.0)) throw ConfigError("partial_obs_eval: radius must be positive");
    ScenarioSpec spec = scenario;
    spec.visibility_radius = r;
    rows.push_back({r, run_tournament(pool, spec, cfg)});
  }
  return rows;
}

inline std::vector<std::optional<double>> default_radii() { return {1.5, 1.0, 0.5}; }

// Rows are methods, columns are radii.
inline std::string format_partial_obs(const std::vector<PartialObsRow>& rows) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << std::left << std::setw(24) << "method/role";
  for (const auto& r : rows) {
    std::ostringstream h;
    if (r.radius) {
      h << "r=" << std::fixed << std::setprecision(2) << *r.radius;
    } else {
      h << "full";
    }
    os << std::right << std::setw(20) << h.str();
  }
  os << "\n";
  std::vector<CellKey> keys;
  for (const auto& r : rows) {
    for (const auto& [k, _] : r.report.cells) {
      if (std::find(keys.begin(), keys.end(), k) == keys.end()) keys.push_back(k);
    }
  }
  for (const auto& k : keys) {
    os << std::left << std::setw(24) << (k.method + "/" + std::string(role_name(k.role)));
    for (const auto& r : rows) {
      std::ostringstream cell;
      cell << std::fixed << std::setprecision(2);
      auto it = r.report.cells.find(k);
      if (it != r.report.cells.end()) cell << it->second.mean << " +- " << it->second.stderr_;
      os << std::right << std::setw(20) << cell.str();
    }
    os << "\n";
  }
  os << std::left << std::setw(24) << "mean visible";
  for (const auto& r : rows) os << std::right << std::setw(20) << r.report.mean_visible;
  os << "\n";
  return os.str();
}

}  // namespace iatt
