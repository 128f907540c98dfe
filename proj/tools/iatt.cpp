// Command-line front end: train-gf, train, train-iw, eval, play.

#include <CLI11.hpp>
#include <iostream>

#include "iatt/evaluation.hpp"
#include "iatt/gradfield.hpp"
#include "iatt/io.hpp"
#include "iatt/play_server.hpp"
#include "iatt/training.hpp"

using namespace iatt;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> sets;  // key=value overrides

  RunConfig load() const {
    RunConfig c = config.empty() ? parse_config_text("") : parse_config(config);
    for (const auto& kv : sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
      set_config_value(c, detail::trim(kv.substr(0, eq)), detail::trim(kv.substr(eq + 1)));
    }
    c.apply_seed();
    c.train.validate();
    c.spec();
    return c;
  }
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("-c,--config", c.config, "config file of key = value lines");
  app->add_option("--set", c.sets, "override one config key (key=value), repeatable");
}

ScoreNet train_field(FieldKind kind, const RunConfig& rc, ScoreTrainReport* rep) {
  const GFDataset data = kind == FieldKind::entity ? gen_entity_dataset(rc.gf_samples, rc.gf.seed)
                                                   : gen_boundary_dataset(rc.gf_samples, rc.gf.seed + 1);
  ScoreTrainConfig cfg = rc.gf;
  if (kind == FieldKind::boundary) cfg.seed += 1;
  return train_score_net(data, cfg, rep);
}

FieldPair load_or_train_fields(const std::string& entity, const std::string& boundary, const RunConfig& rc) {
  FieldPair f;
  f.t_eval = rc.t_eval;
  for (auto [kind, path] : {std::pair{FieldKind::entity, entity}, std::pair{FieldKind::boundary, boundary}}) {
    std::shared_ptr<const ScoreNet> net;
    if (!path.empty()) {
      net = std::make_shared<const ScoreNet>(load_score_net(path));
      if (net->kind() != kind) throw ConfigError(path + " holds a " + std::string(field_name(net->kind())) + " field");
    } else {
      std::cerr << "training " << field_name(kind) << " field (" << rc.gf.epochs << " epochs)\n";
      net = std::make_shared<const ScoreNet>(train_field(kind, rc, nullptr));
    }
    (kind == FieldKind::entity ? f.entity : f.boundary) = net;
  }
  return f;
}

void print_iteration(const IterationStats& s) {
  std::cerr << "iter " << s.iteration << " step " << s.steps;
  for (const auto& [role, v] : s.role_score) std::cerr << " " << role << "=" << v;
  std::cerr << " (" << s.seconds << " s)\n";
}

// method:role:path, or random:role
AgentPool parse_pool(const std::vector<std::string>& specs, const ScenarioSpec& spec) {
  AgentPool pool;
  std::map<std::string, int> seeds;
  for (const auto& s : specs) {
    std::vector<std::string> parts;
    std::stringstream ss(s);
    for (std::string p; std::getline(ss, p, ':');) parts.push_back(p);
    if (parts.size() < 2 || parts.size() > 3) throw ConfigError("--pool expects method:role[:checkpoint], got '" + s + "'");
    const std::string method = canonical_method(parts[0]);
    const Role role = parse_role(parts[1]);
    const int seed_id = seeds[method + parts[1]]++;
    if (method == "random") {
      pool.add(method, role, seed_id, nullptr);
      continue;
    }
    if (parts.size() != 3) throw ConfigError("--pool entry '" + s + "' needs a checkpoint");
    auto sys = std::make_shared<const AgentSystem>(load_system(parts[2]));
    if (sys->method != method) {
      throw ConfigError(parts[2] + " holds a " + sys->method + " system, pool entry says " + method);
    }
    pool.add(method, role, seed_id, sys, parts[2]);
  }
  validate_pool(pool, spec);
  return pool;
}

void emit(const std::vector<json>& recs, const std::string& out) {
  if (out.empty()) return;
  MetricsLog log(out);
  for (const auto& r : recs) log.write(r);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Inverse attention agents toolkit"};
  app.require_subcommand(1);

  // train-gf
  Common gf_common;
  std::string gf_kind = "entity", gf_out;
  auto* gf = app.add_subcommand("train-gf", "train a gradient-field score network");
  add_common(gf, gf_common);
  gf->add_option("--kind", gf_kind, "entity or boundary")->check(CLI::IsMember({"entity", "boundary"}));
  gf->add_option("-o,--out", gf_out, "checkpoint path")->required();

  // train
  Common tr_common;
  std::string tr_variant, tr_out, tr_from, tr_iw, tr_metrics, tr_gf_entity, tr_gf_boundary, tr_pairs_out;
  auto* tr = app.add_subcommand("train", "train a policy system");
  add_common(tr, tr_common);
  tr->add_option("--variant", tr_variant, "mappo|mapo|ippo|self-att|inverse-att (default: config method)");
  tr->add_option("-o,--out", tr_out, "system checkpoint path")->required();
  tr->add_option("--from", tr_from, "self-att checkpoint (inverse-att)");
  tr->add_option("--iw", tr_iw, "inverse network checkpoint (inverse-att)");
  tr->add_option("--gf-entity", tr_gf_entity, "entity field checkpoint (trained if absent)");
  tr->add_option("--gf-boundary", tr_gf_boundary, "boundary field checkpoint (trained if absent)");
  tr->add_option("--pairs-out", tr_pairs_out, "self-att: save the trimmed (w, observation) pairs here");
  tr->add_option("--metrics", tr_metrics, "line-delimited metrics log");

  // train-iw
  Common iw_common;
  std::string iw_from, iw_pairs, iw_out, iw_metrics;
  auto* iw = app.add_subcommand("train-iw", "train inverse attention networks from logged pairs");
  add_common(iw, iw_common);
  iw->add_option("--from", iw_from, "self-att system checkpoint")->required();
  iw->add_option("--pairs", iw_pairs, "pair dataset checkpoint")->required();
  iw->add_option("-o,--out", iw_out, "inverse network checkpoint")->required();
  iw->add_option("--metrics", iw_metrics, "line-delimited report");

  // eval
  Common ev_common;
  std::vector<std::string> ev_pool, ev_mappo, ev_inverse;
  std::vector<double> ev_radii{1.5, 1.0, 0.5};
  std::string ev_out, ev_iw, ev_pairs;
  auto* ev = app.add_subcommand("eval", "evaluation harnesses");
  ev->require_subcommand(1);
  auto* ev_t = ev->add_subcommand("tournament", "mix-and-match tournament");
  auto* ev_r = ev->add_subcommand("rank-acc", "inverse network rank accuracy on a pair dataset");
  auto* ev_s = ev->add_subcommand("sweep", "replace MAPPO agents with Inverse-Att agents one at a time");
  auto* ev_p = ev->add_subcommand("partial-obs", "tournaments at several visibility radii");
  for (auto* s : {ev_t, ev_r, ev_s, ev_p}) {
    add_common(s, ev_common);
    s->add_option("-o,--out", ev_out, "line-delimited records");
  }
  for (auto* s : {ev_t, ev_p}) s->add_option("--pool", ev_pool, "method:role[:checkpoint], repeatable")->required();
  ev_p->add_option("--radii", ev_radii, "visibility radii")->delimiter(',');
  ev_r->add_option("--iw", ev_iw, "inverse network checkpoint")->required();
  ev_r->add_option("--pairs", ev_pairs, "pair dataset checkpoint")->required();
  ev_s->add_option("--mappo", ev_mappo, "scale=checkpoint, repeatable")->required();
  ev_s->add_option("--inverse", ev_inverse, "scale=checkpoint, repeatable");

  // play
  Common pl_common;
  std::string pl_role = "sheep", pl_log, pl_scenario = "grassland";
  std::vector<std::string> pl_mates, pl_opps;
  unsigned short pl_port = 8080;
  int pl_episodes = 5, pl_steps = 100;
  auto* pl = app.add_subcommand("play", "serve human-play sessions on ws://<host>:<port>/session");
  add_common(pl, pl_common);
  pl->add_option("--scenario", pl_scenario, "scenario to play");
  pl->add_option("--human-role", pl_role, "role seated by the human");
  pl->add_option("--teammates", pl_mates, "teammate system checkpoints");
  pl->add_option("--opponents", pl_opps, "opponent system checkpoints");
  pl->add_option("--port", pl_port, "listen port");
  pl->add_option("--episodes", pl_episodes, "episodes per session");
  pl->add_option("--steps", pl_steps, "steps per episode");
  pl->add_option("--log", pl_log, "session logs, one JSON line per session");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gf) {
      RunConfig rc = gf_common.load();
      ScoreTrainReport rep;
      const ScoreNet net = train_field(parse_field(gf_kind), rc, &rep);
      save_score_net(net, gf_out);
      std::cout << gf_kind << " field: loss " << rep.first_epoch() << " -> " << rep.last_epoch() << ", saved " << gf_out
                << "\n";
    } else if (*tr) {
      RunConfig rc = tr_common.load();
      const std::string variant = canonical_method(tr_variant.empty() ? rc.method : tr_variant);
      rc.train.phase1_steps = rc.train.phase3_steps = rc.train_steps;
      std::cout << echo_config(rc);
      MetricsLog metrics = tr_metrics.empty() ? MetricsLog() : MetricsLog(tr_metrics);
      if (variant == "inverse-att") {
        if (tr_from.empty() || tr_iw.empty()) throw ConfigError("inverse-att training needs --from and --iw");
        AgentSystem sys = compose_system(load_system(tr_from), load_iws(tr_iw));
        TrainResult r = phase3(sys, rc.train, [&](const IterationStats& s) {
          print_iteration(s);
          metrics.write(iteration_record(s, "phase3"));
          if (rc.checkpoint_every > 0 && s.iteration % rc.checkpoint_every == 0) save_system(sys, tr_out);
        });
        save_system(sys, tr_out);
        std::cout << "phase3: " << r.steps << " steps, saved " << tr_out << "\n";
      } else {
        const ScenarioSpec spec = rc.spec();
        const FieldPair fields = load_or_train_fields(tr_gf_entity, tr_gf_boundary, rc);
        if (variant == "self-att" && !tr_pairs_out.empty()) {
          Phase1Result r = phase1(rc.train, spec, fields, [&](const IterationStats& s) {
            print_iteration(s);
            metrics.write(iteration_record(s, "phase1"));
          });
          save_system(r.system, tr_out);
          save_pairs(r.datasets, tr_pairs_out);
          std::cout << "phase1: " << r.train.steps << " steps, " << r.datasets.size() << " pair sets, saved " << tr_out
                    << "\n";
        } else {
          TrainConfig tc = rc.train;
          AgentSystem sys = make_system(variant, spec, fields, tc.share_policy, tc.net(), tc.seed);
          TrainResult r = train_system(sys, tc, rc.train_steps, nullptr, [&](const IterationStats& s) {
            print_iteration(s);
            metrics.write(iteration_record(s, variant));
            if (rc.checkpoint_every > 0 && s.iteration % rc.checkpoint_every == 0) save_system(sys, tr_out);
          });
          save_system(sys, tr_out);
          std::cout << variant << ": " << r.steps << " steps" << (r.converged ? " (converged)" : "") << ", saved "
                    << tr_out << "\n";
        }
      }
    } else if (*iw) {
      RunConfig rc = iw_common.load();
      const AgentSystem src = load_system(iw_from);
      const auto sets = load_pairs(iw_pairs);
      if (sets.size() != src.policies.size()) {
        throw ConfigError("pair file has " + std::to_string(sets.size()) + " datasets, system has " +
                          std::to_string(src.policies.size()) + " policies");
      }
      std::vector<IWNet> nets;
      MetricsLog metrics = iw_metrics.empty() ? MetricsLog() : MetricsLog(iw_metrics);
      for (size_t p = 0; p < sets.size(); ++p) {
        IWReport rep;
        IWTrainConfig cfg = rc.iw;
        cfg.seed += p;
        nets.push_back(phase2(sets[p], src.policies[p], cfg, &rep));
        std::cout << "policy " << p << ": " << sets[p].size() << " pairs, best epoch " << rep.best_epoch << "/"
                  << rep.epochs_run << ", test mse " << rep.test_loss << " (uniform " << rep.uniform_test_loss
                  << "), rank-1 accuracy " << (rep.test_rank_accuracy.empty() ? 0.0 : rep.test_rank_accuracy[0]) << "\n";
        metrics.write({{"type", "iw_report"},
                       {"policy", p},
                       {"pairs", sets[p].size()},
                       {"best_epoch", rep.best_epoch},
                       {"epochs_run", rep.epochs_run},
                       {"best_val_loss", rep.best_val_loss},
                       {"test_loss", rep.test_loss},
                       {"uniform_test_loss", rep.uniform_test_loss},
                       {"rank_accuracy", rep.test_rank_accuracy}});
      }
      save_iws(nets, iw_out);
    } else if (*ev) {
      RunConfig rc = ev_common.load();
      if (*ev_t) {
        const ScenarioSpec spec = rc.spec();
        MatchReport r = run_tournament(parse_pool(ev_pool, spec), spec, rc.eval);
        std::cout << format_report(r);
        auto recs = report_records(r);
        recs.push_back(composition_log(r));
        emit(recs, ev_out);
      } else if (*ev_r) {
        const auto nets = load_iws(ev_iw);
        const auto sets = load_pairs(ev_pairs);
        std::vector<json> recs;
        for (size_t p = 0; p < std::min(nets.size(), sets.size()); ++p) {
          const auto acc = iw_rank_accuracy(nets[p], sets[p]);
          std::cout << "policy " << p << " rank accuracy:";
          for (double a : acc) std::cout << " " << a;
          std::cout << "\n";
          recs.push_back({{"type", "rank_accuracy"}, {"policy", p}, {"accuracy", acc}});
        }
        emit(recs, ev_out);
      } else if (*ev_s) {
        std::map<int, SweepPoolSpec> by_scale;
        auto add = [&](const std::vector<std::string>& list, bool inverse) {
          for (const auto& s : list) {
            const auto eq = s.find('=');
            if (eq == std::string::npos) throw ConfigError("expected scale=checkpoint, got '" + s + "'");
            const int scale = static_cast<int>(detail::parse_long("scale", s.substr(0, eq)));
            auto sys = std::make_shared<const AgentSystem>(load_system(s.substr(eq + 1)));
            (inverse ? by_scale[scale].inverse : by_scale[scale].mappo).push_back(sys);
          }
        };
        add(ev_mappo, false);
        add(ev_inverse, true);
        SweepReport r = multi_inverse_sweep(parse_scenario(rc.scenario), by_scale, rc.eval);
        std::cout << format_sweep(r);
        std::vector<json> recs;
        for (const auto& c : r.cells) {
          recs.push_back({{"type", "sweep_cell"}, {"scale", c.scale}, {"inverse_count", c.inverse_count},
                          {"team_mean", c.team_mean}, {"team_stderr", c.team_stderr}, {"episodes", c.episodes}});
        }
        emit(recs, ev_out);
      } else {
        const ScenarioSpec spec = rc.spec();
        std::vector<std::optional<double>> radii(ev_radii.begin(), ev_radii.end());
        auto rows = partial_obs_eval(parse_pool(ev_pool, spec), spec, radii, rc.eval);
        std::cout << format_partial_obs(rows);
        std::vector<json> recs;
        for (const auto& row : rows) {
          for (auto& rec : report_records(row.report)) recs.push_back(rec);
        }
        emit(recs, ev_out);
      }
    } else if (*pl) {
      RunConfig rc = pl_common.load();
      set_config_value(rc, "scenario", pl_scenario);
      PlayConfig base;
      base.spec = rc.spec();
      base.human_role = parse_role(pl_role);
      base.episodes = pl_episodes;
      base.steps = pl_steps;
      base.seed = rc.seed;
      for (const auto& p : pl_mates) base.teammates.push_back(std::make_shared<const AgentSystem>(load_system(p)));
      for (const auto& p : pl_opps) base.opponents.push_back(std::make_shared<const AgentSystem>(load_system(p)));
      PlaySession probe(base);  // fail fast on a bad role or checkpoint
      PlayServer server(
          [base](std::optional<Role> role, int conn) {
            if (role && *role != base.human_role) {
              throw ConfigError("this server seats the " + std::string(role_name(base.human_role)) + " role");
            }
            PlayConfig c = base;
            c.seed += static_cast<std::uint64_t>(conn);
            return std::make_unique<PlaySession>(c);
          },
          ServerOptions{"0.0.0.0", pl_port, std::chrono::milliseconds(1000 / kTickHz)});
      std::optional<MetricsLog> log;
      if (!pl_log.empty()) log.emplace(pl_log);
      server.on_log([&](const SessionLog& l) {
        const json j = to_json(l);
        std::cout << "session finished: " << j["method_rewards"].dump() << "\n";
        if (log) log->write(j);
      });
      std::cout << "listening on ws://0.0.0.0:" << server.port() << "/session" << std::endl;
      server.run();
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
