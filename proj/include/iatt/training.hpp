#pragma once

// PPO training (MAPPO/IPPO critics) over vectorized worlds and the
// three-phase pipeline: Self-Att training with attention/observation pair
// logging, offline IW regression, and Inverse-Att fine-tuning.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "iatt/agents.hpp"
#include "iatt/ranking.hpp"

namespace iatt {

struct TrainConfig {
  double lr = 7e-4;
  double critic_lr = 7e-4;
  double gain = 0.01;
  int ppo_epochs = 10;
  bool share_policy = false;
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double clip_eps = 0.2;
  double entropy_coef = 0.01;
  double max_grad_norm = 10.0;
  double adam_eps = 1e-5;
  bool value_norm = true;
  int n_envs = 8;
  int rollout_length = 200;
  int minibatches = 2;
  long phase1_steps = 300000;  // world transitions summed over envs
  long phase3_steps = 300000;
  int convergence_window = 10;
  double convergence_threshold = 0.01;
  bool stop_on_convergence = false;
  int hidden = 64;
  std::uint64_t seed = 0;

  NetConfig net() const {
    NetConfig n;
    n.hidden = hidden;
    n.out_gain = gain;
    return n;
  }

  void validate() const {
    if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("train: gamma must be in (0, 1]");
    if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0)) throw ConfigError("train: gae_lambda must be in [0, 1]");
    if (!(clip_eps > 0.0)) throw ConfigError("train: clip_eps must be > 0");
    if (!(lr > 0.0) || !(critic_lr > 0.0)) throw ConfigError("train: learning rates must be > 0");
    if (ppo_epochs < 1 || n_envs < 1 || rollout_length < 1 || minibatches < 1) {
      throw ConfigError("train: ppo_epochs, n_envs, rollout_length and minibatches must be >= 1");
    }
    if (phase1_steps <= 0 || phase3_steps <= 0) throw ConfigError("train: step budgets must be > 0");
    if (convergence_window < 1) throw ConfigError("train: convergence_window must be >= 1");
    if (hidden < 1) throw ConfigError("train: hidden must be >= 1");
  }
};

// --- advantages ----------------------------------------------------------------

struct GaeResult {
  std::vector<double> advantages;
  std::vector<double> returns;
};

// values has one more entry than rewards: the value of the state after the
// last step. dones[t] masks the bootstrap from step t.
inline GaeResult gae(const std::vector<double>& rewards, const std::vector<double>& values,
                     const std::vector<bool>& dones, double gamma, double lambda) {
  const size_t n = rewards.size();
  require(values.size() == n + 1 && dones.size() == n, "gae: misaligned sequences");
  GaeResult r;
  r.advantages.assign(n, 0.0);
  r.returns.assign(n, 0.0);
  double next = 0.0;
  for (size_t i = n; i-- > 0;) {
    const double mask = dones[i] ? 0.0 : 1.0;
    const double delta = rewards[i] + gamma * values[i + 1] * mask - values[i];
    next = delta + gamma * lambda * mask * next;
    r.advantages[i] = next;
    r.returns[i] = next + values[i];
  }
  return r;
}

// Running mean/variance of value targets kept inside the critic store as a
// non-trainable "vn" row (mean, variance, count).
struct ValueNorm {
  static void ensure(ParamStore& critic) {
    if (!critic.contains("vn")) {
      Matrix init(1, 3);
      init << 0.0, 1.0, 0.0;
      critic.add("vn", init, false);
    }
    critic.at("vn").trainable = false;
  }

  static void update(ParamStore& critic, const std::vector<double>& xs) {
    if (xs.empty()) return;
    Matrix& s = critic.at("vn").value;
    const double n = static_cast<double>(xs.size());
    const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
    double m2 = 0.0;
    for (double x : xs) m2 += (x - mean) * (x - mean);
    const double count = s(0, 2);
    const double total = count + n;
    const double delta = mean - s(0, 0);
    const double old_m2 = s(0, 1) * count;
    s(0, 0) += delta * n / total;
    s(0, 1) = (old_m2 + m2 + delta * delta * count * n / total) / total;
    s(0, 2) = total;
  }

  static double mean(const ParamStore& c) { return c.at("vn").value(0, 0); }
  static double stddev(const ParamStore& c) { return std::sqrt(std::max(c.at("vn").value(0, 1), 1e-8)); }
  static double normalize(const ParamStore& c, double x) { return (x - mean(c)) / stddev(c); }
  static double denormalize(const ParamStore& c, double y) { return y * stddev(c) + mean(c); }
};

// --- pair dataset --------------------------------------------------------------

struct Pair {
  long seq = 0;              // collection order
  AttentionWeights w;        // logged self-attention
  AgentFeatures features;    // features.action = the clamped action taken
  RawObservation obs;        // raw observation, teammate snapshots dropped
};

// Bounded ring of the newest pairs plus the total ever collected.
class PairDataset {
 public:
  explicit PairDataset(size_t capacity = std::numeric_limits<size_t>::max()) : capacity_(capacity) {}

  void push(Pair p) {
    p.seq = total_++;
    if (capacity_ == 0) return;
    if (entries_.size() == capacity_) entries_.pop_front();
    entries_.push_back(std::move(p));
  }

  // Used when restoring a dataset whose sequence numbers are already set.
  void restore(Pair p) {
    require(entries_.empty() || p.seq > entries_.back().seq, "PairDataset: entries must be in collection order");
    total_ = std::max(total_, p.seq + 1);
    entries_.push_back(std::move(p));
  }

  long total() const { return total_; }
  void set_total(long t) { total_ = t; }
  size_t size() const { return entries_.size(); }
  size_t capacity() const { return capacity_; }
  const std::deque<Pair>& entries() const { return entries_; }
  const Pair& operator[](size_t i) const { return entries_[i]; }

 private:
  size_t capacity_;
  long total_ = 0;
  std::deque<Pair> entries_;
};

// Keeps the newest floor(total/10) pairs in collection order.
inline PairDataset trim_dataset(const PairDataset& d) {
  const size_t keep = static_cast<size_t>(d.total() / 10);
  require(keep <= d.size(), "trim_dataset: ring capacity smaller than the retained fraction");
  PairDataset out;
  for (size_t i = d.size() - keep; i < d.size(); ++i) out.restore(d[i]);
  out.set_total(static_cast<long>(keep) == 0 ? 0 : out.entries().back().seq + 1);
  return out;
}

// --- rollouts ------------------------------------------------------------------

struct StepRecord {
  AgentInput input;
  Matrix critic_input;
  Vec2 action;
  Vec2 raw;
  double log_prob = 0.0;
  double reward = 0.0;
  double score = 0.0;  // scoring-mode reward
  bool done = false;
  AttentionWeights w;
  AttentionWeights w_self;
  double value = 0.0;
  double advantage = 0.0;
  double ret = 0.0;
};

struct RolloutBuffer {
  int worlds = 0;
  int movers = 0;
  int steps = 0;
  std::vector<StepRecord> records;              // ((world * movers) + mover) * steps + t
  std::vector<Matrix> bootstrap_input;          // per (world, mover): critic input after the last step
  std::vector<bool> bootstrap_done;
  std::vector<std::vector<double>> episode_scores;  // finished episodes: per-mover scoring totals
  int episodes_started = 0;

  StepRecord& at(int w, int m, int t) { return records[static_cast<size_t>((w * movers + m) * steps + t)]; }
  const StepRecord& at(int w, int m, int t) const {
    return records[static_cast<size_t>((w * movers + m) * steps + t)];
  }
};

inline Matrix critic_input(const PolicyBundle& b, const WorldState& w, int mover_index, const AgentInput& in) {
  if (b.critic_kind == CriticKind::centralized) return central_state(w, mover_index);
  const FeatureBatch fb = stack_features({&in.own});
  return flat_input(fb, b.layout.slot_count());
}

// Per-world running scoring totals carried across rollouts.
struct EnvSet {
  std::vector<WorldState> worlds;
  std::vector<std::vector<double>> running_score;
};

inline EnvSet make_envs(const ScenarioSpec& spec, int n, std::mt19937_64& rng) {
  EnvSet e;
  for (int i = 0; i < n; ++i) {
    e.worlds.push_back(make_world(spec, rng()));
    e.running_score.emplace_back(mover_ids(e.worlds.back()).size(), 0.0);
  }
  return e;
}

// Steps every world `steps` times with the system's stochastic policies.
// Finished episodes restart immediately from a fresh seed. When `pairs` is
// given, each self-attention agent's (w, observation, action) is appended to
// its policy's dataset.
inline RolloutBuffer collect_rollout(EnvSet& envs, const AgentSystem& sys, int steps, std::mt19937_64& rng,
                                     std::vector<PairDataset>* pairs = nullptr) {
  require(!envs.worlds.empty() && steps >= 1, "collect_rollout: need worlds and steps >= 1");
  RolloutBuffer buf;
  buf.worlds = static_cast<int>(envs.worlds.size());
  buf.movers = static_cast<int>(mover_ids(envs.worlds.front()).size());
  buf.steps = steps;
  buf.records.resize(static_cast<size_t>(buf.worlds * buf.movers * steps));
  const std::vector<Controller> ctl = controllers_of(sys);
  const std::vector<std::vector<Controller>> all_ctl(envs.worlds.size(), ctl);
  if (pairs) require(pairs->size() == sys.policies.size(), "collect_rollout: one dataset per policy");

  for (int t = 0; t < steps; ++t) {
    std::vector<const WorldState*> ptrs;
    for (const auto& w : envs.worlds) ptrs.push_back(&w);
    auto decisions = decide(ptrs, all_ctl, rng, true, true);
    for (int wi = 0; wi < buf.worlds; ++wi) {
      WorldState& w = envs.worlds[static_cast<size_t>(wi)];
      if (w.step_index == 0) ++buf.episodes_started;
      const std::vector<int> movers = mover_ids(w);
      for (int m = 0; m < buf.movers; ++m) {
        StepRecord& r = buf.at(wi, m, t);
        Decision& d = decisions[static_cast<size_t>(wi)][static_cast<size_t>(m)];
        const PolicyBundle& b = sys.policy_for(m);
        r.critic_input = critic_input(b, w, m, d.input);
        r.action = d.sample.action;
        r.raw = d.sample.raw;
        r.log_prob = d.sample.log_prob;
        r.w = d.w;
        r.w_self = d.w_self;
        if (pairs && b.variant == Variant::self_att) {
          Pair p;
          p.w = d.w_self;
          p.features = d.input.own;
          p.features.action = d.sample.action;
          p.obs = observe(w, movers[static_cast<size_t>(m)]);
          p.obs.teammates.clear();
          (*pairs)[static_cast<size_t>(sys.policy_of_mover[static_cast<size_t>(m)])].push(std::move(p));
        }
        r.input = std::move(d.input);
      }
      const JointAction a = joint_action(decisions[static_cast<size_t>(wi)]);
      const StepResult res = step(w, a, RewardMode::training);
      const std::vector<double> score = reward(w, RewardMode::scoring);
      auto& running = envs.running_score[static_cast<size_t>(wi)];
      for (int m = 0; m < buf.movers; ++m) {
        StepRecord& r = buf.at(wi, m, t);
        r.reward = res.rewards[static_cast<size_t>(m)];
        r.score = score[static_cast<size_t>(m)];
        r.done = res.done;
        running[static_cast<size_t>(m)] += r.score;
      }
      if (res.done) {
        buf.episode_scores.push_back(running);
        std::fill(running.begin(), running.end(), 0.0);
        w = make_world(sys.spec, rng());
      }
    }
  }
  buf.bootstrap_input.resize(static_cast<size_t>(buf.worlds * buf.movers));
  buf.bootstrap_done.resize(static_cast<size_t>(buf.worlds * buf.movers));
  for (int wi = 0; wi < buf.worlds; ++wi) {
    const WorldState& w = envs.worlds[static_cast<size_t>(wi)];
    const std::vector<int> movers = mover_ids(w);
    for (int m = 0; m < buf.movers; ++m) {
      const size_t k = static_cast<size_t>(wi * buf.movers + m);
      buf.bootstrap_done[k] = buf.at(wi, m, steps - 1).done;
      if (buf.bootstrap_done[k]) continue;
      const PolicyBundle& b = sys.policy_for(m);
      if (b.critic_kind == CriticKind::centralized) {
        buf.bootstrap_input[k] = central_state(w, m);
      } else {
        RawObservation o = observe(w, movers[static_cast<size_t>(m)]);
        AgentInput in = featurize({&o}, sys.fields, b.layout, false).front();
        buf.bootstrap_input[k] = critic_input(b, w, m, in);
      }
    }
  }
  return buf;
}

// --- PPO -------------------------------------------------------------------------

struct PPOStats {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double approx_kl = 0.0;
  double clip_fraction = 0.0;
  double grad_norm = 0.0;
  int updates = 0;
};

inline Matrix stack_rows(const std::vector<const Matrix*>& rows) {
  require(!rows.empty(), "stack_rows: empty");
  Matrix out(static_cast<Eigen::Index>(rows.size()), rows.front()->cols());
  for (size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = rows[i]->row(0);
  return out;
}

inline std::vector<double> critic_values(const PolicyBundle& b, const std::vector<const Matrix*>& inputs) {
  std::vector<double> out;
  if (inputs.empty()) return out;
  Graph g(false);
  const Matrix v = g.value(critic_forward(g, b.critic, stack_rows(inputs)));
  out.reserve(inputs.size());
  for (Eigen::Index i = 0; i < v.rows(); ++i) out.push_back(ValueNorm::denormalize(b.critic, v(i, 0)));
  return out;
}

// Clipped-surrogate objective terms per sample: (unclipped, clipped).
struct Surrogate {
  Var ratio;
  Var unclipped;
  Var clipped;
};

inline Surrogate surrogate(Var log_prob, const Matrix& old_log_prob, const Matrix& adv, double clip_eps) {
  Graph& g = *log_prob.g;
  Var ratio = ops::exp(ops::sub(log_prob, g.constant(old_log_prob)));
  Var a = g.constant(adv);
  return {ratio, ops::mul(ratio, a), ops::mul(ops::clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps), a)};
}

// Fills value/advantage/return for the records of every policy and runs
// the clipped PPO update. Returns one stats entry per policy.
inline std::vector<PPOStats> ppo_update(AgentSystem& sys, RolloutBuffer& buf, const TrainConfig& cfg,
                                        std::mt19937_64& rng) {
  std::vector<PPOStats> all(sys.policies.size());
  for (size_t p = 0; p < sys.policies.size(); ++p) {
    PolicyBundle& b = sys.policies[p];
    ValueNorm::ensure(b.critic);
    std::vector<std::pair<int, int>> seqs;  // (world, mover) owned by this policy
    for (int wi = 0; wi < buf.worlds; ++wi) {
      for (int m = 0; m < buf.movers; ++m) {
        if (sys.policy_of_mover[static_cast<size_t>(m)] == static_cast<int>(p)) seqs.emplace_back(wi, m);
      }
    }
    if (seqs.empty()) continue;

    std::vector<StepRecord*> recs;
    std::vector<const Matrix*> vin;
    for (auto [wi, m] : seqs) {
      for (int t = 0; t < buf.steps; ++t) {
        recs.push_back(&buf.at(wi, m, t));
        vin.push_back(&recs.back()->critic_input);
      }
    }
    const std::vector<double> values = critic_values(b, vin);
    for (size_t i = 0; i < recs.size(); ++i) recs[i]->value = values[i];
    std::vector<const Matrix*> boot_in;
    std::vector<size_t> boot_idx;
    for (size_t s = 0; s < seqs.size(); ++s) {
      const size_t k = static_cast<size_t>(seqs[s].first * buf.movers + seqs[s].second);
      if (!buf.bootstrap_done[k]) {
        boot_in.push_back(&buf.bootstrap_input[k]);
        boot_idx.push_back(s);
      }
    }
    std::vector<double> boot(seqs.size(), 0.0);
    const std::vector<double> bv = critic_values(b, boot_in);
    for (size_t i = 0; i < boot_idx.size(); ++i) boot[boot_idx[i]] = bv[i];

    std::vector<double> returns;
    for (size_t s = 0; s < seqs.size(); ++s) {
      std::vector<double> r, v;
      std::vector<bool> d;
      for (int t = 0; t < buf.steps; ++t) {
        const StepRecord& x = buf.at(seqs[s].first, seqs[s].second, t);
        r.push_back(x.reward);
        v.push_back(x.value);
        d.push_back(x.done);
      }
      v.push_back(boot[s]);
      const GaeResult g = gae(r, v, d, cfg.gamma, cfg.gae_lambda);
      for (int t = 0; t < buf.steps; ++t) {
        StepRecord& x = buf.at(seqs[s].first, seqs[s].second, t);
        x.advantage = g.advantages[static_cast<size_t>(t)];
        x.ret = g.returns[static_cast<size_t>(t)];
        returns.push_back(x.ret);
      }
    }
    if (cfg.value_norm) ValueNorm::update(b.critic, returns);

    const size_t n = recs.size();
    double amean = 0.0;
    for (auto* r : recs) amean += r->advantage;
    amean /= static_cast<double>(n);
    double avar = 0.0;
    for (auto* r : recs) avar += (r->advantage - amean) * (r->advantage - amean);
    const double astd = std::sqrt(avar / static_cast<double>(n));
    std::vector<double> adv(n);
    for (size_t i = 0; i < n; ++i) adv[i] = (recs[i]->advantage - amean) / (astd + 1e-8);

    const AdamConfig actor_opt{cfg.lr, 0.9, 0.999, cfg.adam_eps};
    const AdamConfig critic_opt{cfg.critic_lr, 0.9, 0.999, cfg.adam_eps};
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    const size_t mb = (n + static_cast<size_t>(cfg.minibatches) - 1) / static_cast<size_t>(cfg.minibatches);
    PPOStats& st = all[p];
    for (int epoch = 0; epoch < cfg.ppo_epochs; ++epoch) {
      std::shuffle(order.begin(), order.end(), rng);
      for (size_t start = 0; start < n; start += mb) {
        const size_t len = std::min(mb, n - start);
        std::vector<const AgentInput*> inputs;
        std::vector<const Matrix*> cin;
        Matrix raw(static_cast<Eigen::Index>(len), 2), old_lp(static_cast<Eigen::Index>(len), 1),
            a(static_cast<Eigen::Index>(len), 1), target(static_cast<Eigen::Index>(len), 1);
        for (size_t i = 0; i < len; ++i) {
          const size_t k = order[start + i];
          const StepRecord& r = *recs[k];
          const auto row = static_cast<Eigen::Index>(i);
          inputs.push_back(&r.input);
          cin.push_back(&r.critic_input);
          raw(row, 0) = r.raw.x;
          raw(row, 1) = r.raw.y;
          old_lp(row, 0) = r.log_prob;
          a(row, 0) = adv[k];
          target(row, 0) = cfg.value_norm ? ValueNorm::normalize(b.critic, r.ret) : r.ret;
        }
        const AgentBatch batch = make_batch(b, inputs);

        b.actor.zero_grad();
        Graph g;
        PolicyOutput out = policy_forward(g, b.actor, b, batch);
        Var lp = gaussian_log_prob(out.mean, out.log_std, raw);
        Surrogate s = surrogate(lp, old_lp, a, cfg.clip_eps);
        Var ent = gaussian_entropy(out.log_std);
        Var pg = ops::scale(ops::mean(ops::minimum(s.unclipped, s.clipped)), -1.0);
        Var loss = ops::sub(pg, ops::scale(ent, cfg.entropy_coef));
        const double lv = g.value(loss)(0, 0);

        b.critic.zero_grad();
        Graph gc;
        Var vpred = critic_forward(gc, b.critic, stack_rows(cin));
        Var vloss = ops::mean(ops::square(ops::sub(vpred, gc.constant(target))));
        const double vl = gc.value(vloss)(0, 0);
        if (!std::isfinite(lv) || !std::isfinite(vl)) {
          std::ostringstream msg;
          msg << "PPO diverged for policy " << p << " (" << variant_name(b.variant) << "): policy loss " << lv
              << ", value loss " << vl << " at epoch " << epoch << ", minibatch offset " << start;
          throw TrainingError(msg.str());
        }
        g.backward(loss);
        st.grad_norm += b.actor.clip_grad_norm(cfg.max_grad_norm);
        adam_step(b.actor, actor_opt);
        gc.backward(vloss);
        b.critic.clip_grad_norm(cfg.max_grad_norm);
        adam_step(b.critic, critic_opt);

        const Matrix& ratio = g.value(s.ratio);
        const Matrix& new_lp = g.value(lp);
        double kl = 0.0, clipped = 0.0;
        for (Eigen::Index i = 0; i < ratio.rows(); ++i) {
          kl += old_lp(i, 0) - new_lp(i, 0);
          clipped += std::abs(ratio(i, 0) - 1.0) > cfg.clip_eps ? 1.0 : 0.0;
        }
        st.policy_loss += g.value(pg)(0, 0);
        st.value_loss += vl;
        st.entropy += g.value(ent)(0, 0);
        st.approx_kl += kl / static_cast<double>(len);
        st.clip_fraction += clipped / static_cast<double>(len);
        ++st.updates;
      }
    }
    if (st.updates > 0) {
      const double u = st.updates;
      st.policy_loss /= u;
      st.value_loss /= u;
      st.entropy /= u;
      st.approx_kl /= u;
      st.clip_fraction /= u;
      st.grad_norm /= u;
    }
  }
  return all;
}

// --- convergence and the training loop ---------------------------------------------

// True when the mean of the last `window` entries improves on the previous
// window by less than threshold * |previous mean|, or the budget is spent.
inline bool convergence_check(const std::vector<double>& history, int window, double threshold,
                              long steps_done = 0, long budget = std::numeric_limits<long>::max()) {
  require(window >= 1, "convergence_check: window must be >= 1");
  if (steps_done >= budget) return true;
  const size_t w = static_cast<size_t>(window);
  if (history.size() < 2 * w) return false;
  const auto last = history.end();
  const double recent = std::accumulate(last - static_cast<long>(w), last, 0.0) / static_cast<double>(w);
  const double prev =
      std::accumulate(last - static_cast<long>(2 * w), last - static_cast<long>(w), 0.0) / static_cast<double>(w);
  return recent - prev < threshold * std::max(std::abs(prev), 1e-8);
}

struct IterationStats {
  int iteration = 0;
  long steps = 0;
  int episodes = 0;
  std::map<std::string, double> role_score;  // mean per-agent scoring-mode episode reward
  std::vector<PPOStats> ppo;
  double seconds = 0.0;
};

using IterationHook = std::function<void(const IterationStats&)>;

struct TrainResult {
  long steps = 0;
  int iterations = 0;
  bool converged = false;
  bool no_improvement = false;  // budget ran out and no role improved
  std::vector<IterationStats> history;
};

inline std::map<std::string, double> role_scores(const AgentSystem& sys, const RolloutBuffer& buf) {
  std::map<std::string, std::pair<double, int>> acc;
  const WorldState w = make_world(sys.spec, 0);
  const std::vector<int> movers = mover_ids(w);
  for (const auto& ep : buf.episode_scores) {
    for (size_t m = 0; m < ep.size(); ++m) {
      auto& a = acc[std::string(role_name(w.entity(movers[m]).role))];
      a.first += ep[m];
      a.second += 1;
    }
  }
  std::map<std::string, double> out;
  for (auto& [k, v] : acc) out[k] = v.first / v.second;
  return out;
}

// Alternates rollouts and PPO updates until `budget` world transitions
// have been collected (or convergence, if enabled).
inline TrainResult train_system(AgentSystem& sys, const TrainConfig& cfg, long budget,
                                std::vector<PairDataset>* pairs = nullptr, const IterationHook& hook = {}) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  EnvSet envs = make_envs(sys.spec, cfg.n_envs, rng);
  TrainResult res;
  std::map<std::string, std::vector<double>> series;
  while (res.steps < budget) {
    const auto t0 = std::chrono::steady_clock::now();
    const long remaining = budget - res.steps;
    const int len = static_cast<int>(
        std::min<long>(cfg.rollout_length, (remaining + cfg.n_envs - 1) / cfg.n_envs));
    RolloutBuffer buf = collect_rollout(envs, sys, len, rng, pairs);
    IterationStats st;
    st.ppo = ppo_update(sys, buf, cfg, rng);
    res.steps += static_cast<long>(len) * cfg.n_envs;
    st.iteration = ++res.iterations;
    st.steps = res.steps;
    st.episodes = static_cast<int>(buf.episode_scores.size());
    st.role_score = role_scores(sys, buf);
    for (auto& [role, v] : st.role_score) series[role].push_back(v);
    st.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (hook) hook(st);
    res.history.push_back(std::move(st));
    if (cfg.stop_on_convergence && !series.empty()) {
      bool all = true;
      for (auto& [role, v] : series) {
        all = all && convergence_check(v, cfg.convergence_window, cfg.convergence_threshold);
      }
      if (all) {
        res.converged = true;
        break;
      }
    }
  }
  if (!res.converged) {
    bool improved = false;
    const size_t w = static_cast<size_t>(cfg.convergence_window);
    for (auto& [role, v] : series) {
      if (v.size() < 2 * w) continue;
      const double first = std::accumulate(v.begin(), v.begin() + static_cast<long>(w), 0.0);
      const double last = std::accumulate(v.end() - static_cast<long>(w), v.end(), 0.0);
      improved = improved || last > first;
    }
    res.no_improvement = !improved && !series.empty();
  }
  return res;
}

// --- phases --------------------------------------------------------------------

struct Phase1Result {
  AgentSystem system;
  std::vector<PairDataset> datasets;  // trimmed, one per policy
  TrainResult train;
};

inline Phase1Result phase1(const TrainConfig& cfg, const ScenarioSpec& spec, const FieldPair& fields,
                           const IterationHook& hook = {}) {
  cfg.validate();
  Phase1Result r;
  r.system = make_system("self-att", spec, fields, cfg.share_policy, cfg.net(), cfg.seed);
  const long rounded = ((cfg.phase1_steps + cfg.n_envs - 1) / cfg.n_envs) * cfg.n_envs;
  for (size_t p = 0; p < r.system.policies.size(); ++p) {
    long agents = 0;
    for (int owner : r.system.policy_of_mover) agents += owner == static_cast<int>(p);
    r.datasets.emplace_back(static_cast<size_t>(rounded * agents / 10 + 1));
  }
  r.train = train_system(r.system, cfg, cfg.phase1_steps, &r.datasets, hook);
  for (auto& d : r.datasets) d = trim_dataset(d);
  return r;
}

struct IWTrainConfig {
  double lr = 1e-3;
  int batch_size = 64;
  int patience = 100;
  int max_epochs = 3000;
  std::uint64_t seed = 0;
};

struct SplitSizes {
  size_t train = 0;
  size_t val = 0;
  size_t test = 0;
};

inline SplitSizes split_sizes(size_t n) {
  SplitSizes s;
  s.train = n * 7 / 10;
  s.val = n / 10;
  s.test = n - s.train - s.val;
  return s;
}

struct IWReport {
  SplitSizes split;
  int epochs_run = 0;
  int best_epoch = -1;
  double best_val_loss = 0.0;
  double final_val_loss = 0.0;
  double test_loss = 0.0;
  double uniform_test_loss = 0.0;
  std::vector<double> test_rank_accuracy;
  std::vector<double> val_history;
};

inline FeatureBatch pair_batch(const PairDataset& d, const std::vector<size_t>& idx, size_t begin, size_t end,
                               Matrix* targets) {
  std::vector<const AgentFeatures*> feats;
  int rows = 0;
  for (size_t i = begin; i < end; ++i) {
    feats.push_back(&d[idx[i]].features);
    rows += static_cast<int>(d[idx[i]].w.w.size());
  }
  if (targets) {
    *targets = Matrix(rows, 1);
    int r = 0;
    for (size_t i = begin; i < end; ++i) {
      for (double v : d[idx[i]].w.w) (*targets)(r++, 0) = v;
    }
  }
  return stack_features(feats);
}

// Mean iw loss over a subset, evaluated in chunks.
inline double iw_subset_loss(const IWNet& iw, const PairDataset& d, const std::vector<size_t>& idx, size_t begin,
                             size_t end) {
  double total = 0.0;
  const size_t chunk = 1024;
  for (size_t s = begin; s < end; s += chunk) {
    const size_t e = std::min(end, s + chunk);
    Matrix t;
    const FeatureBatch b = pair_batch(d, idx, s, e, &t);
    Graph g(false);
    total += g.value(iw_loss(g, iw.params, iw.net, b, t))(0, 0) * static_cast<double>(e - s);
  }
  return total / static_cast<double>(end - begin);
}

// Offline IW regression on a trimmed dataset: seeded 70/10/20 split, Adam,
// early stopping on validation loss; the best-validation parameters are
// restored.
inline IWNet phase2(const PairDataset& data, const PolicyBundle& source, const IWTrainConfig& cfg,
                    IWReport* report = nullptr) {
  if (data.size() < 10) throw ConfigError("phase2: need at least 10 pairs, got " + std::to_string(data.size()));
  if (cfg.batch_size < 1 || cfg.patience < 1 || cfg.max_epochs < 1 || !(cfg.lr > 0.0)) {
    throw ConfigError("phase2: invalid hyperparameters");
  }
  IWNet iw = make_iw(source, cfg.seed);
  std::mt19937_64 rng(cfg.seed);
  std::vector<size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  IWReport rep;
  rep.split = split_sizes(data.size());
  const size_t tr_end = rep.split.train;
  const size_t va_end = tr_end + rep.split.val;
  std::vector<size_t> train(idx.begin(), idx.begin() + static_cast<long>(tr_end));
  const AdamConfig opt{cfg.lr, 0.9, 0.999, 1e-8};

  ParamStore best = iw.params;
  rep.best_val_loss = iw_subset_loss(iw, data, idx, tr_end, va_end);
  rep.best_epoch = 0;
  int since_best = 0;
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::shuffle(train.begin(), train.end(), rng);
    for (size_t s = 0; s < train.size(); s += static_cast<size_t>(cfg.batch_size)) {
      const size_t e = std::min(train.size(), s + static_cast<size_t>(cfg.batch_size));
      Matrix t;
      const FeatureBatch b = pair_batch(data, train, s, e, &t);
      iw.params.zero_grad();
      Graph g;
      Var loss = iw_loss(g, iw.params, iw.net, b, t);
      if (!std::isfinite(g.value(loss)(0, 0))) {
        throw TrainingError("phase2: non-finite IW loss at epoch " + std::to_string(epoch));
      }
      g.backward(loss);
      adam_step(iw.params, opt);
    }
    const double val = iw_subset_loss(iw, data, idx, tr_end, va_end);
    rep.val_history.push_back(val);
    rep.epochs_run = epoch;
    rep.final_val_loss = val;
    if (val < rep.best_val_loss) {
      rep.best_val_loss = val;
      rep.best_epoch = epoch;
      best = iw.params;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  iw.params = best;

  rep.test_loss = iw_subset_loss(iw, data, idx, va_end, idx.size());
  double uniform = 0.0;
  std::vector<std::vector<double>> pred, truth;
  for (size_t i = va_end; i < idx.size(); ++i) {
    const Pair& p = data[idx[i]];
    const double k = static_cast<double>(p.w.w.size());
    double se = 0.0;
    for (double v : p.w.w) se += (v - 1.0 / k) * (v - 1.0 / k);
    uniform += se / k;
    pred.push_back(iw_forward(iw, p.features));
    truth.push_back(p.w.w);
  }
  rep.uniform_test_loss = uniform / static_cast<double>(idx.size() - va_end);
  rep.test_rank_accuracy = rank_accuracy(pred, truth);
  if (report) *report = std::move(rep);
  return iw;
}

// Inverse-Att system from a trained Self-Att system and one IW per policy.
inline AgentSystem compose_system(const AgentSystem& self_att, const std::vector<IWNet>& iws) {
  require(self_att.method == "self-att", "compose_system: source must be a self-att system");
  require(iws.size() == self_att.policies.size(), "compose_system: one IW per policy required");
  AgentSystem sys = self_att;
  sys.method = "inverse-att";
  for (size_t p = 0; p < sys.policies.size(); ++p) {
    sys.policies[p] = compose_inverse(self_att.policies[p], iws[p]);
  }
  return sys;
}

inline TrainResult phase3(AgentSystem& inverse, const TrainConfig& cfg, const IterationHook& hook = {}) {
  require(inverse.method == "inverse-att", "phase3: system must be inverse-att");
  for (const auto& p : inverse.policies) validate_bundle(p);
  return train_system(inverse, cfg, cfg.phase3_steps, nullptr, hook);
}

}  // namespace iatt
