#pragma once

// Policy networks over GoalSets: the self-attention policy, the inverse
// attention network IW, the weight-update head UW, the composed
// inverse-attention policy, a flat MLP baseline, and the critics.
//
// Everything runs batched. A FeatureBatch stacks the goals of B agents into
// one matrix with segment offsets; per-agent attention is a segment softmax.

#include <algorithm>
#include <cmath>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "iatt/engine.hpp"
#include "iatt/gradfield.hpp"
#include "iatt/tensor.hpp"

namespace iatt {

// Goal row: 4 field components, one-hot over roles plus the boundary, and
// an is-self flag. The self token uses the same width: velocity, position,
// own role one-hot, flag = 1.
inline constexpr int kRoleSlots = kRoleCount + 1;
inline constexpr int kGoalDim = 4 + kRoleSlots + 1;
inline constexpr int kQueryDim = kGoalDim + 2;
inline constexpr double kLog2Pi = 1.8378770664093453;

enum class Variant { mlp_baseline, self_att, inverse_att };
enum class CriticKind { centralized, decentralized };

inline std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::mlp_baseline:
      return "mlp_baseline";
    case Variant::self_att:
      return "self_att";
    case Variant::inverse_att:
      return "inverse_att";
  }
  return "?";
}

inline Variant parse_variant(std::string_view s) {
  for (auto v : {Variant::mlp_baseline, Variant::self_att, Variant::inverse_att}) {
    if (variant_name(v) == s) return v;
  }
  throw ConfigError("unknown variant '" + std::string(s) + "'");
}

inline std::string_view critic_name(CriticKind k) { return k == CriticKind::centralized ? "centralized" : "decentralized"; }

inline CriticKind parse_critic(std::string_view s) {
  if (s == "centralized") return CriticKind::centralized;
  if (s == "decentralized") return CriticKind::decentralized;
  throw ConfigError("unknown critic kind '" + std::string(s) + "'");
}

// --- layout --------------------------------------------------------------

// Static shape of one team (all movers sharing a role) inside a scenario.
// Canonical slots index goals by entity id; the boundary takes the last slot.
struct TeamLayout {
  Role role = Role::agent;
  int entity_count = 0;
  int mover_count = 0;
  std::vector<int> member_ids;  // same-role movers, id order

  int slot_count() const { return entity_count + 1; }
  int wall_slot() const { return entity_count; }
  int teammate_slots() const { return static_cast<int>(member_ids.size()) - 1; }
  int central_dim() const { return 4 * entity_count + mover_count; }
  int flat_dim() const { return kGoalDim * (1 + slot_count()); }

  bool is_member(int id) const { return std::find(member_ids.begin(), member_ids.end(), id) != member_ids.end(); }

  // Index of mate among the members other than self.
  int teammate_slot(int self_id, int mate_id) const {
    require(self_id != mate_id, "teammate_slot: an agent is not its own teammate");
    int slot = 0;
    for (int id : member_ids) {
      if (id == mate_id) return slot;
      if (id != self_id) ++slot;
    }
    throw ContractViolation("teammate_slot: entity " + std::to_string(mate_id) + " is not a " +
                            std::string(role_name(role)));
  }

  bool operator==(const TeamLayout&) const = default;
};

inline TeamLayout make_layout(const ScenarioSpec& spec, Role role) {
  const WorldState w = make_world(spec, 0);
  TeamLayout l;
  l.role = role;
  l.entity_count = static_cast<int>(w.entities.size());
  for (const auto& e : w.entities) {
    if (is_static(e.role)) continue;
    ++l.mover_count;
    if (e.role == role) l.member_ids.push_back(e.id);
  }
  require(!l.member_ids.empty(), "make_layout: no " + std::string(role_name(role)) + " in scenario");
  return l;
}

// Mover roles present in a scenario, in id order of first appearance.
inline std::vector<Role> team_roles(const ScenarioSpec& spec) {
  const WorldState w = make_world(spec, 0);
  std::vector<Role> roles;
  for (const auto& e : w.entities) {
    if (!is_static(e.role) && std::find(roles.begin(), roles.end(), e.role) == roles.end()) roles.push_back(e.role);
  }
  return roles;
}

// --- features ------------------------------------------------------------

struct AgentFeatures {
  int self_id = 0;
  Role role = Role::agent;
  Matrix self_token;       // 1 x kGoalDim
  Matrix goals;            // k x kGoalDim, GoalSet order
  std::vector<int> slots;  // canonical slot per goal
  Vec2 action;             // action paired with this observation (IW query input)
};

// Own features plus, per teammate slot, the teammate's previous-step
// features recomputed in its own frame (empty when not visible).
struct AgentInput {
  AgentFeatures own;
  std::vector<std::optional<AgentFeatures>> teammates;
};

inline Matrix self_token(const RawObservation& o) {
  Matrix t = Matrix::Zero(1, kGoalDim);
  t(0, 0) = o.self_vel.x;
  t(0, 1) = o.self_vel.y;
  t(0, 2) = o.self_pos.x;
  t(0, 3) = o.self_pos.y;
  t(0, 4 + static_cast<int>(o.self_role)) = 1.0;
  t(0, kGoalDim - 1) = 1.0;
  return t;
}

inline AgentFeatures make_features(const RawObservation& o, const GoalSet& gs, const TeamLayout& layout, Vec2 action) {
  AgentFeatures f;
  f.self_id = o.self_id;
  f.role = o.self_role;
  f.self_token = self_token(o);
  f.action = action;
  f.goals = Matrix::Zero(static_cast<Eigen::Index>(gs.size()), kGoalDim);
  f.slots.reserve(gs.size());
  for (size_t i = 0; i < gs.size(); ++i) {
    const Goal& g = gs.goals[i];
    const auto r = static_cast<Eigen::Index>(i);
    for (int c = 0; c < 4; ++c) f.goals(r, c) = g.field[static_cast<size_t>(c)];
    f.goals(r, 4 + (g.wall ? kRoleCount : static_cast<int>(g.role))) = 1.0;
    const int slot = g.wall ? layout.wall_slot() : g.entity_id;
    require(slot >= 0 && slot < layout.slot_count(), "make_features: goal outside the team layout");
    f.slots.push_back(slot);
  }
  return f;
}

// Builds the inputs of many agents with one batched field evaluation.
inline std::vector<AgentInput> featurize(const std::vector<const RawObservation*>& obs, const FieldPair& fields,
                                         const TeamLayout& layout, bool with_teammates) {
  std::vector<const RawObservation*> all(obs.begin(), obs.end());
  if (with_teammates) {
    for (const RawObservation* o : obs) {
      for (const auto& t : o->teammates) {
        require(t.prev_observation != nullptr, "featurize: teammate without previous observation");
        all.push_back(t.prev_observation.get());
      }
    }
  }
  const std::vector<GoalSet> sets = build_goalsets(all, fields);
  std::vector<AgentInput> out(obs.size());
  size_t next = obs.size();
  for (size_t i = 0; i < obs.size(); ++i) {
    const RawObservation& o = *obs[i];
    require(o.self_role == layout.role, "featurize: observation role does not match the team layout");
    out[i].own = make_features(o, sets[i], layout, Vec2{});
    if (!with_teammates) continue;
    out[i].teammates.assign(static_cast<size_t>(layout.teammate_slots()), std::nullopt);
    for (const auto& t : o.teammates) {
      const int slot = layout.teammate_slot(o.self_id, t.id);
      out[i].teammates[static_cast<size_t>(slot)] = make_features(*t.prev_observation, sets[next++], layout, t.prev_action);
    }
  }
  return out;
}

struct FeatureBatch {
  Matrix self_tokens;  // B x kGoalDim
  Matrix queries;      // B x kQueryDim: self token and paired action
  Matrix goals;        // (sum k) x kGoalDim
  Segments seg;
  std::shared_ptr<const std::vector<int>> slots;

  int size() const { return static_cast<int>(self_tokens.rows()); }
};

// nullptr entries become empty groups with zero tokens.
inline FeatureBatch stack_features(const std::vector<const AgentFeatures*>& items) {
  FeatureBatch b;
  const auto n = static_cast<Eigen::Index>(items.size());
  b.self_tokens = Matrix::Zero(n, kGoalDim);
  b.queries = Matrix::Zero(n, kQueryDim);
  std::vector<int> offsets{0};
  for (const AgentFeatures* f : items) offsets.push_back(offsets.back() + (f ? static_cast<int>(f->goals.rows()) : 0));
  b.goals = Matrix(offsets.back(), kGoalDim);
  auto slots = std::make_shared<std::vector<int>>();
  slots->reserve(static_cast<size_t>(offsets.back()));
  for (Eigen::Index i = 0; i < n; ++i) {
    const AgentFeatures* f = items[static_cast<size_t>(i)];
    if (!f) continue;
    require(f->goals.rows() > 0, "stack_features: empty GoalSet");
    b.self_tokens.row(i) = f->self_token;
    b.queries.block(i, 0, 1, kGoalDim) = f->self_token;
    b.queries(i, kGoalDim) = f->action.x;
    b.queries(i, kGoalDim + 1) = f->action.y;
    b.goals.middleRows(offsets[static_cast<size_t>(i)], f->goals.rows()) = f->goals;
    slots->insert(slots->end(), f->slots.begin(), f->slots.end());
  }
  b.seg = make_segments(std::move(offsets));
  b.slots = std::move(slots);
  return b;
}

// Self token followed by every canonical slot's goal row (zeros if unseen).
inline Matrix flat_input(const FeatureBatch& b, int slot_count) {
  Matrix out = Matrix::Zero(b.size(), kGoalDim * (1 + slot_count));
  for (int i = 0; i < b.size(); ++i) {
    out.block(i, 0, 1, kGoalDim) = b.self_tokens.row(i);
    for (int r = (*b.seg)[static_cast<size_t>(i)]; r < (*b.seg)[static_cast<size_t>(i) + 1]; ++r) {
      out.block(i, kGoalDim * (1 + (*b.slots)[static_cast<size_t>(r)]), 1, kGoalDim) = b.goals.row(r);
    }
  }
  return out;
}

// Positions and velocities of every entity plus a one-hot of the learner's
// mover index.
inline Matrix central_state(const WorldState& w, int mover_index) {
  const auto movers = mover_ids(w);
  const int e = static_cast<int>(w.entities.size());
  require(mover_index >= 0 && mover_index < static_cast<int>(movers.size()), "central_state: bad mover index");
  Matrix out = Matrix::Zero(1, 4 * e + static_cast<int>(movers.size()));
  for (int i = 0; i < e; ++i) {
    const auto& ent = w.entities[static_cast<size_t>(i)];
    out(0, 4 * i) = ent.pos.x;
    out(0, 4 * i + 1) = ent.pos.y;
    out(0, 4 * i + 2) = ent.vel.x;
    out(0, 4 * i + 3) = ent.vel.y;
  }
  out(0, 4 * e + mover_index) = 1.0;
  return out;
}

// --- networks --------------------------------------------------------------

struct NetConfig {
  int hidden = 64;
  int key_dim = 64;
  double out_gain = 0.01;
  double init_log_std = -0.5;

  bool operator==(const NetConfig&) const = default;
};

// f: goal embedding, wq/wk: attention projections, v: value embedding,
// h: action head over [weighted goal, V(f(self))].
inline void add_selfatt(ParamStore& s, const NetConfig& c, std::mt19937_64& rng) {
  add_mlp2(s, "f", kGoalDim, c.hidden, c.hidden, kTanhGain, kTanhGain, rng);
  add_dense(s, "wq", c.hidden, c.key_dim, 1.0, rng, false);
  add_dense(s, "wk", c.hidden, c.key_dim, 1.0, rng, false);
  add_mlp2(s, "v", c.hidden, c.hidden, c.hidden, kTanhGain, kTanhGain, rng);
  add_mlp2(s, "h", 2 * c.hidden, c.hidden, 2, kTanhGain, c.out_gain, rng);
  s.add("log_std", Matrix::Constant(1, 2, c.init_log_std));
}

inline void add_mlp_policy(ParamStore& s, const TeamLayout& l, const NetConfig& c, std::mt19937_64& rng) {
  add_mlp2(s, "pi", l.flat_dim(), c.hidden, 2, kTanhGain, c.out_gain, rng);
  s.add("log_std", Matrix::Constant(1, 2, c.init_log_std));
}

// Query MLP over the raw self token and paired action; separate goal
// embedding and key projection.
inline void add_iw(ParamStore& s, const std::string& prefix, const NetConfig& c, std::mt19937_64& rng) {
  add_mlp2(s, prefix + "q", kQueryDim, c.hidden, c.key_dim, kTanhGain, 1.0, rng);
  add_mlp2(s, prefix + "f", kGoalDim, c.hidden, c.hidden, kTanhGain, kTanhGain, rng);
  add_dense(s, prefix + "wk", c.hidden, c.key_dim, 1.0, rng, false);
}

// Single dense layer [own | teammate 1 | ... | teammate S] (each slot_count
// wide) -> slot_count, initialized to [I; 0] with zero bias.
inline void add_uw(ParamStore& s, const TeamLayout& l) {
  const int c = l.slot_count();
  Matrix w = Matrix::Zero(c * (1 + l.teammate_slots()), c);
  w.topRows(c).setIdentity();
  s.add("uw.w", std::move(w));
  s.add("uw.b", Matrix::Zero(1, c));
}

inline void add_critic(ParamStore& s, int in, const NetConfig& c, std::mt19937_64& rng) {
  add_mlp2(s, "c", in, c.hidden, 1, kTanhGain, 1.0, rng);
}

struct AttentionOut {
  Var w;       // column, one row per goal
  Var fgoals;  // f(goal) rows
  Var fself;   // f(self) rows
};

template <typename Store>
AttentionOut selfatt_attention(Graph& g, Store& s, const FeatureBatch& b, const NetConfig& c) {
  Var fgoals = mlp2(g, s, "f", g.constant(b.goals), Activation::tanh, Activation::tanh);
  Var fself = mlp2(g, s, "f", g.constant(b.self_tokens), Activation::tanh, Activation::tanh);
  Var q = dense(g, s, "wq", fself);
  Var k = dense(g, s, "wk", fgoals);
  Var w = ops::segment_softmax(ops::segment_dot(q, k, b.seg, 1.0 / std::sqrt(static_cast<double>(c.key_dim))), b.seg);
  return {w, fgoals, fself};
}

template <typename Store>
Var iw_attention(Graph& g, Store& s, const std::string& prefix, const FeatureBatch& b, const NetConfig& c) {
  Var q = mlp2(g, s, prefix + "q", g.constant(b.queries), Activation::tanh);
  Var fk = mlp2(g, s, prefix + "f", g.constant(b.goals), Activation::tanh, Activation::tanh);
  Var k = dense(g, s, prefix + "wk", fk);
  return ops::segment_softmax(ops::segment_dot(q, k, b.seg, 1.0 / std::sqrt(static_cast<double>(c.key_dim))), b.seg);
}

// w~ = normalize(relu(UW [own | inferred...])) gathered back onto own goals.
template <typename Store>
Var uw_forward(Graph& g, Store& s, const TeamLayout& l, Var own_w, const FeatureBatch& own,
               const std::vector<Var>& inferred_dense) {
  require(static_cast<int>(inferred_dense.size()) == l.teammate_slots(), "uw_forward: teammate slot count mismatch");
  std::vector<Var> parts{ops::scatter_slots(own_w, own.seg, own.slots, l.slot_count())};
  parts.insert(parts.end(), inferred_dense.begin(), inferred_dense.end());
  Var x = parts.size() == 1 ? parts.front() : ops::concat_cols(parts);
  Var y = ops::relu(dense(g, s, "uw", x));
  return ops::segment_normalize(ops::gather_slots(y, own.seg, own.slots), own.seg);
}

// --- bundle --------------------------------------------------------------

struct PolicyBundle {
  Variant variant = Variant::self_att;
  CriticKind critic_kind = CriticKind::centralized;
  TeamLayout layout;
  NetConfig net;
  ParamStore actor;
  ParamStore critic;

  int critic_input_dim() const {
    return critic_kind == CriticKind::centralized ? layout.central_dim() : layout.flat_dim();
  }
  bool uses_teammates() const { return variant == Variant::inverse_att; }
};

inline PolicyBundle make_bundle(Variant variant, CriticKind critic, const TeamLayout& layout, const NetConfig& net,
                                std::uint64_t seed) {
  require(variant != Variant::inverse_att, "make_bundle: compose inverse_att from a self_att bundle and an IW net");
  PolicyBundle b;
  b.variant = variant;
  b.critic_kind = critic;
  b.layout = layout;
  b.net = net;
  std::mt19937_64 rng(seed);
  if (variant == Variant::self_att) {
    add_selfatt(b.actor, net, rng);
  } else {
    add_mlp_policy(b.actor, layout, net, rng);
  }
  add_critic(b.critic, b.critic_input_dim(), net, rng);
  Matrix vn(1, 3);
  vn << 0.0, 1.0, 0.0;  // value-target normalizer: mean, variance, count
  b.critic.add("vn", vn, false);
  return b;
}

// Checks the parameter set matches the variant.
inline void validate_bundle(const PolicyBundle& b) {
  const bool has_iw = b.actor.contains("iw.wk.w");
  const bool has_uw = b.actor.contains("uw.w");
  if (b.variant == Variant::inverse_att) {
    require(has_iw && has_uw, "inverse_att bundle requires both IW and UW");
  } else {
    require(!has_iw && !has_uw, std::string(variant_name(b.variant)) + " bundle must not carry IW/UW");
  }
}

struct IWNet {
  TeamLayout layout;
  NetConfig net;
  ParamStore params;  // names prefixed "iw."
};

// Goal embedding warm-started from the policy's f.
inline IWNet make_iw(const PolicyBundle& source, std::uint64_t seed) {
  require(source.variant == Variant::self_att, "make_iw: source must be a self_att bundle");
  IWNet iw;
  iw.layout = source.layout;
  iw.net = source.net;
  std::mt19937_64 rng(seed);
  add_iw(iw.params, "iw.", source.net, rng);
  for (const char* n : {"f.0.w", "f.0.b", "f.1.w", "f.1.b"}) {
    iw.params.at(std::string("iw.") + n).value = source.actor.at(n).value;
  }
  return iw;
}

// Self-Att bundle + trained IW (frozen) + identity-initialized UW.
inline PolicyBundle compose_inverse(const PolicyBundle& self_att, const IWNet& iw) {
  require(self_att.variant == Variant::self_att, "compose_inverse: source must be a self_att bundle");
  require(iw.layout == self_att.layout, "compose_inverse: IW was trained for a different team layout");
  PolicyBundle b;
  b.variant = Variant::inverse_att;
  b.critic_kind = self_att.critic_kind;
  b.layout = self_att.layout;
  b.net = self_att.net;
  b.actor.absorb(self_att.actor, "", true);
  b.actor.absorb(iw.params, "", false);
  add_uw(b.actor, b.layout);
  b.critic = self_att.critic;
  return b;
}

// --- batched forward ---------------------------------------------------------

struct AgentBatch {
  FeatureBatch own;
  std::vector<FeatureBatch> mates;  // per teammate slot (inverse_att only)
  Matrix flat;                      // mlp_baseline only
};

inline AgentBatch make_batch(const PolicyBundle& bundle, const std::vector<const AgentInput*>& inputs) {
  AgentBatch ab;
  std::vector<const AgentFeatures*> own;
  own.reserve(inputs.size());
  for (const AgentInput* in : inputs) own.push_back(&in->own);
  ab.own = stack_features(own);
  if (bundle.variant == Variant::mlp_baseline) ab.flat = flat_input(ab.own, bundle.layout.slot_count());
  if (bundle.uses_teammates()) {
    const int slots = bundle.layout.teammate_slots();
    for (int s = 0; s < slots; ++s) {
      std::vector<const AgentFeatures*> mates;
      for (const AgentInput* in : inputs) {
        require(static_cast<int>(in->teammates.size()) <= slots, "make_batch: more teammates than slots");
        const auto idx = static_cast<size_t>(s);
        mates.push_back(idx < in->teammates.size() && in->teammates[idx] ? &*in->teammates[idx] : nullptr);
      }
      ab.mates.push_back(stack_features(mates));
    }
  }
  return ab;
}

struct PolicyOutput {
  Var mean;     // B x 2
  Var w;        // weights used for the action (w~ for inverse_att), per goal
  Var w_self;   // own attention before UW
  Var log_std;  // 1 x 2
};

template <typename Store>
PolicyOutput policy_forward(Graph& g, Store& s, const PolicyBundle& meta, const AgentBatch& b) {
  PolicyOutput out;
  out.log_std = g.param(s, "log_std");
  if (meta.variant == Variant::mlp_baseline) {
    out.mean = mlp2(g, s, "pi", g.constant(b.flat), Activation::tanh);
    return out;
  }
  auto att = selfatt_attention(g, s, b.own, meta.net);
  out.w_self = att.w;
  out.w = att.w;
  if (meta.variant == Variant::inverse_att) {
    std::vector<Var> inferred;
    for (const FeatureBatch& m : b.mates) {
      Var iw = iw_attention(g, s, "iw.", m, meta.net);
      inferred.push_back(ops::scatter_slots(iw, m.seg, m.slots, meta.layout.slot_count()));
    }
    out.w = uw_forward(g, s, meta.layout, att.w, b.own, inferred);
  }
  Var vgoals = mlp2(g, s, "v", att.fgoals, Activation::tanh, Activation::tanh);
  Var vself = mlp2(g, s, "v", att.fself, Activation::tanh, Activation::tanh);
  Var weighted = ops::segment_weighted_sum(out.w, vgoals, b.own.seg);
  out.mean = mlp2(g, s, "h", ops::concat_cols({weighted, vself}), Activation::tanh);
  return out;
}

template <typename Store>
Var critic_forward(Graph& g, Store& s, const Matrix& input) {
  return mlp2(g, s, "c", g.constant(input), Activation::tanh);
}

// Diagonal Gaussian log-density of raw (pre-clamp) actions: B x 1.
inline Var gaussian_log_prob(Var mean, Var log_std, const Matrix& raw) {
  Graph& g = *mean.g;
  Var inv_std = ops::exp(ops::scale(log_std, -1.0));
  Var z = ops::mul_row(ops::sub(g.constant(raw), mean), inv_std);
  Var quad = ops::scale(ops::sum_cols(ops::square(z)), -0.5);
  Var norm = ops::add_scalar(ops::scale(ops::sum(log_std), -1.0), -0.5 * 2.0 * kLog2Pi);
  return ops::add_row(quad, norm);
}

// Per-sample entropy of the diagonal Gaussian: 1 x 1.
inline Var gaussian_entropy(Var log_std) {
  return ops::add_scalar(ops::sum(log_std), 0.5 * 2.0 * (1.0 + kLog2Pi));
}

// --- single-agent views ----------------------------------------------------

struct AttentionWeights {
  std::vector<double> w;
  std::vector<int> slots;  // canonical slot per entry
};

inline std::vector<double> column(const Matrix& m, int begin, int end) {
  std::vector<double> v;
  v.reserve(static_cast<size_t>(end - begin));
  for (int r = begin; r < end; ++r) v.push_back(m(r, 0));
  return v;
}

struct SelfAttResult {
  std::vector<double> w;
  Vec2 action_mean;
  std::vector<double> weighted_goal;
};

inline SelfAttResult selfatt_forward(const PolicyBundle& bundle, const AgentFeatures& features) {
  require(bundle.variant != Variant::mlp_baseline, "selfatt_forward: bundle has no attention");
  require(features.goals.rows() > 0, "selfatt_forward: empty GoalSet");
  Graph g(false);
  const FeatureBatch b = stack_features({&features});
  auto att = selfatt_attention(g, bundle.actor, b, bundle.net);
  Var vgoals = mlp2(g, bundle.actor, "v", att.fgoals, Activation::tanh, Activation::tanh);
  Var vself = mlp2(g, bundle.actor, "v", att.fself, Activation::tanh, Activation::tanh);
  Var weighted = ops::segment_weighted_sum(att.w, vgoals, b.seg);
  Var mean = mlp2(g, bundle.actor, "h", ops::concat_cols({weighted, vself}), Activation::tanh);
  SelfAttResult r;
  r.w = column(g.value(att.w), 0, static_cast<int>(features.goals.rows()));
  r.action_mean = {g.value(mean)(0, 0), g.value(mean)(0, 1)};
  const Matrix& wg = g.value(weighted);
  r.weighted_goal.assign(wg.data(), wg.data() + wg.size());
  return r;
}

struct PolicyEval {
  Matrix mean;                          // B x 2
  Vec2 log_std;
  std::vector<AttentionWeights> w;       // weights behind each action (empty for mlp_baseline)
  std::vector<AttentionWeights> w_self;  // own attention before UW
};

inline PolicyEval evaluate(const PolicyBundle& bundle, const std::vector<const AgentInput*>& inputs) {
  PolicyEval ev;
  if (inputs.empty()) return ev;
  Graph g(false);
  const AgentBatch b = make_batch(bundle, inputs);
  const PolicyOutput out = policy_forward(g, bundle.actor, bundle, b);
  ev.mean = g.value(out.mean);
  ev.log_std = {g.value(out.log_std)(0, 0), g.value(out.log_std)(0, 1)};
  if (bundle.variant == Variant::mlp_baseline) return ev;
  const Matrix& w = g.value(out.w);
  const Matrix& ws = g.value(out.w_self);
  for (size_t i = 0; i < inputs.size(); ++i) {
    const int lo = (*b.own.seg)[i], hi = (*b.own.seg)[i + 1];
    const std::vector<int> slots(b.own.slots->begin() + lo, b.own.slots->begin() + hi);
    ev.w.push_back({column(w, lo, hi), slots});
    ev.w_self.push_back({column(ws, lo, hi), slots});
  }
  return ev;
}

struct ActionSample {
  Vec2 action;  // clamped to [-1, 1]
  Vec2 raw;     // pre-clamp sample
  double log_prob = 0.0;
};

// Samples N(mean, exp(log_std)^2) per component; log-prob of the raw sample.
inline ActionSample sample_action(Vec2 mean, Vec2 log_std, std::mt19937_64& rng, bool stochastic) {
  ActionSample a;
  a.raw = mean;
  if (stochastic) {
    std::normal_distribution<double> normal(0.0, 1.0);
    a.raw.x = mean.x + std::exp(log_std.x) * normal(rng);
    a.raw.y = mean.y + std::exp(log_std.y) * normal(rng);
  }
  a.action = {std::clamp(a.raw.x, -1.0, 1.0), std::clamp(a.raw.y, -1.0, 1.0)};
  const double zx = (a.raw.x - mean.x) * std::exp(-log_std.x);
  const double zy = (a.raw.y - mean.y) * std::exp(-log_std.y);
  a.log_prob = -0.5 * (zx * zx + zy * zy) - log_std.x - log_std.y - kLog2Pi;
  return a;
}

inline ActionSample act(const PolicyBundle& bundle, const AgentInput& input, std::mt19937_64& rng, bool stochastic) {
  const PolicyEval ev = evaluate(bundle, {&input});
  return sample_action({ev.mean(0, 0), ev.mean(0, 1)}, ev.log_std, rng, stochastic);
}

// Inferred attention of a same-role agent over its own GoalSet.
template <typename Store>
std::vector<double> iw_forward(const Store& params, const TeamLayout& layout, const NetConfig& net,
                               const AgentFeatures& other) {
  require(other.role == layout.role, "iw_forward: inference is limited to agents of the same type");
  require(other.goals.rows() > 0, "iw_forward: empty GoalSet");
  Graph g(false);
  const FeatureBatch b = stack_features({&other});
  Var w = iw_attention(g, params, "iw.", b, net);
  return column(g.value(w), 0, static_cast<int>(other.goals.rows()));
}

inline std::vector<double> iw_forward(const IWNet& iw, const AgentFeatures& other) {
  return iw_forward(iw.params, iw.layout, iw.net, other);
}

// Mean over samples of the per-goal mean squared error.
inline Var weights_mse(Var pred, const Matrix& target, const Segments& seg) {
  Graph& g = *pred.g;
  const int groups = segment_count(seg);
  require(groups > 0, "weights_mse: empty batch");
  require(target.rows() == g.value(pred).rows() && target.cols() == 1, "weights_mse: shape mismatch");
  Matrix scale(target.rows(), 1);
  for (int b = 0; b < groups; ++b) {
    const int lo = (*seg)[static_cast<size_t>(b)], hi = (*seg)[static_cast<size_t>(b) + 1];
    require(hi > lo, "weights_mse: empty GoalSet");
    for (int r = lo; r < hi; ++r) scale(r, 0) = 1.0 / ((hi - lo) * static_cast<double>(groups));
  }
  Var d = ops::square(ops::sub(pred, g.constant(target)));
  return ops::sum(ops::mul(d, g.constant(std::move(scale))));
}

// targets: stacked true weights aligned with batch.goals.
template <typename Store>
Var iw_loss(Graph& g, Store& params, const NetConfig& net, const FeatureBatch& batch, const Matrix& targets) {
  return weights_mse(iw_attention(g, params, "iw.", batch, net), targets, batch.seg);
}

// Weight update for one agent. Inferred weights carry canonical slots over
// the teammate's own goals; missing teammates are zero-filled.
inline std::vector<double> uw_update(const PolicyBundle& bundle, const AttentionWeights& own,
                                     const std::vector<std::optional<AttentionWeights>>& inferred) {
  require(bundle.variant == Variant::inverse_att, "uw_update: bundle has no UW head");
  require(static_cast<int>(inferred.size()) <= bundle.layout.teammate_slots(),
          "uw_update: more inferred weight vectors than teammate slots");
  require(!own.w.empty() && own.w.size() == own.slots.size(), "uw_update: malformed own weights");
  const int c = bundle.layout.slot_count();
  Graph g(false);
  Matrix ow(static_cast<Eigen::Index>(own.w.size()), 1);
  for (size_t i = 0; i < own.w.size(); ++i) ow(static_cast<Eigen::Index>(i), 0) = own.w[i];
  FeatureBatch ob;
  ob.seg = make_segments({0, static_cast<int>(own.w.size())});
  ob.slots = std::make_shared<const std::vector<int>>(own.slots);
  std::vector<Var> dense_inferred;
  for (int s = 0; s < bundle.layout.teammate_slots(); ++s) {
    Matrix row = Matrix::Zero(1, c);
    if (s < static_cast<int>(inferred.size()) && inferred[static_cast<size_t>(s)]) {
      const auto& a = *inferred[static_cast<size_t>(s)];
      require(a.w.size() == a.slots.size(), "uw_update: malformed inferred weights");
      for (size_t i = 0; i < a.w.size(); ++i) row(0, a.slots[i]) = a.w[i];
    }
    dense_inferred.push_back(g.constant(std::move(row)));
  }
  Var out = uw_forward(g, bundle.actor, bundle.layout, g.constant(std::move(ow)), ob, dense_inferred);
  return column(g.value(out), 0, static_cast<int>(own.w.size()));
}

struct InverseResult {
  std::vector<double> w_tilde;
  Vec2 action_mean;
};

inline InverseResult inverse_forward(const PolicyBundle& bundle, const AgentInput& input) {
  require(bundle.variant == Variant::inverse_att, "inverse_forward: bundle variant is not inverse_att");
  validate_bundle(bundle);
  const PolicyEval ev = evaluate(bundle, {&input});
  return {ev.w.front().w, {ev.mean(0, 0), ev.mean(0, 1)}};
}

// --- systems and joint decisions ----------------------------------------------

// Method tags: "mappo" (MLP actor, centralized critic), "ippo" (MLP actor,
// decentralized critic), "self-att", "inverse-att". "mapo" is accepted as an
// alias of "mappo".
inline std::string canonical_method(std::string_view m) {
  if (m == "mappo" || m == "mapo") return "mappo";
  if (m == "ippo" || m == "self-att" || m == "inverse-att" || m == "random") return std::string(m);
  throw ConfigError("unknown method '" + std::string(m) + "'");
}

// Every mover's policy for one scenario. With share_policy, movers of one
// role share a bundle; otherwise each mover owns one.
struct AgentSystem {
  std::string method;
  ScenarioSpec spec;
  FieldPair fields;
  bool share_policy = false;
  std::vector<PolicyBundle> policies;
  std::vector<int> policy_of_mover;  // mover index -> policies index

  const PolicyBundle& policy_for(int mover_index) const {
    require(mover_index >= 0 && mover_index < static_cast<int>(policy_of_mover.size()), "policy_for: bad mover");
    return policies[static_cast<size_t>(policy_of_mover[static_cast<size_t>(mover_index)])];
  }
};

inline AgentSystem make_system(std::string_view method, const ScenarioSpec& spec, const FieldPair& fields,
                               bool share_policy, const NetConfig& net, std::uint64_t seed) {
  const std::string m = canonical_method(method);
  require(m != "inverse-att" && m != "random", "make_system: " + m + " systems are composed, not initialized");
  const Variant variant = m == "self-att" ? Variant::self_att : Variant::mlp_baseline;
  const CriticKind critic = m == "ippo" ? CriticKind::decentralized : CriticKind::centralized;
  AgentSystem sys;
  sys.method = m;
  sys.spec = spec;
  sys.fields = fields;
  sys.share_policy = share_policy;
  const WorldState w = make_world(spec, 0);
  const std::vector<int> movers = mover_ids(w);
  std::vector<std::pair<Role, int>> owner;  // (role, bundle index) for shared policies
  std::mt19937_64 seeds(seed);
  for (int id : movers) {
    const Role role = w.entity(id).role;
    int index = -1;
    if (share_policy) {
      for (auto [r, i] : owner) {
        if (r == role) index = i;
      }
    }
    if (index < 0) {
      index = static_cast<int>(sys.policies.size());
      sys.policies.push_back(make_bundle(variant, critic, make_layout(spec, role), net, seeds()));
      owner.emplace_back(role, index);
    }
    sys.policy_of_mover.push_back(index);
  }
  return sys;
}

// Who acts for a mover: a bundle evaluated with its system's fields, or
// uniform random actions when bundle is null.
struct Controller {
  const PolicyBundle* bundle = nullptr;
  const FieldPair* fields = nullptr;
};

inline std::vector<Controller> controllers_of(const AgentSystem& sys) {
  std::vector<Controller> c;
  for (size_t m = 0; m < sys.policy_of_mover.size(); ++m) c.push_back({&sys.policy_for(static_cast<int>(m)), &sys.fields});
  return c;
}

struct Decision {
  ActionSample sample;
  AgentInput input;            // kept only when requested
  AttentionWeights w;          // weights behind the action
  AttentionWeights w_self;     // own attention before UW
};

// One joint decision per world. Agents sharing a bundle are evaluated in one
// batch across all worlds; noise is drawn in (world, mover) order so results
// do not depend on the grouping.
inline std::vector<std::vector<Decision>> decide(const std::vector<const WorldState*>& worlds,
                                                 const std::vector<std::vector<Controller>>& controllers,
                                                 std::mt19937_64& rng, bool stochastic, bool keep_inputs) {
  require(worlds.size() == controllers.size(), "decide: one controller list per world");
  std::vector<std::vector<Decision>> out(worlds.size());
  std::vector<std::vector<Vec2>> means(worlds.size());
  std::vector<std::vector<Vec2>> log_stds(worlds.size());
  struct Group {
    Controller ctl;
    std::vector<std::pair<size_t, size_t>> members;  // (world, mover index)
  };
  std::vector<Group> groups;
  for (size_t wi = 0; wi < worlds.size(); ++wi) {
    const size_t n = mover_ids(*worlds[wi]).size();
    require(controllers[wi].size() == n, "decide: one controller per mover required");
    out[wi].resize(n);
    means[wi].resize(n);
    log_stds[wi].resize(n);
    for (size_t m = 0; m < n; ++m) {
      const Controller& c = controllers[wi][m];
      if (!c.bundle) continue;
      auto it = std::find_if(groups.begin(), groups.end(),
                             [&](const Group& g) { return g.ctl.bundle == c.bundle && g.ctl.fields == c.fields; });
      if (it == groups.end()) {
        groups.push_back({c, {}});
        it = groups.end() - 1;
      }
      it->members.emplace_back(wi, m);
    }
  }
  for (const Group& grp : groups) {
    const PolicyBundle& b = *grp.ctl.bundle;
    require(grp.ctl.fields != nullptr, "decide: controller without gradient fields");
    std::vector<RawObservation> obs;
    obs.reserve(grp.members.size());
    for (auto [wi, m] : grp.members) {
      const int id = mover_ids(*worlds[wi])[m];
      require(b.layout.is_member(id), "decide: bundle layout does not cover entity " + std::to_string(id));
      obs.push_back(observe(*worlds[wi], id));
    }
    std::vector<const RawObservation*> ptrs;
    for (const auto& o : obs) ptrs.push_back(&o);
    std::vector<AgentInput> inputs = featurize(ptrs, *grp.ctl.fields, b.layout, b.uses_teammates());
    std::vector<const AgentInput*> in_ptrs;
    for (const auto& i : inputs) in_ptrs.push_back(&i);
    const PolicyEval ev = evaluate(b, in_ptrs);
    for (size_t k = 0; k < grp.members.size(); ++k) {
      auto [wi, m] = grp.members[k];
      Decision& d = out[wi][m];
      means[wi][m] = {ev.mean(static_cast<Eigen::Index>(k), 0), ev.mean(static_cast<Eigen::Index>(k), 1)};
      log_stds[wi][m] = ev.log_std;
      if (!ev.w.empty()) {
        d.w = ev.w[k];
        d.w_self = ev.w_self[k];
      }
      if (keep_inputs) d.input = std::move(inputs[k]);
    }
  }
  std::uniform_real_distribution<double> uniform(-1.0, 1.0);
  for (size_t wi = 0; wi < worlds.size(); ++wi) {
    for (size_t m = 0; m < out[wi].size(); ++m) {
      ActionSample& s = out[wi][m].sample;
      if (controllers[wi][m].bundle) {
        s = sample_action(means[wi][m], log_stds[wi][m], rng, stochastic);
      } else {
        s.raw = {uniform(rng), uniform(rng)};
        s.action = s.raw;
        s.log_prob = -2.0 * std::log(2.0);
      }
    }
  }
  return out;
}

inline JointAction joint_action(const std::vector<Decision>& d) {
  JointAction a;
  a.reserve(d.size());
  for (const auto& x : d) a.push_back(x.sample.action);
  return a;
}

}  // namespace iatt
