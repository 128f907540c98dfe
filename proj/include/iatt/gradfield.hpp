#pragma once

// Time-dependent score networks trained by denoising score matching on the
// synthetic entity/boundary datasets, and the GoalSet assembled from them.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "iatt/engine.hpp"
#include "iatt/tensor.hpp"

namespace iatt {

// `custom` covers arbitrary data (analytic checks); policies only use the
// entity and boundary fields.
enum class FieldKind { entity, boundary, custom };

inline std::string_view field_name(FieldKind k) {
  switch (k) {
    case FieldKind::entity:
      return "entity";
    case FieldKind::boundary:
      return "boundary";
    case FieldKind::custom:
      return "custom";
  }
  return "?";
}

inline FieldKind parse_field(std::string_view s) {
  for (auto k : {FieldKind::entity, FieldKind::boundary, FieldKind::custom}) {
    if (field_name(k) == s) return k;
  }
  throw ConfigError("unknown gradient-field kind '" + std::string(s) + "'");
}

struct GFDataset {
  FieldKind kind = FieldKind::boundary;
  Matrix samples;  // n x dim: entity 4, boundary 2
};

inline int expected_dim(FieldKind k, int fallback) {
  return k == FieldKind::entity ? 4 : k == FieldKind::boundary ? 2 : fallback;
}

// Own position uniform in [-1,1]^2 followed by a relative offset whose L1
// norm is below 1e-5 (each component is within +-0.5e-5).
inline GFDataset gen_entity_dataset(int n, std::uint64_t seed) {
  require(n >= 1, "gen_entity_dataset: n must be >= 1");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> pos(-1.0, 1.0);
  std::uniform_real_distribution<double> off(-0.5e-5, 0.5e-5);
  GFDataset d{FieldKind::entity, Matrix(n, 4)};
  for (int i = 0; i < n; ++i) {
    d.samples(i, 0) = pos(rng);
    d.samples(i, 1) = pos(rng);
    d.samples(i, 2) = off(rng);
    d.samples(i, 3) = off(rng);
  }
  return d;
}

inline GFDataset gen_boundary_dataset(int n, std::uint64_t seed) {
  require(n >= 1, "gen_boundary_dataset: n must be >= 1");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.8, 0.8);
  GFDataset d{FieldKind::boundary, Matrix(n, 2)};
  for (int i = 0; i < n; ++i) {
    d.samples(i, 0) = u(rng);
    d.samples(i, 1) = u(rng);
  }
  return d;
}

// sigma(t) = sigma0^t for t in [epsilon, T].
struct NoiseSchedule {
  double sigma0 = 25.0;
  double T = 1.0;
  double epsilon = 1e-2;

  double sigma(double t) const { return std::pow(sigma0, t); }

  void validate() const {
    if (!(sigma0 > 1.0)) throw ConfigError("noise schedule: sigma0 must be > 1");
    if (!(epsilon > 0.0 && epsilon < T)) throw ConfigError("noise schedule: need 0 < epsilon < T");
  }
};

// x~ = x + sigma(t) z, z ~ N(0, I).
inline Matrix perturb(const Matrix& x, double t, const NoiseSchedule& schedule, std::mt19937_64& rng) {
  require(t >= schedule.epsilon && t <= schedule.T, "perturb: t outside [epsilon, T]");
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix out = x;
  const double s = schedule.sigma(t);
  for (Eigen::Index i = 0; i < out.size(); ++i) out.data()[i] += s * normal(rng);
  return out;
}

// s(x, t) = MLP([x, t]) / sigma(t). The 1/sigma output scaling keeps the
// network's target at unit scale across noise levels.
class ScoreNet {
 public:
  ScoreNet() = default;
  ScoreNet(FieldKind kind, int dim, NoiseSchedule schedule, int hidden, std::uint64_t seed)
      : kind_(kind), dim_(dim), schedule_(schedule), hidden_(hidden) {
    schedule_.validate();
    require(dim == expected_dim(kind, dim) && dim >= 1, "ScoreNet: dimension does not match kind");
    require(hidden >= 1, "ScoreNet: hidden size must be >= 1");
    std::mt19937_64 rng(seed);
    const int d = dim;
    add_dense(params_, "l0", d + 1, hidden, kTanhGain, rng);
    add_dense(params_, "l1", hidden, hidden, kTanhGain, rng);
    add_dense(params_, "l2", hidden, d, 1.0, rng);
  }

  FieldKind kind() const { return kind_; }
  int dim() const { return dim_; }
  int hidden() const { return hidden_; }
  const NoiseSchedule& schedule() const { return schedule_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  // x: n x dim, t: n x 1.
  Var forward(Graph& g, Var x, const Matrix& t) {
    const Matrix& xv = g.value(x);
    require(xv.cols() == dim(), "ScoreNet: input dimension mismatch");
    require(t.rows() == xv.rows() && t.cols() == 1, "ScoreNet: one t per row required");
    Var in = ops::concat_cols({x, g.constant(t)});
    Var h = ops::tanh(dense(g, params_, "l0", in));
    h = ops::tanh(dense(g, params_, "l1", h));
    Var out = dense(g, params_, "l2", h);
    Matrix inv_sigma(xv.rows(), dim());
    for (Eigen::Index i = 0; i < xv.rows(); ++i) inv_sigma.row(i).setConstant(1.0 / schedule_.sigma(t(i, 0)));
    return ops::mul(out, g.constant(std::move(inv_sigma)));
  }

  // Graph-free evaluation at a single noise level.
  Matrix score(const Matrix& x, double t) const {
    require(x.cols() == dim(), "ScoreNet: input dimension mismatch");
    Matrix in(x.rows(), dim() + 1);
    in.leftCols(dim()) = x;
    in.col(dim()).setConstant(t);
    auto layer = [&](const Matrix& a, const char* name) {
      const std::string n(name);
      return Matrix((a * params_.at(n + ".w").value).rowwise() + params_.at(n + ".b").value.row(0));
    };
    Matrix h = layer(in, "l0").array().tanh();
    h = layer(h, "l1").array().tanh();
    return layer(h, "l2") / schedule_.sigma(t);
  }

 private:
  FieldKind kind_ = FieldKind::boundary;
  int dim_ = 2;
  NoiseSchedule schedule_;
  int hidden_ = 64;
  ParamStore params_;
};

using ScoreFn = std::function<Var(Graph&, Var x_tilde, const Matrix& t)>;

// lambda(t) ||s(x~, t) - (x - x~)/sigma^2(t)||^2 averaged over rows, with
// lambda(t) = sigma^2(t) and x~ = x + sigma(t) z.
inline Var dsm_loss(Graph& g, const ScoreFn& score, const Matrix& x, const Matrix& t, const Matrix& z,
                    const NoiseSchedule& schedule) {
  require(x.rows() > 0, "dsm_loss: empty batch");
  require(z.rows() == x.rows() && z.cols() == x.cols() && t.rows() == x.rows(), "dsm_loss: shape mismatch");
  Matrix x_tilde = x;
  Matrix target(x.rows(), x.cols());
  Matrix lambda_sqrt(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double s = schedule.sigma(t(i, 0));
    x_tilde.row(i) += s * z.row(i);
    target.row(i) = (x.row(i) - x_tilde.row(i)) / (s * s);
    lambda_sqrt.row(i).setConstant(s);
  }
  Var s = score(g, g.constant(x_tilde), t);
  Var r = ops::mul(ops::sub(s, g.constant(std::move(target))), g.constant(std::move(lambda_sqrt)));
  return ops::scale(ops::sum(ops::square(r)), 1.0 / static_cast<double>(x.rows()));
}

// Samples t ~ U(epsilon, T) and z ~ N(0, I) per row.
inline Var dsm_loss(Graph& g, ScoreNet& net, const Matrix& batch, std::mt19937_64& rng) {
  const NoiseSchedule& sch = net.schedule();
  std::uniform_real_distribution<double> ut(sch.epsilon, sch.T);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix t(batch.rows(), 1);
  Matrix z(batch.rows(), batch.cols());
  for (Eigen::Index i = 0; i < batch.rows(); ++i) t(i, 0) = ut(rng);
  for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = normal(rng);
  ScoreFn fn = [&net](Graph& g, Var xt, const Matrix& tt) { return net.forward(g, xt, tt); };
  return dsm_loss(g, fn, batch, t, z, sch);
}

struct ScoreTrainConfig {
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  int batch_size = 256;
  int epochs = 200;
  int hidden = 64;
  std::uint64_t seed = 0;
  NoiseSchedule schedule;
};

struct ScoreTrainReport {
  std::vector<double> epoch_loss;
  double first_epoch() const { return epoch_loss.empty() ? 0.0 : epoch_loss.front(); }
  double last_epoch() const { return epoch_loss.empty() ? 0.0 : epoch_loss.back(); }
};

inline ScoreNet train_score_net(const GFDataset& data, const ScoreTrainConfig& cfg,
                                ScoreTrainReport* report = nullptr) {
  const int dim = static_cast<int>(data.samples.cols());
  require(dim == expected_dim(data.kind, dim), "train_score_net: dataset dimension does not match kind");
  require(data.samples.rows() > 0, "train_score_net: empty dataset");
  ScoreNet net(data.kind, dim, cfg.schedule, cfg.hidden, cfg.seed);
  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  const AdamConfig adam{cfg.lr, cfg.beta1, cfg.beta2, 1e-8};
  const int n = static_cast<int>(data.samples.rows());
  std::vector<int> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  ScoreTrainReport local;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    int batches = 0;
    for (int start = 0; start < n; start += cfg.batch_size) {
      const int len = std::min(cfg.batch_size, n - start);
      Matrix batch(len, data.samples.cols());
      for (int i = 0; i < len; ++i) batch.row(i) = data.samples.row(order[static_cast<size_t>(start + i)]);
      net.params().zero_grad();
      Graph g;
      Var loss = dsm_loss(g, net, batch, rng);
      const double lv = g.value(loss)(0, 0);
      if (!std::isfinite(lv)) {
        std::ostringstream msg;
        msg << "score net (" << field_name(data.kind) << ") diverged: loss=" << lv << " at epoch " << epoch
            << ", batch " << batches << ", grad norm " << net.params().grad_norm();
        throw TrainingError(msg.str());
      }
      g.backward(loss);
      adam_step(net.params(), adam);
      total += lv;
      ++batches;
    }
    local.epoch_loss.push_back(total / batches);
  }
  if (report) *report = std::move(local);
  return net;
}

// --- goal representation -----------------------------------------------------

// One goal: the field value for a visible entity (4 components) or for the
// arena boundary (2 components, padded with zeros).
struct Goal {
  int entity_id = -1;  // -1 for the boundary goal
  Role role = Role::agent;
  bool wall = false;
  std::array<double, 4> field{};
};

struct GoalSet {
  std::vector<Goal> goals;
  size_t size() const { return goals.size(); }
};

struct FieldPair {
  std::shared_ptr<const ScoreNet> entity;
  std::shared_ptr<const ScoreNet> boundary;
  double t_eval = 1e-2;
};

// Visible entities ordered by (role, id); the boundary goal is last.
inline std::vector<EntityView> goal_order(const RawObservation& obs) {
  std::vector<EntityView> ents = obs.entities;
  std::stable_sort(ents.begin(), ents.end(), [](const EntityView& a, const EntityView& b) {
    if (a.role != b.role) return static_cast<int>(a.role) < static_cast<int>(b.role);
    return a.id < b.id;
  });
  return ents;
}

// Batched over observations: one entity-field and one boundary-field
// evaluation for the whole batch.
inline std::vector<GoalSet> build_goalsets(const std::vector<const RawObservation*>& batch, const FieldPair& nets) {
  require(nets.entity && nets.boundary, "build_goalsets: both fields required");
  require(nets.entity->kind() == FieldKind::entity && nets.boundary->kind() == FieldKind::boundary,
          "build_goalsets: field kinds swapped");
  std::vector<std::vector<EntityView>> orders;
  orders.reserve(batch.size());
  int rows = 0;
  for (const RawObservation* o : batch) {
    orders.push_back(goal_order(*o));
    rows += static_cast<int>(orders.back().size());
  }
  Matrix ent_in(rows, 4);
  Matrix wall_in(static_cast<Eigen::Index>(batch.size()), 2);
  int r = 0;
  for (size_t b = 0; b < batch.size(); ++b) {
    const RawObservation& o = *batch[b];
    wall_in(static_cast<Eigen::Index>(b), 0) = o.self_pos.x;
    wall_in(static_cast<Eigen::Index>(b), 1) = o.self_pos.y;
    for (const auto& e : orders[b]) {
      ent_in.row(r) << o.self_pos.x, o.self_pos.y, e.rel_pos.x, e.rel_pos.y;
      ++r;
    }
  }
  const Matrix ent_out = rows > 0 ? nets.entity->score(ent_in, nets.t_eval) : Matrix(0, 4);
  const Matrix wall_out = nets.boundary->score(wall_in, nets.t_eval);
  std::vector<GoalSet> out(batch.size());
  r = 0;
  for (size_t b = 0; b < batch.size(); ++b) {
    GoalSet& gs = out[b];
    gs.goals.reserve(orders[b].size() + 1);
    for (const auto& e : orders[b]) {
      Goal goal;
      goal.entity_id = e.id;
      goal.role = e.role;
      for (int c = 0; c < 4; ++c) goal.field[static_cast<size_t>(c)] = ent_out(r, c);
      gs.goals.push_back(goal);
      ++r;
    }
    Goal wall;
    wall.wall = true;
    wall.field = {wall_out(static_cast<Eigen::Index>(b), 0), wall_out(static_cast<Eigen::Index>(b), 1), 0.0, 0.0};
    gs.goals.push_back(wall);
  }
  return out;
}

inline GoalSet build_goalset(const RawObservation& obs, const FieldPair& nets) {
  return build_goalsets({&obs}, nets).front();
}

}  // namespace iatt
