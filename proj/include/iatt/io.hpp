#pragma once

#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <iterator>
#include <nlohmann/json.hpp>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "iatt/agents.hpp"
#include "iatt/errors.hpp"
#include "iatt/evaluation.hpp"
#include "iatt/gradfield.hpp"
#include "iatt/training.hpp"

namespace iatt {

using json = nlohmann::json;

// --- checkpoint container ------------------------------------------------------
//
// "IATT" | u32 version | u32 tag length | tag | u64 metadata length | JSON
// metadata | u32 array count | per array: u32 name length, name, u32 rows,
// u32 cols, rows*cols f64 | u64 FNV-1a-64 of every preceding byte.
// All integers and doubles little-endian.

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace tags {
inline constexpr std::string_view score_net = "score-net";
inline constexpr std::string_view system = "policy-system";
inline constexpr std::string_view iw = "inverse-net";
inline constexpr std::string_view pairs = "pair-dataset";
}  // namespace tags

struct CheckpointData {
  std::string tag;
  json meta = json::object();
  std::vector<std::pair<std::string, Matrix>> arrays;

  void put(std::string name, Matrix m) { arrays.emplace_back(std::move(name), std::move(m)); }
  const Matrix& get(const std::string& name) const {
    for (const auto& [n, m] : arrays) {
      if (n == name) return m;
    }
    throw CheckpointError("checkpoint: missing array '" + name + "'");
  }
};

inline std::uint64_t fnv1a64(const unsigned char* data, size_t n) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (size_t i = 0; i < n; ++i) {
    h ^= data[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace detail {

static_assert(std::endian::native == std::endian::little, "checkpoint code assumes a little-endian host");

class ByteWriter {
 public:
  template <class T>
  void put(T v) {
    const auto* p = reinterpret_cast<const unsigned char*>(&v);
    buf_.insert(buf_.end(), p, p + sizeof(T));
  }
  void bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
  std::vector<unsigned char>& buffer() { return buf_; }

 private:
  std::vector<unsigned char> buf_;
};

class ByteReader {
 public:
  ByteReader(const unsigned char* d, size_t n) : d_(d), n_(n) {}
  template <class T>
  T get(const char* field) {
    need(sizeof(T), field);
    T v;
    std::memcpy(&v, d_ + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string str(size_t len, const char* field) {
    need(len, field);
    std::string s(reinterpret_cast<const char*>(d_ + pos_), len);
    pos_ += len;
    return s;
  }
  bool done() const { return pos_ == n_; }

 private:
  void need(size_t k, const char* field) const {
    if (n_ - pos_ < k) throw CheckpointError(std::string("checkpoint: truncated while reading field '") + field + "'");
  }
  const unsigned char* d_;
  size_t n_;
  size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<unsigned char> encode_checkpoint(const CheckpointData& c) {
  detail::ByteWriter w;
  w.bytes("IATT");
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(c.tag.size()));
  w.bytes(c.tag);
  const std::string meta = c.meta.dump();
  w.put<std::uint64_t>(meta.size());
  w.bytes(meta);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(c.arrays.size()));
  for (const auto& [name, m] : c.arrays) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
    w.bytes(name);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(m.rows()));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.size(); ++i) w.put<double>(m.data()[i]);
  }
  auto& buf = w.buffer();
  const std::uint64_t sum = fnv1a64(buf.data(), buf.size());
  w.put<std::uint64_t>(sum);
  return std::move(buf);
}

inline CheckpointData decode_checkpoint(const std::vector<unsigned char>& buf) {
  if (buf.size() < 4 + 8) throw CheckpointError("checkpoint: truncated, no room for field 'checksum'");
  std::uint64_t stored;
  std::memcpy(&stored, buf.data() + buf.size() - 8, 8);
  if (fnv1a64(buf.data(), buf.size() - 8) != stored) throw CheckpointError("checkpoint: field 'checksum' does not match content");
  detail::ByteReader r(buf.data(), buf.size() - 8);
  if (r.str(4, "magic") != "IATT") throw CheckpointError("checkpoint: field 'magic' is not IATT");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint: field 'version' is " + std::to_string(version) + ", expected " +
                          std::to_string(kCheckpointVersion));
  }
  CheckpointData c;
  c.tag = r.str(r.get<std::uint32_t>("tag"), "tag");
  const std::string meta = r.str(r.get<std::uint64_t>("metadata"), "metadata");
  try {
    c.meta = json::parse(meta);
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("checkpoint: field 'metadata' is not valid JSON: ") + e.what());
  }
  const auto count = r.get<std::uint32_t>("array count");
  for (std::uint32_t a = 0; a < count; ++a) {
    std::string name = r.str(r.get<std::uint32_t>("array name"), "array name");
    const auto rows = r.get<std::uint32_t>("array rows");
    const auto cols = r.get<std::uint32_t>("array cols");
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = r.get<double>("array payload");
    c.arrays.emplace_back(std::move(name), std::move(m));
  }
  if (!r.done()) throw CheckpointError("checkpoint: trailing bytes before field 'checksum'");
  return c;
}

inline void write_checkpoint(const std::string& path, const CheckpointData& c) {
  const auto bytes = encode_checkpoint(c);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("checkpoint: cannot open '" + path + "' for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw CheckpointError("checkpoint: write to '" + path + "' failed");
}

inline CheckpointData read_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("checkpoint: cannot open '" + path + "'");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

inline void expect_tag(const CheckpointData& c, std::string_view tag) {
  if (c.tag != tag) {
    throw CheckpointError("checkpoint: field 'variant tag' is '" + c.tag + "', expected '" + std::string(tag) + "'");
  }
}

// --- JSON for plain structs -----------------------------------------------------

inline json to_json(const MoverConstants& m) { return {{"radius", m.radius}, {"accel", m.accel}, {"max_speed", m.max_speed}}; }
inline MoverConstants mover_from_json(const json& j) {
  return {j.at("radius").get<double>(), j.at("accel").get<double>(), j.at("max_speed").get<double>()};
}

inline json to_json(const ScenarioSpec& s) {
  json j;
  j["kind"] = std::string(scenario_name(s.kind));
  j["n_per_side"] = s.n_per_side;
  j["horizon"] = s.horizon;
  j["visibility_radius"] = s.visibility_radius ? json(*s.visibility_radius) : json(nullptr);
  j["rewards"] = s.rewards;
  j["physics"] = {{"dt", s.physics.dt},
                  {"damping", s.physics.damping},
                  {"contact_force", s.physics.contact_force},
                  {"contact_margin", s.physics.contact_margin}};
  j["agent"] = to_json(s.agent);
  j["slow_agent"] = to_json(s.slow_agent);
  j["fast_agent"] = to_json(s.fast_agent);
  j["wolf"] = to_json(s.wolf);
  j["sheep"] = to_json(s.sheep);
  j["landmark_radius"] = s.landmark_radius;
  j["grass_radius"] = s.grass_radius;
  j["obstacle_radius"] = s.obstacle_radius;
  j["grass_count"] = s.grass_count;
  j["obstacle_count"] = s.obstacle_count;
  return j;
}

inline ScenarioSpec spec_from_json(const json& j) {
  ScenarioSpec s;
  s.kind = parse_scenario(j.at("kind").get<std::string>());
  s.n_per_side = j.at("n_per_side").get<int>();
  s.horizon = j.at("horizon").get<int>();
  if (!j.at("visibility_radius").is_null()) s.visibility_radius = j.at("visibility_radius").get<double>();
  s.rewards = j.at("rewards").get<RewardConstants>();
  const json& p = j.at("physics");
  s.physics = {p.at("dt").get<double>(), p.at("damping").get<double>(), p.at("contact_force").get<double>(),
               p.at("contact_margin").get<double>()};
  s.agent = mover_from_json(j.at("agent"));
  s.slow_agent = mover_from_json(j.at("slow_agent"));
  s.fast_agent = mover_from_json(j.at("fast_agent"));
  s.wolf = mover_from_json(j.at("wolf"));
  s.sheep = mover_from_json(j.at("sheep"));
  s.landmark_radius = j.at("landmark_radius").get<double>();
  s.grass_radius = j.at("grass_radius").get<double>();
  s.obstacle_radius = j.at("obstacle_radius").get<double>();
  s.grass_count = j.at("grass_count").get<int>();
  s.obstacle_count = j.at("obstacle_count").get<int>();
  return s;
}

inline json to_json(const NetConfig& n) {
  return {{"hidden", n.hidden}, {"key_dim", n.key_dim}, {"out_gain", n.out_gain}, {"init_log_std", n.init_log_std}};
}
inline NetConfig net_from_json(const json& j) {
  NetConfig n;
  n.hidden = j.at("hidden").get<int>();
  n.key_dim = j.at("key_dim").get<int>();
  n.out_gain = j.at("out_gain").get<double>();
  n.init_log_std = j.at("init_log_std").get<double>();
  return n;
}

inline json to_json(const TeamLayout& l) {
  return {{"role", std::string(role_name(l.role))},
          {"entity_count", l.entity_count},
          {"mover_count", l.mover_count},
          {"member_ids", l.member_ids}};
}
inline TeamLayout layout_from_json(const json& j) {
  TeamLayout l;
  l.role = parse_role(j.at("role").get<std::string>());
  l.entity_count = j.at("entity_count").get<int>();
  l.mover_count = j.at("mover_count").get<int>();
  l.member_ids = j.at("member_ids").get<std::vector<int>>();
  return l;
}

// Parameter values plus Adam moments; names and flags go to metadata.
inline json put_store(CheckpointData& c, const std::string& prefix, const ParamStore& s) {
  json entries = json::array();
  for (const auto& p : s.params()) {
    entries.push_back({{"name", p.name}, {"trainable", p.trainable}});
    c.put(prefix + p.name, p.value);
    c.put(prefix + p.name + "@m", p.m);
    c.put(prefix + p.name + "@v", p.v);
  }
  return {{"params", entries}, {"step", s.step()}};
}

inline ParamStore get_store(const CheckpointData& c, const std::string& prefix, const json& meta) {
  ParamStore s;
  for (const auto& e : meta.at("params")) {
    const std::string name = e.at("name").get<std::string>();
    Parameter& p = s.add(name, c.get(prefix + name), e.at("trainable").get<bool>());
    p.m = c.get(prefix + name + "@m");
    p.v = c.get(prefix + name + "@v");
  }
  s.set_step(meta.at("step").get<long>());
  return s;
}

// --- score nets ----------------------------------------------------------------

inline json put_score_net(CheckpointData& c, const std::string& prefix, const ScoreNet& n) {
  const NoiseSchedule& s = n.schedule();
  return {{"kind", std::string(field_name(n.kind()))},
          {"dim", n.dim()},
          {"hidden", n.hidden()},
          {"schedule", {{"sigma0", s.sigma0}, {"T", s.T}, {"epsilon", s.epsilon}}},
          {"store", put_store(c, prefix, n.params())}};
}

inline ScoreNet get_score_net(const CheckpointData& c, const std::string& prefix, const json& j) {
  NoiseSchedule s;
  s.sigma0 = j.at("schedule").at("sigma0").get<double>();
  s.T = j.at("schedule").at("T").get<double>();
  s.epsilon = j.at("schedule").at("epsilon").get<double>();
  ScoreNet n(parse_field(j.at("kind").get<std::string>()), j.at("dim").get<int>(), s, j.at("hidden").get<int>(), 0);
  n.params() = get_store(c, prefix, j.at("store"));
  return n;
}

inline void save_score_net(const ScoreNet& n, const std::string& path) {
  CheckpointData c;
  c.tag = tags::score_net;
  c.meta["net"] = put_score_net(c, "net.", n);
  write_checkpoint(path, c);
}

inline ScoreNet load_score_net(const std::string& path) {
  const CheckpointData c = read_checkpoint(path);
  expect_tag(c, tags::score_net);
  return get_score_net(c, "net.", c.meta.at("net"));
}

inline json put_fields(CheckpointData& c, const FieldPair& f) {
  require(f.entity && f.boundary, "checkpoint: system without gradient fields");
  return {{"entity", put_score_net(c, "gf.entity.", *f.entity)},
          {"boundary", put_score_net(c, "gf.boundary.", *f.boundary)},
          {"t_eval", f.t_eval}};
}

inline FieldPair get_fields(const CheckpointData& c, const json& j) {
  FieldPair f;
  f.entity = std::make_shared<const ScoreNet>(get_score_net(c, "gf.entity.", j.at("entity")));
  f.boundary = std::make_shared<const ScoreNet>(get_score_net(c, "gf.boundary.", j.at("boundary")));
  f.t_eval = j.at("t_eval").get<double>();
  return f;
}

// --- policy systems ----------------------------------------------------------------

inline CheckpointData system_checkpoint(const AgentSystem& sys) {
  CheckpointData c;
  c.tag = tags::system;
  json& m = c.meta;
  m["method"] = sys.method;
  m["spec"] = to_json(sys.spec);
  m["share_policy"] = sys.share_policy;
  m["policy_of_mover"] = sys.policy_of_mover;
  m["fields"] = put_fields(c, sys.fields);
  json pols = json::array();
  for (size_t i = 0; i < sys.policies.size(); ++i) {
    const PolicyBundle& b = sys.policies[i];
    const std::string p = "p" + std::to_string(i) + ".";
    pols.push_back({{"variant", std::string(variant_name(b.variant))},
                    {"critic_kind", std::string(critic_name(b.critic_kind))},
                    {"layout", to_json(b.layout)},
                    {"net", to_json(b.net)},
                    {"actor", put_store(c, p + "actor.", b.actor)},
                    {"critic", put_store(c, p + "critic.", b.critic)}});
  }
  m["policies"] = pols;
  return c;
}

inline AgentSystem system_from_checkpoint(const CheckpointData& c) {
  expect_tag(c, tags::system);
  try {
    const json& m = c.meta;
    AgentSystem sys;
    sys.method = canonical_method(m.at("method").get<std::string>());
    sys.spec = spec_from_json(m.at("spec"));
    sys.share_policy = m.at("share_policy").get<bool>();
    sys.policy_of_mover = m.at("policy_of_mover").get<std::vector<int>>();
    sys.fields = get_fields(c, m.at("fields"));
    const json& pols = m.at("policies");
    for (size_t i = 0; i < pols.size(); ++i) {
      const json& pj = pols[i];
      const std::string p = "p" + std::to_string(i) + ".";
      PolicyBundle b;
      b.variant = parse_variant(pj.at("variant").get<std::string>());
      b.critic_kind = parse_critic(pj.at("critic_kind").get<std::string>());
      b.layout = layout_from_json(pj.at("layout"));
      b.net = net_from_json(pj.at("net"));
      b.actor = get_store(c, p + "actor.", pj.at("actor"));
      b.critic = get_store(c, p + "critic.", pj.at("critic"));
      validate_bundle(b);
      sys.policies.push_back(std::move(b));
    }
    for (int idx : sys.policy_of_mover) {
      if (idx < 0 || idx >= static_cast<int>(sys.policies.size())) {
        throw CheckpointError("checkpoint: field 'policy_of_mover' references policy " + std::to_string(idx));
      }
    }
    return sys;
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("checkpoint: malformed metadata: ") + e.what());
  }
}

inline void save_system(const AgentSystem& sys, const std::string& path) { write_checkpoint(path, system_checkpoint(sys)); }
inline AgentSystem load_system(const std::string& path) { return system_from_checkpoint(read_checkpoint(path)); }

// --- inverse networks ---------------------------------------------------------------

inline void save_iw(const IWNet& iw, const std::string& path) {
  CheckpointData c;
  c.tag = tags::iw;
  c.meta["layout"] = to_json(iw.layout);
  c.meta["net"] = to_json(iw.net);
  c.meta["store"] = put_store(c, "", iw.params);
  write_checkpoint(path, c);
}

inline IWNet load_iw(const std::string& path) {
  const CheckpointData c = read_checkpoint(path);
  expect_tag(c, tags::iw);
  IWNet iw;
  iw.layout = layout_from_json(c.meta.at("layout"));
  iw.net = net_from_json(c.meta.at("net"));
  iw.params = get_store(c, "", c.meta.at("store"));
  return iw;
}

// Several inverse networks, one per policy, in one file.
inline void save_iws(const std::vector<IWNet>& iws, const std::string& path) {
  CheckpointData c;
  c.tag = tags::iw;
  json list = json::array();
  for (size_t i = 0; i < iws.size(); ++i) {
    list.push_back({{"layout", to_json(iws[i].layout)},
                    {"net", to_json(iws[i].net)},
                    {"store", put_store(c, "n" + std::to_string(i) + ".", iws[i].params)}});
  }
  c.meta["networks"] = list;
  write_checkpoint(path, c);
}

inline std::vector<IWNet> load_iws(const std::string& path) {
  const CheckpointData c = read_checkpoint(path);
  expect_tag(c, tags::iw);
  std::vector<IWNet> out;
  if (!c.meta.contains("networks")) {
    IWNet iw;
    iw.layout = layout_from_json(c.meta.at("layout"));
    iw.net = net_from_json(c.meta.at("net"));
    iw.params = get_store(c, "", c.meta.at("store"));
    out.push_back(std::move(iw));
    return out;
  }
  const json& list = c.meta.at("networks");
  for (size_t i = 0; i < list.size(); ++i) {
    IWNet iw;
    iw.layout = layout_from_json(list[i].at("layout"));
    iw.net = net_from_json(list[i].at("net"));
    iw.params = get_store(c, "n" + std::to_string(i) + ".", list[i].at("store"));
    out.push_back(std::move(iw));
  }
  return out;
}

// --- pair datasets ---------------------------------------------------------------------

inline void put_pairs(CheckpointData& c, const std::string& prefix, const PairDataset& d) {
  const Eigen::Index n = static_cast<Eigen::Index>(d.size());
  Eigen::Index goals = 0, ents = 0;
  for (size_t i = 0; i < d.size(); ++i) {
    goals += static_cast<Eigen::Index>(d[i].w.w.size());
    ents += static_cast<Eigen::Index>(d[i].obs.entities.size());
  }
  // per pair: seq, goal count, self id, role, action x/y, obs role, vx, vy, px, py, entity count
  Matrix head(n, 12), tokens(n, kGoalDim), gmat(goals, kGoalDim), gw(goals, 3), emat(ents, 4);
  Eigen::Index g = 0, e = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const Pair& p = d[static_cast<size_t>(i)];
    const AgentFeatures& f = p.features;
    require(f.goals.rows() == static_cast<Eigen::Index>(p.w.w.size()), "put_pairs: weights and goals disagree");
    head.row(i) << static_cast<double>(p.seq), static_cast<double>(p.w.w.size()), f.self_id,
        static_cast<double>(f.role), f.action.x, f.action.y, static_cast<double>(p.obs.self_role), p.obs.self_vel.x,
        p.obs.self_vel.y, p.obs.self_pos.x, p.obs.self_pos.y, static_cast<double>(p.obs.entities.size());
    tokens.row(i) = f.self_token.row(0);
    for (Eigen::Index k = 0; k < f.goals.rows(); ++k, ++g) {
      gmat.row(g) = f.goals.row(k);
      gw.row(g) << p.w.w[static_cast<size_t>(k)], p.w.slots[static_cast<size_t>(k)], f.slots[static_cast<size_t>(k)];
    }
    for (const auto& v : p.obs.entities) emat.row(e++) << v.id, static_cast<double>(v.role), v.rel_pos.x, v.rel_pos.y;
  }
  c.put(prefix + "head", head);
  c.put(prefix + "tokens", tokens);
  c.put(prefix + "goals", gmat);
  c.put(prefix + "weights", gw);
  c.put(prefix + "entities", emat);
}

inline PairDataset get_pairs(const CheckpointData& c, const std::string& prefix, long total) {
  const Matrix& head = c.get(prefix + "head");
  const Matrix& tokens = c.get(prefix + "tokens");
  const Matrix& gmat = c.get(prefix + "goals");
  const Matrix& gw = c.get(prefix + "weights");
  const Matrix& emat = c.get(prefix + "entities");
  PairDataset d;
  Eigen::Index g = 0, e = 0;
  for (Eigen::Index i = 0; i < head.rows(); ++i) {
    Pair p;
    p.seq = static_cast<long>(head(i, 0));
    const auto k = static_cast<Eigen::Index>(head(i, 1));
    p.features.self_id = static_cast<int>(head(i, 2));
    p.features.role = static_cast<Role>(static_cast<int>(head(i, 3)));
    p.features.action = {head(i, 4), head(i, 5)};
    p.features.self_token = tokens.row(i);
    if (g + k > gmat.rows()) throw CheckpointError("checkpoint: field 'goals' shorter than goal counts");
    p.features.goals = gmat.middleRows(g, k);
    for (Eigen::Index r = 0; r < k; ++r, ++g) {
      p.w.w.push_back(gw(g, 0));
      p.w.slots.push_back(static_cast<int>(gw(g, 1)));
      p.features.slots.push_back(static_cast<int>(gw(g, 2)));
    }
    p.obs.self_id = p.features.self_id;
    p.obs.self_role = static_cast<Role>(static_cast<int>(head(i, 6)));
    p.obs.self_vel = {head(i, 7), head(i, 8)};
    p.obs.self_pos = {head(i, 9), head(i, 10)};
    const auto ne = static_cast<Eigen::Index>(head(i, 11));
    if (e + ne > emat.rows()) throw CheckpointError("checkpoint: field 'entities' shorter than entity counts");
    for (Eigen::Index r = 0; r < ne; ++r, ++e) {
      p.obs.entities.push_back({static_cast<int>(emat(e, 0)), static_cast<Role>(static_cast<int>(emat(e, 1))),
                                {emat(e, 2), emat(e, 3)}});
    }
    d.restore(std::move(p));
  }
  d.set_total(total);
  return d;
}

inline void save_pairs(const std::vector<PairDataset>& sets, const std::string& path) {
  CheckpointData c;
  c.tag = tags::pairs;
  json totals = json::array();
  for (size_t i = 0; i < sets.size(); ++i) {
    put_pairs(c, "d" + std::to_string(i) + ".", sets[i]);
    totals.push_back(sets[i].total());
  }
  c.meta["totals"] = totals;
  write_checkpoint(path, c);
}

inline std::vector<PairDataset> load_pairs(const std::string& path) {
  const CheckpointData c = read_checkpoint(path);
  expect_tag(c, tags::pairs);
  std::vector<PairDataset> out;
  const json& totals = c.meta.at("totals");
  for (size_t i = 0; i < totals.size(); ++i) out.push_back(get_pairs(c, "d" + std::to_string(i) + ".", totals[i].get<long>()));
  return out;
}

// --- run configuration ----------------------------------------------------------------

struct RunConfig {
  std::string scenario = "spread";
  int n_per_side = 2;
  int horizon = 200;
  std::optional<double> visibility_radius;
  std::string method = "self-att";
  long train_steps = 300000;  // budget for single-phase methods
  int checkpoint_every = 50;  // iterations; 0 = only at the end
  TrainConfig train;
  ScoreTrainConfig gf;
  int gf_samples = 10000;
  double t_eval = 1e-2;
  IWTrainConfig iw;
  TournamentConfig eval;
  std::uint64_t seed = 0;

  ScenarioSpec spec() const {
    ScenarioSpec s = default_spec(parse_scenario(scenario), n_per_side);
    s.horizon = horizon;
    s.visibility_radius = visibility_radius;
    s.validate();
    return s;
  }

  // Copies the master seed into every component.
  void apply_seed() {
    train.seed = seed;
    gf.seed = seed;
    iw.seed = seed;
    eval.seed = seed;
  }
};

namespace detail {

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline double parse_double(const std::string& key, const std::string& v) {
  size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty()) throw ConfigError("config: key '" + key + "' expects a number, got '" + v + "'");
  return out;
}

inline long parse_long(const std::string& key, const std::string& v) {
  size_t used = 0;
  long out = 0;
  try {
    out = std::stol(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty()) throw ConfigError("config: key '" + key + "' expects an integer, got '" + v + "'");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config: key '" + key + "' expects true/false, got '" + v + "'");
}

// Shortest text that parses back to the same double.
inline std::string fmt(double d) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, d);
  return std::string(buf, r.ptr);
}

struct ConfigKey {
  std::string name;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

template <class T>
ConfigKey num_key(std::string name, T RunConfig::*field) {
  return {name,
          [field](const RunConfig& c) {
            if constexpr (std::is_floating_point_v<T>) {
              return fmt(c.*field);
            } else {
              return std::to_string(c.*field);
            }
          },
          [field, name](RunConfig& c, const std::string& v) {
            if constexpr (std::is_floating_point_v<T>) {
              c.*field = parse_double(name, v);
            } else {
              c.*field = static_cast<T>(parse_long(name, v));
            }
          }};
}

template <class S, class T>
ConfigKey nested_key(std::string name, S RunConfig::*outer, T S::*field) {
  return {name,
          [outer, field](const RunConfig& c) {
            if constexpr (std::is_same_v<T, bool>) {
              return std::string((c.*outer).*field ? "true" : "false");
            } else if constexpr (std::is_floating_point_v<T>) {
              return fmt((c.*outer).*field);
            } else {
              return std::to_string((c.*outer).*field);
            }
          },
          [outer, field, name](RunConfig& c, const std::string& v) {
            if constexpr (std::is_same_v<T, bool>) {
              (c.*outer).*field = parse_bool(name, v);
            } else if constexpr (std::is_floating_point_v<T>) {
              (c.*outer).*field = parse_double(name, v);
            } else {
              (c.*outer).*field = static_cast<T>(parse_long(name, v));
            }
          }};
}

inline const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> k;
    k.push_back({"scenario", [](const RunConfig& c) { return c.scenario; },
                 [](RunConfig& c, const std::string& v) {
                   try {
                     parse_scenario(v);
                   } catch (const std::exception&) {
                     throw ConfigError("config: key 'scenario' has unknown value '" + v + "'");
                   }
                   c.scenario = v;
                 }});
    k.push_back(num_key("n_per_side", &RunConfig::n_per_side));
    k.push_back(num_key("horizon", &RunConfig::horizon));
    k.push_back({"visibility_radius",
                 [](const RunConfig& c) { return c.visibility_radius ? fmt(*c.visibility_radius) : std::string("none"); },
                 [](RunConfig& c, const std::string& v) {
                   if (v == "none") {
                     c.visibility_radius.reset();
                   } else {
                     c.visibility_radius = parse_double("visibility_radius", v);
                   }
                 }});
    k.push_back({"method", [](const RunConfig& c) { return c.method; },
                 [](RunConfig& c, const std::string& v) { c.method = canonical_method(v); }});
    k.push_back(num_key("train_steps", &RunConfig::train_steps));
    k.push_back(num_key("checkpoint_every", &RunConfig::checkpoint_every));
    k.push_back(num_key("seed", &RunConfig::seed));
    k.push_back(nested_key("lr", &RunConfig::train, &TrainConfig::lr));
    k.push_back(nested_key("critic_lr", &RunConfig::train, &TrainConfig::critic_lr));
    k.push_back(nested_key("gain", &RunConfig::train, &TrainConfig::gain));
    k.push_back(nested_key("ppo_epochs", &RunConfig::train, &TrainConfig::ppo_epochs));
    k.push_back(nested_key("share_policy", &RunConfig::train, &TrainConfig::share_policy));
    k.push_back(nested_key("gamma", &RunConfig::train, &TrainConfig::gamma));
    k.push_back(nested_key("gae_lambda", &RunConfig::train, &TrainConfig::gae_lambda));
    k.push_back(nested_key("clip_eps", &RunConfig::train, &TrainConfig::clip_eps));
    k.push_back(nested_key("entropy_coef", &RunConfig::train, &TrainConfig::entropy_coef));
    k.push_back(nested_key("max_grad_norm", &RunConfig::train, &TrainConfig::max_grad_norm));
    k.push_back(nested_key("adam_eps", &RunConfig::train, &TrainConfig::adam_eps));
    k.push_back(nested_key("value_norm", &RunConfig::train, &TrainConfig::value_norm));
    k.push_back(nested_key("n_envs", &RunConfig::train, &TrainConfig::n_envs));
    k.push_back(nested_key("rollout_length", &RunConfig::train, &TrainConfig::rollout_length));
    k.push_back(nested_key("minibatches", &RunConfig::train, &TrainConfig::minibatches));
    k.push_back(nested_key("phase1_steps", &RunConfig::train, &TrainConfig::phase1_steps));
    k.push_back(nested_key("phase3_steps", &RunConfig::train, &TrainConfig::phase3_steps));
    k.push_back(nested_key("convergence_window", &RunConfig::train, &TrainConfig::convergence_window));
    k.push_back(nested_key("convergence_threshold", &RunConfig::train, &TrainConfig::convergence_threshold));
    k.push_back(nested_key("stop_on_convergence", &RunConfig::train, &TrainConfig::stop_on_convergence));
    k.push_back(nested_key("hidden", &RunConfig::train, &TrainConfig::hidden));
    k.push_back(nested_key("gf.lr", &RunConfig::gf, &ScoreTrainConfig::lr));
    k.push_back(nested_key("gf.beta1", &RunConfig::gf, &ScoreTrainConfig::beta1));
    k.push_back(nested_key("gf.beta2", &RunConfig::gf, &ScoreTrainConfig::beta2));
    k.push_back(nested_key("gf.batch_size", &RunConfig::gf, &ScoreTrainConfig::batch_size));
    k.push_back(nested_key("gf.epochs", &RunConfig::gf, &ScoreTrainConfig::epochs));
    k.push_back(nested_key("gf.hidden", &RunConfig::gf, &ScoreTrainConfig::hidden));
    k.push_back(num_key("gf.samples", &RunConfig::gf_samples));
    k.push_back(num_key("gf.t_eval", &RunConfig::t_eval));
    k.push_back({"gf.sigma", [](const RunConfig& c) { return fmt(c.gf.schedule.sigma0); },
                 [](RunConfig& c, const std::string& v) { c.gf.schedule.sigma0 = parse_double("gf.sigma", v); }});
    k.push_back({"gf.epsilon", [](const RunConfig& c) { return fmt(c.gf.schedule.epsilon); },
                 [](RunConfig& c, const std::string& v) { c.gf.schedule.epsilon = parse_double("gf.epsilon", v); }});
    k.push_back(nested_key("iw.lr", &RunConfig::iw, &IWTrainConfig::lr));
    k.push_back(nested_key("iw.batch_size", &RunConfig::iw, &IWTrainConfig::batch_size));
    k.push_back(nested_key("iw.patience", &RunConfig::iw, &IWTrainConfig::patience));
    k.push_back(nested_key("iw.max_epochs", &RunConfig::iw, &IWTrainConfig::max_epochs));
    k.push_back(nested_key("eval.episodes", &RunConfig::eval, &TournamentConfig::episodes));
    k.push_back(nested_key("eval.steps", &RunConfig::eval, &TournamentConfig::steps));
    k.push_back(nested_key("eval.deterministic", &RunConfig::eval, &TournamentConfig::deterministic));
    k.push_back(nested_key("eval.batch", &RunConfig::eval, &TournamentConfig::batch));
    return k;
  }();
  return keys;
}

}  // namespace detail

inline std::vector<std::string> config_key_names() {
  std::vector<std::string> out;
  for (const auto& k : detail::config_keys()) out.push_back(k.name);
  return out;
}

inline void set_config_value(RunConfig& c, const std::string& key, const std::string& value) {
  for (const auto& k : detail::config_keys()) {
    if (k.name == key) {
      k.set(c, value);
      return;
    }
  }
  throw ConfigError("config: unknown key '" + key + "'");
}

// `key = value` lines; '#' starts a comment. Absent keys keep their defaults.
inline RunConfig parse_config_text(const std::string& text, const std::string& source = "<config>") {
  RunConfig c;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    try {
      set_config_value(c, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  c.apply_seed();
  c.train.validate();
  c.spec();
  return c;
}

inline RunConfig parse_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("config: cannot open '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config_text(ss.str(), path);
}

inline std::string echo_config(const RunConfig& c) {
  std::ostringstream os;
  for (const auto& k : detail::config_keys()) os << k.name << " = " << k.get(c) << "\n";
  return os.str();
}

// --- metrics and reports -----------------------------------------------------------------

class MetricsLog {
 public:
  MetricsLog() = default;
  explicit MetricsLog(const std::string& path) : file_(std::make_unique<std::ofstream>(path, std::ios::app)) {
    if (!*file_) throw ConfigError("metrics: cannot open '" + path + "'");
    out_ = file_.get();
  }
  explicit MetricsLog(std::ostream& os) : out_(&os) {}

  void write(const json& record) {
    if (!out_) return;
    *out_ << record.dump() << "\n";
    out_->flush();
  }

 private:
  std::unique_ptr<std::ofstream> file_;
  std::ostream* out_ = nullptr;
};

inline json iteration_record(const IterationStats& s, const std::string& phase) {
  json j;
  j["type"] = "iteration";
  j["phase"] = phase;
  j["iteration"] = s.iteration;
  j["step"] = s.steps;
  j["episodes"] = s.episodes;
  j["mean_reward"] = s.role_score;
  json losses = json::array();
  for (const auto& p : s.ppo) {
    losses.push_back({{"policy_loss", p.policy_loss},
                      {"value_loss", p.value_loss},
                      {"entropy", p.entropy},
                      {"approx_kl", p.approx_kl},
                      {"clip_fraction", p.clip_fraction},
                      {"grad_norm", p.grad_norm}});
  }
  j["losses"] = losses;
  j["seconds"] = s.seconds;
  return j;
}

inline std::vector<json> report_records(const MatchReport& r) {
  std::vector<json> out;
  for (const auto& [k, c] : r.cells) {
    out.push_back({{"type", "tournament_cell"},
                   {"scenario", std::string(scenario_name(r.spec.kind))},
                   {"n_per_side", r.spec.n_per_side},
                   {"visibility_radius", r.spec.visibility_radius ? json(*r.spec.visibility_radius) : json(nullptr)},
                   {"method", k.method},
                   {"role", std::string(role_name(k.role))},
                   {"mean", c.mean},
                   {"stderr", c.stderr_},
                   {"count", c.count},
                   {"team_mean", c.team_mean},
                   {"team_stderr", c.team_stderr},
                   {"episodes", r.episodes},
                   {"master_seed", r.master_seed}});
  }
  out.push_back({{"type", "tournament_summary"}, {"episodes", r.episodes}, {"steps", r.steps},
                 {"master_seed", r.master_seed}, {"mean_visible", r.mean_visible}});
  return out;
}

inline json composition_log(const MatchReport& r) {
  json log = json::array();
  for (const auto& ep : r.log) log.push_back({{"composition", ep.composition}, {"returns", ep.returns}});
  return {{"type", "composition_log"}, {"entry_methods", r.entry_methods}, {"episodes", log}};
}

}  // namespace iatt
