#include "davil/stiffness_policy.hpp"

#include <cmath>
#include <fstream>
#include <limits>

#include "davil/chain_io.hpp"

namespace davil {

namespace {

constexpr int kCheckpointVersion = 1;

void put_pose(VecX& o, int at, const Vec3& p, Eigen::Quaterniond q) {
  if (q.w() < 0.0) q.coeffs() = -q.coeffs();  // one hemisphere, so the encoding is continuous near identity
  o.segment<3>(at) = p;
  o(at + 3) = q.w();
  o(at + 4) = q.x();
  o(at + 5) = q.y();
  o(at + 6) = q.z();
}

Json range_json(const BinRange& r) { return Json::array({r.lo, r.hi, r.step}); }

BinRange range_from(const Json& j) {
  BinRange r{j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()};
  r.validate();
  return r;
}

}  // namespace

VecX sinusoidal_embedding(double value, int dim) {
  if (dim < 2 || dim % 2) throw std::invalid_argument("embedding dimension must be even and positive");
  if (!std::isfinite(value)) throw std::invalid_argument("embedding input must be finite");
  VecX e(dim);
  for (int i = 0; i < dim / 2; ++i) {
    const double a = value / std::pow(10000.0, 2.0 * i / dim);
    e(2 * i) = std::sin(a);
    e(2 * i + 1) = std::cos(a);
  }
  return e;
}

void BinRange::validate() const {
  if (!(step > 0.0) || !(lo > 0.0) || !(hi >= lo)) throw std::invalid_argument("bad stiffness bin range");
  const double n = (hi - lo) / step;
  if (std::abs(n - std::round(n)) > 1e-9) throw std::invalid_argument("bin range is not a whole number of steps");
  if (std::abs(lo / step - std::round(lo / step)) > 1e-9)
    throw std::invalid_argument("bin range must start at a multiple of the step");
}

int BinRange::count() const { return static_cast<int>(std::lround((hi - lo) / step)) + 1; }

double BinRange::value(int i) const {
  if (i < 0 || i >= count()) throw std::out_of_range("bin index out of range");
  return std::round(lo / step + i) * step;
}

int BinRange::index_of(double v) const {
  const double f = (v - lo) / step;
  const long i = std::lround(f);
  if (std::abs(f - i) > 1e-9 || i < 0 || i >= count()) throw std::invalid_argument("value is not a bin");
  return static_cast<int>(i);
}

int BinSet::total_bins() const { return offset(dims()); }

int BinSet::offset(int d) const {
  int o = 0;
  for (int i = 0; i < d; ++i) o += range(i).count();
  return o;
}

VecX middle_stiffness(const BinSet& bins) {
  VecX K(bins.dims());
  for (int d = 0; d < bins.dims(); ++d) K(d) = bins.range(d).value((bins.range(d).count() - 1) / 2);
  return K;
}

std::array<Stiffness, 2> split_stiffness(const VecX& K) {
  if (K.size() == 6) return {Stiffness(K), Stiffness(K)};
  if (K.size() == 12) return {Stiffness(K.head<6>()), Stiffness(K.tail<6>())};
  throw std::invalid_argument("stiffness action must have 6 or 12 entries");
}

VecX build_observation(const WorldModel& model, const WorldState& world, const WorldState& prev, const VecX& k_prev,
                       int tick, double mass, bool per_arm) {
  const ObservationLayout L{per_arm};
  if (k_prev.size() != (per_arm ? 12 : 6)) throw std::invalid_argument("K_prev has the wrong size");
  VecX o = VecX::Zero(L.size());
  for (Side s : kSides) {
    const Pose now = fk_pose(model.arm(s), world.arm(s).q);
    const Pose before = fk_pose(model.arm(s), prev.arm(s).q);
    put_pose(o, s == Side::left ? L.dx_left : L.dx_right, now.position - before.position,
             before.orientation.conjugate() * now.orientation);
    const VecX& q = world.arm(s).q;
    if (q.size() > 7) throw std::invalid_argument("observation holds at most 7 joints per arm");
    o.segment(s == Side::left ? L.q_left : L.q_right, q.size()) = q;
    const Wrench f = ee_wrench_estimate(model, world, s);
    o.segment<3>((s == Side::left ? L.f_left : L.f_right)) = f.force;
    o.segment<3>((s == Side::left ? L.f_left : L.f_right) + 3) = f.torque;
  }
  put_pose(o, L.object, world.object_pose.position, world.object_pose.orientation);
  o.segment(L.k_prev, k_prev.size()) = k_prev;
  o.segment<8>(L.t_emb()) = sinusoidal_embedding(tick, 8);
  o.segment<8>(L.m_emb()) = sinusoidal_embedding(mass, 8);
  return o;
}

VecX observation_scale(const ObservationLayout& L, const BinSet& bins) {
  VecX s = VecX::Ones(L.size());
  for (int at : {L.dx_left, L.dx_right}) {
    s.segment<3>(at).setConstant(100.0);  // per-tick motion is millimetres
    s.segment<3>(at + 4).setConstant(100.0);
  }
  s.segment<3>(L.object).setConstant(2.0);
  s.segment<12>(L.f_left).setConstant(0.05);
  for (int d = 0; d < bins.dims(); ++d) s(L.k_prev + d) = 1.0 / bins.range(d).hi;
  return s;
}

void PolicyConfig::validate() const {
  if (hidden < 1 || extractor_layers < 1 || head_layers < 1) throw std::invalid_argument("bad network shape");
  bins.trans.validate();
  bins.rot.validate();
}

StiffnessPolicy::StiffnessPolicy(const PolicyConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(seed);
  const ObservationLayout L = layout();
  scale_ = observation_scale(L, cfg_.bins);
  std::vector<int> ex{L.size()}, ph{cfg_.hidden}, vh{cfg_.hidden};
  for (int i = 0; i < cfg_.extractor_layers; ++i) ex.push_back(cfg_.hidden);
  for (int i = 0; i + 1 < cfg_.head_layers; ++i) {
    ph.push_back(cfg_.hidden);
    vh.push_back(cfg_.hidden);
  }
  ph.push_back(cfg_.bins.total_bins());
  vh.push_back(1);
  extractor_ = Mlp(ex, true, rng);
  policy_ = Mlp(ph, false, rng, 0.01);
  value_ = Mlp(vh, false, rng, 1.0);
}

void StiffnessPolicy::forward(const MatX& obs, MatX& logits, MatX& values, PolicyTape* tape) const {
  if (obs.rows() != scale_.size()) throw std::invalid_argument("observation has the wrong length");
  const MatX x = scale_.asDiagonal() * obs;
  const MatX feat = extractor_.forward(x, tape ? &tape->extractor : nullptr);
  logits = policy_.forward(feat, tape ? &tape->policy : nullptr);
  values = value_.forward(feat, tape ? &tape->value : nullptr);
  if (!logits.allFinite() || !values.allFinite()) throw PolicyFault("policy network produced non-finite outputs");
}

void StiffnessPolicy::backward(const PolicyTape& tape, const MatX& dlogits, const MatX& dvalues,
                               PolicyGrads& g) const {
  MatX dfeat = policy_.backward(tape.policy, dlogits, g.policy);
  dfeat += value_.backward(tape.value, dvalues, g.value);
  extractor_.backward(tape.extractor, dfeat, g.extractor);
}

PolicyGrads StiffnessPolicy::zero_grads() const {
  return {extractor_.zero_grads(), policy_.zero_grads(), value_.zero_grads()};
}

VecX log_softmax_segments(const VecX& logits, const BinSet& bins) {
  if (logits.size() != bins.total_bins()) throw std::invalid_argument("logit vector has the wrong length");
  VecX out(logits.size());
  for (int d = 0; d < bins.dims(); ++d) {
    const int o = bins.offset(d), n = bins.range(d).count();
    const auto seg = logits.segment(o, n);
    const double m = seg.maxCoeff();
    const double lse = m + std::log((seg.array() - m).exp().sum());
    out.segment(o, n) = seg.array() - lse;
  }
  return out;
}

ActionSample StiffnessPolicy::act(const VecX& obs, std::mt19937_64* rng) const {
  MatX logits, values;
  forward(obs, logits, values);
  const BinSet& bins = cfg_.bins;
  const VecX lp = log_softmax_segments(logits.col(0), bins);
  ActionSample a;
  a.value = values(0, 0);
  a.bins.resize(static_cast<size_t>(bins.dims()));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int d = 0; d < bins.dims(); ++d) {
    const int o = bins.offset(d), n = bins.range(d).count();
    int pick = 0;
    if (rng) {
      const double r = u(*rng);
      double c = 0.0;
      pick = n - 1;
      for (int i = 0; i < n; ++i) {
        c += std::exp(lp(o + i));
        if (r < c) {
          pick = i;
          break;
        }
      }
    } else {
      lp.segment(o, n).maxCoeff(&pick);
    }
    a.bins[static_cast<size_t>(d)] = pick;
    a.log_prob += lp(o + pick);
  }
  a.stiffness = stiffness_of(a.bins);
  return a;
}

VecX StiffnessPolicy::stiffness_of(const std::vector<int>& b) const {
  if (static_cast<int>(b.size()) != cfg_.bins.dims()) throw std::invalid_argument("action has the wrong size");
  VecX K(b.size());
  for (int d = 0; d < K.size(); ++d) K(d) = cfg_.bins.range(d).value(b[static_cast<size_t>(d)]);
  return K;
}

int StiffnessPolicy::num_params() const {
  return extractor_.num_params() + policy_.num_params() + value_.num_params();
}

VecX StiffnessPolicy::params() const {
  VecX p(num_params());
  int o = 0;
  pack(extractor_.layers(), p, o);
  pack(policy_.layers(), p, o);
  pack(value_.layers(), p, o);
  return p;
}

void StiffnessPolicy::set_params(const VecX& p) {
  if (p.size() != num_params()) throw std::invalid_argument("parameter vector has the wrong length");
  if (!p.allFinite()) throw PolicyFault("non-finite policy parameters");
  int o = 0;
  unpack(p, o, extractor_.layers());
  unpack(p, o, policy_.layers());
  unpack(p, o, value_.layers());
}

VecX StiffnessPolicy::flatten(const PolicyGrads& g) const {
  VecX p(num_params());
  int o = 0;
  pack(g.extractor, p, o);
  pack(g.policy, p, o);
  pack(g.value, p, o);
  return p;
}

void StiffnessPolicy::save(const std::filesystem::path& path) const {
  Json j;
  j["format"] = "davil-stiffness-policy";
  j["version"] = kCheckpointVersion;
  j["hidden"] = cfg_.hidden;
  j["extractor_layers"] = cfg_.extractor_layers;
  j["head_layers"] = cfg_.head_layers;
  j["bins"] = {{"translational", range_json(cfg_.bins.trans)},
               {"rotational", range_json(cfg_.bins.rot)},
               {"per_arm", cfg_.bins.per_arm}};
  const VecX p = params();
  j["params"] = std::vector<double>(p.data(), p.data() + p.size());
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write checkpoint " + path.string());
  f << j.dump() << '\n';
  if (!f) throw std::runtime_error("failed writing checkpoint " + path.string());
}

StiffnessPolicy StiffnessPolicy::load(const std::filesystem::path& path) {
  const Json j = read_json_file(path);
  if (j.value("format", "") != "davil-stiffness-policy") throw std::runtime_error(path.string() + " is not a policy checkpoint");
  if (j.at("version").get<int>() != kCheckpointVersion)
    throw std::runtime_error("unsupported checkpoint version in " + path.string());
  PolicyConfig cfg;
  cfg.hidden = j.at("hidden").get<int>();
  cfg.extractor_layers = j.at("extractor_layers").get<int>();
  cfg.head_layers = j.at("head_layers").get<int>();
  cfg.bins.trans = range_from(j.at("bins").at("translational"));
  cfg.bins.rot = range_from(j.at("bins").at("rotational"));
  cfg.bins.per_arm = j.at("bins").at("per_arm").get<bool>();
  StiffnessPolicy pol(cfg, 0);
  const auto v = j.at("params").get<std::vector<double>>();
  pol.set_params(Eigen::Map<const VecX>(v.data(), static_cast<Eigen::Index>(v.size())));
  return pol;
}

void EMATracker::update(const VecX& K, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("EMA alpha must lie in (0, 1)");
  if (!initialized) {
    ema = K;
    initialized = true;
    return;
  }
  if (K.size() != ema.size()) throw std::invalid_argument("EMA size mismatch");
  ema = alpha * ema + (1.0 - alpha) * K;
}

double EMATracker::deviation(const VecX& K) const {
  if (!initialized) return 0.0;
  return (K - ema).cwiseAbs().maxCoeff();
}

void RewardConfig::validate() const {
  if (w_track_ee < 0 || w_track_obj < 0 || w_goal < 0 || r_infeasible < 0 || r_ema < 0)
    throw std::invalid_argument("reward weights must be non-negative");
  if (!(ema_alpha > 0.0 && ema_alpha < 1.0)) throw std::invalid_argument("EMA alpha must lie in (0, 1)");
  if (!(ema_threshold > 0.0) || !(goal_radius > 0.0) || !(track_scale > 0.0))
    throw std::invalid_argument("EMA threshold, goal radius and tracking scale must be positive");
}

RewardTerms compute_reward(const TickInfo& tick, const Vec3& object_position, const Pose& goal, const VecX& K,
                           const EMATracker& ema, const RewardConfig& cfg) {
  RewardTerms r;
  if (tick.fault) {
    r.infeasible = cfg.r_infeasible;
    r.ema = cfg.use_ema ? cfg.r_ema : 0.0;
    return r;
  }
  const double e_ee = std::sqrt(tick.ee_error[0].squaredNorm() + tick.ee_error[1].squaredNorm());
  r.ee = cfg.w_track_ee * std::exp(-e_ee / cfg.track_scale);
  r.obj = cfg.w_track_obj * std::exp(-tick.object_error.norm() / cfg.track_scale);
  if (tick.stage == Stage::place && (object_position - goal.position).norm() <= cfg.goal_radius) r.goal = cfg.w_goal;
  if (tick.control.status != QPStatus::optimal) r.infeasible = cfg.r_infeasible;
  if (cfg.use_ema && ema.deviation(K) > cfg.ema_threshold) r.ema = cfg.r_ema;
  return r;
}

EpisodeRecord rollout(const Scene& scene, const EpisodeSpec& spec, const StiffnessPolicy& policy,
                      const RewardConfig& reward, std::uint64_t seed, const RolloutOptions& opt) {
  reward.validate();
  PickPlaceEnv env(scene, spec);
  std::mt19937_64 rng(seed);
  const bool per_arm = policy.config().bins.per_arm;
  VecX k_prev = middle_stiffness(policy.config().bins);
  EMATracker ema;
  EpisodeRecord rec;
  rec.steps.reserve(static_cast<size_t>(env.horizon()));
  while (!env.done()) {
    Transition t;
    t.obs = build_observation(env.model(), env.world(), env.previous_world(), k_prev, env.tick(), spec.mass, per_arm);
    const ActionSample a = policy.act(t.obs, opt.deterministic ? nullptr : &rng);
    t.action = a.bins;
    t.stiffness = a.stiffness;
    t.log_prob = a.log_prob;
    t.value = a.value;
    const std::array<Stiffness, 2> K = split_stiffness(a.stiffness);
    TickInfo info = env.step(K[0], K[1], opt.mode);
    t.terms = compute_reward(info, env.world().object_pose.position, spec.goal, a.stiffness, ema, reward);
    t.reward = t.terms.total();
    t.done = env.done();
    ema.update(a.stiffness, reward.ema_alpha);
    k_prev = a.stiffness;
    rec.episode_return += t.reward;
    if (info.fault) {
      rec.faulted = true;
      rec.fault_reason = info.fault_reason;
    }
    rec.steps.push_back(std::move(t));
    if (opt.keep_ticks) rec.ticks.push_back(std::move(info));
  }
  return rec;
}

}  // namespace davil
