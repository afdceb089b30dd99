#include "davil/config.hpp"

#include <set>

#include "davil/chain_io.hpp"

namespace davil {

namespace {

VecX vecx(const Json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const VecX>(v.data(), static_cast<Eigen::Index>(v.size()));
}

BinRange bin_range(const Json& j) {
  BinRange r{j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()};
  r.validate();
  return r;
}

void check_keys(const Json& j, const std::set<std::string>& allowed, const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key())) throw std::invalid_argument("unknown key '" + it.key() + "' in " + where);
}

}  // namespace

SuiteConfig suite_from_json(const Json& doc, const std::filesystem::path& base) {
  check_keys(doc,
             {"left_arm", "right_arm", "objects_file", "object_start", "goal_region", "ik_seed", "trajectory", "sim",
              "coupling", "controller", "bins", "policy", "reward", "ppo", "train", "evaluation"},
             "suite config");
  SuiteConfig c;
  Scene& s = c.scene;
  s.left = load_chain(base / doc.at("left_arm").get<std::string>());
  s.right = load_chain(base / doc.at("right_arm").get<std::string>());
  s.catalog = load_object_catalog(base / doc.at("objects_file").get<std::string>());
  s.object_start = pose_from_json(doc.at("object_start"));

  const Json& gr = doc.at("goal_region");
  s.goal_min = vec3_from_json(gr.at("min"));
  s.goal_max = vec3_from_json(gr.at("max"));
  s.goal_yaw = gr.value("yaw", 0.0);
  const Json& seed = doc.at("ik_seed");
  s.ik_seed = {vecx(seed.at("left")), vecx(seed.at("right"))};

  if (doc.contains("trajectory")) {
    const Json& t = doc.at("trajectory");
    if (t.contains("durations")) s.traj.durations = t.at("durations").get<std::array<double, 3>>();
    if (t.contains("waypoint_z")) {
      s.traj.z_min = t.at("waypoint_z").at(0).get<double>();
      s.traj.z_max = t.at("waypoint_z").at(1).get<double>();
    }
    if (t.contains("workspace_z")) {
      s.traj.workspace_z_min = t.at("workspace_z").at(0).get<double>();
      s.traj.workspace_z_max = t.at("workspace_z").at(1).get<double>();
    }
  }
  if (doc.contains("sim")) {
    const Json& j = doc.at("sim");
    s.sim.dt_sim = j.value("dt_sim", s.sim.dt_sim);
    s.sim.dt_ctrl = j.value("dt_ctrl", s.sim.dt_ctrl);
    s.sim.capture_radius = j.value("capture_radius", s.sim.capture_radius);
    if (j.contains("gravity")) s.sim.gravity = vec3_from_json(j.at("gravity"));
  }
  s.sim.validate();
  s.traj.dt_ctrl = s.sim.dt_ctrl;
  if (doc.contains("coupling")) {
    const Json& j = doc.at("coupling");
    GraspCoupling& g = s.coupling;
    g.linear_stiffness = j.value("linear_stiffness", g.linear_stiffness);
    g.angular_stiffness = j.value("angular_stiffness", g.angular_stiffness);
    g.linear_damping = j.value("linear_damping", g.linear_damping);
    g.angular_damping = j.value("angular_damping", g.angular_damping);
    g.breakaway = j.value("breakaway", g.breakaway);
  }
  s.coupling.validate();
  if (doc.contains("controller")) {
    const Json& j = doc.at("controller");
    ControllerGains& g = s.gains;
    g.w_imp = j.value("w_imp", g.w_imp);
    g.w_pos = j.value("w_pos", g.w_pos);
    g.k_null = j.value("k_null", g.k_null);
    g.tol = j.value("tol", g.tol);
    const std::string soc = j.value("soc", std::string("exact"));
    if (soc == "exact") g.soc = SocMode::exact;
    else if (soc == "box") g.soc = SocMode::box;
    else throw std::invalid_argument("controller.soc must be exact or box");
    g.lower_bound = j.value("lower_bound", g.lower_bound);
    g.max_infeasible = j.value("max_infeasible", g.max_infeasible);
    g.qp.max_iterations = j.value("qp_max_iterations", g.qp.max_iterations);
  }
  s.gains.validate();

  BinSet bins;
  if (doc.contains("bins")) {
    const Json& j = doc.at("bins");
    if (j.contains("translational")) bins.trans = bin_range(j.at("translational"));
    if (j.contains("rotational")) bins.rot = bin_range(j.at("rotational"));
    bins.per_arm = j.value("per_arm", false);
  }

  TrainConfig& t = c.train;
  t.policy.bins = bins;
  if (doc.contains("policy")) {
    const Json& j = doc.at("policy");
    t.policy.hidden = j.value("hidden", t.policy.hidden);
    t.policy.extractor_layers = j.value("extractor_layers", t.policy.extractor_layers);
    t.policy.head_layers = j.value("head_layers", t.policy.head_layers);
  }
  if (doc.contains("reward")) {
    const Json& j = doc.at("reward");
    RewardConfig& r = t.reward;
    r.w_track_ee = j.value("w_track_ee", r.w_track_ee);
    r.w_track_obj = j.value("w_track_obj", r.w_track_obj);
    r.w_goal = j.value("w_goal", r.w_goal);
    r.r_infeasible = j.value("r_infeasible", r.r_infeasible);
    r.r_ema = j.value("r_ema", r.r_ema);
    r.ema_alpha = j.value("ema_alpha", r.ema_alpha);
    r.ema_threshold = j.value("ema_threshold", r.ema_threshold);
    r.goal_radius = j.value("goal_radius", r.goal_radius);
    r.track_scale = j.value("track_scale", r.track_scale);
  }
  if (doc.contains("ppo")) {
    const Json& j = doc.at("ppo");
    PPOConfig& p = t.ppo;
    p.gamma = j.value("gamma", p.gamma);
    p.lambda = j.value("lambda", p.lambda);
    p.clip = j.value("clip", p.clip);
    p.epochs = j.value("epochs", p.epochs);
    p.minibatches = j.value("minibatches", p.minibatches);
    p.lr = j.value("lr", p.lr);
    p.value_coef = j.value("value_coef", p.value_coef);
    p.entropy_coef = j.value("entropy_coef", p.entropy_coef);
    p.max_grad_norm = j.value("max_grad_norm", p.max_grad_norm);
    p.normalize_advantages = j.value("normalize_advantages", p.normalize_advantages);
    p.grad_chunk = j.value("grad_chunk", p.grad_chunk);
    p.reward_scale = j.value("reward_scale", p.reward_scale);
  }
  const Json& tr = doc.at("train");
  t.objects = tr.at("objects").get<std::vector<std::string>>();
  t.masses = tr.at("masses").get<std::vector<double>>();
  t.iterations = tr.value("iterations", t.iterations);
  t.episodes_per_iteration = tr.value("episodes_per_iteration", t.episodes_per_iteration);
  t.seed = tr.value("seed", t.seed);
  t.validate();

  ExperimentConfig& e = c.experiment;
  const Json& ev = doc.at("evaluation");
  e.objects = ev.at("objects").get<std::vector<std::string>>();
  e.masses = ev.at("masses").get<std::vector<double>>();
  e.goal_count = ev.value("goals", e.goal_count);
  e.goal_seed = ev.value("goal_seed", e.goal_seed);
  e.seeds = ev.value("seeds", e.seeds);
  if (ev.contains("ic_stiffness")) e.ic_stiffness = vecx(ev.at("ic_stiffness"));
  e.bins = bins;
  e.goal_radius = t.reward.goal_radius;
  if (ev.contains("checkpoints"))
    for (auto it = ev.at("checkpoints").begin(); it != ev.at("checkpoints").end(); ++it) {
      method_from_string(it.key());
      e.checkpoints[it.key()] = it.value().get<std::string>();
    }
  e.validate();
  for (const auto& o : e.objects) s.catalog.find(o);
  for (const auto& o : t.objects) s.catalog.find(o);

  c.text = doc.dump();
  return c;
}

SuiteConfig load_suite(const std::filesystem::path& path) {
  SuiteConfig c = suite_from_json(read_json_file(path), path.parent_path());
  c.source = path;
  return c;
}

TrainConfig train_config_for(const SuiteConfig& suite, Method method) {
  if (!is_learned(method)) throw std::invalid_argument(std::string(method_name(method)) + " is not trained");
  TrainConfig t = suite.train;
  t.mode = method_control(method);
  t.reward.use_ema = method != Method::ours_no_ema;
  return t;
}

}  // namespace davil
