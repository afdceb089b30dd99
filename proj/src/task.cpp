#include "davil/task.hpp"

#include <cmath>
#include <random>

namespace davil {

std::vector<Pose> sample_goals(const Scene& scene, int count, std::uint64_t seed) {
  if (count < 1) throw std::invalid_argument("goal count must be at least 1");
  std::mt19937_64 rng(seed);
  std::vector<Pose> goals;
  goals.reserve(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) {
    Pose g = scene.object_start;
    for (int a = 0; a < 3; ++a) {
      if (scene.goal_min(a) > scene.goal_max(a)) throw std::invalid_argument("empty goal box");
      if (scene.goal_min(a) < scene.goal_max(a)) {
        std::uniform_real_distribution<double> u(scene.goal_min(a), scene.goal_max(a));
        g.position(a) = u(rng);
      } else {
        g.position(a) = scene.goal_min(a);
      }
    }
    if (scene.goal_yaw > 0.0) {
      std::uniform_real_distribution<double> u(-scene.goal_yaw, scene.goal_yaw);
      g.orientation = (Eigen::Quaterniond(Eigen::AngleAxisd(u(rng), Vec3::UnitZ())) * g.orientation).normalized();
    }
    goals.push_back(g);
  }
  return goals;
}

VecX classical_impedance_torque(const ChainModel& chain, const JointState& js, const ReferenceSample& ref,
                                const Stiffness& K) {
  const ArmDynamics d = arm_dynamics(chain, js.q, js.dq, false);
  const Mat6 Lambda = task_space_inertia(d.M, d.J);
  const Mat6 D = damping_from_stiffness(Lambda, K);
  const Wrench f = impedance_wrench(K, D, ref.pose, ref.twist, d.ee, Twist::from_stacked(d.J * js.dq));
  const VecX tau = d.J.transpose() * f.stacked() + d.h;
  return tau.cwiseMax(chain.limits().tau_min).cwiseMin(chain.limits().tau_max);
}

PickPlaceEnv::PickPlaceEnv(const Scene& scene, const EpisodeSpec& spec)
    : scene_(&scene),
      spec_(spec),
      model_(scene.left, scene.right, scene.catalog.find(spec.object).with_mass(spec.mass), scene.coupling, scene.sim),
      traj_([&] {
        TrajectorySpec t = scene.traj;
        t.start = scene.object_start;
        t.goal = spec.goal;
        t.seed = spec.seed;
        t.dt_ctrl = scene.sim.dt_ctrl;
        return t;
      }()) {
  world_.object_pose = scene.object_start;
  world_.object_supported = true;
  std::array<Pose, 2> ee;
  for (Side s : kSides) {
    const Pose target = grasp_frame_world(world_.object_pose, model_.object, s);
    IkOptions opt;
    opt.max_iterations = 2000;
    const IkResult ik = solve_ik(model_.arm(s), target, scene.ik_seed[idx(s)], opt);
    if (ik.residual > 1e-6)
      throw GraspError(std::string(side_name(s)) + " arm cannot reach its grasp on " + spec.object +
                       " (IK residual " + std::to_string(ik.residual) + ")");
    world_.arm(s) = JointState::zeros(model_.arm(s).dof());
    world_.arm(s).q = ik.q;
    ee[idx(s)] = fk_pose(model_.arm(s), ik.q);
  }
  world_ = attach_grasps(world_, model_.object, ee[0], ee[1], scene.sim.capture_radius);
  for (Side s : kSides) offsets_[idx(s)] = world_.object_pose.inverse() * ee[idx(s)];
  prev_ = world_;
  horizon_ = traj_.spec().ticks();
  ctl_.emplace(model_, scene.gains, scene.sim.dt_ctrl);
  ctl_->reset(world_);
}

ReferenceSample PickPlaceEnv::object_reference(int tick) const {
  return traj_.sample(tick * traj_.spec().dt_ctrl);
}

std::array<ReferenceSample, 2> PickPlaceEnv::ee_references(int tick) const {
  const ReferenceSample o = object_reference(tick);
  return {object_to_ee(o, offsets_[0]), object_to_ee(o, offsets_[1])};
}

TickInfo PickPlaceEnv::step(const Stiffness& k_left, const Stiffness& k_right, ControlMode mode) {
  if (done_) throw std::logic_error("step() on a finished episode");
  TickInfo info;
  info.tick = tick_;
  info.stage = stage();
  if (info.stage != Stage::grasp && !released_) {
    world_.object_supported = false;
    released_ = true;
  }
  const std::array<ReferenceSample, 2> ref = ee_references(tick_);
  try {
    if (mode == ControlMode::qp) {
      info.control = ctl_->step(world_, ref[0], ref[1], k_left, k_right, info.stage != Stage::grasp);
    } else {
      info.control.status = QPStatus::optimal;
      info.control.tau[0] = classical_impedance_torque(model_.arm(Side::left), world_.arm(Side::left), ref[0], k_left);
      info.control.tau[1] = classical_impedance_torque(model_.arm(Side::right), world_.arm(Side::right), ref[1], k_right);
    }
    StepTrace trace;
    WorldState next = davil::step(model_, world_, info.control.tau[0], info.control.tau[1], scene_->sim, &trace);
    prev_ = world_;
    world_ = std::move(next);
    info.slipped = trace.slipped;
  } catch (const ControllerFault& e) {
    info.fault = true;
    info.fault_reason = std::string("controller: ") + e.what();
  } catch (const SimulationFault& e) {
    info.fault = true;
    info.fault_reason = std::string("simulation: ") + e.what();
  }
  if (info.fault)
    for (Side s : kSides)
      if (info.control.tau[idx(s)].size() == 0) info.control.tau[idx(s)] = VecX::Zero(model_.arm(s).dof());
  ++tick_;
  info.time = tick_ * traj_.spec().dt_ctrl;
  info.object_ref = object_reference(tick_);
  info.object_pose = world_.object_pose;
  info.object_error = pose_error(info.object_ref.pose, world_.object_pose);
  info.object_position_error = (info.object_ref.pose.position - world_.object_pose.position).norm();
  const std::array<ReferenceSample, 2> ref_next = ee_references(tick_);
  for (Side s : kSides)
    info.ee_error[idx(s)] = pose_error(ref_next[idx(s)].pose, fk_pose(model_.arm(s), world_.arm(s).q));
  if (info.fault || tick_ >= horizon_) done_ = true;
  return info;
}

}  // namespace davil
