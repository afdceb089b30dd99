#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "davil/qp_control.hpp"
#include "davil/sim_world.hpp"
#include "davil/traj_gen.hpp"

namespace davil {

/// Everything about the workcell that does not change between episodes.
struct Scene {
  ChainModel left, right;
  ObjectCatalog catalog;
  Pose object_start;
  Vec3 goal_min = Vec3::Zero(), goal_max = Vec3::Zero();  // goal positions, uniform in this box
  double goal_yaw = 0.0;                                   // goal yaw uniform in [-goal_yaw, goal_yaw]
  std::array<VecX, 2> ik_seed;
  TrajectorySpec traj;  // start, goal and seed are filled per episode
  SimConfig sim;
  GraspCoupling coupling;
  ControllerGains gains;

  const ChainModel& arm(Side s) const { return s == Side::left ? left : right; }
};

struct EpisodeSpec {
  std::string object;
  double mass = 1.0;
  Pose goal;
  std::uint64_t seed = 0;  // waypoint height
};

std::vector<Pose> sample_goals(const Scene& scene, int count, std::uint64_t seed);

/// qp: the optimization-based controller. classical: tau = J'f + h, clamped to the limits.
enum class ControlMode { qp, classical };

/// Classical task-space impedance torque with the same damping design as the QP controller.
VecX classical_impedance_torque(const ChainModel& chain, const JointState& js, const ReferenceSample& ref,
                                const Stiffness& K);

struct TickInfo {
  int tick = 0;
  double time = 0.0;  // tick end, tick * dt_ctrl
  Stage stage = Stage::grasp;
  ControlOutput control;
  ReferenceSample object_ref;  // at the end of the tick
  Pose object_pose;
  Vec6 object_error = Vec6::Zero();
  std::array<Vec6, 2> ee_error{Vec6::Zero(), Vec6::Zero()};
  double object_position_error = 0.0;
  bool slipped = false;
  bool fault = false;
  std::string fault_reason;
};

/// One pick-and-place episode: hold at the start (object on its support), lift to the waypoint, place at the goal.
class PickPlaceEnv {
 public:
  PickPlaceEnv(const Scene& scene, const EpisodeSpec& spec);

  int horizon() const { return horizon_; }
  int tick() const { return tick_; }
  bool done() const { return done_; }
  Stage stage() const { return traj_.stage_at(tick_ * traj_.spec().dt_ctrl); }
  const WorldModel& model() const { return model_; }
  const WorldState& world() const { return world_; }
  const WorldState& previous_world() const { return prev_; }
  const ObjectTrajectory& trajectory() const { return traj_; }
  const EpisodeSpec& spec() const { return spec_; }
  const std::array<Pose, 2>& grasp_offsets() const { return offsets_; }
  const DualArmController& controller() const { return *ctl_; }

  ReferenceSample object_reference(int tick) const;
  std::array<ReferenceSample, 2> ee_references(int tick) const;

  /// Apply one control tick. Faults end the episode (done() turns true, info.fault set).
  TickInfo step(const Stiffness& k_left, const Stiffness& k_right, ControlMode mode);

 private:
  const Scene* scene_;
  EpisodeSpec spec_;
  WorldModel model_;
  ObjectTrajectory traj_;
  std::optional<DualArmController> ctl_;
  WorldState world_, prev_;
  std::array<Pose, 2> offsets_;  // EE pose in the object frame
  int horizon_ = 0;
  int tick_ = 0;
  bool done_ = false;
  bool released_ = false;
};

}  // namespace davil
