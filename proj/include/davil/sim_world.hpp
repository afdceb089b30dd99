#pragma once

#include <array>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "davil/rigid_body.hpp"

namespace davil {

enum class Side { left = 0, right = 1 };
inline constexpr std::array<Side, 2> kSides{Side::left, Side::right};
inline size_t idx(Side s) { return static_cast<size_t>(s); }
inline const char* side_name(Side s) { return s == Side::left ? "left" : "right"; }

/// Rigid object held by the two grippers. Grasp frames are given in the object frame.
struct ObjectSpec {
  std::string name = "object";
  double mass = 1.0;
  Mat3 inertia = Mat3::Identity() * 0.01;
  std::array<Pose, 2> grasps;
  Vec3 size = Vec3::Zero();  // box extents when built from a primitive

  void validate() const;
  /// Same geometry, different mass; inertia scales linearly with mass.
  ObjectSpec with_mass(double m) const;
  double grasp_width() const { return (grasps[0].position - grasps[1].position).norm(); }
};

ObjectSpec box_object(std::string name, const Vec3& size, double mass, std::array<Pose, 2> grasps);

struct ObjectCatalog {
  std::vector<ObjectSpec> objects;
  std::vector<double> mass_set;

  const ObjectSpec& find(const std::string& name) const;
};

ObjectCatalog load_object_catalog(const std::filesystem::path& path);

/// Compliant weld between a gripper and its grasp frame.
struct GraspCoupling {
  double linear_stiffness = 1e4;    // N/m
  double angular_stiffness = 100.0; // N m/rad
  double linear_damping = 200.0;    // N s/m   (2 sqrt(k m), m = 1 kg)
  double angular_damping = 2.0;     // N m s/rad (2 sqrt(k I), I = 0.01 kg m^2)
  double breakaway = 0.05;          // m

  void validate() const;
};

struct SimConfig {
  double dt_sim = 1e-4;
  double dt_ctrl = 1e-2;
  Vec3 gravity = Vec3(0.0, 0.0, -9.81);
  double capture_radius = 5e-3;

  void validate() const;
  int substeps() const;
};

struct WorldState {
  std::array<JointState, 2> arms;
  Pose object_pose;
  Twist object_twist;
  double time = 0.0;
  std::array<bool, 2> engaged{false, false};
  std::array<Pose, 2> rest_offset;  // gripper pose in its grasp frame, captured at attach
  bool object_supported = false;    // object resting on a fixture: held still, forces ignored

  JointState& arm(Side s) { return arms[idx(s)]; }
  const JointState& arm(Side s) const { return arms[idx(s)]; }
};

/// Static description of the world: both arms, the object and the coupling.
struct WorldModel {
  std::array<ChainModel, 2> arms;
  ObjectSpec object;
  GraspCoupling coupling;
  bool has_object = true;

  WorldModel() = default;
  WorldModel(ChainModel left, ChainModel right, ObjectSpec object, GraspCoupling coupling, const SimConfig& cfg,
             bool has_object = true);

  const ChainModel& arm(Side s) const { return arms[idx(s)]; }
};

class SimulationFault : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class GraspError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Pose/twist of the point on the object each gripper is welded to.
struct Anchor {
  Pose pose;
  Twist twist;
};

Pose grasp_frame_world(const Pose& object_pose, const ObjectSpec& object, Side s);
Anchor grasp_anchor(const WorldState& w, const ObjectSpec& object, Side s);

/// Engage both grasps. Records each gripper's offset from its grasp frame so the
/// coupling wrench is zero at the attach instant. Throws GraspError when a gripper
/// is farther than capture_radius from its grasp frame.
WorldState attach_grasps(WorldState w, const ObjectSpec& object, const Pose& left_ee, const Pose& right_ee,
                         double capture_radius);

/// Spring-damper wrench applied to the object at the anchor. Zero once the
/// position error exceeds the breakaway displacement.
Wrench grasp_wrench(const Pose& ee_pose, const Twist& ee_twist, const Pose& anchor_pose, const Twist& anchor_twist,
                    const GraspCoupling& c);
bool exceeds_breakaway(const Pose& ee_pose, const Pose& anchor_pose, const GraspCoupling& c);

struct StepTrace {
  std::array<Vec3, 2> impulse{Vec3::Zero(), Vec3::Zero()};  // linear impulse delivered to the object
  std::array<Wrench, 2> last_wrench;                         // on the object, last substep
  bool slipped = false;
};

/// Advance by dt_ctrl with zero-order-held torques (clamped to the chain limits).
/// Throws SimulationFault when the state stops being finite.
WorldState step(const WorldModel& model, WorldState w, const VecX& tau_left, const VecX& tau_right,
                const SimConfig& cfg, StepTrace* trace = nullptr);

/// Wrench the object exerts on the gripper (what a wrist F/T sensor reads).
Wrench ee_wrench_estimate(const WorldModel& model, const WorldState& w, Side s);

/// Rows: time, q_left[*], q_right[*], object pose (px py pz qw qx qy qz), engaged flags.
void write_world_csv(const std::filesystem::path& path, const std::vector<WorldState>& states);

}  // namespace davil
