#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>
#include <vector>

namespace davil {

using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat3 = Eigen::Matrix3d;
using Mat6 = Eigen::Matrix<double, 6, 6>;
using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;
using Jacobian = Eigen::Matrix<double, 6, Eigen::Dynamic>;

/// Position plus unit quaternion (w, x, y, z).
struct Pose {
  Vec3 position = Vec3::Zero();
  Eigen::Quaterniond orientation = Eigen::Quaterniond::Identity();

  static Pose identity() { return {}; }
  Eigen::Isometry3d isometry() const;
  static Pose from_isometry(const Eigen::Isometry3d& T);
  Pose operator*(const Pose& rhs) const;
  Pose inverse() const;
};

struct Twist {
  Vec3 linear = Vec3::Zero();
  Vec3 angular = Vec3::Zero();

  Vec6 stacked() const;
  static Twist from_stacked(const Vec6& v);
};

struct Wrench {
  Vec3 force = Vec3::Zero();
  Vec3 torque = Vec3::Zero();

  Vec6 stacked() const;
  static Wrench from_stacked(const Vec6& v);
};

enum class JointType { revolute, prismatic };

struct LinkSpec {
  double mass = 1.0;
  Vec3 com = Vec3::Zero();           // in the link (post-joint) frame
  Mat3 inertia = Mat3::Identity();   // about the COM, link frame axes
  Vec3 axis = Vec3::UnitZ();         // joint axis in the pre-joint frame
  Pose parent_to_joint;              // fixed transform from the previous link frame
  JointType type = JointType::revolute;
  double armature = 0.0;             // reflected rotor inertia on the joint axis
};

struct JointLimits {
  VecX q_min, q_max;
  VecX dq_min, dq_max;
  VecX tau_min, tau_max;
};

/// Serial-chain manipulator. Immutable once built; validates its invariants
/// on construction and throws std::invalid_argument when they fail.
class ChainModel {
 public:
  ChainModel() = default;
  ChainModel(std::string name, std::vector<LinkSpec> links, JointLimits limits,
             Vec3 gravity = Vec3(0.0, 0.0, -9.81), Pose base = {}, Pose tool = {});

  int dof() const { return static_cast<int>(links_.size()); }
  const std::string& name() const { return name_; }
  const std::vector<LinkSpec>& links() const { return links_; }
  const LinkSpec& link(int i) const { return links_[static_cast<size_t>(i)]; }
  const JointLimits& limits() const { return limits_; }
  const Vec3& gravity() const { return gravity_; }
  const Pose& base() const { return base_; }
  const Pose& tool() const { return tool_; }

  ChainModel with_gravity(const Vec3& g) const;
  ChainModel with_base(const Pose& base) const;

 private:
  std::string name_;
  std::vector<LinkSpec> links_;
  JointLimits limits_;
  Vec3 gravity_ = Vec3(0.0, 0.0, -9.81);
  Pose base_;
  Pose tool_;
};

struct JointState {
  VecX q, dq, ddq;

  static JointState zeros(int n);
  bool finite() const;
};

/// World-frame kinematic quantities of every link for one (q, dq) pair.
/// Accelerations are the velocity-product (bias) terms, i.e. with ddq = 0.
struct ChainKinematics {
  std::vector<Eigen::Isometry3d> frames;  // link frames after joint motion
  std::vector<Vec3> axes;                 // joint axes, world frame
  std::vector<Vec3> joint_origins;        // points on the joint axes
  Eigen::Isometry3d ee = Eigen::Isometry3d::Identity();
};

ChainKinematics chain_kinematics(const ChainModel& chain, const VecX& q);

Pose fk_pose(const ChainModel& chain, const VecX& q);

/// Everything the controller and simulator need for one arm at one instant.
struct ArmDynamics {
  ChainKinematics kin;
  Pose ee;
  Jacobian J;
  MatX M;
  VecX h;
  Vec6 jdot_qdot = Vec6::Zero();
};

ArmDynamics arm_dynamics(const ChainModel& chain, const VecX& q, const VecX& dq, bool with_jdot = true);

/// Geometric Jacobian in the base (world) frame; rows: linear then angular.
Jacobian jacobian(const ChainModel& chain, const VecX& q);
Jacobian jacobian(const ChainModel& chain, const ChainKinematics& kin);

/// End-effector acceleration at ddq = 0, i.e. Jdot * dq.
Vec6 jdot_qdot(const ChainModel& chain, const VecX& q, const VecX& dq);

/// Joint-space inertia via the composite-rigid-body algorithm.
MatX mass_matrix(const ChainModel& chain, const VecX& q);
MatX mass_matrix(const ChainModel& chain, const ChainKinematics& kin);

/// Recursive Newton-Euler inverse dynamics, gravity included.
VecX inverse_dynamics(const ChainModel& chain, const VecX& q, const VecX& dq, const VecX& ddq);

/// h(q, dq): Coriolis, centripetal and gravity terms (RNEA with ddq = 0).
VecX bias_forces(const ChainModel& chain, const VecX& q, const VecX& dq);
VecX bias_forces(const ChainModel& chain, const ChainKinematics& kin, const VecX& dq);

/// Lambda = (J M^-1 J^T + ridge I)^-1. Throws when M is not positive-definite.
Mat6 task_space_inertia(const MatX& M, const Jacobian& J, double ridge = 1e-6);

/// Inverse of task_space_inertia, computed without any inversion.
Mat6 task_space_mobility(const MatX& M, const Jacobian& J, double ridge = 1e-6);

/// (p_r - p, rotation vector of R_r R^T); angle in [0, pi].
Vec6 pose_error(const Pose& x_r, const Pose& x);

Vec3 rotation_vector(const Eigen::Quaterniond& q);
Eigen::Quaterniond quat_exp(const Vec3& rotvec);

/// Total mechanical energy (kinetic + gravitational potential) of the chain.
double chain_energy(const ChainModel& chain, const VecX& q, const VecX& dq);

struct IkOptions {
  int max_iterations = 500;
  double damping = 1e-2;
  double tolerance = 1e-10;
  double posture_gain = 0.0;  // pull toward the seed inside the null space
};

struct IkResult {
  VecX q;
  bool converged = false;
  double residual = 0.0;
};

/// Damped least-squares inverse kinematics, clamped to joint limits.
IkResult solve_ik(const ChainModel& chain, const Pose& target, const VecX& seed,
                  const IkOptions& opts = {});

void check_dim(const VecX& v, int n, const char* what);

}  // namespace davil
