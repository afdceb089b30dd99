#pragma once
// Independent reference computations used only by the test suites. Nothing in
// here calls the library's kinematics or dynamics routines.

#include <cmath>
#include <random>
#include <vector>

#include "davil/rigid_body.hpp"

namespace oracle {

using davil::ChainModel;
using davil::JointLimits;
using davil::JointType;
using davil::LinkSpec;
using davil::Mat3;
using davil::MatX;
using davil::Pose;
using davil::Vec3;
using davil::Vec6;
using davil::VecX;
using Mat4 = Eigen::Matrix4d;

inline Mat4 homogeneous(const Pose& p) {
  Mat4 T = Mat4::Identity();
  const auto& q = p.orientation;
  const double w = q.w(), x = q.x(), y = q.y(), z = q.z();
  T(0, 0) = 1 - 2 * (y * y + z * z);
  T(0, 1) = 2 * (x * y - z * w);
  T(0, 2) = 2 * (x * z + y * w);
  T(1, 0) = 2 * (x * y + z * w);
  T(1, 1) = 1 - 2 * (x * x + z * z);
  T(1, 2) = 2 * (y * z - x * w);
  T(2, 0) = 2 * (x * z - y * w);
  T(2, 1) = 2 * (y * z + x * w);
  T(2, 2) = 1 - 2 * (x * x + y * y);
  T.block<3, 1>(0, 3) = p.position;
  return T;
}

// Rodrigues rotation about a unit axis.
inline Mat4 joint_motion(JointType type, const Vec3& axis, double q) {
  Mat4 T = Mat4::Identity();
  if (type == JointType::prismatic) {
    T.block<3, 1>(0, 3) = q * axis;
    return T;
  }
  Mat3 K;
  K << 0, -axis.z(), axis.y(), axis.z(), 0, -axis.x(), -axis.y(), axis.x(), 0;
  T.block<3, 3>(0, 0) = Mat3::Identity() + std::sin(q) * K + (1 - std::cos(q)) * K * K;
  return T;
}

struct NaiveFrames {
  std::vector<Mat4> link;    // after joint motion
  std::vector<Mat4> joint;   // before joint motion
  Mat4 ee;
};

inline NaiveFrames naive_frames(const ChainModel& c, const VecX& q) {
  NaiveFrames f;
  Mat4 T = homogeneous(c.base());
  for (int i = 0; i < c.dof(); ++i) {
    const LinkSpec& l = c.link(i);
    const Mat4 J = T * homogeneous(l.parent_to_joint);
    f.joint.push_back(J);
    T = J * joint_motion(l.type, l.axis, q(i));
    f.link.push_back(T);
  }
  f.ee = T * homogeneous(c.tool());
  return f;
}

// Jacobian of an arbitrary point rigidly attached to link k (columns > k are zero).
inline MatX point_jacobian(const ChainModel& c, const NaiveFrames& f, int k, const Vec3& p) {
  MatX J = MatX::Zero(6, c.dof());
  for (int i = 0; i <= k; ++i) {
    const Vec3 z = f.joint[static_cast<size_t>(i)].block<3, 3>(0, 0) * c.link(i).axis;
    const Vec3 o = f.joint[static_cast<size_t>(i)].block<3, 1>(0, 3);
    if (c.link(i).type == JointType::revolute) {
      J.block<3, 1>(0, i) = z.cross(p - o);
      J.block<3, 1>(3, i) = z;
    } else {
      J.block<3, 1>(0, i) = z;
    }
  }
  return J;
}

inline double kinetic_energy(const ChainModel& c, const VecX& q, const VecX& dq) {
  const NaiveFrames f = naive_frames(c, q);
  double T = 0;
  for (int i = 0; i < c.dof(); ++i) {
    const Mat4& F = f.link[static_cast<size_t>(i)];
    const Vec3 com = (F * c.link(i).com.homogeneous()).head<3>();
    const MatX J = point_jacobian(c, f, i, com);
    const Vec3 v = J.topRows(3) * dq;
    const Vec3 w = J.bottomRows(3) * dq;
    const Mat3 R = F.block<3, 3>(0, 0);
    T += 0.5 * c.link(i).mass * v.dot(v) + 0.5 * w.dot(R * c.link(i).inertia * R.transpose() * w);
    T += 0.5 * c.link(i).armature * dq(i) * dq(i);  // rotor spinning with the joint rate
  }
  return T;
}

inline MatX naive_mass_matrix(const ChainModel& c, const VecX& q) {
  const NaiveFrames f = naive_frames(c, q);
  MatX M = MatX::Zero(c.dof(), c.dof());
  for (int i = 0; i < c.dof(); ++i) {
    const Mat4& F = f.link[static_cast<size_t>(i)];
    const Vec3 com = (F * c.link(i).com.homogeneous()).head<3>();
    const MatX J = point_jacobian(c, f, i, com);
    const Mat3 R = F.block<3, 3>(0, 0);
    M += c.link(i).mass * J.topRows(3).transpose() * J.topRows(3) +
         J.bottomRows(3).transpose() * R * c.link(i).inertia * R.transpose() * J.bottomRows(3);
    M(i, i) += c.link(i).armature;
  }
  return M;
}

inline double potential_energy(const ChainModel& c, const VecX& q) {
  const NaiveFrames f = naive_frames(c, q);
  double V = 0;
  for (int i = 0; i < c.dof(); ++i) {
    const Vec3 com = (f.link[static_cast<size_t>(i)] * c.link(i).com.homogeneous()).head<3>();
    V -= c.link(i).mass * c.gravity().dot(com);
  }
  return V;
}

// h = Mdot dq - dT/dq + dV/dq by central differences on the naive model.
inline VecX lagrangian_bias(const ChainModel& c, const VecX& q, const VecX& dq, double eps = 1e-6) {
  const int n = c.dof();
  const MatX Mdot = (naive_mass_matrix(c, q + eps * dq) - naive_mass_matrix(c, q - eps * dq)) / (2 * eps);
  VecX h = Mdot * dq;
  for (int k = 0; k < n; ++k) {
    VecX qp = q, qm = q;
    qp(k) += eps;
    qm(k) -= eps;
    const double dT = (0.5 * dq.dot(naive_mass_matrix(c, qp) * dq) - 0.5 * dq.dot(naive_mass_matrix(c, qm) * dq)) / (2 * eps);
    const double dV = (potential_energy(c, qp) - potential_energy(c, qm)) / (2 * eps);
    h(k) += -dT + dV;
  }
  return h;
}

// Rotation vector of R via the matrix logarithm.
inline Vec3 log_map(const Mat3& R) {
  const double c = std::clamp((R.trace() - 1.0) / 2.0, -1.0, 1.0);
  const double theta = std::acos(c);
  const Vec3 vee(R(2, 1) - R(1, 2), R(0, 2) - R(2, 0), R(1, 0) - R(0, 1));
  if (theta < 1e-8) return 0.5 * vee;
  if (M_PI - theta < 1e-6) {
    // near pi: axis from the symmetric part
    const Mat3 B = (R + Mat3::Identity()) / 2.0;
    int k;
    B.diagonal().maxCoeff(&k);
    Vec3 axis = B.col(k) / std::sqrt(B(k, k));
    if (axis.dot(vee) < 0) axis = -axis;
    return theta * axis.normalized();
  }
  return theta / (2.0 * std::sin(theta)) * vee;
}

inline Eigen::Quaterniond random_quat(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0, 1);
  Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
  q.normalize();
  return q;
}

inline Vec3 random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0, 1);
  return Vec3(n(rng), n(rng), n(rng)).normalized();
}

inline Mat3 random_spd_inertia(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.01, 0.2);
  const Mat3 R = random_quat(rng).toRotationMatrix();
  const Vec3 d(u(rng), u(rng), u(rng));
  Mat3 I = R * d.asDiagonal() * R.transpose();
  return 0.5 * (I + I.transpose());
}

inline ChainModel random_chain(std::mt19937_64& rng, int n, bool allow_prismatic = true) {
  std::uniform_real_distribution<double> u(-0.3, 0.3), um(0.2, 3.0), u01(0, 1);
  std::vector<LinkSpec> links;
  JointLimits lim;
  lim.q_min = VecX::Constant(n, -10);
  lim.q_max = VecX::Constant(n, 10);
  lim.dq_min = VecX::Constant(n, -10);
  lim.dq_max = VecX::Constant(n, 10);
  lim.tau_min = VecX::Constant(n, -100);
  lim.tau_max = VecX::Constant(n, 100);
  for (int i = 0; i < n; ++i) {
    LinkSpec l;
    l.mass = um(rng);
    l.com = Vec3(u(rng), u(rng), u(rng));
    l.inertia = random_spd_inertia(rng);
    l.axis = random_unit(rng);
    l.parent_to_joint.position = Vec3(u(rng), u(rng), u(rng));
    l.parent_to_joint.orientation = random_quat(rng);
    l.type = (allow_prismatic && u01(rng) < 0.2) ? JointType::prismatic : JointType::revolute;
    links.push_back(l);
  }
  Pose base;
  base.position = Vec3(u(rng), u(rng), u(rng));
  base.orientation = random_quat(rng);
  Pose tool;
  tool.position = Vec3(u(rng), u(rng), u(rng));
  tool.orientation = random_quat(rng);
  return ChainModel("random", std::move(links), std::move(lim), Vec3(0.3, -0.2, -9.81), base, tool);
}

inline VecX random_vec(std::mt19937_64& rng, int n, double scale) {
  std::uniform_real_distribution<double> u(-scale, scale);
  VecX v(n);
  for (int i = 0; i < n; ++i) v(i) = u(rng);
  return v;
}

// Planar chain in the x-y plane rotating about z, point masses at link tips.
inline ChainModel planar_chain(const std::vector<double>& lengths, const std::vector<double>& masses,
                               Vec3 gravity = Vec3(0, 0, -9.81)) {
  const int n = static_cast<int>(lengths.size());
  std::vector<LinkSpec> links;
  JointLimits lim;
  lim.q_min = VecX::Constant(n, -10);
  lim.q_max = VecX::Constant(n, 10);
  lim.dq_min = VecX::Constant(n, -50);
  lim.dq_max = VecX::Constant(n, 50);
  lim.tau_min = VecX::Constant(n, -1000);
  lim.tau_max = VecX::Constant(n, 1000);
  for (int i = 0; i < n; ++i) {
    LinkSpec l;
    l.mass = masses[static_cast<size_t>(i)];
    l.com = Vec3(lengths[static_cast<size_t>(i)], 0, 0);
    l.inertia = Mat3::Identity() * 1e-12;  // effectively a point mass
    l.axis = Vec3::UnitZ();
    if (i > 0) l.parent_to_joint.position = Vec3(lengths[static_cast<size_t>(i - 1)], 0, 0);
    links.push_back(l);
  }
  Pose tool;
  tool.position = Vec3(lengths.back(), 0, 0);
  return ChainModel("planar", std::move(links), std::move(lim), gravity, Pose{}, tool);
}

}  // namespace oracle
