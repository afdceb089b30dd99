#include "davil/rigid_body.hpp"

#include <cmath>

namespace davil {

namespace {

bool unit_quaternion(const Eigen::Quaterniond& q) { return std::abs(q.norm() - 1.0) <= 1e-9; }

// Velocity-product recursion shared by RNEA and Jdot*dq.
struct LinkMotion {
  std::vector<Vec3> omega, alpha, lin_acc;  // angular velocity/acceleration, origin acceleration
};

LinkMotion propagate_motion(const ChainModel& chain, const ChainKinematics& kin, const VecX& dq,
                            const VecX* ddq, const Vec3& base_acc) {
  const int n = chain.dof();
  LinkMotion m;
  m.omega.resize(static_cast<size_t>(n));
  m.alpha.resize(static_cast<size_t>(n));
  m.lin_acc.resize(static_cast<size_t>(n));
  Vec3 w = Vec3::Zero(), al = Vec3::Zero(), a = base_acc;
  Vec3 prev_origin = chain.base().position;
  for (int i = 0; i < n; ++i) {
    const auto k = static_cast<size_t>(i);
    const Vec3& z = kin.axes[k];
    const Vec3 origin = kin.frames[k].translation();
    const Vec3 r = origin - prev_origin;
    const double qd = dq(i);
    const double qdd = ddq ? (*ddq)(i) : 0.0;
    Vec3 a_next = a + al.cross(r) + w.cross(w.cross(r));
    Vec3 w_next = w, al_next = al;
    if (chain.link(i).type == JointType::revolute) {
      w_next += z * qd;
      al_next += z * qdd + w.cross(z) * qd;
    } else {
      a_next += z * qdd + 2.0 * w.cross(z) * qd;
    }
    w = w_next;
    al = al_next;
    a = a_next;
    m.omega[k] = w;
    m.alpha[k] = al;
    m.lin_acc[k] = a;
    prev_origin = origin;
  }
  return m;
}

}  // namespace

Eigen::Isometry3d Pose::isometry() const {
  Eigen::Isometry3d T = Eigen::Isometry3d::Identity();
  T.linear() = orientation.normalized().toRotationMatrix();
  T.translation() = position;
  return T;
}

Pose Pose::from_isometry(const Eigen::Isometry3d& T) {
  Pose p;
  p.position = T.translation();
  p.orientation = Eigen::Quaterniond(T.linear()).normalized();
  if (p.orientation.w() < 0.0) p.orientation.coeffs() *= -1.0;
  return p;
}

Pose Pose::operator*(const Pose& rhs) const {
  Pose out;
  out.position = position + orientation * rhs.position;
  out.orientation = (orientation * rhs.orientation).normalized();
  return out;
}

Pose Pose::inverse() const {
  Pose out;
  out.orientation = orientation.conjugate();
  out.position = -(out.orientation * position);
  return out;
}

Vec6 Twist::stacked() const {
  Vec6 v;
  v << linear, angular;
  return v;
}

Twist Twist::from_stacked(const Vec6& v) { return {v.head<3>(), v.tail<3>()}; }

Vec6 Wrench::stacked() const {
  Vec6 v;
  v << force, torque;
  return v;
}

Wrench Wrench::from_stacked(const Vec6& v) { return {v.head<3>(), v.tail<3>()}; }

void check_dim(const VecX& v, int n, const char* what) {
  if (v.size() != n)
    throw std::invalid_argument(std::string(what) + ": expected dimension " + std::to_string(n) +
                                ", got " + std::to_string(v.size()));
}

ChainModel::ChainModel(std::string name, std::vector<LinkSpec> links, JointLimits limits, Vec3 gravity,
                       Pose base, Pose tool)
    : name_(std::move(name)),
      links_(std::move(links)),
      limits_(std::move(limits)),
      gravity_(gravity),
      base_(base),
      tool_(tool) {
  const int n = dof();
  if (n == 0) throw std::invalid_argument("chain must have at least one link");
  for (int i = 0; i < n; ++i) {
    const LinkSpec& l = link(i);
    if (!(l.mass > 0.0)) throw std::invalid_argument("link mass must be positive");
    if (!l.inertia.isApprox(l.inertia.transpose(), 1e-12) || l.inertia.llt().info() != Eigen::Success)
      throw std::invalid_argument("link inertia must be symmetric positive-definite");
    if (std::abs(l.axis.norm() - 1.0) > 1e-9) throw std::invalid_argument("joint axis must be unit-norm");
    if (!unit_quaternion(l.parent_to_joint.orientation))
      throw std::invalid_argument("link transform quaternion must be unit-norm");
  }
  check_dim(limits_.q_min, n, "q_min");
  check_dim(limits_.q_max, n, "q_max");
  check_dim(limits_.dq_min, n, "dq_min");
  check_dim(limits_.dq_max, n, "dq_max");
  check_dim(limits_.tau_min, n, "tau_min");
  check_dim(limits_.tau_max, n, "tau_max");
  if ((limits_.q_min.array() >= limits_.q_max.array()).any())
    throw std::invalid_argument("q_min must be below q_max");
  if ((limits_.dq_min.array() > limits_.dq_max.array()).any() ||
      (limits_.tau_min.array() > limits_.tau_max.array()).any())
    throw std::invalid_argument("inverted velocity or torque limits");
  if (!unit_quaternion(base_.orientation) || !unit_quaternion(tool_.orientation))
    throw std::invalid_argument("base/tool quaternion must be unit-norm");
}

ChainModel ChainModel::with_gravity(const Vec3& g) const {
  ChainModel c = *this;
  c.gravity_ = g;
  return c;
}

ChainModel ChainModel::with_base(const Pose& base) const {
  ChainModel c = *this;
  c.base_ = base;
  return c;
}

JointState JointState::zeros(int n) { return {VecX::Zero(n), VecX::Zero(n), VecX::Zero(n)}; }

bool JointState::finite() const { return q.allFinite() && dq.allFinite() && ddq.allFinite(); }

ChainKinematics chain_kinematics(const ChainModel& chain, const VecX& q) {
  const int n = chain.dof();
  check_dim(q, n, "q");
  ChainKinematics kin;
  kin.frames.reserve(static_cast<size_t>(n));
  kin.axes.reserve(static_cast<size_t>(n));
  kin.joint_origins.reserve(static_cast<size_t>(n));
  Eigen::Isometry3d T = chain.base().isometry();
  for (int i = 0; i < n; ++i) {
    const LinkSpec& l = chain.link(i);
    const Eigen::Isometry3d J = T * l.parent_to_joint.isometry();
    kin.axes.push_back(J.linear() * l.axis);
    kin.joint_origins.push_back(J.translation());
    if (l.type == JointType::revolute)
      T = J * Eigen::AngleAxisd(q(i), l.axis);
    else
      T = J * Eigen::Translation3d(q(i) * l.axis);
    kin.frames.push_back(T);
  }
  kin.ee = T * chain.tool().isometry();
  return kin;
}

Pose fk_pose(const ChainModel& chain, const VecX& q) { return Pose::from_isometry(chain_kinematics(chain, q).ee); }

Jacobian jacobian(const ChainModel& chain, const ChainKinematics& kin) {
  const int n = chain.dof();
  Jacobian J(6, n);
  const Vec3 pe = kin.ee.translation();
  for (int i = 0; i < n; ++i) {
    const auto k = static_cast<size_t>(i);
    const Vec3& z = kin.axes[k];
    if (chain.link(i).type == JointType::revolute) {
      J.col(i) << z.cross(pe - kin.joint_origins[k]), z;
    } else {
      J.col(i) << z, Vec3::Zero();
    }
  }
  return J;
}

Jacobian jacobian(const ChainModel& chain, const VecX& q) { return jacobian(chain, chain_kinematics(chain, q)); }

namespace {

Vec6 jdot_qdot_from(const ChainModel& chain, const ChainKinematics& kin, const VecX& dq) {
  const LinkMotion m = propagate_motion(chain, kin, dq, nullptr, Vec3::Zero());
  const auto last = static_cast<size_t>(chain.dof() - 1);
  const Vec3 r = kin.ee.translation() - kin.frames[last].translation();
  const Vec3& w = m.omega[last];
  Vec6 out;
  out << m.lin_acc[last] + m.alpha[last].cross(r) + w.cross(w.cross(r)), m.alpha[last];
  return out;
}

VecX rnea(const ChainModel& chain, const ChainKinematics& kin, const VecX& dq, const VecX& ddq);

}  // namespace

Vec6 jdot_qdot(const ChainModel& chain, const VecX& q, const VecX& dq) {
  check_dim(dq, chain.dof(), "dq");
  return jdot_qdot_from(chain, chain_kinematics(chain, q), dq);
}

MatX mass_matrix(const ChainModel& chain, const VecX& q) { return mass_matrix(chain, chain_kinematics(chain, q)); }

MatX mass_matrix(const ChainModel& chain, const ChainKinematics& kin) {
  const int n = chain.dof();
  MatX M = MatX::Zero(n, n);

  double mass = 0.0;
  Vec3 first_moment = Vec3::Zero();
  Mat3 inertia_origin = Mat3::Zero();  // composite inertia about the world origin
  for (int i = n - 1; i >= 0; --i) {
    const auto k = static_cast<size_t>(i);
    const LinkSpec& l = chain.link(i);
    const Mat3 R = kin.frames[k].linear();
    const Vec3 c = kin.frames[k] * l.com;
    mass += l.mass;
    first_moment += l.mass * c;
    inertia_origin += R * l.inertia * R.transpose() + l.mass * (c.squaredNorm() * Mat3::Identity() - c * c.transpose());

    const Vec3 cc = first_moment / mass;
    const Mat3 Ic = inertia_origin - mass * (cc.squaredNorm() * Mat3::Identity() - cc * cc.transpose());
    const Vec3& z = kin.axes[k];
    const Vec3& oi = kin.joint_origins[k];
    Vec3 F, N;
    if (l.type == JointType::revolute) {
      F = mass * z.cross(cc - oi);
      N = Ic * z + (cc - oi).cross(F);
    } else {
      F = mass * z;
      N = (cc - oi).cross(F);
    }
    for (int j = 0; j <= i; ++j) {
      const auto kj = static_cast<size_t>(j);
      const Vec3& zj = kin.axes[kj];
      double v;
      if (chain.link(j).type == JointType::revolute)
        v = zj.dot(N + (oi - kin.joint_origins[kj]).cross(F));
      else
        v = zj.dot(F);
      M(j, i) = v;
      M(i, j) = v;
    }
    M(i, i) += l.armature;
  }
  return M;
}

VecX inverse_dynamics(const ChainModel& chain, const VecX& q, const VecX& dq, const VecX& ddq) {
  check_dim(dq, chain.dof(), "dq");
  check_dim(ddq, chain.dof(), "ddq");
  return rnea(chain, chain_kinematics(chain, q), dq, ddq);
}

namespace {

VecX rnea(const ChainModel& chain, const ChainKinematics& kin, const VecX& dq, const VecX& ddq) {
  const int n = chain.dof();
  const LinkMotion m = propagate_motion(chain, kin, dq, &ddq, -chain.gravity());

  VecX tau(n);
  Vec3 f_next = Vec3::Zero(), n_next = Vec3::Zero();
  Vec3 o_next = Vec3::Zero();
  for (int i = n - 1; i >= 0; --i) {
    const auto k = static_cast<size_t>(i);
    const LinkSpec& l = chain.link(i);
    const Mat3 R = kin.frames[k].linear();
    const Vec3 o = kin.frames[k].translation();
    const Vec3 rc = R * l.com;
    const Vec3& w = m.omega[k];
    const Vec3 ac = m.lin_acc[k] + m.alpha[k].cross(rc) + w.cross(w.cross(rc));
    const Mat3 Iw = R * l.inertia * R.transpose();
    const Vec3 F = l.mass * ac;
    const Vec3 N = Iw * m.alpha[k] + w.cross(Iw * w);
    Vec3 fi = F + f_next;
    Vec3 ni = N + rc.cross(F) + n_next;
    if (i < n - 1) ni += (o_next - o).cross(f_next);
    const Vec3& z = kin.axes[k];
    tau(i) = (l.type == JointType::revolute ? z.dot(ni) : z.dot(fi)) + l.armature * ddq(i);
    f_next = fi;
    n_next = ni;
    o_next = o;
  }
  return tau;
}

}  // namespace

VecX bias_forces(const ChainModel& chain, const VecX& q, const VecX& dq) {
  return inverse_dynamics(chain, q, dq, VecX::Zero(chain.dof()));
}

VecX bias_forces(const ChainModel& chain, const ChainKinematics& kin, const VecX& dq) {
  check_dim(dq, chain.dof(), "dq");
  return rnea(chain, kin, dq, VecX::Zero(chain.dof()));
}

ArmDynamics arm_dynamics(const ChainModel& chain, const VecX& q, const VecX& dq, bool with_jdot) {
  check_dim(dq, chain.dof(), "dq");
  ArmDynamics d;
  d.kin = chain_kinematics(chain, q);
  d.ee = Pose::from_isometry(d.kin.ee);
  d.J = jacobian(chain, d.kin);
  d.M = mass_matrix(chain, d.kin);
  d.h = rnea(chain, d.kin, dq, VecX::Zero(chain.dof()));
  if (with_jdot) d.jdot_qdot = jdot_qdot_from(chain, d.kin, dq);
  return d;
}

Mat6 task_space_mobility(const MatX& M, const Jacobian& J, double ridge) {
  if (M.rows() != M.cols() || M.cols() != J.cols()) throw std::invalid_argument("task_space_inertia: dimension mismatch");
  Eigen::LLT<MatX> llt(M);
  if (llt.info() != Eigen::Success) throw std::invalid_argument("mass matrix is not positive-definite");
  const MatX MinvJt = llt.solve(J.transpose());
  Mat6 A = J * MinvJt;
  A = 0.5 * (A + A.transpose());
  A.diagonal().array() += ridge;
  return A;
}

Mat6 task_space_inertia(const MatX& M, const Jacobian& J, double ridge) {
  const Mat6 A = task_space_mobility(M, J, ridge);
  Mat6 L = A.ldlt().solve(Mat6::Identity());
  return 0.5 * (L + L.transpose());
}

Vec3 rotation_vector(const Eigen::Quaterniond& q_in) {
  Eigen::Quaterniond q = q_in.normalized();
  if (q.w() < 0.0) q.coeffs() *= -1.0;
  const Vec3 v = q.vec();
  const double s = v.norm();
  if (s < 1e-12) return 2.0 * v;
  const double angle = 2.0 * std::atan2(s, q.w());
  return v * (angle / s);
}

Eigen::Quaterniond quat_exp(const Vec3& rotvec) {
  const double angle = rotvec.norm();
  if (angle < 1e-12) {
    Eigen::Quaterniond q(1.0, 0.5 * rotvec.x(), 0.5 * rotvec.y(), 0.5 * rotvec.z());
    return q.normalized();
  }
  return Eigen::Quaterniond(Eigen::AngleAxisd(angle, rotvec / angle));
}

Vec6 pose_error(const Pose& x_r, const Pose& x) {
  Vec6 e;
  e.head<3>() = x_r.position - x.position;
  e.tail<3>() = rotation_vector(x_r.orientation * x.orientation.conjugate());
  return e;
}

double chain_energy(const ChainModel& chain, const VecX& q, const VecX& dq) {
  const ChainKinematics kin = chain_kinematics(chain, q);
  double potential = 0.0;
  for (int i = 0; i < chain.dof(); ++i) {
    const Vec3 c = kin.frames[static_cast<size_t>(i)] * chain.link(i).com;
    potential -= chain.link(i).mass * chain.gravity().dot(c);
  }
  return 0.5 * dq.dot(mass_matrix(chain, q) * dq) + potential;
}

IkResult solve_ik(const ChainModel& chain, const Pose& target, const VecX& seed, const IkOptions& opts) {
  const int n = chain.dof();
  check_dim(seed, n, "seed");
  const JointLimits& lim = chain.limits();
  IkResult res;
  res.q = seed.cwiseMax(lim.q_min).cwiseMin(lim.q_max);
  const double lambda2 = opts.damping * opts.damping;
  for (int it = 0; it < opts.max_iterations; ++it) {
    const ChainKinematics kin = chain_kinematics(chain, res.q);
    const Vec6 e = pose_error(target, Pose::from_isometry(kin.ee));
    res.residual = e.norm();
    if (res.residual < opts.tolerance) {
      res.converged = true;
      return res;
    }
    const Jacobian J = jacobian(chain, kin);
    const Mat6 JJt = J * J.transpose();
    const VecX step = J.transpose() * (JJt + lambda2 * Mat6::Identity()).ldlt().solve(e);
    VecX dq = step;
    if (opts.posture_gain > 0.0) {
      const MatX Jpinv = J.transpose() * (JJt + lambda2 * Mat6::Identity()).ldlt().solve(Mat6::Identity());
      const MatX null = MatX::Identity(n, n) - Jpinv * J;
      dq += null * (opts.posture_gain * (seed - res.q));
    }
    res.q = (res.q + dq).cwiseMax(lim.q_min).cwiseMin(lim.q_max);
  }
  const Vec6 e = pose_error(target, fk_pose(chain, res.q));
  res.residual = e.norm();
  res.converged = res.residual < opts.tolerance;
  return res;
}

}  // namespace davil
