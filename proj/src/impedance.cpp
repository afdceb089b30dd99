#include "davil/impedance.hpp"

#include <cmath>

namespace davil {

Mat6 spd_sqrt(const Mat6& S) {
  if (!S.allFinite() || !S.isApprox(S.transpose(), 1e-9)) throw std::invalid_argument("matrix is not symmetric");
  Eigen::SelfAdjointEigenSolver<Mat6> es(0.5 * (S + S.transpose()));
  if (es.info() != Eigen::Success || es.eigenvalues().minCoeff() <= 0.0)
    throw std::invalid_argument("matrix is not positive-definite");
  return es.eigenvectors() * es.eigenvalues().cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
}

Mat6 damping_from_stiffness(const Mat6& Lambda, const Stiffness& K) {
  if (!(K.array() > 0.0).all()) throw std::invalid_argument("stiffness entries must be positive");
  const Mat6 S = spd_sqrt(Lambda) * K.cwiseSqrt().asDiagonal();
  return S + S.transpose();
}

Wrench impedance_wrench(const Stiffness& K, const Mat6& D, const Pose& x_r, const Twist& xd_r, const Pose& x,
                        const Twist& xd) {
  const Vec6 f = D * (xd_r.stacked() - xd.stacked()) + K.asDiagonal() * pose_error(x_r, x);
  return Wrench::from_stacked(f);
}

ResidualAffine impedance_residual(const Jacobian& J, const Vec6& jdot_qdot, const Mat6& Lambda, const Wrench& f) {
  Eigen::LDLT<Mat6> ldlt(Lambda);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) throw std::invalid_argument("Lambda is not SPD");
  ResidualAffine r;
  r.A = J;
  r.b = jdot_qdot - ldlt.solve(f.stacked());
  return r;
}

ResidualAffine posture_residual(const VecX& k_null, const VecX& q_r, const VecX& dq_r, const VecX& q,
                                const VecX& dq) {
  const int n = static_cast<int>(k_null.size());
  check_dim(q_r, n, "q_r");
  check_dim(dq_r, n, "dq_r");
  check_dim(q, n, "q");
  check_dim(dq, n, "dq");
  if (!(k_null.array() > 0.0).all()) throw std::invalid_argument("null-space stiffness must be positive");
  ResidualAffine r;
  r.A = MatX::Identity(n, n);
  r.b = -2.0 * k_null.cwiseSqrt().cwiseProduct(dq_r - dq) - k_null.cwiseProduct(q_r - q);
  return r;
}

StepResponse scalar_step_response(double lambda, double k, double d, double horizon, double dt) {
  if (!(lambda > 0 && k > 0 && d >= 0 && horizon > 0 && dt > 0)) throw std::invalid_argument("bad step-response setup");
  auto acc = [&](double x, double v) { return (-d * v + k * (1.0 - x)) / lambda; };
  double x = 0.0, v = 0.0, peak = 0.0;
  StepResponse out;
  int prev_sign = 1;
  const long n = std::lround(horizon / dt);
  for (long i = 0; i < n; ++i) {
    const double k1x = v, k1v = acc(x, v);
    const double k2x = v + 0.5 * dt * k1v, k2v = acc(x + 0.5 * dt * k1x, v + 0.5 * dt * k1v);
    const double k3x = v + 0.5 * dt * k2v, k3v = acc(x + 0.5 * dt * k2x, v + 0.5 * dt * k2v);
    const double k4x = v + dt * k3v, k4v = acc(x + dt * k3x, v + dt * k3v);
    x += dt / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x);
    v += dt / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v);
    peak = std::max(peak, x);
    const double e = 1.0 - x;
    const int sgn = e > 0 ? 1 : (e < 0 ? -1 : prev_sign);
    if (sgn != prev_sign) ++out.sign_changes;
    prev_sign = sgn;
  }
  out.overshoot = std::max(0.0, peak - 1.0);
  out.final_error = 1.0 - x;
  return out;
}

}  // namespace davil
