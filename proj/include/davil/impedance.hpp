#pragma once

#include "davil/rigid_body.hpp"

namespace davil {

/// Diagonal of K: (kx, ky, kz, k_roll, k_pitch, k_yaw).
using Stiffness = Vec6;

/// residual(ddq) = A ddq + b
struct ResidualAffine {
  MatX A;
  VecX b;

  VecX eval(const VecX& ddq) const { return A * ddq + b; }
};

/// Principal square root of an SPD matrix via eigendecomposition. Throws when not SPD.
Mat6 spd_sqrt(const Mat6& S);

/// D = sqrt(Lambda) sqrt(K) + sqrt(K) sqrt(Lambda), built as S + S^T.
Mat6 damping_from_stiffness(const Mat6& Lambda, const Stiffness& K);

/// f = D (xd_r - xd) + K pose_error(x_r, x)
Wrench impedance_wrench(const Stiffness& K, const Mat6& D, const Pose& x_r, const Twist& xd_r, const Pose& x,
                        const Twist& xd);

/// e_imp = J ddq + Jdot qdot - Lambda^-1 f
ResidualAffine impedance_residual(const Jacobian& J, const Vec6& jdot_qdot, const Mat6& Lambda, const Wrench& f);

/// e_pos = ddq - 2 sqrt(Kn) (dq_r - dq) - Kn (q_r - q); Kn is the diagonal.
ResidualAffine posture_residual(const VecX& k_null, const VecX& q_r, const VecX& dq_r, const VecX& q,
                                const VecX& dq);

struct StepResponse {
  double overshoot = 0.0;  // fraction of the step
  int sign_changes = 0;    // of the tracking error
  double final_error = 0.0;
};

/// Unit step of lambda x'' = -d x' + k (1 - x) from rest, RK4 at fixed dt.
StepResponse scalar_step_response(double lambda, double k, double d, double horizon, double dt = 1e-5);

}  // namespace davil
