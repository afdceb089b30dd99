#pragma once

#include <string>

#include "davil/rigid_body.hpp"

namespace davil {

/// min 1/2 x'Hx + g'x  s.t.  lo <= G x <= hi,  ||C x + c|| <= radius (when has_ball).
/// Infinite bounds drop the corresponding side.
struct QPProblem {
  MatX H;
  VecX g;
  MatX G;
  VecX lo, hi;
  bool has_ball = false;
  Eigen::Matrix<double, 3, Eigen::Dynamic> C;
  Vec3 c = Vec3::Zero();
  double radius = 0.0;

  int dim() const { return static_cast<int>(g.size()); }
  void validate() const;
};

struct QPSettings {
  int max_iterations = 80;
  double tolerance = 1e-10;       // on the internally scaled residuals
  double acceptable = 1e-8;       // fallback when progress stalls near the optimum
  double divergence = 1e12;       // multiplier size treated as a Farkas signal
};

enum class QPStatus { optimal, infeasible, max_iterations };
const char* status_name(QPStatus s);

struct QPSolution {
  VecX x;
  QPStatus status = QPStatus::infeasible;
  int iterations = 0;
  double primal_residual = 0.0;
  double dual_residual = 0.0;
  double mu = 0.0;
  // Multipliers in the caller's units: one per row of G for each side, one for the ball.
  VecX lambda_lo, lambda_hi;
  double lambda_ball = 0.0;
  Vec3 ball_multiplier = Vec3::Zero();  // enters stationarity as C' * ball_multiplier; norm <= lambda_ball
};

/// Primal-dual interior point (Mehrotra predictor-corrector, Nesterov-Todd scaling) over
/// box rows and a second-order cone for the ball ||Cx + c|| <= r. Any start point is
/// admissible. warm_start may be null or of size dim().
QPSolution solve_qp(const QPProblem& p, const QPSettings& s = {}, const VecX* warm_start = nullptr);

struct KKTReport {
  double primal = 0.0;           // worst constraint violation
  double stationarity = 0.0;     // ||Hx + g + G'(l_hi - l_lo) + C' u_ball||_inf
  double complementarity = 0.0;  // worst |multiplier * slack|
  double dual_sign = 0.0;        // most negative multiplier (or ||u_ball|| - l_ball), as a positive number

  bool ok(double tol) const { return primal <= tol && stationarity <= tol && complementarity <= tol && dual_sign <= tol; }
  std::string str() const;
};

KKTReport kkt_certificate(const QPProblem& p, const QPSolution& sol);

}  // namespace davil
