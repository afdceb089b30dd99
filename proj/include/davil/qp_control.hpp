#pragma once

#include <array>
#include <optional>
#include <stdexcept>

#include "davil/impedance.hpp"
#include "davil/qp_solver.hpp"
#include "davil/sim_world.hpp"
#include "davil/traj_gen.hpp"

namespace davil {

/// exact: grasp width as a second-order cone. box: the ball replaced by its circumscribing box.
enum class SocMode { exact, box };

struct ControllerGains {
  double w_imp = 1.0;
  double w_pos = 1e-3;
  double k_null = 10.0;     // posture stiffness, same on every joint
  double tol = 1e-3;        // m, slack on the grasp width
  SocMode soc = SocMode::exact;
  bool lower_bound = true;  // also forbid compressing the grasp below W_G - tol
  int max_infeasible = 10;  // consecutive infeasible ticks before ControllerFault
  QPSettings qp;

  void validate() const;
};

class ControllerFault : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Per-arm inputs to the QP at one tick.
struct ArmQPTerms {
  ResidualAffine imp;
  ResidualAffine pos;
  const ArmDynamics* dyn = nullptr;
  const JointState* state = nullptr;
  const JointLimits* limits = nullptr;
};

/// Decision vector is [ddq_L; ddq_R]. W_G <= 0 leaves the arms uncoupled (free servo).
/// Rows per arm: next-tick position, next-tick velocity, torque M ddq + h.
QPProblem assemble_qp(const std::array<ArmQPTerms, 2>& arms, const ControllerGains& gains, double dt,
                      double grasp_width);

/// Replace the ball ||Cx + c|| <= r by the linear rows |(Cx + c)_i| <= r.
QPProblem ball_to_box(const QPProblem& p);

/// tau = M ddq + h
VecX torques_from_accel(const MatX& M, const VecX& h, const VecX& ddq);

struct ControlOutput {
  std::array<VecX, 2> ddq;
  std::array<VecX, 2> tau;
  QPStatus status = QPStatus::infeasible;
  bool held = false;  // torques are the previous tick's (zero-order hold)
  int iterations = 0;
  double primal_residual = 0.0, dual_residual = 0.0;
};

/// One instance per rollout: owns warm start, hold torque and posture reference.
class DualArmController {
 public:
  DualArmController(const WorldModel& model, ControllerGains gains, double dt_ctrl);

  /// Posture reference := current configuration; clears warm start, hold torque and the fault counter.
  void reset(const WorldState& w);

  /// couple = false during the grasp stage (no grasp-width constraint).
  ControlOutput step(const WorldState& w, const ReferenceSample& ref_left, const ReferenceSample& ref_right,
                     const Stiffness& k_left, const Stiffness& k_right, bool couple);

  const ControllerGains& gains() const { return gains_; }
  const QPProblem& last_problem() const { return last_problem_; }
  const QPSolution& last_solution() const { return last_solution_; }
  int infeasible_streak() const { return streak_; }
  const std::array<VecX, 2>& posture_reference() const { return q_r_; }
  void set_posture_reference(const std::array<VecX, 2>& q_r);

 private:
  const WorldModel* model_;
  ControllerGains gains_;
  double dt_;
  std::array<VecX, 2> q_r_;
  std::optional<std::array<VecX, 2>> hold_;
  VecX warm_;
  int streak_ = 0;
  QPProblem last_problem_;
  QPSolution last_solution_;
};

}  // namespace davil
