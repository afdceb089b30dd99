#include "davil/qp_control.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace davil {

void ControllerGains::validate() const {
  if (!(w_imp >= 0.0) || !(w_pos >= 0.0) || (w_imp == 0.0 && w_pos == 0.0))
    throw std::invalid_argument("task weights must be non-negative and not both zero");
  if (!(tol >= 0.0)) throw std::invalid_argument("grasp tolerance must be non-negative");
  if (!(k_null >= 0.0)) throw std::invalid_argument("posture stiffness must be non-negative");
  if (max_infeasible < 1) throw std::invalid_argument("max_infeasible must be at least 1");
}

namespace {

void check_limit(const VecX& v, int n, const char* what) {
  check_dim(v, n, what);
  if (!v.allFinite()) throw std::invalid_argument(std::string("non-finite limit: ") + what);
}

}  // namespace

QPProblem assemble_qp(const std::array<ArmQPTerms, 2>& arms, const ControllerGains& gains, double dt,
                      double grasp_width) {
  gains.validate();
  if (!(dt > 0.0)) throw std::invalid_argument("dt must be positive");
  std::array<int, 2> n{};
  for (Side s : kSides) {
    const ArmQPTerms& a = arms[idx(s)];
    if (!a.dyn || !a.state || !a.limits) throw std::invalid_argument("incomplete arm terms");
    n[idx(s)] = static_cast<int>(a.state->q.size());
    const int ni = n[idx(s)];
    check_dim(a.state->dq, ni, "dq");
    if (a.imp.A.cols() != ni || a.imp.A.rows() != a.imp.b.size() || a.pos.A.cols() != ni ||
        a.pos.A.rows() != a.pos.b.size() || a.dyn->M.rows() != ni)
      throw std::invalid_argument("residual dimensions do not match the arm");
    check_limit(a.limits->q_min, ni, "q_min");
    check_limit(a.limits->q_max, ni, "q_max");
    check_limit(a.limits->dq_min, ni, "dq_min");
    check_limit(a.limits->dq_max, ni, "dq_max");
    check_limit(a.limits->tau_min, ni, "tau_min");
    check_limit(a.limits->tau_max, ni, "tau_max");
  }
  const int N = n[0] + n[1];
  QPProblem p;
  p.H = MatX::Zero(N, N);
  p.g = VecX::Zero(N);
  p.G = MatX::Zero(3 * N, N);
  p.lo.resize(3 * N);
  p.hi.resize(3 * N);
  int off = 0;
  for (Side s : kSides) {
    const ArmQPTerms& a = arms[idx(s)];
    const int ni = n[idx(s)];
    // w ||A x + b||^2 = x' (w A'A) x + 2 w b'A x + const; the solver takes 1/2 x'Hx + g'x.
    auto H = p.H.block(off, off, ni, ni);
    auto g = p.g.segment(off, ni);
    H += 2.0 * gains.w_imp * a.imp.A.transpose() * a.imp.A + 2.0 * gains.w_pos * a.pos.A.transpose() * a.pos.A;
    g += 2.0 * gains.w_imp * a.imp.A.transpose() * a.imp.b + 2.0 * gains.w_pos * a.pos.A.transpose() * a.pos.b;

    const VecX& q = a.state->q;
    const VecX& dq = a.state->dq;
    const JointLimits& L = *a.limits;
    const int r0 = off, r1 = N + off, r2 = 2 * N + off;
    // q + dq dt + 1/2 ddq dt^2 within position limits
    p.G.block(r0, off, ni, ni).diagonal().setConstant(0.5 * dt * dt);
    p.lo.segment(r0, ni) = L.q_min - q - dq * dt;
    p.hi.segment(r0, ni) = L.q_max - q - dq * dt;
    // dq + ddq dt within velocity limits
    p.G.block(r1, off, ni, ni).diagonal().setConstant(dt);
    p.lo.segment(r1, ni) = L.dq_min - dq;
    p.hi.segment(r1, ni) = L.dq_max - dq;
    // M ddq + h within torque limits
    p.G.block(r2, off, ni, ni) = a.dyn->M;
    p.lo.segment(r2, ni) = L.tau_min - a.dyn->h;
    p.hi.segment(r2, ni) = L.tau_max - a.dyn->h;
    off += ni;
  }
  p.H = 0.5 * (p.H + p.H.transpose());

  if (grasp_width > 0.0) {
    // Predicted EE positions one tick ahead: x + Jv dq dt + 1/2 Jv ddq dt^2.
    std::array<Vec3, 2> pred;
    p.C.resize(3, N);
    for (Side s : kSides) {
      const ArmQPTerms& a = arms[idx(s)];
      const auto Jv = a.dyn->J.topRows<3>();
      pred[idx(s)] = a.dyn->ee.position + Jv * a.state->dq * dt;
      const double sign = s == Side::left ? 1.0 : -1.0;
      p.C.middleCols(s == Side::left ? 0 : n[0], n[idx(s)]) = sign * 0.5 * dt * dt * Jv;
    }
    p.c = pred[0] - pred[1];
    p.has_ball = true;
    p.radius = grasp_width + gains.tol;
    if (gains.lower_bound) {
      // Linearized about the current predicted direction: u'(Cx + c) >= W_G - tol.
      const double nc = p.c.norm();
      if (nc > 0.0) {
        const Vec3 u = p.c / nc;
        const int m = static_cast<int>(p.G.rows());
        p.G.conservativeResize(m + 1, Eigen::NoChange);
        p.lo.conservativeResize(m + 1);
        p.hi.conservativeResize(m + 1);
        p.G.row(m) = u.transpose() * p.C;
        p.lo(m) = grasp_width - gains.tol - u.dot(p.c);
        p.hi(m) = std::numeric_limits<double>::infinity();
      }
    }
    if (gains.soc == SocMode::box) p = ball_to_box(p);
  }
  p.validate();
  return p;
}

QPProblem ball_to_box(const QPProblem& p) {
  if (!p.has_ball) return p;
  QPProblem b = p;
  const int m = static_cast<int>(p.G.rows());
  b.G.conservativeResize(m + 3, Eigen::NoChange);
  b.lo.conservativeResize(m + 3);
  b.hi.conservativeResize(m + 3);
  b.G.bottomRows(3) = p.C;
  b.lo.tail(3) = -Vec3::Constant(p.radius) - p.c;
  b.hi.tail(3) = Vec3::Constant(p.radius) - p.c;
  b.has_ball = false;
  return b;
}

VecX torques_from_accel(const MatX& M, const VecX& h, const VecX& ddq) {
  check_dim(ddq, static_cast<int>(M.cols()), "ddq");
  check_dim(h, static_cast<int>(M.rows()), "h");
  return M * ddq + h;
}

DualArmController::DualArmController(const WorldModel& model, ControllerGains gains, double dt_ctrl)
    : model_(&model), gains_(std::move(gains)), dt_(dt_ctrl) {
  gains_.validate();
  if (!(dt_ > 0.0)) throw std::invalid_argument("dt_ctrl must be positive");
}

void DualArmController::reset(const WorldState& w) {
  for (Side s : kSides) q_r_[idx(s)] = w.arm(s).q;
  hold_.reset();
  warm_.resize(0);
  streak_ = 0;
}

void DualArmController::set_posture_reference(const std::array<VecX, 2>& q_r) {
  for (Side s : kSides) check_dim(q_r[idx(s)], model_->arm(s).dof(), "posture reference");
  q_r_ = q_r;
}

ControlOutput DualArmController::step(const WorldState& w, const ReferenceSample& ref_left,
                                      const ReferenceSample& ref_right, const Stiffness& k_left,
                                      const Stiffness& k_right, bool couple) {
  if (q_r_[0].size() == 0) reset(w);
  const std::array<const ReferenceSample*, 2> ref{&ref_left, &ref_right};
  const std::array<const Stiffness*, 2> K{&k_left, &k_right};
  std::array<ArmDynamics, 2> dyn;
  std::array<ArmQPTerms, 2> terms;
  for (Side s : kSides) {
    const ChainModel& chain = model_->arm(s);
    const JointState& js = w.arm(s);
    ArmDynamics& d = dyn[idx(s)];
    d = arm_dynamics(chain, js.q, js.dq, true);
    const Mat6 Lambda = task_space_inertia(d.M, d.J);
    const Mat6 D = damping_from_stiffness(Lambda, *K[idx(s)]);
    const Twist xd = Twist::from_stacked(d.J * js.dq);
    const Wrench f = impedance_wrench(*K[idx(s)], D, ref[idx(s)]->pose, ref[idx(s)]->twist, d.ee, xd);
    ArmQPTerms& t = terms[idx(s)];
    t.imp = impedance_residual(d.J, d.jdot_qdot, Lambda, f);
    const int n = chain.dof();
    t.pos = posture_residual(VecX::Constant(n, gains_.k_null), q_r_[idx(s)], VecX::Zero(n), js.q, js.dq);
    t.dyn = &d;
    t.state = &js;
    t.limits = &chain.limits();
  }
  const double width = couple && model_->has_object ? model_->object.grasp_width() : 0.0;
  last_problem_ = assemble_qp(terms, gains_, dt_, width);
  const VecX* warm = warm_.size() == last_problem_.dim() ? &warm_ : nullptr;
  last_solution_ = solve_qp(last_problem_, gains_.qp, warm);

  ControlOutput out;
  out.status = last_solution_.status;
  out.iterations = last_solution_.iterations;
  out.primal_residual = last_solution_.primal_residual;
  out.dual_residual = last_solution_.dual_residual;
  const int nl = model_->arm(Side::left).dof();
  if (out.status == QPStatus::optimal) {
    streak_ = 0;
    warm_ = last_solution_.x;
    const VecX& x = last_solution_.x;
    for (Side s : kSides) {
      const int n = model_->arm(s).dof();
      out.ddq[idx(s)] = x.segment(s == Side::left ? 0 : nl, n);
      out.tau[idx(s)] = torques_from_accel(dyn[idx(s)].M, dyn[idx(s)].h, out.ddq[idx(s)]);
      const JointLimits& L = model_->arm(s).limits();
      // Rows are enforced to 1e-6 after unit-norm scaling; allow that much per row norm.
      const VecX slack = 1e-6 * dyn[idx(s)].M.rowwise().norm().cwiseMax(1.0);
      if (((out.tau[idx(s)] - L.tau_max).array() > slack.array()).any() ||
          ((L.tau_min - out.tau[idx(s)]).array() > slack.array()).any())
        throw ControllerFault(std::string(side_name(s)) + " torque outside limits after an optimal solve");
    }
    hold_ = out.tau;
    return out;
  }

  out.held = true;
  if (++streak_ >= gains_.max_infeasible)
    throw ControllerFault(std::to_string(streak_) + " consecutive infeasible ticks (last status " +
                          status_name(out.status) + ")");
  for (Side s : kSides) {
    out.ddq[idx(s)] = VecX::Zero(model_->arm(s).dof());
    out.tau[idx(s)] = hold_ ? (*hold_)[idx(s)] : dyn[idx(s)].h;
  }
  return out;
}

}  // namespace davil
