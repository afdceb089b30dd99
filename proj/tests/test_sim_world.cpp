#include <cmath>
#include <filesystem>
#include <fstream>

#include "davil/sim_world.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace davil;

namespace {

// Three prismatic joints along world x, y, z: the end effector is base + q.
ChainModel cartesian_arm(const Vec3& base_pos) {
  std::vector<LinkSpec> links;
  for (int i = 0; i < 3; ++i) {
    LinkSpec l;
    l.mass = 1.0;
    l.inertia = Mat3::Identity() * 0.01;
    l.axis = Vec3::Unit(i);
    l.type = JointType::prismatic;
    links.push_back(l);
  }
  JointLimits lim;
  lim.q_min = VecX::Constant(3, -5);
  lim.q_max = VecX::Constant(3, 5);
  lim.dq_min = VecX::Constant(3, -10);
  lim.dq_max = VecX::Constant(3, 10);
  lim.tau_min = VecX::Constant(3, -1e4);
  lim.tau_max = VecX::Constant(3, 1e4);
  Pose base;
  base.position = base_pos;
  return ChainModel("cartesian", std::move(links), std::move(lim), Vec3(0, 0, -9.81), base);
}

struct Rig {
  WorldModel model;
  WorldState state;
  SimConfig cfg;
};

// Two cartesian arms holding a 1 kg box whose grasp frames sit at gl and gr (object frame).
Rig hold_rig(const Vec3& gl, const Vec3& gr, Vec3 gravity = Vec3(0, 0, -9.81)) {
  Rig r;
  r.cfg.gravity = gravity;
  Pose pl, pr;
  pl.position = gl;
  pr.position = gr;
  const ObjectSpec obj = box_object("box", Vec3(0.3, 0.4, 0.2), 1.0, {pl, pr});
  r.model = WorldModel(cartesian_arm(gl), cartesian_arm(gr), obj, GraspCoupling{}, r.cfg);
  r.state.arms = {JointState::zeros(3), JointState::zeros(3)};
  r.state = attach_grasps(r.state, obj, fk_pose(r.model.arms[0], r.state.arms[0].q),
                          fk_pose(r.model.arms[1], r.state.arms[1].q), r.cfg.capture_radius);
  return r;
}

// Gravity-compensated joint PD about q = 0.
VecX hold_torque(const ChainModel& c, const JointState& js) {
  return bias_forces(c, js.q, js.dq) - 1000.0 * js.q - 50.0 * js.dq;
}

void run_hold(Rig& r, int ticks) {
  for (int i = 0; i < ticks; ++i)
    r.state = step(r.model, r.state, hold_torque(r.model.arms[0], r.state.arms[0]),
                   hold_torque(r.model.arms[1], r.state.arms[1]), r.cfg);
}

double energy_above_rest(const ChainModel& c, const JointState& js) {
  // Hanging straight down is the minimum of the potential.
  VecX q_rest = VecX::Zero(js.q.size());
  q_rest(0) = -M_PI / 2;
  return chain_energy(c, js.q, js.dq) - chain_energy(c, q_rest, VecX::Zero(js.q.size()));
}

}  // namespace

TEST_CASE("object specs and catalog") {
  CHECK_THROWS_AS(box_object("bad", Vec3(1, 1, 1), 0.0, {}), std::invalid_argument);
  ObjectSpec o = box_object("b", Vec3(0.2, 0.4, 0.6), 2.0, {});
  CHECK(o.inertia(0, 0) == doctest::Approx(2.0 / 12 * (0.16 + 0.36)));
  const ObjectSpec heavy = o.with_mass(5.0);
  CHECK(heavy.inertia(2, 2) == doctest::Approx(5.0 / 12 * (0.04 + 0.16)));
  o.inertia(0, 1) = 5.0;
  CHECK_THROWS_AS(o.validate(), std::invalid_argument);

  const ObjectCatalog cat = load_object_catalog(std::filesystem::path(DAVIL_CONFIG_DIR) / "objects.json");
  CHECK(cat.objects.size() == 6);
  for (const char* name : {"chair", "stool", "stockpot", "laptop", "monitor", "crate"}) CHECK_NOTHROW(cat.find(name));
  CHECK_THROWS_AS(cat.find("piano"), std::invalid_argument);
  CHECK(cat.mass_set == std::vector<double>{0.5, 1.0, 2.5, 5.0});
}

TEST_CASE("sim config and coupling invariants") {
  SimConfig cfg;
  CHECK(cfg.substeps() == 100);
  cfg.dt_ctrl = 1.5e-4;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.dt_ctrl = 1e-2;
  cfg.dt_sim = -1;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  GraspCoupling c;
  c.breakaway = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("attach_grasps records rest offsets") {
  Pose gl, gr;
  gl.position = Vec3(0, 0.2, 0);
  gr.position = Vec3(0, -0.2, 0);
  const ObjectSpec obj = box_object("box", Vec3(0.3, 0.4, 0.2), 1.0, {gl, gr});
  WorldState w;
  w.object_pose.position = Vec3(0.5, 0, 0.3);

  Pose el = grasp_frame_world(w.object_pose, obj, Side::left);
  Pose er = grasp_frame_world(w.object_pose, obj, Side::right);
  WorldState a = attach_grasps(w, obj, el, er, 5e-3);
  CHECK(a.engaged[0]);
  CHECK(a.engaged[1]);
  for (Side s : kSides) {
    const Anchor an = grasp_anchor(a, obj, s);
    const Pose& ee = s == Side::left ? el : er;
    CHECK(grasp_wrench(ee, {}, an.pose, an.twist, GraspCoupling{}).stacked().norm() == 0.0);
  }

  SUBCASE("2 mm off is captured with zero initial wrench") {
    Pose off = el;
    off.position += Vec3(0.002, 0, 0);
    const WorldState b = attach_grasps(w, obj, off, er, 5e-3);
    CHECK(b.rest_offset[0].position.norm() == doctest::Approx(0.002));
    const Anchor an = grasp_anchor(b, obj, Side::left);
    CHECK(grasp_wrench(off, {}, an.pose, an.twist, GraspCoupling{}).stacked().norm() < 1e-12);
  }
  SUBCASE("beyond the capture radius throws") {
    Pose off = er;
    off.position += Vec3(0, 0, 0.015);
    CHECK_THROWS_AS(attach_grasps(w, obj, el, off, 5e-3), GraspError);
  }
}

TEST_CASE("grasp_wrench spring-damper") {
  const GraspCoupling c;
  Pose a, b;
  CHECK(grasp_wrench(a, {}, b, {}, c).stacked().norm() == 0.0);
  a.position = Vec3(1e-3, 0, 0);
  const Wrench f = grasp_wrench(a, {}, b, {}, c);
  CHECK((f.force - Vec3(10, 0, 0)).norm() < 1e-12);
  CHECK(f.torque.norm() == 0.0);

  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int t = 0; t < 200; ++t) {
    Pose ee, g;
    ee.position = oracle::random_vec(rng, 3, 0.02);
    ee.orientation = Eigen::Quaterniond(Eigen::AngleAxisd(0.5 * u(rng), oracle::random_unit(rng)));
    g.orientation = Eigen::Quaterniond(Eigen::AngleAxisd(0.5 * u(rng), oracle::random_unit(rng)));
    Twist te{oracle::random_vec(rng, 3, 1), oracle::random_vec(rng, 3, 1)};
    Twist tg{oracle::random_vec(rng, 3, 1), oracle::random_vec(rng, 3, 1)};
    const Wrench w = grasp_wrench(ee, te, g, tg, c);
    // Independent formula: rotation error from the matrix logarithm.
    const Mat3 Rerr = ee.orientation.toRotationMatrix() * g.orientation.toRotationMatrix().transpose();
    const Vec3 fo = c.linear_stiffness * (ee.position - g.position) + c.linear_damping * (te.linear - tg.linear);
    const Vec3 to = c.angular_stiffness * oracle::log_map(Rerr) + c.angular_damping * (te.angular - tg.angular);
    CHECK((w.force - fo).norm() < 1e-10);
    CHECK((w.torque - to).norm() < 1e-10);
  }

  a.position = Vec3(0.051, 0, 0);
  CHECK(grasp_wrench(a, {}, b, {}, c).stacked().norm() == 0.0);
}

TEST_CASE("step keeps an unforced, unloaded world at rest") {
  SimConfig cfg;
  cfg.gravity = Vec3::Zero();
  const ChainModel arm = oracle::planar_chain({0.5, 0.4}, {1.0, 1.0});
  WorldModel model(arm, arm.with_base(Pose{Vec3(0, 1, 0), Eigen::Quaterniond::Identity()}), ObjectSpec{},
                   GraspCoupling{}, cfg, false);
  WorldState w;
  w.arms = {JointState::zeros(2), JointState::zeros(2)};
  w.arms[0].q << 0.3, -0.2;
  const WorldState w1 = step(model, w, VecX::Zero(2), VecX::Zero(2), cfg);
  CHECK(w1.arms[0].q == w.arms[0].q);
  CHECK(w1.arms[1].dq == w.arms[1].dq);
  CHECK(w1.time == doctest::Approx(0.01));
  CHECK_THROWS_AS(step(model, w, VecX::Constant(2, NAN), VecX::Zero(2), cfg), SimulationFault);
  CHECK_THROWS_AS(step(model, w, VecX::Zero(3), VecX::Zero(2), cfg), std::invalid_argument);
}

TEST_CASE("detached object falls freely") {
  SimConfig cfg;
  const ChainModel arm = oracle::planar_chain({0.5}, {1.0});
  WorldModel model(arm, arm, box_object("b", Vec3(0.1, 0.1, 0.1), 2.0, {}), GraspCoupling{}, cfg);
  WorldState w;
  w.arms = {JointState::zeros(1), JointState::zeros(1)};
  w.object_pose.position = Vec3(0, 0, 2);
  const VecX tau = bias_forces(model.arms[0], w.arms[0].q, w.arms[0].dq);
  for (int i = 0; i < 10; ++i) w = step(model, w, tau, tau, cfg);
  CHECK(std::abs(w.object_twist.linear.z() + 0.981) < 1e-6);
  CHECK(std::abs(w.object_pose.orientation.norm() - 1.0) < 1e-12);

  w.object_supported = true;
  const Vec3 p = w.object_pose.position;
  w = step(model, w, tau, tau, cfg);
  CHECK(w.object_pose.position == p);
}

TEST_CASE("passive double pendulum conserves energy") {
  const ChainModel arm = oracle::planar_chain({0.5, 0.4}, {1.0, 1.0}, Vec3(0, -9.81, 0));
  auto rollout = [&](double dt) {
    SimConfig cfg;
    cfg.gravity = Vec3(0, -9.81, 0);
    cfg.dt_sim = dt;
    WorldModel model(arm, arm, ObjectSpec{}, GraspCoupling{}, cfg, false);
    WorldState w;
    w.arms = {JointState::zeros(2), JointState::zeros(2)};
    w.arms[0].q << 0.4, 0.6;
    w.arms[0].dq << 1.0, -2.0;
    double worst = 0.0;
    const double e0 = energy_above_rest(model.arms[0], w.arms[0]);
    for (int i = 0; i < 100; ++i) {
      w = step(model, w, VecX::Zero(2), VecX::Zero(2), cfg);
      worst = std::max(worst, std::abs(energy_above_rest(model.arms[0], w.arms[0]) - e0));
    }
    return std::make_tuple(e0, worst, energy_above_rest(model.arms[0], w.arms[0]));
  };
  const auto [e0, drift, e_end] = rollout(1e-4);
  const auto [e0_ref, drift_ref, e_ref] = rollout(1e-5);
  CHECK(e0 == e0_ref);
  CHECK(drift <= 0.005 * e0);
  CHECK(std::abs(e_end - e_ref) <= 0.005 * e0);
  CHECK(drift_ref < drift);
}

TEST_CASE("object momentum matches delivered grasp impulses") {
  Rig r = hold_rig(Vec3(0, 0.2, 0), Vec3(0, -0.2, 0), Vec3::Zero());
  const Vec3 p0 = r.model.object.mass * r.state.object_twist.linear;
  Vec3 impulse = Vec3::Zero();
  for (int i = 0; i < 50; ++i) {
    const double t = r.state.time;
    VecX tl = Vec3(20 * std::sin(5 * t), 5.0, 10 * std::cos(3 * t));
    VecX tr = Vec3(15 * std::sin(4 * t), -3.0, 8.0);
    StepTrace trace;
    r.state = step(r.model, r.state, tl, tr, r.cfg, &trace);
    impulse += trace.impulse[0] + trace.impulse[1];
  }
  const Vec3 p1 = r.model.object.mass * r.state.object_twist.linear;
  CHECK(r.state.engaged[0]);
  CHECK(r.state.engaged[1]);
  CHECK(impulse.norm() > 0.1);
  CHECK(((p1 - p0) - impulse).norm() <= 1e-3 * r.state.time);
}

TEST_CASE("stepping is deterministic") {
  auto run = [] {
    Rig r = hold_rig(Vec3(0.05, 0.2, 0), Vec3(-0.05, -0.2, 0));
    std::vector<WorldState> traj;
    for (int i = 0; i < 30; ++i) {
      VecX tl = hold_torque(r.model.arms[0], r.state.arms[0]) + Vec3(3 * std::sin(i), 0, 1);
      r.state = step(r.model, r.state, tl, hold_torque(r.model.arms[1], r.state.arms[1]), r.cfg);
      traj.push_back(r.state);
    }
    return traj;
  };
  const auto a = run(), b = run();
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    for (int s = 0; s < 2; ++s) {
      CHECK(a[i].arms[s].q == b[i].arms[s].q);
      CHECK(a[i].arms[s].dq == b[i].arms[s].dq);
    }
    CHECK(a[i].object_pose.position == b[i].object_pose.position);
    CHECK(a[i].object_pose.orientation.coeffs() == b[i].object_pose.orientation.coeffs());
    CHECK(a[i].time == b[i].time);
  }

  const auto dir = std::filesystem::temp_directory_path() / "davil_sim_csv";
  std::filesystem::create_directories(dir);
  write_world_csv(dir / "a.csv", a);
  write_world_csv(dir / "b.csv", b);
  std::ifstream fa(dir / "a.csv"), fb(dir / "b.csv");
  const std::string sa((std::istreambuf_iterator<char>(fa)), {}), sb((std::istreambuf_iterator<char>(fb)), {});
  CHECK(sa == sb);
  CHECK(sa.rfind("time,q_left_0,q_left_1,q_left_2,q_right_0", 0) == 0);
}

TEST_CASE("symmetric static hold splits the weight") {
  Rig r = hold_rig(Vec3(0, 0.2, 0), Vec3(0, -0.2, 0));
  run_hold(r, 200);
  for (Side s : kSides) {
    const Wrench f = ee_wrench_estimate(r.model, r.state, s);
    // The object pulls each gripper down by half its weight.
    CHECK(-f.force.z() == doctest::Approx(4.905).epsilon(0.02));
  }
}

TEST_CASE("asymmetric static hold balances force and moment") {
  Rig r = hold_rig(Vec3(0, 0, 0), Vec3(0.3, 0, 0));
  run_hold(r, 300);
  const double mg = 9.81;
  Vec3 force = Vec3::Zero(), moment = Vec3::Zero();
  for (Side s : kSides) {
    const Wrench f = ee_wrench_estimate(r.model, r.state, s);
    const Anchor a = grasp_anchor(r.state, r.model.object, s);
    // Reaction on the object, transported to its centre of mass.
    force += -f.force;
    moment += (a.pose.position - r.state.object_pose.position).cross(-f.force) - f.torque;
  }
  CHECK(force.z() == doctest::Approx(mg).epsilon(0.02));
  CHECK(std::hypot(force.x(), force.y()) < 0.02 * mg);
  CHECK(moment.norm() < 0.02 * mg * 0.3);
}

TEST_CASE("disengagement is permanent") {
  Rig r = hold_rig(Vec3(0, 0.2, 0), Vec3(0, -0.2, 0));
  r.state.object_supported = true;
  auto pull = [&](double target, int ticks) {
    for (int i = 0; i < ticks; ++i) {
      JointState js = r.state.arms[0];
      VecX tl = bias_forces(r.model.arms[0], js.q, js.dq) - 1000.0 * (js.q - Vec3(0, target, 0)) - 50.0 * js.dq;
      r.state = step(r.model, r.state, tl, hold_torque(r.model.arms[1], r.state.arms[1]), r.cfg);
    }
  };
  pull(1.0, 100);
  CHECK_FALSE(r.state.engaged[0]);
  CHECK(r.state.engaged[1]);
  CHECK(ee_wrench_estimate(r.model, r.state, Side::left).stacked().norm() == 0.0);
  pull(0.0, 100);
  CHECK(r.state.arms[0].q.norm() < 1e-3);
  CHECK_FALSE(r.state.engaged[0]);
}
