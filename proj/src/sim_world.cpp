#include "davil/sim_world.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>

#include "davil/chain_io.hpp"

namespace davil {

void ObjectSpec::validate() const {
  if (!(mass > 0.0)) throw std::invalid_argument("object mass must be positive");
  if (!inertia.isApprox(inertia.transpose(), 1e-12) || inertia.llt().info() != Eigen::Success)
    throw std::invalid_argument("object inertia must be symmetric positive-definite");
}

ObjectSpec ObjectSpec::with_mass(double m) const {
  if (!(m > 0.0)) throw std::invalid_argument("object mass must be positive");
  ObjectSpec o = *this;
  o.inertia = inertia * (m / mass);
  o.mass = m;
  return o;
}

ObjectSpec box_object(std::string name, const Vec3& size, double mass, std::array<Pose, 2> grasps) {
  ObjectSpec o;
  o.name = std::move(name);
  o.mass = mass;
  o.size = size;
  const double a = size.x(), b = size.y(), c = size.z();
  o.inertia = (mass / 12.0) * Vec3(b * b + c * c, a * a + c * c, a * a + b * b).asDiagonal();
  o.grasps = grasps;
  o.validate();
  return o;
}

const ObjectSpec& ObjectCatalog::find(const std::string& name) const {
  for (const auto& o : objects)
    if (o.name == name) return o;
  throw std::invalid_argument("unknown object: " + name);
}

ObjectCatalog load_object_catalog(const std::filesystem::path& path) {
  const Json doc = read_json_file(path);
  ObjectCatalog cat;
  for (const Json& o : doc.at("objects")) {
    const Json& g = o.at("grasps");
    if (g.size() != 2) throw std::invalid_argument("each object needs exactly two grasp frames");
    const std::array<Pose, 2> grasps{pose_from_json(g[0]), pose_from_json(g[1])};
    const double mass = o.value("mass", 1.0);
    if (o.value("shape", "box") != "box") throw std::invalid_argument("only box primitives are supported");
    cat.objects.push_back(box_object(o.at("name").get<std::string>(), vec3_from_json(o.at("size")), mass, grasps));
  }
  if (doc.contains("mass_set")) cat.mass_set = doc.at("mass_set").get<std::vector<double>>();
  return cat;
}

void GraspCoupling::validate() const {
  if (!(linear_stiffness > 0 && angular_stiffness > 0 && linear_damping > 0 && angular_damping > 0 && breakaway > 0))
    throw std::invalid_argument("grasp coupling parameters must be positive");
}

void SimConfig::validate() const {
  if (!(dt_sim > 0.0) || !(dt_ctrl > 0.0)) throw std::invalid_argument("time steps must be positive");
  const double ratio = dt_ctrl / dt_sim;
  if (std::abs(ratio - std::round(ratio)) > 1e-9 * ratio || std::round(ratio) < 1.0)
    throw std::invalid_argument("dt_ctrl must be an integer multiple of dt_sim");
}

int SimConfig::substeps() const { return static_cast<int>(std::lround(dt_ctrl / dt_sim)); }

WorldModel::WorldModel(ChainModel left, ChainModel right, ObjectSpec obj, GraspCoupling c, const SimConfig& cfg,
                       bool with_object)
    : arms{left.with_gravity(cfg.gravity), right.with_gravity(cfg.gravity)},
      object(std::move(obj)),
      coupling(c),
      has_object(with_object) {
  cfg.validate();
  coupling.validate();
  if (has_object) object.validate();
}

Pose grasp_frame_world(const Pose& object_pose, const ObjectSpec& object, Side s) {
  return object_pose * object.grasps[idx(s)];
}

Anchor grasp_anchor(const WorldState& w, const ObjectSpec& object, Side s) {
  Anchor a;
  a.pose = grasp_frame_world(w.object_pose, object, s) * w.rest_offset[idx(s)];
  const Vec3 r = a.pose.position - w.object_pose.position;
  a.twist.angular = w.object_twist.angular;
  a.twist.linear = w.object_twist.linear + w.object_twist.angular.cross(r);
  return a;
}

WorldState attach_grasps(WorldState w, const ObjectSpec& object, const Pose& left_ee, const Pose& right_ee,
                         double capture_radius) {
  const std::array<Pose, 2> ee{left_ee, right_ee};
  std::array<Pose, 2> offsets;
  for (Side s : kSides) {
    const Pose g = grasp_frame_world(w.object_pose, object, s);
    const double d = (ee[idx(s)].position - g.position).norm();
    if (d > capture_radius)
      throw GraspError(std::string(side_name(s)) + " gripper is " + std::to_string(d) +
                       " m from its grasp frame (capture radius " + std::to_string(capture_radius) + " m)");
    offsets[idx(s)] = g.inverse() * ee[idx(s)];
  }
  w.rest_offset = offsets;
  w.engaged = {true, true};
  return w;
}

bool exceeds_breakaway(const Pose& ee_pose, const Pose& anchor_pose, const GraspCoupling& c) {
  return (ee_pose.position - anchor_pose.position).norm() > c.breakaway;
}

Wrench grasp_wrench(const Pose& ee_pose, const Twist& ee_twist, const Pose& anchor_pose, const Twist& anchor_twist,
                    const GraspCoupling& c) {
  if (exceeds_breakaway(ee_pose, anchor_pose, c)) return {};
  const Vec6 e = pose_error(ee_pose, anchor_pose);
  Wrench f;
  f.force = c.linear_stiffness * e.head<3>() + c.linear_damping * (ee_twist.linear - anchor_twist.linear);
  f.torque = c.angular_stiffness * e.tail<3>() + c.angular_damping * (ee_twist.angular - anchor_twist.angular);
  return f;
}

namespace {

void require_finite(const WorldState& w) {
  bool ok = std::isfinite(w.time) && w.object_pose.position.allFinite() && w.object_pose.orientation.coeffs().allFinite() &&
            w.object_twist.linear.allFinite() && w.object_twist.angular.allFinite();
  for (const auto& a : w.arms) ok = ok && a.finite();
  if (!ok) throw SimulationFault("simulation state became non-finite at t = " + std::to_string(w.time));
}

}  // namespace

WorldState step(const WorldModel& model, WorldState w, const VecX& tau_left, const VecX& tau_right,
                const SimConfig& cfg, StepTrace* trace) {
  cfg.validate();
  const std::array<const VecX*, 2> tau_in{&tau_left, &tau_right};
  std::array<VecX, 2> tau;
  for (Side s : kSides) {
    const ChainModel& c = model.arm(s);
    check_dim(*tau_in[idx(s)], c.dof(), "tau");
    if (!tau_in[idx(s)]->allFinite()) throw SimulationFault("non-finite torque command");
    tau[idx(s)] = tau_in[idx(s)]->cwiseMax(c.limits().tau_min).cwiseMin(c.limits().tau_max);
  }

  const int n_sub = cfg.substeps();
  const double dt = cfg.dt_sim;
  const double t0 = w.time;
  const ObjectSpec& obj = model.object;
  for (int k = 0; k < n_sub; ++k) {
    std::array<Wrench, 2> on_object;
    std::array<ArmDynamics, 2> dyn;
    for (Side s : kSides) {
      const JointState& js = w.arm(s);
      dyn[idx(s)] = arm_dynamics(model.arm(s), js.q, js.dq, false);
      if (!model.has_object || !w.engaged[idx(s)]) continue;
      const ArmDynamics& d = dyn[idx(s)];
      const Twist ee_twist = Twist::from_stacked(d.J * js.dq);
      const Anchor a = grasp_anchor(w, obj, s);
      if (exceeds_breakaway(d.ee, a.pose, model.coupling)) {
        w.engaged[idx(s)] = false;
        if (trace) trace->slipped = true;
        continue;
      }
      on_object[idx(s)] = grasp_wrench(d.ee, ee_twist, a.pose, a.twist, model.coupling);
    }

    for (Side s : kSides) {
      JointState& js = w.arm(s);
      const ArmDynamics& d = dyn[idx(s)];
      VecX rhs = tau[idx(s)] - d.h;
      if (w.engaged[idx(s)]) rhs -= d.J.transpose() * on_object[idx(s)].stacked();
      js.ddq = d.M.llt().solve(rhs);
      js.dq += js.ddq * dt;
      js.q += js.dq * dt;
    }

    if (model.has_object) {
      if (w.object_supported) {
        w.object_twist = Twist{};
      } else {
        Vec3 force = obj.mass * cfg.gravity;
        Vec3 torque = Vec3::Zero();
        for (Side s : kSides) {
          if (!w.engaged[idx(s)]) continue;
          const Vec3 r = grasp_anchor(w, obj, s).pose.position - w.object_pose.position;
          const Wrench& f = on_object[idx(s)];
          force += f.force;
          torque += r.cross(f.force) + f.torque;
          if (trace) trace->impulse[idx(s)] += f.force * dt;
        }
        const Mat3 R = w.object_pose.orientation.toRotationMatrix();
        const Mat3 Iw = R * obj.inertia * R.transpose();
        const Vec3& omega = w.object_twist.angular;
        const Vec3 alpha = Iw.llt().solve(torque - omega.cross(Iw * omega));
        w.object_twist.linear += (force / obj.mass) * dt;
        w.object_twist.angular += alpha * dt;
        w.object_pose.position += w.object_twist.linear * dt;
        w.object_pose.orientation = (quat_exp(w.object_twist.angular * dt) * w.object_pose.orientation).normalized();
      }
    }
    if (trace) trace->last_wrench = on_object;
    w.time = t0 + (k + 1) * dt;
  }
  require_finite(w);
  return w;
}

Wrench ee_wrench_estimate(const WorldModel& model, const WorldState& w, Side s) {
  if (!model.has_object || !w.engaged[idx(s)]) return {};
  const JointState& js = w.arm(s);
  const ChainKinematics kin = chain_kinematics(model.arm(s), js.q);
  const Pose ee = Pose::from_isometry(kin.ee);
  const Twist ee_twist = Twist::from_stacked(jacobian(model.arm(s), kin) * js.dq);
  const Anchor a = grasp_anchor(w, model.object, s);
  const Wrench f = grasp_wrench(ee, ee_twist, a.pose, a.twist, model.coupling);
  return {-f.force, -f.torque};
}

void write_world_csv(const std::filesystem::path& path, const std::vector<WorldState>& states) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  const int nl = states.empty() ? 0 : static_cast<int>(states.front().arms[0].q.size());
  const int nr = states.empty() ? 0 : static_cast<int>(states.front().arms[1].q.size());
  out << "time";
  for (int i = 0; i < nl; ++i) out << ",q_left_" << i;
  for (int i = 0; i < nr; ++i) out << ",q_right_" << i;
  out << ",obj_px,obj_py,obj_pz,obj_qw,obj_qx,obj_qy,obj_qz,engaged_left,engaged_right\n";
  out << std::setprecision(10);
  for (const WorldState& w : states) {
    out << w.time;
    for (const auto& a : w.arms)
      for (int i = 0; i < a.q.size(); ++i) out << ',' << a.q(i);
    const Pose& p = w.object_pose;
    out << ',' << p.position.x() << ',' << p.position.y() << ',' << p.position.z() << ',' << p.orientation.w() << ','
        << p.orientation.x() << ',' << p.orientation.y() << ',' << p.orientation.z() << ',' << int(w.engaged[0]) << ','
        << int(w.engaged[1]) << '\n';
  }
}

}  // namespace davil
