#include "davil/traj_gen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>

namespace davil {

QuinticSample quintic_sample(double p0, double pT, double T, double t) {
  if (!(T > 0.0)) throw std::invalid_argument("quintic duration must be positive");
  if (t < 0.0 || t > T) throw std::invalid_argument("quintic sample time outside [0, T]");
  const double s = t / T, d = pT - p0;
  const double s2 = s * s, s3 = s2 * s;
  QuinticSample out;
  out.p = p0 + d * s3 * (10.0 + s * (-15.0 + 6.0 * s));
  out.v = d * s2 * (30.0 + s * (-60.0 + 30.0 * s)) / T;
  out.a = d * s * (60.0 + s * (-180.0 + 120.0 * s)) / (T * T);
  return out;
}

SlerpSample slerp_sample(const Eigen::Quaterniond& q0, const Eigen::Quaterniond& qT, double T, double t) {
  if (!(T > 0.0)) throw std::invalid_argument("slerp duration must be positive");
  if (t < 0.0 || t > T) throw std::invalid_argument("slerp sample time outside [0, T]");
  Eigen::Quaterniond a = q0.normalized(), b = qT.normalized();
  if (a.dot(b) < 0.0) b.coeffs() = -b.coeffs();
  const Vec3 rel = rotation_vector(b * a.conjugate());
  SlerpSample out;
  out.omega = rel / T;
  if (t == 0.0)
    out.q = q0;
  else if (t == T)
    out.q = qT;
  else
    out.q = (quat_exp(rel * (t / T)) * a).normalized();
  return out;
}

const char* stage_name(Stage s) {
  switch (s) {
    case Stage::grasp: return "grasp";
    case Stage::pick: return "pick";
    case Stage::place: return "place";
  }
  return "?";
}

void TrajectorySpec::validate() const {
  for (double d : durations)
    if (!(d > 0.0)) throw std::invalid_argument("stage durations must be positive");
  if (!(dt_ctrl > 0.0)) throw std::invalid_argument("dt_ctrl must be positive");
  if (z_min > z_max) throw std::invalid_argument("empty waypoint z-range");
  if (z_min < workspace_z_min || z_max > workspace_z_max)
    throw std::invalid_argument("waypoint z-range leaves the workspace");
}

int TrajectorySpec::ticks() const { return static_cast<int>(std::lround(duration() / dt_ctrl)); }

Pose make_waypoint(const Pose& start, const Pose& goal, const TrajectorySpec& spec, std::mt19937_64& rng) {
  spec.validate();
  Pose w;
  w.position.x() = 0.5 * (start.position.x() + goal.position.x());
  w.position.y() = 0.5 * (start.position.y() + goal.position.y());
  if (spec.z_min == spec.z_max) {
    w.position.z() = spec.z_min;
  } else {
    std::uniform_real_distribution<double> uz(spec.z_min, spec.z_max);
    w.position.z() = uz(rng);
  }
  w.orientation = slerp_sample(start.orientation, goal.orientation, 1.0, 0.5).q;
  return w;
}

ReferenceSample object_to_ee(const ReferenceSample& object, const Pose& offset) {
  ReferenceSample out;
  out.pose = object.pose * offset;
  const Vec3 r = out.pose.position - object.pose.position;
  const Vec3& w = object.twist.angular;
  out.twist.angular = w;
  out.twist.linear = object.twist.linear + w.cross(r);
  const Vec3 alpha = object.accel.tail<3>();
  out.accel.head<3>() = object.accel.head<3>() + alpha.cross(r) + w.cross(w.cross(r));
  out.accel.tail<3>() = alpha;
  return out;
}

ObjectTrajectory::ObjectTrajectory(const TrajectorySpec& spec) : spec_(spec) {
  spec_.validate();
  std::mt19937_64 rng(spec_.seed);
  waypoint_ = make_waypoint(spec_.start, spec_.goal, spec_, rng);
}

double ObjectTrajectory::stage_start(Stage s) const {
  switch (s) {
    case Stage::grasp: return 0.0;
    case Stage::pick: return spec_.durations[0];
    case Stage::place: return spec_.durations[0] + spec_.durations[1];
  }
  return 0.0;
}

Stage ObjectTrajectory::stage_at(double t) const {
  if (t < stage_start(Stage::pick)) return Stage::grasp;
  if (t < stage_start(Stage::place)) return Stage::pick;
  return Stage::place;
}

ReferenceSample ObjectTrajectory::sample(double t) const {
  t = std::clamp(t, 0.0, duration());
  const Stage st = stage_at(t);
  ReferenceSample out;
  if (st == Stage::grasp) {
    out.pose = spec_.start;
    return out;
  }
  const Pose& a = st == Stage::pick ? spec_.start : waypoint_;
  const Pose& b = st == Stage::pick ? waypoint_ : spec_.goal;
  const double T = spec_.durations[static_cast<size_t>(st)];
  const double tau = std::min(t - stage_start(st), T);
  for (int i = 0; i < 3; ++i) {
    const QuinticSample q = quintic_sample(a.position(i), b.position(i), T, tau);
    out.pose.position(i) = q.p;
    out.twist.linear(i) = q.v;
    out.accel(i) = q.a;
  }
  const SlerpSample r = slerp_sample(a.orientation, b.orientation, T, tau);
  out.pose.orientation = r.q;
  out.twist.angular = r.omega;
  return out;
}

void write_reference_csv(const std::filesystem::path& path, const ObjectTrajectory& traj,
                         const std::array<Pose, 2>& grasp_offsets) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "time,stage";
  for (const char* who : {"obj", "left", "right"})
    for (const char* c : {"px", "py", "pz", "qw", "qx", "qy", "qz", "vx", "vy", "vz", "wx", "wy", "wz"})
      out << ',' << who << '_' << c;
  out << '\n' << std::setprecision(10);
  const int n = traj.spec().ticks();
  for (int k = 0; k <= n; ++k) {
    const double t = k * traj.spec().dt_ctrl;
    const ReferenceSample o = traj.sample(t);
    out << t << ',' << stage_name(traj.stage_at(t));
    for (const ReferenceSample& s : {o, object_to_ee(o, grasp_offsets[0]), object_to_ee(o, grasp_offsets[1])}) {
      const Pose& p = s.pose;
      out << ',' << p.position.x() << ',' << p.position.y() << ',' << p.position.z() << ',' << p.orientation.w()
          << ',' << p.orientation.x() << ',' << p.orientation.y() << ',' << p.orientation.z();
      for (int i = 0; i < 3; ++i) out << ',' << s.twist.linear(i);
      for (int i = 0; i < 3; ++i) out << ',' << s.twist.angular(i);
    }
    out << '\n';
  }
}

}  // namespace davil
