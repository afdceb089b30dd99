#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>

#include "davil/rigid_body.hpp"

namespace davil {

struct QuinticSample {
  double p = 0, v = 0, a = 0;
};

/// Rest-to-rest quintic 10s^3 - 15s^4 + 6s^5. Throws for T <= 0 or t outside [0, T].
QuinticSample quintic_sample(double p0, double pT, double T, double t);

struct SlerpSample {
  Eigen::Quaterniond q = Eigen::Quaterniond::Identity();
  Vec3 omega = Vec3::Zero();  // world frame, constant over the segment
};

/// Shortest-arc SLERP at s = t/T.
SlerpSample slerp_sample(const Eigen::Quaterniond& q0, const Eigen::Quaterniond& qT, double T, double t);

enum class Stage { grasp = 0, pick = 1, place = 2 };
const char* stage_name(Stage s);

struct TrajectorySpec {
  Pose start;
  Pose goal;
  double z_min = 0.3, z_max = 0.6;               // waypoint height range
  double workspace_z_min = 0.0, workspace_z_max = 1.2;
  std::array<double, 3> durations{2.0, 3.0, 3.0};  // grasp, pick, place
  double dt_ctrl = 1e-2;
  std::uint64_t seed = 0;

  void validate() const;
  double duration() const { return durations[0] + durations[1] + durations[2]; }
  int ticks() const;
};

struct ReferenceSample {
  Pose pose;
  Twist twist;
  Vec6 accel = Vec6::Zero();  // linear then angular
};

Pose make_waypoint(const Pose& start, const Pose& goal, const TrajectorySpec& spec, std::mt19937_64& rng);

/// Rigidly transport an object reference to a frame fixed on the object.
ReferenceSample object_to_ee(const ReferenceSample& object, const Pose& offset);

/// Three-stage object reference: hold at start, start -> waypoint, waypoint -> goal.
class ObjectTrajectory {
 public:
  explicit ObjectTrajectory(const TrajectorySpec& spec);

  ReferenceSample sample(double t) const;
  Stage stage_at(double t) const;
  double stage_start(Stage s) const;
  const Pose& waypoint() const { return waypoint_; }
  const TrajectorySpec& spec() const { return spec_; }
  double duration() const { return spec_.duration(); }

 private:
  TrajectorySpec spec_;
  Pose waypoint_;
};

/// One row per control tick: object reference and the two transported gripper references.
void write_reference_csv(const std::filesystem::path& path, const ObjectTrajectory& traj,
                         const std::array<Pose, 2>& grasp_offsets);

}  // namespace davil
