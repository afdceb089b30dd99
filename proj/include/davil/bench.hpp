#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "davil/stiffness_policy.hpp"

namespace davil {

enum class Method { ours, oic, ic, rl_ic, ours_no_ema };
inline constexpr std::array<Method, 5> kMethods{Method::ours, Method::oic, Method::ic, Method::rl_ic,
                                                Method::ours_no_ema};

const char* method_name(Method m);
Method method_from_string(const std::string& s);  // throws on unknown names
bool is_learned(Method m);
ControlMode method_control(Method m);

struct ExperimentConfig {
  std::vector<std::string> objects;
  std::vector<double> masses;
  int goal_count = 20;
  std::uint64_t goal_seed = 0;
  std::vector<std::uint64_t> seeds{0, 1, 2};  // waypoint height and OIC draws
  Stiffness ic_stiffness = (Stiffness() << 300, 300, 300, 200, 200, 200).finished();
  BinSet bins;  // OIC draws from these
  double goal_radius = 0.03;
  std::map<std::string, std::filesystem::path> checkpoints;  // learned method -> policy file

  void validate() const;
  int grid_size() const { return static_cast<int>(objects.size() * masses.size() * seeds.size()) * goal_count; }
};

struct RunRecord {
  Method method = Method::ours;
  std::string object;
  double mass = 0.0;
  int goal_index = 0;
  std::uint64_t seed = 0;
  int horizon = 0;  // planned ticks
  std::vector<double> time;
  std::vector<Stage> stage;
  std::vector<Pose> reference, actual;  // object pose
  std::vector<VecX> stiffness;          // 6 shared or 12 per-arm entries
  std::vector<VecX> tau_left, tau_right;
  std::vector<QPStatus> status;
  bool goal_reached = false;
  bool slipped = false;
  bool faulted = false;
  std::string fault_reason;

  int ticks() const { return static_cast<int>(time.size()); }
  /// Mean over the planned horizon of the reference-to-actual position distance.
  /// A faulted run holds its last error for the ticks it never reached.
  double mean_position_error() const;
  double peak_abs_torque(int joint) const;  // max over both arms and all ticks
};

/// Mean over masses of the per-mass mean of mean_position_error.
double tracking_error(const std::vector<const RunRecord*>& runs);
double tracking_error(const std::vector<RunRecord>& runs);

struct EpisodeKey {
  std::string object;
  double mass = 0.0;
  int goal_index = 0;
  std::uint64_t seed = 0;
};

/// Full evaluation grid in a fixed order: object, mass, goal, seed.
std::vector<EpisodeKey> evaluation_grid(const ExperimentConfig& cfg);
EpisodeSpec episode_for(const EpisodeKey& key, const std::vector<Pose>& goals);

/// OIC stiffness for one episode: uniform over the bins, drawn from a seed derived from the episode key.
VecX oic_stiffness(const ExperimentConfig& cfg, const EpisodeKey& key);

/// policy is required for learned methods and ignored otherwise.
RunRecord run_method_episode(const Scene& scene, const ExperimentConfig& cfg, Method method, const EpisodeKey& key,
                             const std::vector<Pose>& goals, const StiffnessPolicy* policy);

/// Every episode of the grid, parallel over episodes; output in grid order.
std::vector<RunRecord> run_method(const Scene& scene, const ExperimentConfig& cfg, Method method,
                                  const StiffnessPolicy* policy, bool parallel = true);

struct MetricsCell {
  std::string object;  // "all" for the pooled row
  double mass = 0.0;   // 0 for "all masses"
  int runs = 0;
  double tracking_error = 0.0;
  double variance = 0.0;  // of per-run mean errors
  double success_rate = 0.0;
  int faults = 0;
  int slips = 0;
};

struct MetricsReport {
  Method method = Method::ours;
  std::vector<std::string> objects;
  std::vector<double> masses;
  int runs_per_cell = 0;
  std::vector<MetricsCell> cells;  // per (object, mass), per object over masses, then "all"

  const MetricsCell& find(const std::string& object, double mass = 0.0) const;
};

/// Throws when the runs do not cover exactly the configured grid.
MetricsReport summarize(const ExperimentConfig& cfg, Method method, const std::vector<RunRecord>& runs);

/// Columns: method, object, mass, runs, tracking_error_m, variance_m2, success_rate, faults, slips.
void write_metrics_csv(const std::filesystem::path& path, const MetricsReport& report);
/// Columns: method, object, mass, goal, seed, ticks, mean_error_m, peak_shoulder_torque, faulted, slipped, goal_reached.
void write_runs_csv(const std::filesystem::path& path, const std::vector<RunRecord>& runs);

/// Rows: objects then "all"; columns: methods in the given order. Throws on mismatched grids.
std::string compare_table(const std::vector<MetricsReport>& reports);
void write_compare_table(const std::filesystem::path& path, const std::vector<MetricsReport>& reports);

/// <prefix>_stiffness.csv (tick, time, stage, K...) and <prefix>_torque.csv (tick, time, stage, tau_left_*, tau_right_*).
void emit_timeseries(const RunRecord& run, const std::filesystem::path& prefix);

/// 64-bit FNV-1a.
std::uint64_t fnv1a(const std::string& bytes);

/// manifest.json: config hash, seed, command, versions and the files in the directory.
void write_manifest(const std::filesystem::path& dir, const std::string& config_text, std::uint64_t seed,
                    const std::string& command);

}  // namespace davil
