#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "davil/policy_net.hpp"
#include "davil/task.hpp"

namespace davil {

/// Pairs (sin(v / 10000^(2i/dim)), cos(...)) for i = 0 .. dim/2 - 1.
VecX sinusoidal_embedding(double value, int dim = 8);

/// Stiffness values lo, lo + step, ..., hi.
struct BinRange {
  double lo = 20.0, hi = 600.0, step = 20.0;

  void validate() const;
  int count() const;
  double value(int i) const;
  int index_of(double v) const;  // throws when v is not a bin value
};

struct BinSet {
  BinRange trans{20.0, 600.0, 20.0};
  BinRange rot{20.0, 400.0, 20.0};
  bool per_arm = false;  // 12 action dimensions (left then right) instead of one shared 6

  int dims() const { return per_arm ? 12 : 6; }
  const BinRange& range(int d) const { return (d % 6) < 3 ? trans : rot; }
  int total_bins() const;
  int offset(int d) const;  // first logit of dimension d
};

/// Observation blocks, in order: dx_L(7) dx_R(7) X(7) q_L(7) q_R(7) f_L(6) f_R(6) K_prev(6|12) t_emb(8) m_emb(8).
struct ObservationLayout {
  bool per_arm = false;
  int size() const { return per_arm ? 75 : 69; }
  static constexpr int dx_left = 0, dx_right = 7, object = 14, q_left = 21, q_right = 28, f_left = 35, f_right = 41,
                       k_prev = 47;
  int t_emb() const { return k_prev + (per_arm ? 12 : 6); }
  int m_emb() const { return t_emb() + 8; }
};

/// Joint vectors shorter than 7 are zero-padded. f is the sensed grasp reaction wrench.
VecX build_observation(const WorldModel& model, const WorldState& world, const WorldState& prev, const VecX& k_prev,
                       int tick, double mass, bool per_arm = false);

/// Fixed per-entry input scaling applied inside the network.
VecX observation_scale(const ObservationLayout& layout, const BinSet& bins);

struct PolicyConfig {
  int hidden = 128;
  int extractor_layers = 4;
  int head_layers = 5;
  BinSet bins;

  void validate() const;
};

struct PolicyTape {
  MlpTape extractor, policy, value;
};

struct PolicyGrads {
  std::vector<DenseLayer> extractor, policy, value;
};

struct ActionSample {
  std::vector<int> bins;
  VecX stiffness;  // dims() values
  double log_prob = 0.0;
  double value = 0.0;
};

/// Feature extractor -> (policy head: per-dimension categorical logits, value head: scalar).
class StiffnessPolicy {
 public:
  StiffnessPolicy() = default;
  StiffnessPolicy(const PolicyConfig& cfg, std::uint64_t seed);

  const PolicyConfig& config() const { return cfg_; }
  ObservationLayout layout() const { return {cfg_.bins.per_arm}; }

  /// obs: layout().size() x B. Returns logits (total_bins x B) and values (1 x B).
  void forward(const MatX& obs, MatX& logits, MatX& values, PolicyTape* tape = nullptr) const;
  void backward(const PolicyTape& tape, const MatX& dlogits, const MatX& dvalues, PolicyGrads& g) const;
  PolicyGrads zero_grads() const;

  /// rng == nullptr: greedy (argmax per dimension).
  ActionSample act(const VecX& obs, std::mt19937_64* rng) const;
  VecX stiffness_of(const std::vector<int>& bins) const;

  int num_params() const;
  VecX params() const;
  void set_params(const VecX& p);
  VecX flatten(const PolicyGrads& g) const;

  void save(const std::filesystem::path& path) const;
  static StiffnessPolicy load(const std::filesystem::path& path);

  Mlp& extractor() { return extractor_; }
  Mlp& policy_head() { return policy_; }
  Mlp& value_head() { return value_; }

 private:
  PolicyConfig cfg_;
  VecX scale_;
  Mlp extractor_, policy_, value_;
};

/// Per-dimension log-softmax of a logit column.
VecX log_softmax_segments(const VecX& logits, const BinSet& bins);

struct EMATracker {
  VecX ema;
  bool initialized = false;

  /// First call sets EMA = K; then EMA <- alpha EMA + (1 - alpha) K.
  void update(const VecX& K, double alpha);
  double deviation(const VecX& K) const;  // infinity norm, 0 before initialization
};

struct RewardConfig {
  double w_track_ee = 1.0;
  double w_track_obj = 1.0;
  double w_goal = 10.0;
  double r_infeasible = 5.0;
  double r_ema = 1.0;
  double ema_alpha = 0.9;
  double ema_threshold = 100.0;
  double goal_radius = 0.03;  // m
  double track_scale = 0.01;  // error scale inside exp(-e / s)
  bool use_ema = true;

  void validate() const;
  double floor() const { return -(r_infeasible + (use_ema ? r_ema : 0.0)); }
  double ceiling() const { return w_track_ee + w_track_obj + w_goal; }
};

struct RewardTerms {
  double ee = 0, obj = 0, goal = 0, infeasible = 0, ema = 0;
  double total() const { return ee + obj + goal - infeasible - ema; }
};

/// Dense reward for one tick. ema is the tracker state before this tick's K is folded in.
/// A faulted tick earns the reward floor.
RewardTerms compute_reward(const TickInfo& tick, const Vec3& object_position, const Pose& goal, const VecX& K,
                           const EMATracker& ema, const RewardConfig& cfg);

class PolicyFault : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bin nearest the middle of each range, rounded down: (300, 300, 300, 200, 200, 200) for the default bins.
VecX middle_stiffness(const BinSet& bins);

/// Per-arm stiffness from an action vector (6 shared or 12 left-then-right).
std::array<Stiffness, 2> split_stiffness(const VecX& K);

struct Transition {
  VecX obs;
  std::vector<int> action;
  VecX stiffness;
  double log_prob = 0.0;
  double value = 0.0;
  double reward = 0.0;
  bool done = false;
  RewardTerms terms;
};

struct EpisodeRecord {
  std::vector<Transition> steps;
  std::vector<TickInfo> ticks;  // only filled when asked for
  double episode_return = 0.0;
  bool faulted = false;
  std::string fault_reason;
};

struct RolloutOptions {
  ControlMode mode = ControlMode::qp;
  bool deterministic = false;  // greedy actions
  bool keep_ticks = false;
};

/// Run one episode with the policy choosing K every control tick.
EpisodeRecord rollout(const Scene& scene, const EpisodeSpec& spec, const StiffnessPolicy& policy,
                      const RewardConfig& reward, std::uint64_t seed, const RolloutOptions& opt = {});

}  // namespace davil
