#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "davil/stiffness_policy.hpp"

namespace davil {

struct PPOConfig {
  double gamma = 0.99;
  double lambda = 0.95;
  double clip = 0.2;
  int epochs = 4;
  int minibatches = 4;
  double lr = 3e-4;
  double value_coef = 0.5;
  double entropy_coef = 0.01;
  double max_grad_norm = 0.5;  // <= 0 disables clipping
  double reward_scale = 0.01;  // applied before GAE so value targets stay O(1)
  bool normalize_advantages = true;
  int grad_chunk = 64;  // samples per gradient chunk; fixed so the sum order never depends on threads

  void validate() const;
};

struct TrainConfig {
  PPOConfig ppo;
  PolicyConfig policy;
  RewardConfig reward;
  ControlMode mode = ControlMode::qp;
  std::vector<std::string> objects;
  std::vector<double> masses;
  int iterations = 50;
  int episodes_per_iteration = 8;
  std::uint64_t seed = 0;
  bool parallel = true;

  void validate() const;
};

/// min(r A, clip(r, 1 - eps, 1 + eps) A)
double clipped_surrogate(double ratio, double advantage, double eps);

/// Generalized advantage estimation over one trajectory. done[t] cuts the bootstrap after t.
void compute_gae(const std::vector<double>& rewards, const std::vector<double>& values, const std::vector<bool>& done,
                 double last_value, double gamma, double lambda, std::vector<double>& advantages,
                 std::vector<double>& returns);

/// Flattened training samples, one column per transition.
struct Batch {
  MatX obs;
  std::vector<std::vector<int>> actions;
  VecX old_log_prob, advantages, returns;

  int size() const { return static_cast<int>(old_log_prob.size()); }
  Batch subset(const std::vector<int>& idx) const;
};

Batch make_batch(const std::vector<EpisodeRecord>& episodes, const PPOConfig& cfg);

struct LossTerms {
  double policy_loss = 0.0;  // -mean surrogate
  double value_loss = 0.0;   // mean (V - R)^2
  double entropy = 0.0;      // mean summed entropy of the per-dimension distributions
  double total = 0.0;        // policy_loss + c_v value_loss - c_e entropy
  double approx_kl = 0.0;
  double clip_fraction = 0.0;
};

/// Loss on a batch; when grad is non-null, the flat gradient of total w.r.t. params() is written there.
/// Chunks of cfg.grad_chunk samples are evaluated in parallel when parallel is set and summed in order.
LossTerms ppo_loss(const StiffnessPolicy& policy, const Batch& batch, const PPOConfig& cfg, VecX* grad,
                   bool parallel = true);

/// Random episodes for one training iteration (object, mass, goal and waypoint seed per episode).
std::vector<EpisodeSpec> sample_episodes(const Scene& scene, const TrainConfig& cfg, int iteration);

/// Rollouts for a list of episodes; parallel over episodes, results in input order.
std::vector<EpisodeRecord> collect_rollouts(const Scene& scene, const std::vector<EpisodeSpec>& specs,
                                            const StiffnessPolicy& policy, const RewardConfig& reward,
                                            const std::vector<std::uint64_t>& seeds, const RolloutOptions& opt,
                                            bool parallel);

struct IterationLog {
  int iteration = 0;
  double mean_return = 0.0;
  double mean_length = 0.0;
  int faults = 0;
  LossTerms loss;  // averaged over the last epoch's minibatches
  VecX k_mean, k_var;
};

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainResult {
  StiffnessPolicy policy;
  std::vector<IterationLog> log;
};

/// checkpoint_dir, when given, receives diverged.json if training blows up.
TrainResult train(const Scene& scene, const TrainConfig& cfg, const std::filesystem::path& checkpoint_dir = {},
                  const std::function<void(const IterationLog&)>& on_iteration = {});

/// Columns: iteration, mean_return, mean_length, faults, policy_loss, value_loss, entropy, approx_kl,
/// clip_fraction, k_mean_<d>..., k_var_<d>...
void write_training_log(const std::filesystem::path& path, const std::vector<IterationLog>& log);

}  // namespace davil
