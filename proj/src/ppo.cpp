#include "davil/ppo.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>

#include <omp.h>

namespace davil {

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Loss contributions and flat gradient of one chunk; every term is already divided by the full batch size.
struct ChunkResult {
  double surrogate = 0, value = 0, entropy = 0, kl = 0, clipped = 0;
  VecX grad;
};

ChunkResult chunk_loss(const StiffnessPolicy& pol, const Batch& b, int begin, int end, const PPOConfig& cfg,
                       bool want_grad) {
  const BinSet& bins = pol.config().bins;
  const int n = end - begin;
  const double inv = 1.0 / b.size();
  PolicyTape tape;
  MatX logits, values;
  pol.forward(b.obs.middleCols(begin, n), logits, values, want_grad ? &tape : nullptr);
  MatX dlogits = MatX::Zero(logits.rows(), n), dvalues(1, n);
  ChunkResult r;
  for (int c = 0; c < n; ++c) {
    const int s = begin + c;
    const VecX lp = log_softmax_segments(logits.col(c), bins);
    const VecX p = lp.array().exp();
    double logp = 0.0;
    for (int d = 0; d < bins.dims(); ++d) logp += lp(bins.offset(d) + b.actions[s][d]);
    const double A = b.advantages(s);
    const double ratio = std::exp(logp - b.old_log_prob(s));
    const double surr = clipped_surrogate(ratio, A, cfg.clip);
    r.surrogate += surr * inv;
    r.kl += (b.old_log_prob(s) - logp) * inv;
    if (std::abs(ratio - 1.0) > cfg.clip) r.clipped += inv;
    // d(-surr)/d logp; the clipped branch is flat in the parameters
    const double g_logp = ratio * A <= surr ? -ratio * A * inv : 0.0;
    const double v_err = values(0, c) - b.returns(s);
    r.value += v_err * v_err * inv;
    dvalues(0, c) = cfg.value_coef * 2.0 * v_err * inv;
    for (int d = 0; d < bins.dims(); ++d) {
      const int o = bins.offset(d), m = bins.range(d).count();
      const double H = -(p.segment(o, m).array() * lp.segment(o, m).array()).sum();
      r.entropy += H * inv;
      if (!want_grad) continue;
      // d logp / d logit = onehot - p ; dH / d logit = -p (log p + H)
      auto col = dlogits.col(c).segment(o, m);
      col = -g_logp * p.segment(o, m);
      col(b.actions[s][d]) += g_logp;
      col.array() += cfg.entropy_coef * p.segment(o, m).array() * (lp.segment(o, m).array() + H) * inv;
    }
  }
  if (want_grad) {
    PolicyGrads g = pol.zero_grads();
    pol.backward(tape, dlogits, dvalues, g);
    r.grad = pol.flatten(g);
  }
  return r;
}

}  // namespace

void PPOConfig::validate() const {
  if (!(gamma > 0 && gamma <= 1) || !(lambda >= 0 && lambda <= 1)) throw std::invalid_argument("bad gamma/lambda");
  if (!(clip > 0)) throw std::invalid_argument("clip must be positive");
  if (epochs < 1 || minibatches < 1 || grad_chunk < 1) throw std::invalid_argument("bad PPO loop sizes");
  if (!(lr >= 0) || !(value_coef >= 0) || !(entropy_coef >= 0) || !(reward_scale > 0)) throw std::invalid_argument("bad PPO coefficients");
}

void TrainConfig::validate() const {
  ppo.validate();
  policy.validate();
  reward.validate();
  if (objects.empty() || masses.empty()) throw std::invalid_argument("training needs objects and masses");
  for (double m : masses)
    if (!(m > 0)) throw std::invalid_argument("masses must be positive");
  if (iterations < 0 || episodes_per_iteration < 1) throw std::invalid_argument("bad iteration counts");
}

double clipped_surrogate(double ratio, double advantage, double eps) {
  return std::min(ratio * advantage, std::clamp(ratio, 1.0 - eps, 1.0 + eps) * advantage);
}

void compute_gae(const std::vector<double>& rewards, const std::vector<double>& values, const std::vector<bool>& done,
                 double last_value, double gamma, double lambda, std::vector<double>& adv, std::vector<double>& ret) {
  const size_t T = rewards.size();
  if (values.size() != T || done.size() != T) throw std::invalid_argument("GAE inputs differ in length");
  adv.assign(T, 0.0);
  ret.assign(T, 0.0);
  double next_value = last_value, gae = 0.0;
  for (size_t k = T; k-- > 0;) {
    const double live = done[k] ? 0.0 : 1.0;
    const double delta = rewards[k] + gamma * next_value * live - values[k];
    gae = delta + gamma * lambda * live * gae;
    adv[k] = gae;
    ret[k] = gae + values[k];
    next_value = values[k];
  }
}

Batch Batch::subset(const std::vector<int>& idx) const {
  Batch b;
  const int n = static_cast<int>(idx.size());
  b.obs.resize(obs.rows(), n);
  b.old_log_prob.resize(n);
  b.advantages.resize(n);
  b.returns.resize(n);
  for (int i = 0; i < n; ++i) {
    const int s = idx[static_cast<size_t>(i)];
    b.obs.col(i) = obs.col(s);
    b.actions.push_back(actions[static_cast<size_t>(s)]);
    b.old_log_prob(i) = old_log_prob(s);
    b.advantages(i) = advantages(s);
    b.returns(i) = returns(s);
  }
  return b;
}

Batch make_batch(const std::vector<EpisodeRecord>& episodes, const PPOConfig& cfg) {
  size_t total = 0;
  for (const auto& e : episodes) total += e.steps.size();
  if (total == 0) throw std::invalid_argument("no transitions to train on");
  Batch b;
  b.obs.resize(episodes.front().steps.front().obs.size(), static_cast<Eigen::Index>(total));
  b.old_log_prob.resize(static_cast<Eigen::Index>(total));
  b.advantages.resize(static_cast<Eigen::Index>(total));
  b.returns.resize(static_cast<Eigen::Index>(total));
  Eigen::Index c = 0;
  for (const auto& e : episodes) {
    std::vector<double> r, v, adv, ret;
    std::vector<bool> d;
    for (const auto& t : e.steps) {
      r.push_back(t.reward * cfg.reward_scale);
      v.push_back(t.value);
      d.push_back(t.done);
    }
    compute_gae(r, v, d, 0.0, cfg.gamma, cfg.lambda, adv, ret);
    for (size_t k = 0; k < e.steps.size(); ++k, ++c) {
      b.obs.col(c) = e.steps[k].obs;
      b.actions.push_back(e.steps[k].action);
      b.old_log_prob(c) = e.steps[k].log_prob;
      b.advantages(c) = adv[k];
      b.returns(c) = ret[k];
    }
  }
  if (cfg.normalize_advantages && total > 1) {
    const double mean = b.advantages.mean();
    const double sd = std::sqrt((b.advantages.array() - mean).square().mean());
    b.advantages = (b.advantages.array() - mean) / (sd + 1e-8);
  }
  return b;
}

LossTerms ppo_loss(const StiffnessPolicy& policy, const Batch& batch, const PPOConfig& cfg, VecX* grad,
                   bool parallel) {
  if (batch.size() == 0) throw std::invalid_argument("empty batch");
  const int nchunks = (batch.size() + cfg.grad_chunk - 1) / cfg.grad_chunk;
  std::vector<ChunkResult> parts(static_cast<size_t>(nchunks));
  const bool want_grad = grad != nullptr;
#pragma omp parallel for schedule(static) if (parallel)
  for (int k = 0; k < nchunks; ++k) {
    const int begin = k * cfg.grad_chunk, end = std::min(batch.size(), begin + cfg.grad_chunk);
    parts[static_cast<size_t>(k)] = chunk_loss(policy, batch, begin, end, cfg, want_grad);
  }
  LossTerms L;
  double surr = 0.0;
  if (want_grad) *grad = VecX::Zero(policy.num_params());
  for (const auto& p : parts) {
    surr += p.surrogate;
    L.value_loss += p.value;
    L.entropy += p.entropy;
    L.approx_kl += p.kl;
    L.clip_fraction += p.clipped;
    if (want_grad) *grad += p.grad;
  }
  L.policy_loss = -surr;
  L.total = L.policy_loss + cfg.value_coef * L.value_loss - cfg.entropy_coef * L.entropy;
  return L;
}

std::vector<EpisodeSpec> sample_episodes(const Scene& scene, const TrainConfig& cfg, int iteration) {
  std::mt19937_64 rng(splitmix(cfg.seed ^ splitmix(static_cast<std::uint64_t>(iteration) + 1)));
  std::vector<EpisodeSpec> specs;
  for (int e = 0; e < cfg.episodes_per_iteration; ++e) {
    EpisodeSpec s;
    s.object = cfg.objects[std::uniform_int_distribution<size_t>(0, cfg.objects.size() - 1)(rng)];
    s.mass = cfg.masses[std::uniform_int_distribution<size_t>(0, cfg.masses.size() - 1)(rng)];
    s.goal = sample_goals(scene, 1, rng()).front();
    s.seed = rng();
    specs.push_back(s);
  }
  return specs;
}

std::vector<EpisodeRecord> collect_rollouts(const Scene& scene, const std::vector<EpisodeSpec>& specs,
                                            const StiffnessPolicy& policy, const RewardConfig& reward,
                                            const std::vector<std::uint64_t>& seeds, const RolloutOptions& opt,
                                            bool parallel) {
  if (seeds.size() != specs.size()) throw std::invalid_argument("one rollout seed per episode");
  std::vector<EpisodeRecord> out(specs.size());
  std::vector<std::string> errors(specs.size());
  const int n = static_cast<int>(specs.size());
#pragma omp parallel for schedule(dynamic) if (parallel)
  for (int i = 0; i < n; ++i) {
    try {
      out[static_cast<size_t>(i)] = rollout(scene, specs[static_cast<size_t>(i)], policy, reward,
                                            seeds[static_cast<size_t>(i)], opt);
    } catch (const std::exception& e) {
      errors[static_cast<size_t>(i)] = e.what();
    }
  }
  for (size_t i = 0; i < errors.size(); ++i)
    if (!errors[i].empty()) throw std::runtime_error("rollout " + std::to_string(i) + " failed: " + errors[i]);
  return out;
}

TrainResult train(const Scene& scene, const TrainConfig& cfg, const std::filesystem::path& checkpoint_dir,
                  const std::function<void(const IterationLog&)>& on_iteration) {
  cfg.validate();
  TrainResult res{StiffnessPolicy(cfg.policy, splitmix(cfg.seed)), {}};
  StiffnessPolicy& pol = res.policy;
  Adam opt(pol.num_params(), cfg.ppo.lr);
  VecX params = pol.params();
  auto diverge = [&](const std::string& what) {
    if (!checkpoint_dir.empty()) pol.save(checkpoint_dir / "diverged.json");
    throw TrainingDiverged(what);
  };
  for (int it = 0; it < cfg.iterations; ++it) {
    const std::vector<EpisodeSpec> specs = sample_episodes(scene, cfg, it);
    std::vector<std::uint64_t> seeds;
    for (size_t e = 0; e < specs.size(); ++e) seeds.push_back(splitmix(specs[e].seed ^ 0x5eedULL));
    RolloutOptions ro;
    ro.mode = cfg.mode;
    const std::vector<EpisodeRecord> eps = collect_rollouts(scene, specs, pol, cfg.reward, seeds, ro, cfg.parallel);

    IterationLog log;
    log.iteration = it;
    const int dims = cfg.policy.bins.dims();
    log.k_mean = VecX::Zero(dims);
    log.k_var = VecX::Zero(dims);
    double steps = 0.0;
    for (const auto& e : eps) {
      log.mean_return += e.episode_return / static_cast<double>(eps.size());
      log.mean_length += static_cast<double>(e.steps.size()) / static_cast<double>(eps.size());
      log.faults += e.faulted ? 1 : 0;
      for (const auto& t : e.steps) {
        log.k_mean += t.stiffness;
        log.k_var += t.stiffness.cwiseAbs2();
        steps += 1.0;
      }
    }
    log.k_mean /= steps;
    log.k_var = log.k_var / steps - log.k_mean.cwiseAbs2();

    const Batch batch = make_batch(eps, cfg.ppo);
    std::mt19937_64 rng(splitmix(cfg.seed + 7919ULL * static_cast<std::uint64_t>(it + 1)));
    std::vector<int> order(static_cast<size_t>(batch.size()));
    for (int ep = 0; ep < cfg.ppo.epochs; ++ep) {
      std::iota(order.begin(), order.end(), 0);
      std::shuffle(order.begin(), order.end(), rng);
      LossTerms acc;
      const int per = (batch.size() + cfg.ppo.minibatches - 1) / cfg.ppo.minibatches;
      int used = 0;
      for (int mb = 0; mb < cfg.ppo.minibatches; ++mb) {
        const int begin = mb * per, end = std::min(batch.size(), begin + per);
        if (begin >= end) break;
        const Batch sub = batch.subset(std::vector<int>(order.begin() + begin, order.begin() + end));
        VecX g;
        const LossTerms L = ppo_loss(pol, sub, cfg.ppo, &g, cfg.parallel);
        if (!std::isfinite(L.total) || !g.allFinite()) diverge("non-finite loss at iteration " + std::to_string(it));
        const double gn = g.norm();
        if (cfg.ppo.max_grad_norm > 0 && gn > cfg.ppo.max_grad_norm) g *= cfg.ppo.max_grad_norm / gn;
        opt.step(params, g);
        if (!params.allFinite()) diverge("non-finite parameters at iteration " + std::to_string(it));
        pol.set_params(params);
        acc.policy_loss += L.policy_loss;
        acc.value_loss += L.value_loss;
        acc.entropy += L.entropy;
        acc.total += L.total;
        acc.approx_kl += L.approx_kl;
        acc.clip_fraction += L.clip_fraction;
        ++used;
      }
      if (ep + 1 == cfg.ppo.epochs) {
        for (double* v : {&acc.policy_loss, &acc.value_loss, &acc.entropy, &acc.total, &acc.approx_kl,
                          &acc.clip_fraction})
          *v /= used;
        log.loss = acc;
      }
    }
    res.log.push_back(log);
    if (on_iteration) on_iteration(log);
  }
  return res;
}

void write_training_log(const std::filesystem::path& path, const std::vector<IterationLog>& log) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  const int dims = log.empty() ? 6 : static_cast<int>(log.front().k_mean.size());
  f << "iteration,mean_return,mean_length,faults,policy_loss,value_loss,entropy,approx_kl,clip_fraction";
  for (int d = 0; d < dims; ++d) f << ",k_mean_" << d;
  for (int d = 0; d < dims; ++d) f << ",k_var_" << d;
  f << '\n' << std::setprecision(10);
  for (const auto& l : log) {
    f << l.iteration << ',' << l.mean_return << ',' << l.mean_length << ',' << l.faults << ',' << l.loss.policy_loss
      << ',' << l.loss.value_loss << ',' << l.loss.entropy << ',' << l.loss.approx_kl << ',' << l.loss.clip_fraction;
    for (int d = 0; d < dims; ++d) f << ',' << l.k_mean(d);
    for (int d = 0; d < dims; ++d) f << ',' << l.k_var(d);
    f << '\n';
  }
}

}  // namespace davil
