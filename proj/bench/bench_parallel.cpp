// Serial vs OpenMP timings for the three parallel kernels: rollout collection, the chunked PPO gradient and
// grid evaluation. Results are also checked for equality, since the parallel paths must not change any number.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <string>

#include <omp.h>

#include "davil/config.hpp"

using namespace davil;

namespace {

double seconds(const std::function<void()>& f) {
  const auto t0 = std::chrono::steady_clock::now();
  f();
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void report(const char* name, double serial, double parallel, bool same) {
  std::printf("%-22s serial %8.3f s   parallel %8.3f s   speedup %5.2fx   %s\n", name, serial, parallel,
              serial / parallel, same ? "identical" : "MISMATCH");
}

}  // namespace

int main(int argc, char** argv) {
  const std::filesystem::path cfg = argc > 1 ? argv[1] : DAVIL_CONFIG_DIR "/desk_suite.json";
  const SuiteConfig suite = load_suite(cfg);
  std::printf("config %s, %d OpenMP threads\n", cfg.string().c_str(), omp_get_max_threads());

  TrainConfig t = suite.train;
  const StiffnessPolicy pol(t.policy, 1);
  const auto specs = sample_episodes(suite.scene, t, 0);
  std::vector<std::uint64_t> seeds;
  for (size_t i = 0; i < specs.size(); ++i) seeds.push_back(i + 1);

  std::vector<EpisodeRecord> ser, par;
  const double rs = seconds([&] { ser = collect_rollouts(suite.scene, specs, pol, t.reward, seeds, {}, false); });
  const double rp = seconds([&] { par = collect_rollouts(suite.scene, specs, pol, t.reward, seeds, {}, true); });
  bool same = ser.size() == par.size();
  for (size_t i = 0; same && i < ser.size(); ++i) same = ser[i].episode_return == par[i].episode_return;
  report("rollouts", rs, rp, same);

  const Batch b = make_batch(ser, t.ppo);
  VecX gs, gp;
  const double gs_t = seconds([&] { ppo_loss(pol, b, t.ppo, &gs, false); });
  const double gp_t = seconds([&] { ppo_loss(pol, b, t.ppo, &gp, true); });
  report("ppo gradient", gs_t, gp_t, gs == gp);

  ExperimentConfig e = suite.experiment;
  e.goal_count = 2;
  e.seeds = {0};
  std::vector<RunRecord> es, ep;
  const double es_t = seconds([&] { es = run_method(suite.scene, e, Method::oic, nullptr, false); });
  const double ep_t = seconds([&] { ep = run_method(suite.scene, e, Method::oic, nullptr, true); });
  same = es.size() == ep.size();
  for (size_t i = 0; same && i < es.size(); ++i) same = es[i].mean_position_error() == ep[i].mean_position_error();
  report("evaluation grid", es_t, ep_t, same);
  return 0;
}
