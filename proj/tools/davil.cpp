// davil: simulate, train, evaluate, compare and ablate-ema on a suite config.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>

#include "davil/config.hpp"

using namespace davil;
namespace fs = std::filesystem;

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string method;
  std::string object;
  std::optional<double> mass;
  std::string out_dir = "out";
  std::string command;
};

fs::path checkpoint_for(const SuiteConfig& suite, Method m, const fs::path& out_dir) {
  auto it = suite.experiment.checkpoints.find(method_name(m));
  const fs::path name = it != suite.experiment.checkpoints.end() ? it->second
                                                                 : fs::path("policy_" + std::string(method_name(m)) + ".json");
  return name.is_absolute() ? name : out_dir / name;
}

std::optional<StiffnessPolicy> policy_for(const SuiteConfig& suite, Method m, const fs::path& out_dir) {
  if (!is_learned(m)) return std::nullopt;
  const fs::path p = checkpoint_for(suite, m, out_dir);
  if (!fs::exists(p))
    throw std::runtime_error(std::string(method_name(m)) + " needs " + p.string() + "; run `davil train --method " +
                             method_name(m) + "` first");
  return StiffnessPolicy::load(p);
}

// --object / --mass narrow the evaluation grid; --seed replaces the evaluation seeds.
ExperimentConfig experiment_for(const SuiteConfig& suite, const Options& o) {
  ExperimentConfig e = suite.experiment;
  if (!o.object.empty()) {
    suite.scene.catalog.find(o.object);
    e.objects = {o.object};
  }
  if (o.mass) e.masses = {*o.mass};
  if (o.seed) e.seeds = {*o.seed};
  e.validate();
  return e;
}

std::vector<Method> methods_for(const Options& o, std::vector<Method> fallback) {
  if (o.method.empty()) return fallback;
  return {method_from_string(o.method)};
}

TrainResult train_method(const SuiteConfig& suite, Method m, const Options& o, const fs::path& out) {
  TrainConfig t = train_config_for(suite, m);
  if (o.seed) t.seed = *o.seed;
  if (!o.object.empty()) t.objects = {o.object};
  if (o.mass) t.masses = {*o.mass};
  std::cerr << "training " << method_name(m) << ": " << t.iterations << " iterations x " << t.episodes_per_iteration
            << " episodes\n";
  TrainResult r = train(suite.scene, t, out, [&](const IterationLog& l) {
    std::cerr << "  iter " << l.iteration << " return " << l.mean_return << " faults " << l.faults << " entropy "
              << l.loss.entropy << '\n';
  });
  const fs::path ckpt = checkpoint_for(suite, m, out);
  fs::create_directories(ckpt.parent_path());
  r.policy.save(ckpt);
  write_training_log(out / ("training_" + std::string(method_name(m)) + ".csv"), r.log);
  std::cerr << "  wrote " << ckpt.string() << '\n';
  return r;
}

std::vector<MetricsReport> evaluate_methods(const SuiteConfig& suite, const std::vector<Method>& methods,
                                            const Options& o, const fs::path& out) {
  const ExperimentConfig e = experiment_for(suite, o);
  std::vector<MetricsReport> reports;
  for (Method m : methods) {
    const auto pol = policy_for(suite, m, out);
    std::cerr << "evaluating " << method_name(m) << " on " << e.grid_size() << " episodes\n";
    const auto runs = run_method(suite.scene, e, m, pol ? &*pol : nullptr);
    const MetricsReport rep = summarize(e, m, runs);
    const std::string tag = method_name(m);
    write_metrics_csv(out / ("metrics_" + tag + ".csv"), rep);
    write_runs_csv(out / ("runs_" + tag + ".csv"), runs);
    std::cerr << "  tracking error " << rep.find("all").tracking_error << " m, faults " << rep.find("all").faults
              << '\n';
    reports.push_back(rep);
  }
  return reports;
}

int simulate(const SuiteConfig& suite, const Options& o, const fs::path& out) {
  const Method m = o.method.empty() ? Method::ic : method_from_string(o.method);
  ExperimentConfig e = experiment_for(suite, o);
  const EpisodeKey key{e.objects.front(), e.masses.front(), 0, e.seeds.front()};
  const auto goals = sample_goals(suite.scene, e.goal_count, e.goal_seed);
  const auto pol = policy_for(suite, m, out);
  const RunRecord run = run_method_episode(suite.scene, e, m, key, goals, pol ? &*pol : nullptr);
  const std::string tag = "episode_" + std::string(method_name(m));
  emit_timeseries(run, out / tag);
  write_runs_csv(out / (tag + ".csv"), {run});
  std::cout << method_name(m) << ' ' << key.object << ' ' << key.mass << " kg: mean error " << run.mean_position_error()
            << " m over " << run.ticks() << " ticks" << (run.faulted ? " (fault: " + run.fault_reason + ")" : "")
            << '\n';
  return run.faulted ? 2 : 0;
}

void print_table(const std::vector<MetricsReport>& reports) { std::cout << compare_table(reports); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Learned variable impedance for dual-arm pick and place"};
  app.require_subcommand(1);
  Options o;
  for (int i = 0; i < argc; ++i) o.command += (i ? " " : "") + std::string(argv[i]);

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "suite config (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "training seed, or the single evaluation seed");
    sub->add_option("--method", o.method, "ours | oic | ic | rl_ic | ours_no_ema");
    sub->add_option("--object", o.object, "restrict to one object");
    sub->add_option("--mass", o.mass, "restrict to one mass (kg)")->check(CLI::PositiveNumber);
    sub->add_option("--out-dir", o.out_dir, "output and checkpoint directory")->capture_default_str();
  };
  CLI::App* sim = app.add_subcommand("simulate", "one episode (first goal) with per-tick stiffness and torque CSVs");
  CLI::App* tr = app.add_subcommand("train", "train a learned method (default ours) and save its checkpoint");
  CLI::App* ev = app.add_subcommand("evaluate", "evaluate one method (default all) over the configured grid");
  CLI::App* cmp = app.add_subcommand("compare", "evaluate every method and write the comparison table");
  CLI::App* abl = app.add_subcommand("ablate-ema", "train and evaluate ours with and without the EMA term");
  for (CLI::App* s : {sim, tr, ev, cmp, abl}) add_common(s);

  CLI11_PARSE(app, argc, argv);

  try {
    const SuiteConfig suite = load_suite(o.config);
    const fs::path out = o.out_dir;
    fs::create_directories(out);
    int rc = 0;
    const std::vector<Method> all(kMethods.begin(), kMethods.end());
    if (*sim) {
      rc = simulate(suite, o, out);
    } else if (*tr) {
      for (Method m : methods_for(o, {Method::ours})) {
        if (!is_learned(m)) throw std::invalid_argument(std::string(method_name(m)) + " has nothing to train");
        train_method(suite, m, o, out);
      }
    } else if (*ev) {
      const auto reports = evaluate_methods(suite, methods_for(o, all), o, out);
      if (reports.size() > 1) write_compare_table(out / "compare.csv", reports);
      print_table(reports);
    } else if (*cmp) {
      if (!o.method.empty()) throw std::invalid_argument("compare always runs every method");
      const auto reports = evaluate_methods(suite, all, o, out);
      write_compare_table(out / "compare.csv", reports);
      print_table(reports);
    } else if (*abl) {
      if (!o.method.empty()) throw std::invalid_argument("ablate-ema always uses ours and ours_no_ema");
      const std::vector<Method> pair{Method::ours, Method::ours_no_ema};
      for (Method m : pair) train_method(suite, m, o, out);
      const auto reports = evaluate_methods(suite, pair, o, out);
      write_compare_table(out / "ablation.csv", reports);
      print_table(reports);
    }
    write_manifest(out, suite.text, o.seed.value_or(suite.train.seed), o.command);
    return rc;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
