#include "davil/bench.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <omp.h>

#include "davil/chain_io.hpp"

namespace davil {

namespace {

std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::string num(double v) {
  std::ostringstream s;
  s << std::setprecision(9) << v;
  return s.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << text;
  if (!f) throw std::runtime_error("failed writing " + path.string());
}

MetricsCell cell_of(const std::string& object, double mass, const std::vector<const RunRecord*>& runs) {
  MetricsCell c;
  c.object = object;
  c.mass = mass;
  c.runs = static_cast<int>(runs.size());
  c.tracking_error = tracking_error(runs);
  double mean = 0.0, sq = 0.0, ok = 0.0;
  for (const RunRecord* r : runs) {
    const double e = r->mean_position_error();
    mean += e;
    sq += e * e;
    ok += r->goal_reached ? 1.0 : 0.0;
    c.faults += r->faulted;
    c.slips += r->slipped;
  }
  const double n = static_cast<double>(runs.size());
  mean /= n;
  c.variance = std::max(0.0, sq / n - mean * mean);
  c.success_rate = ok / n;
  return c;
}

}  // namespace

const char* method_name(Method m) {
  switch (m) {
    case Method::ours: return "ours";
    case Method::oic: return "oic";
    case Method::ic: return "ic";
    case Method::rl_ic: return "rl_ic";
    case Method::ours_no_ema: return "ours_no_ema";
  }
  return "?";
}

Method method_from_string(const std::string& s) {
  for (Method m : kMethods)
    if (s == method_name(m)) return m;
  throw std::invalid_argument("unknown method '" + s + "' (ours, oic, ic, rl_ic, ours_no_ema)");
}

bool is_learned(Method m) { return m == Method::ours || m == Method::rl_ic || m == Method::ours_no_ema; }

ControlMode method_control(Method m) {
  return m == Method::ic || m == Method::rl_ic ? ControlMode::classical : ControlMode::qp;
}

void ExperimentConfig::validate() const {
  if (objects.empty()) throw std::invalid_argument("experiment needs at least one object");
  if (masses.empty()) throw std::invalid_argument("experiment needs at least one mass");
  for (double m : masses)
    if (!(m > 0.0)) throw std::invalid_argument("masses must be positive");
  if (goal_count < 1) throw std::invalid_argument("goal count must be at least 1");
  if (seeds.empty()) throw std::invalid_argument("experiment needs at least one seed");
  if (!(ic_stiffness.array() > 0.0).all()) throw std::invalid_argument("IC stiffness must be positive");
  bins.trans.validate();
  bins.rot.validate();
}

double RunRecord::mean_position_error() const {
  if (time.empty()) throw std::invalid_argument("empty run");
  if (reference.size() != actual.size() || static_cast<int>(actual.size()) != ticks())
    throw std::invalid_argument("run series differ in length");
  double s = 0.0, last = 0.0;
  for (size_t k = 0; k < actual.size(); ++k) {
    last = (reference[k].position - actual[k].position).norm();
    s += last;
  }
  const int n = std::max(horizon, ticks());
  s += last * (n - ticks());
  return s / n;
}

double RunRecord::peak_abs_torque(int joint) const {
  double p = 0.0;
  for (const auto* series : {&tau_left, &tau_right})
    for (const VecX& t : *series) {
      if (joint < 0 || joint >= t.size()) throw std::out_of_range("joint index out of range");
      p = std::max(p, std::abs(t(joint)));
    }
  return p;
}

double tracking_error(const std::vector<const RunRecord*>& runs) {
  if (runs.empty()) throw std::invalid_argument("tracking error of an empty run set");
  std::map<double, std::pair<double, int>> by_mass;
  for (const RunRecord* r : runs) {
    auto& a = by_mass[r->mass];
    a.first += r->mean_position_error();
    a.second += 1;
  }
  double s = 0.0;
  for (const auto& [m, a] : by_mass) s += a.first / a.second;
  return s / static_cast<double>(by_mass.size());
}

double tracking_error(const std::vector<RunRecord>& runs) {
  std::vector<const RunRecord*> p;
  for (const auto& r : runs) p.push_back(&r);
  return tracking_error(p);
}

std::vector<EpisodeKey> evaluation_grid(const ExperimentConfig& cfg) {
  std::vector<EpisodeKey> keys;
  for (const auto& o : cfg.objects)
    for (double m : cfg.masses)
      for (int g = 0; g < cfg.goal_count; ++g)
        for (std::uint64_t s : cfg.seeds) keys.push_back({o, m, g, s});
  return keys;
}

EpisodeSpec episode_for(const EpisodeKey& key, const std::vector<Pose>& goals) {
  if (key.goal_index < 0 || key.goal_index >= static_cast<int>(goals.size()))
    throw std::out_of_range("goal index out of range");
  // the waypoint depends on goal and seed only, so masses and objects share trajectories
  return {key.object, key.mass, goals[static_cast<size_t>(key.goal_index)],
          mix(key.seed * 1000003ULL + static_cast<std::uint64_t>(key.goal_index))};
}

VecX oic_stiffness(const ExperimentConfig& cfg, const EpisodeKey& key) {
  std::uint64_t h = mix(key.seed ^ 0x01c0ffeeULL);
  h = mix(h ^ fnv1a(key.object));
  h = mix(h ^ static_cast<std::uint64_t>(std::llround(key.mass * 1e6)));
  h = mix(h ^ static_cast<std::uint64_t>(key.goal_index));
  std::mt19937_64 rng(h);
  VecX K(6);
  for (int d = 0; d < 6; ++d) {
    const BinRange& r = cfg.bins.range(d);
    K(d) = r.value(std::uniform_int_distribution<int>(0, r.count() - 1)(rng));
  }
  return K;
}

RunRecord run_method_episode(const Scene& scene, const ExperimentConfig& cfg, Method method, const EpisodeKey& key,
                             const std::vector<Pose>& goals, const StiffnessPolicy* policy) {
  const EpisodeSpec spec = episode_for(key, goals);
  RunRecord r;
  r.method = method;
  r.object = key.object;
  r.mass = key.mass;
  r.goal_index = key.goal_index;
  r.seed = key.seed;
  std::vector<TickInfo> ticks;
  if (is_learned(method)) {
    if (!policy) throw std::invalid_argument(std::string(method_name(method)) + " needs a trained policy");
    RolloutOptions opt;
    opt.mode = method_control(method);
    opt.deterministic = true;
    opt.keep_ticks = true;
    EpisodeRecord ep = rollout(scene, spec, *policy, RewardConfig{}, 0, opt);
    for (auto& t : ep.steps) r.stiffness.push_back(std::move(t.stiffness));
    ticks = std::move(ep.ticks);
  } else {
    const VecX K = method == Method::oic ? oic_stiffness(cfg, key) : VecX(cfg.ic_stiffness);
    PickPlaceEnv env(scene, spec);
    while (!env.done()) {
      ticks.push_back(env.step(K, K, method_control(method)));
      r.stiffness.push_back(K);
    }
  }
  TrajectorySpec ts = scene.traj;
  ts.dt_ctrl = scene.sim.dt_ctrl;
  r.horizon = ts.ticks();
  for (const TickInfo& t : ticks) {
    r.time.push_back(t.time);
    r.stage.push_back(t.stage);
    r.reference.push_back(t.object_ref.pose);
    r.actual.push_back(t.object_pose);
    r.tau_left.push_back(t.control.tau[0]);
    r.tau_right.push_back(t.control.tau[1]);
    r.status.push_back(t.control.status);
    r.slipped = r.slipped || t.slipped;
    if (t.fault) {
      r.faulted = true;
      r.fault_reason = t.fault_reason;
    }
  }
  r.goal_reached = !r.faulted && !r.actual.empty() &&
                   (r.actual.back().position - spec.goal.position).norm() <= cfg.goal_radius;
  return r;
}

std::vector<RunRecord> run_method(const Scene& scene, const ExperimentConfig& cfg, Method method,
                                  const StiffnessPolicy* policy, bool parallel) {
  cfg.validate();
  const std::vector<EpisodeKey> keys = evaluation_grid(cfg);
  const std::vector<Pose> goals = sample_goals(scene, cfg.goal_count, cfg.goal_seed);
  std::vector<RunRecord> out(keys.size());
  std::vector<std::string> errors(keys.size());
  const int n = static_cast<int>(keys.size());
#pragma omp parallel for schedule(dynamic) if (parallel)
  for (int i = 0; i < n; ++i) {
    try {
      out[static_cast<size_t>(i)] = run_method_episode(scene, cfg, method, keys[static_cast<size_t>(i)], goals, policy);
    } catch (const std::exception& e) {
      errors[static_cast<size_t>(i)] = e.what();
    }
  }
  for (size_t i = 0; i < errors.size(); ++i)
    if (!errors[i].empty())
      throw std::runtime_error(std::string(method_name(method)) + " episode " + std::to_string(i) + ": " + errors[i]);
  return out;
}

const MetricsCell& MetricsReport::find(const std::string& object, double mass) const {
  for (const auto& c : cells)
    if (c.object == object && c.mass == mass) return c;
  throw std::out_of_range("no metrics cell for " + object);
}

MetricsReport summarize(const ExperimentConfig& cfg, Method method, const std::vector<RunRecord>& runs) {
  cfg.validate();
  MetricsReport rep;
  rep.method = method;
  rep.objects = cfg.objects;
  rep.masses = cfg.masses;
  rep.runs_per_cell = cfg.goal_count * static_cast<int>(cfg.seeds.size());
  if (static_cast<int>(runs.size()) != cfg.grid_size())
    throw std::runtime_error("expected " + std::to_string(cfg.grid_size()) + " runs, got " +
                             std::to_string(runs.size()));
  std::map<std::tuple<std::string, double, int, std::uint64_t>, const RunRecord*> seen;
  for (const auto& r : runs) {
    if (r.method != method) throw std::runtime_error("run from a different method in the report");
    if (!seen.emplace(std::make_tuple(r.object, r.mass, r.goal_index, r.seed), &r).second)
      throw std::runtime_error("duplicate run in the report");
  }
  std::vector<const RunRecord*> all;
  for (const auto& o : cfg.objects) {
    std::vector<const RunRecord*> obj;
    for (double m : cfg.masses) {
      std::vector<const RunRecord*> cell;
      for (int g = 0; g < cfg.goal_count; ++g)
        for (std::uint64_t s : cfg.seeds) {
          auto it = seen.find(std::make_tuple(o, m, g, s));
          if (it == seen.end())
            throw std::runtime_error("missing run: " + o + " mass " + num(m) + " goal " + std::to_string(g) +
                                     " seed " + std::to_string(s));
          cell.push_back(it->second);
        }
      rep.cells.push_back(cell_of(o, m, cell));
      obj.insert(obj.end(), cell.begin(), cell.end());
    }
    rep.cells.push_back(cell_of(o, 0.0, obj));
    all.insert(all.end(), obj.begin(), obj.end());
  }
  rep.cells.push_back(cell_of("all", 0.0, all));
  return rep;
}

void write_metrics_csv(const std::filesystem::path& path, const MetricsReport& rep) {
  std::ostringstream s;
  s << "method,object,mass,runs,tracking_error_m,variance_m2,success_rate,faults,slips\n";
  for (const auto& c : rep.cells)
    s << method_name(rep.method) << ',' << c.object << ',' << (c.mass > 0 ? num(c.mass) : "all") << ',' << c.runs
      << ',' << num(c.tracking_error) << ',' << num(c.variance) << ',' << num(c.success_rate) << ',' << c.faults
      << ',' << c.slips << '\n';
  write_text(path, s.str());
}

void write_runs_csv(const std::filesystem::path& path, const std::vector<RunRecord>& runs) {
  std::ostringstream s;
  s << "method,object,mass,goal,seed,ticks,mean_error_m,peak_shoulder_torque,faulted,slipped,goal_reached\n";
  for (const auto& r : runs)
    s << method_name(r.method) << ',' << r.object << ',' << num(r.mass) << ',' << r.goal_index << ',' << r.seed << ','
      << r.ticks() << ',' << num(r.mean_position_error()) << ',' << num(r.peak_abs_torque(1)) << ',' << r.faulted
      << ',' << r.slipped << ',' << r.goal_reached << '\n';
  write_text(path, s.str());
}

std::string compare_table(const std::vector<MetricsReport>& reports) {
  if (reports.empty()) throw std::invalid_argument("nothing to compare");
  const MetricsReport& ref = reports.front();
  for (const auto& r : reports)
    if (r.objects != ref.objects || r.masses != ref.masses || r.runs_per_cell != ref.runs_per_cell)
      throw std::invalid_argument("reports cover different grids");
  std::ostringstream s;
  s << "object";
  for (const auto& r : reports) s << ',' << method_name(r.method);
  s << '\n';
  std::vector<std::string> rows = ref.objects;
  rows.push_back("all");
  for (const auto& o : rows) {
    s << o;
    for (const auto& r : reports) s << ',' << num(r.find(o).tracking_error);
    s << '\n';
  }
  return s.str();
}

void write_compare_table(const std::filesystem::path& path, const std::vector<MetricsReport>& reports) {
  write_text(path, compare_table(reports));
}

void emit_timeseries(const RunRecord& run, const std::filesystem::path& prefix) {
  if (run.time.empty()) throw std::invalid_argument("empty run");
  for (size_t k = 1; k < run.time.size(); ++k)
    if (!(run.time[k] > run.time[k - 1])) throw std::invalid_argument("run timestamps are not increasing");
  const auto n = run.time.size();
  if (run.stage.size() != n || run.stiffness.size() != n || run.tau_left.size() != n || run.tau_right.size() != n)
    throw std::invalid_argument("run series differ in length");
  static const char* axes[6] = {"kx", "ky", "kz", "krx", "kry", "krz"};
  std::ostringstream k, t;
  k << "tick,time,stage";
  const int kd = static_cast<int>(run.stiffness.front().size());
  for (int d = 0; d < kd; ++d) k << ',' << (kd == 12 ? (d < 6 ? "left_" : "right_") : "") << axes[d % 6];
  k << '\n';
  t << "tick,time,stage";
  for (Eigen::Index j = 0; j < run.tau_left.front().size(); ++j) t << ",tau_left_" << j;
  for (Eigen::Index j = 0; j < run.tau_right.front().size(); ++j) t << ",tau_right_" << j;
  t << '\n';
  for (size_t i = 0; i < n; ++i) {
    const std::string head = std::to_string(i) + ',' + num(run.time[i]) + ',' + stage_name(run.stage[i]);
    k << head;
    for (int d = 0; d < kd; ++d) k << ',' << num(run.stiffness[i](d));
    k << '\n';
    t << head;
    for (Eigen::Index j = 0; j < run.tau_left[i].size(); ++j) t << ',' << num(run.tau_left[i](j));
    for (Eigen::Index j = 0; j < run.tau_right[i].size(); ++j) t << ',' << num(run.tau_right[i](j));
    t << '\n';
  }
  write_text(prefix.string() + "_stiffness.csv", k.str());
  write_text(prefix.string() + "_torque.csv", t.str());
}

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void write_manifest(const std::filesystem::path& dir, const std::string& config_text, std::uint64_t seed,
                    const std::string& command) {
  std::ostringstream hash;
  hash << std::hex << std::setw(16) << std::setfill('0') << fnv1a(config_text);
  std::vector<std::string> files;
  if (std::filesystem::exists(dir))
    for (const auto& e : std::filesystem::directory_iterator(dir))
      if (e.is_regular_file() && e.path().filename() != "manifest.json") files.push_back(e.path().filename().string());
  std::sort(files.begin(), files.end());
  Json j;
  j["command"] = command;
  j["config_hash_fnv1a"] = hash.str();
  j["seed"] = seed;
  j["outputs"] = files;
  j["versions"] = {{"davil", "1.0.0"},
                   {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                 std::to_string(EIGEN_MINOR_VERSION)},
                   {"compiler", std::string("gcc ") + __VERSION__},
                   {"openmp", _OPENMP},
                   {"checkpoint_format", 1}};
  write_text(dir / "manifest.json", j.dump(2) + "\n");
}

}  // namespace davil
