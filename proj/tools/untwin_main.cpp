// Command-line surface: `twin` runs forward twinning and writes the
// checkpoint directory plus history; `untwin sru|pru` executes a rollback
// from those artifacts; `compare` runs the indistinguishability probe across
// seeds; `report` summarizes an output directory.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "untwin/config.hpp"
#include "untwin/errors.hpp"
#include "untwin/harness.hpp"
#include "untwin/io.hpp"
#include "untwin/metrics.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace untwin;

namespace {

std::string hash_hex(std::uint64_t h) {
  std::ostringstream out;
  out << std::hex << h;
  return out.str();
}

// One writer per output directory.
class DirLock {
 public:
  explicit DirLock(const fs::path& dir) : path_(dir / ".lock") {
    fs::create_directories(dir);
    if (fs::exists(path_)) {
      throw StateError("output directory locked by another command: " +
                       path_.string());
    }
    std::ofstream out(path_);
    out << "locked\n";
  }
  ~DirLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  fs::path path_;
};

struct CommonArgs {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
};

RunConfig resolve_config(const CommonArgs& args) {
  RunConfig cfg =
      args.config_path.empty() ? default_config() : load_config(args.config_path);
  if (args.seed) cfg.seed = *args.seed;
  if (const char* env = std::getenv("UNTWIN_OUT")) cfg.output_dir = env;
  if (!args.out_dir.empty()) cfg.output_dir = args.out_dir;
  return cfg;
}

void write_timings(const fs::path& dir, const json& timings) {
  std::ofstream out(dir / "timings.json");
  out << timings.dump(2) << '\n';
}

double seconds_since(
    const std::chrono::steady_clock::time_point& start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
      .count();
}

json plan_to_json(const RollbackPlan& plan) {
  return {{"K", plan.k},
          {"t_safe", plan.t_safe},
          {"t_star", plan.t_star},
          {"replay_extension", plan.replay_extension},
          {"sigma", plan.sigma},
          {"phi_star", plan.phi_star},
          {"noise_stream", plan.noise_stream}};
}

int cmd_twin(const CommonArgs& args) {
  const RunConfig cfg = resolve_config(args);
  const auto t0 = std::chrono::steady_clock::now();
  Experiment exp = build_experiment(cfg);
  const fs::path dir(cfg.output_dir);
  DirLock lock(dir);

  CheckpointStore store(cfg.checkpointing);
  ForwardRun run = run_forward(exp.schedule, exp.datasets, exp.cfg.training,
                               exp.all_ids(), exp.forward, &store);
  run.history.config_hash = exp.hash;

  save_history(dir / "history.bin", run.history);
  store.save(dir / "checkpoints");
  {
    std::ofstream out(dir / "config_resolved.json");
    out << config_canonical_json(cfg) << '\n';
  }

  const auto report = store.storage_report();
  const double final_mse =
      evaluate_mse(run.history.final_global(), exp.datasets, exp.all_ids());
  {
    std::ofstream out(dir / "metrics.csv");
    out << "# schema=1\n";
    out << "config_hash,rounds,final_mse,checkpoints,storage_bytes,"
           "storage_reduction,recluster_rounds\n";
    out.precision(17);
    out << hash_hex(exp.hash) << ',' << run.history.rounds() << ',' << final_mse
        << ',' << report.count << ',' << report.bytes << ','
        << report.reduction_vs_naive << ',' << run.recluster_rounds.size()
        << '\n';
  }
  write_timings(dir, {{"twin_seconds", seconds_since(t0)}});
  std::cout << "twin: T=" << run.history.rounds() << " final_mse=" << final_mse
            << " checkpoints=" << report.count << " out=" << dir.string()
            << '\n';
  return 0;
}

// Shared by sru and pru: loads artifacts, refuses mixed configs.
struct LoadedRun {
  Experiment exp;
  TwinHistory history;
  CheckpointStore store;
  ConnectivityMatrix connectivity;
  ClusterAssignment clusters;
};

LoadedRun load_run(const RunConfig& cfg) {
  const fs::path dir(cfg.output_dir);
  if (!fs::exists(dir / "history.bin")) {
    throw StateError("missing artifacts: run `twin` first in " + dir.string());
  }
  Experiment exp = build_experiment(cfg);
  TwinHistory history = load_history(dir / "history.bin");
  if (history.config_hash != exp.hash) {
    throw StateError("config hash mismatch: artifacts in " + dir.string() +
                     " were produced by a different config");
  }
  CheckpointStore store = CheckpointStore::load(dir / "checkpoints");
  const int total = history.rounds();
  ConnectivityMatrix conn = exp.schedule.at_round(total);
  ClusterAssignment clusters = cluster_ndts(conn, exp.forward.num_clusters);
  return LoadedRun{std::move(exp), std::move(history), std::move(store),
                   std::move(conn), std::move(clusters)};
}

struct UntwinArgs {
  std::optional<double> noise;
  std::optional<int> force_t_star;
  std::string rollback_rule;
  bool with_oracle = false;
};

UntwinOptions options_with_overrides(const RunConfig& cfg,
                                     const UntwinArgs& extra) {
  UntwinOptions opt = untwin_options(cfg);
  if (extra.noise) opt.force_sigma = *extra.noise;
  if (extra.force_t_star) opt.force_t_star = *extra.force_t_star;
  if (!extra.rollback_rule.empty()) {
    opt.rule = rollback_rule_from_string(extra.rollback_rule);
  }
  return opt;
}

void write_untwin_metrics(const fs::path& dir, std::uint64_t hash,
                          const std::string& mode,
                          const std::vector<int>& targets,
                          const std::vector<int>& removed, double mse_target,
                          double mse_remaining, std::optional<double> ped_target,
                          std::optional<double> ped_remaining,
                          int rounds_executed) {
  std::ofstream out(dir / "metrics.csv");
  out << "# schema=1\n";
  out << "config_hash,mode,targets,removed,mse_target,mse_remaining,"
         "ped_target,ped_remaining,rounds_executed\n";
  out.precision(17);
  auto join = [](const std::vector<int>& v) {
    std::ostringstream s;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (i) s << ';';
      s << v[i];
    }
    return s.str();
  };
  out << hash_hex(hash) << ',' << mode << ',' << join(targets) << ','
      << join(removed) << ',' << mse_target << ',' << mse_remaining << ',';
  if (ped_target) out << *ped_target;
  out << ',';
  if (ped_remaining) out << *ped_remaining;
  out << ',' << rounds_executed << '\n';
}

int cmd_untwin_sru(const CommonArgs& args, int target, const UntwinArgs& extra) {
  const RunConfig cfg = resolve_config(args);
  LoadedRun run = load_run(cfg);
  const fs::path dir(cfg.output_dir);
  DirLock lock(dir);
  const int n = run.history.num_ndts;
  if (target < 0 || target >= n) throw InvalidInput("unknown NDT id");

  const UntwinOptions opt = options_with_overrides(cfg, extra);
  const UntwinContext ctx{run.history,  run.store,    run.connectivity,
                          run.clusters, run.exp.datasets, run.exp.cfg.training};
  const auto t0 = std::chrono::steady_clock::now();
  SruResult result = sru(ctx, UntwinRequest{target, run.history.rounds()}, opt);
  const double untwin_seconds = seconds_since(t0);

  json plan = plan_to_json(result.plan);
  plan["mode"] = "sru";
  plan["target"] = target;
  plan["members"] = result.set.members;
  plan["scores"] = result.set.scores;
  plan["rounds_executed"] = result.rounds_executed;
  plan["config_hash"] = hash_hex(run.exp.hash);
  {
    std::ofstream out(dir / "plan.json");
    out << plan.dump(2) << '\n';
  }
  save_model(dir / "model_untwinned.bin", result.model);

  std::vector<int> remaining;
  for (int id = 0; id < n; ++id) {
    if (std::find(result.set.members.begin(), result.set.members.end(), id) ==
        result.set.members.end()) {
      remaining.push_back(id);
    }
  }
  const std::vector<int> target_only{target};
  const double mse_target =
      evaluate_mse(result.model, run.exp.datasets, target_only);
  const double mse_remaining =
      evaluate_mse(result.model, run.exp.datasets, remaining);

  std::optional<double> ped_target;
  std::optional<double> ped_remaining;
  double scratch_seconds = 0.0;
  if (extra.with_oracle) {
    const auto s0 = std::chrono::steady_clock::now();
    const TwinModel oracle =
        retrain_from_scratch(run.exp.datasets, run.exp.cfg.training, n,
                             result.set.members, run.history.rounds());
    scratch_seconds = seconds_since(s0);
    std::vector<TrafficSample> target_eval = run.exp.datasets[target].eval;
    std::vector<TrafficSample> remaining_eval;
    for (int id : remaining) {
      remaining_eval.insert(remaining_eval.end(),
                            run.exp.datasets[id].eval.begin(),
                            run.exp.datasets[id].eval.end());
    }
    ped_target = ped(result.model, oracle, target_eval);
    ped_remaining = ped(result.model, oracle, remaining_eval);
  }

  write_untwin_metrics(dir, run.exp.hash, "sru", {target}, result.set.members,
                       mse_target, mse_remaining, ped_target, ped_remaining,
                       result.rounds_executed);
  json timings = {{"untwin_seconds", untwin_seconds}};
  if (extra.with_oracle) {
    timings["scratch_seconds"] = scratch_seconds;
    timings["speedup"] =
        runtime_report(result.plan, untwin_seconds, scratch_seconds,
                       run.history.rounds())
            .speedup;
  }
  write_timings(dir, timings);
  std::cout << "sru: K=" << result.plan.k << " t_star=" << result.plan.t_star
            << " sigma=" << result.plan.sigma
            << " members=" << result.set.members.size()
            << " mse_target=" << mse_target << '\n';
  return 0;
}

int cmd_untwin_pru(const CommonArgs& args, const std::vector<int>& targets,
                   const UntwinArgs& extra) {
  const RunConfig cfg = resolve_config(args);
  LoadedRun run = load_run(cfg);
  const fs::path dir(cfg.output_dir);
  DirLock lock(dir);
  const int n = run.history.num_ndts;
  std::vector<UntwinRequest> requests;
  for (int t : targets) {
    if (t < 0 || t >= n) throw InvalidInput("unknown NDT id");
    requests.push_back({t, run.history.rounds()});
  }

  const UntwinOptions opt = options_with_overrides(cfg, extra);
  const UntwinContext ctx{run.history,  run.store,    run.connectivity,
                          run.clusters, run.exp.datasets, run.exp.cfg.training};
  const auto t0 = std::chrono::steady_clock::now();
  PruResult result = pru(ctx, requests, opt);
  const double untwin_seconds = seconds_since(t0);
  for (const auto& w : result.warnings) std::cerr << "warning: " << w << '\n';

  json cluster_plans = json::array();
  int k_max = 0;
  for (const auto& cp : result.cluster_plans) {
    json entry = {{"cluster", cp.cluster},
                  {"targets", cp.targets},
                  {"removed", cp.removed},
                  {"dropped", cp.dropped}};
    entry["plan"] = plan_to_json(cp.plan);
    cluster_plans.push_back(entry);
    k_max = std::max(k_max, cp.plan.k);
  }
  json plan = {{"mode", "pru"},
               {"clusters", cluster_plans},
               {"K_max", result.k_max},
               {"removed", result.removed},
               {"rounds_executed", result.rounds_executed},
               {"config_hash", hash_hex(run.exp.hash)}};
  {
    std::ofstream out(dir / "plan.json");
    out << plan.dump(2) << '\n';
  }
  save_model(dir / "model_untwinned.bin", result.model);

  std::vector<int> remaining;
  for (int id = 0; id < n; ++id) {
    if (std::find(result.removed.begin(), result.removed.end(), id) ==
        result.removed.end()) {
      remaining.push_back(id);
    }
  }
  const double mse_target = evaluate_mse(result.model, run.exp.datasets, targets);
  const double mse_remaining =
      evaluate_mse(result.model, run.exp.datasets, remaining);

  std::optional<double> ped_target;
  std::optional<double> ped_remaining;
  double scratch_seconds = 0.0;
  if (extra.with_oracle) {
    const auto s0 = std::chrono::steady_clock::now();
    const TwinModel oracle =
        retrain_from_scratch(run.exp.datasets, run.exp.cfg.training, n,
                             result.removed, run.history.rounds());
    scratch_seconds = seconds_since(s0);
    std::vector<TrafficSample> target_eval;
    for (int id : targets) {
      target_eval.insert(target_eval.end(), run.exp.datasets[id].eval.begin(),
                         run.exp.datasets[id].eval.end());
    }
    std::vector<TrafficSample> remaining_eval;
    for (int id : remaining) {
      remaining_eval.insert(remaining_eval.end(),
                            run.exp.datasets[id].eval.begin(),
                            run.exp.datasets[id].eval.end());
    }
    ped_target = ped(result.model, oracle, target_eval);
    ped_remaining = ped(result.model, oracle, remaining_eval);
  }

  write_untwin_metrics(dir, run.exp.hash, "pru", targets, result.removed,
                       mse_target, mse_remaining, ped_target, ped_remaining,
                       result.rounds_executed);
  json timings = {{"untwin_seconds", untwin_seconds}};
  if (extra.with_oracle) timings["scratch_seconds"] = scratch_seconds;
  write_timings(dir, timings);
  std::cout << "pru: K_max=" << result.k_max
            << " clusters=" << result.cluster_plans.size()
            << " removed=" << result.removed.size()
            << " mse_target=" << mse_target << '\n';
  return 0;
}

int cmd_compare(const CommonArgs& args, int seeds, bool self_mode, int threads) {
  const RunConfig cfg = resolve_config(args);
  const fs::path dir(cfg.output_dir);
  const auto t0 = std::chrono::steady_clock::now();
  const CompareOutcome outcome = run_compare(cfg, seeds, self_mode, threads);
  DirLock lock(dir);

  const ProbeReport& r = outcome.report;
  json probe = {{"n_a", r.n_a},
                {"n_b", r.n_b},
                {"mean_a", r.mean_a},
                {"mean_b", r.mean_b},
                {"std_a", r.std_a},
                {"std_b", r.std_b},
                {"ks_stat", r.ks_stat},
                {"p_value", r.p_value},
                {"indistinguishable", r.indistinguishable},
                {"self_mode", self_mode},
                {"config_hash", hash_hex(config_hash(cfg))}};
  {
    std::ofstream out(dir / "probe.json");
    out << probe.dump(2) << '\n';
  }
  {
    std::ofstream out(dir / "probe_rows.csv");
    out << "# schema=1\n";
    out << "seed,pipeline,statistic\n";
    out.precision(17);
    for (const auto& row : outcome.rows) {
      out << row.seed << ',' << row.pipeline << ',' << row.statistic << '\n';
    }
  }
  write_timings(dir, {{"compare_seconds", seconds_since(t0)}});
  std::cout << "compare: ks=" << r.ks_stat << " p=" << r.p_value << " "
            << (r.indistinguishable ? "not distinguishable at level 0.05"
                                    : "distinguishable at level 0.05")
            << '\n';
  return 0;
}

int cmd_report(const CommonArgs& args) {
  const RunConfig cfg = resolve_config(args);
  const fs::path dir(cfg.output_dir);
  json report;
  for (const char* name : {"plan.json", "probe.json", "timings.json"}) {
    if (fs::exists(dir / name)) {
      std::ifstream in(dir / name);
      report[name] = json::parse(in);
    }
  }
  for (const char* name : {"metrics.csv", "probe_rows.csv"}) {
    if (fs::exists(dir / name)) {
      std::ifstream in(dir / name);
      std::ostringstream text;
      text << in.rdbuf();
      report[name] = text.str();
    }
  }
  if (report.empty()) {
    throw StateError("no artifacts found in " + dir.string());
  }
  std::cout << report.dump(2) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"deterministic twinning / untwinning simulator"};
  app.require_subcommand(1);
  app.fallthrough();

  CommonArgs common;
  app.add_option("--config", common.config_path, "JSON config file");
  app.add_option("--seed", common.seed, "override the config seed");
  app.add_option("--out", common.out_dir, "override the output directory");

  auto* twin = app.add_subcommand("twin", "run forward twinning");

  auto* untwin_cmd = app.add_subcommand("untwin", "run backward optimization");
  untwin_cmd->require_subcommand(1);
  UntwinArgs extra;
  int sru_target = 0;
  std::vector<int> pru_targets;
  auto* sru_cmd = untwin_cmd->add_subcommand("sru", "single-request untwinning");
  sru_cmd->add_option("--target", sru_target, "NDT id to untwin")->required();
  auto* pru_cmd = untwin_cmd->add_subcommand("pru", "parallel-request untwinning");
  pru_cmd->add_option("--requests", pru_targets, "NDT ids to untwin")
      ->required()
      ->delimiter(',');
  for (auto* cmd : {sru_cmd, pru_cmd}) {
    cmd->add_option("--noise", extra.noise, "force the perturbation sigma");
    cmd->add_option("--force-t-star", extra.force_t_star,
                    "force the rollback checkpoint round");
    cmd->add_option("--rollback-rule", extra.rollback_rule,
                    "theorem | literal");
    cmd->add_flag("--with-oracle", extra.with_oracle,
                  "also retrain from scratch and report PED");
  }

  auto* compare = app.add_subcommand("compare", "indistinguishability probe");
  int seeds = 30;
  bool self_mode = false;
  int threads = 0;
  compare->add_option("--seeds", seeds, "seeds per pipeline (>= 30)");
  compare->add_flag("--self", self_mode, "compare the untwin pipeline to itself");
  compare->add_option("--threads", threads, "worker threads (0 = auto)");

  auto* report = app.add_subcommand("report", "summarize an output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*twin) return cmd_twin(common);
    if (*sru_cmd) return cmd_untwin_sru(common, sru_target, extra);
    if (*pru_cmd) return cmd_untwin_pru(common, pru_targets, extra);
    if (*compare) return cmd_compare(common, seeds, self_mode, threads);
    if (*report) return cmd_report(common);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const StateError& e) {
    std::cerr << "state error: " << e.what() << '\n';
    return 3;
  } catch (const InvalidInput& e) {
    std::cerr << "invalid input: " << e.what() << '\n';
    return 4;
  } catch (const InsufficientSamples& e) {
    std::cerr << "insufficient samples: " << e.what() << '\n';
    return 5;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
