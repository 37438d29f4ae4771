#include "untwin/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "untwin/errors.hpp"

namespace untwin {

namespace {

using nlohmann::json;

void check_keys(const json& obj, const std::string& path,
                std::initializer_list<const char*> allowed) {
  for (const auto& [key, value] : obj.items()) {
    if (std::find_if(allowed.begin(), allowed.end(), [&](const char* a) {
          return key == a;
        }) == allowed.end()) {
      throw ConfigError("unknown config key: " + path + key);
    }
  }
}

template <typename T>
T get_or(const json& obj, const char* key, T fallback) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("bad value for config key '" + std::string(key) +
                      "': " + e.what());
  }
}

std::vector<double> broadcast_levels(const json& obj, const char* key,
                                     double fallback, int n) {
  std::vector<double> out;
  if (!obj.contains(key)) {
    out.assign(n, fallback);
    return out;
  }
  const json& v = obj.at(key);
  if (v.is_number()) {
    out.assign(n, v.get<double>());
  } else if (v.is_array()) {
    out = v.get<std::vector<double>>();
    if (static_cast<int>(out.size()) != n) {
      throw ConfigError(std::string("config key '") + key +
                        "' array length must equal num_ndts");
    }
  } else {
    throw ConfigError(std::string("config key '") + key +
                      "' must be a number or an array");
  }
  return out;
}

double parse_theta(const json& obj, double fallback) {
  if (!obj.contains("theta")) return fallback;
  const json& v = obj.at("theta");
  if (v.is_string()) {
    if (v.get<std::string>() == "inf") {
      return std::numeric_limits<double>::infinity();
    }
    throw ConfigError("untwinning.theta string form must be \"inf\"");
  }
  if (!v.is_number()) throw ConfigError("untwinning.theta must be a number or \"inf\"");
  return v.get<double>();
}

json config_to_json(const RunConfig& cfg) {
  json j;
  j["scenario"] = {{"num_ndts", cfg.scenario.num_ndts},
                   {"horizon", cfg.scenario.horizon},
                   {"base_flow", cfg.scenario.base_flow},
                   {"base_speed", cfg.scenario.base_speed},
                   {"ar_coefficient", cfg.scenario.ar_coefficient},
                   {"noise_std", cfg.scenario.noise_std},
                   {"spatial_corr_length", cfg.scenario.spatial_corr_length}};
  j["kind"] = to_string(cfg.kind);
  json nodes = json::array();
  for (const auto& n : cfg.topology.nodes) {
    nodes.push_back({{"id", n.id},
                     {"x", n.x},
                     {"y", n.y},
                     {"backhaul_mbps", n.backhaul_mbps},
                     {"coverage_radius_m", n.coverage_radius_m}});
  }
  json events = json::array();
  for (const auto& e : cfg.topology.events) {
    json ev = {{"round", e.round}, {"node", e.node_id}};
    if (e.x) ev["x"] = *e.x;
    if (e.y) ev["y"] = *e.y;
    if (e.backhaul_mbps) ev["backhaul_mbps"] = *e.backhaul_mbps;
    if (e.coverage_radius_m) ev["coverage_radius_m"] = *e.coverage_radius_m;
    events.push_back(ev);
  }
  j["topology"] = {{"spacing_m", cfg.topology.spacing_m},
                   {"capacity_mbps", cfg.topology.capacity_mbps},
                   {"coverage_radius_m", cfg.topology.coverage_radius_m},
                   {"nodes", nodes},
                   {"events", events}};
  j["connectivity"] = {{"w_g", cfg.weights.w_g},
                       {"w_k", cfg.weights.w_k},
                       {"w_delta", cfg.weights.w_delta},
                       {"w_tau", cfg.weights.w_tau}};
  j["training"] = {{"arch", to_string(cfg.training.arch)},
                   {"lag", cfg.training.lag},
                   {"hidden_width", cfg.training.hidden_width},
                   {"rounds", cfg.training.rounds},
                   {"steps_per_round", cfg.training.steps_per_round},
                   {"eta", cfg.training.sgd.eta},
                   {"batch", cfg.training.sgd.batch_size},
                   {"clip_enabled", cfg.training.sgd.clip_enabled},
                   {"clip_threshold", cfg.training.sgd.clip_threshold}};
  j["normalize"] = cfg.normalize;
  j["train_fraction"] = cfg.train_fraction;
  json untw = {{"target", cfg.untwinning.target},
               {"epsilon", cfg.untwinning.epsilon},
               {"beta", cfg.untwinning.beta},
               {"sigma_min", cfg.untwinning.sigma_min},
               {"rollback_rule", to_string(cfg.untwinning.rollback_rule)},
               {"convergence_stop", cfg.untwinning.convergence_stop}};
  if (std::isinf(cfg.untwinning.theta)) {
    untw["theta"] = "inf";
  } else {
    untw["theta"] = cfg.untwinning.theta;
  }
  if (cfg.untwinning.gamma_star) {
    untw["gamma_star"] = *cfg.untwinning.gamma_star;
  } else {
    untw["gamma_star"] = nullptr;
  }
  j["untwinning"] = untw;
  j["clustering"] = {
      {"num_clusters", cfg.clustering.num_clusters},
      {"recluster_threshold_frac", cfg.clustering.recluster_threshold_frac}};
  j["checkpointing"] = {{"mode", to_string(cfg.checkpointing.mode)},
                        {"fixed_interval", cfg.checkpointing.fixed_interval},
                        {"lambda_w", cfg.checkpointing.lambda_w},
                        {"lambda_c", cfg.checkpointing.lambda_c},
                        {"tau_drift", cfg.checkpointing.tau_drift},
                        {"kappa", cfg.checkpointing.kappa},
                        {"p_min", cfg.checkpointing.p_min},
                        {"p_max", cfg.checkpointing.p_max},
                        {"budget", cfg.checkpointing.budget},
                        {"recent_window", cfg.checkpointing.recent_window}};
  j["seed"] = cfg.seed;
  j["output_dir"] = cfg.output_dir;
  return j;
}

}  // namespace

RunConfig default_config() {
  RunConfig cfg;
  cfg.scenario.base_flow.assign(cfg.scenario.num_ndts, 40.0);
  cfg.scenario.base_speed.assign(cfg.scenario.num_ndts, 100.0);
  return cfg;
}

RunConfig parse_config(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  if (!root.is_object()) throw ConfigError("config root must be an object");
  check_keys(root, "",
             {"scenario", "kind", "topology", "connectivity", "training",
              "normalize", "train_fraction", "untwinning", "clustering",
              "checkpointing", "seed", "output_dir"});

  RunConfig cfg = default_config();

  const json scenario = root.value("scenario", json::object());
  check_keys(scenario, "scenario.",
             {"num_ndts", "horizon", "base_flow", "base_speed",
              "ar_coefficient", "noise_std", "spatial_corr_length"});
  cfg.scenario.num_ndts = get_or(scenario, "num_ndts", cfg.scenario.num_ndts);
  cfg.scenario.horizon = get_or(scenario, "horizon", cfg.scenario.horizon);
  cfg.scenario.base_flow =
      broadcast_levels(scenario, "base_flow", 40.0, cfg.scenario.num_ndts);
  cfg.scenario.base_speed =
      broadcast_levels(scenario, "base_speed", 100.0, cfg.scenario.num_ndts);
  cfg.scenario.ar_coefficient =
      get_or(scenario, "ar_coefficient", cfg.scenario.ar_coefficient);
  cfg.scenario.noise_std = get_or(scenario, "noise_std", cfg.scenario.noise_std);
  cfg.scenario.spatial_corr_length =
      get_or(scenario, "spatial_corr_length", cfg.scenario.spatial_corr_length);

  cfg.kind = trace_kind_from_string(
      get_or<std::string>(root, "kind", to_string(cfg.kind)));

  const json topology = root.value("topology", json::object());
  check_keys(topology, "topology.",
             {"spacing_m", "capacity_mbps", "coverage_radius_m", "nodes",
              "events"});
  cfg.topology.spacing_m = get_or(topology, "spacing_m", cfg.topology.spacing_m);
  cfg.topology.capacity_mbps =
      get_or(topology, "capacity_mbps", cfg.topology.capacity_mbps);
  cfg.topology.coverage_radius_m =
      get_or(topology, "coverage_radius_m", cfg.topology.coverage_radius_m);
  for (const json& n : topology.value("nodes", json::array())) {
    check_keys(n, "topology.nodes[].",
               {"id", "x", "y", "backhaul_mbps", "coverage_radius_m"});
    NdtNode node;
    node.id = get_or(n, "id", static_cast<int>(cfg.topology.nodes.size()));
    node.x = get_or(n, "x", 0.0);
    node.y = get_or(n, "y", 0.0);
    node.backhaul_mbps = get_or(n, "backhaul_mbps", cfg.topology.capacity_mbps);
    node.coverage_radius_m =
        get_or(n, "coverage_radius_m", cfg.topology.coverage_radius_m);
    cfg.topology.nodes.push_back(node);
  }
  for (const json& e : topology.value("events", json::array())) {
    check_keys(e, "topology.events[].",
               {"round", "node", "x", "y", "backhaul_mbps", "coverage_radius_m"});
    TopologyEvent ev;
    ev.round = get_or(e, "round", 0);
    ev.node_id = get_or(e, "node", 0);
    if (e.contains("x")) ev.x = e.at("x").get<double>();
    if (e.contains("y")) ev.y = e.at("y").get<double>();
    if (e.contains("backhaul_mbps")) {
      ev.backhaul_mbps = e.at("backhaul_mbps").get<double>();
    }
    if (e.contains("coverage_radius_m")) {
      ev.coverage_radius_m = e.at("coverage_radius_m").get<double>();
    }
    cfg.topology.events.push_back(ev);
  }

  const json conn = root.value("connectivity", json::object());
  check_keys(conn, "connectivity.", {"w_g", "w_k", "w_delta", "w_tau"});
  cfg.weights.w_g = get_or(conn, "w_g", cfg.weights.w_g);
  cfg.weights.w_k = get_or(conn, "w_k", cfg.weights.w_k);
  cfg.weights.w_delta = get_or(conn, "w_delta", cfg.weights.w_delta);
  cfg.weights.w_tau = get_or(conn, "w_tau", cfg.weights.w_tau);

  const json training = root.value("training", json::object());
  check_keys(training, "training.",
             {"arch", "lag", "hidden_width", "rounds", "steps_per_round", "eta",
              "batch", "clip_enabled", "clip_threshold"});
  cfg.training.arch = arch_from_string(
      get_or<std::string>(training, "arch", to_string(cfg.training.arch)));
  cfg.training.lag = get_or(training, "lag", cfg.training.lag);
  cfg.training.hidden_width =
      get_or(training, "hidden_width", cfg.training.hidden_width);
  cfg.training.rounds = get_or(training, "rounds", cfg.training.rounds);
  cfg.training.steps_per_round =
      get_or(training, "steps_per_round", cfg.training.steps_per_round);
  cfg.training.sgd.eta = get_or(training, "eta", cfg.training.sgd.eta);
  cfg.training.sgd.batch_size = get_or(training, "batch", cfg.training.sgd.batch_size);
  cfg.training.sgd.clip_enabled =
      get_or(training, "clip_enabled", cfg.training.sgd.clip_enabled);
  cfg.training.sgd.clip_threshold =
      get_or(training, "clip_threshold", cfg.training.sgd.clip_threshold);

  cfg.normalize = get_or(root, "normalize", cfg.normalize);
  cfg.train_fraction = get_or(root, "train_fraction", cfg.train_fraction);

  const json untw = root.value("untwinning", json::object());
  check_keys(untw, "untwinning.",
             {"target", "theta", "epsilon", "beta", "gamma_star", "sigma_min",
              "rollback_rule", "convergence_stop"});
  cfg.untwinning.target = get_or(untw, "target", cfg.untwinning.target);
  cfg.untwinning.theta = parse_theta(untw, cfg.untwinning.theta);
  cfg.untwinning.epsilon = get_or(untw, "epsilon", cfg.untwinning.epsilon);
  cfg.untwinning.beta = get_or(untw, "beta", cfg.untwinning.beta);
  if (untw.contains("gamma_star") && !untw.at("gamma_star").is_null()) {
    cfg.untwinning.gamma_star = untw.at("gamma_star").get<double>();
  }
  cfg.untwinning.sigma_min = get_or(untw, "sigma_min", cfg.untwinning.sigma_min);
  cfg.untwinning.rollback_rule = rollback_rule_from_string(get_or<std::string>(
      untw, "rollback_rule", to_string(cfg.untwinning.rollback_rule)));
  cfg.untwinning.convergence_stop =
      get_or(untw, "convergence_stop", cfg.untwinning.convergence_stop);

  const json clustering = root.value("clustering", json::object());
  check_keys(clustering, "clustering.",
             {"num_clusters", "recluster_threshold_frac"});
  cfg.clustering.num_clusters =
      get_or(clustering, "num_clusters", cfg.clustering.num_clusters);
  cfg.clustering.recluster_threshold_frac = get_or(
      clustering, "recluster_threshold_frac", cfg.clustering.recluster_threshold_frac);

  const json ckpt = root.value("checkpointing", json::object());
  check_keys(ckpt, "checkpointing.",
             {"mode", "fixed_interval", "lambda_w", "lambda_c", "tau_drift",
              "kappa", "p_min", "p_max", "budget", "recent_window"});
  cfg.checkpointing.mode = store_mode_from_string(
      get_or<std::string>(ckpt, "mode", to_string(cfg.checkpointing.mode)));
  cfg.checkpointing.fixed_interval =
      get_or(ckpt, "fixed_interval", cfg.checkpointing.fixed_interval);
  cfg.checkpointing.lambda_w = get_or(ckpt, "lambda_w", cfg.checkpointing.lambda_w);
  cfg.checkpointing.lambda_c = get_or(ckpt, "lambda_c", cfg.checkpointing.lambda_c);
  cfg.checkpointing.tau_drift = get_or(ckpt, "tau_drift", cfg.checkpointing.tau_drift);
  cfg.checkpointing.kappa = get_or(ckpt, "kappa", cfg.checkpointing.kappa);
  cfg.checkpointing.p_min = get_or(ckpt, "p_min", cfg.checkpointing.p_min);
  cfg.checkpointing.p_max = get_or(ckpt, "p_max", cfg.checkpointing.p_max);
  cfg.checkpointing.budget = get_or(ckpt, "budget", cfg.checkpointing.budget);
  cfg.checkpointing.recent_window =
      get_or(ckpt, "recent_window", cfg.checkpointing.recent_window);

  cfg.seed = get_or<std::uint64_t>(root, "seed", cfg.seed);
  cfg.output_dir = get_or<std::string>(root, "output_dir", cfg.output_dir);
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str());
}

std::string config_canonical_json(const RunConfig& cfg) {
  return config_to_json(cfg).dump(2);
}

std::uint64_t config_hash(const RunConfig& cfg) {
  const std::string text = config_canonical_json(cfg);
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

UntwinOptions untwin_options(const RunConfig& cfg) {
  UntwinOptions opt;
  opt.theta = cfg.untwinning.theta;
  opt.budget.epsilon = cfg.untwinning.epsilon;
  opt.budget.beta = cfg.untwinning.beta;
  opt.gamma_star = cfg.untwinning.gamma_star;
  opt.sigma_min = cfg.untwinning.sigma_min;
  opt.rule = cfg.untwinning.rollback_rule;
  opt.convergence_stop = cfg.untwinning.convergence_stop;
  return opt;
}

std::vector<int> Experiment::all_ids() const {
  std::vector<int> ids(nodes.size());
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<int>(i);
  return ids;
}

Experiment build_experiment(const RunConfig& cfg0) {
  RunConfig cfg = cfg0;
  cfg.scenario.seed = cfg.seed;
  cfg.training.seed = cfg.seed;
  if (cfg.scenario.num_ndts < 2) throw ConfigError("need at least 2 NDTs");
  if (cfg.train_fraction <= 0.0 || cfg.train_fraction >= 1.0) {
    throw ConfigError("train_fraction must lie in (0, 1)");
  }

  std::vector<NdtNode> nodes = cfg.topology.nodes;
  if (nodes.empty()) {
    nodes.resize(cfg.scenario.num_ndts);
    for (int i = 0; i < cfg.scenario.num_ndts; ++i) {
      nodes[i] = {i, i * cfg.topology.spacing_m, 0.0, cfg.topology.capacity_mbps,
                  cfg.topology.coverage_radius_m};
    }
  }
  if (static_cast<int>(nodes.size()) != cfg.scenario.num_ndts) {
    throw ConfigError("topology.nodes length must equal scenario.num_ndts");
  }

  auto traces = generate_traces(cfg.scenario, nodes);
  auto tau = similarity_matrix(traces, cfg.kind);

  std::vector<NdtDataset> datasets(nodes.size());
  std::vector<std::vector<TrafficSample>> windows(nodes.size());
  double mean = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const TrafficTrace& trace =
        cfg.kind == TraceKind::kFlow ? traces[i].flow : traces[i].speed;
    windows[i] = window_dataset(trace, cfg.training.lag);
    const auto n_train = static_cast<std::size_t>(
        cfg.train_fraction * static_cast<double>(windows[i].size()));
    if (n_train == 0 || n_train >= windows[i].size()) {
      throw ConfigError("horizon too short for the train/eval split");
    }
    for (std::size_t s = 0; s < n_train; ++s) {
      mean += windows[i][s].label;
      ++count;
    }
  }
  mean /= static_cast<double>(count);
  double var = 0.0;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const auto n_train = static_cast<std::size_t>(
        cfg.train_fraction * static_cast<double>(windows[i].size()));
    for (std::size_t s = 0; s < n_train; ++s) {
      const double d = windows[i][s].label - mean;
      var += d * d;
    }
  }
  double stddev = std::sqrt(var / static_cast<double>(count));
  if (stddev < 1e-9) stddev = 1.0;
  if (!cfg.normalize) {
    mean = 0.0;
    stddev = 1.0;
  }

  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const auto n_train = static_cast<std::size_t>(
        cfg.train_fraction * static_cast<double>(windows[i].size()));
    for (std::size_t s = 0; s < windows[i].size(); ++s) {
      TrafficSample sample = std::move(windows[i][s]);
      for (double& f : sample.features) f = (f - mean) / stddev;
      sample.label = (sample.label - mean) / stddev;
      (s < n_train ? datasets[i].train : datasets[i].eval)
          .push_back(std::move(sample));
    }
  }

  ForwardOptions forward;
  forward.num_clusters =
      cfg.clustering.num_clusters > 0
          ? cfg.clustering.num_clusters
          : (cfg.scenario.num_ndts + 3) / 4;
  forward.recluster_threshold_frac = cfg.clustering.recluster_threshold_frac;

  TopologySchedule schedule(nodes, cfg.weights, tau, cfg.topology.events);

  return Experiment{std::move(cfg),
                    config_hash(cfg0),
                    std::move(nodes),
                    std::move(traces),
                    std::move(tau),
                    std::move(datasets),
                    std::move(schedule),
                    forward,
                    cfg0.normalize ? mean : 0.0,
                    cfg0.normalize ? stddev : 1.0};
}

}  // namespace untwin
