#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "untwin/checkpoint.hpp"
#include "untwin/synth.hpp"
#include "untwin/twinning.hpp"
#include "untwin/untwinning.hpp"

namespace untwin {

struct TopologyConfig {
  double spacing_m = 800.0;  // line layout spacing when nodes are implicit
  double capacity_mbps = 100.0;
  double coverage_radius_m = 600.0;
  std::vector<NdtNode> nodes;  // explicit layout wins when non-empty
  std::vector<TopologyEvent> events;
};

struct UntwinningConfig {
  int target = 0;  // default target for untwin/compare runs
  // With the default weights the capacity and similarity terms sit near 1
  // for every pair; 2.0 admits only strongly coupled neighbors.
  double theta = 2.0;
  double epsilon = 1.0;
  double beta = 0.05;
  std::optional<double> gamma_star;
  double sigma_min = 1e-6;
  RollbackRule rollback_rule = RollbackRule::kTheorem;
  bool convergence_stop = false;
};

struct ClusteringConfig {
  int num_clusters = 0;  // 0 resolves to ceil(N / 4)
  double recluster_threshold_frac = 0.1;
};

struct RunConfig {
  ScenarioConfig scenario;
  TraceKind kind = TraceKind::kFlow;  // which series feeds training
  TopologyConfig topology;
  ConnectivityWeights weights;
  TrainingConfig training;
  bool normalize = true;         // pooled z-score over the train split
  double train_fraction = 0.8;   // time-ordered split
  UntwinningConfig untwinning;
  ClusteringConfig clustering;
  StorePolicy checkpointing;
  std::uint64_t seed = 1;
  std::string output_dir = "out";
};

RunConfig default_config();

// Strict JSON parsing: unknown keys and malformed values raise ConfigError
// naming the offending key or position. Omitted keys take defaults.
RunConfig parse_config(const std::string& json_text);
RunConfig load_config(const std::filesystem::path& path);

// Canonical (alphabetically keyed, fully resolved) JSON text; two configs
// that differ only in key order or omitted defaults render identically.
std::string config_canonical_json(const RunConfig& cfg);

// FNV-1a over the canonical text.
std::uint64_t config_hash(const RunConfig& cfg);

UntwinOptions untwin_options(const RunConfig& cfg);

// Everything derived from a config that a run needs: layout, traces,
// windowed and normalized datasets, similarity matrix, topology schedule.
struct Experiment {
  RunConfig cfg;
  std::uint64_t hash;
  std::vector<NdtNode> nodes;
  std::vector<NdtTraces> traces;
  std::vector<double> tau;
  std::vector<NdtDataset> datasets;
  TopologySchedule schedule;
  ForwardOptions forward;
  double norm_mean = 0.0;
  double norm_std = 1.0;

  std::vector<int> all_ids() const;
};

Experiment build_experiment(const RunConfig& cfg);

}  // namespace untwin
