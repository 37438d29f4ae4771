#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "untwin/model.hpp"
#include "untwin/synth.hpp"
#include "untwin/topology.hpp"

namespace untwin {

class CheckpointStore;

struct NdtDataset {
  std::vector<TrafficSample> train;
  std::vector<TrafficSample> eval;
};

struct SgdOptions {
  double eta = 0.01;
  int batch_size = 32;
  bool clip_enabled = true;
  double clip_threshold = 10.0;
};

struct TrainingConfig {
  Arch arch = Arch::kLinear;
  int lag = 6;  // == model input_dim
  int hidden_width = 8;
  int rounds = 200;  // T
  int steps_per_round = 0;  // 0 resolves to one pass: ceil(train_size / batch)
  SgdOptions sgd;
  std::uint64_t seed = 1;
};

struct RoundRecord {
  int round = 0;
  TwinModel global_model;
  std::vector<int> participating;
  std::vector<TwinModel> local_models;  // parallel to participating
  double wall_time_s = 0.0;             // never serialized
};

struct TwinHistory {
  TwinModel initial_model;
  std::vector<RoundRecord> records;  // rounds 1..T, contiguous
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;
  int num_ndts = 0;

  int rounds() const { return static_cast<int>(records.size()); }
  const RoundRecord& at_round(int t) const;
  const TwinModel& global_at(int t) const;  // t = 0 returns the initial model
  const TwinModel& final_global() const { return global_at(rounds()); }
};

// Applies scheduled attribute changes to a base layout and serves the
// connectivity matrix per round. Segments between events are precomputed, so
// repeated queries are cheap and reads are safe from any thread.
struct TopologyEvent {
  int round = 0;
  int node_id = 0;
  std::optional<double> x;
  std::optional<double> y;
  std::optional<double> backhaul_mbps;
  std::optional<double> coverage_radius_m;
};

class TopologySchedule {
 public:
  TopologySchedule(std::vector<NdtNode> base, ConnectivityWeights weights,
                   std::vector<double> tau, std::vector<TopologyEvent> events);

  const ConnectivityMatrix& at_round(int t) const;
  const std::vector<NdtNode>& nodes_at(int t) const;
  int num_nodes() const { return static_cast<int>(segments_.front().nodes.size()); }

 private:
  struct Segment {
    int from_round;
    std::vector<NdtNode> nodes;
    ConnectivityMatrix connectivity;
  };
  std::vector<Segment> segments_;
};

// One client's local mapping: `steps` clipped SGD steps on mini-batches
// sampled from the given substream. A batch size at or above the dataset
// size means deterministic full-batch steps. steps == 0 or eta == 0 returns
// the input unchanged.
TwinModel local_map(const TwinModel& global, std::span<const TrafficSample> data,
                    const SgdOptions& opt, int steps, Substream stream);

// Unweighted coordinate-wise mean. Each coordinate is accumulated in sorted
// value order, which makes the result invariant under permutations of the
// input list, bit for bit.
TwinModel aggregate(std::span<const TwinModel> models);

int resolve_steps(const TrainingConfig& cfg, std::size_t train_size);

// Pooled MSE over the evaluation samples of the given subset of NDTs.
double evaluate_mse(const TwinModel& model, std::span<const NdtDataset> datasets,
                    std::span<const int> subset);

struct ForwardOptions {
  int num_clusters = 1;
  double recluster_threshold_frac = 0.1;
};

struct ForwardRun {
  TwinHistory history;
  ConnectivityMatrix final_connectivity;
  ClusterAssignment final_clusters;
  std::vector<int> recluster_rounds;
};

// The forward twinning loop: every participating NDT runs local_map from the
// previous global model, the server averages, broadcasts, and notifies the
// checkpoint store. Batch sampling for NDT n at round t always comes from
// substream (seed, kBatch, n, t), in this loop and in any later replay.
ForwardRun run_forward(const TopologySchedule& topology,
                       std::span<const NdtDataset> datasets,
                       const TrainingConfig& cfg,
                       std::span<const int> participants,
                       const ForwardOptions& opt, CheckpointStore* store);

// Replays rounds [t_begin, t_end] starting from `start`, training only the
// given participants with their canonical per-round substreams. Optionally
// stops once the global model drifts less than `tol` for `patience`
// consecutive rounds. Returns the final model and the rounds executed.
struct ReplayResult {
  TwinModel model;
  int rounds_executed = 0;
};

ReplayResult replay_rounds(std::span<const NdtDataset> datasets,
                           const TrainingConfig& cfg,
                           std::span<const int> participants,
                           const TwinModel& start, int t_begin, int t_end,
                           bool convergence_stop = false, double tol = 1e-6,
                           int patience = 5);

// Deterministic initial model for a training config.
TwinModel initial_model(const TrainingConfig& cfg);

}  // namespace untwin
