#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "untwin/twinning.hpp"
#include "untwin/untwinning.hpp"

namespace untwin {

// Ground-truth oracle: the full forward protocol re-run from the initial
// model with the excluded NDTs never participating, on the same per-(NDT,
// round) substreams as the original run.
TwinModel retrain_from_scratch(std::span<const NdtDataset> datasets,
                               const TrainingConfig& cfg, int num_ndts,
                               std::span<const int> exclude, int total_rounds);

// Prediction-error difference: |MSE(a) - MSE(b)| on a fixed evaluation set.
double ped(const TwinModel& a, const TwinModel& b,
           std::span<const TrafficSample> eval_set);

double param_distance(const TwinModel& a, const TwinModel& b);

struct ProbeReport {
  int n_a = 0;
  int n_b = 0;
  double mean_a = 0.0;
  double mean_b = 0.0;
  double std_a = 0.0;
  double std_b = 0.0;
  double ks_stat = 0.0;
  double p_value = 0.0;
  bool indistinguishable = false;  // p >= 0.05
};

// Two-sample Kolmogorov-Smirnov statistic with a permutation-test p-value.
// Requires at least 30 samples per side.
ProbeReport indistinguishability_probe(std::span<const double> stats_a,
                                       std::span<const double> stats_b,
                                       std::uint64_t seed,
                                       int permutations = 1000);

struct RuntimeReport {
  double speedup = 0.0;       // scratch seconds / untwin seconds
  double rounds_ratio = 0.0;  // T / (K + replay_extension)
};

RuntimeReport runtime_report(const RollbackPlan& plan, double untwin_seconds,
                             double scratch_seconds, int total_rounds);

}  // namespace untwin
