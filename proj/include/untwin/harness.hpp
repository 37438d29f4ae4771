#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "untwin/config.hpp"
#include "untwin/metrics.hpp"

namespace untwin {

// One fully seeded end-to-end run: forward twinning plus either the untwin
// path (SRU on the configured target) or the retrain-from-scratch oracle on
// the same untwinning set. The statistic is the final model's MSE on the
// target's evaluation data.
double untwin_pipeline_stat(const RunConfig& cfg, std::uint64_t seed);
double scratch_pipeline_stat(const RunConfig& cfg, std::uint64_t seed);

// Runs one of the pipelines across seeds, fanning out over worker threads.
// Results are positioned by seed index, so the output is independent of
// scheduling.
std::vector<double> pipeline_stats(const RunConfig& cfg,
                                   const std::vector<std::uint64_t>& seeds,
                                   bool scratch, int threads = 0);

struct CompareRow {
  std::uint64_t seed = 0;
  std::string pipeline;
  double statistic = 0.0;
};

struct CompareOutcome {
  ProbeReport report;
  std::vector<CompareRow> rows;  // seeds x 2 pipelines
};

// `self_mode` compares the untwin pipeline against itself on a disjoint seed
// block (probe calibration); otherwise untwin vs retrain-from-scratch.
CompareOutcome run_compare(const RunConfig& cfg, int num_seeds, bool self_mode,
                           int threads = 0, int permutations = 1000);

}  // namespace untwin
