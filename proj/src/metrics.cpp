#include "untwin/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "untwin/errors.hpp"

namespace untwin {

namespace {

double ks_two_sample(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  double d = 0.0;
  std::size_t i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i] <= b[j]) {
      ++i;
    } else {
      ++j;
    }
    d = std::max(d, std::abs(i / na - j / nb));
  }
  return d;
}

double sample_mean(std::span<const double> v) {
  double acc = 0.0;
  for (double x : v) acc += x;
  return acc / static_cast<double>(v.size());
}

double sample_std(std::span<const double> v, double mean) {
  if (v.size() < 2) return 0.0;
  double acc = 0.0;
  for (double x : v) acc += (x - mean) * (x - mean);
  return std::sqrt(acc / static_cast<double>(v.size() - 1));
}

}  // namespace

TwinModel retrain_from_scratch(std::span<const NdtDataset> datasets,
                               const TrainingConfig& cfg, int num_ndts,
                               std::span<const int> exclude, int total_rounds) {
  std::vector<int> excluded(exclude.begin(), exclude.end());
  std::sort(excluded.begin(), excluded.end());
  std::vector<int> remaining;
  for (int id = 0; id < num_ndts; ++id) {
    if (!std::binary_search(excluded.begin(), excluded.end(), id)) {
      remaining.push_back(id);
    }
  }
  if (remaining.empty()) {
    throw NothingRemains("retrain_from_scratch: every NDT excluded");
  }
  return replay_rounds(datasets, cfg, remaining, initial_model(cfg), 1,
                       total_rounds)
      .model;
}

double ped(const TwinModel& a, const TwinModel& b,
           std::span<const TrafficSample> eval_set) {
  if (eval_set.empty()) throw InvalidInput("ped: empty evaluation set");
  return std::abs(loss(a, eval_set) - loss(b, eval_set));
}

double param_distance(const TwinModel& a, const TwinModel& b) {
  return l2_distance(a.params, b.params);
}

ProbeReport indistinguishability_probe(std::span<const double> stats_a,
                                       std::span<const double> stats_b,
                                       std::uint64_t seed, int permutations) {
  if (stats_a.size() < 30 || stats_b.size() < 30) {
    throw InsufficientSamples("probe: need at least 30 samples per pipeline");
  }
  if (permutations < 1) throw InvalidInput("probe: need at least 1 permutation");

  ProbeReport r;
  r.n_a = static_cast<int>(stats_a.size());
  r.n_b = static_cast<int>(stats_b.size());
  r.mean_a = sample_mean(stats_a);
  r.mean_b = sample_mean(stats_b);
  r.std_a = sample_std(stats_a, r.mean_a);
  r.std_b = sample_std(stats_b, r.mean_b);
  r.ks_stat = ks_two_sample({stats_a.begin(), stats_a.end()},
                            {stats_b.begin(), stats_b.end()});

  std::vector<double> pooled(stats_a.begin(), stats_a.end());
  pooled.insert(pooled.end(), stats_b.begin(), stats_b.end());

  Substream stream(seed, StreamKind::kPermutation);
  int at_least = 0;
  std::vector<double> shuffled = pooled;
  for (int p = 0; p < permutations; ++p) {
    for (std::size_t i = shuffled.size() - 1; i > 0; --i) {
      const std::size_t j = stream.next_below(i + 1);
      std::swap(shuffled[i], shuffled[j]);
    }
    const double d = ks_two_sample(
        {shuffled.begin(), shuffled.begin() + r.n_a},
        {shuffled.begin() + r.n_a, shuffled.end()});
    if (d >= r.ks_stat - 1e-15) ++at_least;
  }
  r.p_value = (1.0 + at_least) / (1.0 + permutations);
  r.indistinguishable = r.p_value >= 0.05;
  return r;
}

RuntimeReport runtime_report(const RollbackPlan& plan, double untwin_seconds,
                             double scratch_seconds, int total_rounds) {
  RuntimeReport r;
  r.speedup = untwin_seconds > 0.0
                  ? scratch_seconds / untwin_seconds
                  : std::numeric_limits<double>::infinity();
  const int replayed = plan.k + plan.replay_extension;
  r.rounds_ratio = replayed > 0
                       ? static_cast<double>(total_rounds) / replayed
                       : std::numeric_limits<double>::infinity();
  return r;
}

}  // namespace untwin
