#include "untwin/harness.hpp"

#include <algorithm>
#include <atomic>
#include <thread>

#include "untwin/errors.hpp"

namespace untwin {

namespace {

double pipeline_stat(const RunConfig& cfg0, std::uint64_t seed, bool scratch) {
  RunConfig cfg = cfg0;
  cfg.seed = seed;
  Experiment exp = build_experiment(cfg);
  const auto ids = exp.all_ids();
  const int target = cfg.untwinning.target;

  CheckpointStore store(cfg.checkpointing);
  const ForwardRun run =
      run_forward(exp.schedule, exp.datasets, exp.cfg.training, ids, exp.forward,
                  &store);

  const std::vector<int> target_only{target};
  if (scratch) {
    const auto scores = importance_scores(run.final_connectivity, target);
    const UntwinSet set =
        build_untwin_set(scores, cfg.untwinning.theta, target);
    const TwinModel model =
        retrain_from_scratch(exp.datasets, exp.cfg.training,
                             static_cast<int>(ids.size()), set.members,
                             exp.cfg.training.rounds);
    return evaluate_mse(model, exp.datasets, target_only);
  }

  const UntwinContext ctx{run.history,       store,        run.final_connectivity,
                          run.final_clusters, exp.datasets, exp.cfg.training};
  const SruResult result =
      sru(ctx, UntwinRequest{target, run.history.rounds()}, untwin_options(cfg));
  return evaluate_mse(result.model, exp.datasets, target_only);
}

}  // namespace

double untwin_pipeline_stat(const RunConfig& cfg, std::uint64_t seed) {
  return pipeline_stat(cfg, seed, false);
}

double scratch_pipeline_stat(const RunConfig& cfg, std::uint64_t seed) {
  return pipeline_stat(cfg, seed, true);
}

std::vector<double> pipeline_stats(const RunConfig& cfg,
                                   const std::vector<std::uint64_t>& seeds,
                                   bool scratch, int threads) {
  std::vector<double> out(seeds.size());
  if (seeds.empty()) return out;
  unsigned workers = threads > 0 ? static_cast<unsigned>(threads)
                                 : std::thread::hardware_concurrency();
  workers = std::clamp<unsigned>(workers, 1,
                                 static_cast<unsigned>(seeds.size()));

  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = next.fetch_add(1); i < seeds.size();
             i = next.fetch_add(1)) {
          out[i] = pipeline_stat(cfg, seeds[i], scratch);
        }
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

CompareOutcome run_compare(const RunConfig& cfg, int num_seeds, bool self_mode,
                           int threads, int permutations) {
  if (num_seeds < 30) {
    throw InsufficientSamples("compare: need at least 30 seeds per pipeline");
  }
  std::vector<std::uint64_t> seeds_a(num_seeds);
  std::vector<std::uint64_t> seeds_b(num_seeds);
  for (int i = 0; i < num_seeds; ++i) {
    seeds_a[i] = cfg.seed + static_cast<std::uint64_t>(i);
    // Disjoint block for the second pipeline in self mode.
    seeds_b[i] = self_mode ? cfg.seed + 100000 + static_cast<std::uint64_t>(i)
                           : seeds_a[i];
  }
  const auto stats_a = pipeline_stats(cfg, seeds_a, false, threads);
  const auto stats_b = pipeline_stats(cfg, seeds_b, self_mode ? false : true,
                                      threads);

  CompareOutcome outcome;
  outcome.report =
      indistinguishability_probe(stats_a, stats_b, cfg.seed, permutations);
  outcome.rows.reserve(static_cast<std::size_t>(num_seeds) * 2);
  const char* name_b = self_mode ? "self" : "scratch";
  for (int i = 0; i < num_seeds; ++i) {
    outcome.rows.push_back({seeds_a[i], "untwin", stats_a[i]});
  }
  for (int i = 0; i < num_seeds; ++i) {
    outcome.rows.push_back({seeds_b[i], name_b, stats_b[i]});
  }
  return outcome;
}

}  // namespace untwin
