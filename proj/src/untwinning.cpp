#include "untwin/untwinning.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "untwin/errors.hpp"

namespace untwin {

namespace {

std::vector<int> all_ids(int n) {
  std::vector<int> ids(n);
  for (int i = 0; i < n; ++i) ids[i] = i;
  return ids;
}

std::vector<int> set_difference_sorted(std::span<const int> universe,
                                       std::span<const int> removed) {
  std::vector<int> out;
  std::set_difference(universe.begin(), universe.end(), removed.begin(),
                      removed.end(), std::back_inserter(out));
  return out;
}

TwinModel mean_of(const std::vector<const TwinModel*>& models) {
  std::vector<TwinModel> copy;
  copy.reserve(models.size());
  for (const auto* m : models) copy.push_back(*m);
  return aggregate(copy);
}

}  // namespace

double PrivacyBudget::omega() const { return untwin::omega(beta); }

double omega(double beta) {
  if (!(beta > 0.0) || !(beta < 1.25)) {
    throw InvalidInput("omega: beta must lie in (0, 1.25)");
  }
  return std::sqrt(2.0 * (std::log(1.25) - std::log(beta)));
}

std::string to_string(RollbackRule r) {
  return r == RollbackRule::kTheorem ? "theorem" : "literal";
}

RollbackRule rollback_rule_from_string(const std::string& s) {
  if (s == "theorem") return RollbackRule::kTheorem;
  if (s == "literal") return RollbackRule::kLiteral;
  throw InvalidInput("unknown rollback rule: " + s);
}

std::vector<double> importance_scores(const ConnectivityMatrix& c, int target) {
  if (target < 0 || target >= c.n) throw InvalidInput("importance: bad target id");
  std::vector<double> scores(c.n);
  for (int i = 0; i < c.n; ++i) scores[i] = c.at(i, target);
  return scores;
}

UntwinSet build_untwin_set(std::span<const double> scores, double theta,
                           int target) {
  if (theta < 0.0 && !std::isinf(theta)) {
    throw InvalidInput("build_untwin_set: negative threshold");
  }
  if (target < 0 || target >= static_cast<int>(scores.size())) {
    throw InvalidInput("build_untwin_set: bad target id");
  }
  UntwinSet set;
  set.target = target;
  set.threshold = theta;
  set.scores.assign(scores.begin(), scores.end());
  for (int n = 0; n < static_cast<int>(scores.size()); ++n) {
    if (n == target || scores[n] >= theta) set.members.push_back(n);
  }
  return set;
}

double set_importance(const UntwinSet& set) {
  double best = -1.0;
  for (int m : set.members) {
    if (m != set.target) best = std::max(best, set.scores[m]);
  }
  return best < 0.0 ? 1.0 : best;
}

double delta_at_round(const TwinHistory& history, std::span<const int> universe,
                      std::span<const int> removed, int t, double importance) {
  const RoundRecord& rec = history.at_round(t);
  std::vector<const TwinModel*> all;
  std::vector<const TwinModel*> kept;
  for (std::size_t i = 0; i < rec.participating.size(); ++i) {
    const int id = rec.participating[i];
    if (!std::binary_search(universe.begin(), universe.end(), id)) continue;
    all.push_back(&rec.local_models[i]);
    if (!std::binary_search(removed.begin(), removed.end(), id)) {
      kept.push_back(&rec.local_models[i]);
    }
  }
  if (all.empty()) throw InvalidInput("delta: no participants in universe");
  if (kept.empty()) throw InvalidInput("delta: untwinning set covers the universe");
  const TwinModel mean_all = mean_of(all);
  const TwinModel mean_kept = mean_of(kept);
  return importance * l2_distance(mean_all.params, mean_kept.params);
}

std::vector<double> phi_curve(std::span<const double> deltas, double eta,
                              double lipschitz) {
  if (eta < 0.0 || lipschitz < 0.0) {
    throw InvalidInput("phi_curve: eta and L must be non-negative");
  }
  const double base = 1.0 + eta * lipschitz;
  std::vector<double> phi(deltas.size() + 1, 0.0);
  for (std::size_t t = 1; t < phi.size(); ++t) {
    phi[t] = base * phi[t - 1] + deltas[t - 1];
  }
  return phi;
}

std::vector<double> gamma_curve(std::span<const double> phi,
                                const PrivacyBudget& budget) {
  if (!(budget.epsilon > 0.0)) throw InvalidInput("gamma_curve: epsilon must be positive");
  const double om = budget.omega();
  std::vector<double> gamma(phi.size());
  for (std::size_t t = 0; t < phi.size(); ++t) {
    if (om == 0.0) {
      gamma[t] = 0.0;
    } else if (phi[t] > 0.0) {
      gamma[t] = om / (budget.epsilon * phi[t]);
    } else {
      gamma[t] = std::numeric_limits<double>::infinity();
    }
  }
  return gamma;
}

int rollback_depth(std::span<const double> phi, double phi_star, int total_rounds,
                   RollbackRule rule) {
  if (total_rounds < 0 || static_cast<int>(phi.size()) < total_rounds + 1) {
    throw InvalidInput("rollback_depth: phi series does not cover 0..T");
  }
  if (phi_star < 0.0) throw InvalidInput("rollback_depth: negative threshold");
  int t_safe = 0;
  if (rule == RollbackRule::kTheorem) {
    for (int t = total_rounds; t >= 0; --t) {
      if (phi[t] <= phi_star) {
        t_safe = t;
        break;
      }
    }
  } else {
    for (int t = total_rounds; t >= 0; --t) {
      if (phi[t] >= phi_star) {
        t_safe = t;
        break;
      }
    }
  }
  return total_rounds - t_safe;
}

double noise_sigma(double phi_at_safe, const PrivacyBudget& budget,
                   double sigma_min) {
  if (phi_at_safe < 0.0) throw InvalidInput("noise_sigma: negative phi");
  if (sigma_min < 0.0) throw InvalidInput("noise_sigma: negative sigma_min");
  if (!(budget.epsilon > 0.0)) throw InvalidInput("noise_sigma: epsilon must be positive");
  return std::max(sigma_min, budget.omega() * phi_at_safe / budget.epsilon);
}

TwinModel perturb(TwinModel model, double sigma, Substream stream) {
  if (sigma < 0.0) throw InvalidInput("perturb: negative sigma");
  if (sigma == 0.0) return model;
  for (double& p : model.params) p += sigma * stream.next_gaussian();
  for (double p : model.params) {
    if (!std::isfinite(p)) throw InvalidInput("perturb: non-finite parameter");
  }
  ++model.version;
  return model;
}

double estimate_lipschitz(const TwinHistory& history,
                          std::span<const NdtDataset> datasets,
                          const TrainingConfig& cfg) {
  std::vector<TrafficSample> pooled;
  for (const auto& d : datasets) {
    pooled.insert(pooled.end(), d.train.begin(), d.train.end());
  }
  if (pooled.empty()) throw InvalidInput("estimate_lipschitz: no training data");

  if (cfg.arch == Arch::kLinear) {
    // Hessian of the pooled MSE is constant: (2/m) X^T X. Power iteration
    // gives its top eigenvalue exactly (up to iteration tolerance).
    const int d = cfg.lag;
    std::vector<double> a(static_cast<std::size_t>(d) * d, 0.0);
    const double scale = 2.0 / static_cast<double>(pooled.size());
    for (const auto& s : pooled) {
      for (int i = 0; i < d; ++i) {
        for (int j = 0; j < d; ++j) {
          a[static_cast<std::size_t>(i) * d + j] +=
              scale * s.features[i] * s.features[j];
        }
      }
    }
    std::vector<double> v(d, 1.0 / std::sqrt(static_cast<double>(d)));
    std::vector<double> av(d);
    double lambda = 0.0;
    for (int iter = 0; iter < 300; ++iter) {
      for (int i = 0; i < d; ++i) {
        double acc = 0.0;
        for (int j = 0; j < d; ++j) acc += a[static_cast<std::size_t>(i) * d + j] * v[j];
        av[i] = acc;
      }
      const double norm = l2_norm(av);
      if (norm == 0.0) return 0.0;
      lambda = norm;
      for (int i = 0; i < d; ++i) v[i] = av[i] / norm;
    }
    return lambda;
  }

  // mlp: max observed gradient-difference ratio over probe pairs drawn from
  // the recorded trajectory.
  const int total = history.rounds();
  Substream stream(cfg.seed, StreamKind::kLipschitzProbe);
  double best = 0.0;
  for (int probe = 0; probe < 100; ++probe) {
    const int t1 = static_cast<int>(stream.next_below(total + 1));
    const int t2 = static_cast<int>(stream.next_below(total + 1));
    const TwinModel& w1 = history.global_at(t1);
    const TwinModel& w2 = history.global_at(t2);
    const double dist = l2_distance(w1.params, w2.params);
    if (dist < 1e-12) continue;
    const Gradient g1 = gradient(w1, pooled);
    const Gradient g2 = gradient(w2, pooled);
    best = std::max(best, l2_distance(g1.values, g2.values) / dist);
  }
  return best;
}

namespace {

struct CurvePlan {
  SensitivityCurve curve;
  double phi_star = 0.0;
  int k = 0;
};

// Sensitivity curve and rollback depth for one removal set over a member
// universe (the whole network for single requests, the cluster for parallel
// ones).
CurvePlan plan_rollback(const UntwinContext& ctx, std::span<const int> universe,
                        const UntwinSet& local_set, double importance,
                        double lipschitz, const UntwinOptions& opt) {
  const int total = ctx.history.rounds();
  CurvePlan out;
  out.curve.eta = ctx.train.sgd.eta;
  out.curve.lipschitz = lipschitz;
  out.curve.growth_base = 1.0 + ctx.train.sgd.eta * lipschitz;
  out.curve.delta.resize(total);
  for (int t = 1; t <= total; ++t) {
    out.curve.delta[t - 1] =
        delta_at_round(ctx.history, universe, local_set.members, t, importance);
  }
  out.curve.phi = phi_curve(out.curve.delta, ctx.train.sgd.eta, lipschitz);
  out.curve.gamma = gamma_curve(out.curve.phi, opt.budget);

  if (opt.gamma_star.has_value()) {
    if (!(*opt.gamma_star > 0.0)) {
      throw InvalidInput("gamma_star must be positive");
    }
    out.phi_star = opt.budget.omega() / (opt.budget.epsilon * *opt.gamma_star);
  } else {
    const double peak = *std::max_element(out.curve.phi.begin(), out.curve.phi.end());
    out.phi_star = 0.05 * peak;
  }
  out.k = rollback_depth(out.curve.phi, out.phi_star, total, opt.rule);
  return out;
}

// Resolves the rollback base: the live final model when no rollback is
// needed, otherwise the nearest preceding stored checkpoint.
struct RollbackBase {
  const TwinModel* model;
  int t_star;
};

RollbackBase resolve_base(const UntwinContext& ctx, int t_safe, int k,
                          const UntwinOptions& opt) {
  if (opt.force_t_star.has_value()) {
    const int forced = *opt.force_t_star;
    if (forced < 0 || forced > t_safe) {
      throw InvalidInput("force_t_star outside [0, t_safe]");
    }
    const Checkpoint& ckpt = ctx.store.retrieve_proximal(forced);
    return {&ckpt.model, ckpt.round};
  }
  if (k == 0) return {&ctx.history.final_global(), ctx.history.rounds()};
  const Checkpoint& ckpt = ctx.store.retrieve_proximal(t_safe);
  return {&ckpt.model, ckpt.round};
}

}  // namespace

SruResult sru(const UntwinContext& ctx, const UntwinRequest& request,
              const UntwinOptions& opt) {
  const int n = ctx.history.num_ndts;
  const int total = ctx.history.rounds();
  if (request.target < 0 || request.target >= n) {
    throw InvalidInput("sru: unknown target NDT id");
  }
  if (total < 1) throw StateError("sru: no forward history");

  const auto scores = importance_scores(ctx.connectivity, request.target);
  UntwinSet set = build_untwin_set(scores, opt.theta, request.target);
  const auto universe = all_ids(n);
  const auto remaining = set_difference_sorted(universe, set.members);
  if (remaining.empty()) {
    throw NothingRemains("sru: untwinning set covers every NDT");
  }

  const double lipschitz = estimate_lipschitz(ctx.history, ctx.datasets, ctx.train);
  CurvePlan planned =
      plan_rollback(ctx, universe, set, set_importance(set), lipschitz, opt);

  RollbackPlan plan;
  plan.k = planned.k;
  plan.t_safe = total - planned.k;
  plan.phi_star = planned.phi_star;
  const RollbackBase base = resolve_base(ctx, plan.t_safe, plan.k, opt);
  plan.t_star = base.t_star;
  plan.replay_extension = plan.t_safe - plan.t_star;
  plan.sigma = opt.force_sigma.value_or(
      noise_sigma(planned.curve.phi[plan.t_safe], opt.budget, opt.sigma_min));

  Substream noise(ctx.train.seed, StreamKind::kPerturb,
                  static_cast<std::uint64_t>(request.target));
  plan.noise_stream = noise.key();
  TwinModel model = perturb(*base.model, plan.sigma, noise);

  const ReplayResult replay =
      replay_rounds(ctx.datasets, ctx.train, remaining, model, plan.t_star + 1,
                    total, opt.convergence_stop);

  SruResult result;
  result.model = replay.model;
  result.plan = plan;
  result.set = std::move(set);
  result.curve = std::move(planned.curve);
  result.rounds_executed = replay.rounds_executed;
  return result;
}

std::vector<std::vector<UntwinRequest>> partition_requests(
    std::span<const UntwinRequest> requests, const ClusterAssignment& clusters) {
  if (clusters.num_clusters < 1) throw InvalidInput("partition: no clusters");
  std::vector<std::vector<UntwinRequest>> out(clusters.num_clusters);
  for (const auto& r : requests) {
    if (r.target < 0 || r.target >= static_cast<int>(clusters.member_of.size())) {
      throw InvalidInput("partition: unknown target NDT id");
    }
    out[clusters.member_of[r.target]].push_back(r);
  }
  return out;
}

int cluster_rollback_depth(std::span<const int> depths) {
  int k = 0;
  for (int d : depths) k = std::max(k, d);
  return k;
}

PruResult pru(const UntwinContext& ctx, std::span<const UntwinRequest> requests,
              const UntwinOptions& opt) {
  const int n = ctx.history.num_ndts;
  const int total = ctx.history.rounds();
  if (total < 1) throw StateError("pru: no forward history");

  const auto groups = ctx.clusters.groups();
  const auto routed = partition_requests(requests, ctx.clusters);

  PruResult result;
  const bool any_requests = !requests.empty();
  const double lipschitz =
      any_requests ? estimate_lipschitz(ctx.history, ctx.datasets, ctx.train) : 0.0;

  // Every cluster starts the staggered phase at the synchronized final model;
  // affected clusters replace it with their perturbed rollback state.
  std::vector<TwinModel> cluster_models(groups.size(), ctx.history.final_global());
  std::vector<std::vector<int>> active_members(groups.size());
  std::vector<int> t_star(groups.size(), total);
  std::vector<bool> affected(groups.size(), false);
  std::vector<bool> dropped(groups.size(), false);

  std::set<int> removed_union;
  for (std::size_t a = 0; a < groups.size(); ++a) {
    active_members[a] = groups[a];
    if (routed[a].empty()) continue;

    std::set<int> targets;
    for (const auto& r : routed[a]) targets.insert(r.target);

    PruClusterPlan cp;
    cp.cluster = static_cast<int>(a);
    cp.targets.assign(targets.begin(), targets.end());

    // Cluster-local untwin sets: influence is excised within the cluster.
    std::set<int> removed;
    std::vector<CurvePlan> plans;
    for (int target : targets) {
      const auto scores = importance_scores(ctx.connectivity, target);
      const UntwinSet global_set = build_untwin_set(scores, opt.theta, target);
      UntwinSet local_set;
      local_set.target = target;
      local_set.threshold = opt.theta;
      local_set.scores = global_set.scores;
      std::set_intersection(global_set.members.begin(), global_set.members.end(),
                            groups[a].begin(), groups[a].end(),
                            std::back_inserter(local_set.members));
      removed.insert(local_set.members.begin(), local_set.members.end());
      if (static_cast<int>(removed.size()) < static_cast<int>(groups[a].size())) {
        plans.push_back(plan_rollback(ctx, groups[a], local_set,
                                      set_importance(local_set), lipschitz, opt));
      }
    }
    cp.removed.assign(removed.begin(), removed.end());
    removed_union.insert(removed.begin(), removed.end());

    if (removed.size() >= groups[a].size()) {
      dropped[a] = true;
      cp.dropped = true;
      result.warnings.push_back("cluster " + std::to_string(a) +
                                " lost every member; dropped from aggregation");
      result.cluster_plans.push_back(std::move(cp));
      continue;
    }

    std::vector<int> depths;
    for (const auto& p : plans) depths.push_back(p.k);
    const int k_a = cluster_rollback_depth(depths);
    const int t_safe = total - k_a;
    double phi_at_safe = 0.0;
    double phi_star = 0.0;
    for (const auto& p : plans) {
      phi_at_safe = std::max(phi_at_safe, p.curve.phi[t_safe]);
      phi_star = std::max(phi_star, p.phi_star);
    }

    cp.plan.k = k_a;
    cp.plan.t_safe = t_safe;
    cp.plan.phi_star = phi_star;
    const RollbackBase base = resolve_base(ctx, t_safe, k_a, opt);
    cp.plan.t_star = base.t_star;
    cp.plan.replay_extension = t_safe - base.t_star;
    cp.plan.sigma = opt.force_sigma.value_or(
        noise_sigma(phi_at_safe, opt.budget, opt.sigma_min));

    Substream noise(ctx.train.seed, StreamKind::kPerturb,
                    static_cast<std::uint64_t>(*targets.begin()));
    cp.plan.noise_stream = noise.key();
    cluster_models[a] = perturb(*base.model, cp.plan.sigma, noise);
    t_star[a] = base.t_star;
    affected[a] = true;
    active_members[a] = set_difference_sorted(groups[a], cp.removed);
    result.k_max = std::max(result.k_max, k_a);
    result.cluster_plans.push_back(std::move(cp));
  }

  result.removed.assign(removed_union.begin(), removed_union.end());

  bool any_survivor = false;
  int t_start = total;
  for (std::size_t a = 0; a < groups.size(); ++a) {
    if (dropped[a]) continue;
    any_survivor = true;
    if (affected[a]) t_start = std::min(t_start, t_star[a]);
  }
  if (!any_survivor) throw NothingRemains("pru: every cluster was fully untwinned");

  // Staggered retraining: a cluster trains once the timeline passes its own
  // rollback point and holds its state bit-exactly until then.
  std::vector<TwinModel> locals;
  for (int t = t_start + 1; t <= total; ++t) {
    for (std::size_t a = 0; a < groups.size(); ++a) {
      if (dropped[a] || !affected[a] || t <= t_star[a]) continue;
      locals.clear();
      for (int id : active_members[a]) {
        const auto& train = ctx.datasets[id].train;
        locals.push_back(
            local_map(cluster_models[a], train, ctx.train.sgd,
                      resolve_steps(ctx.train, train.size()),
                      Substream(ctx.train.seed, StreamKind::kBatch,
                                static_cast<std::uint64_t>(id),
                                static_cast<std::uint64_t>(t))));
      }
      cluster_models[a] = aggregate(locals);
    }
    ++result.rounds_executed;
  }

  std::vector<TwinModel> final_models;
  for (std::size_t a = 0; a < groups.size(); ++a) {
    if (!dropped[a]) final_models.push_back(cluster_models[a]);
  }
  result.model = aggregate(final_models);
  return result;
}

}  // namespace untwin
