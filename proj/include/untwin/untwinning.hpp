#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "untwin/checkpoint.hpp"
#include "untwin/twinning.hpp"

namespace untwin {

struct UntwinRequest {
  int target = 0;
  int issued_round = 0;
};

struct UntwinSet {
  int target = 0;
  double threshold = 0.0;
  std::vector<int> members;            // sorted; always contains target
  std::vector<double> scores;          // per-NDT coupling to the target
};

// Gaussian-mechanism budget. omega() = sqrt(2 (ln 1.25 - ln beta)).
struct PrivacyBudget {
  double epsilon = 1.0;
  double beta = 0.05;
  double omega() const;
};

double omega(double beta);

enum class RollbackRule {
  kTheorem,  // latest round whose accumulated influence is within threshold
  kLiteral,  // latest round whose gamma(t) is within the gamma threshold
};

std::string to_string(RollbackRule r);
RollbackRule rollback_rule_from_string(const std::string& s);

// Per-round and compounded influence of an untwinning set on the global
// model. delta[t] covers the transition into round t+1 (it is computed from
// round t+1's local models); phi and gamma are indexed by round 0..T.
struct SensitivityCurve {
  std::vector<double> delta;
  std::vector<double> phi;
  std::vector<double> gamma;
  double lipschitz = 0.0;
  double eta = 0.0;
  double growth_base = 1.0;  // 1 + eta * L
};

struct RollbackPlan {
  int k = 0;                 // rollback depth
  int t_safe = 0;            // T - k
  int t_star = 0;            // retrieved checkpoint round, <= t_safe
  int replay_extension = 0;  // t_safe - t_star
  double sigma = 0.0;
  double phi_star = 0.0;     // influence threshold actually applied
  std::uint64_t noise_stream = 0;
};

// Coupling of every NDT to the target: the target's column of the
// connectivity matrix. The target's own entry is the diagonal sentinel and
// is excluded from thresholding (the target joins the set unconditionally).
std::vector<double> importance_scores(const ConnectivityMatrix& c, int target);

UntwinSet build_untwin_set(std::span<const double> scores, double theta,
                           int target);

// Scale factor for the sensitivity series: the strongest coupling between
// the target and another set member, or 1 when the set is a singleton.
double set_importance(const UntwinSet& set);

// || mean of locals over `universe` - mean excluding `removed` ||_2 at round
// t, scaled by `importance`. Requires the round's local models.
double delta_at_round(const TwinHistory& history, std::span<const int> universe,
                      std::span<const int> removed, int t, double importance);

// phi(0) = 0, phi(t) = B * phi(t-1) + delta[t-1] with B = 1 + eta * L; the
// stable evaluation of the compounded influence sum.
std::vector<double> phi_curve(std::span<const double> deltas, double eta,
                              double lipschitz);

// gamma(t) = Omega / (epsilon * phi(t)); +infinity sentinel where phi is 0
// (identically 0 when Omega is 0).
std::vector<double> gamma_curve(std::span<const double> phi,
                                const PrivacyBudget& budget);

// Rollback depth K = T - t_safe. Under the theorem rule t_safe is the latest
// round with phi(t) <= phi_star (always feasible since phi(0) = 0); under
// the literal rule it is the latest round with phi(t) >= phi_star, i.e.
// gamma(t) <= gamma_star, or 0 when no round qualifies.
int rollback_depth(std::span<const double> phi, double phi_star, int total_rounds,
                   RollbackRule rule = RollbackRule::kTheorem);

// sigma = max(sigma_min, Omega * phi_at_safe / epsilon).
double noise_sigma(double phi_at_safe, const PrivacyBudget& budget,
                   double sigma_min);

// Adds i.i.d. zero-mean Gaussian noise of standard deviation sigma per
// coordinate, drawn from the given substream.
TwinModel perturb(TwinModel model, double sigma, Substream stream);

// Estimated gradient-Lipschitz constant of the pooled training loss: exact
// top eigenvalue of the quadratic's Hessian for the linear model, the max
// finite-difference ratio over probe pairs along the trajectory for the mlp.
double estimate_lipschitz(const TwinHistory& history,
                          std::span<const NdtDataset> datasets,
                          const TrainingConfig& cfg);

struct UntwinOptions {
  double theta = 0.5;
  PrivacyBudget budget;
  std::optional<double> gamma_star;  // empty: phi_star = 5% of max phi
  double sigma_min = 1e-6;
  RollbackRule rule = RollbackRule::kTheorem;
  std::optional<int> force_t_star;
  std::optional<double> force_sigma;
  bool convergence_stop = false;
};

struct UntwinContext {
  const TwinHistory& history;
  const CheckpointStore& store;
  const ConnectivityMatrix& connectivity;
  const ClusterAssignment& clusters;
  std::span<const NdtDataset> datasets;
  const TrainingConfig& train;
};

struct SruResult {
  TwinModel model;
  RollbackPlan plan;
  UntwinSet set;
  SensitivityCurve curve;
  int rounds_executed = 0;
};

// Single-request untwinning: score, build the set, compute the sensitivity
// curves, pick the rollback depth, retrieve the nearest preceding
// checkpoint, perturb it, and remap the remaining NDTs to round T on their
// canonical substreams.
SruResult sru(const UntwinContext& ctx, const UntwinRequest& request,
              const UntwinOptions& opt);

std::vector<std::vector<UntwinRequest>> partition_requests(
    std::span<const UntwinRequest> requests, const ClusterAssignment& clusters);

// Depth for a cluster: the most demanding of its members' depths; 0 when the
// cluster has no requests.
int cluster_rollback_depth(std::span<const int> depths);

struct PruClusterPlan {
  int cluster = 0;
  std::vector<int> targets;
  std::vector<int> removed;  // cluster-local untwin set union
  RollbackPlan plan;
  bool dropped = false;  // every member untwinned
};

struct PruResult {
  TwinModel model;
  std::vector<PruClusterPlan> cluster_plans;
  std::vector<int> removed;  // union across clusters
  std::vector<std::string> warnings;
  int k_max = 0;
  int rounds_executed = 0;
};

// Parallel-request untwinning: requests are routed to their clusters, each
// affected cluster rolls back to its own depth and perturbs, then clusters
// retrain in a staggered schedule (waiting clusters hold their state
// bit-exactly) with a global aggregation closing every round.
PruResult pru(const UntwinContext& ctx, std::span<const UntwinRequest> requests,
              const UntwinOptions& opt);

}  // namespace untwin
