#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <vector>

#include "untwin/model.hpp"
#include "untwin/topology.hpp"

namespace untwin {

enum class StoreMode { kNaive, kFixed, kAtac };

std::string to_string(StoreMode m);
StoreMode store_mode_from_string(const std::string& s);

struct StorePolicy {
  StoreMode mode = StoreMode::kAtac;
  int fixed_interval = 10;   // p for fixed mode
  double lambda_w = 1.0;     // weight on model drift
  double lambda_c = 1.0;     // weight on topology drift
  double tau_drift = 0.5;    // utility threshold for condition (i)
  double kappa = 0.5;        // responsiveness of the elastic interval
  double p_min = 1.0;
  double p_max = 64.0;
  int budget = 256;          // stored checkpoints, round 0 pinned outside
  int recent_window = 32;    // H: rounds kept dense during coarsening
};

struct Checkpoint {
  int round = 0;
  TwinModel model;
  ConnectivityMatrix connectivity;
  ClusterAssignment clusters;
  bool anchor = false;  // re-clustering round; never evicted
  std::size_t bytes = 0;
};

struct StorageReport {
  int count = 0;  // excludes the pinned round-0 checkpoint
  std::size_t bytes = 0;
  double reduction_vs_naive = 0.0;
  bool over_budget = false;
};

// Pure coarsening pass used by the store and exercised directly in tests.
// Rounds at or before `last_round - H` are partitioned into age bands of
// doubling width (H, 2H, 4H, ...); band j thins to the newest checkpoint per
// slot of `2^j * width_multiplier` rounds. A slot containing a protected
// checkpoint (anchor or round 0) keeps only its protected members.
std::vector<int> coarsen_pass(const std::map<int, bool>& rounds_with_anchor,
                              int last_round, int recent_window,
                              int width_multiplier);

class CheckpointStore {
 public:
  explicit CheckpointStore(StorePolicy policy);

  // Pins the round-0 checkpoint; must precede any observe call.
  void init(const TwinModel& w0, const ConnectivityMatrix& c0,
            const ClusterAssignment& a0);

  // Per-round saving decision. Computes model drift against the previous
  // observed round and topology drift likewise, saves per the policy mode,
  // updates the elastic interval (atac), and coarsens when over budget.
  // Returns whether a checkpoint was stored.
  bool observe(int t, const TwinModel& model, const ConnectivityMatrix& conn,
               const ClusterAssignment& clusters, bool reclustered);

  double utility(double dw, double dc) const;
  static double update_interval(double p_t, double u, const StorePolicy& policy);

  // Nearest stored checkpoint at or before the target round. Total because
  // round 0 is pinned.
  const Checkpoint& retrieve_proximal(int target_round) const;

  StorageReport storage_report() const;

  std::vector<int> stored_rounds() const;
  bool contains(int round) const { return checkpoints_.count(round) > 0; }
  const Checkpoint& at(int round) const;
  int count() const;  // excludes round 0
  int last_round() const { return last_round_; }
  double current_interval() const { return p_t_; }
  bool over_budget() const { return over_budget_; }
  const StorePolicy& policy() const { return policy_; }

  // Directory layout: ckpt_<round>.bin per checkpoint plus store_index.json.
  void save(const std::filesystem::path& dir) const;
  static CheckpointStore load(const std::filesystem::path& dir);

 private:
  void insert(Checkpoint ckpt);
  void coarsen();

  StorePolicy policy_;
  std::map<int, Checkpoint> checkpoints_;
  double p_t_;
  int rounds_since_save_ = 0;
  int last_round_ = -1;
  bool initialized_ = false;
  bool writable_ = true;
  bool over_budget_ = false;
  std::optional<TwinModel> last_model_;
  std::optional<ConnectivityMatrix> last_connectivity_;
};

}  // namespace untwin
