#pragma once

#include <span>
#include <vector>

namespace untwin {

struct NdtNode {
  int id = 0;
  double x = 0.0;  // meters
  double y = 0.0;
  double backhaul_mbps = 0.0;
  double coverage_radius_m = 0.0;
};

// Pairwise attributes feeding the coupling metric: geographic distance,
// normalized backhaul capacity, coverage-disk overlap, data similarity.
struct AttributeQuad {
  double g = 0.0;      // meters, clamped to >= kMinDistanceM off-diagonal
  double k = 0.0;      // in [0, 1]
  double delta = 0.0;  // in [0, 1]
  double tau = 0.0;    // in [0, 1]
};

struct ConnectivityWeights {
  double w_g = 1.0;
  double w_k = 1.0;
  double w_delta = 1.0;
  double w_tau = 1.0;
};

// Symmetric coupling scores; the diagonal is a zero sentinel excluded from
// all scoring and drift computations.
struct ConnectivityMatrix {
  int n = 0;
  std::vector<double> values;  // row-major n x n
  int round_tag = 0;

  double at(int i, int j) const { return values[static_cast<std::size_t>(i) * n + j]; }
  double& at(int i, int j) { return values[static_cast<std::size_t>(i) * n + j]; }
};

struct ClusterAssignment {
  int num_clusters = 0;
  std::vector<int> member_of;  // ndt id -> cluster index
  int round_tag = 0;

  std::vector<std::vector<int>> groups() const;
};

// Coincident sensors are maximally coupled, not infinitely: distances are
// clamped to this floor before entering the 1/g term.
inline constexpr double kMinDistanceM = 1.0;

// Fraction of the smaller coverage disk covered by the intersection.
double coverage_overlap(const NdtNode& a, const NdtNode& b);

// Attribute quads for all pairs. `tau` is the data-similarity matrix
// (row-major n x n, symmetric), computed by the trace generator.
std::vector<AttributeQuad> pairwise_attributes(std::span<const NdtNode> nodes,
                                               std::span<const double> tau);

ConnectivityMatrix connectivity(std::span<const AttributeQuad> attrs, int n,
                                const ConnectivityWeights& w, int round_tag = 0);

// Frobenius norm of the entrywise difference, diagonal excluded.
double topology_drift(const ConnectivityMatrix& c_new,
                      const ConnectivityMatrix& c_old);

// Frobenius norm of the off-diagonal entries; re-cluster thresholds are
// expressed as a fraction of this.
double offdiag_frobenius(const ConnectivityMatrix& c);

// Deterministic average-linkage agglomerative merging on the coupling scores
// treated as similarity: repeatedly merge the two clusters with the highest
// mean inter-cluster score until m remain. Ties break toward the pair with
// the lowest smallest-member id. Cluster indices are assigned in order of
// each cluster's smallest member.
ClusterAssignment cluster_ndts(const ConnectivityMatrix& c, int m);

bool should_recluster(double drift, double threshold);

}  // namespace untwin
