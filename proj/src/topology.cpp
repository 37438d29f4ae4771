#include "untwin/topology.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "untwin/errors.hpp"

namespace untwin {

std::vector<std::vector<int>> ClusterAssignment::groups() const {
  std::vector<std::vector<int>> out(num_clusters);
  for (int id = 0; id < static_cast<int>(member_of.size()); ++id) {
    out[member_of[id]].push_back(id);
  }
  return out;
}

double coverage_overlap(const NdtNode& a, const NdtNode& b) {
  const double r1 = a.coverage_radius_m;
  const double r2 = b.coverage_radius_m;
  if (r1 <= 0.0 || r2 <= 0.0) throw InvalidInput("coverage radius must be positive");
  const double d = std::hypot(a.x - b.x, a.y - b.y);
  if (d >= r1 + r2) return 0.0;
  const double rmin = std::min(r1, r2);
  if (d <= std::abs(r1 - r2)) return 1.0;  // smaller disk fully inside
  // Circular lens area.
  const double a1 = r1 * r1 * std::acos((d * d + r1 * r1 - r2 * r2) / (2.0 * d * r1));
  const double a2 = r2 * r2 * std::acos((d * d + r2 * r2 - r1 * r1) / (2.0 * d * r2));
  const double tri = 0.5 * std::sqrt(std::max(0.0, (-d + r1 + r2) * (d + r1 - r2) *
                                                   (d - r1 + r2) * (d + r1 + r2)));
  const double lens = a1 + a2 - tri;
  return std::clamp(lens / (std::numbers::pi * rmin * rmin), 0.0, 1.0);
}

std::vector<AttributeQuad> pairwise_attributes(std::span<const NdtNode> nodes,
                                               std::span<const double> tau) {
  const int n = static_cast<int>(nodes.size());
  if (n < 2) throw InvalidInput("pairwise_attributes: need at least 2 nodes");
  if (static_cast<int>(tau.size()) != n * n) {
    throw InvalidInput("pairwise_attributes: tau matrix size mismatch");
  }
  for (int i = 0; i < n; ++i) {
    if (nodes[i].id != i) throw InvalidInput("node ids must be 0..N-1 in order");
  }

  // Backhaul term: min capacity over the pair, normalized by the best pair.
  double max_pair_cap = 0.0;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      max_pair_cap = std::max(
          max_pair_cap, std::min(nodes[i].backhaul_mbps, nodes[j].backhaul_mbps));
    }
  }

  std::vector<AttributeQuad> attrs(static_cast<std::size_t>(n) * n);
  for (int i = 0; i < n; ++i) {
    for (int j = i; j < n; ++j) {
      AttributeQuad q;
      if (i == j) {
        q.g = kMinDistanceM;
        q.k = 1.0;
        q.delta = 1.0;
        q.tau = 1.0;
      } else {
        q.g = std::max(kMinDistanceM,
                       std::hypot(nodes[i].x - nodes[j].x, nodes[i].y - nodes[j].y));
        q.k = max_pair_cap > 0.0
                  ? std::min(nodes[i].backhaul_mbps, nodes[j].backhaul_mbps) /
                        max_pair_cap
                  : 0.0;
        q.delta = coverage_overlap(nodes[i], nodes[j]);
        q.tau = tau[static_cast<std::size_t>(i) * n + j];
      }
      attrs[static_cast<std::size_t>(i) * n + j] = q;
      attrs[static_cast<std::size_t>(j) * n + i] = q;
    }
  }
  return attrs;
}

ConnectivityMatrix connectivity(std::span<const AttributeQuad> attrs, int n,
                                const ConnectivityWeights& w, int round_tag) {
  if (n < 1 || static_cast<int>(attrs.size()) != n * n) {
    throw InvalidInput("connectivity: attribute matrix size mismatch");
  }
  if (w.w_g < 0 || w.w_k < 0 || w.w_delta < 0 || w.w_tau < 0) {
    throw InvalidInput("connectivity: weights must be non-negative");
  }
  ConnectivityMatrix c;
  c.n = n;
  c.round_tag = round_tag;
  c.values.assign(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const AttributeQuad& q = attrs[static_cast<std::size_t>(i) * n + j];
      if (q.g <= 0.0) throw InvalidInput("connectivity: distance must be positive");
      const double phi =
          w.w_g / q.g + w.w_k * q.k + w.w_delta * q.delta + w.w_tau * q.tau;
      c.at(i, j) = phi;
      c.at(j, i) = phi;
    }
  }
  return c;
}

double topology_drift(const ConnectivityMatrix& c_new,
                      const ConnectivityMatrix& c_old) {
  if (c_new.n != c_old.n) throw InvalidInput("topology_drift: size mismatch");
  double acc = 0.0;
  for (int i = 0; i < c_new.n; ++i) {
    for (int j = 0; j < c_new.n; ++j) {
      if (i == j) continue;
      const double d = c_new.at(i, j) - c_old.at(i, j);
      acc += d * d;
    }
  }
  return std::sqrt(acc);
}

double offdiag_frobenius(const ConnectivityMatrix& c) {
  double acc = 0.0;
  for (int i = 0; i < c.n; ++i) {
    for (int j = 0; j < c.n; ++j) {
      if (i != j) acc += c.at(i, j) * c.at(i, j);
    }
  }
  return std::sqrt(acc);
}

ClusterAssignment cluster_ndts(const ConnectivityMatrix& c, int m) {
  const int n = c.n;
  if (m < 1 || m > n) throw InvalidInput("cluster_ndts: m out of range");

  std::vector<std::vector<int>> clusters(n);
  for (int i = 0; i < n; ++i) clusters[i] = {i};

  auto avg_link = [&](const std::vector<int>& a, const std::vector<int>& b) {
    double acc = 0.0;
    for (int i : a)
      for (int j : b) acc += c.at(i, j);
    return acc / (static_cast<double>(a.size()) * static_cast<double>(b.size()));
  };

  while (static_cast<int>(clusters.size()) > m) {
    double best = -std::numeric_limits<double>::infinity();
    int best_a = -1, best_b = -1;
    int best_lo = -1, best_hi = -1;
    for (int a = 0; a < static_cast<int>(clusters.size()); ++a) {
      for (int b = a + 1; b < static_cast<int>(clusters.size()); ++b) {
        const double score = avg_link(clusters[a], clusters[b]);
        const int lo = std::min(clusters[a].front(), clusters[b].front());
        const int hi = std::max(clusters[a].front(), clusters[b].front());
        const bool better =
            score > best ||
            (score == best && (lo < best_lo || (lo == best_lo && hi < best_hi)));
        if (better) {
          best = score;
          best_a = a;
          best_b = b;
          best_lo = lo;
          best_hi = hi;
        }
      }
    }
    std::vector<int> merged;
    merged.reserve(clusters[best_a].size() + clusters[best_b].size());
    std::merge(clusters[best_a].begin(), clusters[best_a].end(),
               clusters[best_b].begin(), clusters[best_b].end(),
               std::back_inserter(merged));
    clusters[best_a] = std::move(merged);
    clusters.erase(clusters.begin() + best_b);
  }

  std::sort(clusters.begin(), clusters.end(),
            [](const auto& a, const auto& b) { return a.front() < b.front(); });

  ClusterAssignment out;
  out.num_clusters = static_cast<int>(clusters.size());
  out.member_of.assign(n, -1);
  out.round_tag = c.round_tag;
  for (int idx = 0; idx < out.num_clusters; ++idx) {
    for (int id : clusters[idx]) out.member_of[id] = idx;
  }
  return out;
}

bool should_recluster(double drift, double threshold) {
  if (threshold < 0.0) throw InvalidInput("should_recluster: negative threshold");
  return drift > threshold;
}

}  // namespace untwin
