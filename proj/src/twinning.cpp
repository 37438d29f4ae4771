#include "untwin/twinning.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "untwin/checkpoint.hpp"
#include "untwin/errors.hpp"

namespace untwin {

const RoundRecord& TwinHistory::at_round(int t) const {
  if (t < 1 || t > rounds()) throw InvalidInput("history: round out of range");
  return records[t - 1];
}

const TwinModel& TwinHistory::global_at(int t) const {
  if (t == 0) return initial_model;
  return at_round(t).global_model;
}

TopologySchedule::TopologySchedule(std::vector<NdtNode> base,
                                   ConnectivityWeights weights,
                                   std::vector<double> tau,
                                   std::vector<TopologyEvent> events) {
  std::stable_sort(events.begin(), events.end(),
                   [](const auto& a, const auto& b) { return a.round < b.round; });
  Segment seg;
  seg.from_round = 0;
  seg.nodes = std::move(base);
  auto recompute = [&](Segment& s) {
    const auto attrs = pairwise_attributes(s.nodes, tau);
    s.connectivity =
        connectivity(attrs, static_cast<int>(s.nodes.size()), weights, s.from_round);
  };
  recompute(seg);
  segments_.push_back(seg);
  for (std::size_t i = 0; i < events.size();) {
    const int round = events[i].round;
    Segment next = segments_.back();
    next.from_round = round;
    for (; i < events.size() && events[i].round == round; ++i) {
      const auto& e = events[i];
      if (e.node_id < 0 || e.node_id >= static_cast<int>(next.nodes.size())) {
        throw InvalidInput("topology event: unknown node id");
      }
      NdtNode& n = next.nodes[e.node_id];
      if (e.x) n.x = *e.x;
      if (e.y) n.y = *e.y;
      if (e.backhaul_mbps) n.backhaul_mbps = *e.backhaul_mbps;
      if (e.coverage_radius_m) n.coverage_radius_m = *e.coverage_radius_m;
    }
    recompute(next);
    segments_.push_back(std::move(next));
  }
}

const ConnectivityMatrix& TopologySchedule::at_round(int t) const {
  const Segment* best = &segments_.front();
  for (const auto& s : segments_) {
    if (s.from_round <= t) best = &s;
  }
  return best->connectivity;
}

const std::vector<NdtNode>& TopologySchedule::nodes_at(int t) const {
  const Segment* best = &segments_.front();
  for (const auto& s : segments_) {
    if (s.from_round <= t) best = &s;
  }
  return best->nodes;
}

TwinModel local_map(const TwinModel& global, std::span<const TrafficSample> data,
                    const SgdOptions& opt, int steps, Substream stream) {
  if (data.empty()) throw InvalidInput("local_map: empty dataset");
  if (steps < 0) throw InvalidInput("local_map: negative step count");
  if (steps == 0 || opt.eta == 0.0) return global;

  TwinModel model = global;
  std::vector<TrafficSample> batch;
  const bool full_batch = opt.batch_size <= 0 ||
                          static_cast<std::size_t>(opt.batch_size) >= data.size();
  for (int s = 0; s < steps; ++s) {
    Gradient g;
    if (full_batch) {
      g = gradient(model, data);
    } else {
      batch.clear();
      for (int b = 0; b < opt.batch_size; ++b) {
        batch.push_back(data[stream.next_below(data.size())]);
      }
      g = gradient(model, batch);
    }
    if (opt.clip_enabled) g = clip(std::move(g), opt.clip_threshold);
    model = sgd_step(std::move(model), g, opt.eta);
  }
  return model;
}

TwinModel aggregate(std::span<const TwinModel> models) {
  if (models.empty()) throw InvalidInput("aggregate: no models");
  const TwinModel& first = models.front();
  for (const auto& m : models) {
    if (m.arch != first.arch || m.params.size() != first.params.size() ||
        m.input_dim != first.input_dim || m.hidden_width != first.hidden_width) {
      throw InvalidInput("aggregate: architecture mismatch");
    }
  }
  TwinModel out = first;
  const double inv = 1.0 / static_cast<double>(models.size());
  std::vector<double> column(models.size());
  std::uint64_t max_version = 0;
  for (const auto& m : models) max_version = std::max(max_version, m.version);
  for (std::size_t i = 0; i < out.params.size(); ++i) {
    for (std::size_t j = 0; j < models.size(); ++j) column[j] = models[j].params[i];
    std::sort(column.begin(), column.end());
    double acc = 0.0;
    for (double v : column) acc += v;
    out.params[i] = acc * inv;
  }
  out.version = max_version + 1;
  return out;
}

int resolve_steps(const TrainingConfig& cfg, std::size_t train_size) {
  if (cfg.steps_per_round > 0) return cfg.steps_per_round;
  const int batch = std::max(1, cfg.sgd.batch_size);
  return static_cast<int>((train_size + batch - 1) / batch);
}

double evaluate_mse(const TwinModel& model, std::span<const NdtDataset> datasets,
                    std::span<const int> subset) {
  if (subset.empty()) throw InvalidInput("evaluate_mse: empty subset");
  std::vector<int> ids(subset.begin(), subset.end());
  std::sort(ids.begin(), ids.end());
  double acc = 0.0;
  std::size_t count = 0;
  for (int id : ids) {
    if (id < 0 || id >= static_cast<int>(datasets.size())) {
      throw InvalidInput("evaluate_mse: unknown NDT id");
    }
    for (const auto& s : datasets[id].eval) {
      const double r = predict(model, s.features) - s.label;
      acc += r * r;
      ++count;
    }
  }
  if (count == 0) throw InvalidInput("evaluate_mse: no evaluation samples");
  return acc / static_cast<double>(count);
}

TwinModel initial_model(const TrainingConfig& cfg) {
  return make_model(cfg.arch, cfg.lag, cfg.hidden_width,
                    Substream(cfg.seed, StreamKind::kModelInit));
}

ForwardRun run_forward(const TopologySchedule& topology,
                       std::span<const NdtDataset> datasets,
                       const TrainingConfig& cfg,
                       std::span<const int> participants,
                       const ForwardOptions& opt, CheckpointStore* store) {
  if (cfg.rounds < 1) throw InvalidInput("run_forward: need at least one round");
  if (participants.empty()) throw NothingRemains("run_forward: no participants");
  const int n = topology.num_nodes();
  std::vector<int> ids(participants.begin(), participants.end());
  std::sort(ids.begin(), ids.end());
  for (int id : ids) {
    if (id < 0 || id >= n || id >= static_cast<int>(datasets.size())) {
      throw InvalidInput("run_forward: participant id out of range");
    }
  }

  ForwardRun run;
  run.history.initial_model = initial_model(cfg);
  run.history.seed = cfg.seed;
  run.history.num_ndts = n;

  const ConnectivityMatrix* prev_conn = &topology.at_round(0);
  ClusterAssignment clusters =
      cluster_ndts(*prev_conn, std::clamp(opt.num_clusters, 1, n));
  if (store != nullptr) {
    store->init(run.history.initial_model, *prev_conn, clusters);
  }

  TwinModel global = run.history.initial_model;
  for (int t = 1; t <= cfg.rounds; ++t) {
    const auto start = std::chrono::steady_clock::now();
    RoundRecord rec;
    rec.round = t;
    rec.participating = ids;
    rec.local_models.reserve(ids.size());
    for (int id : ids) {
      const auto& train = datasets[id].train;
      rec.local_models.push_back(
          local_map(global, train, cfg.sgd, resolve_steps(cfg, train.size()),
                    Substream(cfg.seed, StreamKind::kBatch,
                              static_cast<std::uint64_t>(id),
                              static_cast<std::uint64_t>(t))));
    }
    global = aggregate(rec.local_models);
    rec.global_model = global;

    const ConnectivityMatrix& conn = topology.at_round(t);
    const double drift = topology_drift(conn, *prev_conn);
    const double threshold =
        opt.recluster_threshold_frac * offdiag_frobenius(conn);
    const bool reclustered = should_recluster(drift, threshold);
    if (reclustered) {
      clusters = cluster_ndts(conn, std::clamp(opt.num_clusters, 1, n));
      clusters.round_tag = t;
      run.recluster_rounds.push_back(t);
    }
    if (store != nullptr) store->observe(t, global, conn, clusters, reclustered);
    prev_conn = &conn;

    rec.wall_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
            .count();
    run.history.records.push_back(std::move(rec));
  }
  run.final_connectivity = *prev_conn;
  run.final_clusters = clusters;
  return run;
}

ReplayResult replay_rounds(std::span<const NdtDataset> datasets,
                           const TrainingConfig& cfg,
                           std::span<const int> participants,
                           const TwinModel& start, int t_begin, int t_end,
                           bool convergence_stop, double tol, int patience) {
  if (participants.empty()) throw NothingRemains("replay_rounds: no participants");
  std::vector<int> ids(participants.begin(), participants.end());
  std::sort(ids.begin(), ids.end());

  ReplayResult result;
  result.model = start;
  int calm_rounds = 0;
  std::vector<TwinModel> locals;
  for (int t = t_begin; t <= t_end; ++t) {
    locals.clear();
    for (int id : ids) {
      const auto& train = datasets[id].train;
      locals.push_back(
          local_map(result.model, train, cfg.sgd,
                    resolve_steps(cfg, train.size()),
                    Substream(cfg.seed, StreamKind::kBatch,
                              static_cast<std::uint64_t>(id),
                              static_cast<std::uint64_t>(t))));
    }
    TwinModel next = aggregate(locals);
    const double drift = l2_distance(next.params, result.model.params);
    result.model = std::move(next);
    ++result.rounds_executed;
    if (convergence_stop) {
      calm_rounds = drift < tol ? calm_rounds + 1 : 0;
      if (calm_rounds >= patience) break;
    }
  }
  return result;
}

}  // namespace untwin
