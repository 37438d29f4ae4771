#include "untwin/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "untwin/errors.hpp"

namespace untwin {

namespace {

constexpr int kGridPoints = 32;

double mixing_weight(const NdtNode& node, double anchor_x, double anchor_y,
                     double corr_length) {
  const double d = std::hypot(node.x - anchor_x, node.y - anchor_y);
  if (corr_length <= 0.0) return d == 0.0 ? 1.0 : 0.0;
  return std::exp(-d / corr_length);
}

TrafficTrace generate_one(const ScenarioConfig& cfg, const NdtNode& node,
                          TraceKind kind, double mean, double lambda) {
  TrafficTrace t;
  t.sensor_id = node.id;
  t.kind = kind;
  t.readings.resize(cfg.horizon);

  const auto kind_tag = static_cast<std::uint64_t>(kind);
  Substream shared(cfg.seed, StreamKind::kTraceShared, kind_tag);
  Substream idio(cfg.seed, StreamKind::kTraceIdio,
                 static_cast<std::uint64_t>(node.id), kind_tag);

  double x = mean;
  t.readings[0] = std::max(0.0, x);
  for (int i = 1; i < cfg.horizon; ++i) {
    // Both streams advance every step regardless of the mixing weight, so a
    // node's series does not depend on where the other nodes sit.
    const double z_shared = shared.next_gaussian();
    const double z_idio = idio.next_gaussian();
    const double innovation =
        cfg.noise_std * (lambda * z_shared + (1.0 - lambda) * z_idio);
    x = mean + cfg.ar_coefficient * (x - mean) + innovation;
    t.readings[i] = std::max(0.0, x);
  }
  return t;
}

}  // namespace

std::string to_string(TraceKind k) {
  return k == TraceKind::kFlow ? "flow" : "speed";
}

TraceKind trace_kind_from_string(const std::string& s) {
  if (s == "flow") return TraceKind::kFlow;
  if (s == "speed") return TraceKind::kSpeed;
  throw InvalidInput("unknown trace kind: " + s);
}

std::vector<NdtTraces> generate_traces(const ScenarioConfig& cfg,
                                       std::span<const NdtNode> nodes) {
  if (cfg.num_ndts != static_cast<int>(nodes.size())) {
    throw InvalidInput("generate_traces: node count does not match num_ndts");
  }
  if (cfg.horizon < 2) throw InvalidInput("generate_traces: horizon too short");
  if (cfg.ar_coefficient <= 0.0 || cfg.ar_coefficient >= 1.0) {
    throw InvalidInput("generate_traces: ar_coefficient must be in (0,1)");
  }
  if (cfg.noise_std < 0.0) throw InvalidInput("generate_traces: negative noise");
  if (static_cast<int>(cfg.base_flow.size()) != cfg.num_ndts ||
      static_cast<int>(cfg.base_speed.size()) != cfg.num_ndts) {
    throw InvalidInput("generate_traces: per-NDT base levels required");
  }

  double ax = 0.0, ay = 0.0;
  for (const auto& n : nodes) {
    ax += n.x;
    ay += n.y;
  }
  ax /= static_cast<double>(nodes.size());
  ay /= static_cast<double>(nodes.size());

  std::vector<NdtTraces> out(nodes.size());
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const double lambda =
        mixing_weight(nodes[i], ax, ay, cfg.spatial_corr_length);
    out[i].flow = generate_one(cfg, nodes[i], TraceKind::kFlow,
                               cfg.base_flow[i], lambda);
    out[i].speed = generate_one(cfg, nodes[i], TraceKind::kSpeed,
                                cfg.base_speed[i], lambda);
  }
  return out;
}

std::vector<TrafficSample> window_dataset(const TrafficTrace& trace, int lag) {
  const int len = static_cast<int>(trace.readings.size());
  if (lag <= 0) throw InvalidInput("window_dataset: lag must be positive");
  if (lag >= len) throw InvalidInput("window_dataset: lag not below length");
  std::vector<TrafficSample> out;
  out.reserve(len - lag);
  for (int i = 0; i + lag < len; ++i) {
    TrafficSample s;
    s.features.assign(trace.readings.begin() + i,
                      trace.readings.begin() + i + lag);
    s.label = trace.readings[i + lag];
    s.sensor_id = trace.sensor_id;
    s.time_index = i + lag;
    out.push_back(std::move(s));
  }
  return out;
}

double data_similarity(const TrafficTrace& a, const TrafficTrace& b) {
  if (a.kind != b.kind) throw InvalidInput("data_similarity: kind mismatch");
  if (a.readings.size() != b.readings.size() || a.readings.empty()) {
    throw InvalidInput("data_similarity: length mismatch or empty");
  }
  double lo = a.readings[0], hi = a.readings[0];
  for (double x : a.readings) {
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
  for (double x : b.readings) {
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
  const double range = hi - lo;
  if (range == 0.0) return 1.0;  // both constant at the same value

  // Mass on a uniform grid of kGridPoints points spanning [lo, hi].
  const double step = range / (kGridPoints - 1);
  auto histogram = [&](const TrafficTrace& t) {
    std::vector<double> h(kGridPoints, 0.0);
    const double w = 1.0 / static_cast<double>(t.readings.size());
    for (double x : t.readings) {
      int k = static_cast<int>(std::floor((x - lo) / step + 0.5));
      k = std::clamp(k, 0, kGridPoints - 1);
      h[k] += w;
    }
    return h;
  };
  const auto ha = histogram(a);
  const auto hb = histogram(b);

  // 1-D Wasserstein distance = integral of |CDF difference|.
  double w1 = 0.0;
  double cdf_a = 0.0, cdf_b = 0.0;
  for (int k = 0; k + 1 < kGridPoints; ++k) {
    cdf_a += ha[k];
    cdf_b += hb[k];
    w1 += std::abs(cdf_a - cdf_b) * step;
  }
  return std::clamp(1.0 - w1 / range, 0.0, 1.0);
}

std::vector<double> similarity_matrix(std::span<const NdtTraces> traces,
                                      TraceKind kind) {
  const int n = static_cast<int>(traces.size());
  std::vector<double> tau(static_cast<std::size_t>(n) * n, 1.0);
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const auto& a = kind == TraceKind::kFlow ? traces[i].flow : traces[i].speed;
      const auto& b = kind == TraceKind::kFlow ? traces[j].flow : traces[j].speed;
      const double s = data_similarity(a, b);
      tau[static_cast<std::size_t>(i) * n + j] = s;
      tau[static_cast<std::size_t>(j) * n + i] = s;
    }
  }
  return tau;
}

void export_traces_csv(const std::filesystem::path& path,
                       std::span<const NdtTraces> traces) {
  std::ofstream out(path);
  if (!out) throw StateError("cannot open " + path.string() + " for writing");
  out << "sensor_id,time_index,kind,value\n";
  out.precision(17);
  for (const auto& t : traces) {
    for (const auto* trace : {&t.flow, &t.speed}) {
      for (std::size_t i = 0; i < trace->readings.size(); ++i) {
        out << trace->sensor_id << ',' << i << ',' << to_string(trace->kind)
            << ',' << trace->readings[i] << '\n';
      }
    }
  }
}

std::vector<NdtTraces> import_traces_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw StateError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "sensor_id,time_index,kind,value") {
    throw InvalidInput("trace csv: bad header");
  }
  std::map<int, NdtTraces> by_sensor;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string sid, idx, kind, value;
    if (!std::getline(row, sid, ',') || !std::getline(row, idx, ',') ||
        !std::getline(row, kind, ',') || !std::getline(row, value)) {
      throw InvalidInput("trace csv: malformed row at line " +
                         std::to_string(line_no));
    }
    const int sensor = std::stoi(sid);
    const int t = std::stoi(idx);
    const TraceKind k = trace_kind_from_string(kind);
    auto& entry = by_sensor[sensor];
    TrafficTrace& trace = k == TraceKind::kFlow ? entry.flow : entry.speed;
    trace.sensor_id = sensor;
    trace.kind = k;
    if (t != static_cast<int>(trace.readings.size())) {
      throw InvalidInput("trace csv: non-contiguous time_index at line " +
                         std::to_string(line_no));
    }
    trace.readings.push_back(std::stod(value));
  }
  std::vector<NdtTraces> out;
  out.reserve(by_sensor.size());
  int expect = 0;
  for (auto& [sensor, entry] : by_sensor) {
    if (sensor != expect++) throw InvalidInput("trace csv: sensor ids not contiguous");
    out.push_back(std::move(entry));
  }
  return out;
}

}  // namespace untwin
