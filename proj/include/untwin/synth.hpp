#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "untwin/model.hpp"
#include "untwin/topology.hpp"

namespace untwin {

enum class TraceKind { kFlow, kSpeed };

std::string to_string(TraceKind k);
TraceKind trace_kind_from_string(const std::string& s);

struct TrafficTrace {
  int sensor_id = 0;
  TraceKind kind = TraceKind::kFlow;
  std::vector<double> readings;
};

struct NdtTraces {
  TrafficTrace flow;
  TrafficTrace speed;
};

// Stand-in for a corridor of loop detectors: per-sensor AR(1) series whose
// innovations mix one shared regional factor with an idiosyncratic factor.
// The mixing weight is exp(-distance_to_regional_anchor / corr_length), the
// anchor being the centroid of the sensor layout, so nearby-the-core sensors
// co-move and peripheral ones wander on their own.
struct ScenarioConfig {
  int num_ndts = 21;
  int horizon = 500;
  std::vector<double> base_flow;   // per-NDT means; broadcast at parse time
  std::vector<double> base_speed;
  double ar_coefficient = 0.8;
  double noise_std = 4.0;
  double spatial_corr_length = 1200.0;
  std::uint64_t seed = 1;
};

// Fully determined by (cfg, node positions); per-sensor counter substreams
// make the output independent of generation order. Negative readings clamp
// to zero.
std::vector<NdtTraces> generate_traces(const ScenarioConfig& cfg,
                                       std::span<const NdtNode> nodes);

// Sliding windows: sample i predicts readings[i+lag] from readings[i..i+lag).
std::vector<TrafficSample> window_dataset(const TrafficTrace& trace, int lag);

// Data-distribution similarity in [0, 1]: readings are binned onto a 32-point
// grid spanning the joint min-max range R, and tau = 1 - W1/R where W1 is the
// 1-D Wasserstein distance between the binned distributions.
double data_similarity(const TrafficTrace& a, const TrafficTrace& b);

// Row-major n x n similarity matrix over one kind of trace; unit diagonal.
std::vector<double> similarity_matrix(std::span<const NdtTraces> traces,
                                      TraceKind kind);

// CSV schema: header `sensor_id,time_index,kind,value`, one row per reading.
void export_traces_csv(const std::filesystem::path& path,
                       std::span<const NdtTraces> traces);
std::vector<NdtTraces> import_traces_csv(const std::filesystem::path& path);

}  // namespace untwin
