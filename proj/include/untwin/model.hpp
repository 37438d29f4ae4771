#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "untwin/rng.hpp"

namespace untwin {

enum class Arch { kLinear, kMlp };

std::string to_string(Arch arch);
Arch arch_from_string(const std::string& s);

// Parameter count implied by the architecture.
//   linear: input_dim weights, no bias term.
//   mlp:    W1 (h x input_dim), b1 (h), w2 (h), b2 (1), tanh hidden layer.
int param_count(Arch arch, int input_dim, int hidden_width);

// The unit that is trained, aggregated, checkpointed, rolled back and
// perturbed. Plain value type; copies are cheap at the model sizes used here.
struct TwinModel {
  Arch arch = Arch::kLinear;
  int input_dim = 0;
  int hidden_width = 0;  // mlp only
  std::vector<double> params;
  std::uint64_t version = 0;
};

struct TrafficSample {
  std::vector<double> features;  // lagged window of readings
  double label = 0.0;            // next-step reading
  int sensor_id = 0;
  int time_index = 0;
};

struct Gradient {
  std::vector<double> values;
  std::optional<double> clip_threshold_applied;
};

// Fresh model: zeros for linear, small fan-in-scaled uniform init for mlp,
// drawn from the given substream.
TwinModel make_model(Arch arch, int input_dim, int hidden_width,
                     Substream init);

double predict(const TwinModel& m, std::span<const double> features);

// Mean squared error over the batch.
double loss(const TwinModel& m, std::span<const TrafficSample> batch);

// Analytic gradient of the batch MSE (exact for linear, backprop for mlp).
Gradient gradient(const TwinModel& m, std::span<const TrafficSample> batch);

// L2-norm clip: unchanged when within threshold, otherwise rescaled onto the
// threshold sphere. Exactly idempotent.
Gradient clip(Gradient g, double threshold);

// params' = params - eta * g; bumps the version counter.
TwinModel sgd_step(TwinModel m, const Gradient& g, double eta);

double l2_norm(std::span<const double> v);
double l2_distance(std::span<const double> a, std::span<const double> b);
double linf_distance(std::span<const double> a, std::span<const double> b);

}  // namespace untwin
