#include "untwin/model.hpp"

#include <algorithm>
#include <cmath>

#include "untwin/errors.hpp"

namespace untwin {

namespace {

void ensure_finite(std::span<const double> v, const char* what) {
  for (double x : v) {
    if (!std::isfinite(x)) {
      throw InvalidInput(std::string(what) + ": non-finite entry");
    }
  }
}

void check_model(const TwinModel& m) {
  const int want = param_count(m.arch, m.input_dim, m.hidden_width);
  if (static_cast<int>(m.params.size()) != want) {
    throw InvalidInput("model: params length does not match architecture");
  }
}

}  // namespace

std::string to_string(Arch arch) {
  return arch == Arch::kLinear ? "linear" : "mlp";
}

Arch arch_from_string(const std::string& s) {
  if (s == "linear") return Arch::kLinear;
  if (s == "mlp") return Arch::kMlp;
  throw InvalidInput("unknown architecture tag: " + s);
}

int param_count(Arch arch, int input_dim, int hidden_width) {
  if (input_dim <= 0) throw InvalidInput("input_dim must be positive");
  if (arch == Arch::kLinear) return input_dim;
  if (hidden_width <= 0) throw InvalidInput("hidden_width must be positive");
  return hidden_width * input_dim + 2 * hidden_width + 1;
}

TwinModel make_model(Arch arch, int input_dim, int hidden_width,
                     Substream init) {
  TwinModel m;
  m.arch = arch;
  m.input_dim = input_dim;
  m.hidden_width = arch == Arch::kMlp ? hidden_width : 0;
  m.params.assign(param_count(arch, input_dim, hidden_width), 0.0);
  if (arch == Arch::kMlp) {
    const int h = hidden_width;
    const double s1 = 1.0 / std::sqrt(static_cast<double>(input_dim));
    const double s2 = 1.0 / std::sqrt(static_cast<double>(h));
    for (int i = 0; i < h * input_dim + h; ++i) {
      m.params[i] = s1 * (2.0 * init.next_double() - 1.0);
    }
    for (int i = h * input_dim + h; i < static_cast<int>(m.params.size());
         ++i) {
      m.params[i] = s2 * (2.0 * init.next_double() - 1.0);
    }
  }
  return m;
}

double predict(const TwinModel& m, std::span<const double> features) {
  check_model(m);
  if (static_cast<int>(features.size()) != m.input_dim) {
    throw InvalidInput("predict: feature length does not match input_dim");
  }
  if (m.arch == Arch::kLinear) {
    double y = 0.0;
    for (int i = 0; i < m.input_dim; ++i) y += m.params[i] * features[i];
    return y;
  }
  const int h = m.hidden_width;
  const int in = m.input_dim;
  const double* w1 = m.params.data();            // h x in, row-major
  const double* b1 = w1 + h * in;                // h
  const double* w2 = b1 + h;                     // h
  const double b2 = w2[h];                       // 1
  double y = b2;
  for (int j = 0; j < h; ++j) {
    double z = b1[j];
    for (int i = 0; i < in; ++i) z += w1[j * in + i] * features[i];
    y += w2[j] * std::tanh(z);
  }
  return y;
}

double loss(const TwinModel& m, std::span<const TrafficSample> batch) {
  if (batch.empty()) throw InvalidInput("loss: empty batch");
  double acc = 0.0;
  for (const auto& s : batch) {
    const double r = predict(m, s.features) - s.label;
    acc += r * r;
  }
  return acc / static_cast<double>(batch.size());
}

Gradient gradient(const TwinModel& m, std::span<const TrafficSample> batch) {
  if (batch.empty()) throw InvalidInput("gradient: empty batch");
  check_model(m);
  Gradient g;
  g.values.assign(m.params.size(), 0.0);
  const double scale = 2.0 / static_cast<double>(batch.size());

  if (m.arch == Arch::kLinear) {
    for (const auto& s : batch) {
      const double r = predict(m, s.features) - s.label;
      for (int i = 0; i < m.input_dim; ++i) {
        g.values[i] += scale * r * s.features[i];
      }
    }
    return g;
  }

  const int h = m.hidden_width;
  const int in = m.input_dim;
  const double* w1 = m.params.data();
  const double* b1 = w1 + h * in;
  const double* w2 = b1 + h;
  const double b2 = w2[h];
  std::vector<double> hidden(h);
  for (const auto& s : batch) {
    if (static_cast<int>(s.features.size()) != in) {
      throw InvalidInput("gradient: feature length does not match input_dim");
    }
    double y = b2;
    for (int j = 0; j < h; ++j) {
      double z = b1[j];
      for (int i = 0; i < in; ++i) z += w1[j * in + i] * s.features[i];
      hidden[j] = std::tanh(z);
      y += w2[j] * hidden[j];
    }
    const double r = scale * (y - s.label);
    double* g1 = g.values.data();
    double* gb1 = g1 + h * in;
    double* g2 = gb1 + h;
    for (int j = 0; j < h; ++j) {
      const double dz = r * w2[j] * (1.0 - hidden[j] * hidden[j]);
      for (int i = 0; i < in; ++i) g1[j * in + i] += dz * s.features[i];
      gb1[j] += dz;
      g2[j] += r * hidden[j];
    }
    g.values.back() += r;
  }
  return g;
}

Gradient clip(Gradient g, double threshold) {
  if (threshold <= 0.0) throw InvalidInput("clip: threshold must be positive");
  const double norm = l2_norm(g.values);
  // The relative slack keeps clip exactly idempotent: a freshly clipped
  // gradient whose norm lands a few ulps above the threshold passes through
  // unchanged on the second application.
  if (norm <= threshold * (1.0 + 1e-12)) return g;
  const double s = threshold / norm;
  for (double& x : g.values) x *= s;
  g.clip_threshold_applied = threshold;
  return g;
}

TwinModel sgd_step(TwinModel m, const Gradient& g, double eta) {
  if (g.values.size() != m.params.size()) {
    throw InvalidInput("sgd_step: gradient/model length mismatch");
  }
  for (std::size_t i = 0; i < m.params.size(); ++i) {
    m.params[i] -= eta * g.values[i];
  }
  ensure_finite(m.params, "sgd_step");
  ++m.version;
  return m;
}

double l2_norm(std::span<const double> v) {
  double acc = 0.0;
  for (double x : v) acc += x * x;
  return std::sqrt(acc);
}

double l2_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw InvalidInput("l2_distance: length mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return std::sqrt(acc);
}

double linf_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw InvalidInput("linf_distance: length mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(a[i] - b[i]));
  }
  return m;
}

}  // namespace untwin
