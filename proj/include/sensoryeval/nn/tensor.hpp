#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "sensoryeval/error.hpp"

namespace sensoryeval::nn {

/// Dense float tensor, row-major. Convolutional activations are NCHW,
/// fully-connected activations are (N, F).
struct Tensor {
  std::vector<int> shape;
  std::vector<float> values;

  Tensor() = default;
  explicit Tensor(std::vector<int> s, float fill = 0.0f) : shape(std::move(s)) {
    values.assign(count(shape), fill);
  }

  static std::size_t count(const std::vector<int>& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1},
                           [](std::size_t a, int b) { return a * static_cast<std::size_t>(b); });
  }

  std::size_t size() const { return values.size(); }
  int dim(std::size_t i) const { return shape.at(i); }
  int rank() const { return static_cast<int>(shape.size()); }
  float* data() { return values.data(); }
  const float* data() const { return values.data(); }

  /// Elements per leading-axis entry (one sample).
  std::size_t sample_size() const { return shape.empty() ? 0 : size() / static_cast<std::size_t>(shape[0]); }

  void fill(float v) { std::fill(values.begin(), values.end(), v); }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

/// Rows [begin, end) along axis 0.
inline Tensor slice_rows(const Tensor& t, int begin, int end) {
  std::vector<int> s = t.shape;
  s[0] = end - begin;
  Tensor out(s);
  const std::size_t per = t.sample_size();
  std::copy(t.values.begin() + static_cast<std::ptrdiff_t>(begin * per),
            t.values.begin() + static_cast<std::ptrdiff_t>(end * per), out.values.begin());
  return out;
}

/// Selected rows along axis 0, in the given order.
inline Tensor gather_rows(const Tensor& t, const std::vector<std::size_t>& rows) {
  std::vector<int> s = t.shape;
  s[0] = static_cast<int>(rows.size());
  Tensor out(s);
  const std::size_t per = t.sample_size();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy(t.values.begin() + static_cast<std::ptrdiff_t>(rows[i] * per),
              t.values.begin() + static_cast<std::ptrdiff_t>((rows[i] + 1) * per),
              out.values.begin() + static_cast<std::ptrdiff_t>(i * per));
  }
  return out;
}

/// Deterministic standard normal draws (Box-Muller over mt19937_64 bits).
class NormalSource {
 public:
  explicit NormalSource(std::uint64_t seed) : rng_(seed) {}

  double uniform() { return static_cast<double>(rng_() >> 11) * (1.0 / 9007199254740992.0); }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double t = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(t);
    has_spare_ = true;
    return r * std::cos(t);
  }

  std::uint64_t next() { return rng_(); }

 private:
  std::mt19937_64 rng_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// A learnable tensor with its gradient accumulator.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;

  Parameter(std::string n, std::vector<int> shape) : name(std::move(n)), value(shape), grad(shape) {}
};

/// 64-bit FNV-1a over the raw bytes of the given parameters, in order.
inline std::uint64_t digest(const std::vector<const Parameter*>& params) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ULL;
    }
  };
  for (const Parameter* p : params) {
    mix(p->name.data(), p->name.size());
    mix(p->value.data(), p->value.size() * sizeof(float));
  }
  return h;
}

}  // namespace sensoryeval::nn
