#pragma once

// Dense float tensors, stable softmax, top-k selection and a counter-based RNG.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ascd/error.hpp"

namespace ascd {

inline constexpr float kNegInf = -std::numeric_limits<float>::infinity();

// Tolerance for "sums to one" checks.
inline constexpr double kNormTolerance = 1e-6;

struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<float> data;

  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> dims, float fill = 0.0f)
      : shape(std::move(dims)), data(element_count(shape), fill) {}

  static std::size_t element_count(const std::vector<std::size_t>& dims) {
    return std::accumulate(dims.begin(), dims.end(), std::size_t{1},
                           std::multiplies<>{});
  }

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t dim(std::size_t axis) const { return shape.at(axis); }

  float& at(std::size_t i) { return data[i]; }
  float at(std::size_t i) const { return data[i]; }
  float& at(std::size_t i, std::size_t j) { return data[i * shape[1] + j]; }
  float at(std::size_t i, std::size_t j) const { return data[i * shape[1] + j]; }

  // Row `i` of a rank >= 2 tensor, viewed as the trailing block.
  std::span<float> row(std::size_t i) {
    const std::size_t stride = data.size() / shape.front();
    return {data.data() + i * stride, stride};
  }
  std::span<const float> row(std::size_t i) const {
    const std::size_t stride = data.size() / shape.front();
    return {data.data() + i * stride, stride};
  }

  bool consistent() const { return data.size() == element_count(shape); }

  bool all_finite() const {
    return std::all_of(data.begin(), data.end(),
                       [](float v) { return std::isfinite(v); });
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

// Numerically stable softmax. Negative-infinity entries map to exactly zero.
inline std::vector<float> softmax_row(std::span<const float> logits) {
  float max_value = kNegInf;
  for (float v : logits) max_value = std::max(max_value, v);
  if (max_value == kNegInf) throw InvalidArgument("empty support");
  std::vector<double> exps(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    exps[i] = logits[i] == kNegInf ? 0.0 : std::exp(double(logits[i]) - max_value);
    total += exps[i];
  }
  std::vector<float> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = float(exps[i] / total);
  return out;
}

inline double log_sum_exp(std::span<const float> logits) {
  float max_value = kNegInf;
  for (float v : logits) max_value = std::max(max_value, v);
  if (max_value == kNegInf) throw InvalidArgument("empty support");
  double total = 0.0;
  for (float v : logits) {
    if (v != kNegInf) total += std::exp(double(v) - max_value);
  }
  return max_value + std::log(total);
}

// logits - logsumexp(logits); negative infinity is preserved.
inline std::vector<float> log_softmax_row(std::span<const float> logits) {
  const double lse = log_sum_exp(logits);
  std::vector<float> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = logits[i] == kNegInf ? kNegInf : float(double(logits[i]) - lse);
  }
  return out;
}

// Indices of the k largest values, ordered by descending value then ascending
// index.
inline std::vector<std::size_t> top_k_indices(std::span<const float> values,
                                              std::size_t k) {
  if (k < 1 || k > values.size()) {
    throw InvalidArgument("top_k_indices: k=" + std::to_string(k) +
                          " out of range for length " +
                          std::to_string(values.size()));
  }
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto before = [&](std::size_t a, std::size_t b) {
    if (values[a] != values[b]) return values[a] > values[b];
    return a < b;
  };
  std::partial_sort(order.begin(), order.begin() + std::ptrdiff_t(k), order.end(),
                    before);
  order.resize(k);
  return order;
}

inline std::size_t argmax(std::span<const float> values) {
  return top_k_indices(values, 1).front();
}

// Counter-based generator: output n is a pure function of (seed, stream, n).
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0)
      : seed_(seed), stream_(stream) {}

  std::uint64_t next_u64() { return mix(seed_, stream_, counter_++); }

  // Uniform double in [0, 1) with 53 random bits.
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  std::size_t uniform_index(std::size_t n) {
    if (n == 0) throw InvalidArgument("uniform_index: empty range");
    return std::size_t(uniform() * double(n)) % n;
  }

  // Standard normal via Box-Muller; consumes two counter values.
  double normal() {
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  // Independent generator for sub-task `key`; does not advance this one.
  Rng child(std::uint64_t key) const {
    return Rng(mix(seed_, stream_ ^ 0xA5A5A5A5A5A5A5A5ull, key), stream_);
  }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

  static std::uint64_t mix(std::uint64_t seed, std::uint64_t stream,
                           std::uint64_t counter) {
    std::uint64_t z = seed ^ (stream * 0xD1B54A32D192ED03ull);
    z += (counter + 1) * 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t counter_ = 0;
};

// FNV-1a; stable across platforms, used to derive per-name seeds.
inline std::uint64_t stable_hash(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  return h;
}

// Inverse-CDF draw over the given order.
inline std::size_t sample_categorical(std::span<const float> probs, Rng& rng) {
  if (probs.empty()) throw InvalidArgument("sample_categorical: empty distribution");
  double total = 0.0;
  for (float p : probs) {
    if (!(p >= 0.0f)) throw InvalidArgument("sample_categorical: negative probability");
    total += p;
  }
  if (std::abs(total - 1.0) > kNormTolerance) {
    throw InvalidArgument("sample_categorical: probabilities sum to " +
                          std::to_string(total));
  }
  const double u = rng.uniform() * total;
  double cumulative = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] <= 0.0f) continue;
    last_positive = i;
    cumulative += probs[i];
    if (u < cumulative) return i;
  }
  return last_positive;
}

}  // namespace ascd
