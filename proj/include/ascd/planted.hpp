#pragma once

// Procedural weight construction. Training is out of scope, so models are
// either seeded Gaussian noise or "planted": noise plus hand-set circuits that
// force chosen heads onto a chosen modality.
//
// Planted models reserve three residual channels that stay exact through
// every layer:
//   kConstDim       1 at every position
//   kVisualFlagDim  1 at visual positions
//   kTextFlagDim    1 at text positions
// A planted head scores key j as strength * x_j[flag], so its attention mass
// sits on the target modality by a margin of `strength` logits.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "ascd/error.hpp"
#include "ascd/model.hpp"
#include "ascd/numerics.hpp"

namespace ascd {

inline constexpr std::size_t kConstDim = 0;
inline constexpr std::size_t kVisualFlagDim = 1;
inline constexpr std::size_t kTextFlagDim = 2;
inline constexpr std::size_t kReservedDims = 3;

struct PlantedHead {
  std::size_t layer = 0;
  std::size_t head = 0;
  Modality target = Modality::text;
  float strength = 24.0f;
};

struct PlantedSpec {
  std::vector<PlantedHead> heads;
  // Standard deviation of the background weights.
  float base_scale = 0.02f;
  // Layer-0 feed-forward "clean-signal gate": lowers the visual flag of a
  // position by gate_gain * mean(|x_d|) over the quiet dims, i.e. every dim at
  // or beyond kReservedDims + signal_dims. Clean features are zero there, so
  // the gate only fires on corrupted visual input.
  bool salience_gate = false;
  std::size_t signal_dims = 0;
  float gate_gain = 4.0f;
};

struct ModelInit {
  enum class Kind { seeded_random, planted };
  Kind kind = Kind::seeded_random;
  std::uint64_t seed = 0;
  PlantedSpec planted;

  static ModelInit random(std::uint64_t seed) { return {Kind::seeded_random, seed, {}}; }
  static ModelInit plant(std::uint64_t seed, PlantedSpec spec) {
    return {Kind::planted, seed, std::move(spec)};
  }
};

namespace detail {

inline void fill_gaussian(Tensor& t, Rng& rng, float stddev) {
  for (float& v : t.data) v = stddev == 0.0f ? 0.0f : float(rng.normal() * stddev);
}

inline void check_planted(const ModelConfig& c, const PlantedSpec& spec) {
  require(c.d_model > kReservedDims, "planted: d_model too small for reserved channels");
  require(spec.base_scale >= 0.0f, "planted: base_scale must be >= 0");
  std::vector<HeadId> ids;
  for (const auto& p : spec.heads) {
    require(p.layer < c.n_layers && p.head < c.n_heads,
            "planted: head (" + std::to_string(p.layer) + "," + std::to_string(p.head) +
                ") outside model with L=" + std::to_string(c.n_layers) +
                ", H=" + std::to_string(c.n_heads));
    require(p.strength >= 0.0f, "planted: strength must be >= 0");
    ids.push_back({p.layer, p.head});
  }
  HeadSet::checked(ids, c.n_layers, c.n_heads);
  if (spec.salience_gate) {
    require(kReservedDims + spec.signal_dims < c.d_model, "planted: no quiet dims for the gate");
    const std::size_t quiet = c.d_model - kReservedDims - spec.signal_dims;
    require(c.d_ff >= 2 * quiet, "planted: d_ff too small for the salience gate");
  }
}

}  // namespace detail

// Plants `head` of `layer` to attend to `target` with the given margin.
inline void plant_head(Weights& w, std::size_t layer, std::size_t head, Modality target,
                       float strength) {
  const ModelConfig& c = w.config;
  auto& L = w.layers.at(layer);
  const std::size_t off = head * c.d_head;
  for (std::size_t i = 0; i < c.d_model; ++i) {
    for (std::size_t d = 0; d < c.d_head; ++d) {
      L.wq.at(i, off + d) = 0.0f;
      L.wk.at(i, off + d) = 0.0f;
    }
  }
  L.wq.at(kConstDim, off) = strength * std::sqrt(float(c.d_head));
  L.wk.at(target == Modality::visual ? kVisualFlagDim : kTextFlagDim, off) = 1.0f;
}

inline Weights build_model(const ModelConfig& config, const ModelInit& init) {
  config.validate();
  Weights w = Weights::zeros(config);
  Rng rng(init.seed);
  const float scale = init.kind == ModelInit::Kind::planted ? init.planted.base_scale : 0.02f;
  if (init.kind == ModelInit::Kind::planted) detail::check_planted(config, init.planted);
  for (auto& [name, tensor] : w.named_tensors()) {
    Rng local = rng.child(stable_hash(name));
    detail::fill_gaussian(*tensor, local, scale);
  }
  if (init.kind == ModelInit::Kind::seeded_random) return w;

  const PlantedSpec& spec = init.planted;
  const std::size_t d = config.d_model;
  auto clear_reserved_cols = [&](Tensor& t) {
    for (std::size_t i = 0; i < t.dim(0); ++i)
      for (std::size_t j = 0; j < kReservedDims; ++j) t.at(i, j) = 0.0f;
  };
  clear_reserved_cols(w.token_embedding);
  clear_reserved_cols(w.position_embedding);
  clear_reserved_cols(w.modality_embedding);
  w.modality_embedding.at(0, kConstDim) = 1.0f;
  w.modality_embedding.at(1, kConstDim) = 1.0f;
  w.modality_embedding.at(0, kVisualFlagDim) = 1.0f;
  w.modality_embedding.at(1, kTextFlagDim) = 1.0f;
  for (auto& L : w.layers) {
    clear_reserved_cols(L.wo);
    clear_reserved_cols(L.w2);
    for (std::size_t j = 0; j < kReservedDims; ++j) L.b2.data[j] = 0.0f;
  }

  if (spec.salience_gate) {
    auto& L0 = w.layers[0];
    std::fill(L0.w1.data.begin(), L0.w1.data.end(), 0.0f);
    std::fill(L0.b1.data.begin(), L0.b1.data.end(), 0.0f);
    std::fill(L0.w2.data.begin(), L0.w2.data.end(), 0.0f);
    std::fill(L0.b2.data.begin(), L0.b2.data.end(), 0.0f);
    const std::size_t first_quiet = kReservedDims + spec.signal_dims;
    const std::size_t quiet = d - first_quiet;
    const float gain = spec.gate_gain / float(quiet);
    for (std::size_t q = 0; q < quiet; ++q) {
      L0.w1.at(first_quiet + q, 2 * q) = 1.0f;
      L0.w1.at(first_quiet + q, 2 * q + 1) = -1.0f;
      L0.w2.at(2 * q, kVisualFlagDim) = -gain;
      L0.w2.at(2 * q + 1, kVisualFlagDim) = -gain;
    }
  }

  for (const auto& p : spec.heads) plant_head(w, p.layer, p.head, p.target, p.strength);
  return w;
}

}  // namespace ascd
