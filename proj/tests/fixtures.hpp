#pragma once

// Planted-model fixtures shared by the unit tests and the acceptance binary.

#include <vector>

#include "ascd/planted.hpp"
#include "ascd/profiler.hpp"

namespace ascd::fixtures {

// Two layers of eight heads: big enough for planted sets of 2, 4 and 8.
inline ModelConfig profiling_config() {
  ModelConfig c;
  c.n_layers = 2;
  c.n_heads = 8;
  c.d_head = 8;
  c.d_model = 64;
  c.vocab_size = 16;
  c.n_visual = 8;
  c.max_seq = 32;
  c.d_ff = 64;
  return c;
}

// Text-centric heads planted over noisy background weights, so unplanted
// heads have input-dependent ratios.
inline Weights planted_text_model(const std::vector<HeadId>& heads, std::uint64_t seed,
                                  float base_scale = 0.25f) {
  PlantedSpec spec;
  spec.base_scale = base_scale;
  for (const auto& h : heads) spec.heads.push_back({h.layer, h.head, Modality::text, 24.0f});
  return build_model(profiling_config(), ModelInit::plant(seed, spec));
}

// Prompts with random visual features and 2-5 random text tokens.
inline std::vector<MultimodalSequence> reference_set(const ModelConfig& c, std::size_t n,
                                                     std::uint64_t seed) {
  Rng rng(seed);
  std::vector<MultimodalSequence> out;
  for (std::size_t i = 0; i < n; ++i) {
    MultimodalSequence s;
    s.visual_features = Tensor({c.n_visual, c.d_model});
    // Reserved channels stay zero so the modality flags remain exact.
    for (std::size_t v = 0; v < c.n_visual; ++v)
      for (std::size_t d = kReservedDims; d < c.d_model; ++d) s.visual_features.at(v, d) = float(rng.normal());
    const std::size_t len = 2 + rng.uniform_index(4);
    for (std::size_t t = 0; t < len; ++t) s.text_ids.push_back(TokenId(rng.uniform_index(c.vocab_size)));
    out.push_back(std::move(s));
  }
  return out;
}

inline std::vector<HeadId> first_heads(std::size_t count, std::size_t n_heads, std::size_t offset = 0) {
  std::vector<HeadId> out;
  for (std::size_t i = offset; i < offset + count; ++i) out.push_back({i / n_heads, i % n_heads});
  return out;
}

// "Visually driven" model: layer-1 heads planted onto visual keys, with the
// layer-0 salience gate lowering the visual flag of corrupted features.
// Clean features live only in the first kSignalDims dims after the reserved
// channels; noise spills into the quiet dims and trips the gate.
inline constexpr std::size_t kSignalDims = 8;

inline Weights visually_driven_model() {
  ModelConfig c = profiling_config();
  c.d_ff = 128;  // two gate units per quiet dim
  PlantedSpec spec;
  spec.base_scale = 0.0f;
  spec.salience_gate = true;
  spec.signal_dims = kSignalDims;
  spec.gate_gain = 1.0f;
  for (std::size_t h = 0; h < 4; ++h) spec.heads.push_back({1, h, Modality::visual, 6.0f});
  return build_model(c, ModelInit::plant(3, spec));
}

inline std::vector<MultimodalSequence> clean_visual_set(std::size_t n, std::uint64_t seed) {
  const ModelConfig c = profiling_config();
  auto out = reference_set(c, n, seed);
  Rng rng(seed ^ 0x5eed);
  for (auto& s : out) {
    std::fill(s.visual_features.data.begin(), s.visual_features.data.end(), 0.0f);
    for (std::size_t v = 0; v < c.n_visual; ++v)
      for (std::size_t d = 0; d < kSignalDims; ++d)
        s.visual_features.at(v, kReservedDims + d) = float(rng.normal());
  }
  return out;
}

}  // namespace ascd::fixtures
