#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <vector>

namespace ascd {

using TokenId = std::uint32_t;

enum class Modality : std::uint8_t { visual, text };

struct HeadId {
  std::size_t layer = 0;
  std::size_t head = 0;

  friend auto operator<=>(const HeadId&, const HeadId&) = default;
};

// One attention row of one head at one query position.
//   raw_scores         scaled q.k before any steering edit
//   pre_norm_scores    the row fed to softmax (edited when the stage is pre-softmax)
//   post_norm_weights  the probabilities actually used to mix values
// Rows cover key positions 0..query_position only.
struct AttentionRecord {
  std::size_t layer = 0;
  std::size_t head = 0;
  std::size_t query_position = 0;
  std::vector<float> raw_scores;
  std::vector<float> pre_norm_scores;
  std::vector<float> post_norm_weights;
};

}  // namespace ascd
