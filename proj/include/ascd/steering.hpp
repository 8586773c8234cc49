#pragma once

// Attention edits applied during decoding: amplification of selected heads'
// visual columns and suppression of the most-attended visual tokens.

#include <algorithm>
#include <cmath>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "ascd/error.hpp"
#include "ascd/numerics.hpp"
#include "ascd/types.hpp"

namespace ascd {

// Sorted, duplicate-free set of (layer, head) pairs.
class HeadSet {
 public:
  HeadSet() = default;

  // Throws on duplicates or pairs outside (n_layers, n_heads).
  static HeadSet checked(std::vector<HeadId> heads, std::size_t n_layers,
                         std::size_t n_heads) {
    std::sort(heads.begin(), heads.end());
    for (std::size_t i = 0; i < heads.size(); ++i) {
      detail::require(heads[i].layer < n_layers && heads[i].head < n_heads,
                      "head (" + std::to_string(heads[i].layer) + "," +
                          std::to_string(heads[i].head) + ") outside model");
      detail::require(i == 0 || heads[i - 1] != heads[i], "duplicate head in head set");
    }
    HeadSet out;
    out.heads_ = std::move(heads);
    return out;
  }

  // Unchecked construction; duplicates are collapsed.
  static HeadSet of(std::vector<HeadId> heads) {
    std::sort(heads.begin(), heads.end());
    heads.erase(std::unique(heads.begin(), heads.end()), heads.end());
    HeadSet out;
    out.heads_ = std::move(heads);
    return out;
  }

  static HeadSet all(std::size_t n_layers, std::size_t n_heads) {
    std::vector<HeadId> heads;
    for (std::size_t l = 0; l < n_layers; ++l)
      for (std::size_t h = 0; h < n_heads; ++h) heads.push_back({l, h});
    return of(std::move(heads));
  }

  bool contains(HeadId id) const {
    return std::binary_search(heads_.begin(), heads_.end(), id);
  }
  bool contains(std::size_t layer, std::size_t head) const {
    return contains(HeadId{layer, head});
  }
  std::size_t size() const { return heads_.size(); }
  bool empty() const { return heads_.empty(); }
  const std::vector<HeadId>& heads() const { return heads_; }
  auto begin() const { return heads_.begin(); }
  auto end() const { return heads_.end(); }

  void check_bounds(std::size_t n_layers, std::size_t n_heads) const {
    for (const auto& id : heads_) {
      detail::require(id.layer < n_layers && id.head < n_heads,
                      "head (" + std::to_string(id.layer) + "," +
                          std::to_string(id.head) + ") outside model");
    }
  }

  // |a ∩ b| / |a ∪ b|; two empty sets count as identical.
  static double jaccard(const HeadSet& a, const HeadSet& b) {
    std::vector<HeadId> both;
    std::set_intersection(a.begin(), a.end(), b.begin(), b.end(),
                          std::back_inserter(both));
    const std::size_t unite = a.size() + b.size() - both.size();
    return unite == 0 ? 1.0 : double(both.size()) / double(unite);
  }

  friend bool operator==(const HeadSet&, const HeadSet&) = default;

 private:
  std::vector<HeadId> heads_;
};

enum class PositiveScope { visual_columns, whole_row };
enum class CriticalSource { per_layer, final_layer };
enum class EditStage { pre_softmax, post_softmax_renorm };
enum class CriticalRule { scored, random };

// Number of critical visual tokens, either as a share of V or absolute.
struct KappaVis {
  enum class Kind { fraction, count };
  Kind kind = Kind::fraction;
  double value = 0.1;

  static KappaVis fraction(double f) { return {Kind::fraction, f}; }
  static KappaVis count(std::size_t n) { return {Kind::count, double(n)}; }

  void validate() const {
    if (kind == Kind::fraction) {
      detail::require(value > 0.0 && value <= 1.0, "kappa_vis fraction must be in (0,1]");
    } else {
      detail::require(value >= 1.0 && value == std::floor(value),
                      "kappa_vis count must be an integer >= 1");
    }
  }

  // max(1, round(fraction * V)) for fractions; the count itself otherwise.
  std::size_t resolve(std::size_t n_visual) const {
    validate();
    if (kind == Kind::fraction) {
      return std::max<std::size_t>(1, std::size_t(std::llround(value * double(n_visual))));
    }
    const auto n = std::size_t(value);
    detail::require(n <= n_visual, "kappa_vis count " + std::to_string(n) +
                                       " exceeds visual token count " +
                                       std::to_string(n_visual));
    return n;
  }

  friend bool operator==(const KappaVis&, const KappaVis&) = default;
};

// a + alpha*|a| on the visual columns (or the whole row).
inline void apply_positive_edit(std::span<float> row, std::span<const Modality> mask,
                                float alpha_pos, PositiveScope scope) {
  detail::require(alpha_pos >= 0.0f, "alpha_pos must be >= 0");
  if (alpha_pos == 0.0f) return;
  for (std::size_t i = 0; i < row.size(); ++i) {
    if (scope == PositiveScope::visual_columns &&
        (i >= mask.size() || mask[i] != Modality::visual))
      continue;
    if (row[i] == kNegInf) continue;
    row[i] = row[i] + alpha_pos * std::abs(row[i]);
  }
}

inline std::vector<float> positive_edit(std::span<const float> row,
                                        std::span<const Modality> mask, float alpha_pos,
                                        PositiveScope scope = PositiveScope::visual_columns) {
  std::vector<float> out(row.begin(), row.end());
  apply_positive_edit(out, mask, alpha_pos, scope);
  return out;
}

// a - alpha*|a| at the critical positions.
inline void apply_negative_edit(std::span<float> row, std::span<const std::size_t> critical,
                                float alpha_neg) {
  detail::require(alpha_neg >= 0.0f, "alpha_neg must be >= 0");
  for (std::size_t index : critical) {
    detail::require(index < row.size(), "critical index " + std::to_string(index) +
                                            " beyond row length " +
                                            std::to_string(row.size()));
  }
  if (alpha_neg == 0.0f) return;
  for (std::size_t index : critical) {
    float& a = row[index];
    if (a == kNegInf) continue;
    a = a - alpha_neg * std::abs(a);
  }
}

inline std::vector<float> negative_edit(std::span<const float> row,
                                        std::span<const std::size_t> critical,
                                        float alpha_neg) {
  std::vector<float> out(row.begin(), row.end());
  apply_negative_edit(out, critical, alpha_neg);
  return out;
}

// Head-averaged post-norm attention on each visual token, from the records of
// one layer at one query position.
inline std::vector<float> critical_token_score(std::span<const AttentionRecord> layer_records,
                                               std::size_t n_heads, std::size_t n_visual) {
  detail::require(n_heads > 0, "critical_token_score: no heads");
  std::vector<const AttentionRecord*> by_head(n_heads, nullptr);
  for (const auto& record : layer_records) {
    detail::require(record.head < n_heads, "critical_token_score: head out of range");
    detail::require(layer_records.front().layer == record.layer &&
                        layer_records.front().query_position == record.query_position,
                    "critical_token_score: records span several layers or positions");
    by_head[record.head] = &record;
  }
  std::vector<double> sums(n_visual, 0.0);
  for (std::size_t h = 0; h < n_heads; ++h) {
    if (by_head[h] == nullptr) {
      throw InvalidArgument("critical_token_score: missing head " + std::to_string(h));
    }
    const auto& weights = by_head[h]->post_norm_weights;
    detail::require(weights.size() >= n_visual,
                    "critical_token_score: row shorter than visual prefix");
    for (std::size_t v = 0; v < n_visual; ++v) sums[v] += weights[v];
  }
  std::vector<float> scores(n_visual);
  for (std::size_t v = 0; v < n_visual; ++v) scores[v] = float(sums[v] / double(n_heads));
  return scores;
}

inline std::vector<std::size_t> select_critical(std::span<const float> scores,
                                                const KappaVis& kappa) {
  const std::size_t count = kappa.resolve(scores.size());
  return top_k_indices(scores, count);
}

// Critical visual tokens chosen at one layer of the negative pass.
struct CriticalSelection {
  std::size_t layer = 0;
  std::vector<std::size_t> tokens;
  std::vector<float> scores;
};
using CriticalTokenSet = std::vector<CriticalSelection>;

// The full set of steering and fusion knobs. Defaults follow the reference
// CHAIR configuration (kappa_vis=0.1, alpha_neg=1, alpha=1, beta=0.1,
// alpha_pos=0.6).
struct SteeringSpec {
  HeadSet heads_pos;
  float alpha_pos = 0.6f;
  float alpha_neg = 1.0f;
  KappaVis kappa_vis = KappaVis::fraction(0.1);
  float alpha = 1.0f;
  float beta = 0.1f;
  PositiveScope pos_scope = PositiveScope::visual_columns;
  CriticalSource crit_source = CriticalSource::per_layer;
  EditStage edit_stage = EditStage::pre_softmax;
  // Ablation control: random critical tokens of the same count.
  CriticalRule crit_rule = CriticalRule::scored;
  std::uint64_t crit_seed = 0;

  void validate() const {
    detail::require(alpha_pos >= 0.0f, "alpha_pos must be >= 0");
    detail::require(alpha_neg >= 0.0f, "alpha_neg must be >= 0");
    detail::require(alpha >= 0.0f, "alpha must be >= 0");
    detail::require(beta > 0.0f && beta <= 1.0f, "beta must be in (0,1]");
    kappa_vis.validate();
  }
  void validate(std::size_t n_layers, std::size_t n_heads) const {
    validate();
    heads_pos.check_bounds(n_layers, n_heads);
  }
};

struct PositiveEdit {
  HeadSet heads;
  float alpha = 0.0f;
  PositiveScope scope = PositiveScope::visual_columns;
};

struct NegativeEdit {
  float alpha = 0.0f;
  KappaVis kappa = KappaVis::fraction(0.1);
  CriticalSource source = CriticalSource::per_layer;
  CriticalRule rule = CriticalRule::scored;
  std::uint64_t seed = 0;
};

// Per-pass edits handed to the model's attention.
struct SteeringDirective {
  std::optional<PositiveEdit> positive;
  std::optional<NegativeEdit> negative;
  EditStage stage = EditStage::pre_softmax;

  void validate(std::size_t n_layers, std::size_t n_heads, std::size_t n_visual) const {
    if (positive) {
      detail::require(positive->alpha >= 0.0f, "alpha_pos must be >= 0");
      positive->heads.check_bounds(n_layers, n_heads);
    }
    if (negative) {
      detail::require(negative->alpha >= 0.0f, "alpha_neg must be >= 0");
      negative->kappa.resolve(n_visual);
    }
  }
};

inline SteeringDirective positive_directive(const SteeringSpec& spec) {
  SteeringDirective d;
  d.positive = PositiveEdit{spec.heads_pos, spec.alpha_pos, spec.pos_scope};
  d.stage = spec.edit_stage;
  return d;
}

inline SteeringDirective negative_directive(const SteeringSpec& spec) {
  SteeringDirective d;
  d.negative = NegativeEdit{spec.alpha_neg, spec.kappa_vis, spec.crit_source,
                            spec.crit_rule, spec.crit_seed};
  d.stage = spec.edit_stage;
  return d;
}

}  // namespace ascd
