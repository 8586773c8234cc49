#pragma once

// A small decoder-only multimodal transformer. V visual feature vectors are
// prepended to the text tokens; attention is causal and cached, and every
// attention row can be edited by a SteeringDirective before it mixes values.
//
// Residual block (no normalisation layers):
//   x += Attn(x) Wo
//   x += relu(x W1 + b1) W2 + b2
// Input embedding: features|token + position + modality.

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ascd/error.hpp"
#include "ascd/numerics.hpp"
#include "ascd/steering.hpp"
#include "ascd/types.hpp"

namespace ascd {

struct ModelConfig {
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t d_model = 32;
  std::size_t d_head = 8;
  std::size_t vocab_size = 32;
  std::size_t n_visual = 8;
  std::size_t max_seq = 64;
  std::size_t d_ff = 64;

  void validate() const {
    detail::require(n_layers > 0 && n_heads > 0 && d_model > 0 && d_head > 0 &&
                        vocab_size > 0 && n_visual > 0 && max_seq > 0 && d_ff > 0,
                    "model config: all sizes must be positive");
    detail::require(d_model == n_heads * d_head, "model config: d_model must equal n_heads*d_head");
    detail::require(n_visual < max_seq, "model config: n_visual must be below max_seq");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct LayerWeights {
  Tensor wq, wk, wv, wo;  // [d_model, d_model]
  Tensor w1, b1;          // [d_model, d_ff], [d_ff]
  Tensor w2, b2;          // [d_ff, d_model], [d_model]

  friend bool operator==(const LayerWeights&, const LayerWeights&) = default;
};

struct Weights {
  ModelConfig config;
  Tensor token_embedding;     // [vocab, d_model]
  Tensor position_embedding;  // [max_seq, d_model]
  Tensor modality_embedding;  // [2, d_model]; row 0 visual, row 1 text
  std::vector<LayerWeights> layers;
  Tensor unembedding;  // [d_model, vocab]

  static Weights zeros(const ModelConfig& c) {
    c.validate();
    Weights w;
    w.config = c;
    w.token_embedding = Tensor({c.vocab_size, c.d_model});
    w.position_embedding = Tensor({c.max_seq, c.d_model});
    w.modality_embedding = Tensor({2, c.d_model});
    w.layers.resize(c.n_layers);
    for (auto& layer : w.layers) {
      layer.wq = Tensor({c.d_model, c.d_model});
      layer.wk = Tensor({c.d_model, c.d_model});
      layer.wv = Tensor({c.d_model, c.d_model});
      layer.wo = Tensor({c.d_model, c.d_model});
      layer.w1 = Tensor({c.d_model, c.d_ff});
      layer.b1 = Tensor({c.d_ff});
      layer.w2 = Tensor({c.d_ff, c.d_model});
      layer.b2 = Tensor({c.d_model});
    }
    w.unembedding = Tensor({c.d_model, c.vocab_size});
    return w;
  }

  // Tensors in manifest order, as stored in weight files.
  std::vector<std::pair<std::string, const Tensor*>> named_tensors() const {
    std::vector<std::pair<std::string, const Tensor*>> out{
        {"token_embedding", &token_embedding},
        {"position_embedding", &position_embedding},
        {"modality_embedding", &modality_embedding}};
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const auto p = "layers." + std::to_string(l) + ".";
      const auto& L = layers[l];
      out.insert(out.end(), {{p + "wq", &L.wq}, {p + "wk", &L.wk}, {p + "wv", &L.wv},
                             {p + "wo", &L.wo}, {p + "w1", &L.w1}, {p + "b1", &L.b1},
                             {p + "w2", &L.w2}, {p + "b2", &L.b2}});
    }
    out.emplace_back("unembedding", &unembedding);
    return out;
  }

  std::vector<std::pair<std::string, Tensor*>> named_tensors() {
    std::vector<std::pair<std::string, Tensor*>> out;
    for (auto& [name, t] : std::as_const(*this).named_tensors()) {
      out.emplace_back(name, const_cast<Tensor*>(t));
    }
    return out;
  }

  void validate() const {
    config.validate();
    detail::require(layers.size() == config.n_layers, "weights: layer count mismatch");
    const Weights ref = zeros(config);
    const auto mine = named_tensors();
    const auto expected = ref.named_tensors();
    for (std::size_t i = 0; i < mine.size(); ++i) {
      detail::require(mine[i].second->shape == expected[i].second->shape &&
                          mine[i].second->consistent(),
                      "weights: tensor " + mine[i].first + " has the wrong shape");
      detail::require(mine[i].second->all_finite(),
                      "weights: tensor " + mine[i].first + " has non-finite entries");
    }
  }

  friend bool operator==(const Weights&, const Weights&) = default;
};

// Image features followed by text tokens. Visual positions are 0..V-1.
struct MultimodalSequence {
  Tensor visual_features;  // [V, d_model]
  std::vector<TokenId> text_ids;

  std::size_t n_visual() const { return visual_features.shape.empty() ? 0 : visual_features.dim(0); }
  std::size_t size() const { return n_visual() + text_ids.size(); }

  std::vector<Modality> modality_mask() const {
    std::vector<Modality> mask(size(), Modality::text);
    std::fill_n(mask.begin(), n_visual(), Modality::visual);
    return mask;
  }
};

inline std::vector<Modality> modality_mask(std::size_t n_visual, std::size_t length) {
  std::vector<Modality> mask(length, Modality::text);
  std::fill_n(mask.begin(), std::min(n_visual, length), Modality::visual);
  return mask;
}

// Per-layer keys and values for positions 0..length-1, stored full width
// ([position][d_model]); head h occupies columns h*d_head..(h+1)*d_head-1.
struct KvCache {
  std::size_t length = 0;
  std::size_t n_visual = 0;
  std::size_t max_seq = 0;
  std::vector<std::vector<float>> keys;
  std::vector<std::vector<float>> values;

  static KvCache empty(const ModelConfig& c) {
    KvCache cache;
    cache.n_visual = c.n_visual;
    cache.max_seq = c.max_seq;
    cache.keys.resize(c.n_layers);
    cache.values.resize(c.n_layers);
    return cache;
  }
};

// Result of one forward position.
struct StepOutput {
  std::vector<float> logits;
  std::vector<AttentionRecord> records;  // layer-major, head-minor
  CriticalTokenSet critical;             // filled when a negative edit ran
};

struct PrefillOptions {
  // Experimental: steer every prefill query row too. Off by default.
  std::optional<SteeringDirective> directive;
  bool record_attention = true;
};

struct PrefillResult {
  KvCache cache;
  std::vector<float> logits;
  std::vector<AttentionRecord> records;  // last position only
};

namespace detail {

inline void add_row(std::span<float> x, std::span<const float> r) {
  for (std::size_t i = 0; i < x.size(); ++i) x[i] += r[i];
}

// out = x * M for M of shape [x.size(), cols].
inline std::vector<float> matvec(std::span<const float> x, const Tensor& m) {
  const std::size_t cols = m.dim(1);
  std::vector<float> out(cols, 0.0f);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const float xi = x[i];
    if (xi == 0.0f) continue;
    const float* row = m.data.data() + i * cols;
    for (std::size_t j = 0; j < cols; ++j) out[j] += xi * row[j];
  }
  return out;
}

inline std::vector<float> embed_visual(const Weights& w, std::span<const float> feature,
                                       std::size_t position) {
  std::vector<float> x(feature.begin(), feature.end());
  add_row(x, w.position_embedding.row(position));
  add_row(x, w.modality_embedding.row(0));
  return x;
}

inline std::vector<float> embed_text(const Weights& w, TokenId token, std::size_t position) {
  require(token < w.config.vocab_size, "token id " + std::to_string(token) + " outside vocabulary");
  std::vector<float> x(w.token_embedding.row(token).begin(), w.token_embedding.row(token).end());
  add_row(x, w.position_embedding.row(position));
  add_row(x, w.modality_embedding.row(1));
  return x;
}

inline void renormalize(std::span<float> weights) {
  double total = 0.0;
  for (float& v : weights) {
    v = std::max(v, 0.0f);
    total += v;
  }
  if (!(total > 0.0)) throw Error("empty support");
  for (float& v : weights) v = float(v / total);
}

inline std::vector<std::size_t> random_critical(const NegativeEdit& edit, std::size_t n_visual,
                                                std::size_t position, std::size_t layer) {
  const std::size_t count = edit.kappa.resolve(n_visual);
  Rng rng = Rng(edit.seed).child(std::uint64_t(position) * 1000003ull + layer);
  std::vector<std::size_t> pool(n_visual);
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  for (std::size_t i = 0; i < count; ++i) {
    std::swap(pool[i], pool[i + rng.uniform_index(n_visual - i)]);
  }
  pool.resize(count);
  std::sort(pool.begin(), pool.end());
  return pool;
}

struct PositionContext {
  const SteeringDirective* directive = nullptr;
  // Critical tokens fixed in advance (final-layer source).
  const CriticalSelection* fixed_critical = nullptr;
  bool record = true;
};

// Runs one query position through every layer, appending its keys/values to
// the cache.
inline StepOutput forward_position(const Weights& w, KvCache& cache, std::vector<float> x,
                                   const PositionContext& ctx) {
  const ModelConfig& c = w.config;
  require(cache.length < c.max_seq, "sequence exceeds max_seq (" + std::to_string(c.max_seq) + ")");
  const std::size_t t = cache.length;
  const std::size_t n_keys = t + 1;
  const std::size_t n_vis_keys = std::min(c.n_visual, n_keys);
  const auto mask = modality_mask(c.n_visual, n_keys);
  const float scale = 1.0f / std::sqrt(float(c.d_head));
  const SteeringDirective* directive = ctx.directive;

  StepOutput out;
  if (ctx.record) out.records.reserve(c.n_layers * c.n_heads);

  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const LayerWeights& L = w.layers[l];
    const auto q = matvec(x, L.wq);
    const auto k = matvec(x, L.wk);
    const auto v = matvec(x, L.wv);
    auto& keys = cache.keys[l];
    auto& vals = cache.values[l];
    keys.resize(n_keys * c.d_model);
    vals.resize(n_keys * c.d_model);
    std::copy(k.begin(), k.end(), keys.begin() + std::ptrdiff_t(t * c.d_model));
    std::copy(v.begin(), v.end(), vals.begin() + std::ptrdiff_t(t * c.d_model));

    std::vector<std::vector<float>> raw(c.n_heads, std::vector<float>(n_keys));
    std::vector<std::vector<float>> base(c.n_heads);
    for (std::size_t h = 0; h < c.n_heads; ++h) {
      const std::size_t off = h * c.d_head;
      for (std::size_t j = 0; j < n_keys; ++j) {
        const float* kj = keys.data() + j * c.d_model + off;
        float dot = 0.0f;
        for (std::size_t d = 0; d < c.d_head; ++d) dot += q[off + d] * kj[d];
        raw[h][j] = dot * scale;
      }
      base[h] = softmax_row(raw[h]);
    }

    // Critical visual tokens for this layer.
    std::vector<std::size_t> critical;
    const bool negative = directive && directive->negative && n_vis_keys == c.n_visual;
    if (negative) {
      const NegativeEdit& neg = *directive->negative;
      CriticalSelection selection;
      selection.layer = l;
      if (ctx.fixed_critical != nullptr) {
        selection.tokens = ctx.fixed_critical->tokens;
        selection.scores = ctx.fixed_critical->scores;
      } else {
        std::vector<float> scores(c.n_visual, 0.0f);
        for (std::size_t vpos = 0; vpos < c.n_visual; ++vpos) {
          double sum = 0.0;
          for (std::size_t h = 0; h < c.n_heads; ++h) sum += base[h][vpos];
          scores[vpos] = float(sum / double(c.n_heads));
        }
        selection.tokens = neg.rule == CriticalRule::random
                               ? random_critical(neg, c.n_visual, t, l)
                               : select_critical(scores, neg.kappa);
        selection.scores = std::move(scores);
      }
      critical = selection.tokens;
      out.critical.push_back(std::move(selection));
    }

    std::vector<float> mixed(c.d_model, 0.0f);
    for (std::size_t h = 0; h < c.n_heads; ++h) {
      const bool pos_edit = directive && directive->positive &&
                            directive->positive->alpha != 0.0f &&
                            directive->positive->heads.contains(l, h);
      const bool neg_edit = negative && directive->negative->alpha != 0.0f;
      std::vector<float> pre = raw[h];
      std::vector<float> weights;
      if (!directive || directive->stage == EditStage::pre_softmax) {
        if (pos_edit) {
          apply_positive_edit(pre, mask, directive->positive->alpha, directive->positive->scope);
        }
        if (neg_edit) apply_negative_edit(pre, critical, directive->negative->alpha);
        weights = (pos_edit || neg_edit) ? softmax_row(pre) : base[h];
      } else {
        weights = base[h];
        if (pos_edit) {
          apply_positive_edit(weights, mask, directive->positive->alpha,
                              directive->positive->scope);
        }
        if (neg_edit) apply_negative_edit(weights, critical, directive->negative->alpha);
        if (pos_edit || neg_edit) renormalize(weights);
      }

      const std::size_t off = h * c.d_head;
      for (std::size_t j = 0; j < n_keys; ++j) {
        const float wj = weights[j];
        if (wj == 0.0f) continue;
        const float* vj = vals.data() + j * c.d_model + off;
        for (std::size_t d = 0; d < c.d_head; ++d) mixed[off + d] += wj * vj[d];
      }
      if (ctx.record) {
        out.records.push_back(
            AttentionRecord{l, h, t, std::move(raw[h]), std::move(pre), std::move(weights)});
      }
    }

    add_row(x, matvec(mixed, L.wo));
    auto hidden = matvec(x, L.w1);
    for (std::size_t i = 0; i < hidden.size(); ++i) hidden[i] = std::max(0.0f, hidden[i] + L.b1.data[i]);
    auto ffn = matvec(hidden, L.w2);
    add_row(ffn, L.b2.data);
    add_row(x, ffn);
  }

  cache.length = n_keys;
  out.logits = matvec(x, w.unembedding);
  return out;
}

inline StepOutput steered_position(const Weights& w, KvCache& cache, std::vector<float> x,
                                   const SteeringDirective* directive, bool record) {
  const ModelConfig& c = w.config;
  if (directive) directive->validate(c.n_layers, c.n_heads, c.n_visual);
  PositionContext ctx{directive, nullptr, record};
  CriticalSelection fixed;
  if (directive && directive->negative &&
      directive->negative->source == CriticalSource::final_layer &&
      directive->negative->rule == CriticalRule::scored && cache.length + 1 > c.n_visual) {
    // Unsteered look-ahead pass for the final layer's attention.
    KvCache probe = cache;
    const auto look = forward_position(w, probe, x, PositionContext{nullptr, nullptr, true});
    const auto first = look.records.begin() + std::ptrdiff_t((c.n_layers - 1) * c.n_heads);
    const std::span<const AttentionRecord> last_layer(&*first, c.n_heads);
    fixed.layer = c.n_layers - 1;
    fixed.scores = critical_token_score(last_layer, c.n_heads, c.n_visual);
    fixed.tokens = select_critical(fixed.scores, directive->negative->kappa);
    ctx.fixed_critical = &fixed;
  }
  return forward_position(w, cache, std::move(x), ctx);
}

}  // namespace detail

// Fills a cache for the whole sequence and returns next-token logits at the
// last position. No steering unless the experimental prefill directive is set.
inline PrefillResult prefill(const Weights& w, const MultimodalSequence& seq,
                             const PrefillOptions& options = {}) {
  const ModelConfig& c = w.config;
  detail::require(seq.n_visual() == c.n_visual && seq.visual_features.rank() == 2 &&
                      seq.visual_features.dim(1) == c.d_model,
                  "prefill: visual features must be [n_visual, d_model]");
  detail::require(seq.size() >= 1, "prefill: empty sequence");
  detail::require(seq.size() <= c.max_seq, "prefill: sequence of length " +
                                               std::to_string(seq.size()) +
                                               " exceeds max_seq " + std::to_string(c.max_seq));
  PrefillResult result{KvCache::empty(c), {}, {}};
  const SteeringDirective* directive = options.directive ? &*options.directive : nullptr;
  const std::size_t n = seq.size();
  for (std::size_t p = 0; p < n; ++p) {
    auto x = p < c.n_visual ? detail::embed_visual(w, seq.visual_features.row(p), p)
                            : detail::embed_text(w, seq.text_ids[p - c.n_visual], p);
    const bool last = p + 1 == n;
    auto step = detail::steered_position(w, result.cache, std::move(x), directive,
                                         last && options.record_attention);
    if (last) {
      result.logits = std::move(step.logits);
      result.records = std::move(step.records);
    }
  }
  return result;
}

// One autoregressive step: feeds `token` at the next position, optionally
// steering every layer's attention row for this query.
inline StepOutput decode_step(const Weights& w, KvCache& cache, TokenId token,
                              const SteeringDirective* directive = nullptr,
                              bool record_attention = true) {
  detail::require(cache.length >= 1, "decode_step: empty cache");
  auto x = detail::embed_text(w, token, cache.length);
  return detail::steered_position(w, cache, std::move(x), directive, record_attention);
}

inline StepOutput decode_step(const Weights& w, KvCache& cache, TokenId token,
                              const SteeringDirective& directive,
                              bool record_attention = true) {
  return decode_step(w, cache, token, &directive, record_attention);
}

struct HeadMass {
  std::size_t layer = 0;
  std::size_t head = 0;
  double vis_mass = 0.0;
  double text_mass = 0.0;
};

struct MassReport {
  std::vector<HeadMass> heads;
  double vis_mass = 0.0;  // mean over heads
  double text_mass = 0.0;
};

// Visual vs. text share of post-norm attention, per head row and averaged.
inline MassReport attention_mass(std::span<const AttentionRecord> records,
                                 std::span<const Modality> mask) {
  detail::require(!records.empty(), "attention_mass: empty records");
  MassReport report;
  for (const auto& r : records) {
    detail::require(r.post_norm_weights.size() <= mask.size(),
                    "attention_mass: modality mask shorter than attention row");
    HeadMass m{r.layer, r.head, 0.0, 0.0};
    for (std::size_t j = 0; j < r.post_norm_weights.size(); ++j) {
      (mask[j] == Modality::visual ? m.vis_mass : m.text_mass) += r.post_norm_weights[j];
    }
    report.vis_mass += m.vis_mass;
    report.text_mass += m.text_mass;
    report.heads.push_back(m);
  }
  report.vis_mass /= double(records.size());
  report.text_mass /= double(records.size());
  return report;
}

}  // namespace ascd
