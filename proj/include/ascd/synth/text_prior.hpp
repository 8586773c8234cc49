#pragma once

// A hand-built one-layer model with a planted language prior.
//
// Head roles (all other heads are inert: zero query, key and value):
//   grounding  query class c matches visual tokens of class c; an IS_THERE
//              sink soaks up the mass when the class is absent. Visual mass
//              pushes the yes channel.
//   prior      text-leaning head over class tokens. A class token pushes yes
//              by its prior pi_c, and the bias cause pushes the bias effect's
//              caption logit. Visual keys score lower and push slightly
//              towards no, so moving mass onto them weakens the prior.
//   caption    attends object tokens, writes their classes to caption logits.
//   repeat     attends generated class tokens, suppresses repeating them.
//   mode       attends IS_THERE; when present, yes/no outrank everything.
//
// The layer has no feed-forward part; logits are read straight from the
// residual channels described by FeatureLayout.

#include <cmath>

#include "ascd/model.hpp"
#include "ascd/planted.hpp"
#include "ascd/synth/world.hpp"

namespace ascd::synth {

struct TextPriorSpec {
  std::size_t n_classes = 8;
  std::size_t n_visual = 10;
  std::size_t n_heads = 8;
  std::size_t d_head = 12;
  std::size_t max_seq = 32;
  std::size_t cause = 3;   // table
  std::size_t effect = 2;  // cup

  // Head slots.
  std::size_t grounding_head = 0;
  std::size_t prior_head = 1;
  std::size_t caption_head = 2;
  std::size_t repeat_head = 3;
  std::size_t mode_head = 4;

  // Scores are in post-scaling logit units.
  float grounding_gain = 8.0f;
  float grounding_sink = 3.0f;
  float grounding_yes = 8.0f;
  float prior_text_score = 6.0f;
  float prior_visual_score = 3.0f;
  float prior_yes = 1.0f;
  float effect_prior_yes = 4.0f;
  float visual_no = 0.8f;
  float caption_prior = 8.0f;
  float confuser_yes = 3.0f;
  float confuser_caption = 4.0f;
  float yes_bias = -4.1f;
  float caption_score = 6.0f;
  float caption_gain = 4.0f;
  float repeat_score = 6.0f;
  float repeat_gain = 20.0f;
  float class_bias = -0.5f;
  float eos_logit = 0.0f;
  float mode_score = 10.0f;
  float mode_gain = 20.0f;

  FeatureLayout layout() const { return {n_classes}; }

  ModelConfig config() const {
    ModelConfig c;
    c.n_layers = 1;
    c.n_heads = n_heads;
    c.d_head = d_head;
    c.d_model = n_heads * d_head;
    c.vocab_size = kFirstClass + n_classes;
    c.n_visual = n_visual;
    c.max_seq = max_seq;
    c.d_ff = 4;
    return c;
  }

  void validate() const {
    const auto c = config();
    c.validate();
    detail::require(layout().used_dims() <= c.d_model, "text-prior model: d_model too small for the layout");
    detail::require(d_head >= n_classes + 1, "text-prior model: d_head must exceed the class count");
    detail::require(cause < n_classes && effect < n_classes && cause != effect,
                    "text-prior model: bias pair must name two distinct classes");
    const std::size_t slots[] = {grounding_head, prior_head, caption_head, repeat_head, mode_head};
    for (std::size_t i = 0; i < 5; ++i) {
      detail::require(slots[i] < n_heads, "text-prior model: head slot outside the model");
      for (std::size_t j = 0; j < i; ++j) detail::require(slots[i] != slots[j], "text-prior model: head slots collide");
    }
  }
};

inline Weights build_text_prior_model(const TextPriorSpec& spec) {
  spec.validate();
  const ModelConfig cfg = spec.config();
  const FeatureLayout lay = spec.layout();
  const std::size_t C = spec.n_classes;
  const float sq = std::sqrt(float(spec.d_head));
  Weights w = Weights::zeros(cfg);

  w.modality_embedding.at(0, kConstDim) = 1.0f;
  w.modality_embedding.at(0, kVisualFlagDim) = 1.0f;
  w.modality_embedding.at(1, kConstDim) = 1.0f;
  w.modality_embedding.at(1, kTextFlagDim) = 1.0f;

  for (std::size_t c = 0; c < C; ++c) {
    const TokenId t = TokenId(kFirstClass + c);
    w.token_embedding.at(t, lay.text_class(c)) = 1.0f;
    w.token_embedding.at(t, lay.is_class_token()) = 1.0f;
    w.token_embedding.at(t, lay.yes_channel()) = spec.yes_bias;
  }
  w.token_embedding.at(kIsThere, lay.is_probe()) = 1.0f;
  w.token_embedding.at(kDescribe, lay.is_describe()) = 1.0f;
  w.token_embedding.at(kConfuser0, lay.is_confuser()) = 1.0f;
  w.token_embedding.at(kConfuser1, lay.is_confuser()) = 1.0f;

  auto& L = w.layers[0];
  auto off = [&](std::size_t head) { return head * spec.d_head; };

  {  // grounding
    const std::size_t o = off(spec.grounding_head);
    for (std::size_t c = 0; c < C; ++c) {
      L.wq.at(lay.text_class(c), o + c) = spec.grounding_gain * sq;
      L.wk.at(lay.vis_class(c), o + c) = 1.0f;
    }
    L.wq.at(kConstDim, o + C) = spec.grounding_sink * sq;
    L.wk.at(lay.is_probe(), o + C) = 1.0f;
    L.wv.at(kVisualFlagDim, o) = 1.0f;
    L.wo.at(o, lay.yes_channel()) = spec.grounding_yes;
  }
  {  // prior
    const std::size_t o = off(spec.prior_head);
    L.wq.at(kConstDim, o) = sq;
    L.wk.at(lay.is_class_token(), o) = spec.prior_text_score;
    L.wk.at(lay.is_confuser(), o) = spec.prior_text_score;
    L.wk.at(kVisualFlagDim, o) = spec.prior_visual_score;
    for (std::size_t c = 0; c < C; ++c)
      L.wv.at(lay.text_class(c), o) = c == spec.effect ? spec.effect_prior_yes : spec.prior_yes;
    L.wv.at(kVisualFlagDim, o) = -spec.visual_no;
    L.wv.at(lay.is_confuser(), o) = spec.confuser_yes;
    L.wo.at(o, lay.yes_channel()) = 1.0f;
    L.wv.at(lay.text_class(spec.cause), o + 1) = spec.caption_prior;
    L.wv.at(lay.is_confuser(), o + 1) = spec.confuser_caption;
    L.wo.at(o + 1, lay.class_channel(spec.effect)) = 1.0f;
  }
  {  // caption
    const std::size_t o = off(spec.caption_head);
    L.wq.at(kConstDim, o) = spec.caption_score * sq;
    for (std::size_t c = 0; c < C; ++c) {
      L.wk.at(lay.vis_class(c), o) = 1.0f;
      L.wv.at(lay.vis_class(c), o + c) = 1.0f;
      L.wo.at(o + c, lay.class_channel(c)) = spec.caption_gain;
    }
  }
  {  // repeat suppression
    const std::size_t o = off(spec.repeat_head);
    L.wq.at(kConstDim, o) = spec.repeat_score * sq;
    L.wk.at(lay.is_class_token(), o) = 1.0f;
    for (std::size_t c = 0; c < C; ++c) {
      L.wv.at(lay.text_class(c), o + c) = 1.0f;
      L.wo.at(o + c, lay.class_channel(c)) = -spec.repeat_gain;
    }
  }
  {  // mode
    const std::size_t o = off(spec.mode_head);
    L.wq.at(kConstDim, o) = spec.mode_score * sq;
    L.wk.at(lay.is_probe(), o) = 1.0f;
    L.wv.at(lay.is_probe(), o) = 1.0f;
    L.wo.at(o, lay.mode_channel()) = 1.0f;
  }

  // Read-out.
  const float M = spec.mode_gain;
  for (std::size_t v = 0; v < cfg.vocab_size; ++v) w.unembedding.at(kConstDim, v) = -30.0f;
  w.unembedding.at(lay.yes_channel(), kYes) = 0.5f;
  w.unembedding.at(lay.yes_channel(), kNo) = -0.5f;
  for (TokenId t : {kYes, kNo}) {
    w.unembedding.at(lay.mode_channel(), t) = M;
    w.unembedding.at(kConstDim, t) = -M;
  }
  w.unembedding.at(kConstDim, kEos) = spec.eos_logit;
  w.unembedding.at(lay.mode_channel(), kEos) = -M;
  for (std::size_t c = 0; c < C; ++c) {
    const TokenId t = TokenId(kFirstClass + c);
    w.unembedding.at(lay.class_channel(c), t) = 1.0f;
    w.unembedding.at(kConstDim, t) = spec.class_bias;
    w.unembedding.at(lay.mode_channel(), t) = -M;
  }
  w.validate();
  return w;
}

// World settings that match a TextPriorSpec's layout and bias pair.
inline WorldSpec matching_world(const TextPriorSpec& spec, std::size_t n_scenes, std::uint64_t seed) {
  WorldSpec ws;
  ws.n_classes = spec.n_classes;
  ws.n_scenes = n_scenes;
  ws.n_visual = spec.n_visual;
  ws.d_model = spec.config().d_model;
  ws.seed = seed;
  ws.bias = {spec.cause, spec.effect, 0.6, true};
  return ws;
}

}  // namespace ascd::synth
