#pragma once

// Contrastive decoding over two branches of the same model.
//
// Every step feeds the committed token to each branch, turns branch logits
// into log-probabilities and fuses them:
//   raw    = (1 + alpha) * pos - alpha * neg
//   cutoff = ln(beta) + max(raw)        (or max(pos) under CutoffMode::positive_max)
//   final  = raw with -inf wherever pos < cutoff
//
// The branches differ by method:
//   ascd  pos: positive edit on text-centric heads; neg: critical-token suppression
//   vcd   neg: visual features corrupted by seeded Gaussian noise
//   icd   neg: a confuser prefix inserted before the prompt
//   original: a single unsteered branch, final = its log-probabilities

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ascd/error.hpp"
#include "ascd/model.hpp"
#include "ascd/numerics.hpp"
#include "ascd/steering.hpp"

namespace ascd {

enum class Strategy { greedy, nucleus, beam };
enum class Method { original, ascd, vcd, icd };
enum class CutoffMode { fused_max, positive_max };

struct DecodeConfig {
  Strategy strategy = Strategy::greedy;
  float top_p = 0.9f;
  float temperature = 1.0f;
  std::uint64_t sample_seed = 0;
  std::size_t beam_width = 1;
  std::size_t max_new_tokens = 16;
  std::vector<TokenId> stop_tokens;

  Method method = Method::original;
  SteeringSpec steering;  // ascd knobs, including its alpha and beta

  // vcd / icd contrast parameters.
  float vcd_sigma = 1.0f;
  std::uint64_t vcd_seed = 0;
  std::vector<TokenId> icd_prefix;
  float contrast_alpha = 1.0f;
  float contrast_beta = 0.1f;
  // The vcd / icd line anchors its cutoff on the positive branch.
  CutoffMode contrast_cutoff = CutoffMode::positive_max;

  CutoffMode cutoff = CutoffMode::fused_max;  // ascd
  // Keep the positive branch's attention records in every StepTrace.
  bool record_attention = false;

  void validate() const {
    detail::require(top_p > 0.0f && top_p <= 1.0f, "top_p must be in (0,1]");
    detail::require(temperature > 0.0f, "temperature must be > 0");
    detail::require(beam_width >= 1, "beam width must be >= 1");
    detail::require(max_new_tokens >= 1, "max_new_tokens must be >= 1");
    if (method == Method::ascd) steering.validate();
    if (method == Method::vcd) detail::require(vcd_sigma >= 0.0f, "vcd sigma must be >= 0");
    if (method == Method::icd) detail::require(!icd_prefix.empty(), "icd prefix must not be empty");
    if (method == Method::vcd || method == Method::icd) {
      detail::require(contrast_alpha >= 0.0f, "contrast alpha must be >= 0");
      detail::require(contrast_beta > 0.0f && contrast_beta <= 1.0f, "contrast beta must be in (0,1]");
    }
  }

  bool is_contrastive() const { return method != Method::original; }
  float fusion_alpha() const { return method == Method::ascd ? steering.alpha : contrast_alpha; }
  float fusion_beta() const { return method == Method::ascd ? steering.beta : contrast_beta; }
  CutoffMode fusion_cutoff() const { return method == Method::ascd ? cutoff : contrast_cutoff; }
};

struct Fusion {
  std::vector<float> raw;
  std::vector<float> final;
};

// Contrastive fusion of two log-probability vectors with plausibility
// truncation. Throws Error("empty support after truncation") if every entry
// is masked.
inline Fusion contrast_fuse(std::span<const float> pos, std::span<const float> neg, float alpha,
                            float beta, CutoffMode mode = CutoffMode::fused_max) {
  detail::require(pos.size() == neg.size() && !pos.empty(), "contrast_fuse: size mismatch");
  detail::require(alpha >= 0.0f, "contrast_fuse: alpha must be >= 0");
  detail::require(beta > 0.0f && beta <= 1.0f, "contrast_fuse: beta must be in (0,1]");
  Fusion f;
  f.raw.resize(pos.size());
  // Evaluated in double and rounded once, so raw is within half an ulp.
  for (std::size_t i = 0; i < pos.size(); ++i)
    f.raw[i] = float((1.0 + double(alpha)) * double(pos[i]) - double(alpha) * double(neg[i]));
  const auto reference = mode == CutoffMode::fused_max ? std::span<const float>(f.raw) : pos;
  const float cutoff = std::log(beta) + *std::max_element(reference.begin(), reference.end());
  f.final = f.raw;
  bool any = false;
  for (std::size_t i = 0; i < pos.size(); ++i) {
    if (pos[i] < cutoff) f.final[i] = kNegInf;
    else any = true;
  }
  if (!any) throw Error("empty support after truncation");
  return f;
}

// Smallest prefix of the descending-probability order whose mass reaches
// top_p, renormalised; all other entries are zero.
inline std::vector<float> nucleus_filter(std::span<const float> probs, float top_p) {
  detail::require(top_p > 0.0f && top_p <= 1.0f, "top_p must be in (0,1]");
  const auto order = top_k_indices(probs, probs.size());
  std::vector<float> out(probs.size(), 0.0f);
  double cumulative = 0.0;
  std::size_t kept = 0;
  for (std::size_t idx : order) {
    if (probs[idx] <= 0.0f) break;
    cumulative += probs[idx];
    ++kept;
    if (cumulative >= double(top_p) - 1e-7) break;
  }
  for (std::size_t i = 0; i < kept; ++i) out[order[i]] = float(probs[order[i]] / cumulative);
  return out;
}

enum class BranchLabel { pos, neg };

struct BranchState {
  BranchLabel label = BranchLabel::pos;
  KvCache cache;
  std::optional<SteeringDirective> directive;
};

// Both branches always consume the same committed token.
struct BranchPair {
  BranchState pos;
  std::optional<BranchState> neg;
};

struct StepTrace {
  std::size_t step = 0;
  std::vector<float> pos;    // positive-branch log-probabilities
  std::vector<float> neg;    // empty for method=original
  std::vector<float> raw;
  std::vector<float> final;  // masked fused scores
  TokenId chosen = 0;
  CriticalTokenSet critical;
  std::vector<AttentionRecord> attention;  // positive branch, if requested
};

struct GenerateResult {
  std::vector<TokenId> tokens;
  std::vector<StepTrace> traces;
};

namespace detail {

inline StepOutput run_branch(const Weights& w, BranchState& b, TokenId token, bool record) {
  return decode_step(w, b.cache, token, b.directive ? &*b.directive : nullptr, record);
}

}  // namespace detail

// Prefills the branches for `method` on everything but the last prompt token;
// that token is fed by the first step so the first generated token's logits
// already come from a (possibly steered) decoding step.
inline BranchPair open_branches(const Weights& w, const MultimodalSequence& prompt,
                                const DecodeConfig& cfg) {
  detail::require(!prompt.text_ids.empty(), "generate: prompt needs at least one text token");
  MultimodalSequence body = prompt;
  body.text_ids.pop_back();
  PrefillOptions quiet;
  quiet.record_attention = false;
  BranchPair pair;
  pair.pos.cache = prefill(w, body, quiet).cache;
  switch (cfg.method) {
    case Method::original:
      break;
    case Method::ascd: {
      const auto& c = w.config;
      cfg.steering.validate(c.n_layers, c.n_heads);
      pair.pos.directive = positive_directive(cfg.steering);
      pair.neg = BranchState{BranchLabel::neg, pair.pos.cache, negative_directive(cfg.steering)};
      break;
    }
    case Method::vcd: {
      MultimodalSequence noisy = body;
      Rng rng(cfg.vcd_seed);
      if (cfg.vcd_sigma > 0.0f)
        for (float& v : noisy.visual_features.data) v += float(rng.normal() * cfg.vcd_sigma);
      pair.neg = BranchState{BranchLabel::neg, prefill(w, noisy, quiet).cache, std::nullopt};
      break;
    }
    case Method::icd: {
      MultimodalSequence prefixed = body;
      prefixed.text_ids.insert(prefixed.text_ids.begin(), cfg.icd_prefix.begin(), cfg.icd_prefix.end());
      pair.neg = BranchState{BranchLabel::neg, prefill(w, prefixed, quiet).cache, std::nullopt};
      break;
    }
  }
  return pair;
}

// One fused step for any method. `token` is the token committed to both
// branches.
inline StepTrace contrast_step(const Weights& w, BranchPair& branches, TokenId token,
                               const DecodeConfig& cfg) {
  StepTrace trace;
  auto pos_out = detail::run_branch(w, branches.pos, token, cfg.record_attention);
  trace.pos = log_softmax_row(pos_out.logits);
  if (cfg.record_attention) trace.attention = std::move(pos_out.records);
  if (!branches.neg) {
    trace.raw = trace.pos;
    trace.final = trace.pos;
    return trace;
  }
  auto neg_out = detail::run_branch(w, *branches.neg, token, false);
  trace.neg = log_softmax_row(neg_out.logits);
  trace.critical = std::move(neg_out.critical);
  auto fused = contrast_fuse(trace.pos, trace.neg, cfg.fusion_alpha(), cfg.fusion_beta(), cfg.fusion_cutoff());
  trace.raw = std::move(fused.raw);
  trace.final = std::move(fused.final);
  return trace;
}

// Steered positive/negative passes followed by fusion and truncation.
inline StepTrace ascd_step(const Weights& w, BranchPair& branches, TokenId token,
                           const SteeringSpec& spec, CutoffMode cutoff = CutoffMode::fused_max) {
  detail::require(branches.neg.has_value(), "ascd_step: missing negative branch");
  detail::require(branches.pos.cache.length == branches.neg->cache.length,
                  "ascd_step: branch caches are not aligned");
  DecodeConfig cfg;
  cfg.method = Method::ascd;
  cfg.steering = spec;
  cfg.cutoff = cutoff;
  branches.pos.directive = positive_directive(spec);
  branches.neg->directive = negative_directive(spec);
  return contrast_step(w, branches, token, cfg);
}

// VCD- or ICD-style step on branches opened by open_branches.
inline StepTrace baseline_step(const Weights& w, BranchPair& branches, TokenId token,
                               const DecodeConfig& cfg) {
  detail::require(cfg.method == Method::vcd || cfg.method == Method::icd,
                  "baseline_step: method must be vcd or icd");
  detail::require(branches.neg.has_value(), "baseline_step: missing negative branch");
  return contrast_step(w, branches, token, cfg);
}

namespace detail {

inline bool is_stop(const DecodeConfig& cfg, TokenId t) {
  return std::find(cfg.stop_tokens.begin(), cfg.stop_tokens.end(), t) != cfg.stop_tokens.end();
}

inline void check_prompt(const Weights& w, const MultimodalSequence& prompt, const DecodeConfig& cfg) {
  cfg.validate();
  std::size_t needed = prompt.size() + cfg.max_new_tokens;
  if (cfg.method == Method::icd) needed += cfg.icd_prefix.size();
  require(needed <= w.config.max_seq + 1,
          "generate: prompt of length " + std::to_string(prompt.size()) + " plus " +
              std::to_string(cfg.max_new_tokens) + " new tokens exceeds max_seq");
}

inline GenerateResult generate_sequential(const Weights& w, const MultimodalSequence& prompt,
                                          const DecodeConfig& cfg) {
  GenerateResult result;
  BranchPair branches = open_branches(w, prompt, cfg);
  Rng rng(cfg.sample_seed);
  TokenId pending = prompt.text_ids.back();
  for (std::size_t step = 0; step < cfg.max_new_tokens; ++step) {
    StepTrace trace = contrast_step(w, branches, pending, cfg);
    trace.step = step;
    TokenId chosen;
    if (cfg.strategy == Strategy::greedy) {
      chosen = TokenId(argmax(trace.final));
    } else {
      std::vector<float> scaled(trace.final);
      for (float& v : scaled)
        if (v != kNegInf) v /= cfg.temperature;
      const auto probs = nucleus_filter(softmax_row(scaled), cfg.top_p);
      chosen = TokenId(sample_categorical(probs, rng));
    }
    trace.chosen = chosen;
    result.tokens.push_back(chosen);
    result.traces.push_back(std::move(trace));
    if (is_stop(cfg, chosen)) break;
    pending = chosen;
  }
  return result;
}

struct Beam {
  BranchPair branches;
  TokenId pending = 0;
  std::vector<TokenId> tokens;
  std::vector<StepTrace> traces;
  double score = 0.0;  // summed log-probabilities of the fused distribution
};

inline GenerateResult generate_beam(const Weights& w, const MultimodalSequence& prompt,
                                    const DecodeConfig& cfg) {
  const std::size_t width = cfg.beam_width;
  std::vector<Beam> alive(1);
  alive[0].branches = open_branches(w, prompt, cfg);
  alive[0].pending = prompt.text_ids.back();
  std::vector<std::pair<double, Beam>> finished;  // (length-normalised score, beam)

  for (std::size_t step = 0; step < cfg.max_new_tokens && !alive.empty(); ++step) {
    struct Candidate {
      double score;
      std::size_t beam;
      TokenId token;
    };
    std::vector<Candidate> candidates;
    std::vector<StepTrace> step_traces(alive.size());
    for (std::size_t b = 0; b < alive.size(); ++b) {
      step_traces[b] = contrast_step(w, alive[b].branches, alive[b].pending, cfg);
      step_traces[b].step = step;
      const auto lp = log_softmax_row(step_traces[b].final);
      const std::size_t finite =
          std::size_t(std::count_if(lp.begin(), lp.end(), [](float v) { return v != kNegInf; }));
      for (std::size_t t : top_k_indices(lp, std::min(width, finite))) {
        candidates.push_back({alive[b].score + lp[t], b, TokenId(t)});
      }
    }
    std::stable_sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
      if (a.score != b.score) return a.score > b.score;
      if (a.beam != b.beam) return a.beam < b.beam;
      return a.token < b.token;
    });
    std::vector<Beam> next;
    for (const auto& cand : candidates) {
      if (next.size() + finished.size() >= width) break;
      Beam child;
      child.branches = alive[cand.beam].branches;
      child.tokens = alive[cand.beam].tokens;
      child.traces = alive[cand.beam].traces;
      child.score = cand.score;
      child.tokens.push_back(cand.token);
      StepTrace t = step_traces[cand.beam];
      t.chosen = cand.token;
      child.traces.push_back(std::move(t));
      child.pending = cand.token;
      if (is_stop(cfg, cand.token)) {
        const double norm = child.score / double(child.tokens.size());
        finished.emplace_back(norm, std::move(child));
      } else {
        next.push_back(std::move(child));
      }
    }
    alive = std::move(next);
    if (finished.size() >= width) break;
  }
  for (auto& b : alive) {
    const double norm = b.score / double(b.tokens.size());
    finished.emplace_back(norm, std::move(b));
  }
  require(!finished.empty(), "beam search produced no hypotheses");
  std::size_t best = 0;
  for (std::size_t i = 1; i < finished.size(); ++i)
    if (finished[i].first > finished[best].first) best = i;
  return {std::move(finished[best].second.tokens), std::move(finished[best].second.traces)};
}

}  // namespace detail

// Autoregressive generation under the configured method and strategy.
inline GenerateResult generate(const Weights& w, const MultimodalSequence& prompt,
                               const DecodeConfig& cfg) {
  detail::check_prompt(w, prompt, cfg);
  if (cfg.strategy == Strategy::beam) return detail::generate_beam(w, prompt, cfg);
  return detail::generate_sequential(w, prompt, cfg);
}

// Sum over tokens of |pos - neg| for one step (finite entries only).
inline double branch_divergence(const StepTrace& trace) {
  double total = 0.0;
  for (std::size_t i = 0; i < trace.neg.size(); ++i) {
    if (std::isfinite(trace.pos[i]) && std::isfinite(trace.neg[i]))
      total += std::abs(double(trace.pos[i]) - trace.neg[i]);
  }
  return total;
}

}  // namespace ascd
