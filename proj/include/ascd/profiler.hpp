#pragma once

// Offline text-centric head voting, head-distribution divergence, and the
// visual/text attention-mass redistribution report.

#include <cmath>
#include <cstdint>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ascd/decoder.hpp"
#include "ascd/error.hpp"
#include "ascd/model.hpp"
#include "ascd/steering.hpp"

namespace ascd {

inline constexpr std::size_t kDefaultVoteK = 32;

// Per-head text/visual mass ratio. A head that put no mass on visual keys gets
// +infinity, which top-k ranks above every finite ratio.
struct RatioMatrix {
  std::size_t n_layers = 0;
  std::size_t n_heads = 0;
  std::vector<float> values;  // layer-major

  float at(std::size_t layer, std::size_t head) const { return values.at(layer * n_heads + head); }
};

inline RatioMatrix attention_ratio(std::span<const AttentionRecord> records,
                                   std::span<const Modality> mask, std::size_t n_layers,
                                   std::size_t n_heads) {
  const std::size_t cells = n_layers * n_heads;
  std::vector<double> text(cells, 0.0), vis(cells, 0.0);
  std::vector<bool> seen(cells, false);
  for (const auto& r : records) {
    detail::require(r.layer < n_layers && r.head < n_heads, "attention_ratio: record outside model");
    detail::require(r.post_norm_weights.size() <= mask.size(),
                    "attention_ratio: modality mask shorter than attention row");
    const std::size_t cell = r.layer * n_heads + r.head;
    seen[cell] = true;
    for (std::size_t j = 0; j < r.post_norm_weights.size(); ++j)
      (mask[j] == Modality::visual ? vis : text)[cell] += r.post_norm_weights[j];
  }
  RatioMatrix out{n_layers, n_heads, std::vector<float>(cells)};
  for (std::size_t cell = 0; cell < cells; ++cell) {
    detail::require(seen[cell], "attention_ratio: no records for head (" +
                                    std::to_string(cell / n_heads) + "," +
                                    std::to_string(cell % n_heads) + ")");
    out.values[cell] = vis[cell] > 0.0 ? float(text[cell] / vis[cell])
                                       : std::numeric_limits<float>::infinity();
  }
  return out;
}

struct HeadFrequencyMap {
  std::size_t n_layers = 0;
  std::size_t n_heads = 0;
  std::size_t vote_k = 0;
  std::size_t n_samples = 0;
  std::vector<std::uint64_t> counts;  // layer-major

  static HeadFrequencyMap empty(std::size_t n_layers, std::size_t n_heads, std::size_t vote_k) {
    detail::require(n_layers > 0 && n_heads > 0, "HeadFrequencyMap: empty shape");
    detail::require(vote_k >= 1 && vote_k <= n_layers * n_heads,
                    "vote_k must be in [1, L*H]; got " + std::to_string(vote_k));
    return {n_layers, n_heads, vote_k, 0, std::vector<std::uint64_t>(n_layers * n_heads, 0)};
  }

  std::uint64_t at(std::size_t layer, std::size_t head) const { return counts.at(layer * n_heads + head); }
  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (auto c : counts) t += c;
    return t;
  }

  std::vector<double> distribution() const {
    const double t = double(total());
    detail::require(t > 0, "HeadFrequencyMap: no votes to normalise");
    std::vector<double> p(counts.size());
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = double(counts[i]) / t;
    return p;
  }

  friend bool operator==(const HeadFrequencyMap&, const HeadFrequencyMap&) = default;
};

inline std::size_t clamp_vote_k(std::size_t vote_k, std::size_t n_layers, std::size_t n_heads) {
  return std::max<std::size_t>(1, std::min(vote_k, n_layers * n_heads));
}

// One sample's votes: +1 at the vote_k highest ratios (ties by flat index).
inline void accumulate_votes(HeadFrequencyMap& freq, const RatioMatrix& ratio, std::size_t vote_k) {
  detail::require(ratio.n_layers == freq.n_layers && ratio.n_heads == freq.n_heads &&
                      ratio.values.size() == freq.counts.size(),
                  "accumulate_votes: shape mismatch");
  detail::require(vote_k == freq.vote_k, "accumulate_votes: vote_k differs from the map's");
  for (std::size_t cell : top_k_indices(ratio.values, vote_k)) ++freq.counts[cell];
  ++freq.n_samples;
  detail::require(freq.total() == freq.n_samples * freq.vote_k, "accumulate_votes: vote total drifted");
}

inline HeadFrequencyMap merge(const HeadFrequencyMap& a, const HeadFrequencyMap& b) {
  detail::require(a.n_layers == b.n_layers && a.n_heads == b.n_heads && a.vote_k == b.vote_k,
                  "merge: incompatible frequency maps");
  HeadFrequencyMap out = a;
  for (std::size_t i = 0; i < out.counts.size(); ++i) out.counts[i] += b.counts[i];
  out.n_samples += b.n_samples;
  return out;
}

// kappa_tch most-voted heads, ties by (layer, head). kappa_tch = 0 is valid
// and disables positive steering.
inline HeadSet select_text_centric(const HeadFrequencyMap& freq, std::size_t kappa_tch) {
  detail::require(kappa_tch <= freq.counts.size(),
                  "kappa_tch " + std::to_string(kappa_tch) + " exceeds L*H = " +
                      std::to_string(freq.counts.size()));
  if (kappa_tch == 0) return {};
  std::vector<float> scores(freq.counts.begin(), freq.counts.end());
  std::vector<HeadId> heads;
  for (std::size_t cell : top_k_indices(scores, kappa_tch))
    heads.push_back({cell / freq.n_heads, cell % freq.n_heads});
  return HeadSet::checked(std::move(heads), freq.n_layers, freq.n_heads);
}

// Jensen-Shannon divergence in nats.
inline double js_divergence(std::span<const double> p, std::span<const double> q) {
  detail::require(p.size() == q.size() && !p.empty(), "js_divergence: size mismatch");
  double sp = 0.0, sq = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    detail::require(p[i] >= 0.0 && q[i] >= 0.0, "js_divergence: negative entry");
    sp += p[i];
    sq += q[i];
  }
  detail::require(std::abs(sp - 1.0) <= kNormTolerance && std::abs(sq - 1.0) <= kNormTolerance,
                  "js_divergence: inputs must sum to 1");
  double js = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double m = 0.5 * (p[i] + q[i]);
    if (p[i] > 0.0) js += 0.5 * p[i] * std::log(p[i] / m);
    if (q[i] > 0.0) js += 0.5 * q[i] * std::log(q[i] / m);
  }
  return std::max(0.0, js);
}

inline double js_divergence(const HeadFrequencyMap& a, const HeadFrequencyMap& b) {
  const auto p = a.distribution(), q = b.distribution();
  return js_divergence(p, q);
}

struct ProfileConfig {
  std::size_t vote_k = kDefaultVoteK;  // clamped to L*H
  std::size_t kappa_tch = 32;          // clamped to L*H
  std::size_t max_new_tokens = 4;
  std::vector<TokenId> stop_tokens;
};

struct ProfileResult {
  HeadFrequencyMap freq;
  HeadSet selected;
};

// Ratio for one reference sample: unsteered greedy generation, masses summed
// over every query position that produced a generated token.
inline RatioMatrix sample_ratio(const Weights& w, const MultimodalSequence& prompt,
                                const ProfileConfig& cfg) {
  DecodeConfig dc;
  dc.max_new_tokens = cfg.max_new_tokens;
  dc.stop_tokens = cfg.stop_tokens;
  dc.record_attention = true;
  const auto run = generate(w, prompt, dc);
  std::vector<AttentionRecord> records;
  for (const auto& t : run.traces) records.insert(records.end(), t.attention.begin(), t.attention.end());
  const auto mask = modality_mask(w.config.n_visual, prompt.size() + run.tokens.size());
  return attention_ratio(records, mask, w.config.n_layers, w.config.n_heads);
}

inline ProfileResult profile_heads(const Weights& w, std::span<const MultimodalSequence> reference,
                                   const ProfileConfig& cfg) {
  detail::require(!reference.empty(), "profile: empty reference set");
  const auto& c = w.config;
  const std::size_t vote_k = clamp_vote_k(cfg.vote_k, c.n_layers, c.n_heads);
  auto freq = HeadFrequencyMap::empty(c.n_layers, c.n_heads, vote_k);
  for (const auto& prompt : reference) accumulate_votes(freq, sample_ratio(w, prompt, cfg), vote_k);
  const std::size_t kappa = std::min(cfg.kappa_tch, c.n_layers * c.n_heads);
  return {freq, select_text_centric(freq, kappa)};
}

// Input transforms whose effect on attention is being measured.
struct BranchTransform {
  enum class Kind { none, feature_noise, negative_prefix };
  Kind kind = Kind::none;
  float sigma = 0.0f;
  std::uint64_t seed = 0;
  std::vector<TokenId> prefix;

  static BranchTransform none() { return {}; }
  static BranchTransform noise(float sigma, std::uint64_t seed) { return {Kind::feature_noise, sigma, seed, {}}; }
  static BranchTransform negative_prefix(std::vector<TokenId> ids) {
    return {Kind::negative_prefix, 0.0f, 0, std::move(ids)};
  }

  std::string label() const {
    std::ostringstream s;
    switch (kind) {
      case Kind::none: return "none";
      case Kind::feature_noise: s << "feature-noise(sigma=" << sigma << ")"; return s.str();
      case Kind::negative_prefix: s << "negative-prefix(len=" << prefix.size() << ")"; return s.str();
    }
    throw InvalidArgument("unknown branch transform");
  }

  MultimodalSequence apply(const MultimodalSequence& seq, std::size_t sample) const {
    MultimodalSequence out = seq;
    switch (kind) {
      case Kind::none:
        break;
      case Kind::feature_noise: {
        detail::require(sigma >= 0.0f, "feature-noise sigma must be >= 0");
        Rng rng = Rng(seed).child(sample);
        for (float& v : out.visual_features.data) v += float(rng.normal() * sigma);
        break;
      }
      case Kind::negative_prefix:
        detail::require(!prefix.empty(), "negative prefix must not be empty");
        out.text_ids.insert(out.text_ids.begin(), prefix.begin(), prefix.end());
        break;
      default:
        throw InvalidArgument("unknown branch transform");
    }
    return out;
  }
};

struct RedistributionRow {
  std::string transform;
  double vis_mass = 0.0;
  double text_mass = 0.0;
};

// Mean visual/text attention mass over generated positions, heads and samples
// for each transform.
inline std::vector<RedistributionRow> redistribution_report(const Weights& w,
                                                            std::span<const MultimodalSequence> dataset,
                                                            std::span<const BranchTransform> transforms,
                                                            std::size_t max_new_tokens = 4) {
  detail::require(!dataset.empty(), "redistribution_report: empty dataset");
  std::vector<RedistributionRow> rows;
  for (const auto& tf : transforms) {
    double vis = 0.0, text = 0.0;
    std::size_t n = 0;
    for (std::size_t s = 0; s < dataset.size(); ++s) {
      const auto seq = tf.apply(dataset[s], s);
      DecodeConfig dc;
      dc.max_new_tokens = max_new_tokens;
      dc.record_attention = true;
      const auto run = generate(w, seq, dc);
      const auto mask = modality_mask(w.config.n_visual, seq.size() + run.tokens.size());
      for (const auto& t : run.traces) {
        const auto m = attention_mass(t.attention, mask);
        vis += m.vis_mass;
        text += m.text_mass;
        ++n;
      }
    }
    rows.push_back({tf.label(), vis / double(n), text / double(n)});
  }
  return rows;
}

inline nlohmann::json profile_to_json(const HeadFrequencyMap& freq, const HeadSet& selected) {
  nlohmann::json counts = nlohmann::json::array();
  for (std::size_t l = 0; l < freq.n_layers; ++l) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t h = 0; h < freq.n_heads; ++h) row.push_back(freq.at(l, h));
    counts.push_back(row);
  }
  nlohmann::json heads = nlohmann::json::array();
  for (const auto& id : selected) heads.push_back({id.layer, id.head});
  return {{"config",
           {{"L", freq.n_layers}, {"H", freq.n_heads}, {"vote_k", freq.vote_k}, {"n_samples", freq.n_samples}}},
          {"counts", counts},
          {"selected", heads}};
}

inline ProfileResult profile_from_json(const nlohmann::json& j) {
  try {
    const auto& cfg = j.at("config");
    ProfileResult r;
    r.freq.n_layers = cfg.at("L").get<std::size_t>();
    r.freq.n_heads = cfg.at("H").get<std::size_t>();
    r.freq.vote_k = cfg.at("vote_k").get<std::size_t>();
    r.freq.n_samples = cfg.at("n_samples").get<std::size_t>();
    const auto& counts = j.at("counts");
    detail::require(counts.size() == r.freq.n_layers, "profile: counts has wrong number of layers");
    for (const auto& row : counts) {
      detail::require(row.size() == r.freq.n_heads, "profile: counts row has wrong number of heads");
      for (const auto& v : row) r.freq.counts.push_back(v.get<std::uint64_t>());
    }
    std::vector<HeadId> heads;
    for (const auto& pair : j.at("selected"))
      heads.push_back({pair.at(0).get<std::size_t>(), pair.at(1).get<std::size_t>()});
    r.selected = HeadSet::checked(std::move(heads), r.freq.n_layers, r.freq.n_heads);
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("malformed profile: ") + e.what());
  }
}

inline std::string heatmap_csv(const HeadFrequencyMap& freq) {
  std::ostringstream out;
  out << "layer,head,count,frequency\n";
  const double total = double(freq.total());
  for (std::size_t l = 0; l < freq.n_layers; ++l)
    for (std::size_t h = 0; h < freq.n_heads; ++h) {
      const auto c = freq.at(l, h);
      out << l << ',' << h << ',' << c << ',' << (total > 0 ? double(c) / total : 0.0) << '\n';
    }
  return out.str();
}

}  // namespace ascd
