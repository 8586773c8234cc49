#pragma once

// CHAIR and POPE scoring over evaluation records.

#include <algorithm>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ascd/error.hpp"
#include "ascd/synth/world.hpp"

namespace ascd::synth {

enum class Task { probe, caption };

struct EvalRecord {
  std::size_t scene = 0;
  std::string method;
  std::string strategy;
  Task task = Task::probe;
  std::vector<TokenId> generated;
  std::string text;
  // Captions: distinct mentioned classes in order of first mention.
  std::vector<std::size_t> mentioned;
  std::vector<std::size_t> hallucinated;
  // Probes only.
  ProbeKind kind = ProbeKind::random;
  std::size_t probe_class = 0;
  bool expected_yes = false;
  bool answered_yes = false;
  bool correct = false;
  bool planted = false;
  // Sum over steps of |pos - neg| log-probabilities (0 for single-branch runs).
  double divergence = 0.0;
};

// Only the reserved YES id counts as "yes"; anything else is "no".
inline bool parse_answer(std::span<const TokenId> generated) {
  return !generated.empty() && generated.front() == kYes;
}

inline std::vector<std::size_t> extract_mentions(const Ontology& ontology, std::span<const TokenId> generated) {
  std::vector<std::size_t> out;
  for (TokenId t : generated)
    if (auto c = ontology.class_of(t); c && std::find(out.begin(), out.end(), *c) == out.end()) out.push_back(*c);
  return out;
}

inline std::vector<std::size_t> hallucinations(const SceneGraph& scene, std::span<const std::size_t> mentioned) {
  std::vector<std::size_t> out;
  for (std::size_t c : mentioned)
    if (!scene.contains(c)) out.push_back(c);
  return out;
}

struct ChairScores {
  double chair_s = 0.0;
  std::optional<double> chair_i;  // undefined without any mention
  std::size_t captions = 0;
  std::size_t mentions = 0;
  std::size_t hallucinated = 0;
};

inline ChairScores chair_scores(std::span<const EvalRecord> records) {
  ChairScores out;
  std::size_t bad_captions = 0;
  for (const auto& r : records) {
    if (r.task != Task::caption) continue;
    ++out.captions;
    out.mentions += r.mentioned.size();
    out.hallucinated += r.hallucinated.size();
    bad_captions += r.hallucinated.empty() ? 0 : 1;
  }
  detail::require(out.captions > 0, "chair_scores: no caption records");
  out.chair_s = double(bad_captions) / double(out.captions);
  if (out.mentions > 0) out.chair_i = double(out.hallucinated) / double(out.mentions);
  return out;
}

struct BinaryScores {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  double accuracy = 0.0, precision = 0.0, recall = 0.0, f1 = 0.0;

  std::size_t total() const { return tp + fp + tn + fn; }
};

// Precision, recall and F1 are 0 when their denominators vanish.
inline BinaryScores binary_scores(std::size_t tp, std::size_t fp, std::size_t tn, std::size_t fn) {
  BinaryScores s{tp, fp, tn, fn};
  const double n = double(s.total());
  s.accuracy = n > 0 ? double(tp + tn) / n : 0.0;
  s.precision = tp + fp > 0 ? double(tp) / double(tp + fp) : 0.0;
  s.recall = tp + fn > 0 ? double(tp) / double(tp + fn) : 0.0;
  s.f1 = s.precision + s.recall > 0 ? 2 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
  return s;
}

struct PopeScores {
  std::map<ProbeKind, BinaryScores> per_kind;
  // Unweighted mean over the kinds present.
  double accuracy = 0.0, precision = 0.0, recall = 0.0, f1 = 0.0;
  std::size_t planted = 0;
  std::size_t planted_correct = 0;
};

inline PopeScores pope_scores(std::span<const EvalRecord> records) {
  std::map<ProbeKind, std::array<std::size_t, 4>> tallies;  // tp fp tn fn
  PopeScores out;
  for (const auto& r : records) {
    if (r.task != Task::probe) continue;
    auto& t = tallies[r.kind];
    if (r.answered_yes) ++t[r.expected_yes ? 0 : 1];
    else ++t[r.expected_yes ? 3 : 2];
    if (r.planted) {
      ++out.planted;
      out.planted_correct += r.answered_yes == r.expected_yes ? 1 : 0;
    }
  }
  detail::require(!tallies.empty(), "pope_scores: no probe records");
  for (const auto& [kind, t] : tallies) {
    const auto s = binary_scores(t[0], t[1], t[2], t[3]);
    out.per_kind[kind] = s;
    out.accuracy += s.accuracy;
    out.precision += s.precision;
    out.recall += s.recall;
    out.f1 += s.f1;
  }
  const double k = double(tallies.size());
  out.accuracy /= k;
  out.precision /= k;
  out.recall /= k;
  out.f1 /= k;
  return out;
}

}  // namespace ascd::synth
