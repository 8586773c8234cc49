#pragma once

// Benchmark runner over a synthetic world: methods x strategies over the
// probe kinds and the caption task, plus one-knob-at-a-time sweeps.

#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ascd/decoder.hpp"
#include "ascd/profiler.hpp"
#include "ascd/synth/metrics.hpp"
#include "ascd/synth/world.hpp"

namespace ascd {

inline std::string to_string(Method m) {
  switch (m) {
    case Method::original: return "original";
    case Method::ascd: return "ascd";
    case Method::vcd: return "vcd";
    case Method::icd: return "icd";
  }
  return "?";
}

inline std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::greedy: return "greedy";
    case Strategy::nucleus: return "nucleus";
    case Strategy::beam: return "beam";
  }
  return "?";
}

inline Method parse_method(const std::string& s) {
  if (s == "original") return Method::original;
  if (s == "ascd") return Method::ascd;
  if (s == "vcd") return Method::vcd;
  if (s == "icd") return Method::icd;
  throw InvalidArgument("unknown method '" + s + "' (expected original|ascd|vcd|icd)");
}

inline Strategy parse_strategy(const std::string& s) {
  if (s == "greedy") return Strategy::greedy;
  if (s == "nucleus") return Strategy::nucleus;
  if (s == "beam") return Strategy::beam;
  throw InvalidArgument("unknown strategy '" + s + "' (expected greedy|nucleus|beam)");
}

enum class Ablation { none, random_heads, all_heads, random_critical };

inline std::string to_string(Ablation a) {
  switch (a) {
    case Ablation::none: return "none";
    case Ablation::random_heads: return "random-heads";
    case Ablation::all_heads: return "all-heads";
    case Ablation::random_critical: return "random-critical";
  }
  return "?";
}

inline Ablation parse_ablation(const std::string& s) {
  for (Ablation a : {Ablation::none, Ablation::random_heads, Ablation::all_heads, Ablation::random_critical})
    if (to_string(a) == s) return a;
  throw InvalidArgument("unknown ablation '" + s + "'");
}

struct EvalSpec {
  std::vector<Method> methods{Method::original, Method::ascd};
  std::vector<Strategy> strategies{Strategy::greedy};
  // Knobs for every method. decode.steering.heads_pos is overwritten from the
  // profile (or the ablation) for ascd.
  DecodeConfig decode;
  std::size_t kappa_tch = 32;
  std::optional<HeadFrequencyMap> profile;
  Ablation ablation = Ablation::none;
  std::uint64_t ablation_seed = 0;
  std::size_t caption_tokens = 6;
  bool run_probes = true;
  bool run_captions = true;
  std::uint64_t seed = 0;
};

// Steered head set for ascd, honouring the ablation mode. Random controls
// draw a seeded set of the same size as the profiled one.
inline HeadSet resolve_heads(const EvalSpec& spec, std::size_t n_layers, std::size_t n_heads) {
  const std::size_t kappa = std::min(spec.kappa_tch, n_layers * n_heads);
  switch (spec.ablation) {
    case Ablation::all_heads:
      return HeadSet::all(n_layers, n_heads);
    case Ablation::random_heads: {
      std::vector<std::size_t> cells(n_layers * n_heads);
      for (std::size_t i = 0; i < cells.size(); ++i) cells[i] = i;
      Rng rng = Rng(spec.ablation_seed).child(0x4ead5);
      for (std::size_t i = cells.size(); i > 1; --i) std::swap(cells[i - 1], cells[rng.uniform_index(i)]);
      std::vector<HeadId> heads;
      for (std::size_t i = 0; i < kappa; ++i) heads.push_back({cells[i] / n_heads, cells[i] % n_heads});
      return HeadSet::checked(std::move(heads), n_layers, n_heads);
    }
    case Ablation::none:
    case Ablation::random_critical:
      break;
  }
  if (!spec.profile) throw InvalidArgument("ascd needs a head profile artifact (run `profile` first)");
  detail::require(spec.profile->n_layers == n_layers && spec.profile->n_heads == n_heads,
                  "head profile does not match the model shape");
  return select_text_centric(*spec.profile, kappa);
}

struct ResultRow {
  std::string method;
  std::string strategy;
  std::string kind;  // random | popular | adversarial | caption
  std::vector<std::pair<std::string, std::optional<double>>> metrics;

  std::optional<double> get(const std::string& name) const {
    for (const auto& [n, v] : metrics)
      if (n == name) return v;
    throw InvalidArgument("no metric " + name);
  }
};

struct EvalResult {
  std::vector<synth::EvalRecord> records;
  std::vector<ResultRow> rows;
};

inline double round1(double percent) { return std::round(percent * 10.0) / 10.0; }

// Table rows for one (method, strategy) cell from its records.
inline std::vector<ResultRow> score_records(const std::string& method, const std::string& strategy,
                                            std::span<const synth::EvalRecord> records) {
  std::vector<ResultRow> rows;
  std::vector<synth::EvalRecord> probes, captions;
  for (const auto& r : records) {
    if (r.method != method || r.strategy != strategy) continue;
    (r.task == synth::Task::probe ? probes : captions).push_back(r);
  }
  auto mean_div = [](const std::vector<synth::EvalRecord>& rs, auto pred) {
    double s = 0.0;
    std::size_t n = 0;
    for (const auto& r : rs)
      if (pred(r)) {
        s += r.divergence;
        ++n;
      }
    return n ? s / double(n) : 0.0;
  };
  if (!probes.empty()) {
    const auto pope = synth::pope_scores(probes);
    for (const auto& [kind, s] : pope.per_kind) {
      std::size_t planted = 0, planted_ok = 0;
      for (const auto& r : probes)
        if (r.kind == kind && r.planted) {
          ++planted;
          planted_ok += r.correct ? 1 : 0;
        }
      ResultRow row{method, strategy, synth::to_string(kind), {}};
      row.metrics = {{"accuracy", s.accuracy},
                     {"precision", s.precision},
                     {"recall", s.recall},
                     {"f1", s.f1},
                     {"planted_accuracy",
                      planted ? std::optional<double>(double(planted_ok) / double(planted)) : std::nullopt},
                     {"divergence", mean_div(probes, [&](const auto& r) { return r.kind == kind; })}};
      rows.push_back(std::move(row));
    }
  }
  if (!captions.empty()) {
    const auto chair = synth::chair_scores(captions);
    ResultRow row{method, strategy, "caption", {}};
    row.metrics = {{"chair_s", round1(chair.chair_s * 100.0)},
                   {"chair_i", chair.chair_i ? std::optional<double>(round1(*chair.chair_i * 100.0)) : std::nullopt},
                   {"mentions", double(chair.mentions)},
                   {"divergence", mean_div(captions, [](const auto&) { return true; })}};
    rows.push_back(std::move(row));
  }
  return rows;
}

// POPE means per (method, strategy), for summaries and comparisons.
inline synth::PopeScores pope_for(std::span<const synth::EvalRecord> records, const std::string& method,
                                  const std::string& strategy) {
  std::vector<synth::EvalRecord> sel;
  for (const auto& r : records)
    if (r.method == method && r.strategy == strategy && r.task == synth::Task::probe) sel.push_back(r);
  return synth::pope_scores(sel);
}

namespace detail {

inline double trace_divergence(const GenerateResult& g) {
  double d = 0.0;
  for (const auto& t : g.traces) d += branch_divergence(t);
  return d;
}

}  // namespace detail

inline EvalResult run_eval(const Weights& w, const synth::World& world, const EvalSpec& spec) {
  detail::require(!spec.methods.empty() && !spec.strategies.empty(), "eval: empty method or strategy list");
  detail::require(spec.run_probes || spec.run_captions, "eval: nothing to run");
  detail::require(world.spec.n_visual == w.config.n_visual && world.spec.d_model == w.config.d_model,
                  "eval: world features do not match the model");
  detail::require(world.ontology.vocab_size() <= w.config.vocab_size, "eval: ontology exceeds model vocabulary");
  const auto probes = synth::build_probes(world, spec.seed);
  EvalResult result;
  for (Method method : spec.methods) {
    DecodeConfig base = spec.decode;
    base.method = method;
    if (method == Method::ascd) {
      base.steering.heads_pos = resolve_heads(spec, w.config.n_layers, w.config.n_heads);
      if (spec.ablation == Ablation::random_critical) {
        base.steering.crit_rule = CriticalRule::random;
        base.steering.crit_seed = spec.ablation_seed;
      }
    }
    for (Strategy strategy : spec.strategies) {
      base.strategy = strategy;
      const std::string m = to_string(method), s = to_string(strategy);
      if (spec.run_probes) {
        for (std::size_t i = 0; i < probes.size(); ++i) {
          const auto& p = probes[i];
          DecodeConfig dc = base;
          dc.max_new_tokens = 1;
          dc.sample_seed = Rng::mix(spec.seed, 0x9be, i);
          dc.vcd_seed = Rng::mix(spec.seed, 0x7cd, p.scene);
          const auto g = generate(w, synth::make_sequence(world, p.scene, p.question), dc);
          synth::EvalRecord r;
          r.scene = p.scene;
          r.method = m;
          r.strategy = s;
          r.task = synth::Task::probe;
          r.generated = g.tokens;
          r.text = world.ontology.decode(g.tokens);
          r.kind = p.kind;
          r.probe_class = p.class_id;
          r.expected_yes = p.expected_yes;
          r.answered_yes = synth::parse_answer(g.tokens);
          r.correct = r.answered_yes == r.expected_yes;
          r.planted = p.planted;
          r.divergence = detail::trace_divergence(g);
          result.records.push_back(std::move(r));
        }
      }
      if (spec.run_captions) {
        for (const auto& scene : world.scenes) {
          DecodeConfig dc = base;
          dc.max_new_tokens = spec.caption_tokens;
          dc.stop_tokens = {synth::kEos};
          dc.sample_seed = Rng::mix(spec.seed, 0xca9, scene.id);
          dc.vcd_seed = Rng::mix(spec.seed, 0x7cd, scene.id);
          const auto g = generate(w, synth::make_sequence(world, scene.id, synth::caption_prompt()), dc);
          synth::EvalRecord r;
          r.scene = scene.id;
          r.method = m;
          r.strategy = s;
          r.task = synth::Task::caption;
          r.generated = g.tokens;
          r.text = world.ontology.decode(g.tokens);
          r.mentioned = synth::extract_mentions(world.ontology, g.tokens);
          r.hallucinated = synth::hallucinations(scene, r.mentioned);
          r.divergence = detail::trace_divergence(g);
          result.records.push_back(std::move(r));
        }
      }
      auto rows = score_records(m, s, result.records);
      result.rows.insert(result.rows.end(), rows.begin(), rows.end());
    }
  }
  return result;
}

// Re-derives the result table from persisted records.
inline std::vector<ResultRow> rescore(std::span<const synth::EvalRecord> records) {
  std::vector<std::pair<std::string, std::string>> cells;
  for (const auto& r : records) {
    const std::pair key{r.method, r.strategy};
    if (std::find(cells.begin(), cells.end(), key) == cells.end()) cells.push_back(key);
  }
  std::vector<ResultRow> rows;
  for (const auto& [m, s] : cells) {
    auto part = score_records(m, s, records);
    rows.insert(rows.end(), part.begin(), part.end());
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Sweeps

struct SweepAxis {
  std::string parameter;  // alpha_pos | alpha | beta | kappa_tch | kappa_vis
  std::vector<double> values;
};

inline void apply_knob(EvalSpec& spec, const std::string& parameter, double value) {
  auto& st = spec.decode.steering;
  if (parameter == "alpha_pos") st.alpha_pos = float(value);
  else if (parameter == "alpha_neg") st.alpha_neg = float(value);
  else if (parameter == "alpha") st.alpha = float(value);
  else if (parameter == "beta") st.beta = float(value);
  else if (parameter == "kappa_tch") {
    detail::require(value >= 0 && value == std::floor(value), "kappa_tch must be a non-negative integer");
    spec.kappa_tch = std::size_t(value);
  } else if (parameter == "kappa_vis") {
    // Values below 1 are fractions of V, whole numbers >= 1 are counts.
    st.kappa_vis = value < 1.0 ? KappaVis::fraction(value) : KappaVis::count(std::size_t(value));
    if (value >= 1.0) detail::require(value == std::floor(value), "kappa_vis counts must be integers");
  } else {
    throw InvalidArgument("unknown sweep parameter '" + parameter + "'");
  }
  st.validate();
}

struct SweepRow {
  std::string parameter;
  double value = 0.0;
  ResultRow row;
};

inline std::vector<SweepRow> sweep(const Weights& w, const synth::World& world, const EvalSpec& base,
                                   const std::vector<SweepAxis>& grid) {
  std::size_t points = 0;
  for (const auto& axis : grid) points += axis.values.size();
  detail::require(points > 0, "sweep: empty grid");
  std::vector<SweepRow> out;
  for (const auto& axis : grid) {
    for (double v : axis.values) {
      EvalSpec spec = base;
      apply_knob(spec, axis.parameter, v);
      for (auto& row : run_eval(w, world, spec).rows) out.push_back({axis.parameter, v, std::move(row)});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Output formats

inline std::string format_value(const std::optional<double>& v) {
  if (!v) return "null";
  std::ostringstream s;
  s << std::setprecision(10) << *v;
  return s.str();
}

inline std::string results_csv(const std::vector<ResultRow>& rows, std::uint64_t seed) {
  std::ostringstream out;
  out << "method,strategy,metric,kind,value,seed\n";
  for (const auto& r : rows)
    for (const auto& [name, v] : r.metrics)
      out << r.method << ',' << r.strategy << ',' << name << ',' << r.kind << ',' << format_value(v) << ','
          << seed << '\n';
  return out.str();
}

inline std::string sweep_csv(const std::vector<SweepRow>& rows, std::uint64_t seed) {
  std::ostringstream out;
  out << "parameter,setting,method,strategy,metric,kind,value,seed\n";
  for (const auto& sr : rows)
    for (const auto& [name, v] : sr.row.metrics)
      out << sr.parameter << ',' << format_value(sr.value) << ',' << sr.row.method << ',' << sr.row.strategy << ','
          << name << ',' << sr.row.kind << ',' << format_value(v) << ',' << seed << '\n';
  return out.str();
}

inline nlohmann::json metric_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

inline nlohmann::json results_summary(const EvalResult& result) {
  nlohmann::json cells = nlohmann::json::array();
  std::vector<std::pair<std::string, std::string>> seen;
  for (const auto& r : result.rows) {
    const std::pair key{r.method, r.strategy};
    if (std::find(seen.begin(), seen.end(), key) != seen.end()) continue;
    seen.push_back(key);
    nlohmann::json cell{{"method", r.method}, {"strategy", r.strategy}};
    nlohmann::json kinds = nlohmann::json::object();
    for (const auto& row : result.rows) {
      if (row.method != r.method || row.strategy != r.strategy) continue;
      nlohmann::json m = nlohmann::json::object();
      for (const auto& [name, v] : row.metrics) m[name] = metric_json(v);
      kinds[row.kind] = m;
    }
    cell["by_kind"] = kinds;
    bool has_probes = false;
    for (const auto& rec : result.records)
      if (rec.method == r.method && rec.strategy == r.strategy && rec.task == synth::Task::probe) has_probes = true;
    if (has_probes) {
      const auto pope = pope_for(result.records, r.method, r.strategy);
      cell["pope_mean"] = {{"accuracy", pope.accuracy},
                           {"precision", pope.precision},
                           {"recall", pope.recall},
                           {"f1", pope.f1}};
    }
    cells.push_back(cell);
  }
  return {{"results", cells}};
}

inline nlohmann::json record_to_json(const synth::EvalRecord& r) {
  return {{"scene", r.scene},
          {"method", r.method},
          {"strategy", r.strategy},
          {"task", r.task == synth::Task::probe ? "probe" : "caption"},
          {"generated", r.generated},
          {"text", r.text},
          {"mentioned", r.mentioned},
          {"hallucinated", r.hallucinated},
          {"kind", synth::to_string(r.kind)},
          {"probe_class", r.probe_class},
          {"expected_yes", r.expected_yes},
          {"answered_yes", r.answered_yes},
          {"correct", r.correct},
          {"planted", r.planted},
          {"divergence", r.divergence}};
}

inline synth::EvalRecord record_from_json(const nlohmann::json& j) {
  synth::EvalRecord r;
  try {
    r.scene = j.at("scene");
    r.method = j.at("method");
    r.strategy = j.at("strategy");
    const std::string task = j.at("task");
    detail::require(task == "probe" || task == "caption", "record: unknown task " + task);
    r.task = task == "probe" ? synth::Task::probe : synth::Task::caption;
    r.generated = j.at("generated").get<std::vector<TokenId>>();
    r.text = j.at("text");
    r.mentioned = j.at("mentioned").get<std::vector<std::size_t>>();
    r.hallucinated = j.at("hallucinated").get<std::vector<std::size_t>>();
    const std::string kind = j.at("kind");
    r.kind = kind == "random" ? synth::ProbeKind::random
             : kind == "popular" ? synth::ProbeKind::popular
                                 : synth::ProbeKind::adversarial;
    r.probe_class = j.at("probe_class");
    r.expected_yes = j.at("expected_yes");
    r.answered_yes = j.at("answered_yes");
    r.correct = j.at("correct");
    r.planted = j.at("planted");
    r.divergence = j.at("divergence");
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("record: malformed JSON: ") + e.what());
  }
  return r;
}

// Metric deltas of every method against `reference`, per strategy and kind.
struct CompareRow {
  std::string method;
  std::string strategy;
  std::string kind;
  std::string metric;
  std::optional<double> value;
  std::optional<double> delta;
};

inline std::vector<CompareRow> compare_rows(const std::vector<ResultRow>& rows, const std::string& reference) {
  std::vector<CompareRow> out;
  for (const auto& r : rows) {
    const ResultRow* ref = nullptr;
    for (const auto& cand : rows)
      if (cand.method == reference && cand.strategy == r.strategy && cand.kind == r.kind) ref = &cand;
    for (const auto& [name, v] : r.metrics) {
      std::optional<double> delta;
      if (ref && v) {
        const auto rv = ref->get(name);
        if (rv) delta = *v - *rv;
      }
      out.push_back({r.method, r.strategy, r.kind, name, v, delta});
    }
  }
  return out;
}

}  // namespace ascd
