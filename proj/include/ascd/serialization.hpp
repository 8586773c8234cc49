#pragma once

// JSON forms of the run configuration and the JSON-lines step trace.
//
// Readers are strict: unknown keys are rejected so that a typo in a config
// file fails loudly instead of silently falling back to a default.

#include <cmath>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ascd/decoder.hpp"
#include "ascd/eval.hpp"
#include "ascd/steering.hpp"
#include "ascd/synth/text_prior.hpp"
#include "ascd/synth/world.hpp"

namespace ascd {

using nlohmann::json;

namespace detail {

inline void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw InvalidArgument(where + ": expected a JSON object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [k, v] : j.items())
    if (!ok.contains(k)) throw InvalidArgument(where + ": unknown key '" + k + "'");
}

template <class T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw InvalidArgument(where + "." + key + ": wrong type");
  }
}

template <class E>
E read_enum(const json& j, const char* key, E fallback, const std::string& where,
            std::initializer_list<std::pair<const char*, E>> names) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_string()) throw InvalidArgument(where + "." + key + ": expected a string");
  const std::string s = j.at(key);
  for (const auto& [n, e] : names)
    if (s == n) return e;
  throw InvalidArgument(where + "." + key + ": unknown value '" + s + "'");
}

template <class E>
std::string enum_name(E e, std::initializer_list<std::pair<const char*, E>> names) {
  for (const auto& [n, v] : names)
    if (v == e) return n;
  return "?";
}

inline const std::initializer_list<std::pair<const char*, PositiveScope>> kScopes{
    {"visual_columns", PositiveScope::visual_columns}, {"whole_row", PositiveScope::whole_row}};
inline const std::initializer_list<std::pair<const char*, CriticalSource>> kSources{
    {"per_layer", CriticalSource::per_layer}, {"final_layer", CriticalSource::final_layer}};
inline const std::initializer_list<std::pair<const char*, EditStage>> kStages{
    {"pre_softmax", EditStage::pre_softmax}, {"post_softmax_renorm", EditStage::post_softmax_renorm}};
inline const std::initializer_list<std::pair<const char*, CriticalRule>> kRules{
    {"scored", CriticalRule::scored}, {"random", CriticalRule::random}};
inline const std::initializer_list<std::pair<const char*, CutoffMode>> kCutoffs{
    {"fused_max", CutoffMode::fused_max}, {"positive_max", CutoffMode::positive_max}};
inline const std::initializer_list<std::pair<const char*, Strategy>> kStrategies{
    {"greedy", Strategy::greedy}, {"nucleus", Strategy::nucleus}, {"beam", Strategy::beam}};
inline const std::initializer_list<std::pair<const char*, Method>> kMethods{
    {"original", Method::original}, {"ascd", Method::ascd}, {"vcd", Method::vcd}, {"icd", Method::icd}};

}  // namespace detail

// kappa_vis: a number below 1 is a fraction of the visual tokens, an integer
// >= 1 is a count. Written back in the same form.
inline json kappa_to_json(const KappaVis& k) {
  if (k.kind == KappaVis::Kind::count) return std::uint64_t(k.value);
  return k.value;
}

inline KappaVis kappa_from_json(const json& j) {
  if (!j.is_number()) throw InvalidArgument("steering.kappa_vis: expected a number");
  const double v = j.get<double>();
  const auto k = v < 1.0 ? KappaVis::fraction(v) : KappaVis::count(std::size_t(v));
  if (v >= 1.0) detail::require(v == std::floor(v), "steering.kappa_vis: counts must be integers");
  k.validate();
  return k;
}

inline json heads_to_json(const HeadSet& h) {
  json out = json::array();
  for (const auto& id : h.heads()) out.push_back({id.layer, id.head});
  return out;
}

inline HeadSet heads_from_json(const json& j, const std::string& where) {
  if (!j.is_array()) throw InvalidArgument(where + ": expected [[layer, head], ...]");
  std::vector<HeadId> ids;
  for (const auto& e : j) {
    if (!e.is_array() || e.size() != 2 || !e[0].is_number_unsigned() || !e[1].is_number_unsigned())
      throw InvalidArgument(where + ": expected [[layer, head], ...]");
    ids.push_back({e[0].get<std::size_t>(), e[1].get<std::size_t>()});
  }
  return HeadSet::of(std::move(ids));
}

inline json steering_to_json(const SteeringSpec& s) {
  json j{{"alpha_pos", s.alpha_pos},
         {"alpha_neg", s.alpha_neg},
         {"kappa_vis", kappa_to_json(s.kappa_vis)},
         {"alpha", s.alpha},
         {"beta", s.beta},
         {"pos_scope", detail::enum_name(s.pos_scope, detail::kScopes)},
         {"crit_source", detail::enum_name(s.crit_source, detail::kSources)},
         {"edit_stage", detail::enum_name(s.edit_stage, detail::kStages)},
         {"crit_rule", detail::enum_name(s.crit_rule, detail::kRules)},
         {"crit_seed", s.crit_seed}};
  if (s.heads_pos.size() > 0) j["heads_pos"] = heads_to_json(s.heads_pos);
  return j;
}

inline SteeringSpec steering_from_json(const json& j) {
  const std::string w = "steering";
  detail::check_keys(j, w,
                     {"alpha_pos", "alpha_neg", "kappa_vis", "alpha", "beta", "pos_scope", "crit_source",
                      "edit_stage", "crit_rule", "crit_seed", "heads_pos"});
  SteeringSpec s;
  detail::read(j, "alpha_pos", s.alpha_pos, w);
  detail::read(j, "alpha_neg", s.alpha_neg, w);
  detail::read(j, "alpha", s.alpha, w);
  detail::read(j, "beta", s.beta, w);
  detail::read(j, "crit_seed", s.crit_seed, w);
  if (j.contains("kappa_vis")) s.kappa_vis = kappa_from_json(j.at("kappa_vis"));
  if (j.contains("heads_pos")) s.heads_pos = heads_from_json(j.at("heads_pos"), w + ".heads_pos");
  s.pos_scope = detail::read_enum(j, "pos_scope", s.pos_scope, w, detail::kScopes);
  s.crit_source = detail::read_enum(j, "crit_source", s.crit_source, w, detail::kSources);
  s.edit_stage = detail::read_enum(j, "edit_stage", s.edit_stage, w, detail::kStages);
  s.crit_rule = detail::read_enum(j, "crit_rule", s.crit_rule, w, detail::kRules);
  s.validate();
  return s;
}

// The steering block lives beside the decode block in a run config, so it is
// not repeated here.
inline json decode_to_json(const DecodeConfig& d) {
  return {{"strategy", detail::enum_name(d.strategy, detail::kStrategies)},
          {"top_p", d.top_p},
          {"temperature", d.temperature},
          {"sample_seed", d.sample_seed},
          {"beam_width", d.beam_width},
          {"max_new_tokens", d.max_new_tokens},
          {"stop_tokens", d.stop_tokens},
          {"method", detail::enum_name(d.method, detail::kMethods)},
          {"vcd_sigma", d.vcd_sigma},
          {"vcd_seed", d.vcd_seed},
          {"icd_prefix", d.icd_prefix},
          {"contrast_alpha", d.contrast_alpha},
          {"contrast_beta", d.contrast_beta},
          {"contrast_cutoff", detail::enum_name(d.contrast_cutoff, detail::kCutoffs)},
          {"cutoff", detail::enum_name(d.cutoff, detail::kCutoffs)}};
}

inline DecodeConfig decode_from_json(const json& j, DecodeConfig d = {}) {
  const std::string w = "decode";
  detail::check_keys(j, w,
                     {"strategy", "top_p", "temperature", "sample_seed", "beam_width", "max_new_tokens",
                      "stop_tokens", "method", "vcd_sigma", "vcd_seed", "icd_prefix", "contrast_alpha",
                      "contrast_beta", "contrast_cutoff", "cutoff"});
  d.strategy = detail::read_enum(j, "strategy", d.strategy, w, detail::kStrategies);
  d.method = detail::read_enum(j, "method", d.method, w, detail::kMethods);
  detail::read(j, "top_p", d.top_p, w);
  detail::read(j, "temperature", d.temperature, w);
  detail::read(j, "sample_seed", d.sample_seed, w);
  detail::read(j, "beam_width", d.beam_width, w);
  detail::read(j, "max_new_tokens", d.max_new_tokens, w);
  detail::read(j, "stop_tokens", d.stop_tokens, w);
  detail::read(j, "vcd_sigma", d.vcd_sigma, w);
  detail::read(j, "vcd_seed", d.vcd_seed, w);
  detail::read(j, "icd_prefix", d.icd_prefix, w);
  detail::read(j, "contrast_alpha", d.contrast_alpha, w);
  detail::read(j, "contrast_beta", d.contrast_beta, w);
  d.contrast_cutoff = detail::read_enum(j, "contrast_cutoff", d.contrast_cutoff, w, detail::kCutoffs);
  d.cutoff = detail::read_enum(j, "cutoff", d.cutoff, w, detail::kCutoffs);
  return d;
}

inline json world_spec_to_json(const synth::WorldSpec& s) {
  return {{"n_classes", s.n_classes},
          {"n_scenes", s.n_scenes},
          {"n_visual", s.n_visual},
          {"d_model", s.d_model},
          {"min_objects", s.min_objects},
          {"max_objects", s.max_objects},
          {"tokens_per_object", s.tokens_per_object},
          {"feature_noise", s.feature_noise},
          {"bias",
           {{"enabled", s.bias.enabled}, {"cause", s.bias.cause}, {"effect", s.bias.effect}, {"rate", s.bias.rate}}}};
}

inline synth::WorldSpec world_spec_from_json(const json& j, synth::WorldSpec s) {
  const std::string w = "world.generate";
  detail::check_keys(j, w,
                     {"n_classes", "n_scenes", "n_visual", "d_model", "min_objects", "max_objects",
                      "tokens_per_object", "feature_noise", "bias"});
  detail::read(j, "n_classes", s.n_classes, w);
  detail::read(j, "n_scenes", s.n_scenes, w);
  detail::read(j, "n_visual", s.n_visual, w);
  detail::read(j, "d_model", s.d_model, w);
  detail::read(j, "min_objects", s.min_objects, w);
  detail::read(j, "max_objects", s.max_objects, w);
  detail::read(j, "tokens_per_object", s.tokens_per_object, w);
  detail::read(j, "feature_noise", s.feature_noise, w);
  if (j.contains("bias")) {
    const auto& b = j.at("bias");
    detail::check_keys(b, w + ".bias", {"enabled", "cause", "effect", "rate"});
    detail::read(b, "enabled", s.bias.enabled, w + ".bias");
    detail::read(b, "cause", s.bias.cause, w + ".bias");
    detail::read(b, "effect", s.bias.effect, w + ".bias");
    detail::read(b, "rate", s.bias.rate, w + ".bias");
  }
  return s;
}

// ---------------------------------------------------------------------------
// Run configuration

struct ModelSource {
  std::optional<std::string> path;  // ASCDW1 weight file
  std::string generator = "text-prior";  // used when no path is given: text-prior | random
  ModelConfig random_config;          // generator=random
  std::uint64_t random_seed = 0;
};

struct WorldSource {
  std::optional<std::string> path;  // world JSON; features sit beside it (see feature_path)
  synth::WorldSpec spec;            // used when no path is given
};

struct ProfileSettings {
  std::optional<std::string> path;  // artifact to load; defaults to <out>/head_profile.json
  std::size_t n_reference = 20;
  std::size_t vote_k = 2;
  std::size_t max_new_tokens = 4;
};

struct PromptSettings {
  std::size_t scene = 0;
  std::vector<std::string> text{"describe"};  // token names or decimal ids
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::string out = "ascd-out";
  ModelSource model;
  WorldSource world;
  ProfileSettings profile;
  SteeringSpec steering;
  DecodeConfig decode;
  EvalSpec eval;
  std::vector<SweepAxis> sweep;
  PromptSettings prompt;
  std::filesystem::path base_dir;  // relative paths resolve against the config file
};

// Defaults wire the constructed text-prior model to a matching world.
inline RunConfig default_run_config() {
  RunConfig c;
  synth::TextPriorSpec tp;
  c.world.spec = synth::matching_world(tp, 60, 0);
  c.decode.max_new_tokens = 6;
  c.decode.stop_tokens = {synth::kEos};
  c.decode.icd_prefix = {synth::kConfuser0, synth::kConfuser1};
  c.eval.kappa_tch = 2;
  c.eval.methods = {Method::original, Method::ascd, Method::vcd, Method::icd};
  return c;
}

inline std::string resolve_path(const RunConfig& c, const std::string& p) {
  const std::filesystem::path path(p);
  if (path.is_absolute() || c.base_dir.empty()) return path.string();
  return (c.base_dir / path).lexically_normal().string();
}

inline std::string feature_path(const std::string& world_json) {
  auto p = std::filesystem::path(world_json);
  p.replace_extension(".features.ascdw");
  return p.string();
}

inline json run_config_to_json(const RunConfig& c) {
  json model = json::object();
  if (c.model.path) model["path"] = *c.model.path;
  else {
    model["generator"] = c.model.generator;
    if (c.model.generator == "random") {
      model["config"] = config_to_json(c.model.random_config);
      model["seed"] = c.model.random_seed;
    }
  }
  json world = json::object();
  if (c.world.path) world["path"] = *c.world.path;
  else world["generate"] = world_spec_to_json(c.world.spec);
  json profile{{"n_reference", c.profile.n_reference},
               {"vote_k", c.profile.vote_k},
               {"max_new_tokens", c.profile.max_new_tokens}};
  if (c.profile.path) profile["path"] = *c.profile.path;
  json methods = json::array(), strategies = json::array();
  for (Method m : c.eval.methods) methods.push_back(to_string(m));
  for (Strategy s : c.eval.strategies) strategies.push_back(to_string(s));
  json sweep = json::array();
  for (const auto& a : c.sweep) sweep.push_back({{"parameter", a.parameter}, {"values", a.values}});
  return {{"seed", c.seed},
          {"out", c.out},
          {"model", model},
          {"world", world},
          {"profile", profile},
          {"steering", steering_to_json(c.steering)},
          {"decode", decode_to_json(c.decode)},
          {"eval",
           {{"methods", methods},
            {"strategies", strategies},
            {"kappa_tch", c.eval.kappa_tch},
            {"ablation", to_string(c.eval.ablation)},
            {"ablation_seed", c.eval.ablation_seed},
            {"caption_tokens", c.eval.caption_tokens},
            {"run_probes", c.eval.run_probes},
            {"run_captions", c.eval.run_captions}}},
          {"sweep", sweep},
          {"prompt", {{"scene", c.prompt.scene}, {"text", c.prompt.text}}}};
}

inline RunConfig run_config_from_json(const json& j, std::filesystem::path base_dir = {}) {
  RunConfig c = default_run_config();
  c.base_dir = std::move(base_dir);
  const std::string w = "config";
  detail::check_keys(j, w, {"seed", "out", "model", "world", "profile", "steering", "decode", "eval", "sweep", "prompt"});
  detail::read(j, "seed", c.seed, w);
  detail::read(j, "out", c.out, w);
  if (j.contains("model")) {
    const auto& m = j.at("model");
    detail::check_keys(m, "model", {"path", "generator", "config", "seed"});
    if (m.contains("path")) c.model.path = m.at("path").get<std::string>();
    detail::read(m, "generator", c.model.generator, "model");
    detail::require(c.model.generator == "text-prior" || c.model.generator == "random",
                    "model.generator: expected text-prior or random");
    if (m.contains("config")) c.model.random_config = config_from_json(m.at("config"));
    detail::read(m, "seed", c.model.random_seed, "model");
  }
  if (j.contains("world")) {
    const auto& wj = j.at("world");
    detail::check_keys(wj, "world", {"path", "generate"});
    if (wj.contains("path")) c.world.path = wj.at("path").get<std::string>();
    if (wj.contains("generate")) c.world.spec = world_spec_from_json(wj.at("generate"), c.world.spec);
  }
  if (j.contains("profile")) {
    const auto& p = j.at("profile");
    detail::check_keys(p, "profile", {"path", "n_reference", "vote_k", "max_new_tokens"});
    if (p.contains("path")) c.profile.path = p.at("path").get<std::string>();
    detail::read(p, "n_reference", c.profile.n_reference, "profile");
    detail::read(p, "vote_k", c.profile.vote_k, "profile");
    detail::read(p, "max_new_tokens", c.profile.max_new_tokens, "profile");
    detail::require(c.profile.n_reference >= 1, "profile.n_reference must be >= 1");
  }
  if (j.contains("steering")) c.steering = steering_from_json(j.at("steering"));
  if (j.contains("decode")) c.decode = decode_from_json(j.at("decode"), c.decode);
  if (j.contains("eval")) {
    const auto& e = j.at("eval");
    detail::check_keys(e, "eval",
                       {"methods", "strategies", "kappa_tch", "ablation", "ablation_seed", "caption_tokens",
                        "run_probes", "run_captions"});
    std::vector<std::string> names;
    if (e.contains("methods")) {
      detail::read(e, "methods", names, "eval");
      c.eval.methods.clear();
      for (const auto& n : names) c.eval.methods.push_back(parse_method(n));
    }
    if (e.contains("strategies")) {
      detail::read(e, "strategies", names, "eval");
      c.eval.strategies.clear();
      for (const auto& n : names) c.eval.strategies.push_back(parse_strategy(n));
    }
    std::string ablation = to_string(c.eval.ablation);
    detail::read(e, "ablation", ablation, "eval");
    c.eval.ablation = parse_ablation(ablation);
    detail::read(e, "kappa_tch", c.eval.kappa_tch, "eval");
    detail::read(e, "ablation_seed", c.eval.ablation_seed, "eval");
    detail::read(e, "caption_tokens", c.eval.caption_tokens, "eval");
    detail::read(e, "run_probes", c.eval.run_probes, "eval");
    detail::read(e, "run_captions", c.eval.run_captions, "eval");
  }
  if (j.contains("sweep")) {
    if (!j.at("sweep").is_array()) throw InvalidArgument("sweep: expected an array of axes");
    for (const auto& a : j.at("sweep")) {
      detail::check_keys(a, "sweep", {"parameter", "values"});
      SweepAxis axis;
      detail::read(a, "parameter", axis.parameter, "sweep");
      detail::read(a, "values", axis.values, "sweep");
      c.sweep.push_back(std::move(axis));
    }
  }
  if (j.contains("prompt")) {
    const auto& p = j.at("prompt");
    detail::check_keys(p, "prompt", {"scene", "text"});
    detail::read(p, "scene", c.prompt.scene, "prompt");
    detail::read(p, "text", c.prompt.text, "prompt");
  }
  return c;
}

// ---------------------------------------------------------------------------
// Step traces

// One JSON object per step. Score arrays are restricted to the top entries of
// the final (or, for single-branch runs, positive) scores plus the chosen id,
// listed under "ids"; -inf becomes null.
inline json step_trace_to_json(const StepTrace& t, std::size_t top = 20) {
  const auto& rank = t.final.empty() ? t.pos : t.final;
  std::vector<std::size_t> ids = top_k_indices(rank, std::min(top, rank.size()));
  if (std::find(ids.begin(), ids.end(), std::size_t(t.chosen)) == ids.end()) ids.push_back(t.chosen);
  auto pick = [&](const std::vector<float>& v) {
    json a = json::array();
    if (v.empty()) return a;
    for (std::size_t i : ids) a.push_back(std::isfinite(v[i]) ? json(v[i]) : json(nullptr));
    return a;
  };
  json crit = json::array();
  for (const auto& c : t.critical) crit.push_back({{"layer", c.layer}, {"tokens", c.tokens}});
  return {{"step", t.step}, {"chosen", t.chosen}, {"ids", ids},        {"pos", pick(t.pos)},
          {"neg", pick(t.neg)}, {"raw", pick(t.raw)}, {"final", pick(t.final)}, {"critical", crit}};
}

inline std::string trace_jsonl(const std::vector<StepTrace>& traces, std::size_t top = 20) {
  std::string out;
  for (const auto& t : traces) out += step_trace_to_json(t, top).dump() + "\n";
  return out;
}

}  // namespace ascd
