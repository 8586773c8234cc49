// ascd: command-line front end.
//
//   ascd worldgen  [--config F] [--seed N] [--out DIR]
//   ascd profile   ...
//   ascd decode    ... [--method M] [--strategy S] [--trace]
//   ascd eval      ... [--rescore]
//   ascd sweep     ...
//   ascd compare   ...
//
// Exit codes: 0 success, 2 usage or configuration error, 1 anything else.
// ASCD_LOG=error|info|debug sets the stderr log level (default info).

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "ascd/ascd.hpp"

namespace fs = std::filesystem;
using namespace ascd;

namespace {

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> method;
  std::optional<std::string> strategy;
  std::optional<std::string> out;
  bool trace = false;
  bool rescore = false;
};

void setup_logging() {
  auto logger = spdlog::stderr_color_st("ascd");
  logger->set_pattern("[%l] %v");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::info);
  if (const char* env = std::getenv("ASCD_LOG")) {
    const std::string v = env;
    if (v == "error") spdlog::set_level(spdlog::level::err);
    else if (v == "info") spdlog::set_level(spdlog::level::info);
    else if (v == "debug") spdlog::set_level(spdlog::level::debug);
    else spdlog::warn("ASCD_LOG='{}' not recognised; using info", v);
  }
}

RunConfig load_config(const Overrides& o) {
  RunConfig c = default_run_config();
  if (!o.config.empty()) {
    if (!fs::exists(o.config)) throw IoError("config not found: " + o.config);
    json j;
    try {
      j = json::parse(read_file(o.config));
    } catch (const json::parse_error& e) {
      throw InvalidArgument("config is not valid JSON: " + std::string(e.what()));
    }
    c = run_config_from_json(j, fs::path(o.config).parent_path());
  }
  if (o.seed) c.seed = *o.seed;
  if (o.out) {
    c.out = *o.out;
    c.base_dir.clear();
  }
  if (o.method) {
    c.decode.method = parse_method(*o.method);
    c.eval.methods = {c.decode.method};
  }
  if (o.strategy) {
    c.decode.strategy = parse_strategy(*o.strategy);
    c.eval.strategies = {c.decode.strategy};
  }
  // The global seed drives world generation, probe sampling and decoding.
  c.world.spec.seed = c.seed;
  c.eval.seed = c.seed;
  c.decode.sample_seed = c.seed;
  c.decode.vcd_seed = c.seed;
  c.decode.steering = c.steering;
  c.eval.decode = c.decode;
  return c;
}

std::string out_dir(const RunConfig& c) {
  const std::string dir = resolve_path(c, c.out);
  fs::create_directories(dir);
  return dir;
}

void write_text(const std::string& path, const std::string& text) {
  write_file(path, text);
  spdlog::info("wrote {}", path);
}

void snapshot(const RunConfig& c, const std::string& dir) {
  write_text((fs::path(dir) / "effective_config.json").string(), run_config_to_json(c).dump(2) + "\n");
}

Weights load_model(const RunConfig& c) {
  if (c.model.path) {
    const std::string p = resolve_path(c, *c.model.path);
    if (!fs::exists(p)) throw IoError("model not found: " + p);
    spdlog::debug("loading weights from {}", p);
    return load_weights(p);
  }
  if (c.model.generator == "random") return build_model(c.model.random_config, ModelInit::random(c.model.random_seed));
  return synth::build_text_prior_model(synth::TextPriorSpec{});
}

synth::World load_world(const RunConfig& c) {
  if (c.world.path) {
    const std::string p = resolve_path(c, *c.world.path);
    if (!fs::exists(p)) throw IoError("world not found: " + p);
    const std::string f = feature_path(p);
    if (!fs::exists(f)) throw IoError("world features not found: " + f);
    json j;
    try {
      j = json::parse(read_file(p));
    } catch (const json::parse_error& e) {
      throw IoError("world file is not valid JSON: " + std::string(e.what()));
    }
    return synth::world_from_files(j, read_file(f));
  }
  return synth::generate_world(c.world.spec);
}

std::string profile_path(const RunConfig& c) {
  if (c.profile.path) return resolve_path(c, *c.profile.path);
  return (fs::path(resolve_path(c, c.out)) / "head_profile.json").string();
}

std::optional<HeadFrequencyMap> load_profile(const RunConfig& c, bool required) {
  const std::string p = profile_path(c);
  if (!fs::exists(p)) {
    if (required) throw IoError("head profile not found: " + p + " (run `ascd profile` first)");
    return std::nullopt;
  }
  try {
    return profile_from_json(json::parse(read_file(p))).freq;
  } catch (const json::parse_error& e) {
    throw IoError("head profile is not valid JSON: " + std::string(e.what()));
  }
}

bool needs_ascd(const RunConfig& c) {
  return std::find(c.eval.methods.begin(), c.eval.methods.end(), Method::ascd) != c.eval.methods.end();
}

EvalSpec eval_spec(const RunConfig& c) {
  EvalSpec spec = c.eval;
  const bool random_heads = spec.ablation == Ablation::random_heads || spec.ablation == Ablation::all_heads;
  if (needs_ascd(c) && !random_heads) spec.profile = load_profile(c, true);
  return spec;
}

// ---------------------------------------------------------------------------

int cmd_worldgen(const RunConfig& c) {
  const auto world = synth::generate_world(c.world.spec);
  const std::string dir = out_dir(c);
  const std::string path = (fs::path(dir) / "world.json").string();
  write_text(path, synth::world_to_json(world).dump(1) + "\n");
  write_file(feature_path(path), synth::encode_world_features(world));
  spdlog::info("wrote {}", feature_path(path));
  snapshot(c, dir);

  std::size_t objects = 0;
  for (const auto& s : world.scenes) objects += s.objects.size();
  std::cout << "scenes " << world.scenes.size() << ", classes " << world.ontology.size() << ", mean objects/scene "
            << double(objects) / double(world.scenes.size()) << "\n";
  std::cout << "class frequency:";
  for (std::size_t k = 0; k < world.ontology.size(); ++k)
    std::cout << ' ' << world.ontology.name(k) << '=' << world.frequency[k];
  std::cout << "\n";
  std::size_t ba = 0, bb = 1;
  for (std::size_t a = 0; a < world.ontology.size(); ++a)
    for (std::size_t b = a + 1; b < world.ontology.size(); ++b)
      if (world.cooccurrence[a][b] > world.cooccurrence[ba][bb]) ba = a, bb = b;
  std::cout << "top co-occurring pair: " << world.ontology.name(ba) << " + " << world.ontology.name(bb) << " ("
            << world.cooccurrence[ba][bb] << " scenes)\n";
  return 0;
}

int cmd_profile(const RunConfig& c) {
  const auto w = load_model(c);
  const auto world = load_world(c);
  detail::require(c.profile.n_reference <= world.scenes.size(), "profile.n_reference exceeds the scene count");
  std::vector<MultimodalSequence> ref;
  for (std::size_t s = 0; s < c.profile.n_reference; ++s)
    ref.push_back(synth::make_sequence(world, s, synth::caption_prompt()));
  ProfileConfig pc;
  pc.vote_k = c.profile.vote_k;
  pc.kappa_tch = c.eval.kappa_tch;
  pc.max_new_tokens = c.profile.max_new_tokens;
  pc.stop_tokens = {synth::kEos};
  spdlog::info("profiling {} reference prompts (vote_k {})", ref.size(), clamp_vote_k(pc.vote_k, w.config.n_layers, w.config.n_heads));
  const auto prof = profile_heads(w, ref, pc);

  const std::string dir = out_dir(c);
  write_text((fs::path(dir) / "head_profile.json").string(), profile_to_json(prof.freq, prof.selected).dump(1) + "\n");
  write_text((fs::path(dir) / "head_set.json").string(), heads_to_json(prof.selected).dump() + "\n");
  write_text((fs::path(dir) / "head_heatmap.csv").string(), heatmap_csv(prof.freq));
  snapshot(c, dir);

  std::vector<std::pair<std::uint64_t, HeadId>> ranked;
  for (std::size_t l = 0; l < prof.freq.n_layers; ++l)
    for (std::size_t h = 0; h < prof.freq.n_heads; ++h) ranked.push_back({prof.freq.at(l, h), {l, h}});
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  std::cout << "top heads (layer,head: votes)\n";
  for (std::size_t i = 0; i < std::min<std::size_t>(10, ranked.size()); ++i)
    std::cout << "  " << ranked[i].second.layer << ',' << ranked[i].second.head << ": " << ranked[i].first << "\n";
  return 0;
}

std::vector<TokenId> parse_prompt(const synth::Ontology& o, const std::vector<std::string>& words) {
  std::vector<TokenId> ids;
  for (const auto& w : words) {
    if (!w.empty() && std::all_of(w.begin(), w.end(), ::isdigit)) {
      ids.push_back(TokenId(std::stoul(w)));
      continue;
    }
    bool found = false;
    for (TokenId t = 0; t < o.vocab_size(); ++t)
      if (o.token_name(t) == w) {
        ids.push_back(t);
        found = true;
        break;
      }
    if (!found) throw InvalidArgument("prompt: unknown token '" + w + "'");
  }
  detail::require(!ids.empty(), "prompt: empty text");
  return ids;
}

int cmd_decode(const RunConfig& c, bool trace) {
  const auto w = load_model(c);
  const auto world = load_world(c);
  detail::require(c.prompt.scene < world.scenes.size(), "prompt.scene outside the world");
  DecodeConfig dc = c.decode;
  if (dc.method == Method::ascd && dc.steering.heads_pos.size() == 0) {
    EvalSpec spec = c.eval;
    spec.profile = load_profile(c, true);
    dc.steering.heads_pos = resolve_heads(spec, w.config.n_layers, w.config.n_heads);
  }
  const auto prompt = parse_prompt(world.ontology, c.prompt.text);
  spdlog::debug("decoding scene {} with method {}", c.prompt.scene, to_string(dc.method));
  const auto g = generate(w, synth::make_sequence(world, c.prompt.scene, prompt), dc);
  std::cout << world.ontology.decode(g.tokens) << "\n";

  const std::string dir = out_dir(c);
  if (trace) write_text((fs::path(dir) / "trace.jsonl").string(), trace_jsonl(g.traces));
  snapshot(c, dir);
  return 0;
}

std::string records_jsonl(const std::vector<synth::EvalRecord>& records) {
  std::string out;
  for (const auto& r : records) out += record_to_json(r).dump() + "\n";
  return out;
}

std::vector<synth::EvalRecord> read_records(const std::string& path) {
  if (!fs::exists(path)) throw IoError("records not found: " + path + " (run `ascd eval` first)");
  std::istringstream in(read_file(path));
  std::vector<synth::EvalRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      out.push_back(record_from_json(json::parse(line)));
    } catch (const json::parse_error& e) {
      throw IoError("records: malformed line: " + std::string(e.what()));
    }
  }
  detail::require(!out.empty(), "records file is empty");
  return out;
}

void print_rows(const std::vector<ResultRow>& rows) {
  for (const auto& r : rows) {
    std::cout << r.method << ' ' << r.strategy << ' ' << r.kind;
    for (const auto& [n, v] : r.metrics) std::cout << ' ' << n << '=' << format_value(v);
    std::cout << "\n";
  }
}

int cmd_eval(const RunConfig& c, bool rescore_only) {
  const std::string dir = out_dir(c);
  const auto records_path = (fs::path(dir) / "records.jsonl").string();
  if (rescore_only) {
    const auto records = read_records(records_path);
    const auto rows = rescore(records);
    write_text((fs::path(dir) / "results_rescored.csv").string(), results_csv(rows, c.seed));
    print_rows(rows);
    return 0;
  }
  const auto w = load_model(c);
  const auto world = load_world(c);
  const auto spec = eval_spec(c);
  spdlog::info("evaluating {} scenes", world.scenes.size());
  const auto res = run_eval(w, world, spec);
  write_text((fs::path(dir) / "results.csv").string(), results_csv(res.rows, c.seed));
  write_text((fs::path(dir) / "results.json").string(), results_summary(res).dump(1) + "\n");
  write_text(records_path, records_jsonl(res.records));
  snapshot(c, dir);
  print_rows(res.rows);
  return 0;
}

int cmd_sweep(const RunConfig& c) {
  detail::require(!c.sweep.empty(), "sweep: the config has no sweep axes");
  const auto w = load_model(c);
  const auto world = load_world(c);
  const auto rows = sweep(w, world, eval_spec(c), c.sweep);
  const std::string dir = out_dir(c);
  write_text((fs::path(dir) / "sweep.csv").string(), sweep_csv(rows, c.seed));
  snapshot(c, dir);
  std::cout << rows.size() << " sweep rows\n";
  return 0;
}

int cmd_compare(const RunConfig& c) {
  const auto w = load_model(c);
  const auto world = load_world(c);
  const auto spec = eval_spec(c);
  const auto res = run_eval(w, world, spec);
  const bool has_original =
      std::find(spec.methods.begin(), spec.methods.end(), Method::original) != spec.methods.end();
  const std::string reference = to_string(has_original ? Method::original : spec.methods.front());
  const auto cmp = compare_rows(res.rows, reference);
  std::ostringstream csv;
  csv << "method,strategy,kind,metric,value,delta_vs_" << reference << "\n";
  for (const auto& r : cmp)
    csv << r.method << ',' << r.strategy << ',' << r.kind << ',' << r.metric << ',' << format_value(r.value) << ','
        << format_value(r.delta) << "\n";
  const std::string dir = out_dir(c);
  write_text((fs::path(dir) / "compare.csv").string(), csv.str());
  write_text((fs::path(dir) / "results.csv").string(), results_csv(res.rows, c.seed));
  snapshot(c, dir);

  const char* shown[] = {"accuracy", "f1", "planted_accuracy", "chair_s", "chair_i"};
  std::printf("%-9s %-8s %-12s %-17s %12s %12s\n", "method", "strategy", "kind", "metric", "value", "delta");
  for (const auto& r : cmp) {
    if (std::find(std::begin(shown), std::end(shown), r.metric) == std::end(shown)) continue;
    std::printf("%-9s %-8s %-12s %-17s %12s %12s\n", r.method.c_str(), r.strategy.c_str(), r.kind.c_str(),
                r.metric.c_str(), format_value(r.value).c_str(), format_value(r.delta).c_str());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  CLI::App app{"Attention-steerable contrastive decoding on toy multimodal transformers"};
  app.require_subcommand(1);
  Overrides o;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "JSON run configuration");
    sub->add_option("--seed", o.seed, "global seed");
    sub->add_option("--out", o.out, "output directory");
    sub->add_option("--method", o.method, "original | ascd | vcd | icd");
    sub->add_option("--strategy", o.strategy, "greedy | nucleus | beam");
  };
  auto* worldgen = app.add_subcommand("worldgen", "generate a synthetic world");
  auto* profile = app.add_subcommand("profile", "select text-centric heads");
  auto* decode = app.add_subcommand("decode", "decode one prompt");
  auto* eval = app.add_subcommand("eval", "score CHAIR / POPE over the world");
  auto* sweepc = app.add_subcommand("sweep", "evaluate a hyper-parameter grid");
  auto* compare = app.add_subcommand("compare", "metric deltas across methods");
  for (auto* s : {worldgen, profile, decode, eval, sweepc, compare}) common(s);
  decode->add_flag("--trace", o.trace, "write the per-step trace as JSON lines");
  eval->add_flag("--rescore", o.rescore, "re-derive metrics from persisted records");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    const RunConfig c = load_config(o);
    if (*worldgen) return cmd_worldgen(c);
    if (*profile) return cmd_profile(c);
    if (*decode) return cmd_decode(c, o.trace);
    if (*eval) return cmd_eval(c, o.rescore);
    if (*sweepc) return cmd_sweep(c);
    if (*compare) return cmd_compare(c);
  } catch (const InvalidArgument& e) {
    spdlog::error("{}", e.what());
    return 2;
  } catch (const IoError& e) {
    spdlog::error("{}", e.what());
    return 2;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 1;
}
