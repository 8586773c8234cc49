#pragma once

// Synthetic scenes with a closed vocabulary, their visual features, and the
// POPE-style probe / caption prompt sets built on top of them.
//
// Token ids:
//   0 PAD  1 BOS  2 EOS  3 YES  4 NO  5 IS_THERE  6 DESCRIBE  7-8 confuser
//   9 + c  object class c
//
// Visual features follow FeatureLayout, which the constructed text-prior
// model reads as well: an object's tokens carry a one-hot class code and an
// attribute code; background tokens carry only noise.

#include <algorithm>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ascd/error.hpp"
#include "ascd/model.hpp"
#include "ascd/numerics.hpp"
#include "ascd/planted.hpp"
#include "ascd/tensor_io.hpp"

namespace ascd::synth {

inline constexpr TokenId kPad = 0;
inline constexpr TokenId kBos = 1;
inline constexpr TokenId kEos = 2;
inline constexpr TokenId kYes = 3;
inline constexpr TokenId kNo = 4;
inline constexpr TokenId kIsThere = 5;
inline constexpr TokenId kDescribe = 6;
inline constexpr TokenId kConfuser0 = 7;
inline constexpr TokenId kConfuser1 = 8;
inline constexpr TokenId kFirstClass = 9;
inline constexpr std::size_t kAttributeCount = 4;

inline const std::vector<std::string>& default_class_names() {
  static const std::vector<std::string> names{"person", "dog",    "cup",   "table", "car",  "frisbee",
                                              "chair",  "book",   "bottle", "kite", "bench", "clock"};
  return names;
}

class Ontology {
 public:
  Ontology() = default;
  explicit Ontology(std::vector<std::string> names) : names_(std::move(names)) {
    detail::require(names_.size() >= 4, "ontology needs at least 4 classes");
    auto sorted = names_;
    std::sort(sorted.begin(), sorted.end());
    detail::require(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end(),
                    "ontology class names must be unique");
  }

  static Ontology of_size(std::size_t n) {
    detail::require(n >= 4, "ontology needs at least 4 classes; got " + std::to_string(n));
    std::vector<std::string> names;
    for (std::size_t i = 0; i < n; ++i)
      names.push_back(i < default_class_names().size() ? default_class_names()[i] : "class" + std::to_string(i));
    return Ontology(std::move(names));
  }

  std::size_t size() const { return names_.size(); }
  std::size_t vocab_size() const { return kFirstClass + names_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  const std::string& name(std::size_t c) const { return names_.at(c); }

  std::size_t index(const std::string& name) const {
    const auto it = std::find(names_.begin(), names_.end(), name);
    detail::require(it != names_.end(), "unknown class name: " + name);
    return std::size_t(it - names_.begin());
  }

  TokenId token(std::size_t c) const {
    detail::require(c < names_.size(), "class index out of range");
    return TokenId(kFirstClass + c);
  }

  std::optional<std::size_t> class_of(TokenId t) const {
    if (t < kFirstClass || t >= vocab_size()) return std::nullopt;
    return std::size_t(t - kFirstClass);
  }

  std::string token_name(TokenId t) const {
    static const char* special[] = {"<pad>", "<bos>", "<eos>", "yes", "no", "is-there", "describe",
                                    "<confuser0>", "<confuser1>"};
    if (t < kFirstClass) return special[t];
    if (auto c = class_of(t)) return names_[*c];
    return "<unk" + std::to_string(t) + ">";
  }

  std::string decode(std::span<const TokenId> ids) const {
    std::string out;
    for (TokenId t : ids) {
      if (!out.empty()) out += ' ';
      out += token_name(t);
    }
    return out;
  }

 private:
  std::vector<std::string> names_;
};

// Residual-stream layout shared by world features and the constructed model.
struct FeatureLayout {
  std::size_t n_classes = 8;

  std::size_t vis_class(std::size_t c) const { return kReservedDims + c; }
  std::size_t attribute(std::size_t a) const { return kReservedDims + n_classes + a; }
  std::size_t text_class(std::size_t c) const { return kReservedDims + n_classes + kAttributeCount + c; }
  std::size_t is_probe() const { return text_class(0) + n_classes; }
  std::size_t is_describe() const { return is_probe() + 1; }
  std::size_t is_class_token() const { return is_probe() + 2; }
  std::size_t is_confuser() const { return is_probe() + 3; }
  std::size_t yes_channel() const { return is_probe() + 4; }
  std::size_t mode_channel() const { return is_probe() + 5; }
  std::size_t class_channel(std::size_t c) const { return is_probe() + 6 + c; }
  std::size_t used_dims() const { return class_channel(0) + n_classes; }
  // First and one-past-last dims that carry visual content.
  std::size_t visual_begin() const { return kReservedDims; }
  std::size_t visual_end() const { return kReservedDims + n_classes + kAttributeCount; }
};

struct SceneObject {
  std::size_t class_id = 0;
  std::vector<std::size_t> attributes;
  std::vector<std::size_t> tokens;  // visual positions
};

struct SceneGraph {
  std::size_t id = 0;
  std::vector<SceneObject> objects;
  std::uint64_t seed = 0;

  bool contains(std::size_t c) const {
    return std::any_of(objects.begin(), objects.end(), [&](const auto& o) { return o.class_id == c; });
  }
  std::vector<std::size_t> classes() const {
    std::vector<std::size_t> out;
    for (const auto& o : objects) out.push_back(o.class_id);
    std::sort(out.begin(), out.end());
    return out;
  }
};

// A spurious pair: text priors suggest `effect` whenever `cause` is seen.
// With probability `rate` a scene holding `cause` also holds `effect`, so the
// pair dominates the co-occurrence table while still leaving scenes where the
// effect is absent.
struct BiasSpec {
  std::size_t cause = 0;
  std::size_t effect = 0;
  double rate = 0.6;
  bool enabled = false;
};

struct WorldSpec {
  std::size_t n_classes = 8;
  std::size_t n_scenes = 60;
  std::size_t n_visual = 10;
  std::size_t d_model = 96;
  std::size_t min_objects = 1;
  std::size_t max_objects = 3;
  std::size_t tokens_per_object = 2;
  float feature_noise = 0.02f;
  std::uint64_t seed = 0;
  BiasSpec bias;

  void validate() const {
    detail::require(n_classes >= 4, "ontology needs at least 4 classes; got " + std::to_string(n_classes));
    detail::require(n_scenes >= 1, "n_scenes must be >= 1");
    detail::require(min_objects >= 1 && min_objects <= max_objects && max_objects <= 8,
                    "objects per scene must satisfy 1 <= min <= max <= 8");
    detail::require(max_objects < n_classes, "max_objects must leave at least one absent class");
    detail::require(tokens_per_object >= 1 && max_objects * tokens_per_object <= n_visual,
                    "visual tokens cannot hold max_objects objects");
    detail::require(FeatureLayout{n_classes}.used_dims() <= d_model,
                    "d_model too small for the feature layout");
    detail::require(feature_noise >= 0.0f, "feature_noise must be >= 0");
    if (bias.enabled) {
      detail::require(bias.cause < n_classes && bias.effect < n_classes && bias.cause != bias.effect,
                      "bias pair must name two distinct classes");
      detail::require(bias.rate >= 0.0 && bias.rate <= 1.0, "bias rate must be in [0,1]");
    }
  }
};

struct World {
  WorldSpec spec;
  Ontology ontology;
  std::vector<SceneGraph> scenes;
  std::vector<Tensor> features;                        // per scene, [n_visual, d_model]
  std::vector<std::vector<std::uint64_t>> cooccurrence;  // symmetric, zero diagonal
  std::vector<std::uint64_t> frequency;                // scenes containing each class

  FeatureLayout layout() const { return {spec.n_classes}; }
};

inline World generate_world(const WorldSpec& spec) {
  spec.validate();
  World world;
  world.spec = spec;
  world.ontology = Ontology::of_size(spec.n_classes);
  const std::size_t C = spec.n_classes;
  const FeatureLayout lay{C};
  world.cooccurrence.assign(C, std::vector<std::uint64_t>(C, 0));
  world.frequency.assign(C, 0);
  const Rng root(spec.seed);
  for (std::size_t s = 0; s < spec.n_scenes; ++s) {
    SceneGraph scene;
    scene.id = s;
    scene.seed = Rng::mix(spec.seed, 0x5ce7e, s);
    Rng rng = root.child(s);
    const std::size_t n_obj = spec.min_objects + rng.uniform_index(spec.max_objects - spec.min_objects + 1);
    std::vector<std::size_t> classes;
    while (classes.size() < n_obj) {
      const std::size_t c = rng.uniform_index(C);
      if (std::find(classes.begin(), classes.end(), c) == classes.end()) classes.push_back(c);
    }
    if (spec.bias.enabled) {
      const bool has_cause = std::find(classes.begin(), classes.end(), spec.bias.cause) != classes.end();
      const bool has_effect = std::find(classes.begin(), classes.end(), spec.bias.effect) != classes.end();
      if (has_cause && !has_effect && rng.uniform() < spec.bias.rate) {
        if (classes.size() == spec.max_objects) {
          // Replace some other object so the scene keeps its size bound.
          for (auto& c : classes)
            if (c != spec.bias.cause) {
              c = spec.bias.effect;
              break;
            }
        } else {
          classes.push_back(spec.bias.effect);
        }
      }
    }
    // Token placement: a seeded permutation of visual positions.
    std::vector<std::size_t> slots(spec.n_visual);
    for (std::size_t i = 0; i < slots.size(); ++i) slots[i] = i;
    for (std::size_t i = slots.size(); i > 1; --i) std::swap(slots[i - 1], slots[rng.uniform_index(i)]);
    std::size_t next = 0;
    Tensor feat({spec.n_visual, spec.d_model});
    for (std::size_t c : classes) {
      SceneObject obj;
      obj.class_id = c;
      obj.attributes = {rng.uniform_index(kAttributeCount)};
      for (std::size_t k = 0; k < spec.tokens_per_object; ++k) obj.tokens.push_back(slots[next++]);
      std::sort(obj.tokens.begin(), obj.tokens.end());
      for (std::size_t p : obj.tokens) {
        feat.at(p, lay.vis_class(c)) = 1.0f;
        feat.at(p, lay.attribute(obj.attributes[0])) = 0.5f;
      }
      scene.objects.push_back(std::move(obj));
    }
    if (spec.feature_noise > 0.0f) {
      Rng noise = root.child(s).child(1);
      for (std::size_t p = 0; p < spec.n_visual; ++p)
        for (std::size_t d = lay.visual_begin(); d < lay.visual_end(); ++d)
          feat.at(p, d) += float(noise.normal() * spec.feature_noise);
    }
    const auto present = scene.classes();
    for (std::size_t a : present) {
      ++world.frequency[a];
      for (std::size_t b : present)
        if (a != b) ++world.cooccurrence[a][b];
    }
    world.scenes.push_back(std::move(scene));
    world.features.push_back(std::move(feat));
  }
  return world;
}

enum class ProbeKind { random, popular, adversarial };

inline std::string to_string(ProbeKind k) {
  switch (k) {
    case ProbeKind::random: return "random";
    case ProbeKind::popular: return "popular";
    case ProbeKind::adversarial: return "adversarial";
  }
  return "?";
}

struct Probe {
  std::size_t scene = 0;
  std::size_t class_id = 0;
  std::vector<TokenId> question;
  bool expected_yes = false;
  ProbeKind kind = ProbeKind::random;
  // Negative probe about the bias effect in a scene holding the bias cause.
  bool planted = false;
};

using ProbeSet = std::vector<Probe>;

// One yes probe and one no probe per scene and kind. The "no" class is a
// seeded random absent class, the most frequent absent class, or the absent
// class co-occurring most with the scene's objects. Ties go to the lowest id.
inline ProbeSet build_probes(const World& world, std::uint64_t seed) {
  ProbeSet probes;
  const std::size_t C = world.spec.n_classes;
  const Rng root(seed);
  for (const auto& scene : world.scenes) {
    Rng rng = root.child(scene.id);
    const auto present = scene.classes();
    std::vector<std::size_t> absent;
    for (std::size_t c = 0; c < C; ++c)
      if (!scene.contains(c)) absent.push_back(c);
    auto best_by = [&](auto score) {
      std::size_t best = absent.front();
      for (std::size_t c : absent)
        if (score(c) > score(best)) best = c;
      return best;
    };
    for (ProbeKind kind : {ProbeKind::random, ProbeKind::popular, ProbeKind::adversarial}) {
      const std::size_t yes_class = present[rng.uniform_index(present.size())];
      std::size_t no_class = 0;
      switch (kind) {
        case ProbeKind::random: no_class = absent[rng.uniform_index(absent.size())]; break;
        case ProbeKind::popular: no_class = best_by([&](std::size_t c) { return world.frequency[c]; }); break;
        case ProbeKind::adversarial:
          no_class = best_by([&](std::size_t c) {
            std::uint64_t s = 0;
            for (std::size_t p : present) s += world.cooccurrence[p][c];
            return s;
          });
          break;
      }
      for (const bool yes : {true, false}) {
        Probe p;
        p.scene = scene.id;
        p.class_id = yes ? yes_class : no_class;
        p.question = {kIsThere, world.ontology.token(p.class_id)};
        p.expected_yes = yes;
        p.kind = kind;
        const auto& b = world.spec.bias;
        p.planted = !yes && b.enabled && p.class_id == b.effect && scene.contains(b.cause);
        probes.push_back(std::move(p));
      }
    }
  }
  return probes;
}

inline std::vector<TokenId> caption_prompt() { return {kDescribe}; }

inline MultimodalSequence make_sequence(const World& world, std::size_t scene, std::vector<TokenId> text) {
  return MultimodalSequence{world.features.at(scene), std::move(text)};
}

// ---------------------------------------------------------------------------
// Persistence: world JSON plus a companion ASCDW1 envelope with the features.

inline nlohmann::json world_to_json(const World& w) {
  nlohmann::json scenes = nlohmann::json::array();
  for (const auto& s : w.scenes) {
    nlohmann::json objs = nlohmann::json::array();
    for (const auto& o : s.objects)
      objs.push_back({{"class", o.class_id},
                      {"name", w.ontology.name(o.class_id)},
                      {"attributes", o.attributes},
                      {"tokens", o.tokens}});
    scenes.push_back({{"id", s.id}, {"seed", s.seed}, {"objects", objs}});
  }
  const auto& sp = w.spec;
  return {{"format", "ascd-world-1"},
          {"seed", sp.seed},
          {"ontology", w.ontology.names()},
          {"spec",
           {{"n_classes", sp.n_classes},
            {"n_scenes", sp.n_scenes},
            {"n_visual", sp.n_visual},
            {"d_model", sp.d_model},
            {"min_objects", sp.min_objects},
            {"max_objects", sp.max_objects},
            {"tokens_per_object", sp.tokens_per_object},
            {"feature_noise", sp.feature_noise},
            {"bias",
             {{"enabled", sp.bias.enabled},
              {"cause", sp.bias.cause},
              {"effect", sp.bias.effect},
              {"rate", sp.bias.rate}}}}},
          {"scenes", scenes},
          {"frequency", w.frequency},
          {"cooccurrence", w.cooccurrence}};
}

inline std::string encode_world_features(const World& w) {
  Tensor all({w.scenes.size(), w.spec.n_visual, w.spec.d_model});
  std::size_t off = 0;
  for (const auto& f : w.features) {
    std::copy(f.data.begin(), f.data.end(), all.data.begin() + std::ptrdiff_t(off));
    off += f.data.size();
  }
  return encode_envelope({{"format", "ascd-world-features"}}, {{"features", &all}});
}

inline World world_from_files(const nlohmann::json& j, const std::string& feature_bytes) {
  World w;
  try {
    detail::require(j.at("format") == "ascd-world-1", "world: unknown format");
    const auto& sp = j.at("spec");
    w.spec.n_classes = sp.at("n_classes");
    w.spec.n_scenes = sp.at("n_scenes");
    w.spec.n_visual = sp.at("n_visual");
    w.spec.d_model = sp.at("d_model");
    w.spec.min_objects = sp.at("min_objects");
    w.spec.max_objects = sp.at("max_objects");
    w.spec.tokens_per_object = sp.at("tokens_per_object");
    w.spec.feature_noise = sp.at("feature_noise");
    w.spec.seed = j.at("seed");
    const auto& b = sp.at("bias");
    w.spec.bias = {b.at("cause"), b.at("effect"), b.at("rate"), b.at("enabled")};
    w.ontology = Ontology(j.at("ontology").get<std::vector<std::string>>());
    for (const auto& s : j.at("scenes")) {
      SceneGraph g;
      g.id = s.at("id");
      g.seed = s.at("seed");
      for (const auto& o : s.at("objects"))
        g.objects.push_back({o.at("class"), o.at("attributes").get<std::vector<std::size_t>>(),
                             o.at("tokens").get<std::vector<std::size_t>>()});
      w.scenes.push_back(std::move(g));
    }
    w.frequency = j.at("frequency").get<std::vector<std::uint64_t>>();
    w.cooccurrence = j.at("cooccurrence").get<std::vector<std::vector<std::uint64_t>>>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("world: malformed JSON: ") + e.what());
  }
  const auto env = decode_envelope(feature_bytes);
  const Tensor& all = env.get("features");
  if (all.shape != std::vector<std::size_t>{w.scenes.size(), w.spec.n_visual, w.spec.d_model})
    throw IoError("world: feature tensor shape does not match the scene list");
  const std::size_t per = w.spec.n_visual * w.spec.d_model;
  for (std::size_t s = 0; s < w.scenes.size(); ++s) {
    Tensor f({w.spec.n_visual, w.spec.d_model});
    std::copy_n(all.data.begin() + std::ptrdiff_t(s * per), per, f.data.begin());
    w.features.push_back(std::move(f));
  }
  return w;
}

}  // namespace ascd::synth
