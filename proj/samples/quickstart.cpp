// Builds the constructed text-prior model and a matching world, profiles its
// heads, then captions a few scenes that contain a table with and without
// steering. The baseline tends to add a cup that is not there.

#include <iostream>

#include "ascd/ascd.hpp"

using namespace ascd;
using namespace ascd::synth;

int main() {
  const TextPriorSpec tp;
  const Weights w = build_text_prior_model(tp);
  const World world = generate_world(matching_world(tp, 60, 1));

  std::vector<MultimodalSequence> reference;
  for (std::size_t s = 0; s < 20; ++s) reference.push_back(make_sequence(world, s, caption_prompt()));
  ProfileConfig pc;
  pc.vote_k = 2;
  pc.kappa_tch = 2;
  pc.stop_tokens = {kEos};
  const auto profile = profile_heads(w, reference, pc);
  std::cout << "text-centric heads:";
  for (const auto& h : profile.selected.heads()) std::cout << " (" << h.layer << ',' << h.head << ')';
  std::cout << "\n\n";

  DecodeConfig plain;
  plain.max_new_tokens = 6;
  plain.stop_tokens = {kEos};
  DecodeConfig steered = plain;
  steered.method = Method::ascd;
  steered.steering.heads_pos = profile.selected;

  std::size_t shown = 0;
  for (const auto& scene : world.scenes) {
    if (!scene.contains(tp.cause) || scene.contains(tp.effect) || shown == 5) continue;
    ++shown;
    const auto seq = make_sequence(world, scene.id, caption_prompt());
    std::cout << "scene " << scene.id << " holds:";
    for (std::size_t c : scene.classes()) std::cout << ' ' << world.ontology.name(c);
    std::cout << "\n  original: " << world.ontology.decode(generate(w, seq, plain).tokens)
              << "\n  ascd:     " << world.ontology.decode(generate(w, seq, steered).tokens) << "\n";
  }
}
