// Writes the constructed text-prior model as an ASCDW1 weight file, for use
// with `ascd --config` via model.path.
//
//   export_model [path]   (default: text_prior.ascdw)

#include <iostream>

#include "ascd/ascd.hpp"

int main(int argc, char** argv) {
  const std::string path = argc > 1 ? argv[1] : "text_prior.ascdw";
  const auto w = ascd::synth::build_text_prior_model({});
  ascd::save_weights(path, w);
  const auto back = ascd::load_weights(path);
  std::cout << "wrote " << path << " (" << back.config.n_layers << " layer, " << back.config.n_heads
            << " heads, d_model " << back.config.d_model << ")\n";
}
