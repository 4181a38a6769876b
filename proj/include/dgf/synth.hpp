#pragma once

#include <cstdint>
#include <string>

namespace dgf {

/// Parameters of the procedural glyph corpus. Every content id names a
/// stroke skeleton shared by all styles; each style renders the shared
/// skeletons through its own geometric deformation (affine + curvature),
/// stroke thickness, and tip treatment, so strokes correspond across styles
/// by construction. Style 0 renders with neutral parameters and acts as the
/// canonical source style.
struct SynthSpec {
  int64_t num_styles = 3;
  int64_t num_contents = 20;
  int64_t image_size = 80;
  uint64_t seed = 7;
  double test_fraction = 0.5;
};

/// Renders the corpus under root as style_<idx>/content_<idx>.pgm plus a
/// manifest.txt (styles, contents, split membership, seed). The output
/// directory must be empty or absent; identical (seed, spec) produce
/// byte-identical trees.
void synth_corpus(const SynthSpec& spec, const std::string& root);

}  // namespace dgf
