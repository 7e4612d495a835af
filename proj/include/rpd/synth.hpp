#pragma once

#include <string>

#include "rpd/tensor.hpp"

namespace rpd {

// Procedural face-like image for (identity, view). Identity fixes the base
// pattern (skin tone, geometry, hair, background); view applies photometric
// and small geometric jitter. Deterministic in (seed, identity, view).
Tensor synth_face(uint64_t seed, int identity, int view, int size = 224);

struct SynthConfig {
  int n_identities = 50;
  int views_per_identity = 1;
  int size = 224;
};

// Writes images plus a manifest into dir; returns the manifest path.
// Identities are named id000, id001, ...; image ids are id000-v00 etc.
std::string synth_dataset(const std::string& dir, const SynthConfig& cfg, uint64_t seed);

}  // namespace rpd
