#pragma once

#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "rpd/nn.hpp"

namespace rpd {

constexpr int kInputSize = 224;
constexpr int kEmbedDim = 128;

// Desk-scale backbones behind the detector's backbone_id. Each takes a
// 3 x 224 x 224 input and ends GAP -> Dense(2, zero-init), so an untrained
// detector outputs (0.5, 0.5).
std::vector<std::string> backbone_ids();
std::unique_ptr<Sequential> make_backbone(std::string_view backbone_id, Rng& rng);

// Embedding trunk for the toy face model: conv stack to 64 x 7 x 7, then a
// dense projection to kEmbedDim. No normalization (cosine handles scale).
std::unique_ptr<Sequential> make_embed_trunk(Rng& rng);

}  // namespace rpd
