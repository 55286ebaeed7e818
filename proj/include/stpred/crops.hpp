#pragma once

#include <utility>
#include <vector>

#include "stpred/frames.hpp"
#include "stpred/rng.hpp"

namespace stpred {

struct CropConfig {
  int n_crops = 3;
  int crop_out = 32;
  double max_area_fraction = 0.5;  // box area must stay strictly below this

  void validate() const;
};

struct CropBox {
  int top = 0;
  int left = 0;
  int height = 0;
  int width = 0;
};

// Bilinear resize (half-pixel centers) of every frame/channel slice.
FrameSequence resize_bilinear(const FrameSequence& seq, int out_h, int out_w);

// Draws n_crops square boxes (side uniform in [crop_out,
// floor(sqrt(max_area_fraction) * min(H, W)) - 1], position uniform over
// valid placements), applies each box to all T frames and resizes the crop
// to crop_out^2. Deterministic given the rng state.
std::pair<std::vector<FrameSequence>, std::vector<CropBox>> random_local_crops(
    const FrameSequence& seq, const CropConfig& cfg, Rng& rng);

}  // namespace stpred
