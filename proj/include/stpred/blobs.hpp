#pragma once

#include <cstdint>
#include <vector>

#include "stpred/frames.hpp"

namespace stpred {

// Gaussian-profile discs translating at constant speed and reflecting off
// the walls of the frame.
struct BlobSceneParams {
  int n_blobs = 2;
  double radius = 6.0;  // pixels; also the reflection margin from each wall
  double speed = 1.5;   // pixels per frame
  int grid_h = 64;
  int grid_w = 64;
  std::uint64_t seed = 0;

  void validate() const;
};

struct BlobState {
  double y, x;    // center
  double vy, vx;  // per-frame velocity
};

// Seeded initial centers and velocities (centers uniform inside the wall
// margins, headings uniform, |v| = speed).
std::vector<BlobState> initial_blobs(const BlobSceneParams& params);

// Per-frame centers. Between reflections the position is computed in closed
// form, anchor + (t - t_anchor) * v, so unobstructed motion is exactly
// linear; a velocity component negates whenever the next center would leave
// [radius, dim - radius].
std::vector<std::vector<BlobState>> blob_tracks(const BlobSceneParams& params,
                                                int frames);

// Renders the tracks to a single-channel sequence in [0, 1].
FrameSequence simulate_moving_blobs(const BlobSceneParams& params, int frames);

}  // namespace stpred
