#include "stpred/blobs.hpp"

#include <algorithm>
#include <cmath>

#include "stpred/errors.hpp"
#include "stpred/rng.hpp"

namespace stpred {

void BlobSceneParams::validate() const {
  if (n_blobs < 1) throw ConfigError("blobs: need at least one blob");
  if (!(radius > 0.0) || radius >= std::min(grid_h, grid_w) / 2.0)
    throw ConfigError("blobs: radius must be in (0, min(H,W)/2)");
  if (speed < 0.0) throw ConfigError("blobs: speed must be >= 0");
  if (grid_h < 8 || grid_w < 8) throw ConfigError("blobs: grid must be >= 8x8");
  // The discrete reflection rule assumes one bounce per axis per frame.
  if (speed >= std::min(grid_h, grid_w) - 2.0 * radius)
    throw ConfigError("blobs: speed too large for the playfield");
}

std::vector<BlobState> initial_blobs(const BlobSceneParams& params) {
  params.validate();
  Rng rng(mix_seed(params.seed, 0x626c6f6273ULL));  // "blobs"
  std::vector<BlobState> blobs;
  blobs.reserve(std::size_t(params.n_blobs));
  for (int b = 0; b < params.n_blobs; ++b) {
    BlobState s;
    s.y = rng.uniform(params.radius, params.grid_h - params.radius);
    s.x = rng.uniform(params.radius, params.grid_w - params.radius);
    const double heading = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
    s.vy = params.speed * std::sin(heading);
    s.vx = params.speed * std::cos(heading);
    blobs.push_back(s);
  }
  return blobs;
}

namespace {

// One blob axis: closed-form position from the last reflection anchor.
struct AxisTrack {
  double anchor;
  double v;
  int anchor_t = 0;
  double lo, hi;

  double at(int t) const { return anchor + double(t - anchor_t) * v; }

  // Advance bookkeeping from frame t-1 to t; reflect if the next center
  // would leave [lo, hi].
  void advance(int t) {
    const double next = at(t);
    if (next < lo || next > hi) {
      anchor = at(t - 1);
      anchor_t = t - 1;
      v = -v;
    }
  }
};

}  // namespace

std::vector<std::vector<BlobState>> blob_tracks(const BlobSceneParams& params,
                                                int frames) {
  const std::vector<BlobState> init = initial_blobs(params);
  std::vector<AxisTrack> ys, xs;
  for (const BlobState& s : init) {
    ys.push_back({s.y, s.vy, 0, params.radius, params.grid_h - params.radius});
    xs.push_back({s.x, s.vx, 0, params.radius, params.grid_w - params.radius});
  }

  std::vector<std::vector<BlobState>> tracks(static_cast<std::size_t>(frames));
  for (int t = 0; t < frames; ++t) {
    tracks[std::size_t(t)].resize(init.size());
    for (std::size_t b = 0; b < init.size(); ++b) {
      if (t > 0) {
        ys[b].advance(t);
        xs[b].advance(t);
      }
      tracks[std::size_t(t)][b] = {ys[b].at(t), xs[b].at(t), ys[b].v, xs[b].v};
    }
  }
  return tracks;
}

FrameSequence simulate_moving_blobs(const BlobSceneParams& params,
                                    int frames) {
  if (frames < 2) throw ConfigError("blobs: need at least 2 frames");
  const auto tracks = blob_tracks(params, frames);

  FrameSequence seq(std::size_t(frames), 1, std::size_t(params.grid_h),
                    std::size_t(params.grid_w));
  seq.data.zero();
  const double sigma = params.radius / 2.0;
  const double cutoff = 4.0 * sigma;
  for (int t = 0; t < frames; ++t) {
    float* frame = seq.frame(std::size_t(t));
    for (const BlobState& s : tracks[std::size_t(t)]) {
      const int i0 = std::max(0, int(std::floor(s.y - cutoff)));
      const int i1 = std::min(params.grid_h - 1, int(std::ceil(s.y + cutoff)));
      const int j0 = std::max(0, int(std::floor(s.x - cutoff)));
      const int j1 = std::min(params.grid_w - 1, int(std::ceil(s.x + cutoff)));
      for (int i = i0; i <= i1; ++i) {
        for (int j = j0; j <= j1; ++j) {
          const double dy = double(i) - s.y, dx = double(j) - s.x;
          const double g =
              std::exp(-(dy * dy + dx * dx) / (2.0 * sigma * sigma));
          float& px = frame[std::size_t(i) * params.grid_w + j];
          px = float(std::min(1.0, double(px) + g));
        }
      }
    }
  }
  return seq;
}

}  // namespace stpred
