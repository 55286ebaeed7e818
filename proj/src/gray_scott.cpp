#include "stpred/gray_scott.hpp"

#include <algorithm>
#include <cmath>

#include "stpred/errors.hpp"
#include "stpred/rng.hpp"

namespace stpred {

void GrayScottParams::validate() const {
  if (du < 0.0 || dv < 0.0)
    throw ConfigError("gray-scott: diffusion rates must be >= 0");
  if (dt <= 0.0) throw ConfigError("gray-scott: dt must be > 0");
  if (dt * std::max(du, dv) * 4.0 > 1.0)
    throw ConfigError("gray-scott: explicit scheme unstable, need dt*max(Du,Dv)*4 <= 1");
  if (steps_per_frame < 1)
    throw ConfigError("gray-scott: steps_per_frame must be >= 1");
  if (grid_h < 8 || grid_w < 8)
    throw ConfigError("gray-scott: grid must be at least 8x8");
}

GrayScottSim::GrayScottSim(const GrayScottParams& params, std::uint64_t seed)
    : p_(params) {
  p_.validate();
  const std::size_t n = std::size_t(p_.grid_h) * p_.grid_w;
  u_.assign(n, 1.0);
  v_.assign(n, 0.0);
  du_.assign(n, 0.0);
  dv_.assign(n, 0.0);

  // Three noisy square patches at seeded positions kick the system out of
  // the trivial fixed point.
  Rng rng(mix_seed(seed, 0x6772617953636f74ULL));  // "grayScot"
  const int side = std::max(4, std::min(p_.grid_h, p_.grid_w) / 8);
  for (int patch = 0; patch < 3; ++patch) {
    const int top = int(rng.range(0, p_.grid_h - side));
    const int left = int(rng.range(0, p_.grid_w - side));
    for (int i = top; i < top + side; ++i) {
      for (int j = left; j < left + side; ++j) {
        const std::size_t at = std::size_t(i) * p_.grid_w + j;
        u_[at] = 0.50 + 0.02 * (rng.uniform() - 0.5);
        v_[at] = 0.25 + 0.02 * (rng.uniform() - 0.5);
      }
    }
  }
}

void GrayScottSim::step() {
  const int h = p_.grid_h, w = p_.grid_w;
  for (int i = 0; i < h; ++i) {
    const int up = (i + h - 1) % h, down = (i + 1) % h;
    for (int j = 0; j < w; ++j) {
      const int left = (j + w - 1) % w, right = (j + 1) % w;
      const std::size_t at = std::size_t(i) * w + j;
      const double uc = u_[at], vc = v_[at];
      const double lap_u = u_[std::size_t(i) * w + left] +
                           u_[std::size_t(i) * w + right] +
                           u_[std::size_t(up) * w + j] +
                           u_[std::size_t(down) * w + j] - 4.0 * uc;
      const double lap_v = v_[std::size_t(i) * w + left] +
                           v_[std::size_t(i) * w + right] +
                           v_[std::size_t(up) * w + j] +
                           v_[std::size_t(down) * w + j] - 4.0 * vc;
      const double uvv = uc * vc * vc;
      du_[at] = p_.du * lap_u - uvv + p_.feed * (1.0 - uc);
      dv_[at] = p_.dv * lap_v + uvv - (p_.feed + p_.kill) * vc;
    }
  }
  double checksum = 0.0;
  for (std::size_t at = 0; at < u_.size(); ++at) {
    u_[at] += p_.dt * du_[at];
    v_[at] += p_.dt * dv_[at];
    checksum += u_[at] + v_[at];
  }
  if (!std::isfinite(checksum))
    throw SimulationDivergedError("gray-scott: state became non-finite");
}

double GrayScottSim::sum_u() const {
  double s = 0.0;
  for (double x : u_) s += x;
  return s;
}

double GrayScottSim::spatial_variance_u() const {
  const double mean = sum_u() / double(u_.size());
  double var = 0.0;
  for (double x : u_) var += (x - mean) * (x - mean);
  return var / double(u_.size());
}

FrameSequence GrayScottSim::run(int frames) {
  if (frames < 2) throw ConfigError("gray-scott: need at least 2 frames");
  FrameSequence seq(std::size_t(frames), 2, std::size_t(p_.grid_h),
                    std::size_t(p_.grid_w));
  const std::size_t plane = std::size_t(p_.grid_h) * p_.grid_w;
  for (int t = 0; t < frames; ++t) {
    if (t > 0)
      for (int s = 0; s < p_.steps_per_frame; ++s) step();
    float* fu = seq.frame(std::size_t(t));
    float* fv = fu + plane;
    for (std::size_t i = 0; i < plane; ++i) {
      fu[i] = float(std::clamp(u_[i], 0.0, 1.0));
      fv[i] = float(std::clamp(v_[i], 0.0, 1.0));
    }
  }
  return seq;
}

FrameSequence simulate_gray_scott(const GrayScottParams& params,
                                  std::uint64_t seed, int frames,
                                  int warmup_steps) {
  GrayScottSim sim(params, seed);
  for (int s = 0; s < warmup_steps; ++s) sim.step();
  return sim.run(frames);
}

}  // namespace stpred
