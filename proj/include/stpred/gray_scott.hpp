#pragma once

#include <cstdint>
#include <vector>

#include "stpred/frames.hpp"

namespace stpred {

// Two-species reaction-diffusion integrator (explicit Euler, periodic
// 5-point Laplacian). Grid units: the Laplacian carries no 1/h^2 factor, so
// the explicit-scheme stability bound is dt * max(Du, Dv) * 4 <= 1.
struct GrayScottParams {
  double du = 0.16;   // diffusion rate of u
  double dv = 0.08;   // diffusion rate of v
  double feed = 0.055;
  double kill = 0.062;
  double dt = 1.0;
  int steps_per_frame = 10;
  int grid_h = 64;
  int grid_w = 64;

  void validate() const;
};

// Stepping core, exposed so tests can probe per-step conservation. State is
// kept in double; only exported frames are clamped/cast to float.
class GrayScottSim {
 public:
  GrayScottSim(const GrayScottParams& params, std::uint64_t seed);

  // One explicit Euler step. Throws SimulationDivergedError on non-finite
  // state.
  void step();

  // Exports `frames` snapshots, advancing steps_per_frame steps between
  // consecutive ones. Values are clamped to [0, 1] on export only.
  FrameSequence run(int frames);

  const std::vector<double>& u() const { return u_; }
  const std::vector<double>& v() const { return v_; }
  std::vector<double>& mutable_u() { return u_; }
  std::vector<double>& mutable_v() { return v_; }
  double sum_u() const;
  double spatial_variance_u() const;

 private:
  GrayScottParams p_;
  std::vector<double> u_, v_, du_, dv_;
};

// Runs steps_per_frame Euler steps between exported frames (after
// warmup_steps initial steps) and returns a 2-channel (u, v) sequence with
// values clamped to [0, 1]. Deterministic given (params, seed).
FrameSequence simulate_gray_scott(const GrayScottParams& params,
                                  std::uint64_t seed, int frames,
                                  int warmup_steps = 0);

}  // namespace stpred
