#pragma once

// Stacked Conv2d -> LayerNorm -> Relu encoder blocks, applied per frame with
// the time axis carried through as the batch axis.

#include <cmath>
#include <vector>

#include "stpred/diff.hpp"
#include "stpred/errors.hpp"
#include "stpred/rng.hpp"

namespace stpred {

inline constexpr double kLayerNormEps = 1e-5;

struct EncoderConfig {
  int n_blocks = 2;            // 2 | 4 | 8 for S | B | L
  int kernel = 7;              // 7 global, 3 local
  std::vector<int> channels;   // output width per block
  int down_floor = 8;          // minimum spatial side

  void validate() const {
    if (n_blocks != 2 && n_blocks != 4 && n_blocks != 8)
      throw ConfigError("encoder: n_blocks must be 2, 4 or 8");
    if (kernel < 1 || kernel % 2 == 0)
      throw ConfigError("encoder: kernel must be odd");
    if (int(channels.size()) != n_blocks)
      throw ConfigError("encoder: need one channel width per block");
    if (down_floor < 1) throw ConfigError("encoder: down_floor must be >= 1");
  }
};

// Stride-2 for the first min(N_e, floor(log2(side/down_floor))) blocks,
// stride-1 afterwards.
inline std::vector<int> encoder_strides(const EncoderConfig& cfg, int in_h,
                                        int in_w) {
  cfg.validate();
  const int side = std::min(in_h, in_w);
  int halvings = 0;
  while (halvings < cfg.n_blocks &&
         (side >> (halvings + 1)) >= cfg.down_floor)
    ++halvings;
  std::vector<int> strides(std::size_t(cfg.n_blocks), 1);
  for (int i = 0; i < halvings; ++i) strides[std::size_t(i)] = 2;
  return strides;
}

// Output spatial size after all blocks (conv formula with pad = (k-1)/2).
inline std::pair<int, int> encoder_output_hw(const EncoderConfig& cfg,
                                             int in_h, int in_w) {
  const auto strides = encoder_strides(cfg, in_h, in_w);
  const int pad = (cfg.kernel - 1) / 2;
  int h = in_h, w = in_w;
  for (int s : strides) {
    h = (h + 2 * pad - cfg.kernel) / s + 1;
    w = (w + 2 * pad - cfg.kernel) / s + 1;
    if (h < 1 || w < 1) throw ConfigError("encoder: spatial underflow");
  }
  return {h, w};
}

template <typename T>
struct EncoderBlockParams {
  ConvSpec<T> conv;
  DiffArray<T> ln_gain;
  DiffArray<T> ln_bias;
};

template <typename T>
struct EncoderParams {
  std::vector<EncoderBlockParams<T>> blocks;
};

// Strides are baked in from the planned input resolution so forward passes
// never touch the (shared) parameter structs.
template <typename T>
EncoderParams<T> make_encoder_params(const EncoderConfig& cfg,
                                     int in_channels, int in_h, int in_w,
                                     Rng& rng) {
  cfg.validate();
  const auto strides = encoder_strides(cfg, in_h, in_w);
  EncoderParams<T> p;
  int cin = in_channels;
  for (int b = 0; b < cfg.n_blocks; ++b) {
    const int cout = cfg.channels[std::size_t(b)];
    EncoderBlockParams<T> blk;
    blk.conv.kernel = DiffArray<T>(std::vector<std::size_t>{
        std::size_t(cout), std::size_t(cin), std::size_t(cfg.kernel),
        std::size_t(cfg.kernel)});
    // He-uniform keeps activation scale through the relu stack.
    const T bound =
        std::sqrt(T(6) / (T(cin) * T(cfg.kernel) * T(cfg.kernel)));
    for (std::size_t i = 0; i < blk.conv.kernel.value.size(); ++i)
      blk.conv.kernel.value[i] = T(rng.uniform(-double(bound), double(bound)));
    blk.conv.bias = DiffArray<T>(std::vector<std::size_t>{std::size_t(cout)});
    blk.conv.stride = strides[std::size_t(b)];
    blk.conv.pad = (cfg.kernel - 1) / 2;
    blk.ln_gain = DiffArray<T>(Tensor<T>({std::size_t(cout)}, T(1)));
    blk.ln_bias = DiffArray<T>(std::vector<std::size_t>{std::size_t(cout)});
    p.blocks.push_back(std::move(blk));
    cin = cout;
  }
  return p;
}

// Per-call activations kept for the backward pass.
template <typename T>
struct EncoderContext {
  DiffArray<T> input;
  std::vector<DiffArray<T>> conv_out;
  std::vector<DiffArray<T>> ln_out;
  std::vector<DiffArray<T>> act_out;
  std::vector<LayerNormCache<T>> ln_cache;
};

// x is (T, C, H, W); returns the final activation (the latent map). The
// context owns every intermediate, including the output.
template <typename T>
DiffArray<T>& encoder_forward(const Tensor<T>& x, const EncoderConfig& cfg,
                              EncoderParams<T>& p, EncoderContext<T>& ctx) {
  ctx.input = DiffArray<T>(x);
  ctx.conv_out.clear();
  ctx.ln_out.clear();
  ctx.act_out.clear();
  ctx.ln_cache.assign(std::size_t(cfg.n_blocks), {});

  for (int b = 0; b < cfg.n_blocks; ++b) {
    DiffArray<T>& in = b == 0 ? ctx.input : ctx.act_out.back();
    auto& blk = p.blocks[std::size_t(b)];
    ctx.conv_out.push_back(conv2d(in, blk.conv));
    ctx.ln_out.push_back(layer_norm(ctx.conv_out.back(), blk.ln_gain,
                                    blk.ln_bias, T(kLayerNormEps),
                                    &ctx.ln_cache[std::size_t(b)]));
    ctx.act_out.push_back(relu(ctx.ln_out.back()));
  }
  if (!ctx.act_out.back().value.all_finite())
    throw TrainingDivergedError("encoder: non-finite activation");
  return ctx.act_out.back();
}

// Consumes the gradient already accumulated in the final activation of ctx
// and pushes it into the parameters and ctx.input.grad.
template <typename T>
void encoder_backward(const EncoderConfig& cfg, EncoderParams<T>& p,
                      EncoderContext<T>& ctx) {
  for (int b = cfg.n_blocks - 1; b >= 0; --b) {
    auto& blk = p.blocks[std::size_t(b)];
    relu_backward(ctx.ln_out[std::size_t(b)],
                  ctx.act_out[std::size_t(b)].grad);
    layer_norm_backward(ctx.conv_out[std::size_t(b)], blk.ln_gain,
                        blk.ln_bias, ctx.ln_cache[std::size_t(b)],
                        ctx.ln_out[std::size_t(b)].grad);
    DiffArray<T>& in = b == 0 ? ctx.input : ctx.act_out[std::size_t(b - 1)];
    conv2d_backward(in, blk.conv, ctx.conv_out[std::size_t(b)].grad);
  }
}

}  // namespace stpred
