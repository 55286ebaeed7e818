#pragma once

// Fusion of the global and local expert features and the deconvolutional
// decoder that turns the fused map into the K predicted frames.

#include <vector>

#include "stpred/crops.hpp"
#include "stpred/diff.hpp"
#include "stpred/errors.hpp"
#include "stpred/expert.hpp"

namespace stpred {

// ---------------------------------------------------------------------------
// fuse: every local feature map is upsampled (nearest-neighbour) to the
// global map's spatial size, then fused = global + sum of locals. The crop
// boxes are accepted so a placement-based fusion could slot in later; the
// broadcast fusion ignores them.
// ---------------------------------------------------------------------------

template <typename T>
struct FuseContext {
  std::vector<DiffArray<T>> upsampled;
  DiffArray<T> fused;
};

template <typename T>
DiffArray<T>& fuse_forward(DiffArray<T>& global_feat,
                           std::vector<DiffArray<T>*> local_feats,
                           const std::vector<CropBox>& /*boxes*/,
                           FuseContext<T>& ctx) {
  const std::size_t h = global_feat.value.dim(2);
  const std::size_t w = global_feat.value.dim(3);
  ctx.fused = DiffArray<T>(global_feat.value);
  ctx.upsampled.clear();
  for (DiffArray<T>* local : local_feats) {
    if (local->value.dim(1) != global_feat.value.dim(1))
      throw DimensionError("fuse: channel mismatch between pipelines");
    if (local->value.dim(0) != global_feat.value.dim(0))
      throw DimensionError("fuse: step-count mismatch between pipelines");
    ctx.upsampled.push_back(upsample_nearest(*local, h, w));
    axpy(T(1), ctx.upsampled.back().value, ctx.fused.value);
  }
  return ctx.fused;
}

template <typename T>
void fuse_backward(DiffArray<T>& global_feat,
                   std::vector<DiffArray<T>*> local_feats,
                   FuseContext<T>& ctx) {
  axpy(T(1), ctx.fused.grad, global_feat.grad);
  for (std::size_t i = 0; i < local_feats.size(); ++i) {
    axpy(T(1), ctx.fused.grad, ctx.upsampled[i].grad);
    upsample_nearest_backward(*local_feats[i], ctx.upsampled[i].grad);
  }
}

// ---------------------------------------------------------------------------
// Decoder.
// ---------------------------------------------------------------------------

enum class DecoderForm { kDC, kCLDC, kCLDCR };

struct DecoderConfig {
  DecoderForm form = DecoderForm::kDC;
  int depth = 3;
  std::vector<int> channels;  // DC output width per block

  void validate() const {
    if (depth < 2 || depth > 6)
      throw ConfigError("decoder: depth must be in [2, 6]");
    if (int(channels.size()) != depth)
      throw ConfigError("decoder: need one channel width per block");
  }
};

template <typename T>
struct DecoderBlockParams {
  ConvSpec<T> cl;  // conv+relu, present for CL+DC and CL+DC+R
  ConvSpec<T> dc;  // deconv+relu
};

template <typename T>
struct DecoderParams {
  std::vector<DecoderBlockParams<T>> blocks;
  ConvSpec<T> head;  // 1x1 over time-as-channels: T*c_last -> K*C
  int out_frames = 0;
  int out_channels = 0;
};

// in: fused map (steps, in_channels, feat_h, feat_w); out: (K, C, H, W).
// The first log2(out_h/feat_h) blocks upsample by 2, the rest keep size.
template <typename T>
DecoderParams<T> make_decoder_params(const DecoderConfig& cfg,
                                     int in_channels, int steps, int feat_h,
                                     int feat_w, int out_frames,
                                     int out_channels, int out_h, int out_w,
                                     Rng& rng) {
  cfg.validate();
  const int m_h = detail::doublings(feat_h, out_h);
  const int m_w = detail::doublings(feat_w, out_w);
  if (m_h < 0 || m_w < 0 || m_h != m_w)
    throw ConfigError("decoder: output resolution unreachable by doubling");
  if (m_h > cfg.depth)
    throw ConfigError("decoder: depth too small for the resolution gap");

  DecoderParams<T> p;
  int cin = in_channels;
  for (int b = 0; b < cfg.depth; ++b) {
    DecoderBlockParams<T> blk;
    const int cout = cfg.channels[std::size_t(b)];
    if (cfg.form != DecoderForm::kDC)
      blk.cl = detail::make_conv<T>(cin, cin, 3, 1, 1, rng);
    if (b < m_h)
      blk.dc = detail::make_deconv<T>(cin, cout, 4, 2, 1, rng);
    else
      blk.dc = detail::make_deconv<T>(cin, cout, 3, 1, 1, rng);
    p.blocks.push_back(std::move(blk));
    cin = cout;
  }
  p.head = detail::make_conv<T>(steps * cin, out_frames * out_channels, 1, 1,
                                0, rng);
  p.out_frames = out_frames;
  p.out_channels = out_channels;
  return p;
}

template <typename T>
struct DecoderContext {
  DiffArray<T> input;
  std::vector<DiffArray<T>> cl_out, cl_act, res_sum;
  std::vector<DiffArray<T>> dc_out, dc_act;
  DiffArray<T> stacked;   // (1, T*c_last, H, W) view of the last activation
  DiffArray<T> head_out;  // (1, K*C, H, W)
  DiffArray<T> pred;      // (K, C, H, W), sigmoid applied
};

namespace detail {

template <typename T>
Tensor<T> reshaped(const Tensor<T>& x, std::vector<std::size_t> shape) {
  Tensor<T> out(std::move(shape));
  if (out.size() != x.size())
    throw DimensionError("reshape: element count mismatch");
  std::copy_n(x.data(), x.size(), out.data());
  return out;
}

}  // namespace detail

template <typename T>
DiffArray<T>& decoder_forward(const Tensor<T>& fused,
                              const DecoderConfig& cfg, DecoderParams<T>& p,
                              DecoderContext<T>& ctx) {
  ctx.input = DiffArray<T>(fused);
  ctx.cl_out.clear();
  ctx.cl_act.clear();
  ctx.res_sum.clear();
  ctx.dc_out.clear();
  ctx.dc_act.clear();

  DiffArray<T>* cur = &ctx.input;
  for (int b = 0; b < cfg.depth; ++b) {
    auto& blk = p.blocks[std::size_t(b)];
    if (cfg.form == DecoderForm::kDC) {
      ctx.cl_out.emplace_back();
      ctx.cl_act.emplace_back();
      ctx.res_sum.emplace_back();
    } else {
      ctx.cl_out.push_back(conv2d(*cur, blk.cl));
      ctx.cl_act.push_back(relu(ctx.cl_out.back()));
      if (cfg.form == DecoderForm::kCLDCR) {
        DiffArray<T> sum(cur->value);
        axpy(T(1), ctx.cl_act.back().value, sum.value);
        ctx.res_sum.push_back(std::move(sum));
      } else {
        ctx.res_sum.emplace_back();
      }
    }
    DiffArray<T>* dc_in = cur;
    if (cfg.form == DecoderForm::kCLDC) dc_in = &ctx.cl_act.back();
    if (cfg.form == DecoderForm::kCLDCR) dc_in = &ctx.res_sum.back();
    ctx.dc_out.push_back(deconv2d(*dc_in, blk.dc));
    ctx.dc_act.push_back(relu(ctx.dc_out.back()));
    cur = &ctx.dc_act.back();
  }

  const std::size_t steps = cur->value.dim(0), ch = cur->value.dim(1);
  const std::size_t h = cur->value.dim(2), w = cur->value.dim(3);
  ctx.stacked =
      DiffArray<T>(detail::reshaped(cur->value, {1, steps * ch, h, w}));
  ctx.head_out = conv2d(ctx.stacked, p.head);
  DiffArray<T> sig = sigmoid(ctx.head_out);
  ctx.pred = DiffArray<T>(detail::reshaped(
      sig.value, {std::size_t(p.out_frames), std::size_t(p.out_channels), h,
                  w}));
  return ctx.pred;
}

template <typename T>
void decoder_backward(const DecoderConfig& cfg, DecoderParams<T>& p,
                      DecoderContext<T>& ctx) {
  const Tensor<T> ghead =
      detail::reshaped(ctx.pred.grad, ctx.head_out.value.shape());
  // Through the sigmoid: y*(1-y) with y recomputed from head_out.
  {
    const T* hv = ctx.head_out.value.data();
    const T* gy = ghead.data();
    T* gx = ctx.head_out.grad.data();
    for (std::size_t i = 0; i < ghead.size(); ++i) {
      const T y = T(1) / (T(1) + std::exp(-hv[i]));
      gx[i] += gy[i] * y * (T(1) - y);
    }
  }
  conv2d_backward(ctx.stacked, p.head, ctx.head_out.grad);

  DiffArray<T>& last = ctx.dc_act.back();
  axpy(T(1), detail::reshaped(ctx.stacked.grad, last.value.shape()),
       last.grad);

  for (int b = cfg.depth - 1; b >= 0; --b) {
    auto& blk = p.blocks[std::size_t(b)];
    DiffArray<T>* cur =
        b == 0 ? &ctx.input : &ctx.dc_act[std::size_t(b - 1)];
    DiffArray<T>* dc_in = cur;
    if (cfg.form == DecoderForm::kCLDC) dc_in = &ctx.cl_act[std::size_t(b)];
    if (cfg.form == DecoderForm::kCLDCR) dc_in = &ctx.res_sum[std::size_t(b)];

    relu_backward(ctx.dc_out[std::size_t(b)], ctx.dc_act[std::size_t(b)].grad);
    deconv2d_backward(*dc_in, blk.dc, ctx.dc_out[std::size_t(b)].grad);

    if (cfg.form == DecoderForm::kCLDC) {
      relu_backward(ctx.cl_out[std::size_t(b)],
                    ctx.cl_act[std::size_t(b)].grad);
      conv2d_backward(*cur, blk.cl, ctx.cl_out[std::size_t(b)].grad);
    } else if (cfg.form == DecoderForm::kCLDCR) {
      // res_sum = cur + relu(conv(cur))
      axpy(T(1), ctx.res_sum[std::size_t(b)].grad, cur->grad);
      axpy(T(1), ctx.res_sum[std::size_t(b)].grad,
           ctx.cl_act[std::size_t(b)].grad);
      relu_backward(ctx.cl_out[std::size_t(b)],
                    ctx.cl_act[std::size_t(b)].grad);
      conv2d_backward(*cur, blk.cl, ctx.cl_out[std::size_t(b)].grad);
    }
  }
}

}  // namespace stpred
