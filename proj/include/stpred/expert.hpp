#pragma once

// General expert components: a conv/deconv stack that projects latent maps
// to a common semantic space and estimates per-transition flow fields, plus
// the linear projection of the pre-expert features and the warping loss.
//
// Flow convention: channel 0 (u) displaces rows, channel 1 (v) displaces
// columns, i.e. warped(i, j) = next(i + u(i,j), j + v(i,j)). Note most flow
// literature uses the opposite assignment.

#include <cmath>
#include <vector>

#include "stpred/diff.hpp"
#include "stpred/errors.hpp"
#include "stpred/rng.hpp"

namespace stpred {

struct ExpertConfig {
  int kernel = 7;         // 7 global, 3 local
  int hidden = 16;        // conv-stack width
  int proj_channels = 16; // C-tilde of the projected features
  int feat_h = 16;        // target semantic resolution (H~, W~)
  int feat_w = 16;

  void validate() const {
    if (kernel < 1 || kernel % 2 == 0)
      throw ConfigError("expert: kernel must be odd");
    if (hidden < 1 || proj_channels < 1)
      throw ConfigError("expert: channel widths must be >= 1");
    if (feat_h < 1 || feat_w < 1)
      throw ConfigError("expert: target resolution must be >= 1");
  }
};

namespace detail {

inline int halved(int side) { return side >= 2 ? (side + 1) / 2 : 1; }

// Number of exact doublings from `from` up to `to`; -1 if unreachable.
inline int doublings(int from, int to) {
  int m = 0;
  while (from < to) {
    from *= 2;
    ++m;
  }
  return from == to ? m : -1;
}

template <typename T>
ConvSpec<T> make_conv(int cin, int cout, int k, int stride, int pad,
                      Rng& rng) {
  ConvSpec<T> s;
  s.kernel = DiffArray<T>(std::vector<std::size_t>{
      std::size_t(cout), std::size_t(cin), std::size_t(k), std::size_t(k)});
  const double bound = std::sqrt(6.0 / (double(cin) * k * k));
  for (std::size_t i = 0; i < s.kernel.value.size(); ++i)
    s.kernel.value[i] = T(rng.uniform(-bound, bound));
  s.bias = DiffArray<T>(std::vector<std::size_t>{std::size_t(cout)});
  s.stride = stride;
  s.pad = pad;
  return s;
}

// Deconv weights are stored (in_ch, out_ch, k, k).
template <typename T>
ConvSpec<T> make_deconv(int cin, int cout, int k, int stride, int pad,
                        Rng& rng) {
  ConvSpec<T> s;
  s.kernel = DiffArray<T>(std::vector<std::size_t>{
      std::size_t(cin), std::size_t(cout), std::size_t(k), std::size_t(k)});
  const double bound = std::sqrt(6.0 / (double(cin) * k * k));
  for (std::size_t i = 0; i < s.kernel.value.size(); ++i)
    s.kernel.value[i] = T(rng.uniform(-bound, bound));
  s.bias = DiffArray<T>(std::vector<std::size_t>{std::size_t(cout)});
  s.stride = stride;
  s.pad = pad;
  return s;
}

}  // namespace detail

template <typename T>
struct ExpertParams {
  ConvSpec<T> conv1, conv2;          // stride-2 extractors, + relu
  std::vector<ConvSpec<T>> deconvs;  // 4x4 stride-2 upsamplers, + relu
  ConvSpec<T> to_feat;               // 3x3 to proj_channels, linear
  ConvSpec<T> flow_head;             // 3x3, 2*proj_channels -> 2, linear
};

// The deconv count follows from the conv-stack output size; in_h/in_w is the
// latent resolution this expert will consume.
template <typename T>
ExpertParams<T> make_expert_params(const ExpertConfig& cfg, int in_channels,
                                   int in_h, int in_w, Rng& rng) {
  cfg.validate();
  const int pad = (cfg.kernel - 1) / 2;
  ExpertParams<T> p;
  p.conv1 = detail::make_conv<T>(in_channels, cfg.hidden, cfg.kernel, 2, pad,
                                 rng);
  p.conv2 =
      detail::make_conv<T>(cfg.hidden, cfg.hidden, cfg.kernel, 2, pad, rng);
  const int low_h = detail::halved(detail::halved(in_h));
  const int low_w = detail::halved(detail::halved(in_w));
  const int m_h = detail::doublings(low_h, cfg.feat_h);
  const int m_w = detail::doublings(low_w, cfg.feat_w);
  if (m_h < 0 || m_w < 0 || m_h != m_w)
    throw ConfigError("expert: target resolution unreachable by doubling");
  for (int i = 0; i < m_h; ++i)
    p.deconvs.push_back(detail::make_deconv<T>(cfg.hidden, cfg.hidden, 4, 2,
                                               1, rng));
  p.to_feat = detail::make_conv<T>(cfg.hidden, cfg.proj_channels, 3, 1, 1,
                                   rng);
  p.flow_head = detail::make_conv<T>(2 * cfg.proj_channels, 2, 3, 1, 1, rng);
  return p;
}

template <typename T>
struct ExpertContext {
  DiffArray<T> input;
  DiffArray<T> conv1_out, conv2_out;
  DiffArray<T> act1, act2;
  std::vector<DiffArray<T>> up_out, up_act;
  DiffArray<T> features;  // (T, C~, H~, W~)
  DiffArray<T> pairs;     // (T-1, 2C~, H~, W~)
  DiffArray<T> flows;     // (T-1, 2, H~, W~)
};

// Runs the expert on a (T, C, H, W) latent map. Produces the projected
// features and the flow fields for the T-1 transitions.
template <typename T>
void expert_forward(const Tensor<T>& x, ExpertParams<T>& p,
                    ExpertContext<T>& ctx) {
  if (x.dim(0) < 2) throw ConfigError("expert: needs at least two steps");
  ctx.input = DiffArray<T>(x);
  ctx.conv1_out = conv2d(ctx.input, p.conv1);
  ctx.act1 = relu(ctx.conv1_out);
  ctx.conv2_out = conv2d(ctx.act1, p.conv2);
  ctx.act2 = relu(ctx.conv2_out);

  ctx.up_out.clear();
  ctx.up_act.clear();
  for (auto& dc : p.deconvs) {
    DiffArray<T>& in = ctx.up_act.empty() ? ctx.act2 : ctx.up_act.back();
    ctx.up_out.push_back(deconv2d(in, dc));
    ctx.up_act.push_back(relu(ctx.up_out.back()));
  }
  DiffArray<T>& top = ctx.up_act.empty() ? ctx.act2 : ctx.up_act.back();
  ctx.features = conv2d(top, p.to_feat);

  // Adjacent-step pairs on the channel axis, one conv to a 2-channel flow.
  const std::size_t t = ctx.features.value.dim(0);
  const std::size_t c = ctx.features.value.dim(1);
  const std::size_t hw =
      ctx.features.value.dim(2) * ctx.features.value.dim(3);
  ctx.pairs = DiffArray<T>(std::vector<std::size_t>{
      t - 1, 2 * c, ctx.features.value.dim(2), ctx.features.value.dim(3)});
  for (std::size_t s = 0; s + 1 < t; ++s) {
    std::copy_n(ctx.features.value.data() + s * c * hw, c * hw,
                ctx.pairs.value.data() + s * 2 * c * hw);
    std::copy_n(ctx.features.value.data() + (s + 1) * c * hw, c * hw,
                ctx.pairs.value.data() + s * 2 * c * hw + c * hw);
  }
  ctx.flows = conv2d(ctx.pairs, p.flow_head);
}

// Consumes ctx.features.grad and ctx.flows.grad; fills ctx.input.grad.
template <typename T>
void expert_backward(ExpertParams<T>& p, ExpertContext<T>& ctx) {
  conv2d_backward(ctx.pairs, p.flow_head, ctx.flows.grad);
  const std::size_t t = ctx.features.value.dim(0);
  const std::size_t c = ctx.features.value.dim(1);
  const std::size_t hw =
      ctx.features.value.dim(2) * ctx.features.value.dim(3);
  for (std::size_t s = 0; s + 1 < t; ++s) {
    const T* g = ctx.pairs.grad.data() + s * 2 * c * hw;
    T* f0 = ctx.features.grad.data() + s * c * hw;
    T* f1 = ctx.features.grad.data() + (s + 1) * c * hw;
    for (std::size_t i = 0; i < c * hw; ++i) f0[i] += g[i];
    for (std::size_t i = 0; i < c * hw; ++i) f1[i] += g[c * hw + i];
  }

  DiffArray<T>& top = ctx.up_act.empty() ? ctx.act2 : ctx.up_act.back();
  conv2d_backward(top, p.to_feat, ctx.features.grad);
  for (int i = int(p.deconvs.size()) - 1; i >= 0; --i) {
    relu_backward(ctx.up_out[std::size_t(i)], ctx.up_act[std::size_t(i)].grad);
    DiffArray<T>& in = i == 0 ? ctx.act2 : ctx.up_act[std::size_t(i - 1)];
    deconv2d_backward(in, p.deconvs[std::size_t(i)],
                      ctx.up_out[std::size_t(i)].grad);
  }
  relu_backward(ctx.conv2_out, ctx.act2.grad);
  conv2d_backward(ctx.act1, p.conv2, ctx.conv2_out.grad);
  relu_backward(ctx.conv1_out, ctx.act1.grad);
  conv2d_backward(ctx.input, p.conv1, ctx.conv1_out.grad);
}

// ---------------------------------------------------------------------------
// Linear projection of the pre-expert features to the same semantic space:
// one 1x1 conv followed by as many linear stride-2 deconvs as the resolution
// gap requires. No nonlinearity anywhere.
// ---------------------------------------------------------------------------

template <typename T>
struct ProjectionParams {
  ConvSpec<T> proj;                  // 1x1, in -> proj_channels
  std::vector<ConvSpec<T>> deconvs;  // linear 4x4 stride-2 upsamplers
};

template <typename T>
ProjectionParams<T> make_projection_params(const ExpertConfig& cfg,
                                           int in_channels, int in_h,
                                           int in_w, Rng& rng) {
  cfg.validate();
  ProjectionParams<T> p;
  p.proj = detail::make_conv<T>(in_channels, cfg.proj_channels, 1, 1, 0, rng);
  const int m_h = detail::doublings(in_h, cfg.feat_h);
  const int m_w = detail::doublings(in_w, cfg.feat_w);
  if (m_h < 0 || m_w < 0 || m_h != m_w)
    throw ConfigError("projection: target resolution unreachable by doubling");
  for (int i = 0; i < m_h; ++i)
    p.deconvs.push_back(detail::make_deconv<T>(
        cfg.proj_channels, cfg.proj_channels, 4, 2, 1, rng));
  return p;
}

template <typename T>
struct ProjectionContext {
  DiffArray<T> input;
  DiffArray<T> proj_out;
  std::vector<DiffArray<T>> up_out;
};

template <typename T>
DiffArray<T>& projection_forward(const Tensor<T>& x, ProjectionParams<T>& p,
                                 ProjectionContext<T>& ctx) {
  ctx.input = DiffArray<T>(x);
  ctx.proj_out = conv2d(ctx.input, p.proj);
  ctx.up_out.clear();
  for (auto& dc : p.deconvs) {
    DiffArray<T>& in = ctx.up_out.empty() ? ctx.proj_out : ctx.up_out.back();
    ctx.up_out.push_back(deconv2d(in, dc));
  }
  return ctx.up_out.empty() ? ctx.proj_out : ctx.up_out.back();
}

template <typename T>
void projection_backward(ProjectionParams<T>& p, ProjectionContext<T>& ctx) {
  for (int i = int(p.deconvs.size()) - 1; i >= 0; --i) {
    DiffArray<T>& in = i == 0 ? ctx.proj_out : ctx.up_out[std::size_t(i - 1)];
    deconv2d_backward(in, p.deconvs[std::size_t(i)],
                      ctx.up_out[std::size_t(i)].grad);
  }
  conv2d_backward(ctx.input, p.proj, ctx.proj_out.grad);
}

// ---------------------------------------------------------------------------
// Warping and the optical-flow loss.
// ---------------------------------------------------------------------------

// warped(i, j) = bilinear(next, i + u(i,j), j + v(i,j)) with border clamp.
template <typename T>
Tensor<T> warp(const Tensor<T>& next, const Tensor<T>& u, const Tensor<T>& v) {
  require_same_shape(next, u, "warp");
  require_same_shape(next, v, "warp");
  const std::size_t h = next.dim(0), w = next.dim(1);
  Tensor<T> out(next.shape());
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j)
      out(i, j) = bilinear_sample(next, T(i) + u(i, j), T(j) + v(i, j));
  return out;
}

// Accumulates d(warp)/d(next), d(warp)/du and d(warp)/dv for a given
// upstream gradient.
template <typename T>
void warp_backward(const Tensor<T>& next, const Tensor<T>& u,
                   const Tensor<T>& v, const Tensor<T>& grad_out,
                   Tensor<T>& grad_next, Tensor<T>& grad_u,
                   Tensor<T>& grad_v) {
  const std::size_t h = next.dim(0), w = next.dim(1);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      T gr = T{}, gc = T{};
      bilinear_sample_backward(next, T(i) + u(i, j), T(j) + v(i, j),
                               grad_out(i, j), grad_next, &gr, &gc);
      grad_u(i, j) += gr;
      grad_v(i, j) += gc;
    }
}

namespace detail {

template <typename T>
Tensor<T> slice2d(const Tensor<T>& x, std::size_t n, std::size_t c) {
  Tensor<T> out({x.dim(2), x.dim(3)});
  std::copy_n(x.data() + (n * x.dim(1) + c) * out.size(), out.size(),
              out.data());
  return out;
}

}  // namespace detail

// Mean over transitions, channels and pixels of
//   | I_t(i,j) - I_{t+1}(i + u_t(i,j), j + v_t(i,j)) |
// with I taken from the linear-projection branch and (u, v) from the expert
// branch. expert_proj only fixes the common shape contract here; the expert
// receives its gradient through the flows.
template <typename T>
T flow_loss(const Tensor<T>& proj, const Tensor<T>& expert_proj,
            const Tensor<T>& flows) {
  require_same_shape(proj, expert_proj, "flow_loss");
  if (proj.dim(0) < 2)
    throw ConfigError("flow_loss: needs at least two steps");
  if (flows.dim(0) != proj.dim(0) - 1 || flows.dim(1) != 2 ||
      flows.dim(2) != proj.dim(2) || flows.dim(3) != proj.dim(3))
    throw DimensionError("flow_loss: flow field shape mismatch");

  const std::size_t t = proj.dim(0), c = proj.dim(1);
  const std::size_t count = (t - 1) * c * proj.dim(2) * proj.dim(3);
  T loss{};
  for (std::size_t s = 0; s + 1 < t; ++s) {
    const Tensor<T> u = detail::slice2d(flows, s, 0);
    const Tensor<T> v = detail::slice2d(flows, s, 1);
    for (std::size_t ch = 0; ch < c; ++ch) {
      const Tensor<T> cur = detail::slice2d(proj, s, ch);
      const Tensor<T> nxt = detail::slice2d(proj, s + 1, ch);
      const Tensor<T> warped = warp(nxt, u, v);
      for (std::size_t i = 0; i < cur.size(); ++i)
        loss += std::abs(cur[i] - warped[i]);
    }
  }
  return loss / T(count);
}

// Accumulates the loss gradient into proj.grad and flows.grad. |r| uses
// subgradient 0 at r == 0.
template <typename T>
void flow_loss_backward(DiffArray<T>& proj, DiffArray<T>& flows,
                        T upstream = T(1)) {
  const std::size_t t = proj.value.dim(0), c = proj.value.dim(1);
  const std::size_t h = proj.value.dim(2), w = proj.value.dim(3);
  const std::size_t count = (t - 1) * c * h * w;
  const T scale = upstream / T(count);

  Tensor<T> gwarp({h, w});
  for (std::size_t s = 0; s + 1 < t; ++s) {
    const Tensor<T> u = detail::slice2d(flows.value, s, 0);
    const Tensor<T> v = detail::slice2d(flows.value, s, 1);
    Tensor<T> gu({h, w}), gv({h, w});
    for (std::size_t ch = 0; ch < c; ++ch) {
      const Tensor<T> cur = detail::slice2d(proj.value, s, ch);
      const Tensor<T> nxt = detail::slice2d(proj.value, s + 1, ch);
      const Tensor<T> warped = warp(nxt, u, v);

      T* gcur = proj.grad.data() + (s * c + ch) * h * w;
      Tensor<T> gnext({h, w});
      for (std::size_t i = 0; i < h * w; ++i) {
        const T r = cur[i] - warped[i];
        const T sign = r > T{} ? T(1) : (r < T{} ? T(-1) : T{});
        gcur[i] += sign * scale;
        gwarp[i] = -sign * scale;
      }
      warp_backward(nxt, u, v, gwarp, gnext, gu, gv);
      T* gnxt = proj.grad.data() + ((s + 1) * c + ch) * h * w;
      for (std::size_t i = 0; i < h * w; ++i) gnxt[i] += gnext[i];
    }
    T* gu_dst = flows.grad.data() + (s * 2 + 0) * h * w;
    T* gv_dst = flows.grad.data() + (s * 2 + 1) * h * w;
    for (std::size_t i = 0; i < h * w; ++i) gu_dst[i] += gu[i];
    for (std::size_t i = 0; i < h * w; ++i) gv_dst[i] += gv[i];
  }
}

}  // namespace stpred
