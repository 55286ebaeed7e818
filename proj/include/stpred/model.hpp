#pragma once

// Full predictor: global pipeline plus H local crop pipelines, a shared
// vector-quantization bank, flow experts, fusion and the deconv decoder.
//
// The quantizer node fused = Z + Z^(VQ) supports two backward conventions:
//   straight_through = true   training rule; the gradient arriving at the
//                             fused node is copied through the quantized
//                             branch into Z as well (so Z receives 2g), and
//                             the codes receive only the VQ-loss term.
//   straight_through = false  true local derivatives (indices frozen): the
//                             quantized branch routes its gradient into the
//                             selected codewords, none into Z. This is the
//                             mode central-difference checks can verify.

#include <string>
#include <utility>
#include <vector>

#include "stpred/codebank.hpp"
#include "stpred/crops.hpp"
#include "stpred/diff.hpp"
#include "stpred/encoder.hpp"
#include "stpred/errors.hpp"
#include "stpred/expert.hpp"
#include "stpred/frames.hpp"
#include "stpred/fusion_decoder.hpp"
#include "stpred/rng.hpp"

namespace stpred {

struct ModelConfig {
  // Sequence geometry.
  int in_frames = 10;
  int out_frames = 10;
  int channels = 1;
  int height = 64;
  int width = 64;

  // Local views.
  CropConfig crops;
  bool use_local = true;

  // Encoders.
  int n_blocks = 2;
  std::vector<int> enc_channels;
  int down_floor = 8;
  int global_kernel = 7;
  int local_kernel = 3;

  // Codebank.
  bool use_codebank = true;
  std::size_t bank_entries = 256;
  std::size_t bank_dim = 64;
  double vq_beta = 0.99;
  bool straight_through = true;

  // Experts.
  int proj_channels = 16;
  int expert_hidden = 16;

  // Flow loss.
  bool use_flow_loss = true;
  bool flow_loss_on_decoded = false;

  // Decoder.
  DecoderConfig decoder;
};

// S/B/L presets (N_e = 2/4/8). The final encoder width is tied to the
// codeword dimension so the shared bank can quantize both pipelines.
inline void apply_model_preset(ModelConfig& cfg, const std::string& size) {
  if (size == "S")
    cfg.n_blocks = 2;
  else if (size == "B")
    cfg.n_blocks = 4;
  else if (size == "L")
    cfg.n_blocks = 8;
  else
    throw ConfigError("model size must be S, B or L");
  cfg.enc_channels.assign(std::size_t(cfg.n_blocks), 64);
  cfg.enc_channels[0] = 16;
  if (cfg.n_blocks >= 2) cfg.enc_channels[1] = 32;
  if (cfg.n_blocks >= 4) cfg.enc_channels[2] = 32;
  cfg.enc_channels.back() = int(cfg.bank_dim);
}

struct ModelPlan {
  EncoderConfig enc_global, enc_local;
  ExpertConfig expert_global, expert_local;
  int ghat_h = 0, ghat_w = 0;  // global latent resolution = decoder input
  int lhat_h = 0, lhat_w = 0;  // local latent resolution
};

inline ModelPlan plan_model(const ModelConfig& cfg) {
  if (cfg.in_frames < 2) throw ConfigError("model: in_frames must be >= 2");
  if (cfg.out_frames < 1) throw ConfigError("model: out_frames must be >= 1");
  if (cfg.channels < 1) throw ConfigError("model: channels must be >= 1");
  ModelPlan plan;
  plan.enc_global = {cfg.n_blocks, cfg.global_kernel, cfg.enc_channels,
                     cfg.down_floor};
  plan.enc_local = {cfg.n_blocks, cfg.local_kernel, cfg.enc_channels,
                    cfg.down_floor};
  plan.enc_global.validate();
  plan.enc_local.validate();
  if (cfg.use_codebank &&
      std::size_t(cfg.enc_channels.back()) != cfg.bank_dim)
    throw ConfigError(
        "model: final encoder width must equal the codeword dimension");

  std::tie(plan.ghat_h, plan.ghat_w) =
      encoder_output_hw(plan.enc_global, cfg.height, cfg.width);
  if (cfg.use_local) {
    cfg.crops.validate();
    std::tie(plan.lhat_h, plan.lhat_w) =
        encoder_output_hw(plan.enc_local, cfg.crops.crop_out,
                          cfg.crops.crop_out);
  }
  plan.expert_global = {cfg.global_kernel, cfg.expert_hidden,
                        cfg.proj_channels, plan.ghat_h, plan.ghat_w};
  plan.expert_local = {cfg.local_kernel, cfg.expert_hidden, cfg.proj_channels,
                       plan.ghat_h, plan.ghat_w};
  return plan;
}

template <typename T>
struct ModelParams {
  EncoderParams<T> enc_g, enc_l;
  Codebank<T> bank;
  ExpertParams<T> exp_g, exp_l;
  ProjectionParams<T> proj_g, proj_l;
  DecoderParams<T> dec;
};

template <typename T>
ModelParams<T> make_model_params(const ModelConfig& cfg,
                                 const ModelPlan& plan, std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x696e6974ULL));  // "init"
  ModelParams<T> p;
  p.enc_g = make_encoder_params<T>(plan.enc_global, cfg.channels, cfg.height,
                                   cfg.width, rng);
  p.enc_l = make_encoder_params<T>(plan.enc_local, cfg.channels,
                                   cfg.crops.crop_out, cfg.crops.crop_out,
                                   rng);
  p.bank = make_codebank<T>(cfg.bank_entries, cfg.bank_dim, rng);
  const int latent_ch = cfg.enc_channels.back();
  p.exp_g = make_expert_params<T>(plan.expert_global, latent_ch, plan.ghat_h,
                                  plan.ghat_w, rng);
  p.proj_g = make_projection_params<T>(plan.expert_global, latent_ch,
                                       plan.ghat_h, plan.ghat_w, rng);
  if (cfg.use_local) {
    p.exp_l = make_expert_params<T>(plan.expert_local, latent_ch, plan.lhat_h,
                                    plan.lhat_w, rng);
    p.proj_l = make_projection_params<T>(plan.expert_local, latent_ch,
                                         plan.lhat_h, plan.lhat_w, rng);
  }
  p.dec = make_decoder_params<T>(cfg.decoder, cfg.proj_channels,
                                 cfg.in_frames, plan.ghat_h, plan.ghat_w,
                                 cfg.out_frames, cfg.channels, cfg.height,
                                 cfg.width, rng);
  return p;
}

// Canonical enumeration of every parameter array; the order defines the
// checkpoint layout, SGD traversal and gradient merging.
template <typename T, typename F>
void for_each_param(ModelParams<T>& p, F&& f) {
  auto conv = [&](const std::string& name, ConvSpec<T>& s) {
    f(name + ".kernel", s.kernel);
    if (!s.bias.value.empty()) f(name + ".bias", s.bias);
  };
  auto encoder = [&](const std::string& name, EncoderParams<T>& e) {
    for (std::size_t b = 0; b < e.blocks.size(); ++b) {
      const std::string base = name + ".b" + std::to_string(b);
      conv(base + ".conv", e.blocks[b].conv);
      f(base + ".ln_gain", e.blocks[b].ln_gain);
      f(base + ".ln_bias", e.blocks[b].ln_bias);
    }
  };
  auto expert = [&](const std::string& name, ExpertParams<T>& e) {
    conv(name + ".conv1", e.conv1);
    conv(name + ".conv2", e.conv2);
    for (std::size_t i = 0; i < e.deconvs.size(); ++i)
      conv(name + ".up" + std::to_string(i), e.deconvs[i]);
    conv(name + ".to_feat", e.to_feat);
    conv(name + ".flow_head", e.flow_head);
  };
  auto projection = [&](const std::string& name, ProjectionParams<T>& e) {
    conv(name + ".proj", e.proj);
    for (std::size_t i = 0; i < e.deconvs.size(); ++i)
      conv(name + ".up" + std::to_string(i), e.deconvs[i]);
  };

  encoder("enc_g", p.enc_g);
  encoder("enc_l", p.enc_l);
  f("bank.codes", p.bank.codes);
  expert("exp_g", p.exp_g);
  expert("exp_l", p.exp_l);
  projection("proj_g", p.proj_g);
  projection("proj_l", p.proj_l);
  for (std::size_t b = 0; b < p.dec.blocks.size(); ++b) {
    const std::string base = "dec.b" + std::to_string(b);
    if (!p.dec.blocks[b].cl.kernel.value.empty())
      conv(base + ".cl", p.dec.blocks[b].cl);
    conv(base + ".dc", p.dec.blocks[b].dc);
  }
  conv("dec.head", p.dec.head);
}

template <typename T>
std::vector<std::pair<std::string, DiffArray<T>*>> collect_params(
    ModelParams<T>& p) {
  std::vector<std::pair<std::string, DiffArray<T>*>> out;
  for_each_param(p, [&](const std::string& name, DiffArray<T>& a) {
    out.emplace_back(name, &a);
  });
  return out;
}

template <typename T>
void zero_grads(ModelParams<T>& p) {
  for_each_param(p, [](const std::string&, DiffArray<T>& a) { a.zero_grad(); });
}

template <typename T>
void accumulate_grads(ModelParams<T>& dst, ModelParams<T>& src) {
  auto d = collect_params(dst);
  auto s = collect_params(src);
  if (d.size() != s.size())
    throw DimensionError("accumulate_grads: parameter sets differ");
  for (std::size_t i = 0; i < d.size(); ++i)
    axpy(T(1), s[i].second->grad, d[i].second->grad);
}

template <typename T>
void copy_param_values(ModelParams<T>& dst, ModelParams<T>& src) {
  auto d = collect_params(dst);
  auto s = collect_params(src);
  for (std::size_t i = 0; i < d.size(); ++i)
    d[i].second->value = s[i].second->value;
}

// ---------------------------------------------------------------------------
// Per-sequence forward / backward.
// ---------------------------------------------------------------------------

template <typename T>
struct PipelineContext {
  EncoderContext<T> enc;
  QuantizeResult<T> quant;
  Tensor<T> fused_value;        // Z + Z^(VQ) (or Z when the bank is off)
  ExpertContext<T> expert;
  ProjectionContext<T> proj;
  T l_vq{};
  T l_of{};
};

template <typename T>
struct SequenceContext {
  PipelineContext<T> global;
  std::vector<PipelineContext<T>> local;
  std::vector<CropBox> boxes;
  FuseContext<T> fuse;
  DecoderContext<T> dec;
  T l_of{};   // combined: global + mean over crops
  T l_vq{};
  T l_of_decoded{};
  // flow-on-decoded intermediates
  DiffArray<T> dec_flow;  // upsampled, rescaled global flow
};

namespace detail {

template <typename T>
void pipeline_forward(const Tensor<T>& input, const ModelConfig& cfg,
                      const EncoderConfig& enc_cfg, EncoderParams<T>& enc,
                      Codebank<T>& bank, ExpertParams<T>& expert,
                      ProjectionParams<T>& proj, PipelineContext<T>& ctx) {
  DiffArray<T>& z = encoder_forward(input, enc_cfg, enc, ctx.enc);
  if (cfg.use_codebank) {
    ctx.quant = quantize(z.value, bank);
    ctx.fused_value = fuse_quantized(z.value, ctx.quant);
    ctx.l_vq =
        vq_loss<T>(z.value, ctx.quant, T(cfg.vq_beta), nullptr, nullptr);
  } else {
    ctx.fused_value = z.value;
    ctx.l_vq = T{};
  }
  expert_forward(ctx.fused_value, expert, ctx.expert);
  DiffArray<T>& p = projection_forward(ctx.fused_value, proj, ctx.proj);
  ctx.l_of = cfg.use_flow_loss
                 ? flow_loss(p.value, ctx.expert.features.value,
                             ctx.expert.flows.value)
                 : T{};
}

template <typename T>
void pipeline_backward(const ModelConfig& cfg, const EncoderConfig& enc_cfg,
                       EncoderParams<T>& enc, Codebank<T>& bank,
                       ExpertParams<T>& expert, ProjectionParams<T>& proj,
                       PipelineContext<T>& ctx, T loss_weight) {
  DiffArray<T>& p_out =
      ctx.proj.up_out.empty() ? ctx.proj.proj_out : ctx.proj.up_out.back();
  if (cfg.use_flow_loss)
    flow_loss_backward(p_out, ctx.expert.flows, loss_weight);
  expert_backward(expert, ctx.expert);
  projection_backward(proj, ctx.proj);

  // Gradient arriving at the fused node from both consumers.
  Tensor<T> g = ctx.expert.input.grad;
  axpy(T(1), ctx.proj.input.grad, g);

  DiffArray<T>& z = ctx.enc.act_out.back();
  axpy(T(1), g, z.grad);  // the direct summand
  if (cfg.use_codebank) {
    if (cfg.straight_through)
      axpy(T(1), straight_through(g), z.grad);
    else
      scatter_to_codes(ctx.quant, g, bank.codes.grad);
    if (loss_weight == T(1)) {
      vq_loss<T>(z.value, ctx.quant, T(cfg.vq_beta), &z.grad,
                 &bank.codes.grad);
    } else {
      Tensor<T> gz(z.grad.shape());
      Tensor<T> gc(bank.codes.grad.shape());
      vq_loss<T>(z.value, ctx.quant, T(cfg.vq_beta), &gz, &gc);
      axpy(loss_weight, gz, z.grad);
      axpy(loss_weight, gc, bank.codes.grad);
    }
  }
  encoder_backward(enc_cfg, enc, ctx.enc);
}

}  // namespace detail

// Runs the whole pipeline for one sequence. `crops` must hold the (already
// drawn) local views when cfg.use_local is set. Returns the prediction node;
// callers deposit d(loss)/d(pred) into its grad before model_backward.
template <typename T>
DiffArray<T>& model_forward(const ModelConfig& cfg, const ModelPlan& plan,
                            ModelParams<T>& params, const Tensor<T>& input,
                            const std::vector<Tensor<T>>& crops,
                            std::vector<CropBox> boxes,
                            SequenceContext<T>& ctx) {
  detail::pipeline_forward(input, cfg, plan.enc_global, params.enc_g,
                           params.bank, params.exp_g, params.proj_g,
                           ctx.global);
  ctx.boxes = std::move(boxes);
  ctx.local.clear();
  if (cfg.use_local) {
    if (int(crops.size()) != cfg.crops.n_crops)
      throw ConfigError("model: wrong number of local views");
    ctx.local.resize(crops.size());
    for (std::size_t h = 0; h < crops.size(); ++h)
      detail::pipeline_forward(crops[h], cfg, plan.enc_local, params.enc_l,
                               params.bank, params.exp_l, params.proj_l,
                               ctx.local[h]);
  }

  const T inv_crops =
      ctx.local.empty() ? T{} : T(1) / T(ctx.local.size());
  ctx.l_of = ctx.global.l_of;
  ctx.l_vq = ctx.global.l_vq;
  for (auto& local : ctx.local) {
    ctx.l_of += inv_crops * local.l_of;
    ctx.l_vq += inv_crops * local.l_vq;
  }

  std::vector<DiffArray<T>*> local_feats;
  for (auto& local : ctx.local)
    local_feats.push_back(&local.expert.features);
  DiffArray<T>& fused = fuse_forward(ctx.global.expert.features, local_feats,
                                     ctx.boxes, ctx.fuse);
  DiffArray<T>& pred =
      decoder_forward(fused.value, cfg.decoder, params.dec, ctx.dec);

  ctx.l_of_decoded = T{};
  if (cfg.flow_loss_on_decoded && cfg.use_flow_loss) {
    // Carry the global flow to output resolution; displacements scale with
    // the resolution ratio.
    const std::size_t steps =
        std::min(pred.value.dim(0), ctx.global.expert.flows.value.dim(0) + 1);
    if (steps >= 2) {
      auto& flows = ctx.global.expert.flows;
      DiffArray<T> up = upsample_nearest(flows, pred.value.dim(2),
                                         pred.value.dim(3));
      const T scale = T(pred.value.dim(2)) / T(flows.value.dim(2));
      for (std::size_t i = 0; i < up.value.size(); ++i)
        up.value[i] *= scale;
      ctx.dec_flow = std::move(up);
      // Computed inline rather than via flow_loss so the transition count
      // can cap at min(K, T) when the two differ.
      const std::size_t c = pred.value.dim(1);
      const std::size_t h = pred.value.dim(2), w = pred.value.dim(3);
      ctx.l_of_decoded = T{};
      T acc{};
      for (std::size_t s = 0; s + 1 < steps; ++s) {
        const Tensor<T> u = detail::slice2d(ctx.dec_flow.value, s, 0);
        const Tensor<T> v = detail::slice2d(ctx.dec_flow.value, s, 1);
        for (std::size_t ch = 0; ch < c; ++ch) {
          const Tensor<T> cur = detail::slice2d(pred.value, s, ch);
          const Tensor<T> nxt = detail::slice2d(pred.value, s + 1, ch);
          const Tensor<T> warped = warp(nxt, u, v);
          for (std::size_t i = 0; i < cur.size(); ++i)
            acc += std::abs(cur[i] - warped[i]);
        }
      }
      ctx.l_of_decoded = acc / T((steps - 1) * c * h * w);
      ctx.l_of += ctx.l_of_decoded;
    }
  }
  return pred;
}

template <typename T>
void model_backward(const ModelConfig& cfg, const ModelPlan& plan,
                    ModelParams<T>& params, SequenceContext<T>& ctx) {
  if (cfg.flow_loss_on_decoded && cfg.use_flow_loss &&
      !ctx.dec_flow.value.empty()) {
    auto& pred = ctx.dec.pred;
    auto& flows = ctx.global.expert.flows;
    const std::size_t steps =
        std::min(pred.value.dim(0), flows.value.dim(0) + 1);
    if (steps >= 2) {
      const std::size_t c = pred.value.dim(1);
      const std::size_t h = pred.value.dim(2), w = pred.value.dim(3);
      const T scale = T(1) / T((steps - 1) * c * h * w);
      Tensor<T> gwarp({h, w});
      for (std::size_t s = 0; s + 1 < steps; ++s) {
        const Tensor<T> u = detail::slice2d(ctx.dec_flow.value, s, 0);
        const Tensor<T> v = detail::slice2d(ctx.dec_flow.value, s, 1);
        Tensor<T> gu({h, w}), gv({h, w});
        for (std::size_t ch = 0; ch < c; ++ch) {
          const Tensor<T> cur = detail::slice2d(pred.value, s, ch);
          const Tensor<T> nxt = detail::slice2d(pred.value, s + 1, ch);
          const Tensor<T> warped = warp(nxt, u, v);
          T* gcur = pred.grad.data() + (s * c + ch) * h * w;
          Tensor<T> gnext({h, w});
          for (std::size_t i = 0; i < h * w; ++i) {
            const T r = cur[i] - warped[i];
            const T sg = r > T{} ? T(1) : (r < T{} ? T(-1) : T{});
            gcur[i] += sg * scale;
            gwarp[i] = -sg * scale;
          }
          warp_backward(nxt, u, v, gwarp, gnext, gu, gv);
          T* gnxt = pred.grad.data() + ((s + 1) * c + ch) * h * w;
          for (std::size_t i = 0; i < h * w; ++i) gnxt[i] += gnext[i];
        }
        for (std::size_t i = 0; i < h * w; ++i) {
          ctx.dec_flow.grad[(s * 2 + 0) * h * w + i] += gu[i];
          ctx.dec_flow.grad[(s * 2 + 1) * h * w + i] += gv[i];
        }
      }
      // Undo the resolution rescale, then route through the upsampling.
      const T flow_scale = T(pred.value.dim(2)) / T(flows.value.dim(2));
      for (std::size_t i = 0; i < ctx.dec_flow.grad.size(); ++i)
        ctx.dec_flow.grad[i] *= flow_scale;
      upsample_nearest_backward(flows, ctx.dec_flow.grad);
    }
  }

  decoder_backward(cfg.decoder, params.dec, ctx.dec);
  axpy(T(1), ctx.dec.input.grad, ctx.fuse.fused.grad);

  std::vector<DiffArray<T>*> local_feats;
  for (auto& local : ctx.local)
    local_feats.push_back(&local.expert.features);
  fuse_backward(ctx.global.expert.features, local_feats, ctx.fuse);

  detail::pipeline_backward(cfg, plan.enc_global, params.enc_g, params.bank,
                            params.exp_g, params.proj_g, ctx.global, T(1));
  const T inv_crops =
      ctx.local.empty() ? T{} : T(1) / T(ctx.local.size());
  for (auto& local : ctx.local)
    detail::pipeline_backward(cfg, plan.enc_local, params.enc_l, params.bank,
                              params.exp_l, params.proj_l, local, inv_crops);
}

}  // namespace stpred
