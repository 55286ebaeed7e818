#include "stpred/train.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "stpred/parallel.hpp"

namespace stpred {

std::pair<Tensor<float>, Tensor<float>> split_sequence(
    const FrameSequence& seq, int in_frames, int out_frames) {
  if (int(seq.frames()) < in_frames + out_frames)
    throw ConfigError("sequence shorter than in_frames + out_frames");
  const std::size_t c = seq.channels(), h = seq.height(), w = seq.width();
  Tensor<float> in({std::size_t(in_frames), c, h, w});
  Tensor<float> out({std::size_t(out_frames), c, h, w});
  const std::size_t frame = c * h * w;
  std::copy_n(seq.data.data(), in.size(), in.data());
  std::copy_n(seq.data.data() + std::size_t(in_frames) * frame, out.size(),
              out.data());
  return {std::move(in), std::move(out)};
}

std::uint64_t crop_stream_seed(std::uint64_t seed, std::uint64_t epoch,
                               std::uint64_t salt) {
  return mix_seed(mix_seed(seed, 0x63726f70ULL, salt), epoch);  // "crop"
}

namespace {

struct DrawnCrops {
  std::vector<Tensor<float>> views;
  std::vector<CropBox> boxes;
};

DrawnCrops draw_crops(const ModelConfig& cfg, const FrameSequence& seq,
                      int in_frames, Rng& rng) {
  DrawnCrops out;
  if (!cfg.use_local) return out;
  // Crop the observed window only.
  FrameSequence observed(std::size_t(in_frames), seq.channels(), seq.height(),
                         seq.width());
  std::copy_n(seq.data.data(), observed.data.size(), observed.data.data());
  auto [crops, boxes] = random_local_crops(observed, cfg.crops, rng);
  for (auto& c : crops) out.views.push_back(std::move(c.data));
  out.boxes = std::move(boxes);
  return out;
}

FrameSequence tensor_to_frames(Tensor<float> t) {
  FrameSequence f;
  f.data = std::move(t);
  return f;
}

}  // namespace

FrameSequence predict_sequence(const ModelConfig& cfg, const ModelPlan& plan,
                               ModelParams<float>& params,
                               const FrameSequence& input, Rng& crop_rng) {
  if (int(input.frames()) < cfg.in_frames)
    throw ConfigError("predict: input shorter than the required context");
  Tensor<float> in({std::size_t(cfg.in_frames), input.channels(),
                    input.height(), input.width()});
  std::copy_n(input.data.data(), in.size(), in.data());
  DrawnCrops crops = draw_crops(cfg, input, cfg.in_frames, crop_rng);

  SequenceContext<float> ctx;
  DiffArray<float>& pred = model_forward(cfg, plan, params, in, crops.views,
                                         crops.boxes, ctx);
  return tensor_to_frames(pred.value);
}

std::vector<EpochRecord> train(
    const ModelConfig& cfg, const ModelPlan& plan, ModelParams<float>& params,
    const std::vector<FrameSequence>& train_data,
    const std::vector<FrameSequence>& val_data, const TrainConfig& tcfg,
    int start_epoch, const std::function<void(const EpochRecord&)>& on_epoch) {
  tcfg.validate();
  if (train_data.empty()) throw ConfigError("train: empty dataset");

  const std::size_t batch = std::size_t(tcfg.batch);
  // One replica and context slot per batch element keeps gradient merging
  // independent of the thread count.
  std::vector<ModelParams<float>> replicas(
      std::min(batch, train_data.size()),
      make_model_params<float>(cfg, plan, 0));
  std::vector<SequenceContext<float>> contexts(replicas.size());
  std::vector<LossReport> reports(replicas.size());

  auto master = collect_params(params);
  std::vector<Tensor<float>> velocity;
  if (tcfg.momentum > 0.0) {
    velocity.reserve(master.size());
    for (auto& [name, arr] : master)
      velocity.emplace_back(Tensor<float>::zeros_like(arr->value));
  }

  std::vector<EpochRecord> history;
  for (int e = start_epoch; e < start_epoch + tcfg.epochs; ++e) {
    Rng crop_rng(crop_stream_seed(tcfg.seed, std::uint64_t(e), 0));
    double ep_of = 0.0, ep_vq = 0.0, ep_mse = 0.0, ep_total = 0.0;
    std::size_t seen = 0;

    for (std::size_t start = 0; start < train_data.size(); start += batch) {
      const std::size_t count = std::min(batch, train_data.size() - start);
      // Serial draws keep the crop stream identical across thread counts.
      std::vector<DrawnCrops> crops(count);
      for (std::size_t i = 0; i < count; ++i)
        crops[i] = draw_crops(cfg, train_data[start + i], cfg.in_frames,
                              crop_rng);

      try {
        parallel_for(count, [&](std::size_t i) {
          ModelParams<float>& rep = replicas[i];
          copy_param_values(rep, params);
          zero_grads(rep);
          auto [in, target] =
              split_sequence(train_data[start + i], cfg.in_frames,
                             cfg.out_frames);
          SequenceContext<float>& ctx = contexts[i];
          DiffArray<float>& pred = model_forward(cfg, plan, rep, in,
                                                 crops[i].views,
                                                 crops[i].boxes, ctx);
          const float l_mse = mse_loss(pred.value, target);
          mse_loss_backward(pred, target);
          model_backward(cfg, plan, rep, ctx);
          reports[i] = LossReport{double(ctx.l_of), double(ctx.l_vq),
                                  double(l_mse), 0.0};
        });
      } catch (const TrainingDivergedError& err) {
        throw TrainingDivergedError(std::string(err.what()) + " (epoch " +
                                    std::to_string(e) + ", batch " +
                                    std::to_string(start / batch) + ")");
      }

      zero_grads(params);
      for (std::size_t i = 0; i < count; ++i)
        accumulate_grads(params, replicas[i]);

      double b_of = 0.0, b_vq = 0.0, b_mse = 0.0;
      for (std::size_t i = 0; i < count; ++i) {
        b_of += reports[i].l_of;
        b_vq += reports[i].l_vq;
        b_mse += reports[i].l_mse;
      }
      LossReport rep;
      try {
        rep = total_loss(b_of / double(count), b_vq / double(count),
                         b_mse / double(count));
      } catch (const TrainingDivergedError&) {
        throw TrainingDivergedError(
            "training diverged at epoch " + std::to_string(e) + ", batch " +
            std::to_string(start / batch));
      }
      ep_of += rep.l_of * double(count);
      ep_vq += rep.l_vq * double(count);
      ep_mse += rep.l_mse * double(count);
      ep_total += rep.total * double(count);
      seen += count;

      // Batch-mean gradient step.
      const float scale = 1.0f / float(count);
      for (std::size_t k = 0; k < master.size(); ++k) {
        Tensor<float>& g = master[k].second->grad;
        Tensor<float>& v = master[k].second->value;
        if (velocity.empty()) {
          for (std::size_t j = 0; j < g.size(); ++j)
            v[j] -= float(tcfg.lr) * g[j] * scale;
        } else {
          Tensor<float>& vel = velocity[k];
          for (std::size_t j = 0; j < g.size(); ++j) {
            vel[j] = float(tcfg.momentum) * vel[j] + g[j] * scale;
            v[j] -= float(tcfg.lr) * vel[j];
          }
        }
      }
    }

    EpochRecord rec;
    rec.epoch = e;
    if (seen) {
      rec.l_of = ep_of / double(seen);
      rec.l_vq = ep_vq / double(seen);
      rec.l_mse = ep_mse / double(seen);
      rec.total = ep_total / double(seen);
    }
    rec.val_mse =
        val_data.empty()
            ? 0.0
            : evaluate(cfg, plan, params, val_data,
                       crop_stream_seed(tcfg.seed, std::uint64_t(e), 1))
                  .mse;
    history.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return history;
}

EvalMetrics evaluate(const ModelConfig& cfg, const ModelPlan& plan,
                     ModelParams<float>& params,
                     const std::vector<FrameSequence>& data,
                     std::uint64_t crop_seed) {
  if (data.empty()) throw ConfigError("evaluate: empty split");
  Rng crop_rng(crop_seed);
  std::vector<DrawnCrops> crops(data.size());
  for (std::size_t i = 0; i < data.size(); ++i)
    crops[i] = draw_crops(cfg, data[i], cfg.in_frames, crop_rng);

  std::vector<double> mses(data.size()), ssims(data.size());
  // Model replicas only carry values here; forward passes never write params.
  parallel_for(data.size(), [&](std::size_t i) {
    auto [in, target] = split_sequence(data[i], cfg.in_frames,
                                       cfg.out_frames);
    SequenceContext<float> ctx;
    DiffArray<float>& pred = model_forward(cfg, plan, params, in,
                                           crops[i].views, crops[i].boxes,
                                           ctx);
    FrameSequence pf = tensor_to_frames(pred.value);
    FrameSequence tf = tensor_to_frames(target);
    mses[i] = mse(pf, tf);
    ssims[i] = ssim(pf, tf);
  });

  EvalMetrics m;
  for (std::size_t i = 0; i < data.size(); ++i) {
    m.mse += mses[i];
    m.ssim += ssims[i];
  }
  m.mse /= double(data.size());
  m.ssim /= double(data.size());
  try {
    m.psnr = psnr_from_mse(m.mse);
  } catch (const UndefinedPsnrError&) {
    m.psnr_defined = false;
  }
  return m;
}

EvalMetrics evaluate_baseline(const ModelConfig& cfg,
                              const std::vector<FrameSequence>& data) {
  if (data.empty()) throw ConfigError("evaluate: empty split");
  EvalMetrics m;
  for (const auto& seq : data) {
    auto [in, target] = split_sequence(seq, cfg.in_frames, cfg.out_frames);
    FrameSequence inf = FrameSequence(std::move(in));
    FrameSequence base =
        persistence_baseline(inf, std::size_t(cfg.out_frames));
    FrameSequence tf = FrameSequence(std::move(target));
    m.mse += mse(base, tf);
    m.ssim += ssim(base, tf);
  }
  m.mse /= double(data.size());
  m.ssim /= double(data.size());
  try {
    m.psnr = psnr_from_mse(m.mse);
  } catch (const UndefinedPsnrError&) {
    m.psnr_defined = false;
  }
  return m;
}

}  // namespace stpred
