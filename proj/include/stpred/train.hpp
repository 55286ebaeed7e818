#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "stpred/losses.hpp"
#include "stpred/metrics.hpp"
#include "stpred/model.hpp"

namespace stpred {

struct TrainConfig {
  double lr = 0.01;
  double momentum = 0.0;  // plain SGD by default
  int epochs = 1;
  int batch = 16;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(lr >= 0.0)) throw ConfigError("train: lr must be >= 0");
    if (momentum < 0.0 || momentum >= 1.0)
      throw ConfigError("train: momentum must be in [0, 1)");
    if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (batch < 1) throw ConfigError("train: batch must be >= 1");
  }
};

struct EpochRecord {
  int epoch = 0;
  double l_of = 0.0;
  double l_vq = 0.0;
  double l_mse = 0.0;
  double total = 0.0;
  double val_mse = 0.0;
};

struct EvalMetrics {
  double mse = 0.0;
  double ssim = 0.0;
  double psnr = 0.0;
  bool psnr_defined = true;
};

// Splits a stored sequence into the T observed frames and the K targets.
std::pair<Tensor<float>, Tensor<float>> split_sequence(
    const FrameSequence& seq, int in_frames, int out_frames);

// Deterministic per-(epoch, split) crop stream seed.
std::uint64_t crop_stream_seed(std::uint64_t seed, std::uint64_t epoch,
                               std::uint64_t salt);

// Forward-only prediction for the first in_frames of `input`.
FrameSequence predict_sequence(const ModelConfig& cfg, const ModelPlan& plan,
                               ModelParams<float>& params,
                               const FrameSequence& input, Rng& crop_rng);

// SGD training over full batches in data order. Deterministic given
// (params, data, cfg.seed): crops come from a per-epoch stream, batch
// gradients merge in element order regardless of thread count.
// `on_epoch`, when set, runs after each epoch record is appended.
std::vector<EpochRecord> train(
    const ModelConfig& cfg, const ModelPlan& plan, ModelParams<float>& params,
    const std::vector<FrameSequence>& train_data,
    const std::vector<FrameSequence>& val_data, const TrainConfig& tcfg,
    int start_epoch = 0,
    const std::function<void(const EpochRecord&)>& on_epoch = nullptr);

// Metrics of the model over a split (fixed crop stream per call).
EvalMetrics evaluate(const ModelConfig& cfg, const ModelPlan& plan,
                     ModelParams<float>& params,
                     const std::vector<FrameSequence>& data,
                     std::uint64_t crop_seed);

// Metrics of the repeat-last-frame baseline over a split.
EvalMetrics evaluate_baseline(const ModelConfig& cfg,
                              const std::vector<FrameSequence>& data);

}  // namespace stpred
