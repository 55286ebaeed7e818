#pragma once

#include <cmath>

#include "stpred/diff.hpp"
#include "stpred/errors.hpp"
#include "stpred/frames.hpp"

namespace stpred {

struct LossReport {
  double l_of = 0.0;
  double l_vq = 0.0;
  double l_mse = 0.0;
  double total = 0.0;
};

// L = L_of + L^(VQ) + L_mse with unit weights.
inline LossReport total_loss(double l_of, double l_vq, double l_mse) {
  if (!std::isfinite(l_of) || !std::isfinite(l_vq) || !std::isfinite(l_mse))
    throw TrainingDivergedError("total_loss: non-finite component");
  return {l_of, l_vq, l_mse, l_of + l_vq + l_mse};
}

// Mean of squared elementwise differences.
template <typename T>
T mse_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  require_same_shape(pred, target, "mse_loss");
  T acc{};
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const T d = pred[i] - target[i];
    acc += d * d;
  }
  return acc / T(pred.size());
}

template <typename T>
void mse_loss_backward(DiffArray<T>& pred, const Tensor<T>& target,
                       T upstream = T(1)) {
  require_same_shape(pred.value, target, "mse_loss_backward");
  const T scale = T(2) * upstream / T(pred.value.size());
  for (std::size_t i = 0; i < pred.value.size(); ++i)
    pred.grad[i] += scale * (pred.value[i] - target[i]);
}

// Repeats the last observed frame K times.
inline FrameSequence persistence_baseline(const FrameSequence& input,
                                          std::size_t k) {
  if (input.frames() < 1)
    throw ConfigError("persistence_baseline: empty input");
  FrameSequence out(k, input.channels(), input.height(), input.width());
  const std::size_t frame =
      input.channels() * input.height() * input.width();
  const float* last = input.frame(input.frames() - 1);
  for (std::size_t t = 0; t < k; ++t)
    std::copy_n(last, frame, out.frame(t));
  return out;
}

}  // namespace stpred
