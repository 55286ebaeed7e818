#pragma once

#include <cstddef>

#include "stpred/errors.hpp"
#include "stpred/tensor.hpp"

namespace stpred {

// A (T, C, H, W) stack of observations with values in [0, 1].
struct FrameSequence {
  Tensor<float> data;

  FrameSequence() = default;
  explicit FrameSequence(Tensor<float> d) : data(std::move(d)) {}
  FrameSequence(std::size_t t, std::size_t c, std::size_t h, std::size_t w)
      : data(std::vector<std::size_t>{t, c, h, w}) {}

  std::size_t frames() const { return data.dim(0); }
  std::size_t channels() const { return data.dim(1); }
  std::size_t height() const { return data.dim(2); }
  std::size_t width() const { return data.dim(3); }

  float* frame(std::size_t t) {
    return data.data() + t * channels() * height() * width();
  }
  const float* frame(std::size_t t) const {
    return data.data() + t * channels() * height() * width();
  }

  // T >= 2, H and W >= 8, every value finite and in [0, 1].
  void validate() const {
    if (data.rank() != 4) throw DimensionError("FrameSequence: rank != 4");
    if (frames() < 2) throw ConfigError("FrameSequence: needs T >= 2");
    if (height() < 8 || width() < 8)
      throw ConfigError("FrameSequence: needs H, W >= 8");
    for (std::size_t i = 0; i < data.size(); ++i) {
      const float v = data[i];
      if (!(v >= 0.0f && v <= 1.0f))  // also rejects NaN
        throw ConfigError("FrameSequence: value outside [0, 1]");
    }
  }
};

}  // namespace stpred
