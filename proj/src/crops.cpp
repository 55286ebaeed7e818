#include "stpred/crops.hpp"

#include <algorithm>
#include <cmath>

#include "stpred/diff.hpp"
#include "stpred/errors.hpp"

namespace stpred {

void CropConfig::validate() const {
  if (n_crops < 1) throw ConfigError("crops: need at least one crop");
  if (!(max_area_fraction > 0.0) || max_area_fraction > 0.5)
    throw ConfigError("crops: max_area_fraction must be in (0, 0.5]");
  if (crop_out < 8) throw ConfigError("crops: crop_out must be >= 8");
}

FrameSequence resize_bilinear(const FrameSequence& seq, int out_h,
                              int out_w) {
  const std::size_t t = seq.frames(), c = seq.channels();
  const int h = int(seq.height()), w = int(seq.width());
  FrameSequence out(t, c, std::size_t(out_h), std::size_t(out_w));
  const double sy = double(h) / out_h, sx = double(w) / out_w;
  Tensor<float> slice({std::size_t(h), std::size_t(w)});
  for (std::size_t f = 0; f < t * c; ++f) {
    const float* src = seq.data.data() + f * std::size_t(h) * w;
    std::copy_n(src, std::size_t(h) * w, slice.data());
    float* dst = out.data.data() + f * std::size_t(out_h) * out_w;
    for (int i = 0; i < out_h; ++i) {
      const float row = float((double(i) + 0.5) * sy - 0.5);
      for (int j = 0; j < out_w; ++j) {
        const float col = float((double(j) + 0.5) * sx - 0.5);
        dst[std::size_t(i) * out_w + j] = bilinear_sample(slice, row, col);
      }
    }
  }
  return out;
}

std::pair<std::vector<FrameSequence>, std::vector<CropBox>> random_local_crops(
    const FrameSequence& seq, const CropConfig& cfg, Rng& rng) {
  cfg.validate();
  const int h = int(seq.height()), w = int(seq.width());
  if (std::min(h, w) < cfg.crop_out)
    throw ConfigError("crops: frame smaller than crop_out");

  const int side_lo = cfg.crop_out;
  const int side_hi =
      int(std::floor(std::sqrt(cfg.max_area_fraction) * std::min(h, w))) - 1;
  if (side_hi < side_lo)
    throw ConfigError("crops: frame too small for sub-50% crops of crop_out");

  std::vector<FrameSequence> crops;
  std::vector<CropBox> boxes;
  crops.reserve(std::size_t(cfg.n_crops));
  boxes.reserve(std::size_t(cfg.n_crops));
  const std::size_t t = seq.frames(), c = seq.channels();

  for (int n = 0; n < cfg.n_crops; ++n) {
    CropBox box;
    box.height = box.width = int(rng.range(side_lo, side_hi));
    box.top = int(rng.range(0, h - box.height));
    box.left = int(rng.range(0, w - box.width));

    FrameSequence patch(t, c, std::size_t(box.height),
                        std::size_t(box.width));
    for (std::size_t f = 0; f < t * c; ++f) {
      const float* src = seq.data.data() + f * std::size_t(h) * w;
      float* dst = patch.data.data() +
                   f * std::size_t(box.height) * box.width;
      for (int i = 0; i < box.height; ++i)
        std::copy_n(src + std::size_t(box.top + i) * w + box.left,
                    std::size_t(box.width),
                    dst + std::size_t(i) * box.width);
    }
    crops.push_back(resize_bilinear(patch, cfg.crop_out, cfg.crop_out));
    boxes.push_back(box);
  }
  return {std::move(crops), std::move(boxes)};
}

}  // namespace stpred
