#pragma once

#include "stpred/frames.hpp"
#include "stpred/tensor.hpp"

namespace stpred {

// Windowed SSIM of two single-channel images: 11x11 Gaussian window with
// sigma 1.5, C1 = (0.01*range)^2, C2 = (0.03*range)^2, mean over valid
// window positions. Images must be at least 11x11.
double ssim_image(const Tensor<float>& a, const Tensor<float>& b,
                  double data_range = 1.0);

// Mean of ssim_image over frames and channels.
double ssim(const FrameSequence& a, const FrameSequence& b,
            double data_range = 1.0);

double mse(const FrameSequence& a, const FrameSequence& b);

// 10*log10(range^2 / mse); a zero MSE has no defined PSNR and throws
// UndefinedPsnrError.
double psnr_from_mse(double mse_value, double data_range = 1.0);
double psnr(const FrameSequence& pred, const FrameSequence& target,
            double data_range = 1.0);

}  // namespace stpred
