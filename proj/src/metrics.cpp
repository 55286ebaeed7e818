#include "stpred/metrics.hpp"

#include <array>
#include <cmath>
#include <vector>

#include "stpred/errors.hpp"

namespace stpred {

namespace {

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;

const std::array<double, kWindow>& gaussian_window() {
  static const std::array<double, kWindow> g = [] {
    std::array<double, kWindow> w{};
    double sum = 0.0;
    for (int i = 0; i < kWindow; ++i) {
      const double d = double(i) - (kWindow - 1) / 2.0;
      w[std::size_t(i)] = std::exp(-d * d / (2.0 * kSigma * kSigma));
      sum += w[std::size_t(i)];
    }
    for (double& v : w) v /= sum;
    return w;
  }();
  return g;
}

// Separable valid-mode Gaussian filtering of an (h x w) double image.
std::vector<double> filter_valid(const std::vector<double>& img, int h,
                                 int w) {
  const auto& g = gaussian_window();
  const int wo = w - kWindow + 1, ho = h - kWindow + 1;
  std::vector<double> rows(std::size_t(h) * wo);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < wo; ++x) {
      double acc = 0.0;
      for (int k = 0; k < kWindow; ++k)
        acc += g[std::size_t(k)] * img[std::size_t(y) * w + x + k];
      rows[std::size_t(y) * wo + x] = acc;
    }
  std::vector<double> out(std::size_t(ho) * wo);
  for (int y = 0; y < ho; ++y)
    for (int x = 0; x < wo; ++x) {
      double acc = 0.0;
      for (int k = 0; k < kWindow; ++k)
        acc += g[std::size_t(k)] * rows[std::size_t(y + k) * wo + x];
      out[std::size_t(y) * wo + x] = acc;
    }
  return out;
}

}  // namespace

double ssim_image(const Tensor<float>& a, const Tensor<float>& b,
                  double data_range) {
  if (a.rank() != 2 || b.rank() != 2)
    throw DimensionError("ssim: inputs must be 2-d images");
  require_same_shape(a, b, "ssim");
  const int h = int(a.dim(0)), w = int(a.dim(1));
  if (h < kWindow || w < kWindow)
    throw ConfigError("ssim: image smaller than the 11x11 window");

  const std::size_t n = a.size();
  std::vector<double> da(n), db(n), daa(n), dbb(n), dab(n);
  for (std::size_t i = 0; i < n; ++i) {
    da[i] = double(a[i]);
    db[i] = double(b[i]);
    daa[i] = da[i] * da[i];
    dbb[i] = db[i] * db[i];
    dab[i] = da[i] * db[i];
  }
  const auto mu1 = filter_valid(da, h, w);
  const auto mu2 = filter_valid(db, h, w);
  const auto e_aa = filter_valid(daa, h, w);
  const auto e_bb = filter_valid(dbb, h, w);
  const auto e_ab = filter_valid(dab, h, w);

  const double c1 = (0.01 * data_range) * (0.01 * data_range);
  const double c2 = (0.03 * data_range) * (0.03 * data_range);

  double acc = 0.0;
  for (std::size_t i = 0; i < mu1.size(); ++i) {
    const double m1 = mu1[i], m2 = mu2[i];
    const double s1 = e_aa[i] - m1 * m1;
    const double s2 = e_bb[i] - m2 * m2;
    const double s12 = e_ab[i] - m1 * m2;
    const double num = (2.0 * m1 * m2 + c1) * (2.0 * s12 + c2);
    const double den = (m1 * m1 + m2 * m2 + c1) * (s1 + s2 + c2);
    acc += num / den;
  }
  return acc / double(mu1.size());
}

double ssim(const FrameSequence& a, const FrameSequence& b,
            double data_range) {
  require_same_shape(a.data, b.data, "ssim");
  const std::size_t slices = a.frames() * a.channels();
  const std::size_t hw = a.height() * a.width();
  Tensor<float> sa({a.height(), a.width()}), sb(sa.shape());
  double acc = 0.0;
  for (std::size_t s = 0; s < slices; ++s) {
    std::copy_n(a.data.data() + s * hw, hw, sa.data());
    std::copy_n(b.data.data() + s * hw, hw, sb.data());
    acc += ssim_image(sa, sb, data_range);
  }
  return acc / double(slices);
}

double mse(const FrameSequence& a, const FrameSequence& b) {
  require_same_shape(a.data, b.data, "mse");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = double(a.data[i]) - double(b.data[i]);
    acc += d * d;
  }
  return acc / double(a.data.size());
}

double psnr_from_mse(double mse_value, double data_range) {
  if (!(mse_value > 0.0))
    throw UndefinedPsnrError("psnr: undefined for zero MSE");
  return 10.0 * std::log10(data_range * data_range / mse_value);
}

double psnr(const FrameSequence& pred, const FrameSequence& target,
            double data_range) {
  return psnr_from_mse(mse(pred, target), data_range);
}

}  // namespace stpred
