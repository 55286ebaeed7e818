#pragma once

// Differentiable array operators with hand-written backward passes.
//
// conv2d/deconv2d run as im2col + small GEMM loops so every inner loop is a
// contiguous saxpy/dot; deconv2d reuses the exact conv geometry, which makes
// the pair adjoint by construction.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "stpred/errors.hpp"
#include "stpred/tensor.hpp"

namespace stpred {

// A value array paired with a same-shaped gradient accumulator.
template <typename T>
struct DiffArray {
  Tensor<T> value;
  Tensor<T> grad;

  DiffArray() = default;
  explicit DiffArray(Tensor<T> v)
      : value(std::move(v)), grad(value.shape()) {}
  explicit DiffArray(std::vector<std::size_t> shape)
      : value(shape), grad(std::move(shape)) {}

  void zero_grad() { grad.zero(); }
};

// Convolution weights.
//   conv2d reads kernel as (out_ch, in_ch, kh, kw);
//   deconv2d reads the same layout as (in_ch, out_ch, kh, kw).
// bias is per output channel and may be empty (no bias).
template <typename T>
struct ConvSpec {
  DiffArray<T> kernel;
  DiffArray<T> bias;
  int stride = 1;
  int pad = 0;

  void zero_grad() {
    kernel.zero_grad();
    if (!bias.value.empty()) bias.zero_grad();
  }
};

namespace detail {

template <typename T, int Slot>
std::vector<T>& scratch() {
  thread_local std::vector<T> buf;
  return buf;
}

// Column tile for the saxpy-form GEMMs; keeps one B row slice and the C row
// slices of the active tile inside L1/L2 across the k loop.
inline constexpr std::size_t kGemmTile = 2048;

// C(M x N) += A(M x K) * B(K x N)
template <typename T>
void gemm_a_b(std::size_t m, std::size_t n, std::size_t k, const T* a,
              const T* b, T* c) {
  for (std::size_t j0 = 0; j0 < n; j0 += kGemmTile) {
    const std::size_t j1 = std::min(n, j0 + kGemmTile);
    for (std::size_t p = 0; p < k; ++p) {
      const T* __restrict__ brow = b + p * n + j0;
      for (std::size_t i = 0; i < m; ++i) {
        const T av = a[i * k + p];
        if (av == T{}) continue;
        T* __restrict__ crow = c + i * n + j0;
        for (std::size_t j = 0; j < j1 - j0; ++j) crow[j] += av * brow[j];
      }
    }
  }
}

// C(M x N) += A^T * B with A stored (K x M)
template <typename T>
void gemm_at_b(std::size_t m, std::size_t n, std::size_t k, const T* a,
               const T* b, T* c) {
  for (std::size_t j0 = 0; j0 < n; j0 += kGemmTile) {
    const std::size_t j1 = std::min(n, j0 + kGemmTile);
    for (std::size_t p = 0; p < k; ++p) {
      const T* __restrict__ brow = b + p * n + j0;
      for (std::size_t i = 0; i < m; ++i) {
        const T av = a[p * m + i];
        if (av == T{}) continue;
        T* __restrict__ crow = c + i * n + j0;
        for (std::size_t j = 0; j < j1 - j0; ++j) crow[j] += av * brow[j];
      }
    }
  }
}

// C(M x R) += A(M x N) * B^T with B stored (R x N). The dot products run
// on a bank of partial accumulators so the reduction vectorizes without
// relying on float reassociation.
template <typename T>
void gemm_a_bt(std::size_t m, std::size_t r, std::size_t n, const T* a,
               const T* b, T* c) {
  constexpr std::size_t kLanes = 16;
  for (std::size_t i = 0; i < m; ++i) {
    const T* __restrict__ arow = a + i * n;
    for (std::size_t q = 0; q < r; ++q) {
      const T* __restrict__ brow = b + q * n;
      T lanes[kLanes] = {};
      std::size_t j = 0;
      for (; j + kLanes <= n; j += kLanes)
        for (std::size_t k = 0; k < kLanes; ++k)
          lanes[k] += arow[j + k] * brow[j + k];
      T acc{};
      for (; j < n; ++j) acc += arow[j] * brow[j];
      for (std::size_t k = 0; k < kLanes; ++k) acc += lanes[k];
      c[i * r + q] += acc;
    }
  }
}

// Geometry of one convolutional mapping (H, W) -> (Ho, Wo).
struct ConvGeom {
  int kh, kw, stride, pad;
  int h, w;    // input grid
  int ho, wo;  // output grid

  ConvGeom(int kh_, int kw_, int stride_, int pad_, int h_, int w_)
      : kh(kh_), kw(kw_), stride(stride_), pad(pad_), h(h_), w(w_) {
    if (stride < 1) throw ConfigError("conv: stride must be >= 1");
    if (pad < 0) throw ConfigError("conv: padding must be >= 0");
    if (h + 2 * pad < kh || w + 2 * pad < kw)
      throw DimensionError("conv: kernel does not fit padded input");
    ho = (h + 2 * pad - kh) / stride + 1;
    wo = (w + 2 * pad - kw) / stride + 1;
  }

  std::size_t patch() const { return std::size_t(kh) * kw; }
  std::size_t positions() const { return std::size_t(ho) * wo; }
};

// col(q, p) = x(ic, oh*s - pad + r, ow*s - pad + c), zero outside the frame,
// with q = (ic*kh + r)*kw + c and p = oh*wo + ow.
template <typename T>
void im2col(const ConvGeom& g, int channels, const T* x, T* col) {
  const std::size_t pos = g.positions();
  for (int ic = 0; ic < channels; ++ic) {
    const T* plane = x + std::size_t(ic) * g.h * g.w;
    for (int r = 0; r < g.kh; ++r) {
      for (int c = 0; c < g.kw; ++c) {
        T* __restrict__ row =
            col + ((std::size_t(ic) * g.kh + r) * g.kw + c) * pos;
        for (int oh = 0; oh < g.ho; ++oh) {
          const int ih = oh * g.stride - g.pad + r;
          T* __restrict__ dst = row + std::size_t(oh) * g.wo;
          if (ih < 0 || ih >= g.h) {
            std::fill(dst, dst + g.wo, T{});
            continue;
          }
          const T* __restrict__ src = plane + std::size_t(ih) * g.w;
          int ow = 0;
          for (; ow < g.wo; ++ow) {
            const int iw = ow * g.stride - g.pad + c;
            dst[ow] = (iw >= 0 && iw < g.w) ? src[iw] : T{};
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-add col back onto the (channels, h, w) frame.
template <typename T>
void col2im_add(const ConvGeom& g, int channels, const T* col, T* x) {
  const std::size_t pos = g.positions();
  for (int ic = 0; ic < channels; ++ic) {
    T* plane = x + std::size_t(ic) * g.h * g.w;
    for (int r = 0; r < g.kh; ++r) {
      for (int c = 0; c < g.kw; ++c) {
        const T* __restrict__ row =
            col + ((std::size_t(ic) * g.kh + r) * g.kw + c) * pos;
        for (int oh = 0; oh < g.ho; ++oh) {
          const int ih = oh * g.stride - g.pad + r;
          if (ih < 0 || ih >= g.h) continue;
          T* __restrict__ dst = plane + std::size_t(ih) * g.w;
          const T* __restrict__ src = row + std::size_t(oh) * g.wo;
          for (int ow = 0; ow < g.wo; ++ow) {
            const int iw = ow * g.stride - g.pad + c;
            if (iw >= 0 && iw < g.w) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

template <typename T>
void validate_conv_args(const Tensor<T>& x, const ConvSpec<T>& s,
                        bool transposed) {
  if (x.rank() != 4) throw DimensionError("conv: input must be 4-d NCHW");
  if (s.kernel.value.rank() != 4)
    throw DimensionError("conv: kernel must be 4-d");
  const std::size_t kh = s.kernel.value.dim(2), kw = s.kernel.value.dim(3);
  if (!transposed && (kh % 2 == 0 || kw % 2 == 0))
    throw ConfigError("conv2d: kernel sides must be odd");
  const std::size_t want_in = transposed ? 0 : 1;
  if (x.dim(1) != s.kernel.value.dim(want_in))
    throw DimensionError("conv: input channels do not match kernel");
  const std::size_t out_ch = s.kernel.value.dim(transposed ? 1 : 0);
  if (!s.bias.value.empty() &&
      (s.bias.value.rank() != 1 || s.bias.value.dim(0) != out_ch))
    throw DimensionError("conv: bias size does not match output channels");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// conv2d: cross-correlation with zero padding.
//   x (N, Cin, H, W) -> (N, Cout, Ho, Wo),  Ho = (H + 2p - kh)/s + 1.
// ---------------------------------------------------------------------------

template <typename T>
DiffArray<T> conv2d(const DiffArray<T>& x, const ConvSpec<T>& s) {
  detail::validate_conv_args(x.value, s, /*transposed=*/false);
  const std::size_t n = x.value.dim(0), ci = x.value.dim(1);
  const std::size_t co = s.kernel.value.dim(0);
  const detail::ConvGeom g(int(s.kernel.value.dim(2)),
                           int(s.kernel.value.dim(3)), s.stride, s.pad,
                           int(x.value.dim(2)), int(x.value.dim(3)));
  const std::size_t q = ci * g.patch(), p = g.positions();

  DiffArray<T> out(
      std::vector<std::size_t>{n, co, std::size_t(g.ho), std::size_t(g.wo)});
  auto& col = detail::scratch<T, 0>();
  col.resize(q * p);

  const T* bias = s.bias.value.empty() ? nullptr : s.bias.value.data();
  for (std::size_t f = 0; f < n; ++f) {
    detail::im2col(g, int(ci), x.value.data() + f * ci * g.h * g.w,
                   col.data());
    T* y = out.value.data() + f * co * p;
    if (bias) {
      for (std::size_t oc = 0; oc < co; ++oc)
        std::fill(y + oc * p, y + (oc + 1) * p, bias[oc]);
    }
    detail::gemm_a_b(co, p, q, s.kernel.value.data(), col.data(), y);
  }
  return out;
}

// Accumulates gradients into x.grad, s.kernel.grad and s.bias.grad.
template <typename T>
void conv2d_backward(DiffArray<T>& x, ConvSpec<T>& s,
                     const Tensor<T>& grad_out) {
  detail::validate_conv_args(x.value, s, /*transposed=*/false);
  const std::size_t n = x.value.dim(0), ci = x.value.dim(1);
  const std::size_t co = s.kernel.value.dim(0);
  const detail::ConvGeom g(int(s.kernel.value.dim(2)),
                           int(s.kernel.value.dim(3)), s.stride, s.pad,
                           int(x.value.dim(2)), int(x.value.dim(3)));
  const std::size_t q = ci * g.patch(), p = g.positions();
  if (grad_out.rank() != 4 || grad_out.dim(0) != n || grad_out.dim(1) != co ||
      grad_out.dim(2) != std::size_t(g.ho) ||
      grad_out.dim(3) != std::size_t(g.wo))
    throw DimensionError("conv2d_backward: grad shape mismatch");

  auto& col = detail::scratch<T, 0>();
  auto& dcol = detail::scratch<T, 1>();
  col.resize(q * p);
  dcol.resize(q * p);

  for (std::size_t f = 0; f < n; ++f) {
    const T* gy = grad_out.data() + f * co * p;
    detail::im2col(g, int(ci), x.value.data() + f * ci * g.h * g.w,
                   col.data());
    // dK += gy * col^T
    detail::gemm_a_bt(co, q, p, gy, col.data(), s.kernel.grad.data());
    // dX += K^T * gy, scattered back through the column layout
    std::fill(dcol.begin(), dcol.end(), T{});
    detail::gemm_at_b(q, p, co, s.kernel.value.data(), gy, dcol.data());
    detail::col2im_add(g, int(ci), dcol.data(),
                       x.grad.data() + f * ci * g.h * g.w);
    if (!s.bias.value.empty()) {
      T* gb = s.bias.grad.data();
      for (std::size_t oc = 0; oc < co; ++oc) {
        T acc{};
        const T* row = gy + oc * p;
        for (std::size_t j = 0; j < p; ++j) acc += row[j];
        gb[oc] += acc;
      }
    }
  }
}

// ---------------------------------------------------------------------------
// deconv2d: transposed convolution, the adjoint of conv2d with the same spec.
//   x (N, Cin, h, w) -> (N, Cout, Ho, Wo),  Ho = (h - 1)*s - 2p + kh.
// ---------------------------------------------------------------------------

namespace detail {

// A stride-1 transposed convolution is a plain convolution with the kernel
// flipped 180 degrees, axes (in, out) swapped and complementary padding
// kh-1-pad. Build that kernel into scratch storage.
template <typename T>
const std::vector<T>& flipped_kernel(const Tensor<T>& k) {
  const std::size_t ci = k.dim(0), co = k.dim(1), kh = k.dim(2),
                    kw = k.dim(3);
  auto& fk = scratch<T, 3>();
  fk.resize(k.size());
  for (std::size_t c0 = 0; c0 < ci; ++c0)
    for (std::size_t oc = 0; oc < co; ++oc)
      for (std::size_t r = 0; r < kh; ++r)
        for (std::size_t c = 0; c < kw; ++c)
          fk[((oc * ci + c0) * kh + (kh - 1 - r)) * kw + (kw - 1 - c)] =
              k[((c0 * co + oc) * kh + r) * kw + c];
  return fk;
}

}  // namespace detail

template <typename T>
DiffArray<T> deconv2d(const DiffArray<T>& x, const ConvSpec<T>& s) {
  detail::validate_conv_args(x.value, s, /*transposed=*/true);
  const std::size_t n = x.value.dim(0), ci = x.value.dim(1);
  const std::size_t co = s.kernel.value.dim(1);
  const int kh = int(s.kernel.value.dim(2)), kw = int(s.kernel.value.dim(3));
  const int h = int(x.value.dim(2)), w = int(x.value.dim(3));
  const int out_h = (h - 1) * s.stride - 2 * s.pad + kh;
  const int out_w = (w - 1) * s.stride - 2 * s.pad + kw;
  if (out_h < 1 || out_w < 1)
    throw DimensionError("deconv2d: output would be empty");

  if (s.stride == 1 && kh == kw && s.pad <= kh - 1) {
    const detail::ConvGeom g(kh, kw, 1, kh - 1 - s.pad, h, w);
    const auto& fk = detail::flipped_kernel(s.kernel.value);
    const std::size_t q = ci * g.patch(), p = g.positions();
    DiffArray<T> out(std::vector<std::size_t>{n, co, std::size_t(g.ho),
                                              std::size_t(g.wo)});
    auto& col = detail::scratch<T, 0>();
    col.resize(q * p);
    const T* bias = s.bias.value.empty() ? nullptr : s.bias.value.data();
    for (std::size_t f = 0; f < n; ++f) {
      detail::im2col(g, int(ci), x.value.data() + f * ci * std::size_t(h) * w,
                     col.data());
      T* y = out.value.data() + f * co * p;
      if (bias)
        for (std::size_t oc = 0; oc < co; ++oc)
          std::fill(y + oc * p, y + (oc + 1) * p, bias[oc]);
      detail::gemm_a_b(co, p, q, fk.data(), col.data(), y);
    }
    return out;
  }
  // The conv geometry whose adjoint we are computing.
  const detail::ConvGeom g(kh, kw, s.stride, s.pad, out_h, out_w);
  if (g.ho != h || g.wo != w)
    throw DimensionError("deconv2d: input grid inconsistent with geometry");

  const std::size_t q = co * g.patch(), p = g.positions();
  DiffArray<T> out(
      std::vector<std::size_t>{n, co, std::size_t(out_h), std::size_t(out_w)});

  // Kr(q, ci) with q = (oc*kh + r)*kw + c, reading kernel (ci, oc, r, c).
  auto& kr = detail::scratch<T, 2>();
  kr.resize(q * ci);
  {
    const T* k = s.kernel.value.data();
    const std::size_t patch = g.patch();
    for (std::size_t c0 = 0; c0 < ci; ++c0)
      for (std::size_t oc = 0; oc < co; ++oc)
        for (std::size_t e = 0; e < patch; ++e)
          kr[(oc * patch + e) * ci + c0] = k[(c0 * co + oc) * patch + e];
  }

  auto& cols = detail::scratch<T, 0>();
  cols.resize(q * p);
  for (std::size_t f = 0; f < n; ++f) {
    std::fill(cols.begin(), cols.end(), T{});
    detail::gemm_a_b(q, p, ci, kr.data(), x.value.data() + f * ci * p,
                     cols.data());
    T* y = out.value.data() + f * co * std::size_t(out_h) * out_w;
    detail::col2im_add(g, int(co), cols.data(), y);
    if (!s.bias.value.empty()) {
      const T* bias = s.bias.value.data();
      for (std::size_t oc = 0; oc < co; ++oc) {
        T* plane = y + oc * std::size_t(out_h) * out_w;
        const T b = bias[oc];
        for (std::size_t j = 0; j < std::size_t(out_h) * out_w; ++j)
          plane[j] += b;
      }
    }
  }
  return out;
}

template <typename T>
void deconv2d_backward(DiffArray<T>& x, ConvSpec<T>& s,
                       const Tensor<T>& grad_out) {
  detail::validate_conv_args(x.value, s, /*transposed=*/true);
  const std::size_t n = x.value.dim(0), ci = x.value.dim(1);
  const std::size_t co = s.kernel.value.dim(1);
  const int kh = int(s.kernel.value.dim(2)), kw = int(s.kernel.value.dim(3));
  const int h = int(x.value.dim(2)), w = int(x.value.dim(3));
  const int out_h = (h - 1) * s.stride - 2 * s.pad + kh;
  const int out_w = (w - 1) * s.stride - 2 * s.pad + kw;
  if (grad_out.rank() != 4 || grad_out.dim(0) != n || grad_out.dim(1) != co ||
      grad_out.dim(2) != std::size_t(out_h) ||
      grad_out.dim(3) != std::size_t(out_w))
    throw DimensionError("deconv2d_backward: grad shape mismatch");

  if (s.stride == 1 && kh == kw && s.pad <= kh - 1) {
    // Backward of the flipped-kernel convolution form.
    const detail::ConvGeom g(kh, kw, 1, kh - 1 - s.pad, h, w);
    const auto& fk = detail::flipped_kernel(s.kernel.value);
    const std::size_t q = ci * g.patch(), p = g.positions();
    auto& col = detail::scratch<T, 0>();
    auto& dcol = detail::scratch<T, 1>();
    col.resize(q * p);
    dcol.resize(q * p);
    auto& gfk = detail::scratch<T, 4>();
    gfk.assign(co * q, T{});
    for (std::size_t f = 0; f < n; ++f) {
      const T* gy = grad_out.data() + f * co * p;
      detail::im2col(g, int(ci),
                     x.value.data() + f * ci * std::size_t(h) * w,
                     col.data());
      detail::gemm_a_bt(co, q, p, gy, col.data(), gfk.data());
      std::fill(dcol.begin(), dcol.end(), T{});
      detail::gemm_at_b(q, p, co, fk.data(), gy, dcol.data());
      detail::col2im_add(g, int(ci), dcol.data(),
                         x.grad.data() + f * ci * std::size_t(h) * w);
      if (!s.bias.value.empty()) {
        T* gb = s.bias.grad.data();
        for (std::size_t oc = 0; oc < co; ++oc) {
          T acc{};
          const T* row = gy + oc * p;
          for (std::size_t j = 0; j < p; ++j) acc += row[j];
          gb[oc] += acc;
        }
      }
    }
    // Unflip gfk (Co, Ci, kh, kw) back into the kernel layout.
    T* gk = s.kernel.grad.data();
    const std::size_t patch = std::size_t(kh) * kw;
    for (std::size_t c0 = 0; c0 < ci; ++c0)
      for (std::size_t oc = 0; oc < co; ++oc)
        for (std::size_t r = 0; r < std::size_t(kh); ++r)
          for (std::size_t c = 0; c < std::size_t(kw); ++c)
            gk[(c0 * co + oc) * patch + r * kw + c] +=
                gfk[((oc * ci + c0) * kh + (kh - 1 - r)) * kw +
                    (kw - 1 - c)];
    return;
  }

  const detail::ConvGeom g(kh, kw, s.stride, s.pad, out_h, out_w);
  const std::size_t q = co * g.patch(), p = g.positions();

  auto& dcols = detail::scratch<T, 0>();
  dcols.resize(q * p);
  auto& gkr = detail::scratch<T, 2>();
  gkr.assign(q * ci, T{});

  for (std::size_t f = 0; f < n; ++f) {
    const T* gy = grad_out.data() + f * co * std::size_t(out_h) * out_w;
    detail::im2col(g, int(co), gy, dcols.data());
    // dX += Kr^T * dcols
    {
      const T* k = s.kernel.value.data();
      T* gx = x.grad.data() + f * ci * p;
      const std::size_t patch = g.patch();
      // Kr(q, ci) implicit from kernel(ci, co, r, c); loop q outer.
      for (std::size_t oc = 0; oc < co; ++oc) {
        for (std::size_t e = 0; e < patch; ++e) {
          const T* __restrict__ drow = dcols.data() + (oc * patch + e) * p;
          for (std::size_t c0 = 0; c0 < ci; ++c0) {
            const T kv = k[(c0 * co + oc) * patch + e];
            if (kv == T{}) continue;
            T* __restrict__ xrow = gx + c0 * p;
            for (std::size_t j = 0; j < p; ++j) xrow[j] += kv * drow[j];
          }
        }
      }
    }
    // dKr += dcols * x^T
    detail::gemm_a_bt(q, ci, p, dcols.data(), x.value.data() + f * ci * p,
                      gkr.data());
    if (!s.bias.value.empty()) {
      T* gb = s.bias.grad.data();
      for (std::size_t oc = 0; oc < co; ++oc) {
        T acc{};
        const T* plane = gy + oc * std::size_t(out_h) * out_w;
        for (std::size_t j = 0; j < std::size_t(out_h) * out_w; ++j)
          acc += plane[j];
        gb[oc] += acc;
      }
    }
  }
  // Scatter dKr back into kernel layout (ci, co, r, c).
  {
    T* gk = s.kernel.grad.data();
    const std::size_t patch = g.patch();
    for (std::size_t c0 = 0; c0 < ci; ++c0)
      for (std::size_t oc = 0; oc < co; ++oc)
        for (std::size_t e = 0; e < patch; ++e)
          gk[(c0 * co + oc) * patch + e] += gkr[(oc * patch + e) * ci + c0];
  }
}

// ---------------------------------------------------------------------------
// layer_norm over the (C, H, W) extent of each sample.
// ---------------------------------------------------------------------------

template <typename T>
struct LayerNormCache {
  std::vector<T> mean;
  std::vector<T> inv_std;
};

template <typename T>
DiffArray<T> layer_norm(const DiffArray<T>& x, const DiffArray<T>& gain,
                        const DiffArray<T>& bias, T eps,
                        LayerNormCache<T>* cache = nullptr) {
  if (x.value.rank() != 4) throw DimensionError("layer_norm: input not NCHW");
  const std::size_t n = x.value.dim(0), c = x.value.dim(1);
  const std::size_t hw = x.value.dim(2) * x.value.dim(3);
  const std::size_t m = c * hw;
  if (gain.value.size() != c || bias.value.size() != c)
    throw DimensionError("layer_norm: gain/bias must be per channel");

  DiffArray<T> out(x.value.shape());
  if (cache) {
    cache->mean.assign(n, T{});
    cache->inv_std.assign(n, T{});
  }
  for (std::size_t f = 0; f < n; ++f) {
    const T* xv = x.value.data() + f * m;
    T* yv = out.value.data() + f * m;
    T mean{};
    for (std::size_t i = 0; i < m; ++i) mean += xv[i];
    mean /= T(m);
    T var{};
    for (std::size_t i = 0; i < m; ++i) {
      const T d = xv[i] - mean;
      var += d * d;
    }
    var /= T(m);
    const T inv_std = T(1) / std::sqrt(var + eps);
    if (cache) {
      cache->mean[f] = mean;
      cache->inv_std[f] = inv_std;
    }
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T gch = gain.value[ch], bch = bias.value[ch];
      const T* xc = xv + ch * hw;
      T* yc = yv + ch * hw;
      for (std::size_t i = 0; i < hw; ++i)
        yc[i] = gch * (xc[i] - mean) * inv_std + bch;
    }
  }
  return out;
}

template <typename T>
void layer_norm_backward(DiffArray<T>& x, DiffArray<T>& gain,
                         DiffArray<T>& bias, const LayerNormCache<T>& cache,
                         const Tensor<T>& grad_out) {
  require_same_shape(x.value, grad_out, "layer_norm_backward");
  const std::size_t n = x.value.dim(0), c = x.value.dim(1);
  const std::size_t hw = x.value.dim(2) * x.value.dim(3);
  const std::size_t m = c * hw;

  for (std::size_t f = 0; f < n; ++f) {
    const T* xv = x.value.data() + f * m;
    const T* gy = grad_out.data() + f * m;
    T* gx = x.grad.data() + f * m;
    const T mean = cache.mean[f], inv_std = cache.inv_std[f];

    // dxhat = gy * gain; reduce the two correction sums over the sample.
    T sum_dxhat{}, sum_dxhat_xhat{};
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T gch = gain.value[ch];
      const T* xc = xv + ch * hw;
      const T* gc = gy + ch * hw;
      T sg{}, sgx{};
      for (std::size_t i = 0; i < hw; ++i) {
        const T xhat = (xc[i] - mean) * inv_std;
        const T dxh = gc[i] * gch;
        sg += dxh;
        sgx += dxh * xhat;
        gain.grad[ch] += gc[i] * xhat;
        bias.grad[ch] += gc[i];
      }
      sum_dxhat += sg;
      sum_dxhat_xhat += sgx;
    }
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T gch = gain.value[ch];
      const T* xc = xv + ch * hw;
      const T* gc = gy + ch * hw;
      T* gdst = gx + ch * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        const T xhat = (xc[i] - mean) * inv_std;
        const T dxh = gc[i] * gch;
        gdst[i] += inv_std * (dxh - (sum_dxhat + xhat * sum_dxhat_xhat) / T(m));
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Elementwise ops.
// ---------------------------------------------------------------------------

// max(x, 0); the subgradient at exactly 0 is 0.
template <typename T>
DiffArray<T> relu(const DiffArray<T>& x) {
  DiffArray<T> out(x.value.shape());
  const T* xv = x.value.data();
  T* yv = out.value.data();
  for (std::size_t i = 0; i < x.value.size(); ++i)
    yv[i] = xv[i] > T{} ? xv[i] : T{};
  return out;
}

template <typename T>
void relu_backward(DiffArray<T>& x, const Tensor<T>& grad_out) {
  require_same_shape(x.value, grad_out, "relu_backward");
  const T* xv = x.value.data();
  const T* gy = grad_out.data();
  T* gx = x.grad.data();
  for (std::size_t i = 0; i < x.value.size(); ++i)
    if (xv[i] > T{}) gx[i] += gy[i];
}

template <typename T>
DiffArray<T> sigmoid(const DiffArray<T>& x) {
  DiffArray<T> out(x.value.shape());
  const T* xv = x.value.data();
  T* yv = out.value.data();
  for (std::size_t i = 0; i < x.value.size(); ++i)
    yv[i] = T(1) / (T(1) + std::exp(-xv[i]));
  return out;
}

// Needs the forward output (y) since dy/dx = y * (1 - y).
template <typename T>
void sigmoid_backward(DiffArray<T>& x, const Tensor<T>& y,
                      const Tensor<T>& grad_out) {
  require_same_shape(x.value, grad_out, "sigmoid_backward");
  const T* yv = y.data();
  const T* gy = grad_out.data();
  T* gx = x.grad.data();
  for (std::size_t i = 0; i < x.value.size(); ++i)
    gx[i] += gy[i] * yv[i] * (T(1) - yv[i]);
}

// ---------------------------------------------------------------------------
// Nearest-neighbour upsampling (N, C, h, w) -> (N, C, H, W).
// ---------------------------------------------------------------------------

template <typename T>
DiffArray<T> upsample_nearest(const DiffArray<T>& x, std::size_t out_h,
                              std::size_t out_w) {
  if (x.value.rank() != 4)
    throw DimensionError("upsample_nearest: input not NCHW");
  const std::size_t n = x.value.dim(0), c = x.value.dim(1);
  const std::size_t h = x.value.dim(2), w = x.value.dim(3);
  DiffArray<T> out(std::vector<std::size_t>{n, c, out_h, out_w});
  for (std::size_t f = 0; f < n * c; ++f) {
    const T* src = x.value.data() + f * h * w;
    T* dst = out.value.data() + f * out_h * out_w;
    for (std::size_t i = 0; i < out_h; ++i) {
      const std::size_t si = i * h / out_h;
      for (std::size_t j = 0; j < out_w; ++j)
        dst[i * out_w + j] = src[si * w + j * w / out_w];
    }
  }
  return out;
}

template <typename T>
void upsample_nearest_backward(DiffArray<T>& x, const Tensor<T>& grad_out) {
  const std::size_t n = x.value.dim(0), c = x.value.dim(1);
  const std::size_t h = x.value.dim(2), w = x.value.dim(3);
  const std::size_t out_h = grad_out.dim(2), out_w = grad_out.dim(3);
  for (std::size_t f = 0; f < n * c; ++f) {
    const T* gy = grad_out.data() + f * out_h * out_w;
    T* gx = x.grad.data() + f * h * w;
    for (std::size_t i = 0; i < out_h; ++i) {
      const std::size_t si = i * h / out_h;
      for (std::size_t j = 0; j < out_w; ++j)
        gx[si * w + j * w / out_w] += gy[i * out_w + j];
    }
  }
}

// ---------------------------------------------------------------------------
// Channel concatenation (N, Ca, H, W) ++ (N, Cb, H, W).
// ---------------------------------------------------------------------------

template <typename T>
DiffArray<T> concat_channels(const DiffArray<T>& a, const DiffArray<T>& b) {
  if (a.value.rank() != 4 || b.value.rank() != 4 ||
      a.value.dim(0) != b.value.dim(0) || a.value.dim(2) != b.value.dim(2) ||
      a.value.dim(3) != b.value.dim(3))
    throw DimensionError("concat_channels: incompatible shapes");
  const std::size_t n = a.value.dim(0), ca = a.value.dim(1),
                    cb = b.value.dim(1);
  const std::size_t hw = a.value.dim(2) * a.value.dim(3);
  DiffArray<T> out(
      std::vector<std::size_t>{n, ca + cb, a.value.dim(2), a.value.dim(3)});
  for (std::size_t f = 0; f < n; ++f) {
    std::copy_n(a.value.data() + f * ca * hw, ca * hw,
                out.value.data() + f * (ca + cb) * hw);
    std::copy_n(b.value.data() + f * cb * hw, cb * hw,
                out.value.data() + (f * (ca + cb) + ca) * hw);
  }
  return out;
}

template <typename T>
void concat_channels_backward(DiffArray<T>& a, DiffArray<T>& b,
                              const Tensor<T>& grad_out) {
  const std::size_t n = a.value.dim(0), ca = a.value.dim(1),
                    cb = b.value.dim(1);
  const std::size_t hw = a.value.dim(2) * a.value.dim(3);
  for (std::size_t f = 0; f < n; ++f) {
    const T* g = grad_out.data() + f * (ca + cb) * hw;
    T* ga = a.grad.data() + f * ca * hw;
    T* gb = b.grad.data() + f * cb * hw;
    for (std::size_t i = 0; i < ca * hw; ++i) ga[i] += g[i];
    for (std::size_t i = 0; i < cb * hw; ++i) gb[i] += g[ca * hw + i];
  }
}

// ---------------------------------------------------------------------------
// Bilinear sampling with border clamp.
// ---------------------------------------------------------------------------

namespace detail {

// Clamped cell index; a NaN coordinate indexes cell 0 (the NaN itself still
// propagates through the arithmetic).
template <typename T>
std::size_t cell_index(T v, std::size_t limit) {
  if (!(v > T(0))) return 0;
  return std::min(std::size_t(v), limit);
}

}  // namespace detail

// Interpolated value of a 2-d field at fractional (row, col). Coordinates are
// clamped to [0, H-1] x [0, W-1] first.
template <typename T>
T bilinear_sample(const Tensor<T>& field, T row, T col) {
  const std::size_t h = field.dim(0), w = field.dim(1);
  const T r = std::clamp(row, T(0), T(h - 1));
  const T c = std::clamp(col, T(0), T(w - 1));
  const std::size_t r0 = detail::cell_index(r, h - 1);
  const std::size_t c0 = detail::cell_index(c, w - 1);
  const std::size_t r1 = std::min(r0 + 1, h - 1);
  const std::size_t c1 = std::min(c0 + 1, w - 1);
  const T fr = r - T(r0), fc = c - T(c0);
  const T v00 = field(r0, c0), v01 = field(r0, c1);
  const T v10 = field(r1, c0), v11 = field(r1, c1);
  return (T(1) - fr) * ((T(1) - fc) * v00 + fc * v01) +
         fr * ((T(1) - fc) * v10 + fc * v11);
}

// Backward of bilinear_sample: accumulates into field_grad and returns the
// coordinate gradients. The coordinate gradient is the local bilinear slope
// and 0 where the coordinate was clamped.
template <typename T>
void bilinear_sample_backward(const Tensor<T>& field, T row, T col, T grad_out,
                              Tensor<T>& field_grad, T* grad_row, T* grad_col) {
  const std::size_t h = field.dim(0), w = field.dim(1);
  const bool row_clamped = row < T(0) || row > T(h - 1);
  const bool col_clamped = col < T(0) || col > T(w - 1);
  const T r = std::clamp(row, T(0), T(h - 1));
  const T c = std::clamp(col, T(0), T(w - 1));
  const std::size_t r0 = detail::cell_index(r, h - 1);
  const std::size_t c0 = detail::cell_index(c, w - 1);
  const std::size_t r1 = std::min(r0 + 1, h - 1);
  const std::size_t c1 = std::min(c0 + 1, w - 1);
  const T fr = r - T(r0), fc = c - T(c0);

  field_grad(r0, c0) += grad_out * (T(1) - fr) * (T(1) - fc);
  field_grad(r0, c1) += grad_out * (T(1) - fr) * fc;
  field_grad(r1, c0) += grad_out * fr * (T(1) - fc);
  field_grad(r1, c1) += grad_out * fr * fc;

  const T v00 = field(r0, c0), v01 = field(r0, c1);
  const T v10 = field(r1, c0), v11 = field(r1, c1);
  if (grad_row) {
    const T slope = (T(1) - fc) * (v10 - v00) + fc * (v11 - v01);
    *grad_row = row_clamped ? T{} : grad_out * slope;
  }
  if (grad_col) {
    const T slope = (T(1) - fr) * (v01 - v00) + fr * (v11 - v10);
    *grad_col = col_clamped ? T{} : grad_out * slope;
  }
}

// y += a * x
template <typename T>
void axpy(T a, const Tensor<T>& x, Tensor<T>& y) {
  require_same_shape(x, y, "axpy");
  const T* xv = x.data();
  T* yv = y.data();
  for (std::size_t i = 0; i < x.size(); ++i) yv[i] += a * xv[i];
}

}  // namespace stpred
