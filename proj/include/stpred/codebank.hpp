#pragma once

// Vector-quantization prior bank: nearest-neighbour discretisation of latent
// maps, the two-term commitment loss and the straight-through gradient copy.

#include <cmath>
#include <cstddef>
#include <vector>

#include "stpred/diff.hpp"
#include "stpred/errors.hpp"
#include "stpred/rng.hpp"

namespace stpred {

template <typename T>
struct Codebank {
  DiffArray<T> codes;  // (O, D)

  std::size_t entries() const { return codes.value.dim(0); }
  std::size_t dim() const { return codes.value.dim(1); }
};

// Entries drawn uniformly from [-1/O, 1/O].
template <typename T>
Codebank<T> make_codebank(std::size_t entries, std::size_t dim, Rng& rng) {
  if (entries < 2 || dim < 1)
    throw ConfigError("codebank: need O >= 2 and D >= 1");
  Codebank<T> bank;
  bank.codes = DiffArray<T>(std::vector<std::size_t>{entries, dim});
  const double bound = 1.0 / double(entries);
  for (std::size_t i = 0; i < bank.codes.value.size(); ++i)
    bank.codes.value[i] = T(rng.uniform(-bound, bound));
  return bank;
}

template <typename T>
struct QuantizeResult {
  std::vector<std::size_t> indices;  // one codeword index per position
  Tensor<T> quantized;               // selected codewords, input layout
};

// Nearest codeword per position of z (N, D, H, W), squared Euclidean
// distance accumulated in ascending component order, ties broken by the
// lowest index (strict less-than comparison).
template <typename T>
QuantizeResult<T> quantize(const Tensor<T>& z, const Codebank<T>& bank) {
  if (z.rank() != 4) throw DimensionError("quantize: input must be NCHW");
  const std::size_t d = bank.dim();
  if (z.dim(1) != d)
    throw DimensionError("quantize: channel dim does not match codeword dim");
  const std::size_t n = z.dim(0), hw = z.dim(2) * z.dim(3);
  const std::size_t o = bank.entries();

  QuantizeResult<T> out;
  out.indices.resize(n * hw);
  out.quantized = Tensor<T>(z.shape());

  std::vector<T> vec(d);
  const T* codes = bank.codes.value.data();
  for (std::size_t f = 0; f < n; ++f) {
    const T* base = z.data() + f * d * hw;
    for (std::size_t p = 0; p < hw; ++p) {
      for (std::size_t k = 0; k < d; ++k) vec[k] = base[k * hw + p];
      std::size_t best = 0;
      T best_dist{};
      for (std::size_t j = 0; j < o; ++j) {
        const T* __restrict__ c = codes + j * d;
        T dist{};
        for (std::size_t k = 0; k < d; ++k) {
          const T diff = vec[k] - c[k];
          dist += diff * diff;
        }
        if (j == 0 || dist < best_dist) {
          best = j;
          best_dist = dist;
        }
      }
      out.indices[f * hw + p] = best;
      T* q = out.quantized.data() + f * d * hw;
      const T* c = codes + best * d;
      for (std::size_t k = 0; k < d; ++k) q[k * hw + p] = c[k];
    }
  }
  return out;
}

// Two-term objective, mean over positions P:
//   loss   = (1 + beta)/P * sum_p ||z_p - c_p||^2
//   grad_z = 2*beta/P * (z - c)           (from the beta||z - sg[c]|| term)
//   grad_c = 2/P * (c - z) scattered      (from the ||sg[z] - c|| term)
// Gradients are accumulated into the provided sinks (either may be null).
template <typename T>
T vq_loss(const Tensor<T>& z, const QuantizeResult<T>& result, T beta,
          Tensor<T>* grad_z, Tensor<T>* grad_codes) {
  if (beta <= T{}) throw ConfigError("vq_loss: beta must be > 0");
  require_same_shape(z, result.quantized, "vq_loss");
  const std::size_t n = z.dim(0), d = z.dim(1), hw = z.dim(2) * z.dim(3);
  const std::size_t positions = n * hw;
  const T inv_p = T(1) / T(positions);

  T loss{};
  for (std::size_t f = 0; f < n; ++f) {
    const T* zb = z.data() + f * d * hw;
    const T* qb = result.quantized.data() + f * d * hw;
    for (std::size_t p = 0; p < hw; ++p) {
      const std::size_t code = result.indices[f * hw + p];
      for (std::size_t k = 0; k < d; ++k) {
        const T diff = zb[k * hw + p] - qb[k * hw + p];
        loss += diff * diff;
        if (grad_z)
          (*grad_z)[(f * d + k) * hw + p] += T(2) * beta * diff * inv_p;
        if (grad_codes) (*grad_codes)(code, k) += -T(2) * diff * inv_p;
      }
    }
  }
  return (T(1) + beta) * loss * inv_p;
}

// The straight-through estimator: the gradient arriving at the quantized
// output is copied, unchanged, to the encoder output.
template <typename T>
Tensor<T> straight_through(const Tensor<T>& downstream_grad) {
  return downstream_grad;
}

// Local gradient of the quantized output with respect to the selected
// codewords (indices held fixed): scatter-add per position.
template <typename T>
void scatter_to_codes(const QuantizeResult<T>& result,
                      const Tensor<T>& downstream_grad,
                      Tensor<T>& grad_codes) {
  const std::size_t n = downstream_grad.dim(0), d = downstream_grad.dim(1);
  const std::size_t hw = downstream_grad.dim(2) * downstream_grad.dim(3);
  for (std::size_t f = 0; f < n; ++f) {
    const T* gb = downstream_grad.data() + f * d * hw;
    for (std::size_t p = 0; p < hw; ++p) {
      const std::size_t code = result.indices[f * hw + p];
      for (std::size_t k = 0; k < d; ++k)
        grad_codes(code, k) += gb[k * hw + p];
    }
  }
}

// Elementwise sum of encoder output and codebank output.
template <typename T>
Tensor<T> fuse_quantized(const Tensor<T>& z, const QuantizeResult<T>& result) {
  require_same_shape(z, result.quantized, "fuse_quantized");
  Tensor<T> fused(z.shape());
  for (std::size_t i = 0; i < z.size(); ++i)
    fused[i] = z[i] + result.quantized[i];
  return fused;
}

struct UsageStats {
  std::vector<std::size_t> counts;
  double perplexity = 0.0;
  std::size_t positions = 0;
};

// Per-code hit counts and exp(entropy) of the empirical code distribution.
inline UsageStats usage_stats(
    const std::vector<const std::vector<std::size_t>*>& index_sets,
    std::size_t entries) {
  UsageStats s;
  s.counts.assign(entries, 0);
  for (const auto* ids : index_sets)
    for (std::size_t i : *ids) {
      ++s.counts[i];
      ++s.positions;
    }
  double entropy = 0.0;
  for (std::size_t c : s.counts) {
    if (c == 0) continue;
    const double q = double(c) / double(s.positions);
    entropy -= q * std::log(q);
  }
  s.perplexity = s.positions ? std::exp(entropy) : 0.0;
  return s;
}

}  // namespace stpred
