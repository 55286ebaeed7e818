#pragma once

// Central-difference verification harness for the analytic backward passes.

#include <cmath>
#include <functional>
#include <vector>

#include "stpred/diff.hpp"
#include "stpred/errors.hpp"

namespace stpred {

// Checks analytic gradients against 64-bit central differences.
//
// `backward` must clear the grad buffers of every array in `inputs`, run the
// forward pass and fill them with the analytic gradient of the scalar loss.
// `forward` must evaluate the same scalar loss from the current values.
// Returns max over all entries of |analytic - fd| / max(1, |fd|).
template <typename T, typename Fwd, typename Bwd>
T finite_diff_check(const std::vector<DiffArray<T>*>& inputs, Fwd&& forward,
                    Bwd&& backward, T eps) {
  backward();
  std::vector<Tensor<T>> analytic;
  analytic.reserve(inputs.size());
  for (const DiffArray<T>* in : inputs) analytic.push_back(in->grad);

  T max_err{};
  for (std::size_t a = 0; a < inputs.size(); ++a) {
    Tensor<T>& v = inputs[a]->value;
    for (std::size_t i = 0; i < v.size(); ++i) {
      const T saved = v[i];
      v[i] = saved + eps;
      const T up = forward();
      v[i] = saved - eps;
      const T down = forward();
      v[i] = saved;
      if (!std::isfinite(double(up)) || !std::isfinite(double(down)) ||
          !std::isfinite(double(analytic[a][i])))
        throw CheckFailedError("finite_diff_check: non-finite intermediate");
      const T fd = (up - down) / (T(2) * eps);
      const T err =
          std::abs(analytic[a][i] - fd) / std::max(T(1), std::abs(fd));
      max_err = std::max(max_err, err);
    }
  }
  return max_err;
}

}  // namespace stpred
