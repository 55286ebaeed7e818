#pragma once

// Shared helpers for the test suites.

#include <vector>

#include "stpred/diff.hpp"
#include "stpred/rng.hpp"

namespace stpred::testutil {

// Fills every zero entry (biases, layer-norm shifts) with a nonzero draw so
// no relu pre-activation can sit exactly on the kink, where central
// differences see half the slope.
template <typename T>
void fill_zero_entries(const std::vector<DiffArray<T>*>& params, Rng& rng,
                       double lo = -0.3, double hi = 0.3) {
  for (DiffArray<T>* p : params)
    for (std::size_t i = 0; i < p->value.size(); ++i)
      if (p->value[i] == T{}) p->value[i] = T(rng.uniform(lo, hi));
}

}  // namespace stpred::testutil
