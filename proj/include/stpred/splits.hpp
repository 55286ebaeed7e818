#pragma once

#include <cstddef>
#include <numeric>
#include <vector>

#include "stpred/errors.hpp"

namespace stpred {

struct DatasetSplit {
  std::size_t train = 0;
  std::size_t val = 0;
  std::size_t test = 0;
};

struct SplitIds {
  std::vector<std::size_t> train, val, test;
};

// Disjoint contiguous index ranges in generation order: train, then val,
// then test.
inline SplitIds make_splits(std::size_t pool_size, const DatasetSplit& spec) {
  if (spec.train + spec.val + spec.test > pool_size)
    throw ConfigError("make_splits: split counts exceed pool size");
  SplitIds ids;
  ids.train.resize(spec.train);
  ids.val.resize(spec.val);
  ids.test.resize(spec.test);
  std::iota(ids.train.begin(), ids.train.end(), std::size_t{0});
  std::iota(ids.val.begin(), ids.val.end(), spec.train);
  std::iota(ids.test.begin(), ids.test.end(), spec.train + spec.val);
  return ids;
}

}  // namespace stpred
