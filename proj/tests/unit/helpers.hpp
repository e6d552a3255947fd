#pragma once

#include <cstdint>

#include "svmixer/random.hpp"
#include "svmixer/tensor.hpp"

namespace svmixer::test {

inline Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

}  // namespace svmixer::test
