#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "svmixer/autodiff.hpp"
#include "svmixer/tensor.hpp"

namespace svmixer::gradcheck {

// Builds the checked expression on `tape` and returns (output, leaves), where
// leaves[i] is the tape leaf bound to inputs[i].
using Builder = std::function<std::pair<ad::Var, std::vector<ad::Var>>(ad::Tape&)>;

struct Options {
  double step = 1e-5;
  // Denominator floor of the relative error |a - n| / max(|a|, |n|, floor).
  double floor = 1e-3;
  double tolerance = 1e-4;
  std::uint64_t seed = 7;
};

struct Row {
  std::string name;
  std::size_t checked = 0;    // scalar entries compared
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  bool passed = false;
};

// Compares the tape's vector-Jacobian product against central differences of
// <f(x), r> for a fixed random cotangent r. `inputs` are perturbed in place and
// restored; the builder must bind exactly these tensors (e.g. via leaf_ref).
Row check(const std::string& name, const std::vector<Tensor*>& inputs, const Builder& build,
          const Options& opt = {});

struct Report {
  std::vector<Row> rows;
  double tolerance = 0.0;
  bool ok() const;
  std::string format() const;
};

// Every differentiable op, each encoder stage, the distillation losses and a
// 2-block end-to-end model at toy dims (T = 12, H = 8).
Report run_all(const Options& opt = {});

}  // namespace svmixer::gradcheck
