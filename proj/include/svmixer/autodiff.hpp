#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "svmixer/tensor.hpp"

// Tape-based reverse-mode differentiation over the ops:: kernels.
//
// A Tape records every op in creation order; backward() walks it in reverse,
// so gradient accumulation order is fixed by the forward program.
namespace svmixer::ad {

class Tape;

struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

enum class GradMode { enabled, disabled };

class Tape {
 public:
  // Returns one gradient per input, in input order. An empty tensor means
  // "no contribution".
  using Backward = std::function<std::vector<Tensor>(const Tensor& grad_out)>;

  explicit Tape(GradMode mode = GradMode::enabled) : mode_(mode) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Owns a copy of `value`.
  Var leaf(Tensor value, bool requires_grad = true);
  // Refers to `value` without copying. `value` must outlive the tape.
  Var leaf_ref(const Tensor& value, bool requires_grad = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  Var record(std::string_view op, Tensor value, std::vector<Var> inputs, Backward fn);

  const Tensor& value(Var v) const;
  bool requires_grad(Var v) const;
  bool grad_enabled() const { return mode_ == GradMode::enabled; }
  std::size_t size() const { return nodes_.size(); }

  // Seeds a scalar output with 1.
  void backward(Var out);
  void backward(Var out, Tensor cotangent);

  // Gradient of the last backward() output with respect to v.
  const Tensor& grad(Var v) const;

 private:
  struct Node {
    std::string op;
    std::optional<Tensor> owned;
    const Tensor* external = nullptr;
    std::vector<std::size_t> inputs;
    Backward backward;
    bool requires_grad = false;

    const Tensor& value() const { return owned ? *owned : *external; }
  };

  void check(Var v) const;

  GradMode mode_;
  std::vector<Node> nodes_;
  mutable std::vector<Tensor> grads_;
  bool has_grads_ = false;
};

// Test-only negative control: perturbs one op's derivative so gradient checks
// can be shown to fail.
namespace testing {
enum class Sabotage { none, gelu };
void set_sabotage(Sabotage s);
Sabotage sabotage();
}  // namespace testing

Var matmul(Var a, Var b);
Var transpose(Var x);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var scale(Var x, double s);
Var add_row_bias(Var x, Var bias);
Var conv1d(Var x, Var kernel, std::size_t stride, std::size_t groups,
           std::optional<Var> bias = std::nullopt);
Var pad_time(Var x, std::size_t left, std::size_t right);
Var avg_pool1d(Var x);
Var linear_upsample(Var x, std::size_t target_t);
Var gelu(Var x);
Var layer_norm(Var x, Var gamma, Var beta);
Var softmax(Var x);
Var slice_cols(Var x, std::size_t start, std::size_t len);
Var concat_cols(const std::vector<Var>& parts);
Var mean_std_pool(Var x);
Var reshape(Var x, Shape shape);
// sum_i weights[i] * xs[i]; weights is a 1-D var of length xs.size().
Var weighted_sum(const std::vector<Var>& xs, Var weights);
// Mean of squared differences over all elements.
Var mse(Var a, Var b);
// Sum of all elements, as a [1] tensor.
Var sum(Var x);

// Helper for ops in other modules: record with the tape of the first input.
inline Tape& tape_of(Var v) { return *v.tape; }

}  // namespace svmixer::ad
