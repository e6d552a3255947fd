#include "svmixer/autodiff.hpp"

#include <atomic>

#include "svmixer/errors.hpp"
#include "svmixer/ops.hpp"

namespace svmixer::ad {

namespace testing {
namespace {
std::atomic<Sabotage> g_sabotage{Sabotage::none};
}
void set_sabotage(Sabotage s) { g_sabotage.store(s); }
Sabotage sabotage() { return g_sabotage.load(); }
}  // namespace testing

const Tensor& Var::value() const {
  if (!tape) throw Error("use of an unbound Var");
  return tape->value(*this);
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  if (!value.all_finite()) throw NumericalError("leaf: non-finite value");
  Node n;
  n.op = "leaf";
  n.owned = std::move(value);
  n.requires_grad = requires_grad && grad_enabled();
  nodes_.push_back(std::move(n));
  has_grads_ = false;
  return {this, nodes_.size() - 1};
}

Var Tape::leaf_ref(const Tensor& value, bool requires_grad) {
  Node n;
  n.op = "leaf";
  n.external = &value;
  n.requires_grad = requires_grad && grad_enabled();
  nodes_.push_back(std::move(n));
  has_grads_ = false;
  return {this, nodes_.size() - 1};
}

Var Tape::record(std::string_view op, Tensor value, std::vector<Var> inputs, Backward fn) {
  if (!value.all_finite()) {
    throw NumericalError(std::string(op) + ": produced a non-finite value");
  }
  Node n;
  n.op = std::string(op);
  n.owned = std::move(value);
  n.inputs.reserve(inputs.size());
  bool any = false;
  for (const Var& v : inputs) {
    check(v);
    n.inputs.push_back(v.id);
    any = any || nodes_[v.id].requires_grad;
  }
  n.requires_grad = any && grad_enabled();
  if (n.requires_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  has_grads_ = false;
  return {this, nodes_.size() - 1};
}

void Tape::check(Var v) const {
  if (v.tape != this) throw Error("Var belongs to a different tape");
  if (v.id >= nodes_.size()) throw Error("Var id out of range");
}

const Tensor& Tape::value(Var v) const {
  check(v);
  return nodes_[v.id].value();
}

bool Tape::requires_grad(Var v) const {
  check(v);
  return nodes_[v.id].requires_grad;
}

void Tape::backward(Var out) {
  const Tensor& y = value(out);
  if (y.numel() != 1) {
    throw DimensionError("backward: implicit seed needs a scalar output, got " +
                         shape_str(y.shape()));
  }
  backward(out, Tensor(y.shape(), 1.0));
}

void Tape::backward(Var out, Tensor cotangent) {
  check(out);
  if (!grad_enabled()) throw Error("backward: tape was created with gradients disabled");
  if (!nodes_[out.id].requires_grad) {
    throw Error("backward: output does not depend on any recorded parameter");
  }
  if (cotangent.shape() != nodes_[out.id].value().shape()) {
    throw DimensionError("backward: cotangent " + shape_str(cotangent.shape()) +
                         " for output " + shape_str(nodes_[out.id].value().shape()));
  }
  grads_.assign(nodes_.size(), Tensor());
  grads_[out.id] = std::move(cotangent);
  for (std::size_t i = out.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backward || grads_[i].empty()) continue;
    std::vector<Tensor> in_grads = n.backward(grads_[i]);
    for (std::size_t k = 0; k < n.inputs.size() && k < in_grads.size(); ++k) {
      const std::size_t j = n.inputs[k];
      if (!nodes_[j].requires_grad || in_grads[k].empty()) continue;
      if (grads_[j].empty()) {
        grads_[j] = std::move(in_grads[k]);
      } else {
        Tensor& acc = grads_[j];
        for (std::size_t e = 0; e < acc.numel(); ++e) acc[e] += in_grads[k][e];
      }
    }
  }
  has_grads_ = true;
}

const Tensor& Tape::grad(Var v) const {
  check(v);
  if (!has_grads_) throw Error("grad: no backward pass has been run on this graph");
  if (!nodes_[v.id].requires_grad) throw Error("grad: Var does not require gradients");
  if (grads_[v.id].empty()) {
    // Unreached nodes read as explicit zeros.
    grads_[v.id] = Tensor(nodes_[v.id].value().shape());
  }
  return grads_[v.id];
}

// ---------------------------------------------------------------------------

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a);
  return t.record("matmul", ops::matmul(a.value(), b.value()), {a, b},
                  [a, b](const Tensor& g) {
                    auto r = ops::matmul_backward(a.value(), b.value(), g);
                    return std::vector<Tensor>{std::move(r.da), std::move(r.db)};
                  });
}

Var transpose(Var x) {
  return tape_of(x).record("transpose", ops::transpose(x.value()), {x},
                           [](const Tensor& g) { return std::vector<Tensor>{ops::transpose(g)}; });
}

Var add(Var a, Var b) {
  return tape_of(a).record("add", ops::add(a.value(), b.value()), {a, b},
                           [](const Tensor& g) { return std::vector<Tensor>{g, g}; });
}

Var sub(Var a, Var b) {
  return tape_of(a).record("sub", ops::add(a.value(), ops::scale(b.value(), -1.0)), {a, b},
                           [](const Tensor& g) {
                             return std::vector<Tensor>{g, ops::scale(g, -1.0)};
                           });
}

Var scale(Var x, double s) {
  return tape_of(x).record("scale", ops::scale(x.value(), s), {x},
                           [s](const Tensor& g) { return std::vector<Tensor>{ops::scale(g, s)}; });
}

Var add_row_bias(Var x, Var bias) {
  return tape_of(x).record("add_row_bias", ops::add_row_bias(x.value(), bias.value()),
                           {x, bias}, [bias](const Tensor& g) {
                             return std::vector<Tensor>{
                                 g, ops::sum_rows(g).reshaped(bias.value().shape())};
                           });
}

Var conv1d(Var x, Var kernel, std::size_t stride, std::size_t groups, std::optional<Var> bias) {
  std::optional<Tensor> b;
  if (bias) b = bias->value();
  Tensor y = ops::conv1d(x.value(), kernel.value(), stride, groups, b);
  std::vector<Var> inputs{x, kernel};
  if (bias) inputs.push_back(*bias);
  const bool has_bias = bias.has_value();
  return tape_of(x).record("conv1d", std::move(y), std::move(inputs),
                           [x, kernel, stride, groups, has_bias](const Tensor& g) {
                             auto r = ops::conv1d_backward(x.value(), kernel.value(), stride,
                                                           groups, g);
                             std::vector<Tensor> out{std::move(r.dx), std::move(r.dkernel)};
                             if (has_bias) out.push_back(std::move(r.dbias));
                             return out;
                           });
}

Var pad_time(Var x, std::size_t left, std::size_t right) {
  return tape_of(x).record("pad_time", ops::pad_time(x.value(), left, right), {x},
                           [left, right](const Tensor& g) {
                             return std::vector<Tensor>{ops::pad_time_backward(g, left, right)};
                           });
}

Var avg_pool1d(Var x) {
  const std::size_t t_in = x.value().dim(1);
  return tape_of(x).record("avg_pool1d", ops::avg_pool1d(x.value()), {x},
                           [t_in](const Tensor& g) {
                             return std::vector<Tensor>{ops::avg_pool1d_backward(g, t_in)};
                           });
}

Var linear_upsample(Var x, std::size_t target_t) {
  const std::size_t t_src = x.value().dim(1);
  return tape_of(x).record("linear_upsample", ops::linear_upsample(x.value(), target_t), {x},
                           [t_src](const Tensor& g) {
                             return std::vector<Tensor>{ops::linear_upsample_backward(g, t_src)};
                           });
}

Var gelu(Var x) {
  return tape_of(x).record("gelu", ops::gelu(x.value()), {x}, [x](const Tensor& g) {
    Tensor dx = ops::gelu_backward(x.value(), g);
    if (testing::sabotage() == testing::Sabotage::gelu) dx = ops::scale(dx, 1.01);
    return std::vector<Tensor>{std::move(dx)};
  });
}

Var layer_norm(Var x, Var gamma, Var beta) {
  return tape_of(x).record(
      "layer_norm", ops::layer_norm(x.value(), gamma.value(), beta.value()), {x, gamma, beta},
      [x, gamma](const Tensor& g) {
        auto r = ops::layer_norm_backward(x.value(), gamma.value(), g);
        return std::vector<Tensor>{std::move(r.dx), std::move(r.dgamma), std::move(r.dbeta)};
      });
}

Var softmax(Var x) {
  Tensor y = ops::softmax(x.value());
  Tape& t = tape_of(x);
  Var out = t.record("softmax", y, {x}, [y](const Tensor& g) {
    return std::vector<Tensor>{ops::softmax_backward(y, g)};
  });
  return out;
}

Var slice_cols(Var x, std::size_t start, std::size_t len) {
  const Shape in_shape = x.value().shape();
  return tape_of(x).record("slice_cols", ops::slice_cols(x.value(), start, len), {x},
                           [in_shape, start, len](const Tensor& g) {
                             Tensor dx(in_shape);
                             const std::size_t cols = in_shape[1];
                             for (std::size_t i = 0; i < in_shape[0]; ++i)
                               for (std::size_t j = 0; j < len; ++j)
                                 dx[i * cols + start + j] = g.at(i, j);
                             return std::vector<Tensor>{std::move(dx)};
                           });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  std::vector<Tensor> values;
  std::vector<std::size_t> widths;
  for (const Var& p : parts) {
    values.push_back(p.value());
    widths.push_back(p.value().cols());
  }
  return tape_of(parts.front())
      .record("concat_cols", ops::concat_cols(values), parts, [widths](const Tensor& g) {
        std::vector<Tensor> out;
        std::size_t offset = 0;
        for (std::size_t w : widths) {
          out.push_back(ops::slice_cols(g, offset, w));
          offset += w;
        }
        return out;
      });
}

Var mean_std_pool(Var x) {
  return tape_of(x).record("mean_std_pool", ops::mean_std_pool(x.value()), {x},
                           [x](const Tensor& g) {
                             return std::vector<Tensor>{ops::mean_std_pool_backward(x.value(), g)};
                           });
}

Var reshape(Var x, Shape shape) {
  const Shape in_shape = x.value().shape();
  return tape_of(x).record("reshape", x.value().reshaped(std::move(shape)), {x},
                           [in_shape](const Tensor& g) {
                             return std::vector<Tensor>{g.reshaped(in_shape)};
                           });
}

Var weighted_sum(const std::vector<Var>& xs, Var weights) {
  const Tensor& w = weights.value();
  if (w.rank() != 1 || w.numel() != xs.size() || xs.empty()) {
    throw DimensionError("weighted_sum: " + std::to_string(xs.size()) + " inputs, weights " +
                         shape_str(w.shape()));
  }
  Tensor out(xs.front().value().shape());
  for (std::size_t l = 0; l < xs.size(); ++l) {
    const Tensor& x = xs[l].value();
    if (x.shape() != out.shape()) throw DimensionError("weighted_sum: input shapes differ");
    for (std::size_t e = 0; e < out.numel(); ++e) out[e] += w[l] * x[e];
  }
  std::vector<Var> inputs = xs;
  inputs.push_back(weights);
  return tape_of(weights).record("weighted_sum", std::move(out), std::move(inputs),
                                 [xs, weights](const Tensor& g) {
                                   const Tensor& wv = weights.value();
                                   std::vector<Tensor> r;
                                   Tensor dw(wv.shape());
                                   for (std::size_t l = 0; l < xs.size(); ++l) {
                                     const Tensor& x = xs[l].value();
                                     double d = 0.0;
                                     for (std::size_t e = 0; e < g.numel(); ++e) d += g[e] * x[e];
                                     dw[l] = d;
                                     r.push_back(ops::scale(g, wv[l]));
                                   }
                                   r.push_back(std::move(dw));
                                   return r;
                                 });
}

Var mse(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.shape() != bv.shape()) {
    throw DimensionError("mse: " + shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
  }
  const double n = static_cast<double>(av.numel());
  double acc = 0.0;
  for (std::size_t i = 0; i < av.numel(); ++i) acc += (av[i] - bv[i]) * (av[i] - bv[i]);
  return tape_of(a).record("mse", Tensor({1}, {acc / n}), {a, b}, [a, b, n](const Tensor& g) {
    const Tensor& x = a.value();
    const Tensor& y = b.value();
    Tensor da(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) da[i] = 2.0 * (x[i] - y[i]) / n * g[0];
    Tensor db = ops::scale(da, -1.0);
    return std::vector<Tensor>{std::move(da), std::move(db)};
  });
}

Var sum(Var x) {
  double acc = 0.0;
  for (double v : x.value().storage()) acc += v;
  const Shape in_shape = x.value().shape();
  return tape_of(x).record("sum", Tensor({1}, {acc}), {x}, [in_shape](const Tensor& g) {
    return std::vector<Tensor>{Tensor(in_shape, g[0])};
  });
}

}  // namespace svmixer::ad
