#include "svmixer/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "svmixer/errors.hpp"

namespace svmixer::ops {
namespace {

void require_rank(const Tensor& x, std::size_t rank, const char* op) {
  if (x.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         ", got " + shape_str(x.shape()));
  }
}

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul: inner extents differ, " + shape_str(a.shape()) + " * " +
                         shape_str(b.shape()));
  }
  Tensor c({m, n});
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* pc = c.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = pc + i * n;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double aik = pa[i * k + kk];
      const double* brow = pb + kk * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
    }
  }
  return c;
}

MatmulGrads matmul_backward(const Tensor& a, const Tensor& b, const Tensor& dc) {
  return {matmul(dc, transpose(b)), matmul(transpose(a), dc)};
}

Tensor transpose(const Tensor& x) {
  require_rank(x, 2, "transpose");
  const std::size_t r = x.rows(), c = x.cols();
  Tensor out({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.at(j, i) = x.at(i, j);
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same(a, b, "add");
  Tensor out = a;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += b[i];
  return out;
}

Tensor scale(const Tensor& x, double s) {
  Tensor out = x;
  for (double& v : out.storage()) v *= s;
  return out;
}

Tensor add_row_bias(const Tensor& x, const Tensor& bias) {
  require_rank(x, 2, "add_row_bias");
  if (bias.numel() != x.cols()) {
    throw DimensionError("add_row_bias: bias " + shape_str(bias.shape()) +
                         " does not match " + shape_str(x.shape()));
  }
  Tensor out = x;
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) out.at(i, j) += bias[j];
  return out;
}

Tensor sum_rows(const Tensor& dy) {
  require_rank(dy, 2, "sum_rows");
  Tensor out({dy.cols()});
  for (std::size_t i = 0; i < dy.rows(); ++i)
    for (std::size_t j = 0; j < dy.cols(); ++j) out[j] += dy.at(i, j);
  return out;
}

std::size_t conv_output_length(std::size_t t_in, std::size_t kernel, std::size_t stride) {
  if (stride == 0) throw DimensionError("conv1d: stride must be positive");
  if (t_in < kernel) {
    throw DimensionError("conv1d: sequence shorter than kernel (T_in=" +
                         std::to_string(t_in) + ", k=" + std::to_string(kernel) + ")");
  }
  return (t_in - kernel) / stride + 1;
}

namespace {

struct ConvDims {
  std::size_t c_in, t_in, c_out, c_in_g, k, t_out, out_per_group;
};

ConvDims conv_dims(const Tensor& x, const Tensor& kernel, std::size_t stride,
                   std::size_t groups) {
  require_rank(x, 2, "conv1d");
  require_rank(kernel, 3, "conv1d kernel");
  if (groups == 0) throw DimensionError("conv1d: groups must be positive");
  ConvDims d{};
  d.c_in = x.dim(0);
  d.t_in = x.dim(1);
  d.c_out = kernel.dim(0);
  d.c_in_g = kernel.dim(1);
  d.k = kernel.dim(2);
  if (d.c_in % groups != 0 || d.c_out % groups != 0) {
    throw DimensionError("conv1d: channels (" + std::to_string(d.c_in) + ", " +
                         std::to_string(d.c_out) + ") not divisible by groups " +
                         std::to_string(groups));
  }
  if (d.c_in_g != d.c_in / groups) {
    throw DimensionError("conv1d: kernel " + shape_str(kernel.shape()) +
                         " incompatible with input " + shape_str(x.shape()) + " and groups " +
                         std::to_string(groups));
  }
  d.t_out = conv_output_length(d.t_in, d.k, stride);
  d.out_per_group = d.c_out / groups;
  return d;
}

}  // namespace

Tensor conv1d(const Tensor& x, const Tensor& kernel, std::size_t stride, std::size_t groups,
              const std::optional<Tensor>& bias) {
  const ConvDims d = conv_dims(x, kernel, stride, groups);
  if (bias && bias->numel() != d.c_out) {
    throw DimensionError("conv1d: bias " + shape_str(bias->shape()) + " for " +
                         std::to_string(d.c_out) + " output channels");
  }
  Tensor y({d.c_out, d.t_out});
  const double* px = x.data().data();
  const double* pw = kernel.data().data();
  double* py = y.data().data();
  for (std::size_t o = 0; o < d.c_out; ++o) {
    const std::size_t g = o / d.out_per_group;
    double* yrow = py + o * d.t_out;
    if (bias) std::fill(yrow, yrow + d.t_out, (*bias)[o]);
    for (std::size_t c = 0; c < d.c_in_g; ++c) {
      const double* xrow = px + (g * d.c_in_g + c) * d.t_in;
      for (std::size_t j = 0; j < d.k; ++j) {
        const double w = pw[(o * d.c_in_g + c) * d.k + j];
        const double* xs = xrow + j;
        for (std::size_t t = 0; t < d.t_out; ++t) yrow[t] += w * xs[t * stride];
      }
    }
  }
  return y;
}

Conv1dGrads conv1d_backward(const Tensor& x, const Tensor& kernel, std::size_t stride,
                            std::size_t groups, const Tensor& dy) {
  const ConvDims d = conv_dims(x, kernel, stride, groups);
  if (dy.shape() != Shape{d.c_out, d.t_out}) {
    throw DimensionError("conv1d_backward: cotangent " + shape_str(dy.shape()));
  }
  Conv1dGrads g{Tensor(x.shape()), Tensor(kernel.shape()), Tensor({d.c_out})};
  const double* px = x.data().data();
  const double* pw = kernel.data().data();
  const double* pdy = dy.data().data();
  double* pdx = g.dx.data().data();
  double* pdw = g.dkernel.data().data();
  for (std::size_t o = 0; o < d.c_out; ++o) {
    const std::size_t grp = o / d.out_per_group;
    const double* dyrow = pdy + o * d.t_out;
    double bsum = 0.0;
    for (std::size_t t = 0; t < d.t_out; ++t) bsum += dyrow[t];
    g.dbias[o] = bsum;
    for (std::size_t c = 0; c < d.c_in_g; ++c) {
      const std::size_t ci = grp * d.c_in_g + c;
      const double* xrow = px + ci * d.t_in;
      double* dxrow = pdx + ci * d.t_in;
      for (std::size_t j = 0; j < d.k; ++j) {
        const double w = pw[(o * d.c_in_g + c) * d.k + j];
        double acc = 0.0;
        for (std::size_t t = 0; t < d.t_out; ++t) {
          acc += dyrow[t] * xrow[t * stride + j];
          dxrow[t * stride + j] += w * dyrow[t];
        }
        pdw[(o * d.c_in_g + c) * d.k + j] = acc;
      }
    }
  }
  return g;
}

Tensor pad_time(const Tensor& x, std::size_t left, std::size_t right) {
  require_rank(x, 2, "pad_time");
  const std::size_t c = x.dim(0), t = x.dim(1), tp = t + left + right;
  Tensor out({c, tp});
  for (std::size_t i = 0; i < c; ++i)
    std::copy_n(x.data().data() + i * t, t, out.data().data() + i * tp + left);
  return out;
}

Tensor pad_time_backward(const Tensor& dy, std::size_t left, std::size_t right) {
  require_rank(dy, 2, "pad_time_backward");
  const std::size_t c = dy.dim(0), tp = dy.dim(1), t = tp - left - right;
  Tensor out({c, t});
  for (std::size_t i = 0; i < c; ++i)
    std::copy_n(dy.data().data() + i * tp + left, t, out.data().data() + i * t);
  return out;
}

Tensor avg_pool1d(const Tensor& x) {
  require_rank(x, 2, "avg_pool1d");
  const std::size_t c = x.dim(0), t = x.dim(1);
  if (t < 2) throw DimensionError("avg_pool1d: need T >= 2, got " + std::to_string(t));
  const std::size_t t_out = t / 2;
  Tensor out({c, t_out});
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t j = 0; j < t_out; ++j)
      out.at(i, j) = (x.at(i, 2 * j) + x.at(i, 2 * j + 1)) * 0.5;
  return out;
}

Tensor avg_pool1d_backward(const Tensor& dy, std::size_t t_in) {
  require_rank(dy, 2, "avg_pool1d_backward");
  Tensor dx({dy.dim(0), t_in});
  for (std::size_t i = 0; i < dy.dim(0); ++i)
    for (std::size_t j = 0; j < dy.dim(1); ++j) {
      dx.at(i, 2 * j) = 0.5 * dy.at(i, j);
      dx.at(i, 2 * j + 1) = 0.5 * dy.at(i, j);
    }
  return dx;
}

namespace {

// Source coordinate split into (lo, hi, weight) for output index i.
struct Tap {
  std::size_t lo, hi;
  double w;
};

Tap upsample_tap(std::size_t i, std::size_t t_src, std::size_t target) {
  if (t_src == 1 || target == 1) return {0, 0, 0.0};
  const double u = static_cast<double>(i * (t_src - 1)) / static_cast<double>(target - 1);
  std::size_t lo = static_cast<std::size_t>(std::floor(u));
  if (lo >= t_src - 1) return {t_src - 1, t_src - 1, 0.0};
  return {lo, lo + 1, u - static_cast<double>(lo)};
}

}  // namespace

Tensor linear_upsample(const Tensor& x, std::size_t target_t) {
  require_rank(x, 2, "linear_upsample");
  if (target_t == 0) throw DimensionError("linear_upsample: target length must be positive");
  const std::size_t c = x.dim(0), t_src = x.dim(1);
  if (t_src == 0) throw DimensionError("linear_upsample: empty source sequence");
  Tensor out({c, target_t});
  for (std::size_t j = 0; j < target_t; ++j) {
    const Tap tap = upsample_tap(j, t_src, target_t);
    for (std::size_t i = 0; i < c; ++i) {
      const double a = x.at(i, tap.lo), b = x.at(i, tap.hi);
      out.at(i, j) = a + tap.w * (b - a);
    }
  }
  return out;
}

Tensor linear_upsample_backward(const Tensor& dy, std::size_t t_src) {
  require_rank(dy, 2, "linear_upsample_backward");
  const std::size_t c = dy.dim(0), target = dy.dim(1);
  Tensor dx({c, t_src});
  for (std::size_t j = 0; j < target; ++j) {
    const Tap tap = upsample_tap(j, t_src, target);
    for (std::size_t i = 0; i < c; ++i) {
      dx.at(i, tap.lo) += (1.0 - tap.w) * dy.at(i, j);
      dx.at(i, tap.hi) += tap.w * dy.at(i, j);
    }
  }
  return dx;
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double gelu_derivative(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

Tensor gelu(const Tensor& x) {
  Tensor out = x;
  for (double& v : out.storage()) v = gelu(v);
  return out;
}

Tensor gelu_backward(const Tensor& x, const Tensor& dy) {
  require_same(x, dy, "gelu_backward");
  Tensor dx(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) dx[i] = dy[i] * gelu_derivative(x[i]);
  return dx;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  if (x.rank() == 0) throw DimensionError("layer_norm: scalar input");
  const std::size_t h = x.shape().back();
  if (h == 0 || gamma.numel() != h || beta.numel() != h) {
    throw DimensionError("layer_norm: affine extents " + shape_str(gamma.shape()) + "/" +
                         shape_str(beta.shape()) + " for input " + shape_str(x.shape()));
  }
  const std::size_t rows = x.numel() / h;
  Tensor y(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data().data() + r * h;
    double* yr = y.data().data() + r * h;
    double mean = 0.0;
    for (std::size_t i = 0; i < h; ++i) mean += xr[i];
    mean /= static_cast<double>(h);
    double var = 0.0;
    for (std::size_t i = 0; i < h; ++i) var += (xr[i] - mean) * (xr[i] - mean);
    var /= static_cast<double>(h);
    const double rstd = 1.0 / std::sqrt(var + eps);
    for (std::size_t i = 0; i < h; ++i) yr[i] = (xr[i] - mean) * rstd * gamma[i] + beta[i];
  }
  return y;
}

LayerNormGrads layer_norm_backward(const Tensor& x, const Tensor& gamma, const Tensor& dy,
                                   double eps) {
  require_same(x, dy, "layer_norm_backward");
  const std::size_t h = x.shape().back();
  const std::size_t rows = x.numel() / h;
  LayerNormGrads g{Tensor(x.shape()), Tensor({h}), Tensor({h})};
  std::vector<double> xhat(h), dxhat(h);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data().data() + r * h;
    const double* dyr = dy.data().data() + r * h;
    double* dxr = g.dx.data().data() + r * h;
    double mean = 0.0;
    for (std::size_t i = 0; i < h; ++i) mean += xr[i];
    mean /= static_cast<double>(h);
    double var = 0.0;
    for (std::size_t i = 0; i < h; ++i) var += (xr[i] - mean) * (xr[i] - mean);
    var /= static_cast<double>(h);
    const double rstd = 1.0 / std::sqrt(var + eps);
    double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
    for (std::size_t i = 0; i < h; ++i) {
      xhat[i] = (xr[i] - mean) * rstd;
      dxhat[i] = dyr[i] * gamma[i];
      g.dgamma[i] += dyr[i] * xhat[i];
      g.dbeta[i] += dyr[i];
      mean_dxhat += dxhat[i];
      mean_dxhat_xhat += dxhat[i] * xhat[i];
    }
    mean_dxhat /= static_cast<double>(h);
    mean_dxhat_xhat /= static_cast<double>(h);
    for (std::size_t i = 0; i < h; ++i)
      dxr[i] = rstd * (dxhat[i] - mean_dxhat - xhat[i] * mean_dxhat_xhat);
  }
  return g;
}

Tensor softmax(const Tensor& x) {
  require_rank(x, 1, "softmax");
  if (x.numel() == 0) throw DimensionError("softmax: empty input");
  const double mx = *std::max_element(x.storage().begin(), x.storage().end());
  Tensor y(x.shape());
  double z = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    y[i] = std::exp(x[i] - mx);
    z += y[i];
  }
  for (double& v : y.storage()) v /= z;
  return y;
}

Tensor softmax_backward(const Tensor& y, const Tensor& dy) {
  require_same(y, dy, "softmax_backward");
  double dot = 0.0;
  for (std::size_t i = 0; i < y.numel(); ++i) dot += y[i] * dy[i];
  Tensor dx(y.shape());
  for (std::size_t i = 0; i < y.numel(); ++i) dx[i] = y[i] * (dy[i] - dot);
  return dx;
}

Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t len) {
  require_rank(x, 2, "slice_cols");
  if (start + len > x.cols()) {
    throw DimensionError("slice_cols: columns [" + std::to_string(start) + ", " +
                         std::to_string(start + len) + ") out of " + shape_str(x.shape()));
  }
  Tensor out({x.rows(), len});
  for (std::size_t i = 0; i < x.rows(); ++i)
    std::copy_n(x.data().data() + i * x.cols() + start, len, out.data().data() + i * len);
  return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t rows = parts.front().rows();
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_rank(p, 2, "concat_cols");
    if (p.rows() != rows) throw DimensionError("concat_cols: row count mismatch");
    total += p.cols();
  }
  Tensor out({rows, total});
  std::size_t offset = 0;
  for (const auto& p : parts) {
    for (std::size_t i = 0; i < rows; ++i)
      std::copy_n(p.data().data() + i * p.cols(), p.cols(),
                  out.data().data() + i * total + offset);
    offset += p.cols();
  }
  return out;
}

Tensor mean_std_pool(const Tensor& x, double eps) {
  require_rank(x, 2, "mean_std_pool");
  const std::size_t t = x.rows(), h = x.cols();
  if (t == 0) throw DimensionError("mean_std_pool: no frames");
  Tensor out({2 * h});
  for (std::size_t j = 0; j < h; ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < t; ++i) mean += x.at(i, j);
    mean /= static_cast<double>(t);
    double var = 0.0;
    for (std::size_t i = 0; i < t; ++i) var += (x.at(i, j) - mean) * (x.at(i, j) - mean);
    var /= static_cast<double>(t);
    out[j] = mean;
    out[h + j] = std::sqrt(var + eps);
  }
  return out;
}

Tensor mean_std_pool_backward(const Tensor& x, const Tensor& dy, double eps) {
  const std::size_t t = x.rows(), h = x.cols();
  if (dy.numel() != 2 * h) throw DimensionError("mean_std_pool_backward: cotangent size");
  const Tensor stats = mean_std_pool(x, eps);
  Tensor dx(x.shape());
  const double inv_t = 1.0 / static_cast<double>(t);
  for (std::size_t j = 0; j < h; ++j) {
    const double mean = stats[j], sd = stats[h + j];
    for (std::size_t i = 0; i < t; ++i)
      dx.at(i, j) = dy[j] * inv_t + dy[h + j] * (x.at(i, j) - mean) * inv_t / sd;
  }
  return dx;
}

}  // namespace svmixer::ops
