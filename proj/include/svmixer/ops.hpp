#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "svmixer/tensor.hpp"

// Pure forward kernels and their vector-Jacobian products. All loops run in a
// fixed order so identical inputs give bitwise-identical outputs.
namespace svmixer::ops {

inline constexpr double kLayerNormEps = 1e-5;

// c[i,j] = sum_k a[i,k] * b[k,j], k ascending.
Tensor matmul(const Tensor& a, const Tensor& b);
struct MatmulGrads {
  Tensor da, db;
};
MatmulGrads matmul_backward(const Tensor& a, const Tensor& b, const Tensor& dc);

Tensor transpose(const Tensor& x);

Tensor add(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double s);
// x[m x n] + bias[n] broadcast over rows.
Tensor add_row_bias(const Tensor& x, const Tensor& bias);
// Column sums of dy, the bias gradient of add_row_bias.
Tensor sum_rows(const Tensor& dy);

// Grouped cross-correlation without padding.
//   x: [C_in x T_in], kernel: [C_out x C_in/groups x k], bias: [C_out]
//   T_out = floor((T_in - k) / stride) + 1
Tensor conv1d(const Tensor& x, const Tensor& kernel, std::size_t stride,
              std::size_t groups, const std::optional<Tensor>& bias = std::nullopt);
struct Conv1dGrads {
  Tensor dx, dkernel, dbias;
};
Conv1dGrads conv1d_backward(const Tensor& x, const Tensor& kernel, std::size_t stride,
                            std::size_t groups, const Tensor& dy);

std::size_t conv_output_length(std::size_t t_in, std::size_t kernel, std::size_t stride);

// Zero-pads the time axis of [C x T].
Tensor pad_time(const Tensor& x, std::size_t left, std::size_t right);
Tensor pad_time_backward(const Tensor& dy, std::size_t left, std::size_t right);

// Kernel 2, stride 2 over the time axis of [C x T]; an odd trailing frame is dropped.
Tensor avg_pool1d(const Tensor& x);
Tensor avg_pool1d_backward(const Tensor& dy, std::size_t t_in);

// Endpoint-aligned linear interpolation of [C x T'] to [C x target_T].
Tensor linear_upsample(const Tensor& x, std::size_t target_t);
Tensor linear_upsample_backward(const Tensor& dy, std::size_t t_src);

// Exact erf formulation, x * Phi(x).
Tensor gelu(const Tensor& x);
Tensor gelu_backward(const Tensor& x, const Tensor& dy);
double gelu(double x);
double gelu_derivative(double x);

// Normalizes over the last axis (population variance) then applies gamma/beta.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = kLayerNormEps);
struct LayerNormGrads {
  Tensor dx, dgamma, dbeta;
};
LayerNormGrads layer_norm_backward(const Tensor& x, const Tensor& gamma, const Tensor& dy,
                                   double eps = kLayerNormEps);

// Max-subtracted softmax of a 1-D tensor.
Tensor softmax(const Tensor& x);
Tensor softmax_backward(const Tensor& y, const Tensor& dy);

// Column slice [rows x len] starting at column `start`, and its inverse.
Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t len);
Tensor concat_cols(const std::vector<Tensor>& parts);

// [T x H] -> [2H]: per-channel mean followed by sqrt(var + eps).
Tensor mean_std_pool(const Tensor& x, double eps = kLayerNormEps);
Tensor mean_std_pool_backward(const Tensor& x, const Tensor& dy, double eps = kLayerNormEps);

}  // namespace svmixer::ops
