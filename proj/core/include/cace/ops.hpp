#pragma once

#include <utility>
#include <vector>

#include "cace/tensor.hpp"

namespace cace::ops {

// --- convolution -----------------------------------------------------------

// weights: (out_channels, in_channels, kh, kw); bias: (1, out_channels, 1, 1).
// Zero padding. Accumulation order per output element is (ci, kh, kw), the
// same order as the brute-force reference loop.
Tensor conv2d(const Tensor& input, const Tensor& weights, const Tensor& bias, const ConvSpec& spec);
void conv2d_backward(const Tensor& input, const Tensor& weights, const ConvSpec& spec,
                     const Tensor& grad_out, Tensor& grad_in, Tensor& grad_w, Tensor& grad_b);

// weights: (in_channels, out_channels, kh, kw). Scatter-add upsampling.
Tensor transposed_conv2d(const Tensor& input, const Tensor& weights, const Tensor& bias,
                         const ConvSpec& spec);
void transposed_conv2d_backward(const Tensor& input, const Tensor& weights, const ConvSpec& spec,
                                const Tensor& grad_out, Tensor& grad_in, Tensor& grad_w,
                                Tensor& grad_b);

// --- pooling ---------------------------------------------------------------

struct PoolResult {
    Tensor value;
    std::vector<long> argmax;  // flat input index per output element (first index wins ties)
};

PoolResult maxpool2d(const Tensor& input, long kh, long kw, long sh, long sw);
Tensor maxpool2d_backward(const Shape& in_shape, DType dt, const std::vector<long>& argmax,
                          const Tensor& grad_out);

Tensor global_avg_pool(const Tensor& input);
Tensor global_avg_pool_backward(const Shape& in_shape, const Tensor& grad_out);

// --- batch norm ------------------------------------------------------------

enum class BnMode { train, eval };

struct BnResult {
    Tensor value;
    Tensor mean;    // per-channel batch mean (train) or running mean (eval)
    Tensor invstd;  // 1/sqrt(var + eps) actually used
};

// gamma/beta/running stats all shaped (1, c, 1, 1). Train mode updates the
// running stats in place: running = (1-momentum)*running + momentum*batch.
BnResult batch_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                    Tensor& running_mean, Tensor& running_var, BnMode mode, double momentum,
                    double epsilon);
void batch_norm_backward(const Tensor& input, const Tensor& gamma, const Tensor& mean,
                         const Tensor& invstd, BnMode mode, const Tensor& grad_out,
                         Tensor& grad_in, Tensor& grad_gamma, Tensor& grad_beta);

// --- elementwise and structural -------------------------------------------

Tensor relu(const Tensor& input);
Tensor relu_backward(const Tensor& input, const Tensor& grad_out);
Tensor sigmoid(const Tensor& input);
Tensor sigmoid_backward(const Tensor& output, const Tensor& grad_out);
Tensor add(const Tensor& a, const Tensor& b);

Tensor concat_channels(const std::vector<Tensor>& parts);
Tensor slice_channels(const Tensor& input, long c_begin, long c_count);

// s: (n, c, 1, 1) per-channel scale.
Tensor scale_channels(const Tensor& input, const Tensor& s);
void scale_channels_backward(const Tensor& input, const Tensor& s, const Tensor& grad_out,
                             Tensor& grad_in, Tensor& grad_s);

// input (n, in, 1, 1), W (out, in, 1, 1), b (1, out, 1, 1) -> (n, out, 1, 1).
Tensor linear(const Tensor& input, const Tensor& weights, const Tensor& bias);
void linear_backward(const Tensor& input, const Tensor& weights, const Tensor& grad_out,
                     Tensor& grad_in, Tensor& grad_w, Tensor& grad_b);

// Half-pixel-center bilinear resampling with edge clamping.
Tensor bilinear_upsample(const Tensor& input, long target_h, long target_w);
Tensor bilinear_upsample_backward(const Shape& in_shape, DType dt, const Tensor& grad_out);

// Mean over every element, as a 1x1x1x1 scalar.
Tensor mean_all(const Tensor& input);
Tensor mean_all_backward(const Shape& in_shape, DType dt, const Tensor& grad_out);

// --- loss ------------------------------------------------------------------

// Mean over all elements of -[y log D + (1-y) log(1-D)], D clamped to
// [eps, 1-eps]. Gradient is zero where the clamp is active.
double bce_loss(const Tensor& prediction, const Tensor& target, double epsilon);
Tensor bce_loss_backward(const Tensor& prediction, const Tensor& target, double epsilon,
                         double grad_out);

}  // namespace cace::ops
