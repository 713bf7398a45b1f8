#pragma once

#include <utility>

#include "skunet/tensor.hpp"

namespace skunet {

// Tensor operations with reverse-mode gradients. Each op validates shapes,
// checks its output for non-finite values, and (when a GradTape is active and
// any input is grad-tracked) records a backward closure that accumulates into
// the inputs' grad buffers. All ops are deterministic: identical inputs give
// bit-identical outputs regardless of thread count.

// Cross-correlation with zero padding. input [N,Cin,H,W], weight
// [Cout,Cin,kh,kw] (kh,kw odd), bias [Cout]. Output spatial size
// (H + 2*padding - dilation*(kh-1) - 1) / stride + 1 must be a positive integer.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              int stride = 1, int padding = 0, int dilation = 1);

// 2x2 window max, stride 2. H and W must be even. Backward routes the gradient
// to the argmax position; ties go to the first occurrence in row-major order.
Tensor maxpool2d(const Tensor& input);

// Each value replicated into a 2x2 block; backward sums the block gradients.
Tensor upsample_nearest2x(const Tensor& input);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

// Numerically stabilized softmax along `axis` (max-subtraction). Output sums
// to 1 along the axis.
Tensor softmax(const Tensor& x, int axis);

// Two-way softmax across a pair of equally-shaped tensors (the branch-select
// step): wa = exp(a)/(exp(a)+exp(b)) elementwise, wb = 1 - wa.
std::pair<Tensor, Tensor> softmax2(const Tensor& a, const Tensor& b);

// Per-channel spatial mean: [N,C,H,W] -> [N,C].
Tensor global_avg_pool(const Tensor& x);

// Affine map: x [N,Cin], weight [Cout,Cin], bias [Cout] -> [N,Cout].
Tensor dense(const Tensor& x, const Tensor& weight, const Tensor& bias);

// Per-sample per-channel standardization with learnable affine.
// gamma, beta have shape [C]; eps keeps constant channels finite.
Tensor instance_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                     scalar eps = scalar(1e-5));

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise
Tensor scale(const Tensor& x, scalar k);

// x [N,C,H,W] scaled per (sample, channel) by s [N,C].
Tensor mul_channelwise(const Tensor& x, const Tensor& s);

// Channel-axis concatenation of [N,Ca,H,W] and [N,Cb,H,W].
Tensor concat_channels(const Tensor& a, const Tensor& b);

// Sum of all elements -> scalar tensor [1]. Accumulates in double.
Tensor sum(const Tensor& x);

}  // namespace skunet
