#pragma once

#include "skunet/ops.hpp"
#include "skunet/tensor.hpp"

namespace skunet::blocks {

// 3x3 pad-1 convolution + instance norm + relu; spatial size preserved.
struct ConvBlockParams {
  Tensor conv_w;  // [Cout,Cin,3,3]
  Tensor conv_b;  // [Cout]
  Tensor norm_gamma;
  Tensor norm_beta;
};

Tensor conv_block(const Tensor& x, const ConvBlockParams& p);

// Squeeze-and-excitation residual block (encoder side).
// u = conv-norm-relu x2; s = sigmoid(fc_expand(relu(fc_reduce(gap(u)))));
// out = relu(x + u .* s).
struct SEResParams {
  ConvBlockParams conv1;  // channel-preserving 3x3
  ConvBlockParams conv2;
  Tensor fc_reduce_w;  // [C/r, C]
  Tensor fc_reduce_b;
  Tensor fc_expand_w;  // [C, C/r]
  Tensor fc_expand_b;
  int reduction = 8;

  int channels() const { return conv1.conv_w.dim(0); }
};

Tensor se_res_forward(const Tensor& x, const SEResParams& p);

// Selective-kernel block (decoder side). Two channel-preserving branches with
// different receptive fields (3x3 dilation 1 vs dilation 2), fused, squeezed,
// and recombined with a per-channel two-way softmax over the branches.
struct SKParams {
  Tensor branch_a_w;  // [C,C,3,3], dilation 1
  Tensor branch_a_b;
  Tensor norm_a_gamma;
  Tensor norm_a_beta;
  Tensor branch_b_w;  // [C,C,3,3], dilation 2 (effective 5x5 field)
  Tensor branch_b_b;
  Tensor norm_b_gamma;
  Tensor norm_b_beta;
  Tensor fc_reduce_w;  // [max(C/r, l_min), C]
  Tensor fc_reduce_b;
  Tensor fc_select_a_w;  // [C, hidden]
  Tensor fc_select_a_b;
  Tensor fc_select_b_w;
  Tensor fc_select_b_b;
  int reduction = 8;
  int l_min = 8;

  int channels() const { return branch_a_w.dim(0); }
};

Tensor sk_forward(const Tensor& x, const SKParams& p);

// Forward with the attention weights exposed (for tests and diagnostics).
struct SKForwardDetail {
  Tensor out;
  Tensor weight_a;  // [N,C]
  Tensor weight_b;
  Tensor branch_a;  // normalized+activated branch outputs
  Tensor branch_b;
};
SKForwardDetail sk_forward_detail(const Tensor& x, const SKParams& p);

// He-style fan-in initialization. Every parameter tensor is seeded from
// (seed, full parameter name), so identical seeds give bit-identical values
// and removing a block does not shift any other parameter's draw.
Tensor init_conv_weight(uint64_t seed, const std::string& name, int cout, int cin, int k);
Tensor init_dense_weight(uint64_t seed, const std::string& name, int cout, int cin);
Tensor zeros_param(int n);
Tensor ones_param(int n);

ConvBlockParams init_conv_block(uint64_t seed, const std::string& prefix, int cin, int cout);
SEResParams init_se_res(uint64_t seed, const std::string& prefix, int channels, int reduction);
SKParams init_sk(uint64_t seed, const std::string& prefix, int channels, int reduction, int l_min);

// Largest factor of `channels` that is <= preferred (reduction ratios must
// divide the channel count; tiny test widths fall below the default of 8).
int reduction_for(int channels, int preferred = 8);

}  // namespace skunet::blocks
