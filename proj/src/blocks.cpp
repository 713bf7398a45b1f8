#include "skunet/blocks.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "skunet/rng.hpp"

namespace skunet::blocks {

namespace {

void expect_channels(const Tensor& x, int c, const char* op) {
  if (x.ndim() != 4 || x.dim(1) != c) {
    throw std::invalid_argument(std::string(op) + ": input channel dim (" +
                                std::to_string(x.ndim() == 4 ? x.dim(1) : -1) +
                                ") != block channel size (" + std::to_string(c) + ")");
  }
}

}  // namespace

Tensor conv_block(const Tensor& x, const ConvBlockParams& p) {
  Tensor y = conv2d(x, p.conv_w, p.conv_b, /*stride=*/1, /*padding=*/1);
  y = instance_norm(y, p.norm_gamma, p.norm_beta);
  return relu(y);
}

Tensor se_res_forward(const Tensor& x, const SEResParams& p) {
  expect_channels(x, p.channels(), "se_res_forward");
  Tensor u = conv_block(x, p.conv1);
  u = conv_block(u, p.conv2);
  Tensor z = global_avg_pool(u);
  z = relu(dense(z, p.fc_reduce_w, p.fc_reduce_b));
  Tensor s = sigmoid(dense(z, p.fc_expand_w, p.fc_expand_b));
  return relu(add(x, mul_channelwise(u, s)));
}

SKForwardDetail sk_forward_detail(const Tensor& x, const SKParams& p) {
  expect_channels(x, p.channels(), "sk_forward");
  Tensor ua = conv2d(x, p.branch_a_w, p.branch_a_b, 1, /*padding=*/1, /*dilation=*/1);
  ua = relu(instance_norm(ua, p.norm_a_gamma, p.norm_a_beta));
  Tensor ub = conv2d(x, p.branch_b_w, p.branch_b_b, 1, /*padding=*/2, /*dilation=*/2);
  ub = relu(instance_norm(ub, p.norm_b_gamma, p.norm_b_beta));

  Tensor fused = add(ua, ub);
  Tensor z = relu(dense(global_avg_pool(fused), p.fc_reduce_w, p.fc_reduce_b));
  Tensor logit_a = dense(z, p.fc_select_a_w, p.fc_select_a_b);
  Tensor logit_b = dense(z, p.fc_select_b_w, p.fc_select_b_b);
  auto [wa, wb] = softmax2(logit_a, logit_b);

  Tensor out = add(mul_channelwise(ua, wa), mul_channelwise(ub, wb));
  return SKForwardDetail{out, wa, wb, ua, ub};
}

Tensor sk_forward(const Tensor& x, const SKParams& p) { return sk_forward_detail(x, p).out; }

namespace {

Tensor init_normal(uint64_t seed, const std::string& name, std::vector<int> shape, double stddev) {
  Rng rng(derive_seed(seed, name));
  std::vector<scalar> data(Tensor::shape_numel(shape));
  for (auto& v : data) v = static_cast<scalar>(rng.normal() * stddev);
  return Tensor::from_data(std::move(shape), std::move(data), /*requires_grad=*/true);
}

}  // namespace

Tensor init_conv_weight(uint64_t seed, const std::string& name, int cout, int cin, int k) {
  const double stddev = std::sqrt(2.0 / (static_cast<double>(cin) * k * k));
  return init_normal(seed, name, {cout, cin, k, k}, stddev);
}

Tensor init_dense_weight(uint64_t seed, const std::string& name, int cout, int cin) {
  const double stddev = std::sqrt(2.0 / static_cast<double>(cin));
  return init_normal(seed, name, {cout, cin}, stddev);
}

Tensor zeros_param(int n) { return Tensor::zeros({n}, /*requires_grad=*/true); }
Tensor ones_param(int n) { return Tensor::full({n}, scalar(1), /*requires_grad=*/true); }

ConvBlockParams init_conv_block(uint64_t seed, const std::string& prefix, int cin, int cout) {
  ConvBlockParams p;
  p.conv_w = init_conv_weight(seed, prefix + ".conv.w", cout, cin, 3);
  p.conv_b = zeros_param(cout);
  p.norm_gamma = ones_param(cout);
  p.norm_beta = zeros_param(cout);
  return p;
}

int reduction_for(int channels, int preferred) {
  for (int r = std::min(preferred, channels); r > 1; --r) {
    if (channels % r == 0) return r;
  }
  return 1;
}

SEResParams init_se_res(uint64_t seed, const std::string& prefix, int channels, int reduction) {
  if (reduction < 1 || channels % reduction != 0) {
    throw std::invalid_argument("init_se_res: reduction " + std::to_string(reduction) +
                                " must divide channel count " + std::to_string(channels));
  }
  SEResParams p;
  p.reduction = reduction;
  p.conv1 = init_conv_block(seed, prefix + ".conv1", channels, channels);
  p.conv2 = init_conv_block(seed, prefix + ".conv2", channels, channels);
  const int hidden = channels / reduction;
  p.fc_reduce_w = init_dense_weight(seed, prefix + ".fc_reduce.w", hidden, channels);
  p.fc_reduce_b = zeros_param(hidden);
  p.fc_expand_w = init_dense_weight(seed, prefix + ".fc_expand.w", channels, hidden);
  p.fc_expand_b = zeros_param(channels);
  return p;
}

SKParams init_sk(uint64_t seed, const std::string& prefix, int channels, int reduction, int l_min) {
  if (l_min < 8) throw std::invalid_argument("init_sk: l_min must be >= 8");
  SKParams p;
  p.reduction = reduction;
  p.l_min = l_min;
  p.branch_a_w = init_conv_weight(seed, prefix + ".branch_a.w", channels, channels, 3);
  p.branch_a_b = zeros_param(channels);
  p.norm_a_gamma = ones_param(channels);
  p.norm_a_beta = zeros_param(channels);
  p.branch_b_w = init_conv_weight(seed, prefix + ".branch_b.w", channels, channels, 3);
  p.branch_b_b = zeros_param(channels);
  p.norm_b_gamma = ones_param(channels);
  p.norm_b_beta = zeros_param(channels);
  const int hidden = std::max(channels / reduction, l_min);
  p.fc_reduce_w = init_dense_weight(seed, prefix + ".fc_reduce.w", hidden, channels);
  p.fc_reduce_b = zeros_param(hidden);
  p.fc_select_a_w = init_dense_weight(seed, prefix + ".fc_select_a.w", channels, hidden);
  p.fc_select_a_b = zeros_param(channels);
  p.fc_select_b_w = init_dense_weight(seed, prefix + ".fc_select_b.w", channels, hidden);
  p.fc_select_b_b = zeros_param(channels);
  return p;
}

}  // namespace skunet::blocks
