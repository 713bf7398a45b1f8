#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "skunet/blocks.hpp"
#include "skunet/gradcheck.hpp"
#include "skunet/ops.hpp"
#include "skunet/rng.hpp"

using namespace skunet;
using namespace skunet::blocks;

namespace {

Tensor rand_tensor(Rng& rng, std::vector<int> shape, double lo = -1.0, double hi = 1.0) {
  std::vector<scalar> data(Tensor::shape_numel(shape));
  for (auto& v : data) v = static_cast<scalar>(rng.uniform(lo, hi));
  return Tensor::from_data(std::move(shape), std::move(data));
}

}  // namespace

TEST_CASE("conv_block zero weights give zero output and preserve shape") {
  ConvBlockParams p;
  p.conv_w = Tensor::zeros({4, 3, 3, 3});
  p.conv_b = Tensor::zeros({4});
  p.norm_gamma = Tensor::full({4}, 1.0f);
  p.norm_beta = Tensor::zeros({4});
  Rng rng(1);
  for (auto [h, w] : {std::pair{1, 1}, std::pair{5, 7}, std::pair{16, 16}}) {
    Tensor x = rand_tensor(rng, {2, 3, h, w});
    Tensor y = conv_block(x, p);
    CHECK(y.shape() == std::vector<int>{2, 4, h, w});
    for (size_t i = 0; i < y.size(); ++i) CHECK(y[i] == 0.0f);
  }
}

TEST_CASE("se_res zero input with zero biases stays zero") {
  auto p = init_se_res(11, "t.se", 4, 4);
  Tensor x = Tensor::zeros({1, 4, 6, 6});
  Tensor y = se_res_forward(x, p);
  REQUIRE(y.shape() == x.shape());
  for (size_t i = 0; i < y.size(); ++i) CHECK(y[i] == 0.0f);
}

TEST_CASE("se gate saturated to 1 recovers the plain residual block") {
  auto p = init_se_res(12, "t.se", 4, 4);
  Rng rng(2);
  Tensor x = rand_tensor(rng, {1, 4, 6, 6});

  // u recomputed without any channel scaling
  Tensor u = conv_block(x, p.conv1);
  u = conv_block(u, p.conv2);
  Tensor plain = relu(add(x, u));

  // saturate the gate: huge expand bias drives sigmoid to 1
  auto q = p;
  q.fc_expand_b = Tensor::full({4}, 100.0f);
  Tensor gated = se_res_forward(x, q);
  for (size_t i = 0; i < plain.size(); ++i) {
    CHECK(std::fabs(gated[i] - plain[i]) < 1e-4);
  }
}

TEST_CASE("se gate is strictly inside (0,1) and zero gate leaves relu(x)") {
  auto p = init_se_res(13, "t.se", 8, 8);
  Rng rng(3);
  Tensor x = rand_tensor(rng, {2, 8, 5, 5});
  // the gate itself
  Tensor u = conv_block(x, p.conv1);
  u = conv_block(u, p.conv2);
  Tensor s = sigmoid(dense(relu(dense(global_avg_pool(u), p.fc_reduce_w, p.fc_reduce_b)),
                           p.fc_expand_w, p.fc_expand_b));
  for (size_t i = 0; i < s.size(); ++i) {
    CHECK(s[i] > 0.0f);
    CHECK(s[i] < 1.0f);
  }
  // clamping the gate to zero reduces the block to relu(x)
  Tensor zero_gate = relu(add(x, mul_channelwise(u, Tensor::zeros({2, 8}))));
  Tensor rx = relu(x);
  for (size_t i = 0; i < rx.size(); ++i) CHECK(zero_gate[i] == rx[i]);
}

TEST_CASE("se_res gradient check at 1x4x6x6") {
  auto p = init_se_res(901, "gc.se", 4, 4);
  Rng rng(24);
  Tensor x = rand_tensor(rng, {1, 4, 6, 6});
  const double err =
      gradcheck::finite_diff_check([&](const Tensor& t) { return se_res_forward(t, p); }, x);
  CHECK(err < 1e-3);
}

TEST_CASE("sk symmetric branches give exactly half attention and output ua") {
  const int c = 4;
  auto p = init_sk(14, "t.sk", c, 4, 8);
  // center-only identical kernels: dilation cannot tell the branches apart
  auto center_only = [&](Tensor& w) {
    for (int co = 0; co < c; ++co)
      for (int ci = 0; ci < c; ++ci)
        for (int ky = 0; ky < 3; ++ky)
          for (int kx = 0; kx < 3; ++kx)
            if (!(ky == 1 && kx == 1)) w.at(co, ci, ky, kx) = 0.0f;
  };
  center_only(p.branch_a_w);
  p.branch_b_w = p.branch_a_w.clone(true);
  p.branch_b_b = p.branch_a_b.clone(true);
  p.norm_b_gamma = p.norm_a_gamma.clone(true);
  p.norm_b_beta = p.norm_a_beta.clone(true);
  p.fc_select_b_w = p.fc_select_a_w.clone(true);
  p.fc_select_b_b = p.fc_select_a_b.clone(true);

  Rng rng(4);
  Tensor x = rand_tensor(rng, {2, c, 6, 6});
  auto detail = sk_forward_detail(x, p);
  for (size_t i = 0; i < detail.weight_a.size(); ++i) {
    CHECK(detail.weight_a[i] == doctest::Approx(0.5f).epsilon(1e-6));
    CHECK(detail.weight_b[i] == doctest::Approx(0.5f).epsilon(1e-6));
  }
  for (size_t i = 0; i < detail.out.size(); ++i) {
    CHECK(detail.out[i] == doctest::Approx(detail.branch_a[i]).epsilon(1e-5));
  }
}

TEST_CASE("sk attention weights sum to one on random inputs") {
  auto p = init_sk(15, "t.sk", 8, 8, 8);
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor x = rand_tensor(rng, {2, 8, 6, 6}, -2.0, 2.0);
    auto detail = sk_forward_detail(x, p);
    for (size_t i = 0; i < detail.weight_a.size(); ++i) {
      CHECK(detail.weight_a[i] >= 0.0f);
      CHECK(detail.weight_b[i] >= 0.0f);
      CHECK(std::fabs(static_cast<double>(detail.weight_a[i]) + detail.weight_b[i] - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("sk output is a per-channel convex combination of its branches") {
  auto p = init_sk(16, "t.sk", 4, 4, 8);
  Rng rng(6);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor x = rand_tensor(rng, {1, 4, 6, 6});
    auto d = sk_forward_detail(x, p);
    for (size_t i = 0; i < d.out.size(); ++i) {
      const scalar lo = std::min(d.branch_a[i], d.branch_b[i]);
      const scalar hi = std::max(d.branch_a[i], d.branch_b[i]);
      CHECK(d.out[i] >= lo - 1e-5f);
      CHECK(d.out[i] <= hi + 1e-5f);
    }
  }
}

TEST_CASE("sk blocks preserve shape; channel mismatch is rejected") {
  auto p = init_sk(17, "t.sk", 8, 8, 8);
  Rng rng(7);
  Tensor x = rand_tensor(rng, {3, 8, 10, 12});
  CHECK(sk_forward(x, p).shape() == x.shape());
  CHECK_THROWS_WITH_AS(sk_forward(rand_tensor(rng, {1, 4, 6, 6}), p),
                       doctest::Contains("channel"), std::invalid_argument);
  auto se = init_se_res(18, "t.se", 8, 8);
  CHECK(se_res_forward(x, se).shape() == x.shape());
  CHECK_THROWS_AS(se_res_forward(rand_tensor(rng, {1, 4, 6, 6}), se), std::invalid_argument);
}

TEST_CASE("sk attention responds continuously to input scaling") {
  auto p = init_sk(19, "t.sk", 4, 4, 8);
  Rng rng(8);
  Tensor x = rand_tensor(rng, {1, 4, 6, 6});
  double prev_wa = -1.0;
  for (double k : {0.25, 0.5, 1.0, 2.0, 4.0}) {
    Tensor xs = x.clone();
    for (size_t i = 0; i < xs.size(); ++i) xs[i] = static_cast<scalar>(k) * xs[i];
    auto d = sk_forward_detail(xs, p);
    double mean_wa = 0.0;
    for (size_t i = 0; i < d.weight_a.size(); ++i) mean_wa += d.weight_a[i];
    mean_wa /= static_cast<double>(d.weight_a.size());
    CHECK(std::isfinite(mean_wa));
    if (prev_wa >= 0.0) CHECK(std::fabs(mean_wa - prev_wa) < 0.5);  // smoke: no blowups
    prev_wa = mean_wa;
  }
}

TEST_CASE("sk gradient check at 1x4x6x6") {
  auto p = init_sk(902, "gc.sk", 4, 4, 8);
  Rng rng(25);
  Tensor x = rand_tensor(rng, {1, 4, 6, 6});
  const double err =
      gradcheck::finite_diff_check([&](const Tensor& t) { return sk_forward(t, p); }, x);
  CHECK(err < 1e-3);
}

TEST_CASE("conv_block gradient check") {
  auto p = init_conv_block(903, "gc.cb", 3, 5);
  Rng rng(26);
  Tensor x = rand_tensor(rng, {2, 3, 6, 6});
  CHECK(gradcheck::finite_diff_check([&](const Tensor& t) { return conv_block(t, p); }, x) < 1e-3);
}

TEST_CASE("reduction_for picks the largest divisor below the preferred ratio") {
  CHECK(reduction_for(32) == 8);
  CHECK(reduction_for(8) == 8);
  CHECK(reduction_for(4) == 4);
  CHECK(reduction_for(6) == 6);
  CHECK(reduction_for(12) == 6);
  CHECK_THROWS_AS(init_se_res(1, "x", 12, 8), std::invalid_argument);  // 8 does not divide 12
}
