#include "skunet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>

#include "skunet/blocks.hpp"
#include "skunet/network.hpp"
#include "skunet/ops.hpp"
#include "skunet/rng.hpp"

namespace skunet::gradcheck {

double projection_weight(size_t i) {
  const uint64_t z = derive_seed(0x50f7e57ULL, i);
  const double mag = 0.25 + 0.75 * static_cast<double>(z >> 11) * 0x1.0p-53;
  return (z & 1) ? mag : -mag;
}

namespace {

double project(const Tensor& y) {
  double s = 0.0;
  const scalar* p = y.data();
  for (size_t i = 0; i < y.size(); ++i) s += projection_weight(i) * static_cast<double>(p[i]);
  return s;
}

Tensor projection_tensor(const std::vector<int>& shape) {
  Tensor r = Tensor::zeros(shape);
  for (size_t i = 0; i < r.size(); ++i) r[i] = static_cast<scalar>(projection_weight(i));
  return r;
}

Tensor rand_tensor(Rng& rng, std::vector<int> shape, double lo = -1.0, double hi = 1.0,
                   bool requires_grad = false) {
  std::vector<scalar> data(Tensor::shape_numel(shape));
  for (auto& v : data) v = static_cast<scalar>(rng.uniform(lo, hi));
  return Tensor::from_data(std::move(shape), std::move(data), requires_grad);
}

// uniform magnitude in [margin, 1] with random sign: keeps relu inputs away
// from the kink at 0
Tensor rand_tensor_offzero(Rng& rng, std::vector<int> shape, double margin) {
  std::vector<scalar> data(Tensor::shape_numel(shape));
  for (auto& v : data) {
    const double mag = rng.uniform(margin, 1.0);
    v = static_cast<scalar>(rng.coin() ? mag : -mag);
  }
  return Tensor::from_data(std::move(shape), std::move(data));
}

}  // namespace

double finite_diff_check_subset(const std::function<Tensor(const Tensor&)>& fn, const Tensor& x,
                                const std::vector<size_t>& indices, double eps) {
  std::vector<scalar> analytic;
  {
    GradTape tape;
    Tensor xg = x.clone(/*requires_grad=*/true);
    Tensor y = fn(xg);
    Tensor p = sum(mul(y, projection_tensor(y.shape())));
    tape.backward(p);
    analytic = xg.grad();
  }

  NoGradScope no_grad;
  Tensor xp = x.clone();
  double max_err = 0.0;
  for (size_t idx : indices) {
    const scalar saved = xp[idx];
    const scalar vp = saved + static_cast<scalar>(eps);
    const scalar vm = saved - static_cast<scalar>(eps);
    xp[idx] = vp;
    const double lp = project(fn(xp));
    xp[idx] = vm;
    const double lm = project(fn(xp));
    xp[idx] = saved;
    const double numeric = (lp - lm) / (static_cast<double>(vp) - static_cast<double>(vm));
    const double a = analytic[idx];
    const double err = std::fabs(a - numeric) / std::max({1.0, std::fabs(a), std::fabs(numeric)});
    max_err = std::max(max_err, err);
  }
  return max_err;
}

double finite_diff_check(const std::function<Tensor(const Tensor&)>& fn, const Tensor& x,
                         double eps) {
  std::vector<size_t> all(x.size());
  for (size_t i = 0; i < all.size(); ++i) all[i] = i;
  return finite_diff_check_subset(fn, x, all, eps);
}

namespace {

using blocks::init_conv_weight;
using blocks::init_dense_weight;

double check_conv2d() {
  Rng rng(11);
  Tensor x = rand_tensor(rng, {2, 3, 8, 8});
  Tensor w = rand_tensor(rng, {4, 3, 3, 3}, -0.5, 0.5);
  Tensor b = rand_tensor(rng, {4}, -0.2, 0.2);
  double err = 0.0;
  err = std::max(err, finite_diff_check(
                          [&](const Tensor& t) { return conv2d(t, w, b, 1, 1); }, x));
  err = std::max(err, finite_diff_check(
                          [&](const Tensor& t) { return conv2d(x, t, b, 1, 1); }, w));
  err = std::max(err, finite_diff_check(
                          [&](const Tensor& t) { return conv2d(x, w, t, 1, 1); }, b));
  // dilated instance (5x5 effective field)
  err = std::max(err, finite_diff_check(
                          [&](const Tensor& t) { return conv2d(x, t, b, 1, 2, 2); }, w));
  // strided instance
  Tensor x9 = rand_tensor(rng, {1, 3, 9, 9});
  err = std::max(err, finite_diff_check(
                          [&](const Tensor& t) { return conv2d(x9, t, b, 2, 1, 1); }, w));
  return err;
}

double check_maxpool2d() {
  // distinct values with margin 0.05 so +-eps cannot flip any argmax
  Rng rng(12);
  std::vector<scalar> vals(2 * 8 * 8);
  for (size_t i = 0; i < vals.size(); ++i) vals[i] = static_cast<scalar>(0.05 * (static_cast<double>(i) - 64.0));
  for (size_t i = vals.size(); i > 1; --i) std::swap(vals[i - 1], vals[rng.uniform_int(0, static_cast<int64_t>(i) - 1)]);
  Tensor x = Tensor::from_data({1, 2, 8, 8}, std::move(vals));
  return finite_diff_check([](const Tensor& t) { return maxpool2d(t); }, x);
}

double check_upsample() {
  Rng rng(13);
  Tensor x = rand_tensor(rng, {1, 3, 4, 4});
  return finite_diff_check([](const Tensor& t) { return upsample_nearest2x(t); }, x);
}

double check_relu() {
  Rng rng(14);
  Tensor x = rand_tensor_offzero(rng, {2, 3, 5, 5}, 0.1);
  return finite_diff_check([](const Tensor& t) { return relu(t); }, x);
}

double check_sigmoid() {
  Rng rng(15);
  Tensor x = rand_tensor(rng, {2, 3, 5, 5}, -3.0, 3.0);
  return finite_diff_check([](const Tensor& t) { return sigmoid(t); }, x);
}

double check_softmax() {
  Rng rng(16);
  Tensor x = rand_tensor(rng, {2, 4, 3, 3}, -2.0, 2.0);
  double err = finite_diff_check([](const Tensor& t) { return softmax(t, 1); }, x);
  Tensor x2 = rand_tensor(rng, {3, 5}, -2.0, 2.0);
  return std::max(err, finite_diff_check([](const Tensor& t) { return softmax(t, 1); }, x2));
}

double check_softmax2() {
  Rng rng(17);
  Tensor a = rand_tensor(rng, {3, 5}, -2.0, 2.0);
  Tensor b = rand_tensor(rng, {3, 5}, -2.0, 2.0);
  double err = 0.0;
  err = std::max(err, finite_diff_check(
                          [&](const Tensor& t) { return softmax2(t, b).first; }, a));
  err = std::max(err, finite_diff_check(
                          [&](const Tensor& t) { return softmax2(a, t).second; }, b));
  err = std::max(err, finite_diff_check(
                          [&](const Tensor& t) {
                            auto [wa, wb] = softmax2(t, b);
                            return add(mul(wa, wa), wb);  // exercise both outputs
                          },
                          a));
  return err;
}

double check_global_avg_pool() {
  Rng rng(18);
  Tensor x = rand_tensor(rng, {2, 3, 4, 4});
  return finite_diff_check([](const Tensor& t) { return global_avg_pool(t); }, x);
}

double check_dense() {
  Rng rng(19);
  Tensor x = rand_tensor(rng, {3, 6});
  Tensor w = rand_tensor(rng, {4, 6}, -0.5, 0.5);
  Tensor b = rand_tensor(rng, {4}, -0.2, 0.2);
  double err = 0.0;
  err = std::max(err, finite_diff_check([&](const Tensor& t) { return dense(t, w, b); }, x));
  err = std::max(err, finite_diff_check([&](const Tensor& t) { return dense(x, t, b); }, w));
  err = std::max(err, finite_diff_check([&](const Tensor& t) { return dense(x, w, t); }, b));
  return err;
}

double check_instance_norm() {
  Rng rng(20);
  Tensor x = rand_tensor(rng, {2, 3, 5, 5});
  Tensor g = rand_tensor(rng, {3}, 0.5, 1.5);
  Tensor b = rand_tensor(rng, {3}, -0.5, 0.5);
  double err = 0.0;
  err = std::max(err, finite_diff_check([&](const Tensor& t) { return instance_norm(t, g, b); }, x));
  err = std::max(err, finite_diff_check([&](const Tensor& t) { return instance_norm(x, t, b); }, g));
  err = std::max(err, finite_diff_check([&](const Tensor& t) { return instance_norm(x, g, t); }, b));
  return err;
}

double check_add_mul() {
  Rng rng(21);
  Tensor a = rand_tensor(rng, {2, 3, 4, 4});
  Tensor b = rand_tensor(rng, {2, 3, 4, 4});
  double err = 0.0;
  err = std::max(err, finite_diff_check([&](const Tensor& t) { return add(t, b); }, a));
  err = std::max(err, finite_diff_check([&](const Tensor& t) { return mul(t, b); }, a));
  err = std::max(err, finite_diff_check([&](const Tensor& t) { return mul(a, t); }, b));
  err = std::max(err, finite_diff_check([&](const Tensor& t) { return scale(t, scalar(0.7)); }, a));
  err = std::max(err, finite_diff_check([&](const Tensor& t) { return sum(t); }, a));
  return err;
}

double check_mul_channelwise() {
  Rng rng(22);
  Tensor x = rand_tensor(rng, {2, 3, 4, 4});
  Tensor s = rand_tensor(rng, {2, 3});
  double err = 0.0;
  err = std::max(err, finite_diff_check([&](const Tensor& t) { return mul_channelwise(t, s); }, x));
  err = std::max(err, finite_diff_check([&](const Tensor& t) { return mul_channelwise(x, t); }, s));
  return err;
}

double check_concat() {
  Rng rng(23);
  Tensor a = rand_tensor(rng, {1, 2, 4, 4});
  Tensor b = rand_tensor(rng, {1, 3, 4, 4});
  double err = 0.0;
  err = std::max(err, finite_diff_check([&](const Tensor& t) { return concat_channels(t, b); }, a));
  err = std::max(err, finite_diff_check([&](const Tensor& t) { return concat_channels(a, t); }, b));
  return err;
}

double check_se_res() {
  Rng rng(24);
  auto p = blocks::init_se_res(/*seed=*/901, "gc.se", 4, blocks::reduction_for(4));
  Tensor x = rand_tensor(rng, {1, 4, 6, 6});
  double err = 0.0;
  err = std::max(err, finite_diff_check([&](const Tensor& t) { return se_res_forward(t, p); }, x));
  err = std::max(err, finite_diff_check(
                          [&](const Tensor& t) {
                            auto q = p;
                            q.conv1.conv_w = t;
                            return se_res_forward(x, q);
                          },
                          p.conv1.conv_w));
  err = std::max(err, finite_diff_check(
                          [&](const Tensor& t) {
                            auto q = p;
                            q.fc_expand_w = t;
                            return se_res_forward(x, q);
                          },
                          p.fc_expand_w));
  return err;
}

double check_sk() {
  Rng rng(25);
  auto p = blocks::init_sk(/*seed=*/902, "gc.sk", 4, blocks::reduction_for(4), 8);
  Tensor x = rand_tensor(rng, {1, 4, 6, 6});
  double err = 0.0;
  err = std::max(err, finite_diff_check([&](const Tensor& t) { return sk_forward(t, p); }, x));
  err = std::max(err, finite_diff_check(
                          [&](const Tensor& t) {
                            auto q = p;
                            q.branch_b_w = t;
                            return sk_forward(x, q);
                          },
                          p.branch_b_w));
  err = std::max(err, finite_diff_check(
                          [&](const Tensor& t) {
                            auto q = p;
                            q.fc_select_a_w = t;
                            return sk_forward(x, q);
                          },
                          p.fc_select_a_w));
  return err;
}

double check_conv_block() {
  Rng rng(26);
  auto p = blocks::init_conv_block(/*seed=*/903, "gc.cb", 3, 5);
  Tensor x = rand_tensor(rng, {2, 3, 6, 6});
  return finite_diff_check([&](const Tensor& t) { return conv_block(t, p); }, x);
}

double check_seg_loss() {
  Rng rng(27);
  Tensor logits = rand_tensor(rng, {2, 4, 6, 6}, -2.0, 2.0);
  std::vector<uint8_t> target(2 * 6 * 6);
  for (auto& t : target) t = static_cast<uint8_t>(rng.uniform_int(0, 3));
  const std::array<scalar, 4> w = {scalar(0.6), scalar(1.2), scalar(1), scalar(0.9)};
  return finite_diff_check([&](const Tensor& t) { return net::seg_loss(t, target, w); }, logits);
}

}  // namespace

std::vector<GradCase> default_suite(bool full) {
  std::vector<GradCase> cases = {
      {"conv2d", check_conv2d},
      {"maxpool2d", check_maxpool2d},
      {"upsample_nearest2x", check_upsample},
      {"relu", check_relu},
      {"sigmoid", check_sigmoid},
      {"softmax", check_softmax},
      {"softmax2", check_softmax2},
      {"global_avg_pool", check_global_avg_pool},
      {"dense", check_dense},
      {"instance_norm", check_instance_norm},
      {"add_mul_scale_sum", check_add_mul},
      {"mul_channelwise", check_mul_channelwise},
      {"concat_channels", check_concat},
      {"conv_block", check_conv_block},
      {"se_res", check_se_res},
      {"sk", check_sk},
      {"seg_loss", check_seg_loss},
  };
  if (full) cases.push_back({"network_end_to_end", net::end_to_end_gradcheck});
  return cases;
}

SuiteResult run_suite(const std::vector<GradCase>& cases, std::ostream& os, double tol) {
  SuiteResult result;
  result.all_pass = true;
  char buf[128];
  for (const auto& c : cases) {
    const double err = c.run();
    const bool pass = err < tol;
    result.rows.push_back({c.name, err, pass});
    result.all_pass = result.all_pass && pass;
    std::snprintf(buf, sizeof(buf), "%-22s %12.3e   %s", c.name.c_str(), err,
                  pass ? "ok" : "FAIL");
    os << buf << "\n";
  }
  return result;
}

}  // namespace skunet::gradcheck
