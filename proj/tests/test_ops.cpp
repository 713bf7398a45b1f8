#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "skunet/ops.hpp"
#include "skunet/rng.hpp"

using namespace skunet;

namespace {

Tensor rand_tensor(Rng& rng, std::vector<int> shape, double lo = -1.0, double hi = 1.0) {
  std::vector<scalar> data(Tensor::shape_numel(shape));
  for (auto& v : data) v = static_cast<scalar>(rng.uniform(lo, hi));
  return Tensor::from_data(std::move(shape), std::move(data));
}

// six nested loops straight from the cross-correlation definition
Tensor conv2d_reference(const Tensor& in, const Tensor& wt, const Tensor& bs, int stride,
                        int padding, int dilation) {
  const int n = in.dim(0), cin = in.dim(1), h = in.dim(2), w = in.dim(3);
  const int cout = wt.dim(0), kh = wt.dim(2), kw = wt.dim(3);
  const int ho = (h + 2 * padding - dilation * (kh - 1) - 1) / stride + 1;
  const int wo = (w + 2 * padding - dilation * (kw - 1) - 1) / stride + 1;
  Tensor out = Tensor::zeros({n, cout, ho, wo});
  for (int b = 0; b < n; ++b)
    for (int co = 0; co < cout; ++co)
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
          double acc = bs[static_cast<size_t>(co)];
          for (int ci = 0; ci < cin; ++ci)
            for (int ky = 0; ky < kh; ++ky)
              for (int kx = 0; kx < kw; ++kx) {
                const int iy = oy * stride + ky * dilation - padding;
                const int ix = ox * stride + kx * dilation - padding;
                if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                acc += static_cast<double>(wt.at(co, ci, ky, kx)) * in.at(b, ci, iy, ix);
              }
          out.at(b, co, oy, ox) = static_cast<scalar>(acc);
        }
  return out;
}

}  // namespace

TEST_CASE("conv2d identity kernel") {
  Tensor in = Tensor::full({1, 1, 3, 3}, 1.0f);
  Tensor w = Tensor::full({1, 1, 1, 1}, 1.0f);
  Tensor b = Tensor::zeros({1});
  Tensor out = conv2d(in, w, b);
  REQUIRE(out.shape() == std::vector<int>{1, 1, 3, 3});
  for (size_t i = 0; i < out.size(); ++i) CHECK(out[i] == 1.0f);
}

TEST_CASE("conv2d full-window sum") {
  Tensor in = Tensor::from_data({1, 1, 2, 2}, {1, 2, 3, 4});
  // kernel dims must be odd per contract; emulate the 2x2 window with a 3x3
  // kernel whose last row/column are zero
  Tensor w = Tensor::from_data({1, 1, 3, 3}, {1, 1, 0, 1, 1, 0, 0, 0, 0});
  Tensor b = Tensor::zeros({1});
  Tensor out = conv2d(in, w, b, 1, 0, 1);
  // 3x3 valid conv of a 2x2 image does not fit; use padding 1 and check the
  // bottom-right output, whose window covers the whole image
  Tensor padded = conv2d(in, w, b, 1, 1, 1);
  CHECK(padded.at(0, 0, 1, 1) == doctest::Approx(10.0f));
}

TEST_CASE("conv2d matches the loop reference (dilation 2)") {
  Rng rng(404);
  Tensor in = rand_tensor(rng, {2, 3, 8, 8});
  Tensor w = rand_tensor(rng, {4, 3, 3, 3});
  Tensor b = rand_tensor(rng, {4});
  for (auto [stride, pad, dil] : {std::tuple{1, 2, 2}, std::tuple{1, 1, 1}, std::tuple{1, 0, 1}}) {
    Tensor got = conv2d(in, w, b, stride, pad, dil);
    Tensor want = conv2d_reference(in, w, b, stride, pad, dil);
    REQUIRE(got.shape() == want.shape());
    for (size_t i = 0; i < got.size(); ++i) {
      CHECK(std::fabs(got[i] - want[i]) < 1e-5);
    }
  }
}

TEST_CASE("conv2d strided matches the loop reference") {
  Rng rng(405);
  Tensor in = rand_tensor(rng, {1, 2, 9, 9});
  Tensor w = rand_tensor(rng, {3, 2, 3, 3});
  Tensor b = rand_tensor(rng, {3});
  Tensor got = conv2d(in, w, b, 2, 1, 1);
  Tensor want = conv2d_reference(in, w, b, 2, 1, 1);
  REQUIRE(got.shape() == want.shape());
  for (size_t i = 0; i < got.size(); ++i) CHECK(std::fabs(got[i] - want[i]) < 1e-5);
}

TEST_CASE("conv2d narrow planes (im2col path) match the loop reference") {
  Rng rng(406);
  Tensor in = rand_tensor(rng, {2, 4, 12, 12});
  Tensor w = rand_tensor(rng, {5, 4, 3, 3});
  Tensor b = rand_tensor(rng, {5});
  for (int dil : {1, 2}) {
    Tensor got = conv2d(in, w, b, 1, dil, dil);
    Tensor want = conv2d_reference(in, w, b, 1, dil, dil);
    for (size_t i = 0; i < got.size(); ++i) CHECK(std::fabs(got[i] - want[i]) < 1e-5);
  }
}

TEST_CASE("conv2d shape errors name the offending dimension") {
  Tensor in = Tensor::zeros({1, 5, 8, 8});
  Tensor w = Tensor::zeros({4, 3, 3, 3});
  Tensor b = Tensor::zeros({4});
  CHECK_THROWS_WITH_AS(conv2d(in, w, b, 1, 1), doctest::Contains("input channel dim (5)"),
                       std::invalid_argument);
  Tensor in2 = Tensor::zeros({1, 3, 8, 8});
  Tensor b2 = Tensor::zeros({7});
  CHECK_THROWS_WITH_AS(conv2d(in2, w, b2, 1, 1), doctest::Contains("bias length (7)"),
                       std::invalid_argument);
  CHECK_THROWS_AS(conv2d(in2, w, b, 2, 0, 1), std::invalid_argument);  // non-integer output
}

TEST_CASE("maxpool2d single window and tie-break") {
  Tensor in = Tensor::from_data({1, 1, 2, 2}, {1, 2, 3, 4});
  Tensor out = maxpool2d(in);
  CHECK(out.size() == 1);
  CHECK(out[0] == 4.0f);

  // constant input: gradient goes to the top-left of each window
  Tensor c = Tensor::full({1, 1, 4, 4}, 2.5f, true);
  GradTape tape;
  Tensor pooled = maxpool2d(c);
  for (size_t i = 0; i < pooled.size(); ++i) CHECK(pooled[i] == 2.5f);
  tape.backward(sum(pooled));
  const auto& g = c.grad();
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x)
      CHECK(g[static_cast<size_t>(y) * 4 + x] == ((y % 2 == 0 && x % 2 == 0) ? 1.0f : 0.0f));
}

TEST_CASE("maxpool2d matches per-window max oracle") {
  Rng rng(7);
  Tensor in = rand_tensor(rng, {1, 2, 8, 8});
  Tensor out = maxpool2d(in);
  for (int c = 0; c < 2; ++c)
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 4; ++x) {
        scalar m = in.at(0, c, 2 * y, 2 * x);
        m = std::max(m, in.at(0, c, 2 * y, 2 * x + 1));
        m = std::max(m, in.at(0, c, 2 * y + 1, 2 * x));
        m = std::max(m, in.at(0, c, 2 * y + 1, 2 * x + 1));
        CHECK(out.at(0, c, y, x) == m);
      }
}

TEST_CASE("maxpool2d rejects odd spatial dims") {
  CHECK_THROWS_WITH_AS(maxpool2d(Tensor::zeros({1, 1, 3, 4})), doctest::Contains("pad or crop"),
                       std::invalid_argument);
}

TEST_CASE("upsample_nearest2x replicates and round-trips") {
  Tensor in = Tensor::full({1, 1, 1, 1}, 7.0f);
  Tensor up = upsample_nearest2x(in);
  REQUIRE(up.shape() == std::vector<int>{1, 1, 2, 2});
  for (size_t i = 0; i < 4; ++i) CHECK(up[i] == 7.0f);

  // maxpool(upsample(x)) == x for any x
  Rng rng(8);
  Tensor x = rand_tensor(rng, {2, 3, 5, 4});
  Tensor rt = maxpool2d(upsample_nearest2x(x));
  REQUIRE(rt.shape() == x.shape());
  for (size_t i = 0; i < x.size(); ++i) CHECK(rt[i] == x[i]);

  // gradient of sum(upsample(x)) is 4 everywhere
  Tensor xg = x.clone(true);
  GradTape tape;
  tape.backward(sum(upsample_nearest2x(xg)));
  for (scalar g : xg.grad()) CHECK(g == 4.0f);
}

TEST_CASE("relu, sigmoid, softmax elementwise examples") {
  Tensor x = Tensor::from_data({3}, {-1.0f, 0.0f, 2.0f});
  Tensor r = relu(x);
  CHECK(r[0] == 0.0f);
  CHECK(r[1] == 0.0f);
  CHECK(r[2] == 2.0f);

  Tensor s = sigmoid(Tensor::from_data({1}, {0.0f}));
  CHECK(s[0] == doctest::Approx(0.5f));

  // stabilization: softmax([1000,1000]) = [0.5,0.5] without overflow
  Tensor big = softmax(Tensor::from_data({1, 2}, {1000.0f, 1000.0f}), 1);
  CHECK(big[0] == doctest::Approx(0.5f));
  CHECK(big[1] == doctest::Approx(0.5f));
}

TEST_CASE("softmax sums to one along the axis for large magnitudes") {
  Rng rng(9);
  for (int axis = 0; axis < 3; ++axis) {
    Tensor x = rand_tensor(rng, {3, 4, 5}, -1e4, 1e4);
    Tensor y = softmax(x, axis);
    size_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= static_cast<size_t>(x.dim(i));
    for (int i = axis + 1; i < 3; ++i) inner *= static_cast<size_t>(x.dim(i));
    const size_t an = static_cast<size_t>(x.dim(axis));
    for (size_t o = 0; o < outer; ++o)
      for (size_t i = 0; i < inner; ++i) {
        double s = 0.0;
        for (size_t a = 0; a < an; ++a) {
          const scalar v = y[o * an * inner + a * inner + i];
          CHECK(v >= 0.0f);
          s += v;
        }
        CHECK(std::fabs(s - 1.0) < 1e-6);
      }
  }
  CHECK_THROWS_AS(softmax(Tensor::zeros({2, 2}), 2), std::invalid_argument);
}

TEST_CASE("softmax2 pairs sum to one") {
  Rng rng(10);
  Tensor a = rand_tensor(rng, {4, 6}, -50.0, 50.0);
  Tensor b = rand_tensor(rng, {4, 6}, -50.0, 50.0);
  auto [wa, wb] = softmax2(a, b);
  for (size_t i = 0; i < wa.size(); ++i) {
    CHECK(wa[i] >= 0.0f);
    CHECK(wb[i] >= 0.0f);
    CHECK(std::fabs(static_cast<double>(wa[i]) + wb[i] - 1.0) < 1e-6);
  }
}

TEST_CASE("global_avg_pool examples and mean oracle") {
  Tensor c = Tensor::full({1, 1, 3, 3}, 4.25f);
  CHECK(global_avg_pool(c)[0] == doctest::Approx(4.25f));

  Tensor q = Tensor::from_data({1, 1, 2, 2}, {1, 3, 5, 7});
  CHECK(global_avg_pool(q)[0] == doctest::Approx(4.0f));

  Rng rng(11);
  Tensor x = rand_tensor(rng, {2, 3, 4, 5});
  Tensor m = global_avg_pool(x);
  for (int n = 0; n < 2; ++n)
    for (int ch = 0; ch < 3; ++ch) {
      double acc = 0.0;
      for (int y = 0; y < 4; ++y)
        for (int xx = 0; xx < 5; ++xx) acc += x.at(n, ch, y, xx);
      CHECK(std::fabs(m[static_cast<size_t>(n) * 3 + ch] - acc / 20.0) < 1e-6);
    }
}

TEST_CASE("dense identity, broadcast, and matmul oracle") {
  Tensor x = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor eye = Tensor::from_data({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  Tensor zb = Tensor::zeros({3});
  Tensor same = dense(x, eye, zb);
  for (size_t i = 0; i < x.size(); ++i) CHECK(same[i] == x[i]);

  Tensor zw = Tensor::zeros({4, 3});
  Tensor bias = Tensor::from_data({4}, {9, 8, 7, 6});
  Tensor bb = dense(x, zw, bias);
  for (int n = 0; n < 2; ++n)
    for (int c = 0; c < 4; ++c) CHECK(bb[static_cast<size_t>(n) * 4 + c] == bias[static_cast<size_t>(c)]);

  Rng rng(12);
  Tensor xr = rand_tensor(rng, {3, 6});
  Tensor wr = rand_tensor(rng, {4, 6});
  Tensor br = rand_tensor(rng, {4});
  Tensor out = dense(xr, wr, br);
  for (int n = 0; n < 3; ++n)
    for (int co = 0; co < 4; ++co) {
      double acc = br[static_cast<size_t>(co)];
      for (int ci = 0; ci < 6; ++ci)
        acc += static_cast<double>(wr[static_cast<size_t>(co) * 6 + ci]) * xr[static_cast<size_t>(n) * 6 + ci];
      CHECK(std::fabs(out[static_cast<size_t>(n) * 4 + co] - acc) < 1e-5);
    }
  CHECK_THROWS_WITH_AS(dense(xr, Tensor::zeros({4, 5}), br), doctest::Contains("inner dim"),
                       std::invalid_argument);
}

TEST_CASE("instance_norm degenerate and affine behavior") {
  Tensor c = Tensor::full({1, 2, 4, 4}, 3.0f);
  Tensor g1 = Tensor::full({2}, 1.0f);
  Tensor b0 = Tensor::zeros({2});
  Tensor out = instance_norm(c, g1, b0);
  for (size_t i = 0; i < out.size(); ++i) CHECK(out[i] == doctest::Approx(0.0f));

  // gamma = 0 -> output equals beta everywhere
  Rng rng(13);
  Tensor x = rand_tensor(rng, {1, 2, 4, 4});
  Tensor g0 = Tensor::zeros({2});
  Tensor beta = Tensor::from_data({2}, {0.5f, -1.5f});
  Tensor ob = instance_norm(x, g0, beta);
  for (int ch = 0; ch < 2; ++ch)
    for (int y = 0; y < 4; ++y)
      for (int xx = 0; xx < 4; ++xx) CHECK(ob.at(0, ch, y, xx) == beta[static_cast<size_t>(ch)]);

  // standardized moments
  Tensor on = instance_norm(x, g1.clone(), b0.clone());
  for (int ch = 0; ch < 2; ++ch) {
    double mean = 0.0, var = 0.0;
    for (int y = 0; y < 4; ++y)
      for (int xx = 0; xx < 4; ++xx) mean += on.at(0, ch, y, xx);
    mean /= 16.0;
    for (int y = 0; y < 4; ++y)
      for (int xx = 0; xx < 4; ++xx) {
        const double d = on.at(0, ch, y, xx) - mean;
        var += d * d;
      }
    var /= 16.0;
    CHECK(std::fabs(mean) < 1e-5);
    CHECK(std::fabs(var - 1.0) < 1e-3);
  }
  CHECK_THROWS_AS(instance_norm(x, g1, b0, scalar(0)), std::invalid_argument);
}

TEST_CASE("add, mul_channelwise, concat examples") {
  Rng rng(14);
  Tensor x = rand_tensor(rng, {1, 2, 3, 3});
  Tensor z = Tensor::zeros({1, 2, 3, 3});
  Tensor same = add(x, z);
  for (size_t i = 0; i < x.size(); ++i) CHECK(same[i] == x[i]);
  CHECK_THROWS_AS(add(x, Tensor::zeros({1, 2, 3, 4})), std::invalid_argument);

  Tensor ones = Tensor::full({1, 2}, 1.0f);
  Tensor scaled = mul_channelwise(x, ones);
  for (size_t i = 0; i < x.size(); ++i) CHECK(scaled[i] == x[i]);

  Tensor a = rand_tensor(rng, {1, 2, 4, 4});
  Tensor b = rand_tensor(rng, {1, 3, 4, 4});
  Tensor cat = concat_channels(a, b);
  REQUIRE(cat.shape() == std::vector<int>{1, 5, 4, 4});
  for (int c = 0; c < 2; ++c)
    for (int y = 0; y < 4; ++y)
      for (int xx = 0; xx < 4; ++xx) CHECK(cat.at(0, c, y, xx) == a.at(0, c, y, xx));
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 4; ++y)
      for (int xx = 0; xx < 4; ++xx) CHECK(cat.at(0, c + 2, y, xx) == b.at(0, c, y, xx));
}

TEST_CASE("non-finite forward values are an error state") {
  Tensor big = Tensor::full({1, 1, 2, 2}, 3e38f);
  CHECK_THROWS_WITH_AS(add(big, big), doctest::Contains("non-finite"), std::runtime_error);
}

TEST_CASE("ops are deterministic across repeated evaluation") {
  Rng rng(15);
  Tensor in = rand_tensor(rng, {2, 3, 16, 16});
  Tensor w = rand_tensor(rng, {4, 3, 3, 3});
  Tensor b = rand_tensor(rng, {4});
  Tensor a1 = conv2d(in, w, b, 1, 1);
  Tensor a2 = conv2d(in, w, b, 1, 1);
  for (size_t i = 0; i < a1.size(); ++i) CHECK(a1[i] == a2[i]);  // bit-identical
}
