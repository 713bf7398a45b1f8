#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "skunet/gradcheck.hpp"
#include "skunet/ops.hpp"
#include "skunet/rng.hpp"

using namespace skunet;

namespace {

Tensor rand_tensor(Rng& rng, std::vector<int> shape, double lo = -1.0, double hi = 1.0,
                   bool rg = false) {
  std::vector<scalar> data(Tensor::shape_numel(shape));
  for (auto& v : data) v = static_cast<scalar>(rng.uniform(lo, hi));
  return Tensor::from_data(std::move(shape), std::move(data), rg);
}

}  // namespace

TEST_CASE("backward of sum gives unit gradients") {
  Rng rng(1);
  Tensor x = rand_tensor(rng, {2, 3, 4, 4}, -1, 1, true);
  GradTape tape;
  tape.backward(sum(x));
  for (scalar g : x.grad()) CHECK(g == 1.0f);
}

TEST_CASE("backward of sum(x*x) gives 2x") {
  Rng rng(2);
  Tensor x = rand_tensor(rng, {3, 5}, -1, 1, true);
  GradTape tape;
  tape.backward(sum(mul(x, x)));
  for (size_t i = 0; i < x.size(); ++i) CHECK(x.grad()[i] == doctest::Approx(2.0f * x[i]));
}

TEST_CASE("backward accumulates instead of overwriting") {
  Tensor x = Tensor::from_data({2}, {1.0f, 2.0f}, true);
  {
    GradTape tape;
    tape.backward(sum(x));
  }
  {
    GradTape tape;
    tape.backward(sum(x));
  }
  CHECK(x.grad()[0] == 2.0f);  // two backward passes summed
  CHECK(x.grad()[1] == 2.0f);
}

TEST_CASE("double backward without reset is an error; reset clears it") {
  Tensor x = Tensor::from_data({2}, {1.0f, 2.0f}, true);
  GradTape tape;
  Tensor s = sum(x);
  tape.backward(s);
  CHECK_THROWS_WITH_AS(tape.backward(s), doctest::Contains("twice"), std::runtime_error);
  tape.reset();
  CHECK(tape.size() == 0);
  Tensor s2 = sum(x);
  tape.backward(s2);  // works again after reset
}

TEST_CASE("backward requires a scalar and a nonempty tape") {
  Tensor x = Tensor::from_data({2}, {1.0f, 2.0f}, true);
  {
    GradTape tape;
    CHECK_THROWS_WITH_AS(tape.backward(x), doctest::Contains("empty tape"), std::runtime_error);
  }
  {
    GradTape tape;
    Tensor y = mul(x, x);
    CHECK_THROWS_WITH_AS(tape.backward(y), doctest::Contains("scalar"), std::invalid_argument);
  }
  CHECK_THROWS_AS(backward(x), std::runtime_error);  // no active tape
}

TEST_CASE("backward is additive over losses") {
  Rng rng(3);
  Tensor x = rand_tensor(rng, {1, 2, 6, 6}, -1, 1);
  Tensor w1 = rand_tensor(rng, {2, 2, 3, 3});
  Tensor w2 = rand_tensor(rng, {2, 2, 3, 3});
  Tensor b = Tensor::zeros({2});

  auto grad_of = [&](bool use_f, bool use_g) {
    Tensor xg = x.clone(true);
    GradTape tape;
    Tensor loss;
    if (use_f && use_g) {
      loss = add(sum(conv2d(xg, w1, b, 1, 1)), sum(relu(conv2d(xg, w2, b, 1, 1))));
    } else if (use_f) {
      loss = sum(conv2d(xg, w1, b, 1, 1));
    } else {
      loss = sum(relu(conv2d(xg, w2, b, 1, 1)));
    }
    tape.backward(loss);
    return xg.grad();
  };
  const auto gf = grad_of(true, false);
  const auto gg = grad_of(false, true);
  const auto gfg = grad_of(true, true);
  for (size_t i = 0; i < gf.size(); ++i) {
    CHECK(std::fabs(static_cast<double>(gf[i]) + gg[i] - gfg[i]) < 1e-6);
  }
}

TEST_CASE("gradients are bit-identical across thread counts") {
#ifdef _OPENMP
  Rng rng(4);
  Tensor x = rand_tensor(rng, {2, 4, 24, 24});
  Tensor w = rand_tensor(rng, {4, 4, 3, 3});
  Tensor b = rand_tensor(rng, {4});
  auto run = [&](int threads) {
    omp_set_num_threads(threads);
    Tensor xg = x.clone(true);
    Tensor wg = w.clone(true);
    GradTape tape;
    tape.backward(sum(relu(conv2d(xg, wg, b, 1, 1))));
    return std::pair{xg.grad(), wg.grad()};
  };
  const auto [g1x, g1w] = run(1);
  const auto [g2x, g2w] = run(2);
  omp_set_num_threads(omp_get_num_procs());
  for (size_t i = 0; i < g1x.size(); ++i) CHECK(g1x[i] == g2x[i]);
  for (size_t i = 0; i < g1w.size(); ++i) CHECK(g1w[i] == g2w[i]);
#endif
}

TEST_CASE("finite_diff_check is near-exact for linear maps") {
  Rng rng(5);
  Tensor x = rand_tensor(rng, {3, 4});
  Tensor w = rand_tensor(rng, {2, 4});
  Tensor b = rand_tensor(rng, {2});
  const double err =
      gradcheck::finite_diff_check([&](const Tensor& t) { return dense(t, w, b); }, x);
  CHECK(err < 1e-6);
}

TEST_CASE("finite_diff_check passes relu away from the kink") {
  Rng rng(6);
  std::vector<scalar> data(36);
  for (auto& v : data) {
    const double mag = rng.uniform(0.2, 1.0);
    v = static_cast<scalar>(rng.coin() ? mag : -mag);
  }
  Tensor x = Tensor::from_data({1, 1, 6, 6}, std::move(data));
  CHECK(gradcheck::finite_diff_check([](const Tensor& t) { return relu(t); }, x) < 1e-3);
}

TEST_CASE("finite_diff_check passes conv2d") {
  Rng rng(7);
  Tensor x = rand_tensor(rng, {1, 2, 6, 6});
  Tensor w = rand_tensor(rng, {3, 2, 3, 3});
  Tensor b = rand_tensor(rng, {3});
  CHECK(gradcheck::finite_diff_check([&](const Tensor& t) { return conv2d(t, w, b, 1, 1); }, x) <
        1e-3);
}

TEST_CASE("default gradient suite passes") {
  std::ostringstream os;
  const auto result = gradcheck::run_suite(gradcheck::default_suite(false), os);
  CHECK(result.all_pass);
  CHECK(result.rows.size() >= 17);
}

TEST_CASE("a corrupted backward is caught and named") {
  // custom op with a deliberately wrong gradient (scaled by 1.05), registered
  // through the public tape API the way any op would be
  auto corrupted_conv = []() {
    Rng rng(8);
    Tensor x = rand_tensor(rng, {1, 2, 6, 6});
    Tensor w = rand_tensor(rng, {2, 2, 3, 3});
    Tensor b = Tensor::zeros({2});
    auto wrong = [&](const Tensor& t) {
      Tensor y = conv2d(t, w, b, 1, 1);
      Tensor out = y.clone(false);
      if (GradTape::active() && y.requires_grad()) {
        out.set_requires_grad(true);
        Tensor y_c = y, out_c = out;
        GradTape::active()->record("bad_scale", [y_c, out_c]() mutable {
          if (!out_c.has_grad()) return;
          const scalar* g = out_c.grad().data();
          scalar* gy = y_c.grad().data();
          for (size_t i = 0; i < y_c.size(); ++i) gy[i] += 1.05f * g[i];  // wrong on purpose
        });
      }
      return out;
    };
    return gradcheck::finite_diff_check(wrong, x);
  };
  std::ostringstream os;
  const auto result = gradcheck::run_suite({{"conv2d", corrupted_conv}}, os);
  CHECK_FALSE(result.all_pass);
  REQUIRE(result.rows.size() == 1);
  CHECK(result.rows[0].name == "conv2d");
  CHECK_FALSE(result.rows[0].pass);
  CHECK(os.str().find("conv2d") != std::string::npos);
  CHECK(os.str().find("FAIL") != std::string::npos);
}
