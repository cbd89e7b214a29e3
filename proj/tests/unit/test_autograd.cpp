#include "mve/nn.hpp"
#include "mve/tensor.hpp"
#include "support.hpp"

using namespace mve;
using mve::test::gradcheck;
using mve::test::random_tensor;

TEST_SUITE("autograd") {
  TEST_CASE("elementwise ops match finite differences") {
    Rng rng(1);
    auto a = random_tensor({2, 3, 4, 4}, rng), b = random_tensor({2, 3, 4, 4}, rng);
    auto pos = ag::add_scalar(ag::square(random_tensor({2, 3, 4, 4}, rng, 1.0, false)), 0.5);
    CHECK(gradcheck([&] { return ag::sum(ag::mul(ag::add(a, b), ag::sub(a, b))); }, {a, b}) < 1e-6);
    CHECK(gradcheck([&] { return ag::mean(ag::div(a, pos)); }, {a}) < 1e-6);
    CHECK(gradcheck([&] { return ag::sum(ag::silu(a)); }, {a}) < 1e-6);
    CHECK(gradcheck([&] { return ag::sum(ag::sigmoid(ag::exp(ag::scale(a, 0.3)))); }, {a}) < 1e-6);
    CHECK(gradcheck([&] { return ag::mse(a, b); }, {a, b}) < 1e-5);
  }

  TEST_CASE("layout ops match finite differences") {
    Rng rng(2);
    auto a = random_tensor({2, 8, 3, 3}, rng), b = random_tensor({2, 4, 3, 3}, rng);
    auto w = random_tensor({2, 12, 3, 3}, rng, 1.0, false);
    const std::vector<int> pick{1, 0, 1};
    CHECK(gradcheck([&] { return ag::sum(ag::mul(ag::concat_channels({a, b}), w)); }, {a, b}) < 1e-6);
    CHECK(gradcheck([&] { return ag::sum(ag::square(ag::select_batch(a, pick))); }, {a}) < 1e-6);
    CHECK(gradcheck([&] { return ag::sum(ag::square(ag::pixel_shuffle(a, 2))); }, {a}) < 1e-6);
    CHECK(gradcheck([&] { return ag::sum(ag::square(ag::upsample_nearest2x(a))); }, {a}) < 1e-6);
    CHECK(gradcheck([&] { return ag::sum(ag::square(ag::from_tokens(ag::to_tokens(a), 2, 3, 3))); }, {a}) < 1e-6);
  }

  TEST_CASE("pixel_shuffle places channel blocks on the sub-pixel grid") {
    std::vector<double> v(4);
    for (int i = 0; i < 4; ++i) v[i] = i;
    const auto y = ag::pixel_shuffle(ag::Tensor::from({1, 4, 1, 1}, v), 2);
    CHECK(y.shape() == ag::Shape{1, 1, 2, 2});
    CHECK(y.values() == std::vector<double>{0, 1, 2, 3});
  }

  TEST_CASE("conv2d matches a direct loop and finite differences") {
    Rng rng(3);
    auto x = random_tensor({2, 3, 6, 5}, rng), w = random_tensor({4, 3, 3, 3}, rng), b = random_tensor({4}, rng);
    for (int stride : {1, 2}) {
      const auto y = ag::conv2d(x, w, b, stride, 1);
      const int ho = (6 + 2 - 3) / stride + 1, wo = (5 + 2 - 3) / stride + 1;
      REQUIRE(y.shape() == ag::Shape{2, 4, ho, wo});
      double worst = 0.0;
      for (int n = 0; n < 2; ++n)
        for (int o = 0; o < 4; ++o)
          for (int i = 0; i < ho; ++i)
            for (int j = 0; j < wo; ++j) {
              double s = b.data()[o];
              for (int c = 0; c < 3; ++c)
                for (int ki = 0; ki < 3; ++ki)
                  for (int kj = 0; kj < 3; ++kj) {
                    const int r = i * stride + ki - 1, q = j * stride + kj - 1;
                    if (r < 0 || r >= 6 || q < 0 || q >= 5) continue;
                    s += w.data()[((o * 3 + c) * 3 + ki) * 3 + kj] * x.data()[((n * 3 + c) * 6 + r) * 5 + q];
                  }
              worst = std::max(worst, std::abs(s - y.data()[((n * 4 + o) * ho + i) * wo + j]));
            }
      CHECK(worst < 1e-12);
      CHECK(gradcheck([&] { return ag::sum(ag::square(ag::conv2d(x, w, b, stride, 1))); }, {x, w, b}) < 1e-5);
    }
  }

  TEST_CASE("matmul, group_norm and attention match finite differences") {
    Rng rng(4);
    auto a = random_tensor({5, 3}, rng), b = random_tensor({3, 4}, rng);
    CHECK(gradcheck([&] { return ag::sum(ag::square(ag::matmul(a, b))); }, {a, b}) < 1e-6);

    auto x = random_tensor({2, 4, 3, 3}, rng), g = random_tensor({4}, rng), be = random_tensor({4}, rng);
    auto wgt = random_tensor({2, 4, 3, 3}, rng, 1.0, false);
    CHECK(gradcheck([&] { return ag::sum(ag::mul(ag::group_norm(x, g, be, 2), wgt)); }, {x, g, be}) < 1e-5);

    auto q = random_tensor({6, 8}, rng), k = random_tensor({6, 8}, rng), v = random_tensor({6, 8}, rng);
    auto wa = random_tensor({6, 8}, rng, 1.0, false);
    CHECK(gradcheck([&] { return ag::sum(ag::mul(ag::attention(q, k, v, 2), wa)); }, {q, k, v}) < 1e-5);
  }

  TEST_CASE("group_norm output has zero mean and unit variance per group") {
    Rng rng(5);
    auto x = random_tensor({1, 4, 5, 5}, rng, 3.0, false);
    const auto y = ag::group_norm(x, ag::Tensor::full({4}, 1.0), ag::Tensor::zeros({4}), 2);
    for (int grp = 0; grp < 2; ++grp) {
      double s = 0, s2 = 0;
      for (int i = 0; i < 50; ++i) {
        const double v = y.data()[grp * 50 + i];
        s += v;
        s2 += v * v;
      }
      CHECK(s / 50 == doctest::Approx(0.0).epsilon(1e-9));
      CHECK(s2 / 50 == doctest::Approx(1.0).epsilon(1e-3));
    }
  }

  TEST_CASE("attention rows are convex combinations of values") {
    Rng rng(6);
    auto q = random_tensor({4, 2}, rng, 1.0, false), k = random_tensor({4, 2}, rng, 1.0, false);
    const auto v = ag::Tensor::full({4, 2}, 0.7);
    const auto y = ag::attention(q, k, v, 1);
    for (double x : y.values()) CHECK(x == doctest::Approx(0.7));
  }

  TEST_CASE("no-grad guard records no history") {
    Rng rng(7);
    auto a = random_tensor({3}, rng);
    {
      ag::NoGradGuard g;
      CHECK_FALSE(ag::grad_enabled());
      CHECK_FALSE(ag::square(a).requires_grad());
    }
    CHECK(ag::grad_enabled());
    CHECK(ag::square(a).requires_grad());
  }

  TEST_CASE("gradients accumulate across backward calls") {
    auto a = ag::Tensor::from({2}, {1.0, 2.0}, true);
    ag::sum(ag::square(a)).backward();
    ag::sum(ag::square(a)).backward();
    CHECK(a.grad()[0] == doctest::Approx(4.0));
    CHECK(a.grad()[1] == doctest::Approx(8.0));
  }

  TEST_CASE("shape mismatches throw") {
    CHECK_THROWS_AS(ag::add(ag::Tensor::zeros({2}), ag::Tensor::zeros({3})), std::invalid_argument);
    CHECK_THROWS_AS(ag::matmul(ag::Tensor::zeros({2, 3}), ag::Tensor::zeros({2, 3})), std::invalid_argument);
  }

  TEST_CASE("low-rank adapter starts as the identity delta and trains") {
    Rng rng(8);
    const auto conv = nn::Conv2d::make(3, 4, 3, 1, 1, rng);
    const auto lora = nn::LowRankAdapter::make(conv, 2, 2.0, rng);
    auto x = random_tensor({1, 3, 5, 5}, rng, 1.0, false);
    CHECK(lora.apply(conv, x).values() == conv(x).values());
    ag::sum(ag::square(lora.apply(conv, x))).backward();
    CHECK(lora.up.has_grad());
    CHECK_THROWS_AS(nn::LowRankAdapter::make(conv, 5, 1.0, rng), std::invalid_argument);
  }

  TEST_CASE("Adam clips the global gradient norm") {
    auto p = ag::Tensor::from({2}, {0.0, 0.0}, true);
    nn::ParamSet ps;
    ps.add("p", p);
    nn::Adam opt(ps, {.lr = 0.1, .clip_norm = 1.0});
    ag::sum(ag::mul(p, ag::Tensor::from({2}, {30.0, 40.0}))).backward();
    CHECK(opt.step() == doctest::Approx(50.0));
    // First Adam step moves each coordinate by lr regardless of magnitude.
    CHECK(p.data()[0] == doctest::Approx(-0.1).epsilon(1e-6));
    CHECK(p.data()[1] == doctest::Approx(-0.1).epsilon(1e-6));
  }
}
