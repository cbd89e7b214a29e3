#include "mve/losses.hpp"
#include "mve/metrics.hpp"
#include "support.hpp"

using namespace mve;
using mve::test::gradcheck;
using mve::test::random_tensor;

namespace {

ag::Tensor uniform_image(int n, int h, int w, double v) { return ag::Tensor::full({n, 3, h, w}, v); }

Image constant(int w, int h, double v) {
  Image im(w, h, 3);
  std::fill(im.data.begin(), im.data.end(), v);
  return im;
}

Image noise_image(int w, int h, Rng& rng) {
  Image im(w, h, 3);
  for (auto& x : im.data) x = rng.uniform();
  return im;
}

}  // namespace

TEST_SUITE("losses") {
  TEST_CASE("ssim window is a normalized gaussian") {
    const auto win = ssim_window();
    double sum = 0.0;
    for (double v : win) sum += v;
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    const double ratio = win[5 * kSsimWindow + 6] / win[5 * kSsimWindow + 5];
    CHECK(ratio == doctest::Approx(std::exp(-1.0 / (2 * kSsimSigma * kSsimSigma))).epsilon(1e-12));
  }

  TEST_CASE("ssim of constant images matches the closed form") {
    for (auto [a, b] : {std::pair{0.2, 0.7}, std::pair{0.5, 0.5}, std::pair{0.0, 1.0}}) {
      const double expected = (2 * a * b + kSsimC1) / (a * a + b * b + kSsimC1);
      CHECK(ssim(uniform_image(1, 16, 16, a), uniform_image(1, 16, 16, b)).item() == doctest::Approx(expected).epsilon(1e-12));
    }
  }

  TEST_CASE("ssim map has the valid-window shape") {
    Rng rng(1);
    const auto a = random_tensor({2, 1, 20, 17}, rng, 1.0, false);
    CHECK(ssim_map(a, a).shape() == ag::Shape{2, 1, 10, 7});
  }

  TEST_CASE("grayscale uses luma weights") {
    std::vector<double> v{1.0, 0.0, 0.0, 1.0};
    const auto g = to_gray(ag::Tensor::from({1, 3, 1, 1}, {0.2, 0.4, 0.6}));
    CHECK(g.item() == doctest::Approx(0.299 * 0.2 + 0.587 * 0.4 + 0.114 * 0.6));
  }

  TEST_CASE("perceptual distance is zero on identical inputs and symmetric") {
    Rng rng(2);
    const auto a = random_tensor({1, 3, 16, 16}, rng, 0.3, false), b = random_tensor({1, 3, 16, 16}, rng, 0.3, false);
    const auto& p = PerceptualProxy::standard();
    CHECK(p.distance(a, a).item() == 0.0);
    CHECK(p.distance(a, b).item() == doctest::Approx(p.distance(b, a).item()).epsilon(1e-12));
    CHECK(p.distance(a, b).item() > 0.0);
  }

  TEST_CASE("latent loss is the mean squared difference") {
    const auto a = ag::Tensor::from({1, 2, 1, 1}, {1.0, 3.0}), b = ag::Tensor::from({1, 2, 1, 1}, {0.0, 1.0});
    CHECK(latent_loss(a, b).item() == doctest::Approx((1.0 + 4.0) / 2));
  }

  TEST_CASE("pixel loss total combines the three terms") {
    Rng rng(3);
    const auto a = random_tensor({2, 3, 16, 16}, rng, 0.3, false), b = random_tensor({2, 3, 16, 16}, rng, 0.3, false);
    const auto t = pixel_loss_terms(a, b);
    CHECK(t.total.item() == doctest::Approx((t.mse.item() + 1.0 - t.ssim.item() + t.perceptual.item()) / 3).epsilon(1e-12));
    CHECK(pixel_loss(a, a).item() == doctest::Approx(0.0).epsilon(1e-12));
  }

  TEST_CASE("pixel loss of a batch is the mean of per-image losses") {
    Rng rng(4);
    const auto a = random_tensor({2, 3, 12, 12}, rng, 0.3, false), b = random_tensor({2, 3, 12, 12}, rng, 0.3, false);
    const double l0 = pixel_loss(ag::select_batch(a, std::vector<int>{0}), ag::select_batch(b, std::vector<int>{0})).item();
    const double l1 = pixel_loss(ag::select_batch(a, std::vector<int>{1}), ag::select_batch(b, std::vector<int>{1})).item();
    CHECK(pixel_loss(a, b).item() == doctest::Approx((l0 + l1) / 2).epsilon(1e-10));
  }

  TEST_CASE("ssim and pixel loss gradients match finite differences") {
    Rng rng(5);
    auto a = random_tensor({1, 3, 12, 12}, rng, 0.3);
    const auto b = random_tensor({1, 3, 12, 12}, rng, 0.3, false);
    CHECK(gradcheck([&] { return ssim(a, b); }, {a}) < 1e-4);
    CHECK(gradcheck([&] { return pixel_loss(a, b); }, {a}) < 1e-4);
  }
}

TEST_SUITE("metrics") {
  TEST_CASE("psnr of a uniform offset") {
    for (double d : {0.01, 0.1, 0.3}) {
      const double expected = 10.0 * std::log10(1.0 / (d * d));
      CHECK(psnr(constant(8, 8, 0.5), constant(8, 8, 0.5 + d)) == doctest::Approx(expected).epsilon(1e-9));
    }
  }

  TEST_CASE("identical images give infinite psnr and unit ssim") {
    Rng rng(6);
    const Image a = noise_image(16, 16, rng);
    CHECK(std::isinf(psnr(a, a)));
    CHECK(psnr(a, a) == kPsnrIdentical);
    CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(perceptual_distance(a, a) == 0.0);
  }

  TEST_CASE("metrics reject mismatched dimensions") {
    CHECK_THROWS(psnr(constant(8, 8, 0.1), constant(16, 8, 0.1)));
    CHECK_THROWS(ssim(constant(16, 16, 0.1), constant(16, 12, 0.1)));
  }

  TEST_CASE("psnr decreases as noise grows") {
    Rng rng(7);
    const Image a = constant(16, 16, 0.5);
    double prev = kPsnrIdentical;
    for (double s : {0.01, 0.05, 0.2}) {
      Image b = a;
      Rng r2(8);
      for (auto& x : b.data) x += s * (r2.uniform() - 0.5);
      const double p = psnr(a, b);
      CHECK(p < prev);
      prev = p;
    }
  }

  TEST_CASE("bucket index covers the horizon") {
    CHECK(bucket_index(0.0, 4, 1.0) == 1);
    CHECK(bucket_index(0.24, 4, 1.0) == 1);
    CHECK(bucket_index(0.25, 4, 1.0) == 2);
    CHECK(bucket_index(1.0, 4, 1.0) == 4);
    CHECK_THROWS(bucket_index(1.5, 4, 1.0));
    CHECK_THROWS(bucket_index(0.5, 0, 1.0));
  }

  TEST_CASE("bucket means match direct averages") {
    Rng rng(9);
    std::vector<MetricRow> rows;
    for (int i = 0; i < 20; ++i)
      rows.push_back({"s", i, i / 20.0, i % 2 ? "a" : "b", 20 + rng.uniform(), rng.uniform(), rng.uniform()});
    const auto stats = bucket_by_time(rows, 2, 1.0);
    REQUIRE(stats.size() == 2);
    for (const auto& [method, buckets] : stats)
      for (const auto& b : buckets) {
        double sum = 0.0;
        int n = 0;
        for (const auto& r : rows)
          if (r.method == method && bucket_index(r.timestamp, 2, 1.0) == b.bucket) {
            sum += r.psnr;
            ++n;
          }
        CHECK(b.count == n);
        CHECK(b.psnr == doctest::Approx(sum / n).epsilon(1e-12));
      }
  }

  TEST_CASE("empty buckets are absent") {
    const std::vector<MetricRow> rows{{"s", 0, 0.1, "m", 20, 0.5, 0.1}, {"s", 1, 0.9, "m", 22, 0.6, 0.2}};
    const auto stats = bucket_by_time(rows, 5, 1.0).at("m");
    REQUIRE(stats.size() == 2);
    CHECK(stats[0].bucket == 1);
    CHECK(stats[1].bucket == 5);
  }
}
