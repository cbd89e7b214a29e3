#include "mve/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "mve/codec.hpp"
#include "mve/error.hpp"
#include "mve/losses.hpp"

namespace mve {

namespace {

void check_dims(const Image& a, const Image& b, const char* what) {
  if (!a.same_dims(b)) throw std::invalid_argument(std::string(what) + ": image dimensions differ");
}

}  // namespace

double mse(const Image& a, const Image& b) {
  check_dims(a, b, "mse");
  if (a.data.empty()) throw std::invalid_argument("mse: empty image");
  double s = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    s += d * d;
  }
  return s / static_cast<double>(a.data.size());
}

double psnr(const Image& a, const Image& b) {
  const double m = mse(a, b);
  if (m < 1e-12) return kPsnrIdentical;
  return 10.0 * std::log10(1.0 / m);
}

double ssim(const Image& a, const Image& b) {
  check_dims(a, b, "ssim");
  if (a.channels != 3) throw std::invalid_argument("ssim: expected RGB images");
  ag::NoGradGuard guard;
  return mve::ssim(image_to_tensor(a), image_to_tensor(b)).item();
}

double perceptual_distance(const Image& a, const Image& b) {
  check_dims(a, b, "perceptual");
  if (a.channels != 3) throw std::invalid_argument("perceptual: expected RGB images");
  ag::NoGradGuard guard;
  return PerceptualProxy::standard().distance(image_to_tensor(a), image_to_tensor(b)).item();
}

MetricRow measure(const Image& pred, const Image& gt, std::string scene, int view, double timestamp,
                  std::string method) {
  return {std::move(scene), view, timestamp, std::move(method), psnr(pred, gt), ssim(pred, gt),
          perceptual_distance(pred, gt)};
}

int bucket_index(double t, int n_buckets, double horizon) {
  if (n_buckets < 1) throw std::invalid_argument("bucket_by_time: n_buckets must be >= 1");
  if (!(horizon > 0.0)) throw std::invalid_argument("bucket_by_time: horizon must be positive");
  if (!(t >= 0.0 && t <= horizon))
    throw DataError("bucket_by_time: timestamp " + std::to_string(t) + " outside [0, " + std::to_string(horizon) + "]");
  const int b = static_cast<int>(std::floor(t / horizon * n_buckets));
  return std::min(b, n_buckets - 1) + 1;
}

namespace {

// Order-independent mean over sorted values.
double sorted_mean(std::vector<double>& v) {
  std::sort(v.begin(), v.end());
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

struct Samples {
  std::vector<double> psnr, ssim, perceptual;
};

}  // namespace

std::map<std::string, std::vector<BucketStats>> bucket_by_time(const std::vector<MetricRow>& rows, int n_buckets,
                                                               double horizon) {
  std::map<std::string, std::map<int, Samples>> acc;
  for (const auto& r : rows) {
    Samples& s = acc[r.method][bucket_index(r.timestamp, n_buckets, horizon)];
    s.psnr.push_back(r.psnr);
    s.ssim.push_back(r.ssim);
    s.perceptual.push_back(r.perceptual);
  }
  std::map<std::string, std::vector<BucketStats>> out;
  for (auto& [method, buckets] : acc)
    for (auto& [b, s] : buckets) {
      BucketStats st;
      st.bucket = b;
      st.t_begin = horizon * (b - 1) / n_buckets;
      st.t_end = horizon * b / n_buckets;
      st.count = static_cast<int>(s.psnr.size());
      st.psnr = sorted_mean(s.psnr);
      st.ssim = sorted_mean(s.ssim);
      st.perceptual = sorted_mean(s.perceptual);
      out[method].push_back(st);
    }
  return out;
}

}  // namespace mve
