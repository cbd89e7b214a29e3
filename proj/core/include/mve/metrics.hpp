#pragma once

// Image-quality metrics and temporal bucketing.

#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mve/image.hpp"

namespace mve {

/// PSNR value reported for identical images (MSE < 1e-12).
inline constexpr double kPsnrIdentical = std::numeric_limits<double>::infinity();

double mse(const Image& a, const Image& b);
/// 10 log10(1 / MSE) on [0,1] images; kPsnrIdentical when MSE < 1e-12.
double psnr(const Image& a, const Image& b);
/// Grayscale windowed SSIM (11x11 Gaussian, sigma 1.5), mean over valid windows.
double ssim(const Image& a, const Image& b);
/// Random-feature perceptual proxy distance.
double perceptual_distance(const Image& a, const Image& b);

struct MetricRow {
  std::string scene;
  int view = 0;
  double timestamp = 0.0;
  std::string method;
  double psnr = 0.0;
  double ssim = 0.0;
  double perceptual = 0.0;
  bool operator==(const MetricRow&) const = default;
};

MetricRow measure(const Image& pred, const Image& gt, std::string scene, int view, double timestamp,
                  std::string method);

struct BucketStats {
  int bucket = 0;  // 1-based
  double t_begin = 0.0;
  double t_end = 0.0;
  int count = 0;
  double psnr = 0.0;
  double ssim = 0.0;
  double perceptual = 0.0;
  bool operator==(const BucketStats&) const = default;
};

/// 1-based equal-width bucket of t in [0, horizon]; t == horizon falls in
/// the last bucket.
int bucket_index(double t, int n_buckets, double horizon);

/// Per-method, per-bucket means. Empty buckets are absent. Infinite PSNR
/// values make the bucket mean infinite.
std::map<std::string, std::vector<BucketStats>> bucket_by_time(const std::vector<MetricRow>& rows, int n_buckets,
                                                               double horizon);

}  // namespace mve
