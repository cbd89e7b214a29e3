#pragma once

// Metric reports: CSV rows, bucket tables and static SVG plots.
//
// CSV schema (fixed column order):
//   scene,view,timestamp,method,psnr,ssim,perceptual_proxy
// Numbers use fixed 6-decimal formatting; identical-image PSNR is "inf".

#include <filesystem>
#include <string>
#include <vector>

#include "mve/metrics.hpp"

namespace mve {

enum class ReportFormat { Csv, Table, Plot };

/// "csv" | "table" | "plot"; anything else is rejected.
ReportFormat parse_report_format(const std::string& name);

inline constexpr const char* kMetricsCsvHeader = "scene,view,timestamp,method,psnr,ssim,perceptual_proxy";

std::string metrics_csv(const std::vector<MetricRow>& rows);
/// Methods as rows, time buckets as columns, each cell "psnr / ssim / perceptual".
std::string bucket_table(const std::vector<MetricRow>& rows, int n_buckets, double horizon);
/// Three panels (PSNR, SSIM, perceptual proxy) of bucket means per method.
std::string bucket_plot_svg(const std::vector<MetricRow>& rows, int n_buckets, double horizon);

struct ReportOptions {
  int n_buckets = 5;
  double horizon = 1.0;
};

/// Write one report file in the requested format.
void write_report(const std::vector<MetricRow>& rows, ReportFormat format, const std::filesystem::path& path,
                  const ReportOptions& opts = {});

}  // namespace mve
