#include "mve/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "mve/error.hpp"

namespace mve {

namespace {

std::string num(double v, int decimals = 6) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

ReportFormat parse_report_format(const std::string& name) {
  if (name == "csv") return ReportFormat::Csv;
  if (name == "table") return ReportFormat::Table;
  if (name == "plot") return ReportFormat::Plot;
  throw ConfigError("unknown report format '" + name + "' (expected csv, table or plot)");
}

std::string metrics_csv(const std::vector<MetricRow>& rows) {
  std::string out = std::string(kMetricsCsvHeader) + "\n";
  for (const auto& r : rows)
    out += csv_field(r.scene) + "," + std::to_string(r.view) + "," + num(r.timestamp) + "," + csv_field(r.method) + "," +
           num(r.psnr) + "," + num(r.ssim) + "," + num(r.perceptual) + "\n";
  return out;
}

std::string bucket_table(const std::vector<MetricRow>& rows, int n_buckets, double horizon) {
  const auto agg = bucket_by_time(rows, n_buckets, horizon);
  std::ostringstream os;
  os << "cells: PSNR [dB] / SSIM / perceptual (proxy)\n";
  std::vector<std::vector<std::string>> grid;
  std::vector<std::string> header{"method"};
  for (int b = 1; b <= n_buckets; ++b)
    header.push_back("t" + std::to_string(b) + " [" + num(horizon * (b - 1) / n_buckets, 2) + "," +
                     num(horizon * b / n_buckets, 2) + ")");
  grid.push_back(header);
  for (const auto& [method, buckets] : agg) {
    std::vector<std::string> row{method};
    for (int b = 1; b <= n_buckets; ++b) {
      auto it = std::find_if(buckets.begin(), buckets.end(), [b](const BucketStats& s) { return s.bucket == b; });
      row.push_back(it == buckets.end() ? "-" : num(it->psnr, 2) + " / " + num(it->ssim, 4) + " / " + num(it->perceptual, 5));
    }
    grid.push_back(row);
  }
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& r : grid)
    for (std::size_t c = 0; c < r.size(); ++c) width[c] = std::max(width[c], r[c].size());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    for (std::size_t c = 0; c < grid[i].size(); ++c) {
      os << (c ? " | " : "") << grid[i][c] << std::string(width[c] - grid[i][c].size(), ' ');
    }
    os << "\n";
    if (i == 0) {
      for (std::size_t c = 0; c < width.size(); ++c) os << (c ? "-+-" : "") << std::string(width[c], '-');
      os << "\n";
    }
  }
  return os.str();
}

std::string bucket_plot_svg(const std::vector<MetricRow>& rows, int n_buckets, double horizon) {
  const auto agg = bucket_by_time(rows, n_buckets, horizon);
  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
  const int panel_w = 300, panel_h = 220, margin = 45;
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << 3 * panel_w << "\" height=\"" << panel_h + 40
     << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  const char* titles[] = {"PSNR [dB]", "SSIM", "perceptual (proxy)"};
  for (int panel = 0; panel < 3; ++panel) {
    auto value = [panel](const BucketStats& s) { return panel == 0 ? s.psnr : panel == 1 ? s.ssim : s.perceptual; };
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& [m, buckets] : agg)
      for (const auto& s : buckets)
        if (std::isfinite(value(s))) {
          lo = std::min(lo, value(s));
          hi = std::max(hi, value(s));
        }
    if (!std::isfinite(lo)) lo = 0.0, hi = 1.0;
    if (hi - lo < 1e-9) lo -= 0.5, hi += 0.5;
    const int x0 = panel * panel_w + margin, y0 = 20, w = panel_w - margin - 15, h = panel_h - 50;
    auto px = [&](int b) { return x0 + (n_buckets == 1 ? w / 2.0 : w * (b - 1) / double(n_buckets - 1)); };
    auto py = [&](double v) { return y0 + h - h * (v - lo) / (hi - lo); };
    os << "<text x=\"" << x0 + w / 2 << "\" y=\"14\" text-anchor=\"middle\">" << titles[panel] << "</text>\n";
    os << "<rect x=\"" << x0 << "\" y=\"" << y0 << "\" width=\"" << w << "\" height=\"" << h
       << "\" fill=\"none\" stroke=\"#444\"/>\n";
    os << "<text x=\"" << x0 - 4 << "\" y=\"" << y0 + 4 << "\" text-anchor=\"end\">" << num(hi, 3) << "</text>\n";
    os << "<text x=\"" << x0 - 4 << "\" y=\"" << y0 + h << "\" text-anchor=\"end\">" << num(lo, 3) << "</text>\n";
    for (int b = 1; b <= n_buckets; ++b)
      os << "<text x=\"" << num(px(b), 1) << "\" y=\"" << y0 + h + 14 << "\" text-anchor=\"middle\">" << b << "</text>\n";
    os << "<text x=\"" << x0 + w / 2 << "\" y=\"" << y0 + h + 28 << "\" text-anchor=\"middle\">time bucket</text>\n";
    int mi = 0;
    for (const auto& [method, buckets] : agg) {
      const char* color = kColors[mi % 6];
      std::string pts;
      for (const auto& s : buckets)
        if (std::isfinite(value(s))) pts += num(px(s.bucket), 1) + "," + num(py(value(s)), 1) + " ";
      if (!pts.empty())
        os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"" << pts << "\"/>\n";
      for (const auto& s : buckets)
        if (std::isfinite(value(s)))
          os << "<circle cx=\"" << num(px(s.bucket), 1) << "\" cy=\"" << num(py(value(s)), 1) << "\" r=\"3\" fill=\""
             << color << "\"/>\n";
      if (panel == 0)
        os << "<text x=\"" << x0 + 6 << "\" y=\"" << panel_h + 10 + 12 * mi << "\" fill=\"" << color << "\">" << method
           << "</text>\n";
      ++mi;
    }
  }
  os << "</svg>\n";
  return os.str();
}

void write_report(const std::vector<MetricRow>& rows, ReportFormat format, const std::filesystem::path& path,
                  const ReportOptions& opts) {
  std::string text;
  switch (format) {
    case ReportFormat::Csv:
      text = metrics_csv(rows);
      break;
    case ReportFormat::Table:
      text = bucket_table(rows, opts.n_buckets, opts.horizon);
      break;
    case ReportFormat::Plot:
      text = bucket_plot_svg(rows, opts.n_buckets, opts.horizon);
      break;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write report " + path.string());
  out << text;
}

}  // namespace mve
