#include <fstream>
#include <sstream>

#include "mve/error.hpp"
#include "mve/report.hpp"
#include "support.hpp"

using namespace mve;

namespace {

std::vector<MetricRow> sample_rows() {
  return {{"scene-1", 0, 0.0, "distorted", 20.5, 0.7, 0.12},
          {"scene-1", 0, 0.0, "enhanced", kPsnrIdentical, 1.0, 0.0},
          {"scene-1", 1, 0.5, "distorted", 18.25, 0.6, 0.2},
          {"scene-1", 1, 0.5, "enhanced", 23.0, 0.8, 0.05}};
}

std::vector<std::string> lines(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

}  // namespace

TEST_SUITE("report") {
  TEST_CASE("csv has the fixed header and one line per row") {
    const auto l = lines(metrics_csv(sample_rows()));
    REQUIRE(l.size() == 5);
    CHECK(l[0] == kMetricsCsvHeader);
    CHECK(l[1] == "scene-1,0,0.000000,distorted,20.500000,0.700000,0.120000");
    CHECK(l[2] == "scene-1,0,0.000000,enhanced,inf,1.000000,0.000000");
  }

  TEST_CASE("format names parse and unknown names are rejected") {
    CHECK(parse_report_format("csv") == ReportFormat::Csv);
    CHECK(parse_report_format("table") == ReportFormat::Table);
    CHECK(parse_report_format("plot") == ReportFormat::Plot);
    CHECK_THROWS(parse_report_format("xlsx"));
  }

  TEST_CASE("table lists each method") {
    const std::string t = bucket_table(sample_rows(), 2, 1.0);
    CHECK(t.find("distorted") != std::string::npos);
    CHECK(t.find("enhanced") != std::string::npos);
  }

  TEST_CASE("plot is an svg document with three panels") {
    const std::string svg = bucket_plot_svg(sample_rows(), 2, 1.0);
    CHECK(svg.rfind("<svg", 0) == 0);
    CHECK(svg.find("</svg>") != std::string::npos);
    CHECK(svg.find("PSNR") != std::string::npos);
    CHECK(svg.find("SSIM") != std::string::npos);
  }

  TEST_CASE("reports are deterministic and written to disk") {
    const auto dir = test::scratch_dir("report");
    for (auto f : {ReportFormat::Csv, ReportFormat::Table, ReportFormat::Plot}) {
      write_report(sample_rows(), f, dir / "a", {2, 1.0});
      write_report(sample_rows(), f, dir / "b", {2, 1.0});
      std::ifstream a(dir / "a"), b(dir / "b");
      std::stringstream sa, sb;
      sa << a.rdbuf();
      sb << b.rdbuf();
      CHECK(!sa.str().empty());
      CHECK(sa.str() == sb.str());
    }
  }
}
