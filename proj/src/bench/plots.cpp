#include "encdp/bench/plots.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "encdp/error.hpp"

namespace encdp::bench {
namespace {

constexpr double kWidth = 860;
constexpr double kHeight = 500;
constexpr double kLeft = 80;
constexpr double kRight = 250;  // legend column
constexpr double kTop = 50;
constexpr double kBottom = 60;

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

struct Series {
  std::string label;
  std::map<double, double> points;  // x value -> MB/s
};

struct Chart {
  std::string title;
  std::string x_label;
  bool log2_x = false;
  std::map<std::string, Series> series;  // ordered by label
  std::map<double, std::string> x_ticks;
};

// Nice upper bound for the y axis: 1, 2 or 5 times a power of ten.
double y_ceiling(double max) {
  if (max <= 0) return 1;
  const double p = std::pow(10.0, std::floor(std::log10(max)));
  for (double m : {1.0, 2.0, 5.0, 10.0}) {
    if (m * p >= max) return m * p;
  }
  return 10 * p;
}

std::string render(const Chart& chart) {
  double x_min = 1e300, x_max = -1e300, y_max = 0;
  for (const auto& [_, s] : chart.series) {
    for (const auto& [x, y] : s.points) {
      const double xv = chart.log2_x ? std::log2(x) : x;
      x_min = std::min(x_min, xv);
      x_max = std::max(x_max, xv);
      y_max = std::max(y_max, y);
    }
  }
  if (x_max <= x_min) {
    x_min -= 1;
    x_max += 1;
  }
  const double y_top = y_ceiling(y_max);
  const double plot_w = kWidth - kLeft - kRight;
  const double plot_h = kHeight - kTop - kBottom;
  const auto px = [&](double x) {
    const double xv = chart.log2_x ? std::log2(x) : x;
    return kLeft + (xv - x_min) / (x_max - x_min) * plot_w;
  };
  const auto py = [&](double y) { return kTop + plot_h - y / y_top * plot_h; };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
     << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << num(kLeft) << "\" y=\"28\" font-size=\"15\">" << escape(chart.title) << "</text>\n";

  os << "<g class=\"axes\" stroke=\"#333\">\n";
  os << "<line x1=\"" << num(kLeft) << "\" y1=\"" << num(kTop + plot_h) << "\" x2=\"" << num(kLeft + plot_w)
     << "\" y2=\"" << num(kTop + plot_h) << "\"/>\n";
  os << "<line x1=\"" << num(kLeft) << "\" y1=\"" << num(kTop) << "\" x2=\"" << num(kLeft) << "\" y2=\""
     << num(kTop + plot_h) << "\"/>\n";
  os << "</g>\n";

  for (int i = 0; i <= 5; ++i) {
    const double y = y_top * i / 5;
    os << "<line x1=\"" << num(kLeft) << "\" y1=\"" << num(py(y)) << "\" x2=\"" << num(kLeft + plot_w) << "\" y2=\""
       << num(py(y)) << "\" stroke=\"#ddd\"/>\n";
    os << "<text x=\"" << num(kLeft - 6) << "\" y=\"" << num(py(y) + 4) << "\" text-anchor=\"end\">" << num(y)
       << "</text>\n";
  }
  for (const auto& [x, label] : chart.x_ticks) {
    os << "<text x=\"" << num(px(x)) << "\" y=\"" << num(kTop + plot_h + 18) << "\" text-anchor=\"middle\">"
       << escape(label) << "</text>\n";
  }
  os << "<text x=\"" << num(kLeft + plot_w / 2) << "\" y=\"" << num(kHeight - 14) << "\" text-anchor=\"middle\">"
     << escape(chart.x_label) << "</text>\n";
  os << "<text transform=\"translate(18 " << num(kTop + plot_h / 2)
     << ") rotate(-90)\" text-anchor=\"middle\">throughput (MB/s, MB = 10^6 B)</text>\n";

  std::size_t index = 0;
  for (const auto& [label, s] : chart.series) {
    const char* color = kPalette[index % std::size(kPalette)];
    os << "<g class=\"series\" data-label=\"" << escape(label) << "\" stroke=\"" << color << "\" fill=\"" << color
       << "\">\n<polyline fill=\"none\" stroke-width=\"2\" points=\"";
    bool first = true;
    for (const auto& [x, y] : s.points) {
      os << (first ? "" : " ") << num(px(x)) << ',' << num(py(y));
      first = false;
    }
    os << "\"/>\n";
    for (const auto& [x, y] : s.points) {
      os << "<circle cx=\"" << num(px(x)) << "\" cy=\"" << num(py(y)) << "\" r=\"3\"/>\n";
    }
    const double ly = kTop + 10 + 18 * static_cast<double>(index);
    const double lx = kLeft + plot_w + 16;
    os << "<line x1=\"" << num(lx) << "\" y1=\"" << num(ly) << "\" x2=\"" << num(lx + 20) << "\" y2=\"" << num(ly)
       << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << num(lx + 26) << "\" y=\"" << num(ly + 4) << "\" stroke=\"none\">" << escape(label)
       << "</text>\n</g>\n";
    ++index;
  }
  os << "</svg>\n";
  return os.str();
}

std::string series_label(const BenchRecord& r) {
  std::string label(variant_name(r.variant));
  if (r.backend) label += " (" + std::string(backend_name(*r.backend)) + ")";
  return label;
}

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) raise(Errc::kInvalidArgument, "cannot write " + path.string());
  out << content;
  if (!out) raise(Errc::kInvalidArgument, "short write to " + path.string());
}

}  // namespace

std::string size_label(std::uint64_t bytes) {
  static constexpr const char* kUnits[] = {"", "K", "M", "G", "T"};
  std::size_t unit = 0;
  while (unit + 1 < std::size(kUnits) && bytes >= 1024 && bytes % 1024 == 0) {
    bytes /= 1024;
    ++unit;
  }
  return std::to_string(bytes) + kUnits[unit];
}

std::vector<std::filesystem::path> emit_plots(const std::vector<BenchRecord>& records,
                                              const std::filesystem::path& outdir) {
  std::map<std::pair<Workload, unsigned>, Chart> by_threads;
  std::map<std::pair<Workload, std::uint64_t>, Chart> by_size;
  for (const BenchRecord& r : records) {
    if (!r.ok()) continue;
    const std::string label = series_label(r);
    const std::string workload(workload_name(r.workload()));

    Chart& s = by_threads[{r.workload(), r.threads}];
    s.title = workload + ": throughput vs buffer size, " + std::to_string(r.threads) + " thread(s)";
    s.x_label = "buffer size (bytes, log2 scale)";
    s.log2_x = true;
    s.series[label].label = label;
    s.series[label].points[static_cast<double>(r.buffer_bytes)] = r.mean_mbps;
    s.x_ticks[static_cast<double>(r.buffer_bytes)] = size_label(r.buffer_bytes);

    Chart& t = by_size[{r.workload(), r.buffer_bytes}];
    t.title = workload + ": throughput vs threads, " + size_label(r.buffer_bytes) + "B buffers";
    t.x_label = "threads";
    t.series[label].label = label;
    t.series[label].points[r.threads] = r.mean_mbps;
    t.x_ticks[r.threads] = std::to_string(r.threads);
  }
  // Zero-sized buffers have no place on a log axis.
  for (auto& [_, chart] : by_threads) {
    for (auto& [__, s] : chart.series) s.points.erase(0.0);
    chart.x_ticks.erase(0.0);
  }

  std::filesystem::create_directories(outdir);
  std::vector<std::filesystem::path> written;
  for (const auto& [key, chart] : by_threads) {
    const auto path = outdir / (std::string(workload_name(key.first)) + "_threads" + std::to_string(key.second) +
                                "_vs_size.svg");
    write_file(path, render(chart));
    written.push_back(path);
  }
  for (const auto& [key, chart] : by_size) {
    const auto path = outdir / (std::string(workload_name(key.first)) + "_size" + std::to_string(key.second) +
                                "_vs_threads.svg");
    write_file(path, render(chart));
    written.push_back(path);
  }
  return written;
}

std::vector<std::filesystem::path> emit_plots(const std::filesystem::path& csv, const std::filesystem::path& outdir) {
  return emit_plots(read_csv_file(csv), outdir);
}

}  // namespace encdp::bench
