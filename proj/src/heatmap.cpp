#include "eofnet/heatmap.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include <fmt/format.h>

#include "eofnet/errors.hpp"

namespace eofnet {

namespace {

// Viridis sampled at nine evenly spaced stops.
constexpr std::array<std::array<double, 3>, 9> kStops = {{
    {68, 1, 84},
    {71, 44, 122},
    {59, 81, 139},
    {44, 113, 142},
    {33, 144, 141},
    {39, 173, 129},
    {92, 200, 99},
    {170, 220, 50},
    {253, 231, 37},
}};

std::string escape(const std::string& s) {
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

std::vector<double> distinct_sorted(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

std::size_t position(const std::vector<double>& sorted, double v) {
  return static_cast<std::size_t>(std::lower_bound(sorted.begin(), sorted.end(), v) - sorted.begin());
}

}  // namespace

std::array<unsigned char, 3> colormap(double t) {
  if (!(t >= 0.0)) t = 0.0;
  if (t > 1.0) t = 1.0;
  const double pos = t * static_cast<double>(kStops.size() - 1);
  const std::size_t i = std::min(static_cast<std::size_t>(pos), kStops.size() - 2);
  const double f = pos - static_cast<double>(i);
  std::array<unsigned char, 3> rgb{};
  for (std::size_t c = 0; c < 3; ++c)
    rgb[c] = static_cast<unsigned char>(std::lround(kStops[i][c] + f * (kStops[i + 1][c] - kStops[i][c])));
  return rgb;
}

std::string render_heatmap_svg(const HeatmapData& data, const std::string& title, const std::string& x_label,
                               const std::string& y_label) {
  if (data.x.size() != data.y.size() || data.x.size() != data.value.size())
    throw ShapeError("heatmap x, y and value lengths differ");
  if (data.x.empty()) throw PreconditionError("heatmap has no points");
  const auto xs = distinct_sorted(data.x);
  const auto ys = distinct_sorted(data.y);
  const std::size_t nx = xs.size(), ny = ys.size();
  std::vector<double> grid(nx * ny, std::numeric_limits<double>::quiet_NaN());
  for (std::size_t i = 0; i < data.x.size(); ++i)
    grid[position(ys, data.y[i]) * nx + position(xs, data.x[i])] = data.value[i];

  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (double v : grid)
    if (std::isfinite(v)) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  const bool any = std::isfinite(lo);

  // Cells scaled so the longer side spans about 480 px.
  const double cell = std::max(1.0, std::floor(480.0 / static_cast<double>(std::max(nx, ny))));
  const double plot_w = cell * static_cast<double>(nx), plot_h = cell * static_cast<double>(ny);
  const double left = 60, top = 40, bar_w = 18, gap = 24;
  const double width = left + plot_w + gap + bar_w + 90, height = top + plot_h + 50;

  std::string svg;
  svg += fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0}\" height=\"{1}\" viewBox=\"0 0 {0} {1}\" "
      "shape-rendering=\"crispEdges\" font-family=\"sans-serif\" font-size=\"12\">\n",
      width, height);
  svg += fmt::format("<rect width=\"{}\" height=\"{}\" fill=\"white\"/>\n", width, height);
  svg += fmt::format("<text x=\"{}\" y=\"22\" font-size=\"14\">{}</text>\n", left, escape(title));
  for (std::size_t iy = 0; iy < ny; ++iy) {
    for (std::size_t ix = 0; ix < nx; ++ix) {
      const double v = grid[iy * nx + ix];
      std::string fill = "#bbbbbb";
      if (std::isfinite(v)) {
        const auto c = colormap(hi > lo ? (v - lo) / (hi - lo) : 0.5);
        fill = fmt::format("#{:02x}{:02x}{:02x}", c[0], c[1], c[2]);
      }
      // y grows upward.
      svg += fmt::format("<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{}\"/>\n",
                         left + cell * static_cast<double>(ix), top + cell * static_cast<double>(ny - 1 - iy), cell,
                         cell, fill);
    }
  }
  svg += fmt::format("<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>\n", left, top,
                     plot_w, plot_h);

  const double bar_x = left + plot_w + gap;
  constexpr int kBarSteps = 64;
  for (int i = 0; i < kBarSteps; ++i) {
    const auto c = colormap((i + 0.5) / kBarSteps);
    const double y0 = top + plot_h * (1.0 - static_cast<double>(i + 1) / kBarSteps);
    svg += fmt::format("<rect x=\"{}\" y=\"{:.3f}\" width=\"{}\" height=\"{:.3f}\" fill=\"#{:02x}{:02x}{:02x}\"/>\n",
                       bar_x, y0, bar_w, plot_h / kBarSteps + 0.01, c[0], c[1], c[2]);
  }
  const std::string max_text = any ? fmt::format("max {:.6g}", hi) : std::string("max n/a");
  const std::string min_text = any ? fmt::format("min {:.6g}", lo) : std::string("min n/a");
  svg += fmt::format("<text x=\"{}\" y=\"{}\">{}</text>\n", bar_x + bar_w + 6, top + 10, max_text);
  svg += fmt::format("<text x=\"{}\" y=\"{}\">{}</text>\n", bar_x + bar_w + 6, top + plot_h, min_text);

  svg += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n", left + plot_w / 2,
                     top + plot_h + 20, escape(fmt::format("{} [{:.6g}, {:.6g}]", x_label, xs.front(), xs.back())));
  svg += fmt::format("<text x=\"16\" y=\"{0}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {0})\">{1}</text>\n",
                     top + plot_h / 2, escape(fmt::format("{} [{:.6g}, {:.6g}]", y_label, ys.front(), ys.back())));
  svg += "</svg>\n";
  return svg;
}

void write_heatmap_svg(const HeatmapData& data, const std::string& title, const std::string& x_label,
                       const std::string& y_label, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(fmt::format("cannot write {}", path.string()));
  out << render_heatmap_svg(data, title, x_label, y_label);
}

}  // namespace eofnet
