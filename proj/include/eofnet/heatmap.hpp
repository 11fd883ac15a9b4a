#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

namespace eofnet {

/// Points (x[i], y[i], value[i]) drawn as cells of the lattice spanned by the
/// distinct x and y values. NaN values are drawn grey; duplicates keep the
/// last value.
struct HeatmapData {
  std::vector<double> x;
  std::vector<double> y;
  std::vector<double> value;
};

/// RGB of the fixed perceptual colormap at t in [0, 1].
std::array<unsigned char, 3> colormap(double t);

/// Standalone SVG with a color bar annotated with the data min and max.
/// Output depends only on the inputs.
std::string render_heatmap_svg(const HeatmapData& data, const std::string& title, const std::string& x_label,
                               const std::string& y_label);

void write_heatmap_svg(const HeatmapData& data, const std::string& title, const std::string& x_label,
                       const std::string& y_label, const std::filesystem::path& path);

}  // namespace eofnet
