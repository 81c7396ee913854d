#pragma once

#include <array>
#include <string>
#include <vector>

#include "apd/model.hpp"

namespace apd {

/// Piecewise-linear viridis-style mapping of v in [0,1] to RGB in [0,1].
std::array<double, 3> colormap(double v);

/// Scalar map to a color-mapped 3-channel image.
FeatureMap colorize(const LabelMap& map);

/// Channel-mean absolute difference, rescaled to [0,1] (all-zero map stays
/// zero).
LabelMap difference_heat(const Matrix& diff, int h, int w);

struct VisualizationFiles {
  std::vector<std::string> mask_paths;
  std::vector<std::string> diff_paths;
  std::string fused_path;
};

/// Writes per-stage coarse masks and difference heatmaps plus the fused
/// probability map: 2N+1 files under out_dir.
VisualizationFiles write_visualizations(ApdModel& model, const FeatureMap& x0,
                                        const FeatureMap& x1,
                                        const std::string& out_dir);

}  // namespace apd
