#pragma once

#include <string>

#include "apd/feature_map.hpp"

namespace apd {

/// 8-bit PNG I/O. Images load as 3 x HW maps in [0,1]; labels as 1 x HW
/// maps binarized at 128.
FeatureMap read_image_png(const std::string& path);
LabelMap read_label_png(const std::string& path);

/// Values are clamped to [0,1] and quantized to 8 bits.
void write_image_png(const std::string& path, const FeatureMap& img);
void write_gray_png(const std::string& path, const LabelMap& map);

/// Binary mask as 0/255.
void write_mask_png(const std::string& path, const LabelMap& mask);

}  // namespace apd
