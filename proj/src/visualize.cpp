#include "apd/visualize.hpp"

#include <filesystem>

#include "apd/image_io.hpp"
#include "apd/trainer.hpp"

namespace fs = std::filesystem;

namespace apd {

std::array<double, 3> colormap(double v) {
  // control points roughly following viridis
  static constexpr std::array<std::array<double, 3>, 5> kStops = {{
      {0.267, 0.005, 0.329},
      {0.229, 0.322, 0.546},
      {0.128, 0.567, 0.551},
      {0.369, 0.789, 0.383},
      {0.993, 0.906, 0.144},
  }};
  v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
  const double pos = v * (kStops.size() - 1);
  const int lo = static_cast<int>(pos) >= 4 ? 3 : static_cast<int>(pos);
  const double t = pos - lo;
  std::array<double, 3> out{};
  for (int c = 0; c < 3; ++c)
    out[c] = (1.0 - t) * kStops[lo][c] + t * kStops[lo + 1][c];
  return out;
}

FeatureMap colorize(const LabelMap& map) {
  FeatureMap img(3, map.height, map.width);
  for (int p = 0; p < map.pixels(); ++p) {
    const auto rgb = colormap(map.data(p));
    for (int c = 0; c < 3; ++c) img.data(c, p) = rgb[c];
  }
  return img;
}

LabelMap difference_heat(const Matrix& diff, int h, int w) {
  LabelMap heat(h, w);
  heat.data = diff.cwiseAbs().colwise().mean();
  const double peak = heat.data.maxCoeff();
  if (peak > 0.0) heat.data /= peak;
  return heat;
}

VisualizationFiles write_visualizations(ApdModel& model, const FeatureMap& x0,
                                        const FeatureMap& x1,
                                        const std::string& out_dir) {
  fs::create_directories(out_dir);
  ad::Tape tape(&model.op_cache());
  const ForwardOutput out = infer_forward(model, tape, x0, x1);

  VisualizationFiles files;
  for (std::size_t l = 0; l < out.stages.size(); ++l) {
    const StageOutput& so = out.stages[l];
    LabelMap mask(so.h, so.w);
    mask.data = tape.value(so.mask).row(0);
    const std::string mp =
        (fs::path(out_dir) / ("mask_stage" + std::to_string(l + 1) + ".png"))
            .string();
    write_image_png(mp, colorize(mask));
    files.mask_paths.push_back(mp);

    const LabelMap heat = difference_heat(tape.value(so.diff), so.h, so.w);
    const std::string dp =
        (fs::path(out_dir) / ("diff_stage" + std::to_string(l + 1) + ".png"))
            .string();
    write_image_png(dp, colorize(heat));
    files.diff_paths.push_back(dp);
  }

  LabelMap prob(x0.height, x0.width);
  prob.data = tape.value(out.prob).row(0);
  files.fused_path = (fs::path(out_dir) / "fused_probability.png").string();
  write_image_png(files.fused_path, colorize(prob));
  return files;
}

}  // namespace apd
