#pragma once

#include <string>
#include <vector>

#include "apd/feature_map.hpp"
#include "apd/rng.hpp"

namespace apd {

/// Bitemporal pair with change label. All three maps are congruent.
struct Sample {
  FeatureMap x0, x1;  // 3 x HW, values in [0,1]
  LabelMap y;         // binary
  std::string id;
};

struct PlacementRecord {
  std::string kind;   // "rect" | "ellipse"
  bool inserted = true;  // otherwise removed from X1
  int u = 0, v = 0, h = 0, w = 0;
  long area = 0;         // exact pixel count of the change region
};

struct SynthSpec {
  int size = 64;
  int object_count_min = 3;
  int object_count_max = 6;
  int change_count = 2;
  double nuisance_strength = 0.1;   // global photometric shift on X1
  double texture_noise = 0.03;
  std::uint64_t seed = 0;
};

struct AugPolicy {
  double flip_prob = 0.5;
  int crop_size = 0;  // 0 = full size
  double brightness = 0.1;
  double contrast = 0.1;
  double saturation = 0.1;
  /// photometric draws are independent per temporal image by default,
  /// which injects pseudo-change on purpose; paired mode shares one draw
  bool paired_photometric = false;
};

struct SynthResult {
  Sample sample;
  std::vector<PlacementRecord> placements;  // change objects only
};

/// Deterministic in spec.seed. X0 is textured background plus base objects;
/// X1 differs by `change_count` inserted/removed objects (these define Y)
/// plus a global photometric nuisance on X1 only.
SynthResult synth_generate(const SynthSpec& spec);

/// Row-major non-overlapping grid of patch x patch tiles.
std::vector<Sample> tile(const Sample& sample, int patch);

/// Inverse of `tile` for a grid of rows x cols tiles.
Sample untile(const std::vector<Sample>& tiles, int rows, int cols);

/// Geometric transforms applied congruently to X0, X1, Y; photometric
/// distortion applied to the images only.
Sample augment(const Sample& sample, const AugPolicy& policy, Rng& rng);

/// Layout: root/{A,B,label}/<id>.png, root/list/<split>.txt.
std::vector<Sample> load_dataset(const std::string& root,
                                 const std::string& split);

/// Writes the dataset in the standard layout plus manifest.json with
/// per-sample placement records.
void write_dataset(const std::string& root, const std::string& split,
                   const std::vector<SynthResult>& samples, bool append_manifest);

}  // namespace apd
