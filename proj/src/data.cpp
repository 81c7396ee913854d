#include "apd/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <stdexcept>

#include "apd/image_io.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace apd {
namespace {

struct ObjectShape {
  std::string kind;
  int u, v, h, w;
};

long rasterize(const ObjectShape& o, const Vector& color, FeatureMap* target,
               std::vector<char>* occupancy, int size) {
  long area = 0;
  const double cy = o.u + (o.h - 1) / 2.0, cx = o.v + (o.w - 1) / 2.0;
  const double ry = o.h / 2.0, rx = o.w / 2.0;
  for (int y = o.u; y < o.u + o.h; ++y)
    for (int x = o.v; x < o.v + o.w; ++x) {
      if (o.kind == "ellipse") {
        const double dy = (y - cy) / ry, dx = (x - cx) / rx;
        if (dy * dy + dx * dx > 1.0) continue;
      }
      ++area;
      if (target) target->data.col(y * size + x) = color;
      if (occupancy) (*occupancy)[y * size + x] = 1;
    }
  return area;
}

bool overlaps(const ObjectShape& o, const std::vector<char>& occupancy,
              int size) {
  for (int y = o.u; y < o.u + o.h; ++y)
    for (int x = o.v; x < o.v + o.w; ++x)
      if (occupancy[y * size + x]) return true;
  return false;
}

void clamp01(FeatureMap& img) {
  img.data = img.data.cwiseMax(0.0).cwiseMin(1.0);
}

}  // namespace

SynthResult synth_generate(const SynthSpec& spec) {
  require(spec.size >= 16, "synth_generate: image too small");
  require(spec.change_count >= 0 && spec.nuisance_strength >= 0.0,
          "synth_generate: invalid spec");
  Rng rng(spec.seed);
  const int size = spec.size;

  // textured background: smooth sinusoidal shading plus per-pixel noise
  FeatureMap bg(3, size, size);
  for (int c = 0; c < 3; ++c) {
    const double base = rng.uniform(0.3, 0.55);
    const double ay = rng.uniform(0.02, 0.08), ax = rng.uniform(0.02, 0.08);
    const double fy = rng.uniform(0.5, 2.0), fx = rng.uniform(0.5, 2.0);
    const double py = rng.uniform(0.0, 6.28), px = rng.uniform(0.0, 6.28);
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x)
        bg.at(c, y, x) = base + ay * std::sin(6.28 * fy * y / size + py) +
                         ax * std::sin(6.28 * fx * x / size + px);
  }
  for (long i = 0; i < bg.data.size(); ++i)
    bg.data.data()[i] += rng.uniform(-spec.texture_noise, spec.texture_noise);
  clamp01(bg);

  SynthResult out;
  out.sample.x0 = bg;
  out.sample.x1 = bg;
  out.sample.y = LabelMap(size, size);

  std::vector<char> occupancy(static_cast<std::size_t>(size) * size, 0);
  auto place = [&](const char* what) {
    for (int attempt = 0; attempt < 100; ++attempt) {
      ObjectShape o;
      o.kind = rng.bernoulli(0.5) ? "rect" : "ellipse";
      const int omax = std::max(10, std::min(20, size / 3));
      o.h = rng.uniform_int(10, omax);
      o.w = rng.uniform_int(10, omax);
      o.u = rng.uniform_int(0, size - o.h);
      o.v = rng.uniform_int(0, size - o.w);
      if (!overlaps(o, occupancy, size)) return o;
    }
    throw std::runtime_error(std::string("synth_generate: cannot place ") +
                             what + " within retry budget, seed " +
                             std::to_string(spec.seed));
  };
  auto random_color = [&] {
    Vector c(3);
    for (int i = 0; i < 3; ++i) c(i) = rng.uniform(0.0, 1.0);
    return c;
  };

  const int n_base =
      rng.uniform_int(spec.object_count_min, spec.object_count_max);
  for (int i = 0; i < n_base; ++i) {
    const ObjectShape o = place("base object");
    const Vector color = random_color();
    rasterize(o, color, &out.sample.x0, &occupancy, size);
    rasterize(o, color, &out.sample.x1, nullptr, size);
  }

  for (int i = 0; i < spec.change_count; ++i) {
    const ObjectShape o = place("change object");
    const Vector color = random_color();
    PlacementRecord rec;
    rec.kind = o.kind;
    rec.inserted = rng.bernoulli(0.5);
    rec.u = o.u;
    rec.v = o.v;
    rec.h = o.h;
    rec.w = o.w;
    // inserted: appears in X1 only; removed: was present in X0 only
    FeatureMap* target = rec.inserted ? &out.sample.x1 : &out.sample.x0;
    rec.area = rasterize(o, color, target, &occupancy, size);
    for (int y = o.u; y < o.u + o.h; ++y)
      for (int x = o.v; x < o.v + o.w; ++x) {
        if (o.kind == "ellipse") {
          const double cy = o.u + (o.h - 1) / 2.0, cx = o.v + (o.w - 1) / 2.0;
          const double dy = (y - cy) / (o.h / 2.0), dx = (x - cx) / (o.w / 2.0);
          if (dy * dy + dx * dx > 1.0) continue;
        }
        out.sample.y.at(y, x) = 1.0;
      }
    out.placements.push_back(rec);
  }

  if (spec.nuisance_strength > 0.0) {
    for (int c = 0; c < 3; ++c) {
      const double gain =
          1.0 + rng.uniform(-spec.nuisance_strength, spec.nuisance_strength);
      const double bias =
          rng.uniform(-spec.nuisance_strength, spec.nuisance_strength) * 0.5;
      out.sample.x1.data.row(c) = out.sample.x1.data.row(c) * gain;
      out.sample.x1.data.row(c).array() += bias;
    }
    clamp01(out.sample.x1);
  }
  return out;
}

std::vector<Sample> tile(const Sample& sample, int patch) {
  require(patch >= 1 && sample.y.height % patch == 0 &&
              sample.y.width % patch == 0,
          "tile: patch size must divide image dimensions");
  const int rows = sample.y.height / patch, cols = sample.y.width / patch;
  std::vector<Sample> out;
  out.reserve(static_cast<std::size_t>(rows) * cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      Sample t;
      t.id = sample.id + "_r" + std::to_string(r) + "c" + std::to_string(c);
      t.x0 = FeatureMap(3, patch, patch);
      t.x1 = FeatureMap(3, patch, patch);
      t.y = LabelMap(patch, patch);
      for (int y = 0; y < patch; ++y)
        for (int x = 0; x < patch; ++x) {
          const int sp = sample.y.index(r * patch + y, c * patch + x);
          const int tp = t.y.index(y, x);
          t.x0.data.col(tp) = sample.x0.data.col(sp);
          t.x1.data.col(tp) = sample.x1.data.col(sp);
          t.y.data(tp) = sample.y.data(sp);
        }
      out.push_back(std::move(t));
    }
  return out;
}

Sample untile(const std::vector<Sample>& tiles, int rows, int cols) {
  require(!tiles.empty() &&
              tiles.size() == static_cast<std::size_t>(rows) * cols,
          "untile: tile count mismatch");
  const int patch = tiles[0].y.height;
  Sample out;
  out.x0 = FeatureMap(3, rows * patch, cols * patch);
  out.x1 = FeatureMap(3, rows * patch, cols * patch);
  out.y = LabelMap(rows * patch, cols * patch);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      const Sample& t = tiles[static_cast<std::size_t>(r) * cols + c];
      require(t.y.height == patch && t.y.width == patch,
              "untile: inconsistent tile size");
      for (int y = 0; y < patch; ++y)
        for (int x = 0; x < patch; ++x) {
          const int sp = out.y.index(r * patch + y, c * patch + x);
          const int tp = t.y.index(y, x);
          out.x0.data.col(sp) = t.x0.data.col(tp);
          out.x1.data.col(sp) = t.x1.data.col(tp);
          out.y.data(sp) = t.y.data(tp);
        }
    }
  return out;
}

namespace {

template <class Map>
void flip_h(Map& m) {
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width / 2; ++x) {
      const int a = m.index(y, x), b = m.index(y, m.width - 1 - x);
      m.data.col(a).swap(m.data.col(b));
    }
}
inline void flip_h(LabelMap& m) {
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width / 2; ++x)
      std::swap(m.data(m.index(y, x)), m.data(m.index(y, m.width - 1 - x)));
}

template <class Map>
void flip_v(Map& m) {
  for (int y = 0; y < m.height / 2; ++y)
    for (int x = 0; x < m.width; ++x) {
      const int a = m.index(y, x), b = m.index(m.height - 1 - y, x);
      m.data.col(a).swap(m.data.col(b));
    }
}
inline void flip_v(LabelMap& m) {
  for (int y = 0; y < m.height / 2; ++y)
    for (int x = 0; x < m.width; ++x)
      std::swap(m.data(m.index(y, x)), m.data(m.index(m.height - 1 - y, x)));
}

void photometric(FeatureMap& img, double brightness, double contrast,
                 double saturation) {
  if (contrast != 0.0)
    img.data = ((img.data.array() - 0.5) * (1.0 + contrast) + 0.5).matrix();
  if (brightness != 0.0) img.data.array() += brightness;
  if (saturation != 0.0) {
    const RowVector gray = img.data.colwise().mean();
    for (int c = 0; c < 3; ++c)
      img.data.row(c) = gray + (1.0 + saturation) * (img.data.row(c) - gray);
  }
  clamp01(img);
}

FeatureMap crop(const FeatureMap& m, int u, int v, int size) {
  FeatureMap out(m.channels(), size, size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x)
      out.data.col(out.index(y, x)) = m.data.col(m.index(u + y, v + x));
  return out;
}
LabelMap crop(const LabelMap& m, int u, int v, int size) {
  LabelMap out(size, size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x)
      out.data(out.index(y, x)) = m.data(m.index(u + y, v + x));
  return out;
}

}  // namespace

Sample augment(const Sample& sample, const AugPolicy& policy, Rng& rng) {
  const int crop_size =
      policy.crop_size > 0 ? policy.crop_size : sample.y.height;
  require(crop_size <= sample.y.height && crop_size <= sample.y.width,
          "augment: crop exceeds image");
  Sample out = sample;

  // geometric: identical parameters for X0, X1 and Y
  if (rng.bernoulli(policy.flip_prob)) {
    flip_h(out.x0);
    flip_h(out.x1);
    flip_h(out.y);
  }
  if (rng.bernoulli(policy.flip_prob)) {
    flip_v(out.x0);
    flip_v(out.x1);
    flip_v(out.y);
  }
  if (crop_size < sample.y.height || crop_size < sample.y.width) {
    const int u = rng.uniform_int(0, sample.y.height - crop_size);
    const int v = rng.uniform_int(0, sample.y.width - crop_size);
    out.x0 = crop(out.x0, u, v, crop_size);
    out.x1 = crop(out.x1, u, v, crop_size);
    out.y = crop(out.y, u, v, crop_size);
  }

  // photometric: independent draws per temporal image, never on Y
  auto draw = [&] {
    return std::array<double, 3>{rng.uniform(-policy.brightness, policy.brightness),
                                 rng.uniform(-policy.contrast, policy.contrast),
                                 rng.uniform(-policy.saturation, policy.saturation)};
  };
  const auto d0 = draw();
  const auto d1 = policy.paired_photometric ? d0 : draw();
  if (policy.brightness != 0.0 || policy.contrast != 0.0 ||
      policy.saturation != 0.0) {
    photometric(out.x0, d0[0], d0[1], d0[2]);
    photometric(out.x1, d1[0], d1[1], d1[2]);
  }
  return out;
}

std::vector<Sample> load_dataset(const std::string& root,
                                 const std::string& split) {
  const fs::path list_path = fs::path(root) / "list" / (split + ".txt");
  std::ifstream list(list_path);
  if (!list)
    throw std::runtime_error("load_dataset: missing list file " +
                             list_path.string());
  std::vector<Sample> out;
  std::string id;
  while (std::getline(list, id)) {
    if (id.empty()) continue;
    Sample s;
    s.id = id;
    for (const char* dir : {"A", "B", "label"}) {
      const fs::path p = fs::path(root) / dir / (id + ".png");
      if (!fs::exists(p))
        throw std::runtime_error("load_dataset: missing file " + p.string());
    }
    s.x0 = read_image_png((fs::path(root) / "A" / (id + ".png")).string());
    s.x1 = read_image_png((fs::path(root) / "B" / (id + ".png")).string());
    s.y = read_label_png((fs::path(root) / "label" / (id + ".png")).string());
    if (!s.x0.same_shape(s.x1) || s.y.height != s.x0.height ||
        s.y.width != s.x0.width)
      throw std::runtime_error("load_dataset: size mismatch in triplet " + id);
    out.push_back(std::move(s));
  }
  return out;
}

void write_dataset(const std::string& root, const std::string& split,
                   const std::vector<SynthResult>& samples,
                   bool append_manifest) {
  for (const char* dir : {"A", "B", "label", "list"})
    fs::create_directories(fs::path(root) / dir);

  std::ofstream list(fs::path(root) / "list" / (split + ".txt"));
  json manifest;
  const fs::path manifest_path = fs::path(root) / "manifest.json";
  if (append_manifest && fs::exists(manifest_path)) {
    std::ifstream in(manifest_path);
    in >> manifest;
  }

  for (const auto& r : samples) {
    const std::string& id = r.sample.id;
    write_image_png((fs::path(root) / "A" / (id + ".png")).string(),
                    r.sample.x0);
    write_image_png((fs::path(root) / "B" / (id + ".png")).string(),
                    r.sample.x1);
    write_mask_png((fs::path(root) / "label" / (id + ".png")).string(),
                   r.sample.y);
    list << id << "\n";

    json placements = json::array();
    long area = 0;
    for (const auto& p : r.placements) {
      placements.push_back({{"kind", p.kind},
                            {"inserted", p.inserted},
                            {"u", p.u},
                            {"v", p.v},
                            {"h", p.h},
                            {"w", p.w},
                            {"area", p.area}});
      area += p.area;
    }
    manifest["samples"][id] = {{"split", split},
                               {"area", area},
                               {"placements", placements}};
  }
  std::ofstream out(manifest_path);
  out << manifest.dump(2) << "\n";
}

}  // namespace apd
