#include "apd/image_io.hpp"

#include <png.h>

#include <cstdio>
#include <memory>
#include <stdexcept>
#include <vector>

namespace apd {
namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

// Decodes any 8/16-bit PNG to packed 8-bit RGB rows.
std::vector<std::vector<png_byte>> read_rows(const std::string& path, int& h,
                                             int& w) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw std::runtime_error("cannot open PNG for reading: " + path);

  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("failed to decode PNG: " + path);
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);

  h = png_get_image_height(png, info);
  w = png_get_image_width(png, info);
  const png_byte color = png_get_color_type(png, info);
  const png_byte depth = png_get_bit_depth(png, info);

  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)
    png_set_gray_to_rgb(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);

  std::vector<std::vector<png_byte>> rows(h);
  std::vector<png_bytep> ptrs(h);
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  for (int i = 0; i < h; ++i) {
    rows[i].resize(rowbytes);
    ptrs[i] = rows[i].data();
  }
  png_read_image(png, ptrs.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return rows;
}

void write_rows(const std::string& path, int h, int w, int channels,
                const std::vector<std::vector<png_byte>>& rows) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw std::runtime_error("cannot open PNG for writing: " + path);

  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("failed to encode PNG: " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, w, h, 8,
               channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int i = 0; i < h; ++i)
    png_write_row(png, const_cast<png_bytep>(rows[i].data()));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

png_byte quantize(double v) {
  v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
  return static_cast<png_byte>(v * 255.0 + 0.5);
}

}  // namespace

FeatureMap read_image_png(const std::string& path) {
  int h = 0, w = 0;
  const auto rows = read_rows(path, h, w);
  FeatureMap img(3, h, w);
  for (int u = 0; u < h; ++u)
    for (int v = 0; v < w; ++v)
      for (int c = 0; c < 3; ++c)
        img.at(c, u, v) = rows[u][3 * v + c] / 255.0;
  return img;
}

LabelMap read_label_png(const std::string& path) {
  int h = 0, w = 0;
  const auto rows = read_rows(path, h, w);
  LabelMap label(h, w);
  for (int u = 0; u < h; ++u)
    for (int v = 0; v < w; ++v)
      label.at(u, v) = rows[u][3 * v] >= 128 ? 1.0 : 0.0;
  return label;
}

void write_image_png(const std::string& path, const FeatureMap& img) {
  require(img.channels() == 3, "write_image_png: need 3 channels");
  std::vector<std::vector<png_byte>> rows(img.height);
  for (int u = 0; u < img.height; ++u) {
    rows[u].resize(static_cast<std::size_t>(img.width) * 3);
    for (int v = 0; v < img.width; ++v)
      for (int c = 0; c < 3; ++c)
        rows[u][3 * v + c] = quantize(img.at(c, u, v));
  }
  write_rows(path, img.height, img.width, 3, rows);
}

void write_gray_png(const std::string& path, const LabelMap& map) {
  std::vector<std::vector<png_byte>> rows(map.height);
  for (int u = 0; u < map.height; ++u) {
    rows[u].resize(map.width);
    for (int v = 0; v < map.width; ++v) rows[u][v] = quantize(map.at(u, v));
  }
  write_rows(path, map.height, map.width, 1, rows);
}

void write_mask_png(const std::string& path, const LabelMap& mask) {
  std::vector<std::vector<png_byte>> rows(mask.height);
  for (int u = 0; u < mask.height; ++u) {
    rows[u].resize(mask.width);
    for (int v = 0; v < mask.width; ++v)
      rows[u][v] = mask.at(u, v) != 0.0 ? 255 : 0;
  }
  write_rows(path, mask.height, mask.width, 1, rows);
}

}  // namespace apd
