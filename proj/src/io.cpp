#include "memflow/io.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <numbers>
#include <vector>

namespace memflow {
namespace {

template <typename U>
U to_little(U value) {
  if constexpr (std::endian::native == std::endian::big) {
    unsigned char b[sizeof(U)];
    std::memcpy(b, &value, sizeof(U));
    std::reverse(b, b + sizeof(U));
    std::memcpy(&value, b, sizeof(U));
  }
  return value;
}

template <typename U>
bool read_le(std::istream& in, U& out) {
  in.read(reinterpret_cast<char*>(&out), sizeof(U));
  if (in.gcount() != static_cast<std::streamsize>(sizeof(U))) return false;
  out = to_little(out);
  return true;
}

template <typename U>
void write_le(std::ostream& out, U value) {
  value = to_little(value);
  out.write(reinterpret_cast<const char*>(&value), sizeof(U));
}

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

FlowField read_flo(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  float magic = 0.0f;
  if (!read_le(in, magic) || magic != kFloMagic) throw Error(ErrorCode::BadMagic, path.string());
  std::int32_t w = 0, h = 0;
  if (!read_le(in, w) || !read_le(in, h)) throw Error(ErrorCode::TruncatedFile, "header of " + path.string());
  if (w <= 0 || h <= 0) throw Error(ErrorCode::TruncatedFile, "non-positive dimensions in " + path.string());
  const std::size_t n = static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 2;
  std::vector<float> data(n);
  in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(n * sizeof(float)));
  if (static_cast<std::size_t>(in.gcount()) != n * sizeof(float))
    throw Error(ErrorCode::TruncatedFile, "payload of " + path.string());
  FlowField flow = FlowField::zeros(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::size_t i = 2 * (static_cast<std::size_t>(y) * w + x);
      flow.u(y, x) = to_little(data[i]);
      flow.v(y, x) = to_little(data[i + 1]);
    }
  return flow;
}

void write_flo(const FlowField& flow, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot open " + path.string() + " for writing");
  write_le(out, kFloMagic);
  write_le(out, static_cast<std::int32_t>(flow.width()));
  write_le(out, static_cast<std::int32_t>(flow.height()));
  for (int y = 0; y < flow.height(); ++y)
    for (int x = 0; x < flow.width(); ++x) {
      write_le(out, flow.u(y, x));
      write_le(out, flow.v(y, x));
    }
  if (!out) throw Error(ErrorCode::IoFailure, "write failed for " + path.string());
}

ImageFrame read_png(const std::filesystem::path& path) {
  FilePtr fp(std::fopen(path.string().c_str(), "rb"));
  if (!fp) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error(ErrorCode::IoFailure, "libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error(ErrorCode::IoFailure, "corrupt PNG " + path.string());
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));
  const int color = png_get_color_type(png, info);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  std::vector<unsigned char> buf(static_cast<std::size_t>(w) * h * 3);
  std::vector<png_bytep> rows(h);
  for (int y = 0; y < h; ++y) rows[y] = buf.data() + static_cast<std::size_t>(y) * w * 3;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);
  ImageFrame img(h, w);
  for (std::size_t i = 0; i < buf.size(); ++i) img.pixels.data()[i] = static_cast<float>(buf[i]) / 255.0f;
  return img;
}

void write_png(const ImageFrame& image, const std::filesystem::path& path) {
  FilePtr fp(std::fopen(path.string().c_str(), "wb"));
  if (!fp) throw Error(ErrorCode::IoFailure, "cannot open " + path.string() + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorCode::IoFailure, "libpng init failed");
  }
  std::vector<unsigned char> buf(static_cast<std::size_t>(image.width) * image.height * 3);
  for (std::size_t i = 0; i < buf.size(); ++i) {
    const float v = std::clamp(image.pixels.data()[i], 0.0f, 1.0f);
    buf[i] = static_cast<unsigned char>(std::lround(v * 255.0f));
  }
  std::vector<png_bytep> rows(image.height);
  for (int y = 0; y < image.height; ++y) rows[y] = buf.data() + static_cast<std::size_t>(y) * image.width * 3;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorCode::IoFailure, "PNG write failed for " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, image.width, image.height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

ImageFrame flow_to_color(const FlowField& flow, float max_magnitude) {
  const int h = flow.height(), w = flow.width();
  float scale = max_magnitude;
  if (scale <= 0.0f) {
    scale = 0.0f;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) scale = std::max(scale, std::hypot(flow.u(y, x), flow.v(y, x)));
  }
  ImageFrame img(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const float u = flow.u(y, x), v = flow.v(y, x);
      const float mag = std::hypot(u, v);
      const float sat = scale > 0.0f ? std::min(mag / scale, 1.0f) : 0.0f;
      // HSV with V = 1: hue from direction in [0, 6).
      float hue = (std::atan2(v, u) + std::numbers::pi_v<float>) / (2.0f * std::numbers::pi_v<float>) * 6.0f;
      if (hue >= 6.0f) hue -= 6.0f;
      const int sector = static_cast<int>(hue);
      const float f = hue - static_cast<float>(sector);
      const float p = 1.0f - sat, q = 1.0f - sat * f, t = 1.0f - sat * (1.0f - f);
      float r = 1, g = 1, b = 1;
      switch (sector) {
        case 0: r = 1; g = t; b = p; break;
        case 1: r = q; g = 1; b = p; break;
        case 2: r = p; g = 1; b = t; break;
        case 3: r = p; g = q; b = 1; break;
        case 4: r = t; g = p; b = 1; break;
        default: r = 1; g = p; b = q; break;
      }
      img.at(y, x, 0) = r;
      img.at(y, x, 1) = g;
      img.at(y, x, 2) = b;
    }
  return img;
}

}  // namespace memflow
