#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "fdlab/core/error.hpp"
#include "fdlab/core/tensor.hpp"

namespace fdlab::data {

namespace fs = std::filesystem;

/// 8-bit interleaved RGB raster.
struct Rgb8Image {
  std::size_t width = 0, height = 0;
  std::vector<std::uint8_t> rgb;
};

inline Rgb8Image read_png(const fs::path& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str()))
    throw LoadError("cannot decode PNG " + path.string() + ": " + img.message);
  img.format = PNG_FORMAT_RGB;
  Rgb8Image out{img.width, img.height, std::vector<std::uint8_t>(PNG_IMAGE_SIZE(img))};
  if (!png_image_finish_read(&img, nullptr, out.rgb.data(), 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw LoadError("cannot decode PNG " + path.string() + ": " + msg);
  }
  return out;
}

inline void write_png(const fs::path& path, const Rgb8Image& im) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(im.width);
  img.height = static_cast<png_uint_32>(im.height);
  img.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&img, path.c_str(), 0, im.rgb.data(), 0, nullptr))
    throw Error("cannot write PNG " + path.string() + ": " + img.message);
}

/// Binary PPM (P6) or PGM (P5) with maxval 255.
inline Rgb8Image read_pnm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open " + path.string());
  auto token = [&]() {
    std::string t;
    char c;
    while (in.get(c)) {
      if (c == '#') {
        std::string skip;
        std::getline(in, skip);
      } else if (!std::isspace(static_cast<unsigned char>(c))) {
        t.push_back(c);
        break;
      }
    }
    while (in.get(c) && !std::isspace(static_cast<unsigned char>(c))) t.push_back(c);
    return t;
  };
  const std::string magic = token();
  if (magic != "P6" && magic != "P5") throw LoadError("cannot decode PNM " + path.string() + ": bad magic");
  Rgb8Image out;
  try {
    out.width = std::stoul(token());
    out.height = std::stoul(token());
    if (std::stoul(token()) != 255) throw LoadError("cannot decode PNM " + path.string() + ": maxval must be 255");
  } catch (const std::logic_error&) {
    throw LoadError("cannot decode PNM " + path.string() + ": malformed header");
  }
  const std::size_t channels = magic == "P6" ? 3 : 1;
  std::vector<std::uint8_t> raw(out.width * out.height * channels);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (std::size_t(in.gcount()) != raw.size()) throw LoadError("cannot decode PNM " + path.string() + ": truncated data");
  if (channels == 3) {
    out.rgb = std::move(raw);
  } else {
    out.rgb.resize(raw.size() * 3);
    for (std::size_t i = 0; i < raw.size(); ++i) out.rgb[3 * i] = out.rgb[3 * i + 1] = out.rgb[3 * i + 2] = raw[i];
  }
  return out;
}

inline Rgb8Image read_image(const fs::path& path) {
  auto ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".ppm" || ext == ".pgm" || ext == ".pnm") return read_pnm(path);
  return read_png(path);
}

/// Converts to {3, side, side} floats in [0,1], bilinearly resampling when
/// the raster is not already side x side.
inline Tensor<float> to_tensor(const Rgb8Image& im, std::size_t side) {
  Tensor<float> out({3, side, side});
  if (im.width == side && im.height == side) {
    for (std::size_t y = 0; y < side; ++y)
      for (std::size_t x = 0; x < side; ++x)
        for (std::size_t c = 0; c < 3; ++c) out[(c * side + y) * side + x] = float(im.rgb[(y * side + x) * 3 + c]) / 255.0f;
    return out;
  }
  const double sx = double(im.width) / side, sy = double(im.height) / side;
  for (std::size_t y = 0; y < side; ++y)
    for (std::size_t x = 0; x < side; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, double(im.width - 1));
      const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, double(im.height - 1));
      const std::size_t x0 = std::size_t(fx), y0 = std::size_t(fy);
      const std::size_t x1 = std::min(x0 + 1, im.width - 1), y1 = std::min(y0 + 1, im.height - 1);
      const double ax = fx - x0, ay = fy - y0;
      for (std::size_t c = 0; c < 3; ++c) {
        auto px = [&](std::size_t xx, std::size_t yy) { return double(im.rgb[(yy * im.width + xx) * 3 + c]); };
        const double v = (1 - ay) * ((1 - ax) * px(x0, y0) + ax * px(x1, y0)) + ay * ((1 - ax) * px(x0, y1) + ax * px(x1, y1));
        out[(c * side + y) * side + x] = float(v / 255.0);
      }
    }
  return out;
}

/// Quantizes a {3,H,W} (or {1,H,W}) tensor in [0,1] to 8-bit RGB.
template <typename T>
Rgb8Image from_tensor(const Tensor<T>& t) {
  require(t.rank() == 3 && (t.dim(0) == 3 || t.dim(0) == 1), "from_tensor expects {3,H,W} or {1,H,W}");
  const std::size_t c = t.dim(0), h = t.dim(1), w = t.dim(2);
  Rgb8Image im{w, h, std::vector<std::uint8_t>(w * h * 3)};
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t k = 0; k < 3; ++k) {
        const double v = std::clamp(double(t[((c == 3 ? k : 0) * h + y) * w + x]), 0.0, 1.0);
        im.rgb[(y * w + x) * 3 + k] = static_cast<std::uint8_t>(std::lround(v * 255.0));
      }
  return im;
}

}  // namespace fdlab::data
