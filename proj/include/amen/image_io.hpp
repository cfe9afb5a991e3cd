#pragma once

// 8-bit image decoding (binary PGM, PNG) and binary PGM writing. Decoded
// images are [C, H, W] float tensors with value / 255, so 0 -> 0.0 and
// 255 -> 1.0 exactly.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <png.h>

#include "amen/error.hpp"
#include "amen/tensor.hpp"

namespace amen {

namespace detail {

inline std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

// Next whitespace-delimited header token, skipping '#' comments.
inline std::string pnm_token(const std::string& b, std::size_t& pos) {
  for (;;) {
    while (pos < b.size() && std::isspace(static_cast<unsigned char>(b[pos]))) ++pos;
    if (pos < b.size() && b[pos] == '#') {
      while (pos < b.size() && b[pos] != '\n') ++pos;
      continue;
    }
    break;
  }
  const std::size_t start = pos;
  while (pos < b.size() && !std::isspace(static_cast<unsigned char>(b[pos]))) ++pos;
  return b.substr(start, pos - start);
}

inline std::size_t pnm_number(const std::string& b, std::size_t& pos, const std::string& path) {
  const std::string tok = pnm_token(b, pos);
  if (tok.empty() || !std::all_of(tok.begin(), tok.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); })) {
    throw DecodeError(path + ": malformed PGM header");
  }
  return std::stoul(tok);
}

}  // namespace detail

inline Tensor<float> decode_pgm(const std::string& bytes, const std::string& name = "<memory>") {
  std::size_t pos = 0;
  if (detail::pnm_token(bytes, pos) != "P5") throw DecodeError(name + ": not a binary PGM (P5)");
  const std::size_t w = detail::pnm_number(bytes, pos, name);
  const std::size_t h = detail::pnm_number(bytes, pos, name);
  const std::size_t maxval = detail::pnm_number(bytes, pos, name);
  if (w == 0 || h == 0 || maxval == 0 || maxval > 255) {
    throw DecodeError(name + ": unsupported PGM extents or maxval (8-bit only)");
  }
  ++pos;  // single whitespace byte before the raster
  if (pos + w * h > bytes.size()) throw DecodeError(name + ": truncated PGM raster");
  Tensor<float> img({1, h, w});
  for (std::size_t i = 0; i < w * h; ++i) {
    img[i] = static_cast<float>(static_cast<unsigned char>(bytes[pos + i])) / static_cast<float>(maxval);
  }
  return img;
}

inline Tensor<float> read_png(const std::filesystem::path& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  const std::string bytes = detail::read_file_bytes(path);
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    throw DecodeError(path.string() + ": " + image.message);
  }
  const bool color = (image.format & PNG_FORMAT_FLAG_COLOR) != 0;
  image.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  const std::size_t c = color ? 3 : 1, h = image.height, w = image.width;
  std::vector<png_byte> raster(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, raster.data(), 0, nullptr)) {
    std::string msg = image.message;
    png_image_free(&image);
    throw DecodeError(path.string() + ": " + msg);
  }
  Tensor<float> img({c, h, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t ch = 0; ch < c; ++ch)
        img.at(ch, y, x) = static_cast<float>(raster[(y * w + x) * c + ch]) / 255.0f;
  return img;
}

inline Tensor<float> read_pgm(const std::filesystem::path& path) {
  return decode_pgm(detail::read_file_bytes(path), path.string());
}

// Dispatches on the file signature, not the extension.
inline Tensor<float> read_image(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("missing image file " + path.string());
  const std::string bytes = detail::read_file_bytes(path);
  if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '5') return decode_pgm(bytes, path.string());
  if (bytes.size() >= 8 && static_cast<unsigned char>(bytes[0]) == 0x89 && bytes.compare(1, 3, "PNG") == 0) {
    return read_png(path);
  }
  throw DecodeError(path.string() + ": unrecognized image format");
}

inline std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

// Writes a [H, W] or [1, H, W] tensor of values in [0, 1] as an 8-bit P5 file
// (0 -> 0, 1 -> 255, values outside [0, 1] clamped).
template <class T>
void write_pgm(const std::filesystem::path& path, const Tensor<T>& plane) {
  const bool ok = (plane.rank() == 2) || (plane.rank() == 3 && plane.dim(0) == 1);
  if (!ok) throw ShapeError("write_pgm expects a single plane, got " + shape_str(plane.shape()));
  const std::size_t h = plane.dim(plane.rank() - 2), w = plane.dim(plane.rank() - 1);
  if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << "P5\n" << w << ' ' << h << "\n255\n";
  std::string raster(w * h, '\0');
  for (std::size_t i = 0; i < w * h; ++i) raster[i] = static_cast<char>(to_byte(static_cast<double>(plane[i])));
  f.write(raster.data(), static_cast<std::streamsize>(raster.size()));
}

}  // namespace amen
