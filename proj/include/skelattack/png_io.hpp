#pragma once

#include <png.h>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "skelattack/errors.hpp"
#include "skelattack/image.hpp"

namespace skelattack::png {

namespace detail {

inline GrayImage finish_read(png_image& info, const std::string& what) {
  const bool color = (info.format & PNG_FORMAT_FLAG_COLOR) != 0;
  info.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  const int width = static_cast<int>(info.width);
  const int height = static_cast<int>(info.height);
  // Alpha inputs are composited onto the prefilled white buffer.
  std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(info), 255);
  if (!png_image_finish_read(&info, nullptr, buffer.data(), 0, nullptr)) {
    std::string msg = info.message;
    png_image_free(&info);
    throw InputError(what + ": " + msg);
  }
  if (!color) return GrayImage(width, height, std::move(buffer));
  std::vector<std::uint8_t> gray(static_cast<std::size_t>(width) * height);
  for (std::size_t i = 0; i < gray.size(); ++i) {
    gray[i] = luma_bt601(buffer[3 * i], buffer[3 * i + 1], buffer[3 * i + 2]);
  }
  return GrayImage(width, height, std::move(gray));
}

struct WriteState {
  std::vector<std::uint8_t>* out;
};

inline void write_callback(png_structp png, png_bytep data, png_size_t length) {
  auto* state = static_cast<WriteState*>(png_get_io_ptr(png));
  state->out->insert(state->out->end(), data, data + length);
}

inline void flush_callback(png_structp) {}

[[noreturn]] inline void error_callback(png_structp, png_const_charp msg) {
  throw InputError(std::string("png write: ") + msg);
}

inline void warning_callback(png_structp, png_const_charp) {}

/// Writes a grayscale PNG with the given bit depth (8, or 1 for bilevel).
inline std::vector<std::uint8_t> encode(const GrayImage& img, int bit_depth) {
  std::vector<std::uint8_t> out;
  WriteState state{&out};
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, error_callback, warning_callback);
  if (png == nullptr) throw InternalError("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (info == nullptr) {
    png_destroy_write_struct(&png, nullptr);
    throw InternalError("png_create_info_struct failed");
  }
  try {
    png_set_write_fn(png, &state, write_callback, flush_callback);
    png_set_IHDR(png, info, img.width(), img.height(), bit_depth, PNG_COLOR_TYPE_GRAY,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    const std::size_t row_bytes =
        bit_depth == 8 ? static_cast<std::size_t>(img.width()) : (img.width() + 7) / 8;
    std::vector<std::uint8_t> row(row_bytes);
    for (int y = 0; y < img.height(); ++y) {
      if (bit_depth == 8) {
        for (int x = 0; x < img.width(); ++x) row[x] = img.at(x, y);
      } else {
        std::fill(row.begin(), row.end(), 0);
        for (int x = 0; x < img.width(); ++x) {
          if (img.at(x, y) >= 128) row[x / 8] |= static_cast<std::uint8_t>(0x80 >> (x % 8));
        }
      }
      png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
  } catch (...) {
    png_destroy_write_struct(&png, &info);
    throw;
  }
  png_destroy_write_struct(&png, &info);
  return out;
}

}  // namespace detail

inline GrayImage decode(std::span<const std::uint8_t> bytes) {
  png_image info;
  std::memset(&info, 0, sizeof(info));
  info.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&info, bytes.data(), bytes.size())) {
    throw InputError(std::string("png decode: ") + info.message);
  }
  return detail::finish_read(info, "png decode");
}

inline GrayImage read(const std::filesystem::path& path) {
  png_image info;
  std::memset(&info, 0, sizeof(info));
  info.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&info, path.c_str())) {
    throw InputError("cannot read PNG " + path.string() + ": " + info.message);
  }
  return detail::finish_read(info, path.string());
}

/// 8-bit grayscale PNG bytes.
inline std::vector<std::uint8_t> encode(const GrayImage& img) { return detail::encode(img, 8); }

/// 1-bit PNG; intensities >= 128 become white.
inline std::vector<std::uint8_t> encode_bilevel(const GrayImage& img) {
  return detail::encode(img, 1);
}

inline void write_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw InputError("failed writing " + path.string());
}

inline void write(const std::filesystem::path& path, const GrayImage& img) {
  write_bytes(path, encode(img));
}

inline void write_bilevel(const std::filesystem::path& path, const GrayImage& img) {
  write_bytes(path, encode_bilevel(img));
}

}  // namespace skelattack::png
