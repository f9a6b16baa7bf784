// Copyright 2026 the vertenet authors
// SPDX-License-Identifier: Apache-2.0
#include "vertenet/image.hpp"

#include <png.h>

#include <cmath>

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <memory>
#include <stdexcept>
#include <string>

namespace vertenet {

namespace {

[[noreturn]] void fail(const std::string& msg) {
  throw std::runtime_error(msg);
}

std::string lower_extension(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  return ext;
}

// ---- PGM ----

int next_pgm_token(std::istream& is) {
  // skips whitespace and '#' comments
  while (true) {
    int c = is.peek();
    if (c == '#') {
      std::string line;
      std::getline(is, line);
    } else if (std::isspace(c)) {
      is.get();
    } else {
      break;
    }
  }
  int value = 0;
  if (!(is >> value)) fail("pgm: malformed header token");
  return value;
}

GrayImage read_pgm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail("cannot open image '" + path.string() + "'");
  char m0 = 0, m1 = 0;
  is.get(m0);
  is.get(m1);
  if (m0 != 'P' || m1 != '5') {
    fail("'" + path.string() + "' is not a binary (P5) PGM file");
  }
  const int width = next_pgm_token(is);
  const int height = next_pgm_token(is);
  const int maxval = next_pgm_token(is);
  if (width <= 0 || height <= 0 || maxval <= 0 || maxval > 65535) {
    fail("pgm: bad dimensions in '" + path.string() + "'");
  }
  is.get();  // single whitespace after maxval

  GrayImage img;
  img.width = width;
  img.height = height;
  img.pixels.resize(static_cast<std::size_t>(width) * height);
  const int bytes = maxval > 255 ? 2 : 1;
  std::vector<unsigned char> row(static_cast<std::size_t>(width) * bytes);
  for (int y = 0; y < height; ++y) {
    is.read(reinterpret_cast<char*>(row.data()),
            static_cast<std::streamsize>(row.size()));
    if (!is) fail("pgm: truncated pixel data in '" + path.string() + "'");
    for (int x = 0; x < width; ++x) {
      const unsigned value =
          bytes == 1 ? row[x]
                     : (static_cast<unsigned>(row[2 * x]) << 8) | row[2 * x + 1];
      img.at(y, x) = static_cast<double>(value) / maxval;
    }
  }
  return img;
}

void write_pgm(const std::filesystem::path& path, const GrayImage& img) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail("cannot open '" + path.string() + "' for writing");
  os << "P5\n" << img.width << " " << img.height << "\n255\n";
  std::vector<unsigned char> row(img.width);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const double v = std::clamp(img.at(y, x), 0.0, 1.0);
      row[x] = static_cast<unsigned char>(std::lround(v * 255.0));
    }
    os.write(reinterpret_cast<const char*>(row.data()), img.width);
  }
  if (!os) fail("write failed for '" + path.string() + "'");
}

// ---- PNG ----

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

GrayImage read_png(const std::filesystem::path& path) {
  FilePtr fp(std::fopen(path.string().c_str(), "rb"));
  if (!fp) fail("cannot open image '" + path.string() + "'");

  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) fail("png: out of memory");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    fail("png: out of memory");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail("png: failed to read '" + path.string() + "'");
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);

  const png_uint_32 width = png_get_image_width(png, info);
  const png_uint_32 height = png_get_image_height(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);

  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) {
    png_set_expand_gray_1_2_4_to_8(png);
  }
  if (color & PNG_COLOR_MASK_COLOR) {
    png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  }
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_strip_alpha(png);
  png_read_update_info(png, info);

  const int out_depth = png_get_bit_depth(png, info);
  const double maxval = out_depth == 16 ? 65535.0 : 255.0;

  GrayImage img;
  img.width = static_cast<int>(width);
  img.height = static_cast<int>(height);
  img.pixels.resize(static_cast<std::size_t>(width) * height);
  std::vector<unsigned char> row(png_get_rowbytes(png, info));
  for (png_uint_32 y = 0; y < height; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (png_uint_32 x = 0; x < width; ++x) {
      const unsigned value =
          out_depth == 16
              ? (static_cast<unsigned>(row[2 * x]) << 8) | row[2 * x + 1]
              : row[x];
      img.at(static_cast<int>(y), static_cast<int>(x)) = value / maxval;
    }
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

void write_png_rows(const std::filesystem::path& path, int width, int height,
                    int color_type, const std::vector<unsigned char>& bytes,
                    int row_stride) {
  FilePtr fp(std::fopen(path.string().c_str(), "wb"));
  if (!fp) fail("cannot open '" + path.string() + "' for writing");
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) fail("png: out of memory");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    fail("png: out of memory");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail("png: failed to write '" + path.string() + "'");
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, width, height, 8, color_type, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < height; ++y) {
    png_write_row(png, const_cast<png_bytep>(
                           bytes.data() + static_cast<std::size_t>(y) * row_stride));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

void write_png_gray(const std::filesystem::path& path, const GrayImage& img) {
  std::vector<unsigned char> bytes(static_cast<std::size_t>(img.width) *
                                   img.height);
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    bytes[i] = static_cast<unsigned char>(
        std::lround(std::clamp(img.pixels[i], 0.0, 1.0) * 255.0));
  }
  write_png_rows(path, img.width, img.height, PNG_COLOR_TYPE_GRAY, bytes,
                 img.width);
}

}  // namespace

void RgbImage::set(int y, int x, std::array<std::uint8_t, 3> rgb) {
  const std::size_t i = (static_cast<std::size_t>(y) * width + x) * 3;
  pixels[i] = rgb[0];
  pixels[i + 1] = rgb[1];
  pixels[i + 2] = rgb[2];
}

std::array<std::uint8_t, 3> RgbImage::get(int y, int x) const {
  const std::size_t i = (static_cast<std::size_t>(y) * width + x) * 3;
  return {pixels[i], pixels[i + 1], pixels[i + 2]};
}

RgbImage RgbImage::from_gray(const GrayImage& g) {
  RgbImage out;
  out.width = g.width;
  out.height = g.height;
  out.pixels.resize(static_cast<std::size_t>(g.width) * g.height * 3);
  for (std::size_t i = 0; i < g.pixels.size(); ++i) {
    const auto v = static_cast<std::uint8_t>(
        std::lround(std::clamp(g.pixels[i], 0.0, 1.0) * 255.0));
    out.pixels[3 * i] = v;
    out.pixels[3 * i + 1] = v;
    out.pixels[3 * i + 2] = v;
  }
  return out;
}

GrayImage read_gray_image(const std::filesystem::path& path) {
  const std::string ext = lower_extension(path);
  if (ext == ".pgm") return read_pgm(path);
  if (ext == ".png") return read_png(path);
  fail("unsupported image format '" + ext + "' (expected .pgm or .png)");
}

void write_gray_image(const std::filesystem::path& path,
                      const GrayImage& img) {
  const std::string ext = lower_extension(path);
  if (ext == ".pgm") {
    write_pgm(path, img);
  } else if (ext == ".png") {
    write_png_gray(path, img);
  } else {
    fail("unsupported image format '" + ext + "' (expected .pgm or .png)");
  }
}

void write_rgb_png(const std::filesystem::path& path, const RgbImage& img) {
  write_png_rows(path, img.width, img.height, PNG_COLOR_TYPE_RGB, img.pixels,
                 img.width * 3);
}

}  // namespace vertenet
