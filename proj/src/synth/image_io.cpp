// SPDX-License-Identifier: Apache-2.0
#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>

#include "nhp/image.hpp"

namespace nhp {

namespace {

std::uint8_t quantize(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

void write_raw(const std::filesystem::path& path, int w, int h, png_uint_32 format,
               const std::vector<std::uint8_t>& bytes) {
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(w);
  img.height = static_cast<png_uint_32>(h);
  img.format = format;
  if (!png_image_write_to_file(&img, path.c_str(), 0, bytes.data(), 0, nullptr)) {
    throw IoError("failed to write PNG " + path.string() + ": " + img.message);
  }
}

std::vector<std::uint8_t> read_raw(const std::filesystem::path& path, png_uint_32 format, int& w,
                                   int& h) {
  if (!std::filesystem::exists(path)) throw IoError("missing image file " + path.string());
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw IoError("cannot read PNG " + path.string() + ": " + img.message);
  }
  img.format = format;
  std::vector<std::uint8_t> bytes(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, bytes.data(), 0, nullptr)) {
    png_image_free(&img);
    throw IoError("corrupt PNG " + path.string() + ": " + img.message);
  }
  w = static_cast<int>(img.width);
  h = static_cast<int>(img.height);
  return bytes;
}

}  // namespace

void write_png(const std::filesystem::path& path, const Image& image) {
  std::vector<std::uint8_t> bytes(image.rgb.size());
  std::transform(image.rgb.begin(), image.rgb.end(), bytes.begin(), quantize);
  write_raw(path, image.width, image.height, PNG_FORMAT_RGB, bytes);
}

void write_png(const std::filesystem::path& path, const GrayImage& image) {
  std::vector<std::uint8_t> bytes(image.values.size());
  std::transform(image.values.begin(), image.values.end(), bytes.begin(), quantize);
  write_raw(path, image.width, image.height, PNG_FORMAT_GRAY, bytes);
}

Image read_png_rgb(const std::filesystem::path& path) {
  int w = 0, h = 0;
  auto bytes = read_raw(path, PNG_FORMAT_RGB, w, h);
  Image out(w, h);
  for (std::size_t i = 0; i < bytes.size(); ++i) out.rgb[i] = bytes[i] / 255.0f;
  return out;
}

GrayImage read_png_gray(const std::filesystem::path& path) {
  int w = 0, h = 0;
  auto bytes = read_raw(path, PNG_FORMAT_GRAY, w, h);
  GrayImage out(w, h);
  for (std::size_t i = 0; i < bytes.size(); ++i) out.values[i] = bytes[i] / 255.0f;
  return out;
}

}  // namespace nhp
