// Copyright 2026 The glyphflow Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "glyphflow/common/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "glyphflow/common/error.hpp"

namespace gf {

std::uint8_t from_unit(double x) {
  const double v = std::round((x + 1.0) * 127.5);
  return static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
}

std::vector<float> to_planar(const GrayImage& image) {
  std::vector<float> out(image.pixels.size());
  std::transform(image.pixels.begin(), image.pixels.end(), out.begin(), to_unit);
  return out;
}

std::vector<float> to_planar(const RgbImage& image) {
  const std::size_t plane = static_cast<std::size_t>(image.width) * image.height;
  std::vector<float> out(plane * 3);
  for (std::size_t i = 0; i < plane; ++i)
    for (std::size_t c = 0; c < 3; ++c) out[c * plane + i] = to_unit(image.pixels[i * 3 + c]);
  return out;
}

GrayImage gray_from_planar(std::span<const float> planes, int width, int height) {
  require(planes.size() == static_cast<std::size_t>(width) * height, Errc::kShapeMismatch,
          "gray plane size does not match dimensions");
  GrayImage img(width, height);
  for (std::size_t i = 0; i < planes.size(); ++i) img.pixels[i] = from_unit(planes[i]);
  return img;
}

RgbImage rgb_from_planar(std::span<const float> planes, int width, int height) {
  const std::size_t plane = static_cast<std::size_t>(width) * height;
  require(planes.size() == plane * 3, Errc::kShapeMismatch,
          "rgb plane size does not match dimensions");
  RgbImage img(width, height);
  for (std::size_t i = 0; i < plane; ++i)
    for (std::size_t c = 0; c < 3; ++c) img.pixels[i * 3 + c] = from_unit(planes[c * plane + i]);
  return img;
}

namespace {

std::vector<std::uint8_t> encode(const std::uint8_t* pixels, int width, int height,
                                 png_uint_32 format) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(width);
  image.height = static_cast<png_uint_32>(height);
  image.format = format;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&image, nullptr, &size, 0, pixels, 0, nullptr))
    fail(Errc::kIoFailure, std::string("png encode: ") + image.message);
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, pixels, 0, nullptr))
    fail(Errc::kIoFailure, std::string("png encode: ") + image.message);
  out.resize(size);
  return out;
}

template <class Image>
Image decode(std::span<const std::uint8_t> bytes, png_uint_32 format, int channels) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size()))
    fail(Errc::kIoFailure, std::string("png decode: ") + image.message);
  image.format = format;
  Image out;
  out.width = static_cast<int>(image.width);
  out.height = static_cast<int>(image.height);
  out.pixels.resize(static_cast<std::size_t>(out.width) * out.height * channels);
  if (!png_image_finish_read(&image, nullptr, out.pixels.data(), 0, nullptr)) {
    png_image_free(&image);
    fail(Errc::kIoFailure, std::string("png decode: ") + image.message);
  }
  return out;
}

}  // namespace

std::vector<std::uint8_t> encode_png(const GrayImage& image) {
  return encode(image.pixels.data(), image.width, image.height, PNG_FORMAT_GRAY);
}

std::vector<std::uint8_t> encode_png(const RgbImage& image) {
  return encode(image.pixels.data(), image.width, image.height, PNG_FORMAT_RGB);
}

GrayImage decode_png_gray(std::span<const std::uint8_t> bytes) {
  return decode<GrayImage>(bytes, PNG_FORMAT_GRAY, 1);
}

RgbImage decode_png_rgb(std::span<const std::uint8_t> bytes) {
  return decode<RgbImage>(bytes, PNG_FORMAT_RGB, 3);
}

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::kIoFailure, "cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(Errc::kIoFailure, "cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(Errc::kIoFailure, "short write to " + path);
}

void write_png(const std::string& path, const GrayImage& image) {
  write_file_bytes(path, encode_png(image));
}
void write_png(const std::string& path, const RgbImage& image) {
  write_file_bytes(path, encode_png(image));
}
GrayImage read_png_gray(const std::string& path) { return decode_png_gray(read_file_bytes(path)); }
RgbImage read_png_rgb(const std::string& path) { return decode_png_rgb(read_file_bytes(path)); }

namespace {
constexpr char kAlphabet[] =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
}

std::string base64_encode(std::span<const std::uint8_t> bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < bytes.size(); i += 3) {
    const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += kAlphabet[(v >> 6) & 63];
    out += kAlphabet[v & 63];
  }
  if (i < bytes.size()) {
    std::uint32_t v = bytes[i] << 16;
    if (i + 1 < bytes.size()) v |= bytes[i + 1] << 8;
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += i + 1 < bytes.size() ? kAlphabet[(v >> 6) & 63] : '=';
    out += '=';
  }
  return out;
}

std::vector<std::uint8_t> base64_decode(const std::string& text) {
  int table[256];
  std::fill(std::begin(table), std::end(table), -1);
  for (int i = 0; i < 64; ++i) table[static_cast<unsigned char>(kAlphabet[i])] = i;
  std::vector<std::uint8_t> out;
  out.reserve(text.size() / 4 * 3);
  std::uint32_t acc = 0;
  int bits = 0;
  for (unsigned char ch : text) {
    if (ch == '=') break;
    if (ch == '\n' || ch == '\r' || ch == ' ') continue;
    const int v = table[ch];
    if (v < 0) fail(Errc::kInvalidArgument, "invalid base64 character");
    acc = (acc << 6) | static_cast<std::uint32_t>(v);
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out.push_back(static_cast<std::uint8_t>((acc >> bits) & 0xff));
    }
  }
  return out;
}

}  // namespace gf
