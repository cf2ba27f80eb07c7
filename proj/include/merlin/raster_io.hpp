// Copyright (c) 2026 The merlin-despeckle Authors. All Rights Reserved.
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

#pragma once

#include <png.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "merlin/error.hpp"
#include "merlin/image.hpp"

namespace merlin::io {

inline constexpr std::string_view kSlcMagic = "SLC1";
inline constexpr std::string_view kReflectivityMagic = "RFL1";
inline constexpr std::string_view kTensorMagic = "TNS1";

// ---------------------------------------------------------------------------
// Little-endian byte plumbing

class ByteWriter {
 public:
  void magic(std::string_view m) { bytes_.insert(bytes_.end(), m.begin(), m.end()); }
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void raw(std::span<const std::uint8_t> data) { bytes_.insert(bytes_.end(), data.begin(), data.end()); }
  void text(std::string_view s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }

  const std::vector<std::uint8_t>& bytes() const noexcept { return bytes_; }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> data) : data_(data) {}

  void expect_magic(std::string_view m) {
    need(m.size(), "magic");
    if (std::memcmp(data_.data() + pos_, m.data(), m.size()) != 0) {
      throw Error(ErrorCode::bad_magic, "expected magic \"" + std::string(m) + "\"");
    }
    pos_ += m.size();
  }
  std::uint8_t u8() {
    need(1, "u8");
    return data_[pos_++];
  }
  std::uint16_t u16() {
    need(2, "u16");
    std::uint16_t v = 0;
    for (int i = 0; i < 2; ++i) v |= static_cast<std::uint16_t>(data_[pos_++]) << (8 * i);
    return v;
  }
  std::uint32_t u32() {
    need(4, "u32");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data_[pos_++]) << (8 * i);
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string text(std::size_t n) {
    need(n, "text");
    std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::span<const std::uint8_t> rest() const { return data_.subspan(pos_); }
  std::size_t remaining() const noexcept { return data_.size() - pos_; }
  void skip(std::size_t n) {
    need(n, "skip");
    pos_ += n;
  }

  void need(std::size_t n, const char* what) const {
    if (data_.size() - pos_ < n) {
      throw Error(ErrorCode::truncated, std::string("payload truncated while reading ") + what);
    }
  }

 private:
  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io, "cannot open '" + path.string() + "' for reading");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return bytes;
}

inline void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.empty()) throw Error(ErrorCode::io, "empty output path");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::io, "cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::io, "write failed for '" + path.string() + "'");
}

// ---------------------------------------------------------------------------
// SLC container: "SLC1", u32 width, u32 height, interleaved (re, im) f32 pairs.

inline std::vector<std::uint8_t> encode_slc(const ComplexImage& img) {
  validate(img);
  ByteWriter w;
  w.magic(kSlcMagic);
  w.u32(static_cast<std::uint32_t>(img.width()));
  w.u32(static_cast<std::uint32_t>(img.height()));
  for (std::size_t i = 0; i < img.size(); ++i) {
    w.f32(img.re.data[i]);
    w.f32(img.im.data[i]);
  }
  return w.take();
}

inline ComplexImage decode_slc(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.expect_magic(kSlcMagic);
  const std::uint32_t width = r.u32(), height = r.u32();
  require(width >= 1 && height >= 1, ErrorCode::invalid_argument, "SLC dims must be >= 1");
  r.need(static_cast<std::size_t>(width) * height * 8, "SLC samples");
  ComplexImage img(width, height);
  for (std::size_t i = 0; i < img.size(); ++i) {
    img.re.data[i] = r.f32();
    img.im.data[i] = r.f32();
    if (!std::isfinite(img.re.data[i]) || !std::isfinite(img.im.data[i])) {
      throw Error(ErrorCode::non_finite, "non-finite SLC sample at pixel " + std::to_string(i));
    }
  }
  return img;
}

inline void save_slc(const ComplexImage& img, const std::filesystem::path& path) {
  write_file(path, encode_slc(img));
}

inline ComplexImage load_slc(const std::filesystem::path& path) { return decode_slc(read_file(path)); }

// ---------------------------------------------------------------------------
// Reflectivity container: "RFL1", u32 width, u32 height, u8 convolved flag, f32 values.

inline std::vector<std::uint8_t> encode_reflectivity(const ReflectivityImage& img) {
  ByteWriter w;
  w.magic(kReflectivityMagic);
  w.u32(static_cast<std::uint32_t>(img.width()));
  w.u32(static_cast<std::uint32_t>(img.height()));
  w.u8(img.convolved ? 1 : 0);
  for (float v : img.values.data) w.f32(v);
  return w.take();
}

inline ReflectivityImage decode_reflectivity(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.expect_magic(kReflectivityMagic);
  const std::uint32_t width = r.u32(), height = r.u32();
  require(width >= 1 && height >= 1, ErrorCode::invalid_argument, "RFL dims must be >= 1");
  ReflectivityImage img;
  img.convolved = r.u8() != 0;
  r.need(static_cast<std::size_t>(width) * height * 4, "RFL values");
  img.values = FloatGrid(width, height);
  for (float& v : img.values.data) {
    v = r.f32();
    if (!std::isfinite(v)) throw Error(ErrorCode::non_finite, "non-finite reflectivity value");
  }
  return img;
}

inline void save_reflectivity(const ReflectivityImage& img, const std::filesystem::path& path) {
  write_file(path, encode_reflectivity(img));
}

inline ReflectivityImage load_reflectivity(const std::filesystem::path& path) {
  return decode_reflectivity(read_file(path));
}

// ---------------------------------------------------------------------------
// Tensor container: "TNS1", u32 count, then per entry
//   u16 name length, UTF-8 name, u8 ndim, u32 dims[ndim], f32 payload.

struct TensorEntry {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> data;

  std::size_t element_count() const {
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    return n;
  }
  friend bool operator==(const TensorEntry&, const TensorEntry&) = default;
};

class TensorContainer {
 public:
  void add(std::string name, std::vector<std::uint32_t> dims, std::vector<float> data) {
    TensorEntry e{std::move(name), std::move(dims), std::move(data)};
    require(!e.name.empty() && e.name.size() <= UINT16_MAX, ErrorCode::invalid_argument,
            "tensor name length out of range");
    require(e.dims.size() <= UINT8_MAX, ErrorCode::invalid_argument, "too many tensor dims");
    for (auto d : e.dims) require(d > 0, ErrorCode::invalid_argument, "tensor dims must be positive");
    require(e.element_count() == e.data.size(), ErrorCode::dimension_mismatch,
            "tensor '" + e.name + "' payload does not match dims");
    require(find(e.name) == nullptr, ErrorCode::invalid_argument, "duplicate tensor name '" + e.name + "'");
    entries_.push_back(std::move(e));
  }

  const TensorEntry* find(std::string_view name) const {
    for (const auto& e : entries_) {
      if (e.name == name) return &e;
    }
    return nullptr;
  }

  const TensorEntry& at(std::string_view name) const {
    const auto* e = find(name);
    if (e == nullptr) throw Error(ErrorCode::invalid_argument, "missing tensor '" + std::string(name) + "'");
    return *e;
  }

  const std::vector<TensorEntry>& entries() const noexcept { return entries_; }

  friend bool operator==(const TensorContainer&, const TensorContainer&) = default;

 private:
  std::vector<TensorEntry> entries_;
};

inline void encode_tensors(const TensorContainer& tc, ByteWriter& w) {
  w.magic(kTensorMagic);
  w.u32(static_cast<std::uint32_t>(tc.entries().size()));
  for (const auto& e : tc.entries()) {
    w.u16(static_cast<std::uint16_t>(e.name.size()));
    w.text(e.name);
    w.u8(static_cast<std::uint8_t>(e.dims.size()));
    for (auto d : e.dims) w.u32(d);
    for (float v : e.data) w.f32(v);
  }
}

inline std::vector<std::uint8_t> encode_tensors(const TensorContainer& tc) {
  ByteWriter w;
  encode_tensors(tc, w);
  return w.take();
}

inline TensorContainer decode_tensors(ByteReader& r) {
  r.expect_magic(kTensorMagic);
  const std::uint32_t count = r.u32();
  TensorContainer tc;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint16_t name_len = r.u16();
    std::string name = r.text(name_len);
    const std::uint8_t ndim = r.u8();
    std::vector<std::uint32_t> dims(ndim);
    std::size_t n = 1;
    for (auto& d : dims) {
      d = r.u32();
      n *= d;
    }
    r.need(n * 4, "tensor payload");
    std::vector<float> data(n);
    for (float& v : data) v = r.f32();
    tc.add(std::move(name), std::move(dims), std::move(data));
  }
  return tc;
}

inline TensorContainer decode_tensors(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  return decode_tensors(r);
}

inline void save_tensors(const TensorContainer& tc, const std::filesystem::path& path) {
  write_file(path, encode_tensors(tc));
}

inline TensorContainer load_tensors(const std::filesystem::path& path) {
  return decode_tensors(read_file(path));
}

// ---------------------------------------------------------------------------
// PNG

inline Grid<std::uint8_t> read_png_gray8(const std::filesystem::path& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.string().c_str())) {
    throw Error(ErrorCode::io, "cannot read PNG '" + path.string() + "': " + image.message);
  }
  if (image.format != PNG_FORMAT_GRAY) {
    png_image_free(&image);
    throw Error(ErrorCode::invalid_argument, "PNG '" + path.string() + "' is not 8-bit grayscale");
  }
  Grid<std::uint8_t> out(image.width, image.height);
  if (!png_image_finish_read(&image, nullptr, out.data.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw Error(ErrorCode::io, "PNG decode failed: " + msg);
  }
  return out;
}

inline void write_png_gray8(const Grid<std::uint8_t>& pixels, const std::filesystem::path& path) {
  if (path.empty()) throw Error(ErrorCode::io, "empty output path");
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(pixels.width);
  image.height = static_cast<png_uint_32>(pixels.height);
  image.format = PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&image, path.string().c_str(), 0, pixels.data.data(), 0, nullptr)) {
    throw Error(ErrorCode::io, "cannot write PNG '" + path.string() + "': " + image.message);
  }
}

/// r = (g/255 · peak)², floored at `floor`.
inline ReflectivityImage grayscale_to_reflectivity(const Grid<std::uint8_t>& gray, double amplitude_peak,
                                                   float floor = kReflectivityFloor) {
  require(amplitude_peak > 0, ErrorCode::invalid_argument, "amplitude_peak must be positive");
  ReflectivityImage r;
  r.values = FloatGrid(gray.width, gray.height);
  for (std::size_t i = 0; i < gray.size(); ++i) {
    const double amp = static_cast<double>(gray.data[i]) / 255.0 * amplitude_peak;
    r.values.data[i] = std::max(static_cast<float>(amp * amp), floor);
  }
  return r;
}

inline ReflectivityImage ingest_grayscale(const std::filesystem::path& path, double amplitude_peak = 255.0,
                                          float floor = kReflectivityFloor) {
  return grayscale_to_reflectivity(read_png_gray8(path), amplitude_peak, floor);
}

enum class PngMode { amplitude_quantile, log };

inline constexpr double kExportQuantile = 0.995;

/// Nearest-rank quantile of `values` (q in [0, 1]).
inline double quantile(std::vector<double> values, double q) {
  require(!values.empty(), ErrorCode::invalid_argument, "quantile of empty set");
  const auto n = values.size();
  auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(n)));
  rank = std::clamp<std::size_t>(rank, 1, n);
  std::nth_element(values.begin(), values.begin() + static_cast<long>(rank - 1), values.end());
  return values[rank - 1];
}

/// 8-bit rendering of a single-channel grid.
///  - amplitude_quantile: clip at the 99.5th percentile q, pixel = round(255·v/q).
///  - log: log values stretched between their 0.5th and 99.5th percentiles.
inline Grid<std::uint8_t> render_8bit(const FloatGrid& values, PngMode mode) {
  Grid<std::uint8_t> out(values.width, values.height, 0);
  for (float v : values.data) require(std::isfinite(v), ErrorCode::non_finite, "cannot render non-finite value");
  if (values.empty()) return out;

  if (mode == PngMode::amplitude_quantile) {
    std::vector<double> all(values.data.begin(), values.data.end());
    const double clip = quantile(std::move(all), kExportQuantile);
    if (clip <= 0) return out;
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double t = std::clamp(static_cast<double>(values.data[i]), 0.0, clip) / clip;
      out.data[i] = static_cast<std::uint8_t>(std::lround(255.0 * t));
    }
    return out;
  }

  std::vector<double> logs;
  for (float v : values.data) {
    if (v > 0) logs.push_back(std::log(static_cast<double>(v)));
  }
  if (logs.empty()) return out;
  const double lo = quantile(logs, 1.0 - kExportQuantile);
  const double hi = quantile(logs, kExportQuantile);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const float v = values.data[i];
    if (v <= 0) continue;
    if (hi <= lo) {
      out.data[i] = 255;
      continue;
    }
    const double t = (std::clamp(std::log(static_cast<double>(v)), lo, hi) - lo) / (hi - lo);
    out.data[i] = static_cast<std::uint8_t>(std::lround(255.0 * t));
  }
  return out;
}

inline void export_png(const FloatGrid& values, PngMode mode, const std::filesystem::path& path) {
  write_png_gray8(render_8bit(values, mode), path);
}

}  // namespace merlin::io
