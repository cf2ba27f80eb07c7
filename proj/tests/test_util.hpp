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

#include <atomic>
#include <filesystem>
#include <string>

#include <unistd.h>

#include <gtest/gtest.h>

#include "merlin/error.hpp"
#include "merlin/image.hpp"
#include "merlin/rng.hpp"

namespace merlin::testing {

/// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    std::string tag = info ? std::string(info->test_suite_name()) + "_" + info->name() : "scratch";
    for (char& c : tag) {
      if (c == '/') c = '_';
    }
    path_ = std::filesystem::temp_directory_path() /
            ("merlin_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const noexcept { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline ComplexImage random_complex(std::size_t w, std::size_t h, std::uint64_t seed, double scale = 1.0) {
  RngStream rng(seed, 99);
  ComplexImage z(w, h);
  for (std::size_t i = 0; i < z.size(); ++i) {
    z.re.data[i] = static_cast<float>(scale * rng.normal());
    z.im.data[i] = static_cast<float>(scale * rng.normal());
  }
  return z;
}

inline FloatGrid constant_grid(std::size_t w, std::size_t h, float v) { return FloatGrid(w, h, v); }

}  // namespace merlin::testing

/// Asserts that `stmt` throws merlin::Error with the given code.
#define EXPECT_MERLIN_ERROR(stmt, expected_code)                                    \
  do {                                                                              \
    bool merlin_thrown_ = false;                                                    \
    try {                                                                           \
      stmt;                                                                         \
    } catch (const ::merlin::Error& e) {                                            \
      merlin_thrown_ = true;                                                        \
      EXPECT_EQ(e.code(), expected_code) << e.what();                               \
    }                                                                               \
    EXPECT_TRUE(merlin_thrown_) << "expected merlin::Error from " #stmt;            \
  } while (0)
