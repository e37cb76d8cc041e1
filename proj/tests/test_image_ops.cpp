// Copyright 2026 The mmfuse Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <random>
#include <vector>

#include "mmfuse/image_ops.hpp"

using namespace mmfuse;

namespace {

GrayImage random_image(int h, int w, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> d(0, 255);
  GrayImage img(h, w);
  for (auto& p : img.px) p = static_cast<uint8_t>(d(rng));
  return img;
}

// Naive oracle, written independently of the library implementation: for
// every output pixel, recompute the relevant tile histograms from scratch and
// equalize with the same mapping convention (uniform histogram -> identity;
// single-intensity tile -> identity), no clipping.
struct OracleTiler {
  const GrayImage& img;
  int tr, tc;

  int y_lo(int r) const { return r * img.h / tr; }
  int x_lo(int c) const { return c * img.w / tc; }
  double center_y(int r) const { return 0.5 * (y_lo(r) + y_lo(r + 1) - 1); }
  double center_x(int c) const { return 0.5 * (x_lo(c) + x_lo(c + 1) - 1); }

  double equalize(int r, int c, uint8_t v) const {
    std::vector<int> hist(256, 0);
    for (int y = y_lo(r); y < y_lo(r + 1); ++y) {
      for (int x = x_lo(c); x < x_lo(c + 1); ++x) ++hist[img.at(y, x)];
    }
    int distinct = 0;
    for (int b = 0; b < 256; ++b) distinct += hist[b] > 0;
    if (distinct <= 1) return v;
    double n = 0;
    for (int b = 0; b < 256; ++b) n += hist[b];
    double cdf = 0;
    for (int b = 0; b <= v; ++b) cdf += hist[b];
    const double base = n / 256.0;
    const double mapped = 255.0 * (cdf - base) / (n - base);
    const double clamped = std::min(255.0, std::max(0.0, mapped));
    return std::floor(clamped + 0.5);
  }
};

GrayImage clahe_oracle(const GrayImage& img, int tr, int tc) {
  OracleTiler t{img, tr, tc};
  GrayImage out(img.h, img.w);
  for (int y = 0; y < img.h; ++y) {
    for (int x = 0; x < img.w; ++x) {
      // Locate bracketing tile centers, clamped at borders.
      int r0 = 0;
      while (r0 < tr - 1 && t.center_y(r0 + 1) <= y) ++r0;
      int r1 = std::min(r0 + 1, tr - 1);
      double wy = 0.0;
      if (y <= t.center_y(r0) || r1 == r0) {
        r1 = r0;
      } else {
        wy = (y - t.center_y(r0)) / (t.center_y(r1) - t.center_y(r0));
      }
      int c0 = 0;
      while (c0 < tc - 1 && t.center_x(c0 + 1) <= x) ++c0;
      int c1 = std::min(c0 + 1, tc - 1);
      double wx = 0.0;
      if (x <= t.center_x(c0) || c1 == c0) {
        c1 = c0;
      } else {
        wx = (x - t.center_x(c0)) / (t.center_x(c1) - t.center_x(c0));
      }
      const uint8_t v = img.at(y, x);
      const double m00 = t.equalize(r0, c0, v);
      const double m01 = t.equalize(r0, c1, v);
      const double m10 = t.equalize(r1, c0, v);
      const double m11 = t.equalize(r1, c1, v);
      const double top = m00 + wx * (m01 - m00);
      const double bot = m10 + wx * (m11 - m10);
      out.at(y, x) = static_cast<uint8_t>(
          std::floor(std::min(255.0, std::max(0.0, top + wy * (bot - top))) +
                     0.5));
    }
  }
  return out;
}

}  // namespace

TEST_CASE("constant image is a fixed point") {
  for (uint8_t level : {uint8_t{0}, uint8_t{77}, uint8_t{255}}) {
    GrayImage img(64, 48, level);
    for (double clip : {1.0, 2.0, kClipInf}) {
      ClaheParams p{.tile_rows = 8, .tile_cols = 8, .clip_limit = clip};
      CHECK(clahe(img, p) == img);
    }
  }
}

TEST_CASE("clip_limit 1.0 output within one intensity level of input") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 5; ++trial) {
    GrayImage img = random_image(64, 64, rng);
    ClaheParams p{.tile_rows = 4, .tile_cols = 4, .clip_limit = 1.0};
    GrayImage out = clahe(img, p);
    for (size_t i = 0; i < img.px.size(); ++i) {
      CHECK(std::abs(int(out.px[i]) - int(img.px[i])) <= 1);
    }
  }
}

TEST_CASE("64x64 / 2x2 tiles / infinite clip matches the naive oracle") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    GrayImage img = random_image(64, 64, rng);
    ClaheParams p{.tile_rows = 2, .tile_cols = 2, .clip_limit = kClipInf};
    CHECK(clahe(img, p) == clahe_oracle(img, 2, 2));
  }
  // Non-divisible sizes and other grids too.
  GrayImage odd = random_image(37, 53, rng);
  ClaheParams p3{.tile_rows = 3, .tile_cols = 4, .clip_limit = kClipInf};
  CHECK(clahe(odd, p3) == clahe_oracle(odd, 3, 4));
}

TEST_CASE("1x1 grid with infinite clip equals global histogram equalization") {
  std::mt19937_64 rng(9);
  GrayImage img = random_image(48, 40, rng);
  ClaheParams p{.tile_rows = 1, .tile_cols = 1, .clip_limit = kClipInf};
  CHECK(clahe(img, p) == clahe_oracle(img, 1, 1));
}

TEST_CASE("per-tile mapping is monotone in intensity") {
  std::mt19937_64 rng(13);
  GrayImage img = random_image(32, 32, rng);
  ClaheParams p{.tile_rows = 1, .tile_cols = 1, .clip_limit = 2.0};
  GrayImage out = clahe(img, p);
  // With one tile the mapping is a single LUT; monotone means equal inputs
  // map equal and ordering is preserved.
  std::vector<int> lut(256, -1);
  for (size_t i = 0; i < img.px.size(); ++i) {
    if (lut[img.px[i]] == -1) lut[img.px[i]] = out.px[i];
    CHECK(lut[img.px[i]] == out.px[i]);
  }
  int prev = -1;
  for (int v = 0; v < 256; ++v) {
    if (lut[v] == -1) continue;
    CHECK(lut[v] >= prev);
    prev = lut[v];
  }
}

TEST_CASE("clahe is deterministic and rejects bad params") {
  std::mt19937_64 rng(21);
  GrayImage img = random_image(40, 40, rng);
  ClaheParams p;
  CHECK(clahe(img, p) == clahe(img, p));
  ClaheParams bad_clip{.tile_rows = 2, .tile_cols = 2, .clip_limit = 0.5};
  CHECK_THROWS_AS(clahe(img, bad_clip), MmfError);
  ClaheParams bad_grid{.tile_rows = 0, .tile_cols = 2, .clip_limit = 2.0};
  CHECK_THROWS_AS(clahe(img, bad_grid), MmfError);
}

TEST_CASE("pgm round trip") {
  std::mt19937_64 rng(31);
  GrayImage img = random_image(17, 23, rng);
  const std::string path = "/tmp/mmfuse_test_roundtrip.pgm";
  write_pgm(img, path);
  CHECK(read_pgm(path) == img);
  std::remove(path.c_str());
  CHECK_THROWS_AS(read_pgm("/tmp/mmfuse_no_such_file.pgm"), MmfError);
}

TEST_CASE("eval transform: identity resize, centered crop, determinism") {
  GrayImage img(256, 256, 0);
  img.at(16, 16) = 200;  // lands at output (0,0) after the (16,16) offset
  img.at(128, 128) = 123;
  std::vector<double> out = eval_transform(img);
  CHECK(out.size() == size_t(224) * 224);
  CHECK(out[0] == doctest::Approx(200.0 / 255.0));
  CHECK(out[size_t(128 - 16) * 224 + (128 - 16)] ==
        doctest::Approx(123.0 / 255.0));
  CHECK(eval_transform(img) == out);
  // Constant image -> constant output regardless of source size.
  GrayImage flat(300, 180, 99);
  std::vector<double> fo = eval_transform(flat);
  for (double v : fo) CHECK(v == doctest::Approx(99.0 / 255.0));
}

TEST_CASE("train transform: shape, range, and seeded reproducibility") {
  std::mt19937_64 rng(41);
  GrayImage img = random_image(256, 256, rng);
  AugmentParams params;
  std::mt19937_64 r1(7), r2(7), r3(8);
  std::vector<double> a = train_transform(img, params, r1);
  std::vector<double> b = train_transform(img, params, r2);
  CHECK(a.size() == size_t(224) * 224);
  CHECK(a == b);
  for (double v : a) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  // Different seeds almost surely differ.
  std::vector<double> c = train_transform(img, params, r3);
  CHECK(a != c);
}
