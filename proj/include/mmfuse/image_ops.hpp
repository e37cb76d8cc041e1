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

#ifndef MMFUSE_IMAGE_OPS_HPP_
#define MMFUSE_IMAGE_OPS_HPP_

#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "mmfuse/tensor.hpp"

namespace mmfuse {

struct GrayImage {
  int h = 0;
  int w = 0;
  std::vector<uint8_t> px;  // row-major

  GrayImage() = default;
  GrayImage(int h_, int w_, uint8_t fill = 0)
      : h(h_), w(w_), px(static_cast<size_t>(h_) * w_, fill) {}
  uint8_t& at(int y, int x) { return px[static_cast<size_t>(y) * w + x]; }
  uint8_t at(int y, int x) const { return px[static_cast<size_t>(y) * w + x]; }
  bool operator==(const GrayImage&) const = default;
};

// 8-bit binary (P5) PGM.
void write_pgm(const GrayImage& img, const std::string& path);
GrayImage read_pgm(const std::string& path);

struct ClaheParams {
  int tile_rows = 8;
  int tile_cols = 8;
  // Multiple of the average bin count; >= 1. Infinity disables clipping.
  double clip_limit = 2.0;
};

// Contrast-limited adaptive histogram equalization. Per tile: clipped 256-bin
// histogram with iterative uniform redistribution of the excess, then a CDF
// mapping normalized so a uniform histogram maps every level to itself;
// output pixels bilinearly interpolate the mappings of the 4 nearest tile
// centers (nearest pair/single at borders). A single-intensity tile keeps the
// identity mapping: equalizing a flat region is ill-posed and would only
// amplify noise.
GrayImage clahe(const GrayImage& img, const ClaheParams& params);

struct AugmentParams {
  double flip_prob = 0.5;
  double rotation_deg = 15.0;
  double scale_lo = 0.9;
  double scale_hi = 1.1;
  double shear_deg = 10.0;
  double translate_frac = 0.1;
  int resize = 256;  // crop <= resize
  int crop = 224;
};

// Resize, random flip, random affine, random crop; values in [0,1].
std::vector<double> train_transform(const GrayImage& img,
                                    const AugmentParams& params,
                                    std::mt19937_64& rng);

// Resize then center crop; deterministic; values in [0,1]. Defaults follow
// the standard 256 -> 224 evaluation pipeline.
std::vector<double> eval_transform(const GrayImage& img, int resize = 256,
                                   int crop = 224);

// Bilinear resize.
GrayImage resize_bilinear(const GrayImage& img, int out_h, int out_w);

constexpr double kClipInf = std::numeric_limits<double>::infinity();
constexpr int kEvalCrop = 224;

}  // namespace mmfuse

#endif  // MMFUSE_IMAGE_OPS_HPP_
