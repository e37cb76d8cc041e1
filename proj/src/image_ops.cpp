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

#include "mmfuse/image_ops.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace mmfuse {

void write_pgm(const GrayImage& img, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw MmfError("write_pgm: cannot open " + path);
  os << "P5\n" << img.w << ' ' << img.h << "\n255\n";
  os.write(reinterpret_cast<const char*>(img.px.data()),
           static_cast<std::streamsize>(img.px.size()));
  if (!os) throw MmfError("write_pgm: write failed for " + path);
}

namespace {

int pgm_token(std::istream& is) {
  // Skips whitespace and '#' comment lines.
  int c = is.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = is.get();
    } else if (!std::isspace(c)) {
      break;
    }
    c = is.get();
  }
  if (c == EOF) throw MmfError("read_pgm: truncated header");
  int v = 0;
  while (c != EOF && std::isdigit(c)) {
    v = v * 10 + (c - '0');
    c = is.get();
  }
  return v;
}

}  // namespace

GrayImage read_pgm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw MmfError("read_pgm: cannot open " + path);
  char m0 = static_cast<char>(is.get());
  char m1 = static_cast<char>(is.get());
  if (m0 != 'P' || m1 != '5') throw MmfError("read_pgm: not a P5 PGM: " + path);
  const int w = pgm_token(is);
  const int h = pgm_token(is);
  const int maxval = pgm_token(is);
  if (w <= 0 || h <= 0 || maxval != 255) {
    throw MmfError("read_pgm: unsupported header in " + path);
  }
  GrayImage img(h, w);
  is.read(reinterpret_cast<char*>(img.px.data()),
          static_cast<std::streamsize>(img.px.size()));
  if (is.gcount() != static_cast<std::streamsize>(img.px.size())) {
    throw MmfError("read_pgm: truncated pixel data in " + path);
  }
  return img;
}

namespace {

using Lut = std::array<uint8_t, 256>;

// Clip + redistribute, then map through a baseline-subtracted CDF. The
// baseline term makes a uniform histogram map to the identity, so
// clip_limit = 1 (everything clipped flat) leaves the image unchanged.
Lut tile_lut(std::array<int64_t, 256> hist, int64_t n, double clip_limit) {
  Lut lut;
  int nonzero = 0;
  for (int v = 0; v < 256; ++v) {
    if (hist[v] > 0) ++nonzero;
  }
  if (nonzero <= 1) {
    // Flat tile: equalization is ill-posed; keep the identity.
    for (int v = 0; v < 256; ++v) lut[v] = static_cast<uint8_t>(v);
    return lut;
  }
  if (std::isfinite(clip_limit)) {
    // Ceiling so 256 bins can always hold all n pixels (otherwise the
    // redistribution below could never drain the excess).
    const int64_t limit = std::max<int64_t>(
        1, static_cast<int64_t>(
               std::ceil(clip_limit * static_cast<double>(n) / 256.0)));
    int64_t excess = 0;
    for (int v = 0; v < 256; ++v) {
      if (hist[v] > limit) {
        excess += hist[v] - limit;
        hist[v] = limit;
      }
    }
    // Redistribute uniformly; iterate because topping bins up may re-exceed
    // the limit. Terminates: each pass strictly shrinks the excess.
    while (excess >= 256) {
      const int64_t share = excess / 256;
      excess = 0;
      for (int v = 0; v < 256; ++v) {
        hist[v] += share;
        if (hist[v] > limit) {
          excess += hist[v] - limit;
          hist[v] = limit;
        }
      }
    }
    for (int v = 0; excess > 0; v = (v + 1) % 256) {
      if (hist[v] < limit) {
        ++hist[v];
        --excess;
      }
    }
  }
  const double base = static_cast<double>(n) / 256.0;
  int64_t cdf = 0;
  for (int v = 0; v < 256; ++v) {
    cdf += hist[v];
    const double mapped =
        255.0 * (static_cast<double>(cdf) - base) / (static_cast<double>(n) - base);
    const double clamped = std::min(255.0, std::max(0.0, mapped));
    lut[v] = static_cast<uint8_t>(std::floor(clamped + 0.5));
  }
  return lut;
}

}  // namespace

GrayImage clahe(const GrayImage& img, const ClaheParams& params) {
  if (img.h <= 0 || img.w <= 0) throw MmfError("clahe: empty image");
  if (params.tile_rows < 1 || params.tile_cols < 1) {
    throw MmfError("clahe: tile grid must be at least 1x1");
  }
  if (!(params.clip_limit >= 1.0)) {
    throw MmfError("clahe: clip_limit must be >= 1");
  }
  const int tr = std::min(params.tile_rows, img.h);
  const int tc = std::min(params.tile_cols, img.w);

  // Tile r spans rows [r*h/tr, (r+1)*h/tr); last tiles absorb the remainder.
  auto row_lo = [&](int r) { return static_cast<int>(static_cast<int64_t>(r) * img.h / tr); };
  auto col_lo = [&](int c) { return static_cast<int>(static_cast<int64_t>(c) * img.w / tc); };

  std::vector<Lut> luts(static_cast<size_t>(tr) * tc);
  std::vector<double> centers_y(tr), centers_x(tc);
  for (int r = 0; r < tr; ++r) {
    for (int c = 0; c < tc; ++c) {
      std::array<int64_t, 256> hist{};
      const int y0 = row_lo(r), y1 = row_lo(r + 1);
      const int x0 = col_lo(c), x1 = col_lo(c + 1);
      for (int y = y0; y < y1; ++y) {
        for (int x = x0; x < x1; ++x) ++hist[img.at(y, x)];
      }
      const int64_t n = static_cast<int64_t>(y1 - y0) * (x1 - x0);
      luts[static_cast<size_t>(r) * tc + c] = tile_lut(hist, n, params.clip_limit);
      if (c == 0) centers_y[r] = 0.5 * (y0 + y1 - 1);
      if (r == 0) centers_x[c] = 0.5 * (x0 + x1 - 1);
    }
  }

  GrayImage out(img.h, img.w);
  for (int y = 0; y < img.h; ++y) {
    // Bracketing tile rows r0 <= y <= r1 by center; clamp at the borders.
    int r1 = 0;
    while (r1 < tr - 1 && centers_y[r1] < y) ++r1;
    int r0 = (r1 > 0 && centers_y[r1] > y) ? r1 - 1 : r1;
    const double wy = (centers_y[r1] == centers_y[r0])
                          ? 0.0
                          : (y - centers_y[r0]) / (centers_y[r1] - centers_y[r0]);
    for (int x = 0; x < img.w; ++x) {
      int c1 = 0;
      while (c1 < tc - 1 && centers_x[c1] < x) ++c1;
      int c0 = (c1 > 0 && centers_x[c1] > x) ? c1 - 1 : c1;
      const double wx = (centers_x[c1] == centers_x[c0])
                            ? 0.0
                            : (x - centers_x[c0]) / (centers_x[c1] - centers_x[c0]);
      const uint8_t v = img.at(y, x);
      const double m00 = luts[static_cast<size_t>(r0) * tc + c0][v];
      const double m01 = luts[static_cast<size_t>(r0) * tc + c1][v];
      const double m10 = luts[static_cast<size_t>(r1) * tc + c0][v];
      const double m11 = luts[static_cast<size_t>(r1) * tc + c1][v];
      const double top = m00 + wx * (m01 - m00);
      const double bot = m10 + wx * (m11 - m10);
      const double val = top + wy * (bot - top);
      out.at(y, x) = static_cast<uint8_t>(
          std::floor(std::min(255.0, std::max(0.0, val)) + 0.5));
    }
  }
  return out;
}

GrayImage resize_bilinear(const GrayImage& img, int out_h, int out_w) {
  if (out_h <= 0 || out_w <= 0) throw MmfError("resize_bilinear: bad size");
  GrayImage out(out_h, out_w);
  const double sy = static_cast<double>(img.h) / out_h;
  const double sx = static_cast<double>(img.w) / out_w;
  for (int y = 0; y < out_h; ++y) {
    // Align pixel centers between the grids.
    double fy = (y + 0.5) * sy - 0.5;
    fy = std::min(std::max(fy, 0.0), static_cast<double>(img.h - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, img.h - 1);
    const double wy = fy - y0;
    for (int x = 0; x < out_w; ++x) {
      double fx = (x + 0.5) * sx - 0.5;
      fx = std::min(std::max(fx, 0.0), static_cast<double>(img.w - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, img.w - 1);
      const double wx = fx - x0;
      const double top = img.at(y0, x0) + wx * (img.at(y0, x1) - img.at(y0, x0));
      const double bot = img.at(y1, x0) + wx * (img.at(y1, x1) - img.at(y1, x0));
      out.at(y, x) =
          static_cast<uint8_t>(std::floor(top + (bot - top) * wy + 0.5));
    }
  }
  return out;
}

namespace {

constexpr double kPi = 3.14159265358979323846;

std::vector<double> crop_to_unit(const GrayImage& img, int y0, int x0,
                                 int crop) {
  std::vector<double> out(static_cast<size_t>(crop) * crop);
  for (int y = 0; y < crop; ++y) {
    for (int x = 0; x < crop; ++x) {
      out[static_cast<size_t>(y) * crop + x] = img.at(y0 + y, x0 + x) / 255.0;
    }
  }
  return out;
}

}  // namespace

std::vector<double> train_transform(const GrayImage& img,
                                    const AugmentParams& params,
                                    std::mt19937_64& rng) {
  if (params.crop > params.resize) {
    throw MmfError("train_transform: crop exceeds resize");
  }
  const int kResize = params.resize;
  GrayImage base = resize_bilinear(img, kResize, kResize);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const bool flip = unit(rng) < params.flip_prob;
  std::uniform_real_distribution<double> rot_d(-params.rotation_deg,
                                               params.rotation_deg);
  std::uniform_real_distribution<double> scale_d(params.scale_lo,
                                                 params.scale_hi);
  std::uniform_real_distribution<double> shear_d(-params.shear_deg,
                                                 params.shear_deg);
  std::uniform_real_distribution<double> trans_d(-params.translate_frac,
                                                 params.translate_frac);
  const double theta = rot_d(rng) * kPi / 180.0;
  const double scale = scale_d(rng);
  const double shear = shear_d(rng) * kPi / 180.0;
  const double ty = trans_d(rng) * kResize;
  const double tx = trans_d(rng) * kResize;

  // Inverse map: for each output pixel, sample the source. Rotation+shear
  // about the image center, then scale, then translate.
  const double cos_t = std::cos(theta), sin_t = std::sin(theta);
  const double tan_s = std::tan(shear);
  const double cx = (kResize - 1) / 2.0, cy = (kResize - 1) / 2.0;
  GrayImage warped(kResize, kResize);
  for (int y = 0; y < kResize; ++y) {
    for (int x = 0; x < kResize; ++x) {
      // Undo translation and scale, then rotate back and un-shear.
      const double uy = (y - cy - ty) / scale;
      const double ux = (x - cx - tx) / scale;
      double sx = cos_t * ux + sin_t * uy;
      double sy = -sin_t * ux + cos_t * uy;
      sx -= tan_s * sy;
      sx += cx;
      sy += cy;
      if (sx < 0 || sy < 0 || sx > kResize - 1 || sy > kResize - 1) {
        warped.at(y, x) = 0;
        continue;
      }
      const int x0 = static_cast<int>(sx), y0 = static_cast<int>(sy);
      const int x1 = std::min(x0 + 1, kResize - 1);
      const int y1 = std::min(y0 + 1, kResize - 1);
      const double wx = sx - x0, wy = sy - y0;
      const double top =
          base.at(y0, x0) + wx * (base.at(y0, x1) - base.at(y0, x0));
      const double bot =
          base.at(y1, x0) + wx * (base.at(y1, x1) - base.at(y1, x0));
      warped.at(y, x) =
          static_cast<uint8_t>(std::floor(top + (bot - top) * wy + 0.5));
    }
  }
  if (flip) {
    for (int y = 0; y < kResize; ++y) {
      for (int x = 0; x < kResize / 2; ++x) {
        std::swap(warped.at(y, x), warped.at(y, kResize - 1 - x));
      }
    }
  }
  std::uniform_int_distribution<int> off(0, kResize - params.crop);
  const int oy = off(rng), ox = off(rng);
  return crop_to_unit(warped, oy, ox, params.crop);
}

std::vector<double> eval_transform(const GrayImage& img, int resize,
                                   int crop) {
  if (crop > resize) throw MmfError("eval_transform: crop exceeds resize");
  GrayImage base = resize_bilinear(img, resize, resize);
  const int off = (resize - crop) / 2;
  return crop_to_unit(base, off, off, crop);
}

}  // namespace mmfuse
