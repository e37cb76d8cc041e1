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

#include <filesystem>
#include <fstream>
#include <random>

#include "mmfuse/checkpoint.hpp"
#include "mmfuse/nn.hpp"

using namespace mmfuse;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("mmf_ckpt_" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

ParamMap make_params(std::mt19937_64& rng) {
  ParamMap params;
  params.emplace("linear.weight", Tensor::randn({3, 4}, rng, 0.5));
  params.emplace("linear.bias", Tensor::zeros({1, 4}));
  params.emplace("scale", Tensor::constant({1, 1}, 2.5));
  return params;
}

}  // namespace

TEST_CASE("checkpoint round trip restores params and buffers exactly") {
  TempDir tmp;
  std::mt19937_64 rng(7);
  ParamMap saved = make_params(rng);
  ArrayX buf(3);
  buf << 1.5, -2.0, 0.25;
  BufferMap bufs;
  bufs.emplace("bn.running_mean", &buf);
  const std::string path = (tmp.path / "a.ckpt").string();
  save_checkpoint(path, saved, bufs, "deadbeef00000000");

  ParamMap loaded = make_params(rng);  // different random values
  ArrayX buf2 = ArrayX::Zero(3);
  BufferMap bufs2;
  bufs2.emplace("bn.running_mean", &buf2);
  load_checkpoint(path, loaded, bufs2, "deadbeef00000000");

  for (const auto& [name, p] : saved) {
    const Tensor& q = loaded.at(name);
    REQUIRE(q.shape() == p.shape());
    for (int64_t i = 0; i < p.size(); ++i) {
      CHECK(q.value()(i) == p.value()(i));  // bitwise, not approximate
    }
  }
  CHECK((buf2 == buf).all());
  CHECK(checkpoint_hash(path) == "deadbeef00000000");
}

TEST_CASE("checkpoint refuses a config hash mismatch") {
  TempDir tmp;
  std::mt19937_64 rng(7);
  ParamMap params = make_params(rng);
  BufferMap bufs;
  const std::string path = (tmp.path / "a.ckpt").string();
  save_checkpoint(path, params, bufs, "aaaa");
  CHECK_THROWS_AS(load_checkpoint(path, params, bufs, "bbbb"), MmfError);
}

TEST_CASE("checkpoint refuses a shape mismatch") {
  TempDir tmp;
  std::mt19937_64 rng(7);
  ParamMap params = make_params(rng);
  BufferMap bufs;
  const std::string path = (tmp.path / "a.ckpt").string();
  save_checkpoint(path, params, bufs, "h");

  ParamMap wrong;
  wrong.emplace("linear.weight", Tensor::zeros({4, 3}));  // transposed
  wrong.emplace("linear.bias", Tensor::zeros({1, 4}));
  wrong.emplace("scale", Tensor::zeros({1, 1}));
  CHECK_THROWS_AS(load_checkpoint(path, wrong, bufs, "h"), MmfError);
}

TEST_CASE("checkpoint refuses unknown and missing tensor names") {
  TempDir tmp;
  std::mt19937_64 rng(7);
  ParamMap params = make_params(rng);
  BufferMap bufs;
  const std::string path = (tmp.path / "a.ckpt").string();
  save_checkpoint(path, params, bufs, "h");

  SUBCASE("file holds a name the model does not have") {
    ParamMap renamed;
    renamed.emplace("other.weight", Tensor::zeros({3, 4}));
    renamed.emplace("linear.bias", Tensor::zeros({1, 4}));
    renamed.emplace("scale", Tensor::zeros({1, 1}));
    CHECK_THROWS_AS(load_checkpoint(path, renamed, bufs, "h"), MmfError);
  }
  SUBCASE("model holds a name the file does not have") {
    ParamMap extra = make_params(rng);
    extra.emplace("extra.weight", Tensor::zeros({2, 2}));
    CHECK_THROWS_AS(load_checkpoint(path, extra, bufs, "h"), MmfError);
  }
}

TEST_CASE("checkpoint refuses a corrupt or truncated file") {
  TempDir tmp;
  std::mt19937_64 rng(7);
  ParamMap params = make_params(rng);
  BufferMap bufs;
  const std::string path = (tmp.path / "a.ckpt").string();
  save_checkpoint(path, params, bufs, "h");

  SUBCASE("bad magic") {
    auto bytes = [&] {
      std::ifstream is(path, std::ios::binary);
      return std::string((std::istreambuf_iterator<char>(is)),
                         std::istreambuf_iterator<char>());
    }();
    bytes[0] = 'X';
    std::ofstream(path, std::ios::binary) << bytes;
    CHECK_THROWS_AS(load_checkpoint(path, params, bufs, "h"), MmfError);
  }
  SUBCASE("truncated tensor data") {
    fs::resize_file(path, fs::file_size(path) - 8);
    CHECK_THROWS_AS(load_checkpoint(path, params, bufs, "h"), MmfError);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(
        load_checkpoint((tmp.path / "nope.ckpt").string(), params, bufs, "h"),
        MmfError);
  }
}
