// Copyright 2026 The APIAE Authors
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

#include "doctest.h"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <string>

#include "apiae/errors.hpp"
#include "apiae/io.hpp"

using namespace apiae;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("apiae_io_" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void spit(const fs::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Checkpoint small_checkpoint(std::uint64_t seed) {
  ModelSpec spec;
  spec.d_x = 6;
  spec.components = 3;
  spec.decoder_hidden = 5;
  spec.rnn_hidden = 4;
  spec.K = 4;
  Rng rng(seed);
  return Checkpoint::init(spec, rng);
}

}  // namespace

TEST_CASE("dataset round-trips bit-exactly") {
  TempDir dir;
  pendulum::GenerateOptions o;
  o.N = 5;
  o.K = 4;
  o.seed = 3;
  const auto data = pendulum::generate(o);
  const fs::path p = dir.path / "d.bin";
  io::write_dataset(p, data);
  const auto back = io::read_dataset(p);
  CHECK(back.K == data.K);
  CHECK(back.d_x == data.d_x);
  CHECK(back.dt == data.dt);
  CHECK(back.disturbance_sigma == data.disturbance_sigma);
  CHECK(back.pixel_noise_sigma == data.pixel_noise_sigma);
  CHECK(back.seed == data.seed);
  REQUIRE(back.size() == data.size());
  for (std::size_t n = 0; n < data.sequences.size(); ++n) {
    CHECK(back.sequences[n] == data.sequences[n]);
    CHECK(back.states[n] == data.states[n]);
  }
  // Same arguments, same bytes.
  io::write_dataset(dir.path / "e.bin", pendulum::generate(o));
  CHECK(slurp(p) == slurp(dir.path / "e.bin"));
}

TEST_CASE("checkpoint round-trips bit-exactly") {
  TempDir dir;
  Checkpoint ck = small_checkpoint(5);
  ck.model.prior.mean << 0.25, -1.5;
  const fs::path p = dir.path / "c.bin";
  io::write_checkpoint(p, ck);
  const Checkpoint back = io::read_checkpoint(p);
  CHECK(back.model.d_x == 6);
  CHECK(back.model.K == 4);
  CHECK(back.model.dt == ck.model.dt);
  CHECK(back.model.prior.mean == ck.model.prior.mean);
  CHECK(back.model.prior.log_std == ck.model.prior.log_std);
  std::vector<Matrix> a, b;
  ck.visit([&](const std::string&, const Matrix& m) { a.push_back(m); });
  back.visit([&](const std::string&, const Matrix& m) { b.push_back(m); });
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
  io::write_checkpoint(dir.path / "d.bin", back);
  CHECK(slurp(p) == slurp(dir.path / "d.bin"));
}

TEST_CASE("corrupt files raise data errors") {
  TempDir dir;
  const fs::path p = dir.path / "c.bin";
  io::write_checkpoint(p, small_checkpoint(6));
  const std::string bytes = slurp(p);

  CHECK_THROWS_AS((void)io::read_checkpoint(dir.path / "missing.bin"), DataError);

  std::string bad = bytes;
  bad[0] = 'X';
  spit(dir.path / "magic.bin", bad);
  CHECK_THROWS_AS((void)io::read_checkpoint(dir.path / "magic.bin"), DataError);

  spit(dir.path / "short.bin", bytes.substr(0, bytes.size() - 3));
  CHECK_THROWS_AS((void)io::read_checkpoint(dir.path / "short.bin"), DataError);

  spit(dir.path / "long.bin", bytes + "x");
  CHECK_THROWS_AS((void)io::read_checkpoint(dir.path / "long.bin"), DataError);

  // A dataset is not a checkpoint.
  pendulum::GenerateOptions o;
  o.N = 2;
  io::write_dataset(dir.path / "d.bin", pendulum::generate(o));
  CHECK_THROWS_AS((void)io::read_checkpoint(dir.path / "d.bin"), DataError);
  const std::string d = slurp(dir.path / "d.bin");
  spit(dir.path / "dshort.bin", d.substr(0, d.size() / 2));
  CHECK_THROWS_AS((void)io::read_dataset(dir.path / "dshort.bin"), DataError);
}

TEST_CASE("pgm and frame strips") {
  TempDir dir;
  Matrix frames = Matrix::Zero(2, 256);
  frames(0, 0) = 1.0;     // top-left of the first frame
  frames(1, 17) = 0.5;    // row 1, column 1 of the second frame
  const Matrix strip = io::frame_strip(frames);
  CHECK(strip.rows() == 16);
  CHECK(strip.cols() == 32);
  CHECK(strip(0, 0) == 1.0);
  CHECK(strip(1, 17) == 0.5);
  CHECK(strip.sum() == 1.5);

  const fs::path p = dir.path / "s.pgm";
  io::write_pgm(p, strip);
  const std::string bytes = slurp(p);
  const std::string header = "P5\n32 16\n255\n";
  REQUIRE(bytes.size() == header.size() + 512);
  CHECK(bytes.substr(0, header.size()) == header);
  CHECK(static_cast<unsigned char>(bytes[header.size()]) == 255);
  CHECK(static_cast<unsigned char>(bytes[header.size() + 32 + 17]) == 128);
  CHECK(static_cast<unsigned char>(bytes[header.size() + 1]) == 0);
}

TEST_CASE("csv keeps full precision") {
  TempDir dir;
  const fs::path p = dir.path / "t.csv";
  const double v = 0.1 + 0.2;
  io::write_csv(p, {"a", "b"}, {{1.0, v}});
  std::ifstream in(p);
  std::string head, row;
  std::getline(in, head);
  std::getline(in, row);
  CHECK(head == "a,b");
  CHECK(std::stod(row.substr(row.find(',') + 1)) == v);
}
