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

#include "apiae/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>

#include "apiae/errors.hpp"

namespace apiae::io {
namespace {

static_assert(std::endian::native == std::endian::little, "little-endian host required");

class Writer {
 public:
  explicit Writer(const std::filesystem::path& path) : path_(path), out_(path, std::ios::binary) {
    if (!out_) throw DataError("cannot open " + path.string() + " for writing");
  }
  void bytes(const void* p, std::size_t n) { out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
  void u32(std::uint32_t v) { bytes(&v, 4); }
  void u64(std::uint64_t v) { bytes(&v, 8); }
  void f64(double v) { bytes(&v, 8); }
  void matrix(const Matrix& m) {
    for (Index r = 0; r < m.rows(); ++r)
      for (Index c = 0; c < m.cols(); ++c) f64(m(r, c));
  }
  void finish() {
    out_.flush();
    if (!out_) throw DataError("write failed: " + path_.string());
  }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw DataError("cannot open " + path.string());
  }
  void bytes(void* p, std::size_t n) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (!in_) throw DataError(path_.string() + ": truncated file");
  }
  std::uint32_t u32() {
    std::uint32_t v;
    bytes(&v, 4);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v;
    bytes(&v, 8);
    return v;
  }
  double f64() {
    double v;
    bytes(&v, 8);
    return v;
  }
  Index count(std::uint64_t limit, const char* what) {
    const std::uint64_t v = u64();
    if (v > limit) throw DataError(path_.string() + ": implausible " + what);
    return static_cast<Index>(v);
  }
  Matrix matrix(Index rows, Index cols) {
    Matrix m(rows, cols);
    for (Index r = 0; r < rows; ++r)
      for (Index c = 0; c < cols; ++c) m(r, c) = f64();
    return m;
  }
  void magic(const char (&expected)[8]) {
    char buf[8];
    bytes(buf, 8);
    if (std::memcmp(buf, expected, 8) != 0) throw DataError(path_.string() + ": bad magic");
    const std::uint32_t version = u32();
    if (version != kFormatVersion)
      throw DataError(path_.string() + ": unsupported version " + std::to_string(version));
    u32();  // reserved
  }
  void expect_end() {
    if (in_.peek() != std::char_traits<char>::eof()) throw DataError(path_.string() + ": trailing bytes");
  }
  [[nodiscard]] const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  std::ifstream in_;
};

constexpr std::uint64_t kMaxDim = 1u << 24;

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const Model& m = ckpt.model;
  Writer w(path);
  w.bytes(kCheckpointMagic, 8);
  w.u32(kFormatVersion);
  w.u32(0);
  for (Index v : {m.d_z, m.d_u, m.d_x, m.dynamics.components, m.K, m.decoder.hidden, ckpt.net.d_h})
    w.u64(static_cast<std::uint64_t>(v));
  w.f64(m.dt);

  std::vector<std::pair<std::string, const Matrix*>> tensors;
  ckpt.visit([&](const std::string& name, const Matrix& t) { tensors.emplace_back(name, &t); });
  Matrix prior_mean = m.prior.mean;
  Matrix prior_log_std = m.prior.log_std;
  tensors.emplace_back("model.prior.mean", &prior_mean);
  tensors.emplace_back("model.prior.log_std", &prior_log_std);

  w.u64(tensors.size());
  for (const auto& [name, t] : tensors) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.u32(2);
    w.u64(static_cast<std::uint64_t>(t->rows()));
    w.u64(static_cast<std::uint64_t>(t->cols()));
    w.matrix(*t);
  }
  w.finish();
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  Reader r(path);
  r.magic(kCheckpointMagic);
  const Index d_z = r.count(kMaxDim, "d_z");
  const Index d_u = r.count(kMaxDim, "d_u");
  const Index d_x = r.count(kMaxDim, "d_x");
  const Index M = r.count(kMaxDim, "component count");
  const Index K = r.count(kMaxDim, "K");
  const Index hidden = r.count(kMaxDim, "decoder width");
  const Index d_h = r.count(kMaxDim, "rnn width");
  const double dt = r.f64();
  if (d_z < 1 || d_u < 1 || d_x < 1 || M < 1 || K < 2 || d_h < 1 || !(dt > 0))
    throw DataError(path.string() + ": invalid header");

  Checkpoint ckpt;
  Model& m = ckpt.model;
  m.d_z = d_z;
  m.d_u = d_u;
  m.d_x = d_x;
  m.K = K;
  m.dt = dt;
  m.dynamics = LocallyLinearDynamics::zeros(d_z, d_u, M);
  m.decoder.d_z = d_z;
  m.decoder.d_x = d_x;
  m.decoder.hidden = hidden;
  if (hidden > 0) {
    m.decoder.w1 = Matrix::Zero(d_z, hidden);
    m.decoder.b1 = Matrix::Zero(1, hidden);
  }
  m.decoder.w2 = Matrix::Zero(hidden > 0 ? hidden : d_z, 2 * d_x);
  m.decoder.b2 = Matrix::Zero(1, 2 * d_x);
  m.prior = InitialPrior::standard(d_z);
  ckpt.net = InferenceNetwork::zeros(d_x, d_h, d_z, d_u);

  std::map<std::string, Matrix> stored;
  const Index n = r.count(4096, "tensor count");
  for (Index i = 0; i < n; ++i) {
    const std::uint32_t len = r.u32();
    if (len > 4096) throw DataError(path.string() + ": implausible tensor name");
    std::string name(len, '\0');
    r.bytes(name.data(), len);
    if (r.u32() != 2) throw DataError(path.string() + ": tensor " + name + " is not 2-d");
    const Index rows = r.count(kMaxDim, "rows");
    const Index cols = r.count(kMaxDim, "cols");
    stored[name] = r.matrix(rows, cols);
  }
  r.expect_end();

  auto take = [&](const std::string& name, Matrix& dst) {
    auto it = stored.find(name);
    if (it == stored.end()) throw DataError(path.string() + ": missing tensor " + name);
    if (it->second.rows() != dst.rows() || it->second.cols() != dst.cols())
      throw DataError(path.string() + ": tensor " + name + " has shape " + std::to_string(it->second.rows()) + "x" +
                      std::to_string(it->second.cols()) + ", expected " + std::to_string(dst.rows()) + "x" +
                      std::to_string(dst.cols()));
    dst = it->second;
    stored.erase(it);
  };
  ckpt.visit([&](const std::string& name, Matrix& t) { take(name, t); });
  Matrix prior_mean = m.prior.mean;
  Matrix prior_log_std = m.prior.log_std;
  take("model.prior.mean", prior_mean);
  take("model.prior.log_std", prior_log_std);
  m.prior.mean = prior_mean;
  m.prior.log_std = prior_log_std;
  if (!stored.empty()) throw DataError(path.string() + ": unknown tensor " + stored.begin()->first);
  return ckpt;
}

void write_dataset(const std::filesystem::path& path, const pendulum::Dataset& d) {
  if (d.states.size() != d.sequences.size()) throw DataError("dataset: states and sequences differ in count");
  Writer w(path);
  w.bytes(kDatasetMagic, 8);
  w.u32(kFormatVersion);
  w.u32(0);
  w.u64(static_cast<std::uint64_t>(d.size()));
  w.u64(static_cast<std::uint64_t>(d.K));
  w.u64(static_cast<std::uint64_t>(d.d_x));
  w.f64(d.dt);
  w.f64(d.disturbance_sigma);
  w.f64(d.pixel_noise_sigma);
  w.u64(d.seed);
  for (const Matrix& s : d.sequences) {
    if (s.rows() != d.K || s.cols() != d.d_x) throw DataError("dataset: sequence shape mismatch");
    w.matrix(s);
  }
  w.u64(2);
  for (const Matrix& s : d.states) {
    if (s.rows() != d.K || s.cols() != 2) throw DataError("dataset: state shape mismatch");
    w.matrix(s);
  }
  w.finish();
}

pendulum::Dataset read_dataset(const std::filesystem::path& path) {
  Reader r(path);
  r.magic(kDatasetMagic);
  pendulum::Dataset d;
  const Index N = r.count(kMaxDim, "N");
  d.K = r.count(kMaxDim, "K");
  d.d_x = r.count(kMaxDim, "d_x");
  d.dt = r.f64();
  d.disturbance_sigma = r.f64();
  d.pixel_noise_sigma = r.f64();
  d.seed = r.u64();
  if (N < 1 || d.K < 1 || d.d_x < 1 || !(d.dt > 0)) throw DataError(path.string() + ": invalid header");
  d.sequences.reserve(static_cast<std::size_t>(N));
  for (Index n = 0; n < N; ++n) {
    Matrix s = r.matrix(d.K, d.d_x);
    if (!s.allFinite()) throw DataError(path.string() + ": non-finite pixel in sequence " + std::to_string(n));
    d.sequences.push_back(std::move(s));
  }
  const Index state_dim = r.count(kMaxDim, "state dimension");
  if (state_dim != 2) throw DataError(path.string() + ": state dimension must be 2");
  d.states.reserve(static_cast<std::size_t>(N));
  for (Index n = 0; n < N; ++n) d.states.push_back(r.matrix(d.K, 2));
  r.expect_end();
  return d;
}

void write_pgm(const std::filesystem::path& path, const Matrix& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out << "P5\n" << image.cols() << ' ' << image.rows() << "\n255\n";
  for (Index r = 0; r < image.rows(); ++r) {
    for (Index c = 0; c < image.cols(); ++c) {
      const double v = std::isfinite(image(r, c)) ? std::clamp(image(r, c), 0.0, 1.0) : 0.0;
      out.put(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
    }
  }
  if (!out) throw DataError("write failed: " + path.string());
}

Matrix frame_strip(const Matrix& frames) {
  using pendulum::kSide;
  if (frames.cols() != pendulum::kPixels) throw std::invalid_argument("frame_strip: frames must have 256 columns");
  Matrix strip(kSide, kSide * frames.rows());
  for (Index k = 0; k < frames.rows(); ++k)
    for (Index r = 0; r < kSide; ++r)
      for (Index c = 0; c < kSide; ++c) strip(r, k * kSide + c) = frames(k, r * kSide + c);
  return strip;
}

void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
  out << '\n';
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << row[i];
    out << '\n';
  }
  if (!out) throw DataError("write failed: " + path.string());
}

}  // namespace apiae::io
