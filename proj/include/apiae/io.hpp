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

#pragma once

// Binary checkpoint and dataset files, PGM frames and CSV tables.
// Layouts are documented in README.md; all integers and floats are
// little-endian, matrices are row-major float64.

#include <filesystem>
#include <string>
#include <vector>

#include "apiae/linalg.hpp"
#include "apiae/pendulum.hpp"
#include "apiae/train.hpp"

namespace apiae::io {

inline constexpr char kCheckpointMagic[8] = {'A', 'P', 'I', 'A', 'E', 'C', 'K', '1'};
inline constexpr char kDatasetMagic[8] = {'A', 'P', 'I', 'A', 'E', 'D', 'S', '1'};
inline constexpr std::uint32_t kFormatVersion = 1;

// Throws DataError on I/O failure, bad magic, version or shape.
void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

void write_dataset(const std::filesystem::path& path, const pendulum::Dataset& data);
pendulum::Dataset read_dataset(const std::filesystem::path& path);

// Binary PGM (P5), values in [0, 1] mapped to 0..255.
void write_pgm(const std::filesystem::path& path, const Matrix& image);
// K x 256 frames laid left to right as one 16 x 16K image.
Matrix frame_strip(const Matrix& frames);

void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows);

}  // namespace apiae::io
