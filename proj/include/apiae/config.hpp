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

// One JSON configuration for every command. Defaults are built in, a file
// may override any subset, and `section.key=value` overrides win over both.
// Unknown sections or keys and wrongly typed values are usage errors.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "apiae/gradcheck.hpp"
#include "apiae/pendulum.hpp"
#include "apiae/train.hpp"

namespace apiae {

struct DataConfig {
  Index N = 300;
  Index N_test = 100;
  Index K = 10;
  double dt = 0.1;
  double disturbance_sigma = 0.5;
  double pixel_noise_sigma = 0.05;
};

struct EvalConfig {
  Mode mode = Mode::apiae;
  Index L = 8;
  Index R = 4;
  double eta = 0.5;
};

struct PlanConfig {
  Index L = 64;
  Index R = 10;
  double eta = 0.9;
  Index horizon = 10;
  double dt = 0.1;
  double temperature = 1.0;
  double weight = 1.0;
  double start_angle = 0.0;          // rad, pendulum pose of the context frames
  double target_angle = 3.14159265358979323846;  // upright
};

struct Config {
  std::uint64_t seed = 1;
  int threads = 1;
  DataConfig data;
  ModelSpec model;
  TrainConfig train;
  EvalConfig eval;
  PlanConfig plan;
  GradCheckConfig grad_check;

  nlohmann::json effective;  // fully resolved values

  [[nodiscard]] pendulum::GenerateOptions train_data_options() const;
  [[nodiscard]] pendulum::GenerateOptions test_data_options() const;
};

nlohmann::json default_config();

// Throws UsageError on bad input, DataError on unreadable files.
Config load_config(const std::optional<std::filesystem::path>& path, const std::vector<std::string>& overrides);
Config config_from_json(const nlohmann::json& j);

void write_config(const std::filesystem::path& path, const Config& config);

}  // namespace apiae
