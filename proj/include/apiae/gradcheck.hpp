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

// Finite-difference gradient suite: every primitive op, the rollout action
// on a tiny model, and the Monte Carlo objective through R refinements.

#include <cstdint>
#include <string>
#include <vector>

#include "apiae/linalg.hpp"

namespace apiae {

struct GradCheckConfig {
  Index d_z = 2;
  Index d_u = 2;
  Index d_x = 4;
  Index components = 2;
  Index decoder_hidden = 3;
  Index rnn_hidden = 3;
  Index K = 3;
  Index L = 2;
  Index R = 2;
  double dt = 0.1;
  double eps = 1e-5;
  std::uint64_t seed = 7;
};

struct GradCheckEntry {
  std::string suite;  // "op", "rollout" or "mco"
  std::string name;
  double error = 0.0;
};

std::vector<GradCheckEntry> op_grad_checks(const GradCheckConfig& config);
std::vector<GradCheckEntry> rollout_grad_checks(const GradCheckConfig& config);
std::vector<GradCheckEntry> mco_grad_checks(const GradCheckConfig& config);
std::vector<GradCheckEntry> grad_check_suite(const GradCheckConfig& config);

}  // namespace apiae
