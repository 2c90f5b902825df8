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

// Synthetic image sequences of a damped pendulum driven by random torque
// noise, rendered as 16x16 grayscale frames.

#include <cstdint>
#include <vector>

#include "apiae/linalg.hpp"

namespace apiae::pendulum {

constexpr Index kSide = 16;
constexpr Index kPixels = kSide * kSide;
constexpr double kGravity = 9.8;
constexpr double kRodLength = 6.0;  // px
constexpr double kRodWidth = 1.5;   // px

struct State {
  double angle = 0.0;     // rad, unwrapped; 0 hangs straight down
  double velocity = 0.0;  // rad/s
};

// Semi-implicit Euler step of  angle'' = -9.8 sin(angle) - angle'.
State step(State s, double dt, double disturbance);

double energy(State s);

// Row-major 16x16 frame flattened to 1 x 256, values in [0, 1].
RowVector render(double angle);

struct GenerateOptions {
  Index N = 300;
  Index K = 10;
  double dt = 0.1;
  double disturbance_sigma = 0.5;
  double pixel_noise_sigma = 0.05;
  std::uint64_t seed = 1;
};

struct Dataset {
  Index K = 0;
  Index d_x = kPixels;
  double dt = 0.1;
  double disturbance_sigma = 0.0;
  double pixel_noise_sigma = 0.0;
  std::uint64_t seed = 0;
  std::vector<Matrix> sequences;  // N of K x d_x
  std::vector<Matrix> states;     // N of K x 2 (angle, velocity)

  [[nodiscard]] Index size() const { return static_cast<Index>(sequences.size()); }
};

Dataset generate(const GenerateOptions& options);

}  // namespace apiae::pendulum
