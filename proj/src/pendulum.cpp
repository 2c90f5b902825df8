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

#include "apiae/pendulum.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <vector>

namespace apiae::pendulum {

State step(State s, double dt, double disturbance) {
  if (!(dt > 0)) throw std::invalid_argument("pendulum::step: dt must be positive");
  s.velocity += (-kGravity * std::sin(s.angle) - s.velocity) * dt + disturbance * std::sqrt(dt);
  s.angle += s.velocity * dt;
  return s;
}

double energy(State s) { return 0.5 * s.velocity * s.velocity + kGravity * (1.0 - std::cos(s.angle)); }

namespace {

struct Point {
  double x, y;
};

// Sutherland-Hodgman clip of a convex polygon against one half-plane
// keep(p) >= 0, with the boundary crossing found by linear interpolation.
template <typename F>
std::vector<Point> clip(const std::vector<Point>& poly, F keep) {
  std::vector<Point> out;
  const std::size_t n = poly.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Point& a = poly[i];
    const Point& b = poly[(i + 1) % n];
    const double fa = keep(a);
    const double fb = keep(b);
    if (fa >= 0) out.push_back(a);
    if ((fa >= 0) != (fb >= 0)) {
      const double t = fa / (fa - fb);
      out.push_back({a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)});
    }
  }
  return out;
}

double area(const std::vector<Point>& poly) {
  double twice = 0.0;
  for (std::size_t i = 0, n = poly.size(); i < n; ++i) {
    const Point& a = poly[i];
    const Point& b = poly[(i + 1) % n];
    twice += a.x * b.y - b.x * a.y;
  }
  return 0.5 * std::abs(twice);
}

}  // namespace

RowVector render(double angle) {
  const double cx = kSide / 2.0;
  const double cy = kSide / 2.0;
  // image y grows downward, so angle 0 points down
  const double ux = std::sin(angle);
  const double uy = std::cos(angle);
  const double hw = kRodWidth / 2.0;
  const Point tip{cx + kRodLength * ux, cy + kRodLength * uy};
  // rectangle corners, offset across the rod by +-hw along (-uy, ux)
  const std::vector<Point> rod{{cx - hw * uy, cy + hw * ux},
                               {tip.x - hw * uy, tip.y + hw * ux},
                               {tip.x + hw * uy, tip.y - hw * ux},
                               {cx + hw * uy, cy - hw * ux}};

  // Each pixel's value is the exact area of the rod inside it.
  RowVector frame = RowVector::Zero(kPixels);
  for (Index r = 0; r < kSide; ++r) {
    for (Index c = 0; c < kSide; ++c) {
      const double x0 = static_cast<double>(c);
      const double y0 = static_cast<double>(r);
      auto poly = clip(rod, [&](const Point& p) { return p.x - x0; });
      poly = clip(poly, [&](const Point& p) { return x0 + 1.0 - p.x; });
      poly = clip(poly, [&](const Point& p) { return p.y - y0; });
      poly = clip(poly, [&](const Point& p) { return y0 + 1.0 - p.y; });
      if (poly.size() >= 3) frame(r * kSide + c) = std::min(area(poly), 1.0);
    }
  }
  return frame;
}

Dataset generate(const GenerateOptions& o) {
  if (o.N < 1 || o.K < 1 || !(o.dt > 0) || o.disturbance_sigma < 0 || o.pixel_noise_sigma < 0)
    throw std::invalid_argument("pendulum::generate: invalid options");
  Dataset d;
  d.K = o.K;
  d.dt = o.dt;
  d.disturbance_sigma = o.disturbance_sigma;
  d.pixel_noise_sigma = o.pixel_noise_sigma;
  d.seed = o.seed;
  d.sequences.resize(static_cast<std::size_t>(o.N));
  d.states.resize(static_cast<std::size_t>(o.N));
  for (Index n = 0; n < o.N; ++n) {
    Rng rng(derive_seed(o.seed, static_cast<std::uint64_t>(n)));
    std::uniform_real_distribution<double> angle0(-M_PI, M_PI);
    std::uniform_real_distribution<double> vel0(-2.0, 2.0);
    std::normal_distribution<double> normal(0.0, 1.0);
    State s{angle0(rng), vel0(rng)};
    Matrix frames(o.K, kPixels);
    Matrix states(o.K, 2);
    for (Index k = 0; k < o.K; ++k) {
      if (k > 0) s = step(s, o.dt, o.disturbance_sigma * normal(rng));
      states(k, 0) = s.angle;
      states(k, 1) = s.velocity;
      RowVector f = render(s.angle);
      if (o.pixel_noise_sigma > 0) {
        for (Index p = 0; p < kPixels; ++p) f(p) = std::clamp(f(p) + o.pixel_noise_sigma * normal(rng), 0.0, 1.0);
      }
      frames.row(k) = f;
    }
    d.sequences[static_cast<std::size_t>(n)] = std::move(frames);
    d.states[static_cast<std::size_t>(n)] = std::move(states);
  }
  return d;
}

}  // namespace apiae::pendulum
