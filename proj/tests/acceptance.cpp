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

// Acceptance run: one PASS/FAIL line per criterion. Exit status is the
// number of failed criteria (capped at 1 for ctest).
//
//   acceptance                     run everything
//   acceptance --only 3            run one criterion
//   acceptance --checkpoint F      criterion 6 from a saved checkpoint
//   acceptance --save-checkpoint F keep the criterion 5 checkpoint
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "apiae/adapt.hpp"
#include "apiae/config.hpp"
#include "apiae/gradcheck.hpp"
#include "apiae/inference.hpp"
#include "apiae/io.hpp"
#include "apiae/kalman.hpp"
#include "apiae/pendulum.hpp"
#include "apiae/plan.hpp"
#include "apiae/train.hpp"
#include "helpers.hpp"

using namespace apiae;

namespace {

// Tolerances and sizes, fixed here.
constexpr double kEvidenceGap = 0.05;       // nats
constexpr double kGradTolerance = 1e-4;
constexpr double kPValue = 0.01;
constexpr double kReconRatio = 0.5;
constexpr double kTerminalDrop = 0.5;
constexpr double kMonotoneSeedShare = 0.9;
constexpr int kSmoothWindow = 5;            // epochs, trailing mean

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double mean(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / double(v.size()); }

double stddev(const std::vector<double>& v) {
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / double(v.size() - 1));
}

// One-sided upper tail of Student's t with `df` degrees of freedom, by
// Simpson integration of the density on [0, t].
double t_upper_tail(double t, double df) {
  if (t <= 0) return 0.5;
  const double logc = std::lgamma((df + 1) / 2) - std::lgamma(df / 2) - 0.5 * std::log(df * std::numbers::pi);
  auto pdf = [&](double x) { return std::exp(logc - (df + 1) / 2 * std::log1p(x * x / df)); };
  const int n = 20000;
  const double h = t / n;
  double s = pdf(0) + pdf(t);
  for (int i = 1; i < n; ++i) s += pdf(i * h) * (i % 2 ? 4 : 2);
  return std::max(0.0, 0.5 - s * h / 3);
}

struct OracleData {
  testing::LinearInstance inst;
  std::vector<Matrix> data;
  double evidence = 0.0;  // mean over sequences
};

OracleData oracle_data(RowVector bias = RowVector::Zero(2)) {
  OracleData o{testing::linear_instance(5, 0.8, bias), {}, 0.0};
  Rng rng(20260);
  for (int i = 0; i < 5; ++i) o.data.push_back(testing::sample_sequence(o.inst.sys, 5, rng));
  for (const auto& x : o.data) o.evidence += exact_linear_evidence(o.inst.sys, x);
  o.evidence /= double(o.data.size());
  return o;
}

EvalOptions eval_seed(std::uint64_t seed) {
  EvalOptions e;
  e.seed = seed;
  return e;
}

// ---------------------------------------------------------------------------

Outcome kalman_oracle() {
  const auto t0 = Clock::now();
  const auto o = oracle_data();
  const std::vector<Index> Ls{4, 16, 64, 256, 4096};
  const int seeds = 20;
  std::vector<double> means;
  std::vector<double> last;
  for (Index L : Ls) {
    std::vector<double> b;
    for (int s = 0; s < seeds; ++s)
      b.push_back(evaluate_bound(o.inst.ckpt, o.data, Mode::iwae, L, 0, eval_seed(derive_seed(11, s))).mean_bound);
    means.push_back(mean(b));
    last = b;
  }
  const double gap = o.evidence - means.back();
  const double se = stddev(last) / std::sqrt(double(seeds));
  bool monotone = true;
  for (std::size_t i = 1; i < means.size(); ++i) monotone = monotone && means[i] >= means[i - 1];
  const double secs = seconds_since(t0);
  // Below the evidence up to three standard errors of the seed mean.
  const bool pass = gap <= kEvidenceGap && gap >= -3 * se && monotone && secs < 60;
  std::string d = fmt("evidence %.4f, gap at L=4096 %.4f (se %.4f), means", o.evidence, gap, se);
  for (double m : means) d += fmt(" %.4f", m);
  d += fmt(", %.1fs", secs);
  return {pass, d};
}

Outcome refinement_tightens() {
  const auto t0 = Clock::now();
  // q0 mean off by one prior standard deviation per axis. Moment matching
  // needs a few effective samples in round 0; at L = 16 the ensemble has
  // ESS near 1 and the refined q0 collapses onto a single path.
  RowVector bias(2);
  bias << 1.0, -1.0;
  const auto o = oracle_data(bias);
  const int seeds = 100;
  const Index L = 256;
  std::vector<double> diff;
  double m0 = 0.0, m4 = 0.0;
  for (int s = 0; s < seeds; ++s) {
    const auto e = eval_seed(derive_seed(12, s));
    const double b0 = evaluate_bound(o.inst.ckpt, o.data, Mode::apiae, L, 0, e).mean_bound;
    const double b4 = evaluate_bound(o.inst.ckpt, o.data, Mode::apiae, L, 4, e).mean_bound;
    diff.push_back(b4 - b0);
    m0 += b0 / seeds;
    m4 += b4 / seeds;
  }
  const double t = mean(diff) / (stddev(diff) / std::sqrt(double(seeds)));
  const double p = t_upper_tail(t, seeds - 1);
  const double secs = seconds_since(t0);
  return {p < kPValue && mean(diff) > 0 && secs < 120,
          fmt("R=0 %.4f, R=4 %.4f, paired t %.2f, p %.2e over %d seeds, %.1fs", m0, m4, t, p, seeds, secs)};
}

Outcome gradient_suite() {
  const auto t0 = Clock::now();
  const auto entries = grad_check_suite(GradCheckConfig{});
  double worst = 0.0;
  std::string name;
  for (const auto& e : entries)
    if (!(e.error <= worst)) {
      worst = e.error;
      name = e.suite + "/" + e.name;
    }
  const double secs = seconds_since(t0);
  return {worst < kGradTolerance && secs < 60,
          fmt("%zu checks, max relative error %.2e (%s), %.1fs", entries.size(), worst, name.c_str(), secs)};
}

bool same_bounds(const BoundReport& a, const BoundReport& b) { return a.bounds == b.bounds && a.ess == b.ess; }

Outcome mode_identities() {
  RowVector bias(2);
  bias << 1.0, 0.5;
  const auto o = oracle_data(bias);
  Rng init_rng(5);
  ModelSpec spec;
  spec.components = 4;
  spec.decoder_hidden = 16;
  spec.rnn_hidden = 8;
  const auto pend = Checkpoint::init(spec, init_rng);
  pendulum::GenerateOptions go;
  go.N = 4;
  go.seed = 6;
  const auto frames = pendulum::generate(go);
  int checks = 0, equal = 0;
  for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
    const auto e = eval_seed(seed);
    for (Index L : {Index(4), Index(32)}) {
      checks += 4;
      equal += same_bounds(evaluate_bound(o.inst.ckpt, o.data, Mode::apiae, L, 0, e),
                           evaluate_bound(o.inst.ckpt, o.data, Mode::iwae, L, 0, e));
      equal += same_bounds(evaluate_bound(o.inst.ckpt, o.data, Mode::apiae_r, L, 0, e),
                           evaluate_bound(o.inst.ckpt, o.data, Mode::fivo, L, 0, e));
      equal += same_bounds(evaluate_bound(pend, frames.sequences, Mode::apiae, L, 0, e),
                           evaluate_bound(pend, frames.sequences, Mode::iwae, L, 0, e));
      equal += same_bounds(evaluate_bound(pend, frames.sequences, Mode::apiae_r, L, 0, e),
                           evaluate_bound(pend, frames.sequences, Mode::fivo, L, 0, e));
    }
  }
  return {equal == checks, fmt("%d of %d bound vectors bit-identical", equal, checks)};
}

// ---------------------------------------------------------------------------

struct Pendulum {
  std::vector<Matrix> train, test;
  TrainResult result;
  double seconds = 0.0;
};

Pendulum train_pendulum() {
  const auto t0 = Clock::now();
  Pendulum p;
  pendulum::GenerateOptions go;
  go.N = 300;
  go.K = 10;
  go.dt = 0.1;
  go.seed = derive_seed(1, 0xda7a, 0);
  p.train = pendulum::generate(go).sequences;
  go.N = 50;
  go.seed = derive_seed(1, 0xda7a, 1);
  p.test = pendulum::generate(go).sequences;

  ModelSpec spec;
  spec.K = 10;
  spec.dt = 0.1;
  Rng init_rng(derive_seed(1, 0x1417));
  TrainConfig tc;
  tc.mode = Mode::apiae;
  tc.L = 8;
  tc.R = 4;
  tc.epochs = 30;
  tc.batch_size = 1;
  tc.learning_rate = 1e-3;
  tc.seed = 1;
  p.result = train_run(Checkpoint::init(spec, init_rng), p.train, tc, [](const EpochRecord& r, const Checkpoint&) {
    std::printf("  epoch %2d bound %10.2f ess %.2f %6.0fs\n", r.epoch, r.mean_bound, r.ess_mean, r.wallclock_s);
    std::fflush(stdout);
  });
  p.seconds = seconds_since(t0);
  return p;
}

Outcome curve_monotone(const Pendulum& p) {
  // Trailing means over the optimized epochs; epoch 0 is the untrained
  // evaluation and is left out.
  std::vector<double> b;
  for (const auto& r : p.result.curve)
    if (r.epoch > 0) b.push_back(r.mean_bound);
  std::vector<double> smooth;
  for (std::size_t i = kSmoothWindow; i <= b.size(); ++i)
    smooth.push_back(std::accumulate(b.begin() + long(i - kSmoothWindow), b.begin() + long(i), 0.0) / kSmoothWindow);
  int drops = 0;
  for (std::size_t i = 1; i < smooth.size(); ++i) drops += smooth[i] < smooth[i - 1];
  return {drops == 0 && !smooth.empty() && p.seconds < 1800,
          fmt("%d-epoch trailing mean %.1f -> %.1f, %d decreases, %.0fs", kSmoothWindow, smooth.front(),
              smooth.back(), drops, p.seconds)};
}

Outcome reconstruction(const Pendulum& p) {
  RowVector mean_frame = RowVector::Zero(pendulum::kPixels);
  double frames = 0;
  for (const auto& x : p.train) {
    mean_frame += x.colwise().sum();
    frames += double(x.rows());
  }
  mean_frame /= frames;
  const auto cfg = adapt_config(Mode::apiae, 8, 4, 0.5);
  double model = 0.0, base = 0.0;
  for (std::size_t i = 0; i < p.test.size(); ++i) {
    const Matrix& x = p.test[i];
    Rng rng(derive_seed(99, i));
    const auto r = reconstruct(p.result.checkpoint, x, cfg, rng);
    model += (x - r.frames).squaredNorm() / double(x.size());
    base += (x.rowwise() - mean_frame).squaredNorm() / double(x.size());
  }
  const double ratio = model / base;
  return {ratio < kReconRatio, fmt("held-out MSE %.5f vs mean frame %.5f, ratio %.4f", model / double(p.test.size()),
                                   base / double(p.test.size()), ratio)};
}

Outcome refinement_on_pendulum(const Pendulum& p) {
  const auto e = eval_seed(4242);
  const auto r0 = evaluate_bound(p.result.checkpoint, p.test, Mode::apiae, 8, 0, e);
  const auto r4 = evaluate_bound(p.result.checkpoint, p.test, Mode::apiae, 8, 4, e);
  return {r4.mean_bound >= r0.mean_bound, fmt("held-out bound R=0 %.2f, R=4 %.2f", r0.mean_bound, r4.mean_bound)};
}

PlanningProblem swing_up(const Checkpoint& ckpt) {
  const PlanConfig pc;
  auto problem = PlanningProblem::terminal(encode_initial(ckpt, pendulum::render(pc.start_angle)), pc.horizon, pc.dt,
                                           pendulum::render(pc.target_angle), pc.weight);
  problem.temperature = pc.temperature;
  problem.L = pc.L;
  problem.R = pc.R;
  problem.eta = pc.eta;
  return problem;
}

Outcome planning(const Checkpoint& ckpt) {
  const auto t0 = Clock::now();
  const auto problem = swing_up(ckpt);
  Rng rng(derive_seed(1, 0x91a7));
  const auto fixed = plan(ckpt.model, problem, rng);
  const double first = fixed.trace.front().terminal_mse;
  const double final = fixed.trace.back().terminal_mse;
  const double drop = 1.0 - final / first;

  const int seeds = 50;
  int monotone = 0;
  for (int s = 0; s < seeds; ++s) {
    Rng r(derive_seed(2, 0x91a7, s));
    const auto pl = plan(ckpt.model, problem, r);
    bool ok = true;
    for (std::size_t k = 1; k < pl.trace.size(); ++k) ok = ok && pl.trace[k].weighted_cost <= pl.trace[k - 1].weighted_cost;
    monotone += ok;
  }
  const double share = double(monotone) / seeds;
  return {drop >= kTerminalDrop && share >= kMonotoneSeedShare,
          fmt("terminal MSE %.4f -> %.4f (%.0f%% drop), non-increasing cost in %d of %d seeds, %.1fs", first, final,
              100 * drop, monotone, seeds, seconds_since(t0))};
}

// ---------------------------------------------------------------------------

Outcome invariants() {
  std::vector<std::string> failed;
  auto expect = [&](bool ok, const char* what) {
    if (!ok) failed.emplace_back(what);
  };
  Rng rng(777);

  // weights, ESS and shift invariance on random actions of wide range
  for (int trial = 0; trial < 200; ++trial) {
    const Index L = 1 + trial % 37;
    const double scale = std::pow(10.0, trial % 4);
    const Vector S = scale * standard_normal(rng, L, 1);
    const auto w = weights(S);
    expect(std::abs(w.normalized.sum() - 1.0) < 1e-12 && w.normalized.minCoeff() >= 0.0, "weights normalize");
    const double e = ess(w.normalized);
    expect(e >= 1.0 - 1e-12 && e <= double(L) + 1e-9, "1 <= ESS <= L");
    const double c = 1e3 * (trial % 5 - 2) + 0.37;
    const auto shifted = weights((S.array() + c).matrix());
    expect((shifted.normalized - w.normalized).cwiseAbs().maxCoeff() < 1e-12, "weights shift invariance");
    expect(std::abs(shifted.log_mean_exp - (w.log_mean_exp - c)) < 1e-9 * (1 + std::abs(c)), "bound shifts by -c");
  }
  expect(std::abs(ess(Vector::Constant(9, 1.0 / 9)) - 9.0) < 1e-12, "uniform ESS");
  expect(std::abs(ess(Vector::Unit(9, 4)) - 1.0) < 1e-12, "one-hot ESS");

  const auto o = oracle_data(RowVector::Constant(2, 0.7));
  // the same offset through the full refinement loop
  {
    AdaptConfig cfg;
    cfg.L = 8;
    cfg.R = 3;
    auto run = [&](double offset) {
      graph::Tape t;
      const auto mv = lift(t, o.inst.ckpt.model, false);
      const auto nv = lift(t, o.inst.ckpt.net, false);
      auto inf = infer(t, nv, o.data[0]);
      auto cost = StateCost::learning(o.data[0]);
      cost.offset = offset;
      Rng r(14);
      return adapt_loop(t, mv, inf.q0, std::move(inf.schedule), cost, cfg, r).ensemble;
    };
    const auto e0 = run(0.0), e1 = run(4.25);
    expect(std::abs(e1.log_mean_exp - (e0.log_mean_exp - 4.25)) < 1e-9, "adapt loop bound shifts by -c");
    expect((e1.weights - e0.weights).cwiseAbs().maxCoeff() < 1e-12, "adapt loop weights unchanged by offset");
  }

  // controls at step k read frames k.. only
  {
    ModelSpec spec;
    spec.rnn_hidden = 8;
    spec.decoder_hidden = 8;
    spec.components = 2;
    Rng init_rng(31);
    auto ckpt = Checkpoint::init(spec, init_rng);
    ckpt.net.ctrl_w *= 50.0;
    pendulum::GenerateOptions go;
    go.N = 1;
    go.seed = 32;
    const Matrix x = pendulum::generate(go).sequences.front();
    const auto base = infer(ckpt.net, x);
    for (Index j = 0; j < x.rows(); ++j) {
      Matrix y = x;
      y.row(j).array() += 0.3;
      const auto pert = infer(ckpt.net, y);
      bool later_same = true, own_changed = true;
      for (Index k = j + 1; k < Index(base.schedule.feedforward.size()); ++k)
        later_same = later_same && pert.schedule.feedforward[k] == base.schedule.feedforward[k] &&
                     pert.schedule.gain[k] == base.schedule.gain[k];
      if (j < Index(base.schedule.feedforward.size()))
        own_changed = pert.schedule.feedforward[j] != base.schedule.feedforward[j];
      expect(later_same, "later controls ignore earlier frames");
      expect(own_changed, "control reads its own frame");
    }
  }

  // replaying recorded noise reproduces every path and every bound
  {
    const auto& ck = o.inst.ckpt;
    const auto inf = infer(ck.net, o.data[1]);
    auto sched = inf.schedule;
    sched.feedback = true;
    for (auto& g : sched.gain) g.setConstant(0.3);
    const auto cost = StateCost::learning(o.data[1]);
    const Index L = 6;
    Rng r(41);
    const auto noise = draw_noise(r, L, ck.model.K, ck.model.d_z, ck.model.d_u, ck.model.dt);
    graph::Tape t;
    const auto mv = lift(t, ck.model, false);
    const auto traj = simulate(t, mv, lift(t, inf.q0, false), lift(t, sched, false), cost, noise);
    double worst = 0.0;
    for (Index l = 0; l < L; ++l) {
      RolloutNoise one;
      one.eps0 = noise.eps0.row(l);
      for (const auto& d : noise.dw) one.dw.push_back(d.row(l));
      one.resample_uniform = noise.resample_uniform;
      const auto path = rollout(ck.model, inf.q0, sched, cost, one);
      worst = std::max(worst, std::abs(path.action - traj.action_values()(l)));
      for (Index k = 0; k < ck.model.K; ++k)
        worst = std::max(worst, (path.z.row(k) - traj.z[std::size_t(k)].value().row(l)).cwiseAbs().maxCoeff());
    }
    expect(worst < 1e-10, "replay reproduces paths");
    const auto a = evaluate_bound(ck, o.data, Mode::apiae_r, 16, 3, eval_seed(9));
    const auto b = evaluate_bound(ck, o.data, Mode::apiae_r, 16, 3, eval_seed(9));
    expect(same_bounds(a, b), "bound replay is bit-identical");
  }

  // dataset round trip
  {
    pendulum::GenerateOptions go;
    go.N = 7;
    go.seed = 51;
    const auto d = pendulum::generate(go);
    const auto dir = std::filesystem::temp_directory_path() / fmt("apiae_acceptance_%u", std::random_device{}());
    std::filesystem::create_directories(dir);
    io::write_dataset(dir / "a.bin", d);
    const auto back = io::read_dataset(dir / "a.bin");
    io::write_dataset(dir / "b.bin", back);
    bool same = back.K == d.K && back.d_x == d.d_x && back.sequences.size() == d.sequences.size();
    for (std::size_t i = 0; same && i < d.sequences.size(); ++i) same = back.sequences[i] == d.sequences[i];
    auto slurp = [](const std::filesystem::path& f) {
      std::ifstream in(f, std::ios::binary);
      return std::string(std::istreambuf_iterator<char>(in), {});
    };
    expect(same && slurp(dir / "a.bin") == slurp(dir / "b.bin"), "dataset round trip");
    std::filesystem::remove_all(dir);
  }

  std::string d = failed.empty() ? "weights, ESS, shift, causality, replay, round trip" : "failed:";
  for (const auto& f : failed) d += " [" + f + "]";
  return {failed.empty(), d};
}

// ---------------------------------------------------------------------------

int failures = 0;

void report(int id, const char* name, const Outcome& o) {
  std::printf("criterion %d %-28s %s  %s\n", id, name, o.pass ? "PASS" : "FAIL", o.detail.c_str());
  std::fflush(stdout);
  failures += !o.pass;
}

}  // namespace

int main(int argc, char** argv) {
  std::optional<int> only;
  std::optional<std::string> load, save;
  for (int i = 1; i + 1 < argc; i += 2) {
    if (!std::strcmp(argv[i], "--only")) only = std::atoi(argv[i + 1]);
    else if (!std::strcmp(argv[i], "--checkpoint")) load = argv[i + 1];
    else if (!std::strcmp(argv[i], "--save-checkpoint")) save = argv[i + 1];
  }
  auto want = [&](int id) { return !only || *only == id; };

  if (want(1)) report(1, "kalman-oracle-evidence", kalman_oracle());
  if (want(2)) report(2, "refinement-tightens-bound", refinement_tightens());
  if (want(3)) report(3, "gradient-suite", gradient_suite());
  if (want(4)) report(4, "mode-identities", mode_identities());

  if (want(5) || want(6)) {
    std::optional<Checkpoint> ckpt;
    if (load) {
      ckpt = io::read_checkpoint(*load);
    } else {
      const auto p = train_pendulum();
      report(5, "pendulum-curve-monotone", curve_monotone(p));
      report(5, "pendulum-reconstruction", reconstruction(p));
      report(5, "pendulum-refined-eval", refinement_on_pendulum(p));
      ckpt = p.result.checkpoint;
      if (save) io::write_checkpoint(*save, *ckpt);
    }
    if (want(6)) report(6, "swing-up-planning", planning(*ckpt));
  }

  if (want(7)) report(7, "invariant-suites", invariants());

  std::printf("acceptance: %s (%d failed)\n", failures ? "FAIL" : "PASS", failures);
  return failures ? 1 : 0;
}
