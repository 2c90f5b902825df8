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

#include "apiae/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "apiae/errors.hpp"
#include "apiae/parallel.hpp"

namespace apiae {

using graph::Tape;
using graph::Var;

namespace {

constexpr std::uint64_t kEvalStream = 0xe7a1'0000'0000'0001ULL;
constexpr std::uint64_t kShuffleStream = 0x5eed5eedULL;

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

Mode parse_mode(std::string_view name) {
  if (name == "apiae+r" || name == "apiae_r") return Mode::apiae_r;
  if (name == "apiae") return Mode::apiae;
  if (name == "fivo") return Mode::fivo;
  if (name == "iwae") return Mode::iwae;
  throw UsageError("unknown mode '" + std::string(name) + "' (expected apiae+r, apiae, fivo or iwae)");
}

std::string_view mode_name(Mode mode) {
  switch (mode) {
    case Mode::apiae_r: return "apiae+r";
    case Mode::apiae: return "apiae";
    case Mode::fivo: return "fivo";
    case Mode::iwae: return "iwae";
  }
  return "unknown";
}

bool mode_resamples(Mode mode) { return mode == Mode::apiae_r || mode == Mode::fivo; }
bool mode_refines(Mode mode) { return mode == Mode::apiae_r || mode == Mode::apiae; }

AdaptConfig adapt_config(Mode mode, Index L, Index R, double eta, double ess_threshold, double cov_floor) {
  AdaptConfig c;
  c.L = L;
  c.R = mode_refines(mode) ? R : 0;
  c.eta = eta;
  c.resample = mode_resamples(mode);
  c.ess_threshold = ess_threshold;
  c.update_gains = false;
  c.update_init = true;
  c.cov_floor = cov_floor;
  return c;
}

Checkpoint Checkpoint::init(const ModelSpec& spec, Rng& rng) {
  Checkpoint c;
  Model& m = c.model;
  m.d_z = spec.d_z;
  m.d_u = spec.d_u;
  m.d_x = spec.d_x;
  m.K = spec.K;
  m.dt = spec.dt;
  m.dynamics = LocallyLinearDynamics::stable_init(spec.d_z, spec.d_u, spec.components, spec.init_noise, rng);
  m.decoder = GaussianDecoder::init(spec.d_z, spec.decoder_hidden, spec.d_x, rng);
  m.prior = InitialPrior::standard(spec.d_z);
  c.net = InferenceNetwork::init(spec.d_x, spec.rnn_hidden, spec.d_z, spec.d_u, rng);
  return c;
}

std::size_t Checkpoint::parameter_count() const {
  std::size_t n = 0;
  visit([&](const std::string&, const Matrix& m) { n += static_cast<std::size_t>(m.size()); });
  return n;
}

double mco(const Vector& S) { return weights(S).log_mean_exp; }

Var mco(Var S) { return graph::logsumexp(-S) + (-std::log(static_cast<double>(S.value().size()))); }

std::vector<Var> SequenceGraph::params() const {
  std::vector<Var> p = model.params;
  p.insert(p.end(), net.params.begin(), net.params.end());
  return p;
}

SequenceGraph build_sequence(Tape& tape, const Checkpoint& ckpt, const Matrix& x, const AdaptConfig& config, Rng& rng,
                             bool requires_grad) {
  if (x.cols() != ckpt.model.d_x)
    throw DataError("sequence has " + std::to_string(x.cols()) + " features, checkpoint expects " +
                    std::to_string(ckpt.model.d_x));
  SequenceGraph g;
  g.model = lift(tape, ckpt.model, requires_grad);
  g.net = lift(tape, ckpt.net, requires_grad);
  auto inferred = infer(tape, g.net, x);
  g.adapt = adapt_loop(tape, g.model, inferred.q0, std::move(inferred.schedule), StateCost::learning(x), config, rng);
  g.bound = mco(g.adapt.paths.action);
  return g;
}

SequenceGradient sequence_gradient(const Checkpoint& ckpt, const Matrix& x, const AdaptConfig& config, Rng& rng) {
  Tape tape;
  const auto g = build_sequence(tape, ckpt, x, config, rng, true);
  const auto grads = tape.backward(g.bound);
  SequenceGradient out;
  out.bound = g.bound.scalar();
  out.ess = g.adapt.rounds.back().ess;
  for (const Var& p : g.params()) out.grads.push_back(grads[p]);
  return out;
}

BoundReport evaluate_bound(const Checkpoint& ckpt, std::span<const Matrix> data, Mode mode, Index L, Index R,
                           const EvalOptions& options) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto config = adapt_config(mode, L, R, options.eta, options.ess_threshold, options.cov_floor);
  for (const Matrix& x : data) {
    if (x.cols() != ckpt.model.d_x || x.rows() != ckpt.model.K)
      throw DataError("evaluate_bound: sequence shape " + std::to_string(x.rows()) + "x" + std::to_string(x.cols()) +
                      " does not match checkpoint " + std::to_string(ckpt.model.K) + "x" +
                      std::to_string(ckpt.model.d_x));
  }
  BoundReport report;
  report.bounds.resize(data.size());
  report.ess.resize(data.size());
  report.rounds.resize(data.size());
  parallel_for(data.size(), options.threads, [&](std::size_t i) {
    Rng rng(derive_seed(options.seed, kEvalStream, i));
    Tape tape;
    const auto g = build_sequence(tape, ckpt, data[i], config, rng, false);
    report.bounds[i] = g.bound.scalar();
    report.ess[i] = g.adapt.rounds.back().ess;
    report.rounds[i] = g.adapt.rounds;
  });
  const double n = static_cast<double>(std::max<std::size_t>(data.size(), 1));
  report.mean_bound = std::accumulate(report.bounds.begin(), report.bounds.end(), 0.0) / n;
  report.ess_mean = std::accumulate(report.ess.begin(), report.ess.end(), 0.0) / n;
  report.wallclock_s = seconds_since(t0);
  return report;
}

void TrainConfig::validate() const {
  if (L < 2) throw UsageError("train: L must be at least 2");
  if (R < 0) throw UsageError("train: R must be non-negative");
  if (K < 2) throw UsageError("train: K must be at least 2");
  if (!(dt > 0)) throw UsageError("train: dt must be positive");
  if (!(eta > 0 && eta <= 1)) throw UsageError("train: eta must lie in (0, 1]");
  if (batch_size < 1) throw UsageError("train: batch_size must be positive");
  if (!(learning_rate > 0)) throw UsageError("train: learning_rate must be positive");
  if (epochs < 0) throw UsageError("train: epochs must be non-negative");
  if (!(grad_clip > 0)) throw UsageError("train: grad_clip must be positive");
}

void Adam::step(std::span<Matrix* const> params, std::span<const Matrix> grads) {
  if (params.size() != grads.size()) throw std::invalid_argument("adam: parameter/gradient count mismatch");
  if (m_.empty()) {
    for (const Matrix* p : params) {
      m_.push_back(Matrix::Zero(p->rows(), p->cols()));
      v_.push_back(Matrix::Zero(p->rows(), p->cols()));
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grads[i];
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grads[i].cwiseProduct(grads[i]);
    const auto m_hat = (m_[i].array() / c1);
    const auto v_hat = (v_[i].array() / c2);
    params[i]->array() -= lr_ * m_hat / (v_hat.sqrt() + eps_);
  }
}

TrainResult train_run(Checkpoint init, std::span<const Matrix> data, const TrainConfig& config,
                      const EpochCallback& on_epoch) {
  config.validate();
  for (const Matrix& x : data)
    if (x.rows() != config.K || x.cols() != init.model.d_x)
      throw DataError("train: every sequence must be " + std::to_string(config.K) + "x" +
                      std::to_string(init.model.d_x));
  if (data.empty()) throw DataError("train: empty dataset");

  const auto adapt = adapt_config(config.mode, config.L, config.R, config.eta, config.ess_threshold, config.cov_floor);
  TrainResult result;
  result.checkpoint = std::move(init);
  Checkpoint& ckpt = result.checkpoint;
  ckpt.model.dt = config.dt;
  ckpt.model.K = config.K;

  std::vector<Matrix*> params;
  ckpt.visit([&](const std::string&, Matrix& m) { params.push_back(&m); });
  Adam adam(config.learning_rate);
  const auto t0 = std::chrono::steady_clock::now();

  {
    EvalOptions eo{config.eta, config.ess_threshold, config.cov_floor, derive_seed(config.seed, 0), config.threads};
    BoundReport r0;
    try {
      r0 = evaluate_bound(ckpt, data, config.mode, config.L, config.R, eo);
    } catch (const NumericalError& e) {
      std::ostringstream os;
      os << "train: non-finite objective in the epoch 0 evaluation (seed " << eo.seed << "): " << e.what();
      throw NumericalError(os.str());
    }
    EpochRecord rec{0, r0.mean_bound, r0.ess_mean, seconds_since(t0)};
    result.curve.push_back(rec);
    if (on_epoch) on_epoch(rec, ckpt);
  }

  const std::size_t N = data.size();
  const auto batch = static_cast<std::size_t>(config.batch_size);
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::vector<std::size_t> order(N);
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(derive_seed(config.seed, kShuffleStream, static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double bound_sum = 0.0;
    double ess_sum = 0.0;
    for (std::size_t start = 0, b = 0; start < N; start += batch, ++b) {
      const std::size_t count = std::min(batch, N - start);
      std::vector<SequenceGradient> parts(count);
      const auto batch_seed = derive_seed(config.seed, static_cast<std::uint64_t>(epoch), b + 1);
      try {
        parallel_for(count, config.threads, [&](std::size_t i) {
          Rng rng(derive_seed(batch_seed, order[start + i]));
          parts[i] = sequence_gradient(ckpt, data[order[start + i]], adapt, rng);
        });
      } catch (const NumericalError& e) {
        std::ostringstream os;
        os << "train: non-finite objective in epoch " << epoch << ", batch " << b << " (seed " << batch_seed
           << "): " << e.what();
        throw NumericalError(os.str());
      }

      std::vector<Matrix> total(params.size());
      for (std::size_t p = 0; p < params.size(); ++p) total[p] = Matrix::Zero(params[p]->rows(), params[p]->cols());
      for (const auto& part : parts) {
        bound_sum += part.bound;
        ess_sum += part.ess;
        for (std::size_t p = 0; p < params.size(); ++p) total[p] += part.grads[p];
      }
      // descend on the negated mean bound
      double norm2 = 0.0;
      for (auto& g : total) {
        g *= -1.0 / static_cast<double>(count);
        norm2 += g.squaredNorm();
      }
      const double norm = std::sqrt(norm2);
      if (!std::isfinite(norm)) {
        std::ostringstream os;
        os << "train: non-finite gradient in epoch " << epoch << ", batch " << b << " (seed " << batch_seed << ")";
        throw NumericalError(os.str());
      }
      if (norm > config.grad_clip)
        for (auto& g : total) g *= config.grad_clip / norm;
      adam.step(params, total);
    }
    EpochRecord rec{epoch, bound_sum / static_cast<double>(N), ess_sum / static_cast<double>(N), seconds_since(t0)};
    result.curve.push_back(rec);
    if (on_epoch) on_epoch(rec, ckpt);
  }
  return result;
}

LinearGaussianSystem<double> linear_system(const Model& model) {
  const auto& dyn = model.dynamics;
  const auto& dec = model.decoder;
  if (dyn.components != 1) throw std::invalid_argument("linear_system: dynamics must have a single component");
  if (dec.hidden != 0) throw std::invalid_argument("linear_system: decoder must be affine");
  if (!dec.w2.rightCols(dec.d_x).isZero(0.0))
    throw std::invalid_argument("linear_system: decoder log-std must not depend on z");
  LinearGaussianSystem<double> sys;
  sys.A = dyn.component_a(0);
  sys.c = dyn.component_c(0).transpose();
  sys.B = dyn.component_b(0);
  sys.C = dec.w2.leftCols(dec.d_x).transpose();
  sys.b = dec.b2.leftCols(dec.d_x).transpose();
  sys.obs_std = dec.b2.rightCols(dec.d_x)
                    .transpose()
                    .cwiseMax(GaussianDecoder::kLogStdMin)
                    .cwiseMin(GaussianDecoder::kLogStdMax)
                    .array()
                    .exp()
                    .matrix();
  sys.mu0 = model.prior.mean.transpose();
  sys.P0 = (2.0 * model.prior.log_std.array()).exp().matrix().asDiagonal();
  sys.dt = model.dt;
  return sys;
}

}  // namespace apiae
