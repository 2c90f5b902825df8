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

#include "apiae/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <iostream>
#include <optional>

#include "CLI11.hpp"

#include "apiae/config.hpp"
#include "apiae/errors.hpp"
#include "apiae/gradcheck.hpp"
#include "apiae/io.hpp"
#include "apiae/pendulum.hpp"
#include "apiae/plan.hpp"
#include "apiae/train.hpp"

namespace apiae::cli {
namespace fs = std::filesystem;

namespace {

constexpr double kGradCheckTolerance = 1e-4;
constexpr std::uint64_t kPredictStream = 0x9ed1c7;
constexpr std::uint64_t kPlanStream = 0x91a4;
constexpr std::uint64_t kInitStream = 0x1417;

struct Common {
  std::string config_path;
  std::string out = ".";
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::vector<std::string> overrides;
};

struct Options {
  Common common;
  std::string data;
  std::string checkpoint;
  std::optional<std::string> mode;
  std::optional<Index> L;
  std::optional<Index> R;
  bool diagnostics = false;
  Index count = 8;
  std::optional<Index> index;
};

std::string numbered(const std::string& stem, Index n, const std::string& ext) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "_%03lld", static_cast<long long>(n));
  return stem + buf + ext;
}

Config resolve(const Options& o, const std::string& section) {
  std::vector<std::string> overrides = o.common.overrides;
  if (o.common.seed) overrides.push_back("seed=" + std::to_string(*o.common.seed));
  if (o.common.threads) overrides.push_back("threads=" + std::to_string(*o.common.threads));
  if (!section.empty()) {
    if (o.mode) overrides.push_back(section + ".mode=\"" + *o.mode + "\"");
    if (o.L) overrides.push_back(section + ".L=" + std::to_string(*o.L));
    if (o.R) overrides.push_back(section + ".R=" + std::to_string(*o.R));
  }
  std::optional<fs::path> path;
  if (!o.common.config_path.empty()) path = o.common.config_path;
  return load_config(path, overrides);
}

fs::path prepare_out(const Options& o, const Config& config) {
  fs::path out = o.common.out;
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw DataError("cannot create output directory " + out.string() + ": " + ec.message());
  write_config(out / "config.json", config);
  return out;
}

void require_path(const std::string& value, const char* flag) {
  if (value.empty()) throw UsageError(std::string(flag) + " is required");
}

void check_compatible(const Checkpoint& ckpt, const pendulum::Dataset& data) {
  if (ckpt.model.d_x != data.d_x || ckpt.model.K != data.K)
    throw DataError("dataset frames are " + std::to_string(data.K) + "x" + std::to_string(data.d_x) +
                    ", checkpoint expects " + std::to_string(ckpt.model.K) + "x" + std::to_string(ckpt.model.d_x));
}

int gen_data(const Options& o, std::ostream& out) {
  const Config config = resolve(o, "");
  const fs::path dir = prepare_out(o, config);
  const auto train = pendulum::generate(config.train_data_options());
  const auto test = pendulum::generate(config.test_data_options());
  io::write_dataset(dir / "train.bin", train);
  io::write_dataset(dir / "test.bin", test);
  out << "wrote " << train.size() << " training and " << test.size() << " test sequences to " << dir.string() << '\n';
  return kOk;
}

int train(const Options& o, std::ostream& out) {
  require_path(o.data, "--data");
  const Config config = resolve(o, "train");
  const auto data = io::read_dataset(o.data);
  if (data.K != config.data.K || data.d_x != pendulum::kPixels)
    throw DataError("dataset has K=" + std::to_string(data.K) + ", d_x=" + std::to_string(data.d_x) +
                    "; config expects K=" + std::to_string(config.data.K) + ", d_x=256");
  const fs::path dir = prepare_out(o, config);

  Rng init_rng(derive_seed(config.seed, kInitStream));
  Checkpoint ckpt = Checkpoint::init(config.model, init_rng);
  TrainConfig tc = config.train;
  std::vector<std::vector<double>> rows;
  auto on_epoch = [&](const EpochRecord& rec, const Checkpoint& c) {
    rows.push_back({static_cast<double>(rec.epoch), rec.mean_bound, rec.ess_mean, rec.wallclock_s});
    io::write_csv(dir / "curve.csv", {"epoch", "mean_bound", "ess_mean", "wallclock_s"}, rows);
    if (rec.epoch > 0) io::write_checkpoint(dir / numbered("checkpoint_epoch", rec.epoch, ".bin"), c);
    out << "epoch " << rec.epoch << " mean_bound " << rec.mean_bound << " ess " << rec.ess_mean << '\n';
  };
  const auto result = train_run(std::move(ckpt), data.sequences, tc, on_epoch);
  io::write_checkpoint(dir / "checkpoint.bin", result.checkpoint);
  return kOk;
}

int eval(const Options& o, std::ostream& out) {
  require_path(o.data, "--data");
  require_path(o.checkpoint, "--checkpoint");
  const Config config = resolve(o, "eval");
  const Checkpoint ckpt = io::read_checkpoint(o.checkpoint);
  const auto data = io::read_dataset(o.data);
  check_compatible(ckpt, data);
  const fs::path dir = prepare_out(o, config);

  EvalOptions opts;
  opts.eta = config.eval.eta;
  opts.ess_threshold = config.train.ess_threshold;
  opts.cov_floor = config.train.cov_floor;
  opts.seed = config.seed;
  opts.threads = config.threads;
  const auto report = evaluate_bound(ckpt, data.sequences, config.eval.mode, config.eval.L, config.eval.R, opts);

  std::vector<std::vector<double>> rows;
  for (std::size_t i = 0; i < report.bounds.size(); ++i)
    rows.push_back({static_cast<double>(i), report.bounds[i], report.ess[i]});
  io::write_csv(dir / "bound_report.csv", {"sequence", "bound", "ess"}, rows);
  io::write_csv(dir / "bound_summary.csv", {"L", "R", "mean_bound", "ess_mean", "sequences", "wallclock_s"},
                {{static_cast<double>(config.eval.L), static_cast<double>(config.eval.R), report.mean_bound,
                  report.ess_mean, static_cast<double>(report.bounds.size()), report.wallclock_s}});
  if (o.diagnostics) {
    std::vector<std::vector<double>> diag;
    for (std::size_t i = 0; i < report.rounds.size(); ++i)
      for (std::size_t r = 0; r < report.rounds[i].size(); ++r) {
        const auto& s = report.rounds[i][r];
        diag.push_back({static_cast<double>(i), static_cast<double>(r), s.ess, s.log_mean_exp,
                        static_cast<double>(s.resample_events)});
      }
    io::write_csv(dir / "rounds.csv", {"sequence", "round", "ess", "log_mean_exp", "resample_events"}, diag);
  }
  out << "mode " << mode_name(config.eval.mode) << " L " << config.eval.L << " R " << config.eval.R << " mean_bound "
      << report.mean_bound << " ess_mean " << report.ess_mean << '\n';
  return kOk;
}

int predict(const Options& o, std::ostream& out) {
  require_path(o.data, "--data");
  require_path(o.checkpoint, "--checkpoint");
  if (o.count < 1) throw UsageError("--count must be positive");
  const Config config = resolve(o, "eval");
  const Checkpoint ckpt = io::read_checkpoint(o.checkpoint);
  const auto data = io::read_dataset(o.data);
  check_compatible(ckpt, data);
  const fs::path dir = prepare_out(o, config);

  const auto adapt = adapt_config(config.eval.mode, config.eval.L, config.eval.R, config.eval.eta,
                                  config.train.ess_threshold, config.train.cov_floor);
  const Index K = ckpt.model.K;
  const Index n = std::min<Index>(o.count, data.size());
  std::vector<std::vector<double>> rows;
  for (Index i = 0; i < n; ++i) {
    const Matrix& x = data.sequences[static_cast<std::size_t>(i)];
    Rng rng(derive_seed(config.seed, kPredictStream, static_cast<std::uint64_t>(i)));
    const auto rec = reconstruct(ckpt, x, adapt, rng);
    const Matrix future = predict(ckpt.model, rec.ensemble, K, rng);
    Matrix top = Matrix::Zero(pendulum::kSide, 2 * K * pendulum::kSide);
    top.leftCols(K * pendulum::kSide) = io::frame_strip(x);
    Matrix bottom(pendulum::kSide, 2 * K * pendulum::kSide);
    bottom.leftCols(K * pendulum::kSide) = io::frame_strip(rec.frames);
    bottom.rightCols(K * pendulum::kSide) = io::frame_strip(future);
    Matrix image(2 * pendulum::kSide, top.cols());
    image << top, bottom;
    io::write_pgm(dir / numbered("predict", i, ".pgm"), image);
    const double mse = (x - rec.frames).squaredNorm() / static_cast<double>(x.size());
    rows.push_back({static_cast<double>(i), mse});
  }
  io::write_csv(dir / "predict.csv", {"sequence", "reconstruction_mse"}, rows);
  out << "wrote " << n << " prediction strips to " << dir.string() << '\n';
  return kOk;
}

int plan_cmd(const Options& o, std::ostream& out) {
  require_path(o.checkpoint, "--checkpoint");
  const Config config = resolve(o, "plan");
  const Checkpoint ckpt = io::read_checkpoint(o.checkpoint);
  if (ckpt.model.d_x != pendulum::kPixels) throw DataError("plan: checkpoint is not a 16x16 frame model");

  Matrix context;
  if (!o.data.empty()) {
    const auto data = io::read_dataset(o.data);
    check_compatible(ckpt, data);
    const Index i = o.index.value_or(0);
    if (i < 0 || i >= data.size()) throw UsageError("--index is out of range");
    context = data.sequences[static_cast<std::size_t>(i)];
  } else {
    context = pendulum::render(config.plan.start_angle);
  }
  const fs::path dir = prepare_out(o, config);

  auto problem = PlanningProblem::terminal(encode_initial(ckpt, context), config.plan.horizon, config.plan.dt,
                                           pendulum::render(config.plan.target_angle), config.plan.weight);
  problem.temperature = config.plan.temperature;
  problem.L = config.plan.L;
  problem.R = config.plan.R;
  problem.eta = config.plan.eta;
  problem.cov_floor = config.train.cov_floor;
  Rng rng(derive_seed(config.seed, kPlanStream));
  const Plan p = plan(ckpt.model, problem, rng);

  for (Index k = 0; k < p.decoded.rows(); ++k) {
    Matrix frame = io::frame_strip(p.decoded.row(k));
    io::write_pgm(dir / numbered("plan_frame", k, ".pgm"), frame);
  }
  io::write_pgm(dir / "plan_strip.pgm", io::frame_strip(p.decoded));
  std::vector<std::vector<double>> latent;
  for (Index k = 0; k < p.mean_path.rows(); ++k) {
    std::vector<double> row{static_cast<double>(k)};
    for (Index d = 0; d < p.mean_path.cols(); ++d) row.push_back(p.mean_path(k, d));
    latent.push_back(std::move(row));
  }
  std::vector<std::string> header{"step"};
  for (Index d = 0; d < p.mean_path.cols(); ++d) header.push_back("z" + std::to_string(d));
  io::write_csv(dir / "plan_latent.csv", header, latent);
  std::vector<std::vector<double>> cost;
  for (std::size_t r = 0; r < p.trace.size(); ++r)
    cost.push_back({static_cast<double>(r), p.trace[r].weighted_cost, p.trace[r].terminal_mse, p.trace[r].ess});
  io::write_csv(dir / "plan_cost.csv", {"round", "weighted_cost", "terminal_mse", "ess"}, cost);
  out << "terminal MSE " << p.trace.front().terminal_mse << " -> " << p.trace.back().terminal_mse << '\n';
  return kOk;
}

int grad_check(const Options& o, std::ostream& out) {
  const Config config = resolve(o, "");
  const fs::path dir = prepare_out(o, config);
  const auto entries = grad_check_suite(config.grad_check);
  std::map<std::string, double> worst;
  bool ok = true;
  std::ofstream csv(dir / "grad_check.csv");
  if (!csv) throw DataError("cannot write grad_check.csv");
  csv << "suite,check,max_relative_error\n";
  csv << std::setprecision(6) << std::scientific;
  for (const auto& e : entries) {
    csv << e.suite << ",\"" << e.name << "\"," << e.error << '\n';
    worst[e.suite] = std::max(worst[e.suite], e.error);
    ok = ok && e.error < kGradCheckTolerance;
  }
  out << std::setprecision(3) << std::scientific;
  for (const auto& e : entries) out << e.suite << "  " << e.name << "  " << e.error << '\n';
  for (const auto& [suite, w] : worst) out << "max " << suite << " " << w << '\n';
  out << (ok ? "all errors below " : "errors exceed ") << kGradCheckTolerance << '\n';
  return ok ? kOk : kNumerical;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Latent SDE learning and planning with adaptive path-integral refinement", "apiae"};
  app.require_subcommand(1);
  Options o;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", o.common.config_path, "JSON config file")->check(CLI::ExistingFile);
    cmd->add_option("--out", o.common.out, "Output directory")->capture_default_str();
    cmd->add_option("--seed", o.common.seed, "Base seed (overrides the config)");
    cmd->add_option("--threads", o.common.threads, "Worker threads")->check(CLI::PositiveNumber);
    cmd->add_option("overrides", o.common.overrides, "section.key=value overrides");
  };
  auto add_sampling = [&](CLI::App* cmd) {
    cmd->add_option("--mode", o.mode, "apiae+r | apiae | fivo | iwae");
    cmd->add_option("--L", o.L, "Samples per sequence");
    cmd->add_option("--R", o.R, "Adaptation rounds");
  };

  auto* gen = app.add_subcommand("gen-data", "Generate pendulum training and test sets");
  add_common(gen);
  auto* tr = app.add_subcommand("train", "Train a model on a dataset");
  add_common(tr);
  add_sampling(tr);
  tr->add_option("--data", o.data, "Training dataset")->required();
  auto* ev = app.add_subcommand("eval", "Evaluate the bound of a checkpoint");
  add_common(ev);
  add_sampling(ev);
  ev->add_option("--data", o.data, "Dataset")->required();
  ev->add_option("--checkpoint", o.checkpoint, "Checkpoint")->required();
  ev->add_flag("--diagnostics", o.diagnostics, "Also write per-round ESS and log-mean-exp");
  auto* pr = app.add_subcommand("predict", "Reconstruct K frames and predict K more");
  add_common(pr);
  add_sampling(pr);
  pr->add_option("--data", o.data, "Dataset")->required();
  pr->add_option("--checkpoint", o.checkpoint, "Checkpoint")->required();
  pr->add_option("--count", o.count, "Number of sequences")->capture_default_str();
  auto* pl = app.add_subcommand("plan", "Plan a swing-up in latent space");
  add_common(pl);
  add_sampling(pl);
  pl->add_option("--checkpoint", o.checkpoint, "Checkpoint")->required();
  pl->add_option("--data", o.data, "Take the context from this dataset instead of a rendered pose");
  pl->add_option("--index", o.index, "Sequence index used with --data");
  auto* gc = app.add_subcommand("grad-check", "Finite-difference gradient suite");
  add_common(gc);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << '\n';
    return kUsage;
  }

  try {
    if (pl->parsed() && o.mode) throw UsageError("plan does not take --mode");
    if (gen->parsed()) return gen_data(o, out);
    if (tr->parsed()) return train(o, out);
    if (ev->parsed()) return eval(o, out);
    if (pr->parsed()) return predict(o, out);
    if (pl->parsed()) return plan_cmd(o, out);
    if (gc->parsed()) return grad_check(o, out);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kData;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << '\n';
    return kNumerical;
  } catch (const std::invalid_argument& e) {
    err << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kData;
  }
  return kUsage;
}

int run(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args, std::cout, std::cerr);
}

}  // namespace apiae::cli
