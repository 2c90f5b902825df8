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

#include "apiae/config.hpp"

#include <fstream>

#include "apiae/errors.hpp"

namespace apiae {

using nlohmann::json;

json default_config() {
  const Config c;
  json j;
  j["seed"] = c.seed;
  j["threads"] = c.threads;
  j["data"] = {{"N", c.data.N},
               {"N_test", c.data.N_test},
               {"K", c.data.K},
               {"dt", c.data.dt},
               {"disturbance_sigma", c.data.disturbance_sigma},
               {"pixel_noise_sigma", c.data.pixel_noise_sigma}};
  j["model"] = {{"d_z", c.model.d_z},
                {"d_u", c.model.d_u},
                {"components", c.model.components},
                {"decoder_hidden", c.model.decoder_hidden},
                {"rnn_hidden", c.model.rnn_hidden},
                {"init_noise", c.model.init_noise}};
  j["train"] = {{"mode", std::string(mode_name(c.train.mode))},
                {"L", c.train.L},
                {"R", c.train.R},
                {"eta", c.train.eta},
                {"batch_size", c.train.batch_size},
                {"learning_rate", c.train.learning_rate},
                {"epochs", c.train.epochs},
                {"grad_clip", c.train.grad_clip},
                {"ess_threshold", c.train.ess_threshold},
                {"cov_floor", c.train.cov_floor}};
  j["eval"] = {{"mode", std::string(mode_name(c.eval.mode))}, {"L", c.eval.L}, {"R", c.eval.R}, {"eta", c.eval.eta}};
  j["plan"] = {{"L", c.plan.L},
               {"R", c.plan.R},
               {"eta", c.plan.eta},
               {"horizon", c.plan.horizon},
               {"dt", c.plan.dt},
               {"temperature", c.plan.temperature},
               {"weight", c.plan.weight},
               {"start_angle", c.plan.start_angle},
               {"target_angle", c.plan.target_angle}};
  const GradCheckConfig& g = c.grad_check;
  j["grad_check"] = {{"d_z", g.d_z},
                     {"d_u", g.d_u},
                     {"d_x", g.d_x},
                     {"components", g.components},
                     {"decoder_hidden", g.decoder_hidden},
                     {"rnn_hidden", g.rnn_hidden},
                     {"K", g.K},
                     {"L", g.L},
                     {"R", g.R},
                     {"dt", g.dt},
                     {"eps", g.eps},
                     {"seed", g.seed}};
  return j;
}

namespace {

bool same_kind(const json& expected, const json& given) {
  if (expected.is_number_integer()) return given.is_number_integer();
  if (expected.is_number()) return given.is_number();
  return expected.type() == given.type();
}

std::string kind_name(const json& expected) {
  if (expected.is_number_integer()) return "an integer";
  if (expected.is_number()) return "a number";
  if (expected.is_string()) return "a string";
  return expected.type_name();
}

// Overlay `src` on `dst`, which holds the defaults and fixes the schema.
void merge(json& dst, const json& src, const std::string& where) {
  if (!src.is_object()) throw UsageError("config: " + (where.empty() ? "top level" : where) + " must be an object");
  for (const auto& [key, value] : src.items()) {
    const std::string name = where.empty() ? key : where + "." + key;
    if (!dst.contains(key)) throw UsageError("config: unknown key '" + name + "'");
    json& slot = dst[key];
    if (slot.is_object()) {
      merge(slot, value, name);
    } else {
      if (!same_kind(slot, value)) throw UsageError("config: '" + name + "' must be " + kind_name(slot));
      slot = value;
    }
  }
}

json parse_override(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0) throw UsageError("override '" + text + "' is not of the form key=value");
  const std::string path = text.substr(0, eq);
  const std::string raw = text.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::parse_error&) {
    value = raw;  // bare strings such as train.mode=fivo
  }
  json patch = value;
  std::string rest = path;
  std::vector<std::string> parts;
  for (std::size_t pos; (pos = rest.find('.')) != std::string::npos;) {
    parts.push_back(rest.substr(0, pos));
    rest = rest.substr(pos + 1);
  }
  parts.push_back(rest);
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) {
    if (it->empty()) throw UsageError("override '" + text + "' has an empty key");
    patch = json{{*it, patch}};
  }
  return patch;
}

template <typename T>
T get(const json& j, const char* key) {
  return j.at(key).get<T>();
}

void require(bool ok, const std::string& message) {
  if (!ok) throw UsageError("config: " + message);
}

}  // namespace

Config config_from_json(const json& j) {
  Config c;
  c.effective = j;
  c.seed = get<std::uint64_t>(j, "seed");
  c.threads = get<int>(j, "threads");
  require(c.threads >= 1, "threads must be at least 1");

  const json& d = j.at("data");
  c.data.N = get<Index>(d, "N");
  c.data.N_test = get<Index>(d, "N_test");
  c.data.K = get<Index>(d, "K");
  c.data.dt = get<double>(d, "dt");
  c.data.disturbance_sigma = get<double>(d, "disturbance_sigma");
  c.data.pixel_noise_sigma = get<double>(d, "pixel_noise_sigma");
  require(c.data.N >= 1 && c.data.N_test >= 1, "data.N and data.N_test must be positive");
  require(c.data.K >= 2, "data.K must be at least 2");
  require(c.data.dt > 0, "data.dt must be positive");
  require(c.data.disturbance_sigma >= 0 && c.data.pixel_noise_sigma >= 0, "data noise levels must be non-negative");

  const json& m = j.at("model");
  c.model.d_z = get<Index>(m, "d_z");
  c.model.d_u = get<Index>(m, "d_u");
  c.model.d_x = pendulum::kPixels;
  c.model.components = get<Index>(m, "components");
  c.model.decoder_hidden = get<Index>(m, "decoder_hidden");
  c.model.rnn_hidden = get<Index>(m, "rnn_hidden");
  c.model.init_noise = get<double>(m, "init_noise");
  c.model.K = c.data.K;
  c.model.dt = c.data.dt;
  require(c.model.d_z >= 1 && c.model.d_u >= 1 && c.model.components >= 1, "model dimensions must be positive");
  require(c.model.decoder_hidden >= 0 && c.model.rnn_hidden >= 1, "model widths are out of range");
  require(c.model.init_noise >= 0, "model.init_noise must be non-negative");

  const json& t = j.at("train");
  c.train.mode = parse_mode(get<std::string>(t, "mode"));
  c.train.L = get<Index>(t, "L");
  c.train.R = get<Index>(t, "R");
  c.train.K = c.data.K;
  c.train.dt = c.data.dt;
  c.train.eta = get<double>(t, "eta");
  c.train.batch_size = get<Index>(t, "batch_size");
  c.train.learning_rate = get<double>(t, "learning_rate");
  c.train.epochs = get<int>(t, "epochs");
  c.train.seed = c.seed;
  c.train.grad_clip = get<double>(t, "grad_clip");
  c.train.ess_threshold = get<double>(t, "ess_threshold");
  c.train.cov_floor = get<double>(t, "cov_floor");
  c.train.threads = c.threads;
  try {
    c.train.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(std::string("config: ") + e.what());
  }

  const json& e = j.at("eval");
  c.eval.mode = parse_mode(get<std::string>(e, "mode"));
  c.eval.L = get<Index>(e, "L");
  c.eval.R = get<Index>(e, "R");
  c.eval.eta = get<double>(e, "eta");
  require(c.eval.L >= 2 && c.eval.R >= 0, "eval.L must be at least 2 and eval.R non-negative");
  require(c.eval.eta > 0 && c.eval.eta <= 1, "eval.eta must lie in (0, 1]");

  const json& p = j.at("plan");
  c.plan.L = get<Index>(p, "L");
  c.plan.R = get<Index>(p, "R");
  c.plan.eta = get<double>(p, "eta");
  c.plan.horizon = get<Index>(p, "horizon");
  c.plan.dt = get<double>(p, "dt");
  c.plan.temperature = get<double>(p, "temperature");
  c.plan.weight = get<double>(p, "weight");
  c.plan.start_angle = get<double>(p, "start_angle");
  c.plan.target_angle = get<double>(p, "target_angle");
  require(c.plan.L >= 2 && c.plan.R >= 0, "plan.L must be at least 2 and plan.R non-negative");
  require(c.plan.eta > 0 && c.plan.eta <= 1, "plan.eta must lie in (0, 1]");
  require(c.plan.horizon >= 2, "plan.horizon must be at least 2");
  require(c.plan.dt > 0 && c.plan.temperature > 0 && c.plan.weight >= 0, "plan scales are out of range");

  const json& g = j.at("grad_check");
  GradCheckConfig& gc = c.grad_check;
  gc.d_z = get<Index>(g, "d_z");
  gc.d_u = get<Index>(g, "d_u");
  gc.d_x = get<Index>(g, "d_x");
  gc.components = get<Index>(g, "components");
  gc.decoder_hidden = get<Index>(g, "decoder_hidden");
  gc.rnn_hidden = get<Index>(g, "rnn_hidden");
  gc.K = get<Index>(g, "K");
  gc.L = get<Index>(g, "L");
  gc.R = get<Index>(g, "R");
  gc.dt = get<double>(g, "dt");
  gc.eps = get<double>(g, "eps");
  gc.seed = get<std::uint64_t>(g, "seed");
  require(gc.d_z >= 1 && gc.d_u >= 1 && gc.d_x >= 1 && gc.components >= 1 && gc.rnn_hidden >= 1 &&
              gc.decoder_hidden >= 0,
          "grad_check dimensions must be positive");
  require(gc.K >= 3 && gc.L >= 2 && gc.R >= 0, "grad_check needs K >= 3, L >= 2, R >= 0");
  require(gc.dt > 0 && gc.eps > 0, "grad_check.dt and grad_check.eps must be positive");
  return c;
}

Config load_config(const std::optional<std::filesystem::path>& path, const std::vector<std::string>& overrides) {
  json j = default_config();
  if (path) {
    std::ifstream in(*path);
    if (!in) throw DataError("cannot open config " + path->string());
    json file;
    try {
      file = json::parse(in);
    } catch (const json::parse_error& e) {
      throw UsageError("config " + path->string() + ": " + e.what());
    }
    merge(j, file, "");
  }
  for (const auto& o : overrides) merge(j, parse_override(o), "");
  try {
    return config_from_json(j);
  } catch (const json::exception& e) {
    throw UsageError(std::string("config: ") + e.what());
  }
}

void write_config(const std::filesystem::path& path, const Config& config) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out << config.effective.dump(2) << '\n';
  if (!out) throw DataError("write failed: " + path.string());
}

pendulum::GenerateOptions Config::train_data_options() const {
  pendulum::GenerateOptions o;
  o.N = data.N;
  o.K = data.K;
  o.dt = data.dt;
  o.disturbance_sigma = data.disturbance_sigma;
  o.pixel_noise_sigma = data.pixel_noise_sigma;
  o.seed = derive_seed(seed, 0xda7a, 0);
  return o;
}

pendulum::GenerateOptions Config::test_data_options() const {
  pendulum::GenerateOptions o = train_data_options();
  o.N = data.N_test;
  o.seed = derive_seed(seed, 0xda7a, 1);
  return o;
}

}  // namespace apiae
