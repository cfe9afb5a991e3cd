#pragma once

// Pipeline configuration and its JSON form.
//
// Profiles set the defaults before the file is applied:
//   desk:  epochs 20,  image_size 32,  batch_size 32, lr 3e-3
//   paper: epochs 100, image_size 256, batch_size 32, lr 1e-4
// Shared defaults: scales 3, lambda 1e-3, momentum 0.99, weight_decay 1e-2.
// The desk rate is higher because desk backbones start from random weights
// rather than a pretrained network; at 1e-4 they stay near chance for 20
// epochs. A scalar "lambda" applies to every scale after the
// first; the first scale always consumes the raw images, so its weight is
// stored as 0 whatever the file says.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "amen/backbone.hpp"
#include "amen/error.hpp"

namespace amen {

struct PipelineConfig {
  std::string profile = "desk";
  std::size_t scales = 3;
  std::vector<double> lambdas{0.0, 1e-3, 1e-3};  // per scale, lambdas[0] == 0
  std::size_t epochs = 20;
  double lr = 3e-3;
  double momentum = 0.99;
  double weight_decay = 1e-2;
  std::size_t batch_size = 32;
  std::size_t image_size = 32;
  std::uint64_t seed = 0;
  double eval_fraction = 0.25;
  std::size_t positive_class = 1;
  std::vector<std::size_t> conv_channels{8, 16};
  std::vector<std::size_t> hidden;
  // Start each branch from the previous one's parameters. Turning this off
  // (with zero lambdas) reduces the pipeline to independently seeded runs.
  bool handoff = true;

  friend bool operator==(const PipelineConfig&, const PipelineConfig&) = default;

  // Every scale gets `lambda` except the first.
  void set_lambda(double lambda) {
    lambdas.assign(scales, lambda);
    if (!lambdas.empty()) lambdas[0] = 0.0;
  }
};

inline PipelineConfig profile_defaults(const std::string& profile) {
  PipelineConfig c;
  c.profile = profile;
  if (profile == "desk") {
    c.epochs = 20;
    c.image_size = 32;
    c.lr = 3e-3;
  } else if (profile == "paper") {
    c.epochs = 100;
    c.image_size = 256;
    c.lr = 1e-4;
  } else {
    throw ValidationError("profile", "expected 'desk' or 'paper', got '" + profile + "'");
  }
  c.batch_size = 32;
  return c;
}

// Backbone for `channels`-channel images at the configured size: one
// [conv 3x3 pad 1, relu, maxpool 2x2] block per entry of conv_channels.
inline BackboneSpec backbone_for(const PipelineConfig& c, std::size_t channels = 1,
                                 std::size_t classes = 2) {
  BackboneSpec s;
  s.input_channels = channels;
  s.input_height = s.input_width = c.image_size;
  std::size_t in = channels;
  for (auto out : c.conv_channels) {
    s.features.push_back(LayerSpec::conv(in, out, 3, 1, 1));
    s.features.push_back(LayerSpec::relu());
    s.features.push_back(LayerSpec::maxpool(2, 2));
    in = out;
  }
  s.hidden = c.hidden;
  s.classes = classes;
  return s;
}

inline void validate_config(const PipelineConfig& c) {
  if (c.profile != "desk" && c.profile != "paper") throw ValidationError("profile", "expected 'desk' or 'paper'");
  if (c.scales < 1) throw ValidationError("scales", "must be >= 1");
  if (c.lambdas.size() != c.scales) {
    throw ValidationError("lambda", "expected " + std::to_string(c.scales) + " per-scale values, got " +
                                        std::to_string(c.lambdas.size()));
  }
  for (double l : c.lambdas) {
    if (!(l >= 0.0) || !std::isfinite(l)) throw ValidationError("lambda", "must be finite and >= 0");
  }
  if (c.lambdas[0] != 0.0) throw ValidationError("lambda", "first scale weight must be 0");
  if (c.epochs < 1) throw ValidationError("epochs", "must be >= 1");
  if (!(c.lr > 0.0)) throw ValidationError("lr", "must be > 0");
  if (!(c.momentum >= 0.0 && c.momentum < 1.0)) throw ValidationError("momentum", "must lie in [0, 1)");
  if (!(c.weight_decay >= 0.0)) throw ValidationError("weight_decay", "must be >= 0");
  if (c.batch_size < 1) throw ValidationError("batch_size", "must be >= 1");
  if (c.image_size < 1) throw ValidationError("image_size", "must be >= 1");
  if (!(c.eval_fraction > 0.0 && c.eval_fraction < 1.0)) throw ValidationError("eval_fraction", "must lie in (0, 1)");
  if (c.conv_channels.empty()) throw ValidationError("conv_channels", "need at least one block");
  for (auto ch : c.conv_channels)
    if (ch == 0) throw ValidationError("conv_channels", "must be positive");
  for (auto h : c.hidden)
    if (h == 0) throw ValidationError("hidden", "must be positive");
  try {
    feature_shape(backbone_for(c));
  } catch (const SpecError& e) {
    throw ValidationError("image_size", std::string("backbone does not fit: ") + e.what());
  }
}

inline nlohmann::json config_to_json(const PipelineConfig& c) {
  return {{"profile", c.profile},       {"scales", c.scales},
          {"lambda", c.lambdas},        {"epochs", c.epochs},
          {"lr", c.lr},                 {"momentum", c.momentum},
          {"weight_decay", c.weight_decay}, {"batch_size", c.batch_size},
          {"image_size", c.image_size}, {"seed", c.seed},
          {"eval_fraction", c.eval_fraction}, {"positive_class", c.positive_class},
          {"conv_channels", c.conv_channels}, {"hidden", c.hidden},
          {"handoff", c.handoff}};
}

namespace detail {

template <class V>
V field(const nlohmann::json& j, const char* key) {
  try {
    return j.at(key).get<V>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(key, std::string("wrong type: ") + e.what());
  }
}

inline std::size_t count_field(const nlohmann::json& j, const char* key) {
  const auto& v = j.at(key);
  if (!v.is_number_integer()) throw ValidationError(key, "must be an integer");
  if (v.get<std::int64_t>() < 0) throw ValidationError(key, "must be >= 0");
  return v.get<std::size_t>();
}

// 1-based line/column of a byte offset (nlohmann reports bytes read).
inline std::string line_col(const std::string& text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i + 1 < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return "line " + std::to_string(line) + ", column " + std::to_string(col);
}

}  // namespace detail

// Applies JSON text on top of the profile defaults. `profile` (e.g. from the
// command line) wins over a "profile" key in the text.
inline PipelineConfig parse_config_text(const std::string& text,
                                        const std::optional<std::string>& profile = std::nullopt) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("malformed config JSON at " + detail::line_col(text, e.byte) + ": " + e.what());
  }
  if (!j.is_object()) throw ParseError("config must be a JSON object");

  static const std::set<std::string> known{
      "profile", "scales", "lambda", "epochs", "lr", "momentum", "weight_decay", "batch_size",
      "image_size", "seed", "eval_fraction", "positive_class", "conv_channels", "hidden", "handoff"};
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw ValidationError(key, "unknown key");
  }

  std::string prof = profile.value_or(j.contains("profile") ? detail::field<std::string>(j, "profile") : "desk");
  PipelineConfig c = profile_defaults(prof);
  if (j.contains("scales")) c.scales = detail::count_field(j, "scales");
  if (j.contains("epochs")) c.epochs = detail::count_field(j, "epochs");
  if (j.contains("batch_size")) c.batch_size = detail::count_field(j, "batch_size");
  if (j.contains("image_size")) c.image_size = detail::count_field(j, "image_size");
  if (j.contains("seed")) c.seed = detail::count_field(j, "seed");
  if (j.contains("positive_class")) c.positive_class = detail::count_field(j, "positive_class");
  if (j.contains("lr")) c.lr = detail::field<double>(j, "lr");
  if (j.contains("momentum")) c.momentum = detail::field<double>(j, "momentum");
  if (j.contains("weight_decay")) c.weight_decay = detail::field<double>(j, "weight_decay");
  if (j.contains("eval_fraction")) c.eval_fraction = detail::field<double>(j, "eval_fraction");
  if (j.contains("conv_channels")) c.conv_channels = detail::field<std::vector<std::size_t>>(j, "conv_channels");
  if (j.contains("hidden")) c.hidden = detail::field<std::vector<std::size_t>>(j, "hidden");
  if (j.contains("handoff")) c.handoff = detail::field<bool>(j, "handoff");

  if (c.scales < 1) throw ValidationError("scales", "must be >= 1");
  const auto& lam = j.contains("lambda") ? j.at("lambda") : nlohmann::json(1e-3);
  if (lam.is_number()) {
    c.set_lambda(lam.get<double>());
    if (!(lam.get<double>() >= 0.0)) throw ValidationError("lambda", "must be >= 0");
  } else if (lam.is_array()) {
    c.lambdas = detail::field<std::vector<double>>(j, "lambda");
    if (c.lambdas.size() != c.scales) {
      throw ValidationError("lambda", "array length must equal scales (" + std::to_string(c.scales) + ")");
    }
    for (double l : c.lambdas)
      if (!(l >= 0.0)) throw ValidationError("lambda", "must be >= 0");
    c.lambdas[0] = 0.0;
  } else {
    throw ValidationError("lambda", "must be a number or an array of numbers");
  }
  validate_config(c);
  return c;
}

inline PipelineConfig parse_config(const std::filesystem::path& path,
                                   const std::optional<std::string>& profile = std::nullopt) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read config " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  try {
    return parse_config_text(ss.str(), profile);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

}  // namespace amen
