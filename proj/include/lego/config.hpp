#pragma once

#include <cmath>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "lego/arch.hpp"
#include "lego/data.hpp"
#include "lego/serialize.hpp"
#include "lego/tensor.hpp"

namespace lego {

struct LrSchedule {
  double initial = 1e-3;
  double decay_factor = 1.0;
  i64 decay_every = 0;  // 0 disables decay

  double at_epoch(i64 epoch) const {
    if (decay_every <= 0 || decay_factor == 1.0) return initial;
    return initial * std::pow(decay_factor, static_cast<double>(epoch / decay_every));
  }
};

struct TrainingSpec {
  i64 batch_size = 32;
  i64 epochs = 1;
  LrSchedule lr;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double alpha = 0.99;  // local-loss similarity weight
};

enum class LossMode { Global, Local };

struct ModelConfig {
  std::vector<LayerSpec> layers;
  TrainingSpec training;
  LossMode loss_mode = LossMode::Global;
  std::uint32_t seed = 1;
  nlohmann::json dataset;  // manifest path (string) or inline manifest object
  std::string base_dir;
  std::string source_text;
};

namespace detail {

inline i64 require_positive_int(const nlohmann::json& j, const std::string& key,
                                const std::string& where) {
  if (!j.contains(key)) throw invalid_input(where + "." + key + ": required");
  const auto& v = j.at(key);
  if (!v.is_number_integer() || v.get<i64>() < 1) {
    throw invalid_input(where + "." + key + ": expected a positive integer");
  }
  return v.get<i64>();
}

inline LayerSpec parse_layer(const nlohmann::json& j, std::size_t index) {
  const std::string where = "layers[" + std::to_string(index) + "]";
  if (!j.is_object() || !j.contains("type")) {
    throw invalid_input(where + ": expected an object with a \"type\" field");
  }
  const std::string type = j.at("type").get<std::string>();
  LayerSpec spec;
  if (type == "conv" || type == "lego") {
    check_keys(j, {"type", "n", "d", "stride", "padding", "o", "m"}, where);
    spec.kind = type == "conv" ? LayerKind::Conv : LayerKind::Lego;
    spec.n = require_positive_int(j, "n", where);
    spec.d = j.contains("d") ? require_positive_int(j, "d", where) : 5;
    spec.stride = j.contains("stride") ? require_positive_int(j, "stride", where) : 1;
    if (j.contains("padding")) {
      const i64 p = j.at("padding").get<i64>();
      if (p < 0) throw invalid_input(where + ".padding: must be >= 0");
      spec.pad = p;
    }
    if (type == "conv") {
      if (j.contains("o") || j.contains("m")) {
        throw invalid_input(where + ": o/m only apply to lego layers");
      }
    } else {
      spec.o = require_positive_int(j, "o", where);
      if (!j.contains("m")) throw invalid_input(where + ".m: required for lego layers");
      spec.m = j.at("m").get<double>();
      if (!(spec.m > 0.0) || spec.m > 1.0) {
        throw invalid_input(where + ".m: bank ratio must be in (0, 1]");
      }
    }
  } else if (type == "pool") {
    check_keys(j, {"type", "extent", "stride"}, where);
    spec.kind = LayerKind::Pool;
    spec.extent = j.contains("extent") ? require_positive_int(j, "extent", where) : 2;
    spec.pool_stride = j.contains("stride") ? require_positive_int(j, "stride", where) : spec.extent;
  } else if (type == "dense") {
    check_keys(j, {"type", "units"}, where);
    spec.kind = LayerKind::Dense;
    spec.units = require_positive_int(j, "units", where);
  } else if (type == "softmax") {
    check_keys(j, {"type"}, where);
    spec.kind = LayerKind::Softmax;
  } else {
    throw invalid_input(where + ".type: unknown layer type '" + type + "'");
  }
  return spec;
}

}  // namespace detail

inline ModelConfig parse_config(const nlohmann::json& j, const std::string& base_dir) {
  if (!j.is_object()) throw invalid_input("config: expected a JSON object");
  detail::check_keys(j, {"dataset", "layers", "training", "loss_mode", "seed"}, "config");

  ModelConfig config;
  config.base_dir = base_dir;
  config.source_text = j.dump();

  if (!j.contains("dataset")) throw invalid_input("config.dataset: required");
  config.dataset = j.at("dataset");
  if (!config.dataset.is_string() && !config.dataset.is_object()) {
    throw invalid_input("config.dataset: expected a manifest path or inline manifest object");
  }

  if (!j.contains("layers") || !j.at("layers").is_array() || j.at("layers").empty()) {
    throw invalid_input("config.layers: required, non-empty array");
  }
  const auto& layers = j.at("layers");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    config.layers.push_back(detail::parse_layer(layers[i], i));
  }
  validate_architecture(config.layers);

  if (j.contains("training")) {
    const auto& t = j.at("training");
    detail::check_keys(t, {"batch_size", "epochs", "lr", "beta1", "beta2", "eps", "alpha"},
                       "training");
    if (t.contains("batch_size")) {
      config.training.batch_size = t.at("batch_size").get<i64>();
      if (config.training.batch_size < 2) {
        throw invalid_input("training.batch_size: must be >= 2 (batch norm needs batch "
                            "statistics)");
      }
    }
    if (t.contains("epochs")) {
      config.training.epochs = t.at("epochs").get<i64>();
      if (config.training.epochs < 1) throw invalid_input("training.epochs: must be >= 1");
    }
    if (t.contains("lr")) {
      const auto& lr = t.at("lr");
      detail::check_keys(lr, {"initial", "decay_factor", "decay_every"}, "training.lr");
      config.training.lr.initial = lr.value("initial", 1e-3);
      config.training.lr.decay_factor = lr.value("decay_factor", 1.0);
      config.training.lr.decay_every = lr.value("decay_every", i64(0));
      if (config.training.lr.initial <= 0.0) {
        throw invalid_input("training.lr.initial: must be positive");
      }
      if (config.training.lr.decay_factor <= 0.0) {
        throw invalid_input("training.lr.decay_factor: must be positive");
      }
      if (config.training.lr.decay_every < 0) {
        throw invalid_input("training.lr.decay_every: must be >= 0");
      }
    }
    config.training.beta1 = t.value("beta1", 0.9);
    config.training.beta2 = t.value("beta2", 0.999);
    config.training.eps = t.value("eps", 1e-8);
    config.training.alpha = t.value("alpha", 0.99);
    if (config.training.alpha < 0.0 || config.training.alpha > 1.0) {
      throw invalid_input("training.alpha: must be in [0,1]");
    }
  }

  const std::string mode = j.value("loss_mode", std::string("global"));
  if (mode == "global") {
    config.loss_mode = LossMode::Global;
  } else if (mode == "local") {
    config.loss_mode = LossMode::Local;
  } else {
    throw invalid_input("config.loss_mode: expected 'global' or 'local', got '" + mode + "'");
  }
  config.seed = j.value("seed", 1u);
  return config;
}

inline ModelConfig load_config(const std::string& path) {
  const std::string text = read_text_file(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw invalid_input("config " + path + ": " + e.what());
  }
  return parse_config(j, std::filesystem::path(path).parent_path().string());
}

// Resolves the config's dataset field into a manifest.
inline DatasetManifest config_manifest(const ModelConfig& config) {
  if (config.dataset.is_string()) {
    std::filesystem::path p(config.dataset.get<std::string>());
    if (!p.is_absolute() && !config.base_dir.empty()) {
      p = std::filesystem::path(config.base_dir) / p;
    }
    return load_manifest(p.string());
  }
  return parse_manifest(config.dataset, config.base_dir);
}

// Checks architecture against dataset geometry. Throws invalid_input with a
// field-addressed message on any violation.
inline void validate_against_dataset(const ModelConfig& config, i64 window_len, i64 width,
                                     i64 num_classes) {
  infer_shapes(config.layers, window_len, width, num_classes);
}

// Rewrites every lego layer's (o, m), for compression grid sweeps.
inline ModelConfig with_compression(const ModelConfig& config, i64 o, double m) {
  ModelConfig out = config;
  for (LayerSpec& l : out.layers) {
    if (l.kind == LayerKind::Lego) {
      l.o = o;
      l.m = m;
    }
  }
  return out;
}

// Replaces every lego layer with its conventional counterpart.
inline ModelConfig as_baseline(const ModelConfig& config) {
  ModelConfig out = config;
  for (LayerSpec& l : out.layers) {
    if (l.kind == LayerKind::Lego) {
      l.kind = LayerKind::Conv;
      l.o = 1;
      l.m = 1.0;
    }
  }
  return out;
}

}  // namespace lego
