// Copyright 2026  Sourcetrace Authors
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

#include <cmath>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "sourcetrace/backends.hpp"
#include "sourcetrace/error.hpp"
#include "sourcetrace/nn.hpp"
#include "sourcetrace/text_io.hpp"

// Model serialization.  JSON with shortest-round-trip doubles, so a
// save/load cycle reproduces every parameter bit for bit.

namespace sourcetrace {

inline constexpr const char* kModelFormat = "sourcetrace-model";
inline constexpr int kModelVersion = 1;

namespace detail {

inline nlohmann::json net_to_json(const nn::DenseNet& net) {
  nn::validate_net(net);
  nlohmann::json j;
  j["input_dim"] = net.input_dim;
  nlohmann::json layers = nlohmann::json::array();
  for (const nn::DenseLayer& l : net.layers) {
    nlohmann::json lj;
    lj["activation"] = nn::activation_name(l.act);
    lj["rows"] = l.weight.rows;
    lj["cols"] = l.weight.cols;
    lj["weight"] = l.weight.data;
    lj["bias"] = l.bias;
    layers.push_back(std::move(lj));
  }
  j["layers"] = std::move(layers);
  return j;
}

inline nn::DenseNet net_from_json(const nlohmann::json& j) {
  nn::DenseNet net;
  net.input_dim = j.at("input_dim").get<std::size_t>();
  for (const nlohmann::json& lj : j.at("layers")) {
    nn::DenseLayer layer;
    layer.act = nn::activation_from_name(lj.at("activation").get<std::string>());
    const std::size_t rows = lj.at("rows").get<std::size_t>();
    const std::size_t cols = lj.at("cols").get<std::size_t>();
    layer.weight = Matrix(rows, cols);
    const std::vector<double> w = lj.at("weight").get<std::vector<double>>();
    if (w.size() != rows * cols) {
      throw ValidationError("model: weight payload does not match shape");
    }
    layer.weight.data = w;
    layer.bias = lj.at("bias").get<std::vector<double>>();
    if (!all_finite(layer.weight.data) || !all_finite(layer.bias)) {
      throw ValidationError("model: non-finite parameters");
    }
    net.layers.push_back(std::move(layer));
  }
  try {
    nn::validate_net(net);
  } catch (const ContractViolation& e) {
    throw ValidationError(std::string("model: ") + e.what());
  }
  return net;
}

inline nlohmann::json head_to_json(const nn::AamHead& head) {
  nlohmann::json j;
  j["scale"] = head.scale;
  j["margin"] = head.margin;
  j["rows"] = head.class_weights.rows;
  j["cols"] = head.class_weights.cols;
  j["class_weights"] = head.class_weights.data;
  return j;
}

inline nn::AamHead head_from_json(const nlohmann::json& j) {
  nn::AamHead head;
  head.scale = j.at("scale").get<double>();
  head.margin = j.at("margin").get<double>();
  const std::size_t rows = j.at("rows").get<std::size_t>();
  const std::size_t cols = j.at("cols").get<std::size_t>();
  head.class_weights = Matrix(rows, cols);
  const std::vector<double> w =
      j.at("class_weights").get<std::vector<double>>();
  if (w.size() != rows * cols) {
    throw ValidationError("model: head payload does not match shape");
  }
  head.class_weights.data = w;
  if (!all_finite(head.class_weights.data) || !std::isfinite(head.scale) ||
      !std::isfinite(head.margin)) {
    throw ValidationError("model: non-finite head parameters");
  }
  return head;
}

inline nlohmann::json model_envelope(const std::string& kind) {
  nlohmann::json j;
  j["format"] = kModelFormat;
  j["version"] = kModelVersion;
  j["kind"] = kind;
  return j;
}

inline nlohmann::json load_model_json(const std::string& path,
                                      const std::string& expect_kind) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(ParseError::Kind::malformed,
                     path + ": invalid JSON: " + e.what());
  }
  try {
    if (j.at("format").get<std::string>() != kModelFormat) {
      throw ValidationError(path + ": not a model file");
    }
    if (j.at("version").get<int>() != kModelVersion) {
      throw ValidationError(path + ": unsupported model version " +
                            j.at("version").dump());
    }
    if (j.at("kind").get<std::string>() != expect_kind) {
      throw ValidationError(path + ": expected a " + expect_kind +
                            " model, found " +
                            j.at("kind").get<std::string>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path + ": bad model envelope: " + e.what());
  }
  return j;
}

template <typename Fn>
inline auto guard_model_json(const std::string& path, Fn&& fn) {
  try {
    return fn();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path + ": bad model structure: " + e.what());
  }
}

}  // namespace detail

inline void save_dense_net(const std::string& path, const nn::DenseNet& net) {
  nlohmann::json j = detail::model_envelope("dense_net");
  j["net"] = detail::net_to_json(net);
  write_text_file(path, j.dump(2) + "\n");
}

inline nn::DenseNet load_dense_net(const std::string& path) {
  const nlohmann::json j = detail::load_model_json(path, "dense_net");
  return detail::guard_model_json(
      path, [&] { return detail::net_from_json(j.at("net")); });
}

inline void save_siamese(const std::string& path, const SiameseModel& model) {
  nlohmann::json j = detail::model_envelope("siamese");
  j["trunk"] = detail::net_to_json(model.trunk);
  j["loss_mode"] = siamese_loss_mode_name(model.loss_mode);
  j["ce_scale"] = model.ce_scale;
  write_text_file(path, j.dump(2) + "\n");
}

inline SiameseModel load_siamese(const std::string& path) {
  const nlohmann::json j = detail::load_model_json(path, "siamese");
  return detail::guard_model_json(path, [&] {
    SiameseModel model;
    model.trunk = detail::net_from_json(j.at("trunk"));
    model.loss_mode =
        siamese_loss_mode_from_name(j.at("loss_mode").get<std::string>());
    model.ce_scale = j.at("ce_scale").get<double>();
    if (!std::isfinite(model.ce_scale)) {
      throw ValidationError(path + ": non-finite ce_scale");
    }
    return model;
  });
}

namespace detail {

inline std::vector<std::string> class_ids_from_json(
    const nlohmann::json& j, const std::string& path) {
  std::vector<std::string> ids = j.get<std::vector<std::string>>();
  std::set<std::string> seen;
  for (const std::string& id : ids) {
    if (id.empty() || !seen.insert(id).second) {
      throw ValidationError(path + ": class ids must be unique and nonempty");
    }
  }
  return ids;
}

}  // namespace detail

inline void save_mlp(const std::string& path, const MlpModel& model) {
  nlohmann::json j = detail::model_envelope("mlp");
  j["net"] = detail::net_to_json(model.net);
  j["class_ids"] = model.class_ids;
  write_text_file(path, j.dump(2) + "\n");
}

inline MlpModel load_mlp(const std::string& path) {
  const nlohmann::json j = detail::load_model_json(path, "mlp");
  return detail::guard_model_json(path, [&] {
    MlpModel model;
    model.net = detail::net_from_json(j.at("net"));
    model.class_ids = detail::class_ids_from_json(j.at("class_ids"), path);
    if (model.net.output_dim() != model.class_ids.size()) {
      throw ValidationError(path + ": net output does not match class count");
    }
    return model;
  });
}

inline void save_projector(const std::string& path,
                           const ProjectorModel& model) {
  nlohmann::json j = detail::model_envelope("projector");
  j["net"] = detail::net_to_json(model.net);
  j["head"] = detail::head_to_json(model.head);
  j["class_ids"] = model.class_ids;
  write_text_file(path, j.dump(2) + "\n");
}

inline ProjectorModel load_projector(const std::string& path) {
  const nlohmann::json j = detail::load_model_json(path, "projector");
  return detail::guard_model_json(path, [&] {
    ProjectorModel model;
    model.net = detail::net_from_json(j.at("net"));
    model.head = detail::head_from_json(j.at("head"));
    model.class_ids = detail::class_ids_from_json(j.at("class_ids"), path);
    if (model.head.class_weights.rows != model.class_ids.size()) {
      throw ValidationError(path + ": head rows do not match class count");
    }
    if (model.head.class_weights.cols != model.net.output_dim()) {
      throw ValidationError(path +
                            ": head width does not match net output");
    }
    return model;
  });
}

}  // namespace sourcetrace
