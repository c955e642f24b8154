#pragma once

#include <json.hpp>

#include "sgde/tensor_nn.hpp"

namespace sgde {

inline void to_json(nlohmann::json& j, const LayerSpec& l) {
  j = nlohmann::json{{"in", l.in_width},
                     {"out", l.out_width},
                     {"activation", activation_name(l.activation)}};
  if (l.activation == Activation::LeakyRelu) j["slope"] = l.slope;
}

inline void from_json(const nlohmann::json& j, LayerSpec& l) {
  l.in_width = j.at("in").get<std::size_t>();
  l.out_width = j.at("out").get<std::size_t>();
  l.activation = activation_from_name(j.at("activation").get<std::string>());
  l.slope = j.value("slope", 0.2);
}

inline void to_json(nlohmann::json& j, const NetworkArch& a) {
  j = nlohmann::json{{"layers", a.layers}};
}

inline void from_json(const nlohmann::json& j, NetworkArch& a) {
  a.layers = j.at("layers").get<std::vector<LayerSpec>>();
}

}  // namespace sgde
