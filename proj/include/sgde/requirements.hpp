#pragma once

#include <optional>
#include <string>

#include <json.hpp>

#include "sgde/errors.hpp"
#include "sgde/schema.hpp"
#include "sgde/tensor_nn.hpp"

namespace sgde {

// Optional structural constraints the registry may impose on pushed
// generators. Disabled by default.
struct ArchConstraints {
  bool enabled = false;
  std::size_t max_layers = 8;
  std::size_t max_width = 4096;
  bool dense_only = true;

  bool admits(const NetworkArch& arch) const {
    if (!enabled) return true;
    if (arch.layers.size() > max_layers) return false;
    for (const auto& L : arch.layers)
      if (L.in_width > max_width || L.out_width > max_width) return false;
    return true;  // every NetworkArch layer is dense
  }
};

// What a client learns when subscribing: the privacy gate and the structural
// expectations its generators must meet.
struct ServerRequirements {
  double max_epsilon = 1.5;
  std::string delta_rule = "min(1e-5, 1/(10*class_size))";
  ArchConstraints allowed_arch;
  std::optional<TabularSchema> schema;
  int protocol_version = 1;
  bool require_push_before_pull = true;
  // Minimum accepted RDP conversion order; 0 disables the gate.
  int min_optimal_order = 0;

  void validate() const {
    if (!(max_epsilon > 0.0)) throw ConfigError("max_epsilon must be > 0");
  }
};

inline void to_json(nlohmann::json& j, const ArchConstraints& a) {
  j = nlohmann::json{{"enabled", a.enabled},
                     {"max_layers", a.max_layers},
                     {"max_width", a.max_width},
                     {"dense_only", a.dense_only}};
}

inline void from_json(const nlohmann::json& j, ArchConstraints& a) {
  a.enabled = j.value("enabled", false);
  a.max_layers = j.value("max_layers", std::size_t{8});
  a.max_width = j.value("max_width", std::size_t{4096});
  a.dense_only = j.value("dense_only", true);
}

inline void to_json(nlohmann::json& j, const ServerRequirements& r) {
  j = nlohmann::json{{"max_epsilon", r.max_epsilon},
                     {"delta_rule", r.delta_rule},
                     {"allowed_arch", r.allowed_arch},
                     {"protocol_version", r.protocol_version},
                     {"require_push_before_pull", r.require_push_before_pull},
                     {"min_optimal_order", r.min_optimal_order}};
  if (r.schema) j["schema"] = *r.schema;
}

inline void from_json(const nlohmann::json& j, ServerRequirements& r) {
  r.max_epsilon = j.value("max_epsilon", 1.5);
  r.delta_rule = j.value("delta_rule", std::string("min(1e-5, 1/(10*class_size))"));
  if (j.contains("allowed_arch")) r.allowed_arch = j.at("allowed_arch").get<ArchConstraints>();
  if (j.contains("schema") && !j.at("schema").is_null())
    r.schema = j.at("schema").get<TabularSchema>();
  r.protocol_version = j.value("protocol_version", 1);
  r.require_push_before_pull = j.value("require_push_before_pull", true);
  r.min_optimal_order = j.value("min_optimal_order", 0);
}

}  // namespace sgde
