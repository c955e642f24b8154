#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include <json.hpp>

#include "sgde/errors.hpp"
#include "sgde/matrix.hpp"
#include "sgde/rng.hpp"

// Per-feature description of a tabular dataset and the [0,1] / one-hot
// encoding derived from it. A "domain" matrix stores one column per feature
// (numeric value, or category index for categoricals); an "encoded" matrix
// stores the min-max scaled numerics and one-hot groups the models consume.

namespace sgde {

struct FeatureSpec {
  enum class Kind { Numeric, Categorical };

  std::string name;
  Kind kind = Kind::Numeric;
  double min = 0.0;                     // numeric
  double max = 1.0;                     // numeric
  std::vector<std::string> categories;  // categorical

  std::size_t encoded_width() const {
    return kind == Kind::Numeric ? 1 : categories.size();
  }
};

struct LabelSpec {
  std::string name;
  std::vector<std::string> classes;
  std::string positive_class;  // binary tasks only; may be empty

  int positive_index() const {
    if (positive_class.empty()) return -1;
    for (std::size_t i = 0; i < classes.size(); ++i)
      if (classes[i] == positive_class) return static_cast<int>(i);
    return -1;
  }
};

struct TabularSchema {
  std::vector<FeatureSpec> features;
  LabelSpec label;
  // Set when numeric ranges were fitted from a training split; the
  // preprocessing path asserts it to guard against test-data leakage.
  bool ranges_fitted = false;

  std::size_t encoded_width() const {
    std::size_t w = 0;
    for (const auto& f : features) w += f.encoded_width();
    return w;
  }

  // Strict validation for declared (user-authored) schemas.
  void validate() const {
    if (features.empty()) throw SchemaError("schema has no features");
    for (const auto& f : features) {
      if (f.name.empty()) throw SchemaError("feature with empty name");
      if (f.kind == FeatureSpec::Kind::Numeric) {
        if (!(f.min < f.max))
          throw SchemaError("numeric feature '" + f.name + "' needs min < max");
      } else if (f.categories.size() < 2) {
        throw SchemaError("categorical feature '" + f.name +
                          "' needs at least 2 categories");
      }
    }
    if (label.classes.size() < 2) throw SchemaError("label needs at least 2 classes");
    if (!label.positive_class.empty() && label.positive_index() < 0)
      throw SchemaError("positive_class is not one of the label classes");
  }
};

// Domain-space rows plus label indices; the shape produced by CSV ingestion.
struct RawDataset {
  Matrix domain;            // n x feature count
  std::vector<int> labels;  // indices into schema.label.classes

  std::size_t size() const { return domain.rows; }
};

// Refit numeric ranges from the given training rows. Collapsed ranges
// (constant training column) are kept as min == max and encoded as 0.5.
inline TabularSchema fit_numeric_ranges(const TabularSchema& schema,
                                        const Matrix& domain,
                                        std::span<const std::size_t> train_rows,
                                        std::vector<std::string>* warnings = nullptr) {
  if (domain.cols != schema.features.size())
    throw SchemaError("domain width does not match feature count");
  if (train_rows.empty()) throw DataError("cannot fit ranges on zero rows");
  TabularSchema fitted = schema;
  for (std::size_t f = 0; f < fitted.features.size(); ++f) {
    auto& spec = fitted.features[f];
    if (spec.kind != FeatureSpec::Kind::Numeric) continue;
    double lo = domain(train_rows[0], f);
    double hi = lo;
    for (std::size_t r : train_rows) {
      lo = std::min(lo, domain(r, f));
      hi = std::max(hi, domain(r, f));
    }
    spec.min = lo;
    spec.max = hi;
    if (lo == hi && warnings)
      warnings->push_back("feature '" + spec.name +
                          "' is constant in the training split; encoding as 0.5");
  }
  fitted.ranges_fitted = true;
  return fitted;
}

// Min-max scale numerics into [0,1] (out-of-range values clamped) and
// one-hot expand categoricals.
inline Matrix encode_table(const TabularSchema& schema, const Matrix& domain,
                           std::vector<std::string>* warnings = nullptr) {
  if (domain.cols != schema.features.size())
    throw SchemaError("domain width does not match feature count");
  Matrix out(domain.rows, schema.encoded_width());
  std::size_t clamped = 0;
  for (std::size_t i = 0; i < domain.rows; ++i) {
    std::size_t col = 0;
    for (std::size_t f = 0; f < schema.features.size(); ++f) {
      const auto& spec = schema.features[f];
      const double v = domain(i, f);
      if (spec.kind == FeatureSpec::Kind::Numeric) {
        if (spec.max == spec.min) {
          out(i, col) = 0.5;
        } else {
          double scaled = (v - spec.min) / (spec.max - spec.min);
          if (scaled < 0.0 || scaled > 1.0) ++clamped;
          out(i, col) = std::clamp(scaled, 0.0, 1.0);
        }
        col += 1;
      } else {
        const auto k = static_cast<std::size_t>(v);
        if (v < 0 || k >= spec.categories.size())
          throw SchemaError("category index out of range for '" + spec.name + "'");
        out(i, col + k) = 1.0;
        col += spec.categories.size();
      }
    }
  }
  if (clamped > 0 && warnings)
    warnings->push_back(std::to_string(clamped) +
                        " out-of-range numeric values clamped to [0,1]");
  return out;
}

enum class DecodeMode { Argmax, Sample };

// Inverse of encode_table for generator outputs: numerics are inverse
// min-max scaled, each one-hot group collapses by argmax or by sampling the
// normalized group as a categorical distribution.
inline Matrix decode_table(const TabularSchema& schema, const Matrix& raw,
                           DecodeMode mode = DecodeMode::Argmax,
                           RngStream* rng = nullptr) {
  if (raw.cols != schema.encoded_width())
    throw SchemaError("raw width does not match schema encoded width");
  if (mode == DecodeMode::Sample && rng == nullptr)
    throw ConfigError("sampling decode mode needs an rng stream");

  Matrix out(raw.rows, schema.features.size());
  for (std::size_t i = 0; i < raw.rows; ++i) {
    std::size_t col = 0;
    for (std::size_t f = 0; f < schema.features.size(); ++f) {
      const auto& spec = schema.features[f];
      if (spec.kind == FeatureSpec::Kind::Numeric) {
        out(i, f) = spec.min + raw(i, col) * (spec.max - spec.min);
        col += 1;
      } else {
        const std::size_t width = spec.categories.size();
        std::size_t pick = 0;
        if (mode == DecodeMode::Argmax) {
          double best = raw(i, col);
          for (std::size_t k = 1; k < width; ++k) {
            if (raw(i, col + k) > best) {
              best = raw(i, col + k);
              pick = k;
            }
          }
        } else {
          double total = 0.0;
          for (std::size_t k = 0; k < width; ++k)
            total += std::max(raw(i, col + k), 0.0);
          if (total <= 0.0) {
            pick = rng->uniform_int(width);
          } else {
            const double u = rng->uniform() * total;
            double acc = 0.0;
            pick = width - 1;
            for (std::size_t k = 0; k < width; ++k) {
              acc += std::max(raw(i, col + k), 0.0);
              if (u < acc) {
                pick = k;
                break;
              }
            }
          }
        }
        out(i, f) = static_cast<double>(pick);
        col += width;
      }
    }
  }
  return out;
}

// ---- Wire format -----------------------------------------------------------

inline void to_json(nlohmann::json& j, const FeatureSpec& f) {
  if (f.kind == FeatureSpec::Kind::Numeric) {
    j = nlohmann::json{{"name", f.name}, {"kind", "numeric"}, {"min", f.min},
                       {"max", f.max}};
  } else {
    j = nlohmann::json{{"name", f.name}, {"kind", "categorical"},
                       {"categories", f.categories}};
  }
}

inline void from_json(const nlohmann::json& j, FeatureSpec& f) {
  f.name = j.at("name").get<std::string>();
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "numeric") {
    f.kind = FeatureSpec::Kind::Numeric;
    f.min = j.value("min", 0.0);
    f.max = j.value("max", 1.0);
  } else if (kind == "categorical") {
    f.kind = FeatureSpec::Kind::Categorical;
    f.categories = j.at("categories").get<std::vector<std::string>>();
  } else {
    throw SchemaError("unknown feature kind: " + kind);
  }
}

inline void to_json(nlohmann::json& j, const LabelSpec& l) {
  j = nlohmann::json{{"name", l.name}, {"classes", l.classes}};
  if (!l.positive_class.empty()) j["positive_class"] = l.positive_class;
}

inline void from_json(const nlohmann::json& j, LabelSpec& l) {
  l.name = j.at("name").get<std::string>();
  l.classes = j.at("classes").get<std::vector<std::string>>();
  l.positive_class = j.value("positive_class", std::string{});
}

inline void to_json(nlohmann::json& j, const TabularSchema& s) {
  j = nlohmann::json{{"features", s.features}, {"label", s.label}};
}

inline void from_json(const nlohmann::json& j, TabularSchema& s) {
  s.features = j.at("features").get<std::vector<FeatureSpec>>();
  s.label = j.at("label").get<LabelSpec>();
  s.ranges_fitted = false;
}

}  // namespace sgde
