#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sgde/detail/encoding.hpp"
#include "sgde/downstream.hpp"
#include "sgde/errors.hpp"
#include "sgde/exchange.hpp"
#include "sgde/exchange_http.hpp"
#include "sgde/generator.hpp"
#include "sgde/schema.hpp"

// Data ingestion, federation partitioning, and the Local / Federated /
// Synthetic scenario runner with report emission.

namespace sgde {

// ---- CSV ingestion ----------------------------------------------------------

struct IngestReport {
  std::size_t rows_loaded = 0;
  std::size_t rows_dropped_missing = 0;
  std::vector<std::string> row_errors;  // includes 1-based line numbers
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur.push_back('"');
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  fields.push_back(cur);
  return fields;
}

inline bool is_missing(const std::string& s) { return s.empty() || s == "?"; }

}  // namespace detail

// Parses a CSV against the schema: numerics as reals, categoricals validated
// against the category lists, labels against the class list. Rows with
// missing values are dropped and counted; rows with unknown categories or
// unparsable numbers are dropped and reported with their line number.
inline std::pair<RawDataset, IngestReport> load_csv(
    const std::filesystem::path& path, const TabularSchema& schema) {
  schema.validate();
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());

  std::string line;
  if (!std::getline(in, line)) throw SchemaError("file has no header row");
  const std::vector<std::string> header = detail::split_csv_line(line);
  std::map<std::string, std::size_t> col_of;
  for (std::size_t i = 0; i < header.size(); ++i) col_of[header[i]] = i;

  std::vector<std::size_t> feature_cols;
  for (const auto& f : schema.features) {
    auto it = col_of.find(f.name);
    if (it == col_of.end())
      throw SchemaError("header is missing feature column '" + f.name + "'");
    feature_cols.push_back(it->second);
  }
  auto label_it = col_of.find(schema.label.name);
  if (label_it == col_of.end())
    throw SchemaError("header is missing label column '" + schema.label.name + "'");
  const std::size_t label_col = label_it->second;

  RawDataset out;
  out.domain = Matrix(0, schema.features.size());
  IngestReport report;
  std::vector<double> row(schema.features.size(), 0.0);
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const std::vector<std::string> fields = detail::split_csv_line(line);
    if (fields.size() != header.size()) {
      report.row_errors.push_back("line " + std::to_string(line_no) +
                                  ": wrong field count");
      continue;
    }

    bool missing = false;
    bool bad = false;
    for (std::size_t f = 0; f < schema.features.size() && !missing && !bad; ++f) {
      const std::string& field = fields[feature_cols[f]];
      if (detail::is_missing(field)) {
        missing = true;
        break;
      }
      const auto& spec = schema.features[f];
      if (spec.kind == FeatureSpec::Kind::Numeric) {
        try {
          std::size_t used = 0;
          row[f] = std::stod(field, &used);
          if (used != field.size()) throw std::invalid_argument("trailing garbage");
        } catch (const std::exception&) {
          report.row_errors.push_back("line " + std::to_string(line_no) +
                                      ": cannot parse '" + field +
                                      "' as a number for " + spec.name);
          bad = true;
        }
      } else {
        const auto it = std::find(spec.categories.begin(), spec.categories.end(), field);
        if (it == spec.categories.end()) {
          report.row_errors.push_back("line " + std::to_string(line_no) +
                                      ": unknown category '" + field + "' for " +
                                      spec.name);
          bad = true;
        } else {
          row[f] = static_cast<double>(it - spec.categories.begin());
        }
      }
    }
    if (missing) {
      ++report.rows_dropped_missing;
      continue;
    }
    if (bad) continue;

    const std::string& label_field = fields[label_col];
    if (detail::is_missing(label_field)) {
      ++report.rows_dropped_missing;
      continue;
    }
    const auto cls = std::find(schema.label.classes.begin(),
                               schema.label.classes.end(), label_field);
    if (cls == schema.label.classes.end()) {
      report.row_errors.push_back("line " + std::to_string(line_no) +
                                  ": unknown label '" + label_field + "'");
      continue;
    }

    out.domain.append_row(row);
    out.labels.push_back(static_cast<int>(cls - schema.label.classes.begin()));
    ++report.rows_loaded;
  }
  return {std::move(out), std::move(report)};
}

// ---- Preprocessing & partitioning -------------------------------------------

// Encode the selected rows with a fitted schema. The provenance flag guards
// against scaling parameters that were not derived from training data.
inline LabeledDataset encode_labeled(const RawDataset& raw,
                                     std::span<const std::size_t> rows,
                                     const TabularSchema& fitted,
                                     std::vector<std::string>* warnings = nullptr) {
  if (!fitted.ranges_fitted)
    throw SchemaError("schema ranges were not fitted from a training split");
  LabeledDataset ds;
  ds.features = encode_table(fitted, raw.domain.select_rows(rows), warnings);
  ds.labels.reserve(rows.size());
  for (std::size_t r : rows) ds.labels.push_back(raw.labels[r]);
  ds.class_names = fitted.label.classes;
  ds.positive_class = fitted.label.positive_index();
  return ds;
}

// Shuffles [0, n) and assigns each of the K clients floor(fraction * n)
// examples; the remainder stays unassigned. Clients are pairwise disjoint.
inline std::vector<std::vector<std::size_t>> partition_indices(std::size_t n,
                                                               std::size_t clients,
                                                               double fraction,
                                                               std::uint64_t seed) {
  if (clients < 1) throw ConfigError("need at least one client");
  if (fraction <= 0.0 || static_cast<double>(clients) * fraction > 1.0 + 1e-12)
    throw ConfigError("clients * fraction must not exceed 1");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  RngStream rng = RngStream(seed).derive("partition");
  rng.shuffle(order);

  const auto per_client = static_cast<std::size_t>(
      std::floor(fraction * static_cast<double>(n)));
  std::vector<std::vector<std::size_t>> out(clients);
  std::size_t next = 0;
  for (std::size_t k = 0; k < clients; ++k) {
    out[k].assign(order.begin() + next, order.begin() + next + per_client);
    std::sort(out[k].begin(), out[k].end());
    next += per_client;
  }
  return out;
}

// ---- Scenario configuration --------------------------------------------------

struct LogregConfig {
  std::size_t epochs = 300;
  double learning_rate = 0.05;
};

struct FedavgConfig {
  std::size_t rounds_max = 500;
  std::size_t local_epochs = 1;
  std::size_t patience = 10;
  double validation_split = 0.2;
  double learning_rate = 0.05;
};

struct GeneratorScenarioConfig {
  std::size_t latent_dim = 8;
  double beta = 1.0;
  std::vector<std::size_t> encoder_hidden = {64, 32};
  std::vector<std::size_t> decoder_hidden = {64, 128};
  std::size_t min_class_examples = 10;
  double clip_norm = 1.0;
  double noise_multiplier = 0.0;  // 0 -> calibrate to the epsilon gate
  std::size_t batch_size = 16;
  std::size_t epochs = 30;
  double learning_rate = 1e-3;
};

struct SyntheticScenarioConfig {
  std::size_t samples_per_generator_per_class = 200;
  std::string decode_mode = "argmax";  // or "sample"
  std::string server_url;              // empty -> in-process registry
};

struct ScenarioConfig {
  std::string dataset_name;
  std::string csv_path;
  std::string schema_path;
  std::size_t n_clients = 20;
  double client_fraction = 0.05;
  double test_split = 0.10;
  std::vector<std::string> scenarios = {"local", "federated", "synthetic"};
  std::vector<std::uint64_t> seeds = {1};
  LogregConfig logreg;
  FedavgConfig fedavg;
  GeneratorScenarioConfig generator;
  SyntheticScenarioConfig synthetic;
  double max_epsilon = 1.5;
  bool require_push = true;

  void validate() const {
    if (dataset_name.empty()) throw ConfigError("dataset_name is required");
    if (csv_path.empty()) throw ConfigError("csv_path is required");
    if (schema_path.empty()) throw ConfigError("schema_path is required");
    if (seeds.empty()) throw ConfigError("at least one seed is required");
    if (test_split < 0.0 || test_split >= 1.0)
      throw ConfigError("test_split must lie in [0, 1)");
    if (static_cast<double>(n_clients) * client_fraction > 1.0 + 1e-12)
      throw ConfigError("n_clients * client_fraction must not exceed 1");
    for (const auto& s : scenarios)
      if (s != "local" && s != "federated" && s != "synthetic")
        throw ConfigError("unknown scenario: " + s);
    if (synthetic.decode_mode != "argmax" && synthetic.decode_mode != "sample")
      throw ConfigError("decode_mode must be argmax or sample");
  }
};

inline void to_json(nlohmann::json& j, const ScenarioConfig& c) {
  j = nlohmann::json{
      {"dataset_name", c.dataset_name},
      {"csv_path", c.csv_path},
      {"schema_path", c.schema_path},
      {"n_clients", c.n_clients},
      {"client_fraction", c.client_fraction},
      {"test_split", c.test_split},
      {"scenarios", c.scenarios},
      {"seeds", c.seeds},
      {"logreg", {{"epochs", c.logreg.epochs}, {"learning_rate", c.logreg.learning_rate}}},
      {"fedavg",
       {{"rounds_max", c.fedavg.rounds_max},
        {"local_epochs", c.fedavg.local_epochs},
        {"patience", c.fedavg.patience},
        {"validation_split", c.fedavg.validation_split},
        {"learning_rate", c.fedavg.learning_rate}}},
      {"generator",
       {{"latent_dim", c.generator.latent_dim},
        {"beta", c.generator.beta},
        {"encoder_hidden", c.generator.encoder_hidden},
        {"decoder_hidden", c.generator.decoder_hidden},
        {"min_class_examples", c.generator.min_class_examples},
        {"clip_norm", c.generator.clip_norm},
        {"noise_multiplier", c.generator.noise_multiplier},
        {"batch_size", c.generator.batch_size},
        {"epochs", c.generator.epochs},
        {"learning_rate", c.generator.learning_rate}}},
      {"synthetic",
       {{"samples_per_generator_per_class", c.synthetic.samples_per_generator_per_class},
        {"decode_mode", c.synthetic.decode_mode},
        {"server_url", c.synthetic.server_url}}},
      {"max_epsilon", c.max_epsilon},
      {"require_push", c.require_push}};
}

inline void from_json(const nlohmann::json& j, ScenarioConfig& c) {
  c.dataset_name = j.value("dataset_name", std::string{});
  c.csv_path = j.value("csv_path", std::string{});
  c.schema_path = j.value("schema_path", std::string{});
  c.n_clients = j.value("n_clients", std::size_t{20});
  c.client_fraction = j.value("client_fraction", 0.05);
  c.test_split = j.value("test_split", 0.10);
  c.scenarios = j.value("scenarios",
                        std::vector<std::string>{"local", "federated", "synthetic"});
  c.seeds = j.value("seeds", std::vector<std::uint64_t>{1});
  if (j.contains("logreg")) {
    const auto& l = j.at("logreg");
    c.logreg.epochs = l.value("epochs", c.logreg.epochs);
    c.logreg.learning_rate = l.value("learning_rate", c.logreg.learning_rate);
  }
  if (j.contains("fedavg")) {
    const auto& f = j.at("fedavg");
    c.fedavg.rounds_max = f.value("rounds_max", c.fedavg.rounds_max);
    c.fedavg.local_epochs = f.value("local_epochs", c.fedavg.local_epochs);
    c.fedavg.patience = f.value("patience", c.fedavg.patience);
    c.fedavg.validation_split = f.value("validation_split", c.fedavg.validation_split);
    c.fedavg.learning_rate = f.value("learning_rate", c.fedavg.learning_rate);
  }
  if (j.contains("generator")) {
    const auto& g = j.at("generator");
    c.generator.latent_dim = g.value("latent_dim", c.generator.latent_dim);
    c.generator.beta = g.value("beta", c.generator.beta);
    c.generator.encoder_hidden = g.value("encoder_hidden", c.generator.encoder_hidden);
    c.generator.decoder_hidden = g.value("decoder_hidden", c.generator.decoder_hidden);
    c.generator.min_class_examples =
        g.value("min_class_examples", c.generator.min_class_examples);
    c.generator.clip_norm = g.value("clip_norm", c.generator.clip_norm);
    c.generator.noise_multiplier = g.value("noise_multiplier", c.generator.noise_multiplier);
    c.generator.batch_size = g.value("batch_size", c.generator.batch_size);
    c.generator.epochs = g.value("epochs", c.generator.epochs);
    c.generator.learning_rate = g.value("learning_rate", c.generator.learning_rate);
  }
  if (j.contains("synthetic")) {
    const auto& s = j.at("synthetic");
    c.synthetic.samples_per_generator_per_class = s.value(
        "samples_per_generator_per_class", c.synthetic.samples_per_generator_per_class);
    c.synthetic.decode_mode = s.value("decode_mode", c.synthetic.decode_mode);
    c.synthetic.server_url = s.value("server_url", c.synthetic.server_url);
  }
  c.max_epsilon = j.value("max_epsilon", 1.5);
  c.require_push = j.value("require_push", true);
}

// ---- Report types ------------------------------------------------------------

struct EvalPair {
  Metrics client_eval;  // evaluated on client-side data (CV / validation / local)
  Metrics test_eval;    // evaluated on the held-out test split
};

struct ClientOutcome {
  std::string client_id;
  EvalPair evals;
  bool skipped = false;
  std::string skip_reason;
};

struct GeneratorPrivacyRecord {
  std::string client_id;
  std::string class_label;
  std::string generator_id;
  double epsilon = 0.0;
  double delta = 0.0;
  double noise_multiplier = 0.0;
  std::size_t steps = 0;
  std::size_t class_size = 0;
};

struct SeedOutcome {
  std::uint64_t seed = 0;
  EvalPair mean;
  std::vector<ClientOutcome> per_client;
  std::vector<GeneratorPrivacyRecord> generators;
  std::vector<std::string> gate_failures;
  std::size_t fedavg_rounds = 0;
  // Synthetic scenario only: per-class sample counts of the assembled pool
  // (identical for every client; the pool is shared).
  std::vector<std::size_t> synthetic_class_counts;
};

struct ScenarioOutcome {
  std::string scenario;
  std::vector<SeedOutcome> per_seed;
  EvalPair aggregate;  // mean over seeds of the per-seed client means
};

struct ScenarioReport {
  std::string dataset;
  std::string config_hash;
  std::vector<std::uint64_t> seeds;
  std::vector<ScenarioOutcome> scenarios;
  std::vector<std::string> warnings;

  const ScenarioOutcome* find(const std::string& name) const {
    for (const auto& s : scenarios)
      if (s.scenario == name) return &s;
    return nullptr;
  }
};

inline void to_json(nlohmann::json& j, const Metrics& m) {
  j = nlohmann::json{{"accuracy", m.accuracy}, {"f1", m.f1}, {"auc", m.auc}};
  if (!m.flags.empty()) j["flags"] = m.flags;
}

inline void from_json(const nlohmann::json& j, Metrics& m) {
  m.accuracy = j.at("accuracy").get<double>();
  m.f1 = j.at("f1").get<double>();
  m.auc = j.at("auc").get<double>();
  m.flags = j.value("flags", std::vector<std::string>{});
}

inline void to_json(nlohmann::json& j, const EvalPair& e) {
  j = nlohmann::json{{"client_eval", e.client_eval}, {"test_eval", e.test_eval}};
}

inline void from_json(const nlohmann::json& j, EvalPair& e) {
  e.client_eval = j.at("client_eval").get<Metrics>();
  e.test_eval = j.at("test_eval").get<Metrics>();
}

inline void to_json(nlohmann::json& j, const ClientOutcome& c) {
  j = nlohmann::json{{"client_id", c.client_id}, {"evals", c.evals},
                     {"skipped", c.skipped}};
  if (c.skipped) j["skip_reason"] = c.skip_reason;
}

inline void from_json(const nlohmann::json& j, ClientOutcome& c) {
  c.client_id = j.at("client_id").get<std::string>();
  c.evals = j.at("evals").get<EvalPair>();
  c.skipped = j.value("skipped", false);
  c.skip_reason = j.value("skip_reason", std::string{});
}

inline void to_json(nlohmann::json& j, const GeneratorPrivacyRecord& g) {
  j = nlohmann::json{{"client_id", g.client_id},
                     {"class_label", g.class_label},
                     {"generator_id", g.generator_id},
                     {"epsilon", g.epsilon},
                     {"delta", g.delta},
                     {"noise_multiplier", g.noise_multiplier},
                     {"steps", g.steps},
                     {"class_size", g.class_size}};
}

inline void from_json(const nlohmann::json& j, GeneratorPrivacyRecord& g) {
  g.client_id = j.at("client_id").get<std::string>();
  g.class_label = j.at("class_label").get<std::string>();
  g.generator_id = j.at("generator_id").get<std::string>();
  g.epsilon = j.at("epsilon").get<double>();
  g.delta = j.at("delta").get<double>();
  g.noise_multiplier = j.at("noise_multiplier").get<double>();
  g.steps = j.at("steps").get<std::size_t>();
  g.class_size = j.at("class_size").get<std::size_t>();
}

inline void to_json(nlohmann::json& j, const SeedOutcome& s) {
  j = nlohmann::json{{"seed", s.seed},
                     {"mean", s.mean},
                     {"per_client", s.per_client},
                     {"generators", s.generators},
                     {"gate_failures", s.gate_failures},
                     {"fedavg_rounds", s.fedavg_rounds},
                     {"synthetic_class_counts", s.synthetic_class_counts}};
}

inline void from_json(const nlohmann::json& j, SeedOutcome& s) {
  s.seed = j.at("seed").get<std::uint64_t>();
  s.mean = j.at("mean").get<EvalPair>();
  s.per_client = j.at("per_client").get<std::vector<ClientOutcome>>();
  s.generators = j.value("generators", std::vector<GeneratorPrivacyRecord>{});
  s.gate_failures = j.value("gate_failures", std::vector<std::string>{});
  s.fedavg_rounds = j.value("fedavg_rounds", std::size_t{0});
  s.synthetic_class_counts =
      j.value("synthetic_class_counts", std::vector<std::size_t>{});
}

inline void to_json(nlohmann::json& j, const ScenarioOutcome& s) {
  j = nlohmann::json{{"scenario", s.scenario},
                     {"per_seed", s.per_seed},
                     {"aggregate", s.aggregate}};
}

inline void from_json(const nlohmann::json& j, ScenarioOutcome& s) {
  s.scenario = j.at("scenario").get<std::string>();
  s.per_seed = j.at("per_seed").get<std::vector<SeedOutcome>>();
  s.aggregate = j.at("aggregate").get<EvalPair>();
}

inline void to_json(nlohmann::json& j, const ScenarioReport& r) {
  j = nlohmann::json{{"dataset", r.dataset},
                     {"config_hash", r.config_hash},
                     {"seeds", r.seeds},
                     {"scenarios", r.scenarios},
                     {"warnings", r.warnings}};
}

inline void from_json(const nlohmann::json& j, ScenarioReport& r) {
  r.dataset = j.at("dataset").get<std::string>();
  r.config_hash = j.at("config_hash").get<std::string>();
  r.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  r.scenarios = j.at("scenarios").get<std::vector<ScenarioOutcome>>();
  r.warnings = j.value("warnings", std::vector<std::string>{});
}

// ---- Scenario runner -----------------------------------------------------------

namespace detail {

inline std::string client_name(std::size_t k) { return "client-" + std::to_string(k); }

inline EvalPair mean_eval_pairs(const std::vector<ClientOutcome>& clients) {
  std::vector<Metrics> ce;
  std::vector<Metrics> te;
  for (const auto& c : clients) {
    if (c.skipped) continue;
    ce.push_back(c.evals.client_eval);
    te.push_back(c.evals.test_eval);
  }
  if (ce.empty()) throw DataError("no client produced metrics");
  return {mean_metrics(ce), mean_metrics(te)};
}

inline VaeConfig build_vae_config(const GeneratorScenarioConfig& g,
                                  std::size_t encoded_width) {
  VaeConfig cfg;
  cfg.latent_dim = g.latent_dim;
  cfg.beta = g.beta;
  cfg.encoder_arch = make_dense_arch(encoded_width, g.encoder_hidden,
                                     2 * g.latent_dim, Activation::LeakyRelu,
                                     Activation::Linear);
  cfg.decoder_arch = make_dense_arch(g.latent_dim, g.decoder_hidden, encoded_width,
                                     Activation::LeakyRelu, Activation::Sigmoid);
  cfg.min_class_examples = g.min_class_examples;
  cfg.dp.clip_norm = g.clip_norm;
  cfg.dp.noise_multiplier = g.noise_multiplier;
  cfg.dp.batch_size = g.batch_size;
  cfg.dp.epochs = g.epochs;
  cfg.dp.adam.learning_rate = g.learning_rate;
  return cfg;
}

}  // namespace detail

class ScenarioRunner {
 public:
  ScenarioRunner(ScenarioConfig config, TabularSchema schema, RawDataset raw)
      : config_(std::move(config)), schema_(std::move(schema)), raw_(std::move(raw)) {
    config_.validate();
    schema_.validate();
  }

  // Loads the CSV and schema named by the config.
  static ScenarioRunner from_config(const ScenarioConfig& config,
                                    IngestReport* ingest_out = nullptr) {
    config.validate();
    std::ifstream in(config.schema_path);
    if (!in) throw ConfigError("cannot open schema file " + config.schema_path);
    TabularSchema schema;
    try {
      schema = nlohmann::json::parse(in).get<TabularSchema>();
    } catch (const nlohmann::json::exception& e) {
      throw SchemaError(std::string("schema file invalid: ") + e.what());
    }
    auto [raw, ingest] = load_csv(config.csv_path, schema);
    if (ingest_out) *ingest_out = ingest;
    ScenarioRunner runner(config, std::move(schema), std::move(raw));
    runner.note_ingest(ingest);
    return runner;
  }

  ScenarioReport run() {
    ScenarioReport report;
    report.dataset = config_.dataset_name;
    report.config_hash = detail::sha256_hex(nlohmann::json(config_).dump());
    report.seeds = config_.seeds;
    report.warnings = warnings_;

    for (const auto& name : config_.scenarios) {
      ScenarioOutcome outcome;
      outcome.scenario = name;
      for (std::uint64_t seed : config_.seeds) {
        const Split split = make_split(seed);
        if (name == "local")
          outcome.per_seed.push_back(run_local(seed, split));
        else if (name == "federated")
          outcome.per_seed.push_back(run_federated(seed, split));
        else
          outcome.per_seed.push_back(run_synthetic(seed, split));
      }
      std::vector<Metrics> ce, te;
      for (const auto& s : outcome.per_seed) {
        ce.push_back(s.mean.client_eval);
        te.push_back(s.mean.test_eval);
      }
      outcome.aggregate = {mean_metrics(ce), mean_metrics(te)};
      report.scenarios.push_back(std::move(outcome));
    }
    return report;
  }

  const RawDataset& raw() const { return raw_; }
  const TabularSchema& schema() const { return schema_; }

 private:
  struct Split {
    std::vector<std::size_t> test;
    std::vector<std::vector<std::size_t>> clients;
  };

  void note_ingest(const IngestReport& ingest) {
    if (ingest.rows_dropped_missing > 0)
      warnings_.push_back(std::to_string(ingest.rows_dropped_missing) +
                          " rows dropped for missing values");
    for (const auto& e : ingest.row_errors) warnings_.push_back(e);
  }

  Split make_split(std::uint64_t seed) const {
    const std::size_t n = raw_.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    RngStream rng = RngStream(seed).derive("test-split");
    rng.shuffle(order);
    const auto n_test = static_cast<std::size_t>(
        std::floor(config_.test_split * static_cast<double>(n)));

    Split split;
    split.test.assign(order.begin(), order.begin() + n_test);
    std::sort(split.test.begin(), split.test.end());
    std::vector<std::size_t> pool(order.begin() + n_test, order.end());
    std::sort(pool.begin(), pool.end());

    const auto assignment = partition_indices(
        pool.size(), config_.n_clients, config_.client_fraction,
        RngStream(seed).derive("partition").seed());
    split.clients.resize(assignment.size());
    for (std::size_t k = 0; k < assignment.size(); ++k) {
      for (std::size_t local : assignment[k]) split.clients[k].push_back(pool[local]);
      std::sort(split.clients[k].begin(), split.clients[k].end());
    }
    return split;
  }

  Trainer logreg_trainer() const {
    const LogregConfig cfg = config_.logreg;
    return [cfg](const LabeledDataset& ds, std::uint64_t seed) {
      return train_logreg(ds, cfg.epochs, cfg.learning_rate, seed);
    };
  }

  SeedOutcome run_local(std::uint64_t seed, const Split& split) {
    SeedOutcome out;
    out.seed = seed;
    RngStream root(seed);
    for (std::size_t k = 0; k < split.clients.size(); ++k) {
      ClientOutcome co;
      co.client_id = detail::client_name(k);
      const auto& idx = split.clients[k];
      try {
        const TabularSchema fitted = fit_numeric_ranges(schema_, raw_.domain, idx);
        const LabeledDataset local = encode_labeled(raw_, idx, fitted);
        co.evals.client_eval =
            kfold_cv(local, 10, logreg_trainer(), root.derive("local-cv", k).seed());
        const LogregModel model =
            train_logreg(local, config_.logreg.epochs, config_.logreg.learning_rate,
                         root.derive("local-fit", k).seed());
        co.evals.test_eval = evaluate(model, encode_labeled(raw_, split.test, fitted));
      } catch (const Error& e) {
        co.skipped = true;
        co.skip_reason = e.what();
      }
      out.per_client.push_back(std::move(co));
    }
    out.mean = detail::mean_eval_pairs(out.per_client);
    return out;
  }

  SeedOutcome run_federated(std::uint64_t seed, const Split& split) {
    SeedOutcome out;
    out.seed = seed;
    RngStream root(seed);

    std::vector<std::size_t> union_train;
    for (const auto& idx : split.clients)
      union_train.insert(union_train.end(), idx.begin(), idx.end());
    std::sort(union_train.begin(), union_train.end());
    const TabularSchema fitted = fit_numeric_ranges(schema_, raw_.domain, union_train);

    FederationPlan plan;
    plan.rounds_max = config_.fedavg.rounds_max;
    plan.local_epochs = config_.fedavg.local_epochs;
    plan.patience = config_.fedavg.patience;
    std::vector<double> sizes;
    for (std::size_t k = 0; k < split.clients.size(); ++k) {
      std::vector<std::size_t> idx = split.clients[k];
      RngStream shuffle_rng = root.derive("fed-val", k);
      shuffle_rng.shuffle(idx);
      const auto n_val = std::max<std::size_t>(
          1, static_cast<std::size_t>(std::floor(
                 config_.fedavg.validation_split * static_cast<double>(idx.size()))));
      if (idx.size() < n_val + 1)
        throw DataError("client too small for a validation split");
      std::vector<std::size_t> val(idx.begin(), idx.begin() + n_val);
      std::vector<std::size_t> train(idx.begin() + n_val, idx.end());
      std::sort(val.begin(), val.end());
      std::sort(train.begin(), train.end());
      FederationClient client;
      client.train = encode_labeled(raw_, train, fitted);
      client.validation = encode_labeled(raw_, val, fitted);
      sizes.push_back(static_cast<double>(train.size()));
      plan.clients.push_back(std::move(client));
    }
    const double total = std::accumulate(sizes.begin(), sizes.end(), 0.0);
    for (double s : sizes) plan.weights.push_back(s / total);

    const NetworkArch arch{{{fitted.encoded_width(), fitted.label.classes.size(),
                             Activation::Softmax, 0.2}}};
    const FedavgResult fed = run_fedavg(plan, arch, config_.fedavg.learning_rate,
                                        root.derive("fedavg").seed());
    out.fedavg_rounds = fed.rounds_run;

    const LabeledDataset test_ds = encode_labeled(raw_, split.test, fitted);
    const Metrics test_m = evaluate(fed.model, test_ds);
    for (std::size_t k = 0; k < plan.clients.size(); ++k) {
      ClientOutcome co;
      co.client_id = detail::client_name(k);
      co.evals.client_eval = evaluate(fed.model, plan.clients[k].validation);
      co.evals.test_eval = test_m;
      out.per_client.push_back(std::move(co));
    }
    out.mean = detail::mean_eval_pairs(out.per_client);
    return out;
  }

  SeedOutcome run_synthetic(std::uint64_t seed, const Split& split) {
    SeedOutcome out;
    out.seed = seed;
    RngStream root(seed);

    // Either an in-process registry per seed or an external server.
    std::optional<Registry> registry;
    std::unique_ptr<ExchangeApi> exchange;
    if (config_.synthetic.server_url.empty()) {
      ServerRequirements reqs;
      reqs.max_epsilon = config_.max_epsilon;
      reqs.require_push_before_pull = config_.require_push;
      reqs.schema = schema_;
      registry.emplace(reqs);
      exchange = std::make_unique<InProcExchange>(*registry);
    } else {
      exchange = std::make_unique<HttpExchangeClient>(config_.synthetic.server_url);
    }

    const std::size_t n_classes = schema_.label.classes.size();
    std::vector<TabularSchema> client_schemas;

    // Push phase: every client trains one generator per class it can support.
    for (std::size_t k = 0; k < split.clients.size(); ++k) {
      const auto& idx = split.clients[k];
      const ServerRequirements reqs = exchange->subscribe(detail::client_name(k));
      const TabularSchema fitted = fit_numeric_ranges(schema_, raw_.domain, idx);
      client_schemas.push_back(fitted);
      const LabeledDataset local = encode_labeled(raw_, idx, fitted);

      for (std::size_t c = 0; c < n_classes; ++c) {
        std::vector<std::size_t> class_rows;
        for (std::size_t i = 0; i < local.size(); ++i)
          if (local.labels[i] == static_cast<int>(c)) class_rows.push_back(i);
        const std::string tag = detail::client_name(k) + "/" +
                                schema_.label.classes[c];
        if (class_rows.size() < config_.generator.min_class_examples) {
          out.gate_failures.push_back(tag + ": only " +
                                      std::to_string(class_rows.size()) +
                                      " examples; generator skipped");
          continue;
        }
        try {
          const Matrix class_data = local.features.select_rows(class_rows);
          const VaeConfig vae =
              detail::build_vae_config(config_.generator, fitted.encoded_width());
          const GeneratorArtifact artifact = train_class_generator(
              class_data, fitted, vae, reqs, detail::client_name(k),
              schema_.label.classes[c],
              root.derive("generator", k * n_classes + c).seed());
          const PushResult res =
              exchange->push(detail::client_name(k), serialize(artifact));
          if (!res.accepted) {
            out.gate_failures.push_back(tag + ": push rejected (" + res.code +
                                        ": " + res.reason + ")");
            continue;
          }
          out.generators.push_back({detail::client_name(k),
                                    schema_.label.classes[c], artifact.generator_id,
                                    artifact.certificate.epsilon,
                                    artifact.certificate.delta,
                                    artifact.certificate.mechanism.noise_multiplier,
                                    artifact.certificate.mechanism.steps,
                                    artifact.certificate.class_size});
        } catch (const Error& e) {
          out.gate_failures.push_back(tag + ": " + e.what());
        }
      }
    }

    // Pull phase: every client assembles a balanced synthetic dataset from
    // the full pool and trains its own classifier on it.
    for (std::size_t k = 0; k < split.clients.size(); ++k) {
      ClientOutcome co;
      co.client_id = detail::client_name(k);
      try {
        const auto catalog = exchange->list_generators(detail::client_name(k));
        if (catalog.empty()) throw DataError("generator pool is empty");

        RawDataset synth;
        synth.domain = Matrix(0, schema_.features.size());
        const DecodeMode mode = config_.synthetic.decode_mode == "argmax"
                                    ? DecodeMode::Argmax
                                    : DecodeMode::Sample;
        for (std::size_t g = 0; g < catalog.size(); ++g) {
          const std::string bytes =
              exchange->pull(detail::client_name(k), catalog[g].generator_id);
          const GeneratorArtifact artifact = deserialize(bytes);
          const auto cls = std::find(schema_.label.classes.begin(),
                                     schema_.label.classes.end(),
                                     artifact.class_label);
          if (cls == schema_.label.classes.end())
            throw DataError("artifact class label not in the federation schema");
          const int label = static_cast<int>(cls - schema_.label.classes.begin());

          const std::uint64_t sample_seed = root.derive("sample", k).derive(
              artifact.generator_id).seed();
          const Matrix raw_samples = sample(
              artifact, config_.synthetic.samples_per_generator_per_class, sample_seed);
          const Matrix domain = decode_to_domain(raw_samples, artifact.schema, mode,
                                                 sample_seed);
          for (std::size_t i = 0; i < domain.rows; ++i) {
            synth.domain.append_row(domain.row(i));
            synth.labels.push_back(label);
          }
        }

        if (out.synthetic_class_counts.empty()) {
          out.synthetic_class_counts.assign(n_classes, 0);
          for (int y : synth.labels)
            out.synthetic_class_counts[static_cast<std::size_t>(y)] += 1;
        }

        std::vector<std::size_t> all(synth.size());
        std::iota(all.begin(), all.end(), 0);
        const TabularSchema synth_schema =
            fit_numeric_ranges(schema_, synth.domain, all);
        const LabeledDataset synth_ds = encode_labeled(synth, all, synth_schema);
        const LogregModel model =
            train_logreg(synth_ds, config_.logreg.epochs, config_.logreg.learning_rate,
                         root.derive("synthetic-fit", k).seed());
        co.evals.client_eval =
            evaluate(model, encode_labeled(raw_, split.clients[k], synth_schema));
        co.evals.test_eval =
            evaluate(model, encode_labeled(raw_, split.test, synth_schema));
      } catch (const Error& e) {
        co.skipped = true;
        co.skip_reason = e.what();
      }
      out.per_client.push_back(std::move(co));
    }
    out.mean = detail::mean_eval_pairs(out.per_client);
    return out;
  }

  ScenarioConfig config_;
  TabularSchema schema_;
  RawDataset raw_;
  std::vector<std::string> warnings_;
};

inline ScenarioReport run_scenario(const ScenarioConfig& config) {
  return ScenarioRunner::from_config(config).run();
}

// ---- Report emission -----------------------------------------------------------

inline std::string report_json(const ScenarioReport& report) {
  return nlohmann::json(report).dump(2) + "\n";
}

// Markdown mirror of the results layout: one row per dataset with
// Local / Federated / Synthetic values for each metric (percent, two
// decimals), plus an average-improvement row against Local.
inline std::string report_markdown(const std::vector<ScenarioReport>& reports,
                                   bool test_eval_table = false) {
  const std::vector<std::string> scenario_names = {"local", "federated", "synthetic"};
  const std::vector<std::string> metric_names = {"Accuracy", "F1 score", "AUC"};

  const auto metric_of = [&](const ScenarioOutcome* s, std::size_t metric) {
    if (s == nullptr) return std::optional<double>{};
    const Metrics& m =
        test_eval_table ? s->aggregate.test_eval : s->aggregate.client_eval;
    const double v = metric == 0 ? m.accuracy : metric == 1 ? m.f1 : m.auc;
    return std::optional<double>{100.0 * v};
  };

  std::ostringstream os;
  os << "| Dataset |";
  for (const auto& metric : metric_names)
    for (const auto& scen : {"Local", "Federated", "Synthetic"})
      os << " " << metric << " " << scen << " |";
  os << "\n|---|";
  for (std::size_t i = 0; i < metric_names.size() * 3; ++i) os << "---|";
  os << "\n";

  os << std::fixed << std::setprecision(2);
  std::vector<std::vector<double>> improvements(9);  // scenario x metric
  for (const auto& report : reports) {
    os << "| " << report.dataset << " |";
    for (std::size_t metric = 0; metric < 3; ++metric) {
      const auto local = metric_of(report.find("local"), metric);
      for (std::size_t s = 0; s < 3; ++s) {
        const auto v = metric_of(report.find(scenario_names[s]), metric);
        if (v)
          os << " " << *v << " |";
        else
          os << " - |";
        if (v && local) improvements[s * 3 + metric].push_back(*v - *local);
      }
    }
    os << "\n";
  }

  // Mean over datasets of (scenario - Local); the Local column is 0 by
  // construction.
  os << "| Avg. Improvement |";
  for (std::size_t metric = 0; metric < 3; ++metric) {
    for (std::size_t s = 0; s < 3; ++s) {
      const auto& vals = improvements[s * 3 + metric];
      if (vals.empty()) {
        os << " - |";
      } else {
        const double mean =
            std::accumulate(vals.begin(), vals.end(), 0.0) / vals.size();
        os << " " << (mean >= 0 ? "+" : "") << mean << " |";
      }
    }
  }
  os << "\n";
  return os.str();
}

}  // namespace sgde
