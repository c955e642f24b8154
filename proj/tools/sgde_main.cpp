// sgde command-line driver: data ingestion, federation partitioning,
// generator training, the registry server and client, synthesis, and the
// full Local / Federated / Synthetic scenario runner.
//
// Exit codes: 0 success, 2 configuration error, 3 data error,
// 4 policy / privacy-gate error, 1 anything else.

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sgde/downstream.hpp"
#include "sgde/errors.hpp"
#include "sgde/exchange.hpp"
#include "sgde/exchange_http.hpp"
#include "sgde/generator.hpp"
#include "sgde/harness.hpp"

namespace {

using nlohmann::json;

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitPolicy = 4;

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw sgde::ConfigError("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw sgde::ConfigError(path + ": " + e.what());
  }
}

void write_file(const std::string& path, const std::string& content) {
  if (auto parent = std::filesystem::path(path).parent_path(); !parent.empty())
    std::filesystem::create_directories(parent);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << content;
  if (!out) throw sgde::Error("failed to write " + path);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw sgde::DataError("cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

sgde::TabularSchema load_schema(const std::string& path) {
  sgde::TabularSchema schema = read_json_file(path).get<sgde::TabularSchema>();
  schema.validate();
  return schema;
}

json dataset_to_json(const sgde::RawDataset& raw, const sgde::TabularSchema& schema) {
  json rows = json::array();
  for (std::size_t i = 0; i < raw.domain.rows; ++i) {
    json row = json::array();
    for (double v : raw.domain.row(i)) row.push_back(v);
    rows.push_back(std::move(row));
  }
  return json{{"schema", schema}, {"rows", rows}, {"labels", raw.labels}};
}

std::pair<sgde::RawDataset, sgde::TabularSchema> dataset_from_json(const json& j) {
  sgde::TabularSchema schema = j.at("schema").get<sgde::TabularSchema>();
  sgde::RawDataset raw;
  raw.domain = sgde::Matrix(0, schema.features.size());
  std::vector<double> row(schema.features.size());
  for (const auto& r : j.at("rows")) {
    for (std::size_t f = 0; f < row.size(); ++f) row[f] = r.at(f).get<double>();
    raw.domain.append_row(row);
  }
  raw.labels = j.at("labels").get<std::vector<int>>();
  if (raw.labels.size() != raw.domain.rows)
    throw sgde::DataError("dataset rows and labels disagree");
  return {std::move(raw), std::move(schema)};
}

// Model files bundle the trained head with the schema that encoded its
// training data, so evaluation encodes consistently.
json model_to_json(const sgde::LogregModel& model, const sgde::TabularSchema& schema) {
  return json{{"arch", model.arch}, {"params", model.params}, {"schema", schema},
              {"ranges_fitted", schema.ranges_fitted}};
}

std::pair<sgde::LogregModel, sgde::TabularSchema> model_from_json(const json& j) {
  sgde::LogregModel model;
  model.arch = j.at("arch").get<sgde::NetworkArch>();
  model.params = j.at("params").get<sgde::ParameterVector>();
  sgde::TabularSchema schema = j.at("schema").get<sgde::TabularSchema>();
  schema.ranges_fitted = j.value("ranges_fitted", false);
  return {std::move(model), std::move(schema)};
}

sgde::LabeledDataset encode_all(const sgde::RawDataset& raw,
                                const sgde::TabularSchema& fitted) {
  std::vector<std::size_t> all(raw.size());
  std::iota(all.begin(), all.end(), 0);
  return sgde::encode_labeled(raw, all, fitted);
}

volatile std::sig_atomic_t g_stop_requested = 0;

int run_cli(int argc, char** argv) {
  CLI::App app{"Secure generative data exchange for cross-silo federations"};
  app.require_subcommand(1);

  // ---- ingest ----
  std::string csv_path, schema_path, out_path, report_path;
  auto* ingest = app.add_subcommand("ingest", "Parse a CSV against a schema");
  ingest->add_option("--csv", csv_path)->required();
  ingest->add_option("--schema", schema_path)->required();
  ingest->add_option("--out", out_path)->required();
  ingest->callback([&] {
    const sgde::TabularSchema schema = load_schema(schema_path);
    auto [raw, report] = sgde::load_csv(csv_path, schema);
    json j = dataset_to_json(raw, schema);
    j["ingest"] = {{"rows_loaded", report.rows_loaded},
                   {"rows_dropped_missing", report.rows_dropped_missing},
                   {"row_errors", report.row_errors}};
    write_file(out_path, j.dump(2) + "\n");
    std::cout << "loaded " << report.rows_loaded << " rows ("
              << report.rows_dropped_missing << " dropped for missing values, "
              << report.row_errors.size() << " row errors)\n";
  });

  // ---- partition ----
  std::string dataset_path, out_dir;
  std::size_t n_clients = 20;
  double fraction = 0.05;
  std::uint64_t seed = 1;
  auto* part = app.add_subcommand("partition",
                                  "Split a dataset into disjoint client shares");
  part->add_option("--dataset", dataset_path)->required();
  part->add_option("--clients", n_clients);
  part->add_option("--fraction", fraction);
  part->add_option("--seed", seed);
  part->add_option("--out-dir", out_dir)->required();
  part->callback([&] {
    auto [raw, schema] = dataset_from_json(read_json_file(dataset_path));
    const auto assignment =
        sgde::partition_indices(raw.size(), n_clients, fraction, seed);
    std::filesystem::create_directories(out_dir);
    for (std::size_t k = 0; k < assignment.size(); ++k) {
      sgde::RawDataset client;
      client.domain = raw.domain.select_rows(assignment[k]);
      for (std::size_t i : assignment[k]) client.labels.push_back(raw.labels[i]);
      std::set<int> classes(client.labels.begin(), client.labels.end());
      if (classes.size() < 2)
        std::cerr << "warning: client " << k << " received fewer than 2 classes\n";
      write_file((std::filesystem::path(out_dir) /
                  ("client-" + std::to_string(k) + ".json"))
                     .string(),
                 dataset_to_json(client, schema).dump(2) + "\n");
    }
    std::cout << "wrote " << assignment.size() << " client datasets to " << out_dir
              << "\n";
  });

  // ---- train-generators ----
  std::string client_id = "client-0";
  std::string gen_config_path;
  double max_epsilon = 1.5;
  auto* traingen = app.add_subcommand(
      "train-generators", "Train one DP generator per class of a client dataset");
  traingen->add_option("--dataset", dataset_path)->required();
  traingen->add_option("--client-id", client_id);
  traingen->add_option("--config", gen_config_path,
                       "JSON with the generator section of a scenario config");
  traingen->add_option("--max-epsilon", max_epsilon);
  traingen->add_option("--seed", seed);
  traingen->add_option("--out-dir", out_dir)->required();
  traingen->callback([&] {
    auto [raw, schema] = dataset_from_json(read_json_file(dataset_path));
    sgde::GeneratorScenarioConfig gen_cfg;
    if (!gen_config_path.empty()) {
      json g = read_json_file(gen_config_path);
      if (g.contains("generator")) g = g.at("generator");
      sgde::ScenarioConfig tmp;
      from_json(json{{"dataset_name", "x"}, {"csv_path", "x"},
                     {"schema_path", "x"}, {"generator", g}},
                tmp);
      gen_cfg = tmp.generator;
    }
    std::vector<std::size_t> all(raw.size());
    std::iota(all.begin(), all.end(), 0);
    const sgde::TabularSchema fitted =
        sgde::fit_numeric_ranges(schema, raw.domain, all);
    const sgde::LabeledDataset local = sgde::encode_labeled(raw, all, fitted);
    sgde::ServerRequirements reqs;
    reqs.max_epsilon = max_epsilon;

    std::filesystem::create_directories(out_dir);
    std::size_t written = 0;
    for (std::size_t c = 0; c < schema.label.classes.size(); ++c) {
      std::vector<std::size_t> class_rows;
      for (std::size_t i = 0; i < local.size(); ++i)
        if (local.labels[i] == static_cast<int>(c)) class_rows.push_back(i);
      if (class_rows.size() < gen_cfg.min_class_examples) {
        std::cerr << "skipping class " << schema.label.classes[c] << ": only "
                  << class_rows.size() << " examples\n";
        continue;
      }
      const sgde::VaeConfig vae =
          sgde::detail::build_vae_config(gen_cfg, fitted.encoded_width());
      const sgde::GeneratorArtifact artifact = sgde::train_class_generator(
          local.features.select_rows(class_rows), fitted, vae, reqs, client_id,
          schema.label.classes[c], seed + c);
      const std::string file =
          (std::filesystem::path(out_dir) / (artifact.generator_id + ".json")).string();
      write_file(file, sgde::serialize(artifact));
      std::cout << "class " << schema.label.classes[c] << ": epsilon "
                << artifact.certificate.epsilon << ", delta "
                << artifact.certificate.delta << " -> " << file << "\n";
      ++written;
    }
    if (written == 0) throw sgde::DataError("no class had enough examples");
  });

  // ---- serve ----
  std::string listen = "127.0.0.1:8080";
  std::string pool_dir = "pool";
  bool require_push = true;
  auto* serve = app.add_subcommand("serve", "Run the registry server");
  serve->add_option("--listen", listen, "host:port");
  serve->add_option("--pool-dir", pool_dir);
  serve->add_option("--max-epsilon", max_epsilon);
  serve->add_option("--require-push", require_push);
  serve->callback([&] {
    sgde::ServerRequirements reqs;
    reqs.max_epsilon = max_epsilon;
    reqs.require_push_before_pull = require_push;
    sgde::Registry registry = sgde::Registry::restore(pool_dir, reqs);
    for (const auto& q : registry.quarantined())
      std::cerr << "quarantined " << q.generator_id << ": " << q.reason << "\n";

    const auto colon = listen.rfind(':');
    if (colon == std::string::npos)
      throw sgde::ConfigError("--listen must be host:port");
    const std::string host = listen.substr(0, colon);
    const int port = std::stoi(listen.substr(colon + 1));

    sgde::RegistryHttpServer server(registry);
    const int bound = server.start(host, port);
    std::cout << "registry listening on " << host << ":" << bound << " ("
              << registry.pool_size() << " generators)\n";
    std::signal(SIGINT, [](int) { g_stop_requested = 1; });
    std::signal(SIGTERM, [](int) { g_stop_requested = 1; });
    while (g_stop_requested == 0)
      std::this_thread::sleep_for(std::chrono::milliseconds(100));
    server.stop();
    registry.persist(pool_dir);
    std::cout << "pool persisted to " << pool_dir << "\n";
  });

  // ---- push ----
  std::string server_url = "http://127.0.0.1:8080";
  std::vector<std::string> artifact_paths;
  auto* push = app.add_subcommand("push", "Push generator artifacts to a registry");
  push->add_option("--server", server_url);
  push->add_option("--client", client_id)->required();
  push->add_option("--artifact", artifact_paths)->required();
  push->callback([&] {
    sgde::HttpExchangeClient client(server_url);
    client.subscribe(client_id);
    bool any_reject = false;
    for (const auto& path : artifact_paths) {
      const sgde::PushResult res = client.push(client_id, read_file(path));
      if (res.accepted) {
        std::cout << path << ": accepted as " << res.generator_id << "\n";
      } else {
        std::cout << path << ": rejected (" << res.code << ": " << res.reason << ")\n";
        any_reject = true;
      }
    }
    if (any_reject) throw sgde::PolicyError("one or more artifacts were rejected");
  });

  // ---- pull ----
  std::string generator_id;
  auto* pull = app.add_subcommand("pull", "Pull artifacts from a registry");
  pull->add_option("--server", server_url);
  pull->add_option("--client", client_id)->required();
  pull->add_option("--generator", generator_id, "pull one id; default: whole pool");
  pull->add_option("--out-dir", out_dir)->required();
  pull->callback([&] {
    sgde::HttpExchangeClient client(server_url);
    client.subscribe(client_id);
    std::filesystem::create_directories(out_dir);
    std::vector<std::string> ids;
    if (!generator_id.empty()) {
      ids.push_back(generator_id);
    } else {
      for (const auto& row : client.list_generators(client_id))
        ids.push_back(row.generator_id);
    }
    for (const auto& id : ids) {
      const std::string bytes = client.pull(client_id, id);
      sgde::deserialize(bytes);  // integrity check before writing
      write_file((std::filesystem::path(out_dir) / (id + ".json")).string(), bytes);
      std::cout << "pulled " << id << "\n";
    }
  });

  // ---- synthesize ----
  std::string artifact_dir;
  std::size_t per_class = 200;
  std::string decode_mode = "argmax";
  auto* synth = app.add_subcommand(
      "synthesize", "Generate a labeled synthetic CSV from artifact files");
  synth->add_option("--artifact-dir", artifact_dir)->required();
  synth->add_option("--per-generator", per_class, "samples per generator");
  synth->add_option("--mode", decode_mode)->check(CLI::IsMember({"argmax", "sample"}));
  synth->add_option("--seed", seed);
  synth->add_option("--out", out_path)->required();
  synth->callback([&] {
    std::vector<std::string> files;
    for (const auto& entry : std::filesystem::directory_iterator(artifact_dir))
      if (entry.path().extension() == ".json") files.push_back(entry.path().string());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw sgde::DataError("no artifact files in " + artifact_dir);

    std::ostringstream csv;
    bool header_done = false;
    const sgde::DecodeMode mode = decode_mode == "argmax" ? sgde::DecodeMode::Argmax
                                                          : sgde::DecodeMode::Sample;
    for (std::size_t g = 0; g < files.size(); ++g) {
      const sgde::GeneratorArtifact artifact = sgde::deserialize(read_file(files[g]));
      const sgde::TabularSchema& schema = artifact.schema;
      if (!header_done) {
        for (const auto& f : schema.features) csv << f.name << ",";
        csv << schema.label.name << "\n";
        header_done = true;
      }
      const sgde::Matrix raw = sgde::sample(artifact, per_class, seed + g);
      const sgde::Matrix domain = sgde::decode_to_domain(raw, schema, mode, seed + g);
      for (std::size_t i = 0; i < domain.rows; ++i) {
        for (std::size_t f = 0; f < schema.features.size(); ++f) {
          const auto& spec = schema.features[f];
          if (spec.kind == sgde::FeatureSpec::Kind::Numeric)
            csv << domain(i, f) << ",";
          else
            csv << spec.categories[static_cast<std::size_t>(domain(i, f))] << ",";
        }
        csv << artifact.class_label << "\n";
      }
    }
    write_file(out_path, csv.str());
    std::cout << "wrote synthetic dataset to " << out_path << "\n";
  });

  // ---- train ----
  std::size_t epochs = 300;
  double learning_rate = 0.05;
  auto* train = app.add_subcommand("train", "Train a logistic-regression classifier");
  train->add_option("--csv", csv_path)->required();
  train->add_option("--schema", schema_path)->required();
  train->add_option("--epochs", epochs);
  train->add_option("--lr", learning_rate);
  train->add_option("--seed", seed);
  train->add_option("--out", out_path)->required();
  train->callback([&] {
    const sgde::TabularSchema schema = load_schema(schema_path);
    auto [raw, report] = sgde::load_csv(csv_path, schema);
    std::vector<std::size_t> all(raw.size());
    std::iota(all.begin(), all.end(), 0);
    const sgde::TabularSchema fitted = sgde::fit_numeric_ranges(schema, raw.domain, all);
    const sgde::LabeledDataset ds = sgde::encode_labeled(raw, all, fitted);
    const sgde::LogregModel model = sgde::train_logreg(ds, epochs, learning_rate, seed);
    const sgde::Metrics m = sgde::evaluate(model, ds);
    write_file(out_path, model_to_json(model, fitted).dump(2) + "\n");
    std::cout << "training accuracy " << m.accuracy << ", f1 " << m.f1 << ", auc "
              << m.auc << "\n";
  });

  // ---- evaluate ----
  std::string model_path;
  auto* eval = app.add_subcommand("evaluate", "Evaluate a model on a CSV");
  eval->add_option("--model", model_path)->required();
  eval->add_option("--csv", csv_path)->required();
  eval->callback([&] {
    auto [model, schema] = model_from_json(read_json_file(model_path));
    auto [raw, report] = sgde::load_csv(csv_path, schema);
    const sgde::Metrics m = sgde::evaluate(model, encode_all(raw, schema));
    json j = m;
    std::cout << j.dump(2) << "\n";
  });

  // ---- run ----
  std::string config_path, markdown_path;
  auto* run = app.add_subcommand("run", "Run a full scenario suite from a config");
  run->add_option("--config", config_path)->required();
  run->add_option("--out", out_path)->required();
  run->add_option("--markdown", markdown_path);
  run->callback([&] {
    const sgde::ScenarioConfig config =
        read_json_file(config_path).get<sgde::ScenarioConfig>();
    const sgde::ScenarioReport report = sgde::run_scenario(config);
    write_file(out_path, sgde::report_json(report));
    if (!markdown_path.empty()) {
      std::string md = "## Client-split evaluation\n\n" +
                       sgde::report_markdown({report}, false) +
                       "\n## Test-set evaluation\n\n" +
                       sgde::report_markdown({report}, true);
      write_file(markdown_path, md);
    }
    std::cout << "report written to " << out_path << "\n";
  });

  // ---- report ----
  std::vector<std::string> report_paths;
  std::string format = "markdown";
  auto* rep = app.add_subcommand("report", "Render one or more report files");
  rep->add_option("--in", report_paths)->required();
  rep->add_option("--format", format)->check(CLI::IsMember({"markdown", "json"}));
  rep->add_option("--out", out_path)->required();
  rep->callback([&] {
    std::vector<sgde::ScenarioReport> reports;
    for (const auto& p : report_paths)
      reports.push_back(read_json_file(p).get<sgde::ScenarioReport>());
    if (format == "json") {
      json j = json::array();
      for (const auto& r : reports) j.push_back(r);
      write_file(out_path, j.dump(2) + "\n");
    } else {
      std::string md = "## Client-split evaluation\n\n" +
                       sgde::report_markdown(reports, false) +
                       "\n## Test-set evaluation\n\n" +
                       sgde::report_markdown(reports, true);
      write_file(out_path, md);
    }
    std::cout << "wrote " << out_path << "\n";
  });

  CLI11_PARSE(app, argc, argv);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run_cli(argc, argv);
  } catch (const sgde::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const sgde::SchemaError& e) {
    std::cerr << "schema error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const sgde::PolicyError& e) {
    std::cerr << "policy error: " << e.what() << "\n";
    return kExitPolicy;
  } catch (const sgde::AuthError& e) {
    std::cerr << "auth error: " << e.what() << "\n";
    return kExitPolicy;
  } catch (const sgde::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const sgde::IntegrityError& e) {
    std::cerr << "integrity error: " << e.what() << "\n";
    return kExitData;
  } catch (const sgde::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
