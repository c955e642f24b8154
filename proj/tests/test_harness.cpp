#include "sgde/harness.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

using namespace sgde;

namespace {

std::filesystem::path temp_dir(const std::string& tag) {
  const auto dir = std::filesystem::temp_directory_path() / ("sgde_harness_" + tag);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

void write(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
}

TabularSchema mixed_schema() {
  TabularSchema schema;
  schema.features.push_back({"age", FeatureSpec::Kind::Numeric, 0.0, 100.0, {}});
  schema.features.push_back(
      {"color", FeatureSpec::Kind::Categorical, 0, 1, {"red", "green", "blue"}});
  schema.label = {"outcome", {"no", "yes"}, "yes"};
  return schema;
}

// Small two-cluster dataset written as a CSV, for end-to-end runs.
void write_cluster_csv(const std::filesystem::path& path, std::size_t n,
                       std::uint64_t seed) {
  RngStream rng(seed);
  std::ostringstream csv;
  csv << "x0,x1,x2,label\n";
  for (std::size_t i = 0; i < n; ++i) {
    const int label = rng.uniform() < 0.5 ? 0 : 1;
    const double shift = label ? 2.0 : 0.0;
    csv << rng.normal(shift, 0.8) << "," << rng.normal(-shift, 0.8) << ","
        << rng.normal(0.0, 1.0) << "," << (label ? "b" : "a") << "\n";
  }
  write(path, csv.str());
}

const char* kClusterSchema = R"({
  "features": [
    {"name": "x0", "kind": "numeric", "min": -5, "max": 5},
    {"name": "x1", "kind": "numeric", "min": -5, "max": 5},
    {"name": "x2", "kind": "numeric", "min": -5, "max": 5}
  ],
  "label": {"name": "label", "classes": ["a", "b"], "positive_class": "b"}
})";

}  // namespace

TEST(LoadCsv, WellFormedRowsAreLoaded) {
  const auto dir = temp_dir("load");
  write(dir / "ok.csv",
        "age,color,outcome\n30,red,no\n40,green,yes\n50,blue,yes\n");
  auto [raw, report] = load_csv(dir / "ok.csv", mixed_schema());
  EXPECT_EQ(report.rows_loaded, 3u);
  EXPECT_EQ(raw.size(), 3u);
  EXPECT_DOUBLE_EQ(raw.domain(0, 0), 30.0);
  EXPECT_DOUBLE_EQ(raw.domain(1, 1), 1.0);  // green
  EXPECT_EQ(raw.labels[2], 1);
}

TEST(LoadCsv, UnknownCategoryDroppedAndReportedWithLine) {
  const auto dir = temp_dir("badcat");
  write(dir / "bad.csv",
        "age,color,outcome\n30,red,no\n40,purple,yes\n50,blue,yes\n");
  auto [raw, report] = load_csv(dir / "bad.csv", mixed_schema());
  EXPECT_EQ(report.rows_loaded, 2u);
  ASSERT_EQ(report.row_errors.size(), 1u);
  EXPECT_NE(report.row_errors[0].find("line 3"), std::string::npos);
  EXPECT_NE(report.row_errors[0].find("purple"), std::string::npos);
}

TEST(LoadCsv, EmptyFileWithHeaderIsEmptyDataset) {
  const auto dir = temp_dir("emptycsv");
  write(dir / "empty.csv", "age,color,outcome\n");
  auto [raw, report] = load_csv(dir / "empty.csv", mixed_schema());
  EXPECT_EQ(raw.size(), 0u);
  EXPECT_EQ(report.rows_loaded, 0u);
}

TEST(LoadCsv, MissingValuesDroppedWithCount) {
  const auto dir = temp_dir("missing");
  write(dir / "m.csv",
        "age,color,outcome\n30,red,no\n,green,yes\n50,?,yes\n60,blue,\n70,red,yes\n");
  auto [raw, report] = load_csv(dir / "m.csv", mixed_schema());
  EXPECT_EQ(report.rows_loaded, 2u);
  EXPECT_EQ(report.rows_dropped_missing, 3u);
}

TEST(LoadCsv, HeaderMismatchIsSchemaError) {
  const auto dir = temp_dir("header");
  write(dir / "h.csv", "age,colour,outcome\n30,red,no\n");
  EXPECT_THROW(load_csv(dir / "h.csv", mixed_schema()), SchemaError);
}

TEST(Preprocess, MinMaxEndpointsAndOneHot) {
  RawDataset raw;
  raw.domain = Matrix(3, 2);
  raw.domain(0, 0) = 10.0; raw.domain(0, 1) = 0;  // red
  raw.domain(1, 0) = 20.0; raw.domain(1, 1) = 2;  // blue
  raw.domain(2, 0) = 15.0; raw.domain(2, 1) = 1;  // green
  raw.labels = {0, 1, 0};

  const std::vector<std::size_t> all = {0, 1, 2};
  const TabularSchema fitted = fit_numeric_ranges(mixed_schema(), raw.domain, all);
  const LabeledDataset ds = encode_labeled(raw, all, fitted);
  ASSERT_EQ(ds.features.cols, 4u);  // 1 numeric + 3 one-hot
  EXPECT_DOUBLE_EQ(ds.features(0, 0), 0.0);   // at min
  EXPECT_DOUBLE_EQ(ds.features(1, 0), 1.0);   // at max
  EXPECT_DOUBLE_EQ(ds.features(2, 0), 0.5);
  for (std::size_t i = 0; i < 3; ++i) {
    double hot = 0.0;
    for (std::size_t j = 1; j < 4; ++j) hot += ds.features(i, j);
    EXPECT_DOUBLE_EQ(hot, 1.0);
  }
  EXPECT_EQ(ds.positive_class, 1);
}

TEST(Preprocess, OutOfRangeTestValueClampedWithWarning) {
  RawDataset raw;
  raw.domain = Matrix(3, 2);
  raw.domain(0, 0) = 10.0;
  raw.domain(1, 0) = 20.0;
  raw.domain(2, 0) = 40.0;  // twice the max seen in training rows {0, 1}
  raw.labels = {0, 1, 1};

  const std::vector<std::size_t> train = {0, 1};
  const TabularSchema fitted = fit_numeric_ranges(mixed_schema(), raw.domain, train);
  std::vector<std::string> warnings;
  const std::vector<std::size_t> test = {2};
  const LabeledDataset ds = encode_labeled(raw, test, fitted, &warnings);
  EXPECT_DOUBLE_EQ(ds.features(0, 0), 1.0);  // clamped
  ASSERT_EQ(warnings.size(), 1u);
  EXPECT_NE(warnings[0].find("clamped"), std::string::npos);
}

TEST(Preprocess, DegenerateRangeEncodesAsHalfAndWarns) {
  RawDataset raw;
  raw.domain = Matrix(2, 2);
  raw.domain(0, 0) = 7.0;
  raw.domain(1, 0) = 7.0;
  raw.labels = {0, 1};
  const std::vector<std::size_t> all = {0, 1};
  std::vector<std::string> warnings;
  const TabularSchema fitted =
      fit_numeric_ranges(mixed_schema(), raw.domain, all, &warnings);
  ASSERT_EQ(warnings.size(), 1u);
  EXPECT_NE(warnings[0].find("constant"), std::string::npos);
  const LabeledDataset ds = encode_labeled(raw, all, fitted);
  EXPECT_DOUBLE_EQ(ds.features(0, 0), 0.5);
}

TEST(Preprocess, UnfittedSchemaIsLeakageGuardError) {
  RawDataset raw;
  raw.domain = Matrix(1, 2);
  raw.labels = {0};
  const std::vector<std::size_t> all = {0};
  EXPECT_THROW(encode_labeled(raw, all, mixed_schema()), SchemaError);
}

TEST(Partition, DisjointExactSizes) {
  const auto clients = partition_indices(1000, 20, 0.05, 7);
  ASSERT_EQ(clients.size(), 20u);
  std::set<std::size_t> seen;
  for (const auto& c : clients) {
    EXPECT_EQ(c.size(), 50u);
    for (std::size_t i : c) {
      EXPECT_TRUE(seen.insert(i).second) << "index assigned twice";
      EXPECT_LT(i, 1000u);
    }
  }
  EXPECT_EQ(seen.size(), 1000u);
}

TEST(Partition, SingleClientFullFractionTakesEverything) {
  const auto clients = partition_indices(37, 1, 1.0, 3);
  ASSERT_EQ(clients.size(), 1u);
  EXPECT_EQ(clients[0].size(), 37u);
}

TEST(Partition, DeterministicPerSeedAndValidated) {
  EXPECT_EQ(partition_indices(100, 4, 0.2, 9), partition_indices(100, 4, 0.2, 9));
  EXPECT_NE(partition_indices(100, 4, 0.2, 9), partition_indices(100, 4, 0.2, 10));
  EXPECT_THROW(partition_indices(100, 30, 0.05, 1), ConfigError);
}

TEST(Report, MarkdownSingleDatasetHasDataAndImprovementRows) {
  ScenarioReport report;
  report.dataset = "toy";
  report.config_hash = "abc";
  report.seeds = {1};
  for (const std::string name : {"local", "synthetic"}) {
    ScenarioOutcome o;
    o.scenario = name;
    o.aggregate.client_eval = {name == "local" ? 0.80 : 0.85, 0.5, 0.9, {}};
    o.aggregate.test_eval = o.aggregate.client_eval;
    report.scenarios.push_back(o);
  }
  const std::string md = report_markdown({report});
  // header + separator + one data row + improvement row
  EXPECT_EQ(std::count(md.begin(), md.end(), '\n'), 4);
  EXPECT_NE(md.find("| toy |"), std::string::npos);
  EXPECT_NE(md.find("Avg. Improvement"), std::string::npos);
  // Local improvement against itself is zero; synthetic is +5 points.
  EXPECT_NE(md.find("+0.00"), std::string::npos);
  EXPECT_NE(md.find("+5.00"), std::string::npos);
  // Federated column absent from this report.
  EXPECT_NE(md.find(" - |"), std::string::npos);
}

TEST(Report, JsonRoundTripMatchesMarkdownValues) {
  ScenarioReport report;
  report.dataset = "toy";
  report.config_hash = "h";
  report.seeds = {1, 2};
  ScenarioOutcome o;
  o.scenario = "local";
  SeedOutcome s;
  s.seed = 1;
  s.mean.client_eval = {0.91234, 0.81234, 0.71234, {}};
  s.mean.test_eval = s.mean.client_eval;
  o.per_seed.push_back(s);
  o.aggregate = s.mean;
  report.scenarios.push_back(o);

  const nlohmann::json j = nlohmann::json::parse(report_json(report));
  const auto back = j.get<ScenarioReport>();
  const std::string md = report_markdown({back});
  EXPECT_NE(md.find("91.23"), std::string::npos);
  EXPECT_NE(md.find("81.23"), std::string::npos);
  EXPECT_NE(md.find("71.23"), std::string::npos);
}

TEST(ScenarioRun, ConfigHashChangesIffConfigChanges) {
  ScenarioConfig a;
  a.dataset_name = "x";
  a.csv_path = "x.csv";
  a.schema_path = "x.json";
  ScenarioConfig b = a;
  EXPECT_EQ(sgde::detail::sha256_hex(nlohmann::json(a).dump()),
            sgde::detail::sha256_hex(nlohmann::json(b).dump()));
  b.seeds = {99};
  EXPECT_NE(sgde::detail::sha256_hex(nlohmann::json(a).dump()),
            sgde::detail::sha256_hex(nlohmann::json(b).dump()));
}

TEST(ScenarioRun, EndToEndDeterministicAndBalanced) {
  const auto dir = temp_dir("run");
  write_cluster_csv(dir / "data.csv", 240, 5);
  write(dir / "schema.json", kClusterSchema);

  ScenarioConfig config;
  config.dataset_name = "clusters";
  config.csv_path = (dir / "data.csv").string();
  config.schema_path = (dir / "schema.json").string();
  config.n_clients = 2;
  config.client_fraction = 0.4;
  config.test_split = 0.1;
  config.scenarios = {"local", "synthetic"};
  config.seeds = {11, 12};
  config.logreg = {120, 0.05};
  config.generator.latent_dim = 2;
  config.generator.encoder_hidden = {8};
  config.generator.decoder_hidden = {8};
  config.generator.epochs = 4;
  config.generator.batch_size = 16;
  config.synthetic.samples_per_generator_per_class = 40;

  const ScenarioReport r1 = run_scenario(config);
  const ScenarioReport r2 = run_scenario(config);
  EXPECT_EQ(report_json(r1), report_json(r2));

  // Every (client, class) generator passed the gate, so the synthetic pool
  // is class-balanced and all certificates sit under the epsilon gate.
  const ScenarioOutcome* synth = r1.find("synthetic");
  ASSERT_NE(synth, nullptr);
  for (const auto& seed_outcome : synth->per_seed) {
    EXPECT_TRUE(seed_outcome.gate_failures.empty());
    EXPECT_EQ(seed_outcome.generators.size(), 4u);  // 2 clients x 2 classes
    for (const auto& g : seed_outcome.generators) {
      EXPECT_LE(g.epsilon, 1.5);
      EXPECT_LE(g.delta, 1e-5);
    }
  }
}
