#include "sgde/exchange.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "sgde/exchange_http.hpp"
#include "test_util.hpp"

using namespace sgde;
using namespace sgde_test;

namespace {

TabularSchema tiny_schema() {
  TabularSchema schema;
  schema.features.push_back({"f0", FeatureSpec::Kind::Numeric, 0.0, 1.0, {}});
  schema.features.push_back({"f1", FeatureSpec::Kind::Numeric, 0.0, 1.0, {}});
  schema.features.push_back({"f2", FeatureSpec::Kind::Numeric, 0.0, 1.0, {}});
  schema.label = {"y", {"a", "b"}, "b"};
  return schema;
}

// Hand-built artifact with a consistent certificate; no training involved.
GeneratorArtifact make_artifact(const std::string& client, const std::string& label,
                                std::uint64_t seed, double sigma = 3.0,
                                std::size_t steps = 10) {
  GeneratorArtifact a;
  a.client_id = client;
  a.class_label = label;
  a.latent.dim = 2;
  a.decoder_arch = make_dense_arch(2, {4}, 3, Activation::LeakyRelu,
                                   Activation::Sigmoid);
  RngStream rng(seed);
  a.weights.resize(a.decoder_arch.param_count());
  for (float& w : a.weights) w = static_cast<float>(rng.uniform(-1, 1));
  a.schema = tiny_schema();
  a.certificate = make_certificate(MechanismParams{sigma, 0.1, steps, 1.0}, 100);
  const auto bytes = sgde::detail::floats_to_le_bytes(a.weights);
  a.generator_id = "g" + sgde::detail::sha256_hex(
                             client + label + std::string(bytes.begin(), bytes.end()))
                             .substr(0, 16);
  a.checksum_sha256 = artifact_checksum(a);
  return a;
}

std::filesystem::path temp_dir(const std::string& tag) {
  const auto dir =
      std::filesystem::temp_directory_path() / ("sgde_test_" + tag);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST(Subscribe, ReturnsRequirementsAndIsIdempotent) {
  Registry reg;
  const ServerRequirements a = reg.subscribe("alice");
  EXPECT_DOUBLE_EQ(a.max_epsilon, 1.5);
  const ServerRequirements b = reg.subscribe("alice");
  EXPECT_DOUBLE_EQ(b.max_epsilon, a.max_epsilon);
  EXPECT_THROW(reg.subscribe(""), RequestError);
}

TEST(Push, AcceptsConsistentCertificateUnderGate) {
  Registry reg;
  reg.subscribe("alice");
  const GeneratorArtifact a = make_artifact("alice", "a", 1);
  ASSERT_LE(a.certificate.epsilon, 1.5);
  const PushResult res = reg.push("alice", serialize(a));
  EXPECT_TRUE(res.accepted) << res.reason;
  EXPECT_EQ(res.generator_id, a.generator_id);
  EXPECT_EQ(reg.pool_size(), 1u);
}

TEST(Push, UnsubscribedClientIsAuthError) {
  Registry reg;
  const GeneratorArtifact a = make_artifact("bob", "a", 2);
  EXPECT_THROW(reg.push("bob", serialize(a)), AuthError);
}

TEST(Push, RejectsInconsistentCertificate) {
  Registry reg;
  reg.subscribe("alice");
  GeneratorArtifact a = make_artifact("alice", "a", 3);
  a.certificate.epsilon = 1.4;  // no longer matches the mechanism parameters
  a.checksum_sha256 = artifact_checksum(a);
  const PushResult res = reg.push("alice", serialize(a));
  EXPECT_FALSE(res.accepted);
  EXPECT_EQ(res.code, "certificate_inconsistent");
}

TEST(Push, RejectsEpsilonAboveGateWithRecomputedValue) {
  Registry reg;
  reg.subscribe("alice");
  // Little noise over many steps: consistent certificate, epsilon >> 1.5.
  const GeneratorArtifact a = make_artifact("alice", "a", 4, 0.7, 500);
  ASSERT_GT(a.certificate.epsilon, 1.5);
  const PushResult res = reg.push("alice", serialize(a));
  EXPECT_FALSE(res.accepted);
  EXPECT_EQ(res.code, "epsilon_gate");
  EXPECT_NE(res.reason.find("recomputed"), std::string::npos);
}

TEST(Push, RejectsChecksumMismatchAndDuplicateId) {
  Registry reg;
  reg.subscribe("alice");
  const GeneratorArtifact a = make_artifact("alice", "a", 5);
  std::string bytes = serialize(a);
  std::string corrupted = bytes;
  const auto pos = corrupted.find("\"weights_b64\":\"");
  ASSERT_NE(pos, std::string::npos);
  corrupted[pos + 20] = corrupted[pos + 20] == 'A' ? 'B' : 'A';
  const PushResult bad = reg.push("alice", corrupted);
  EXPECT_FALSE(bad.accepted);
  EXPECT_EQ(bad.code, "integrity_reject");

  EXPECT_TRUE(reg.push("alice", bytes).accepted);
  const PushResult dup = reg.push("alice", bytes);
  EXPECT_FALSE(dup.accepted);
  EXPECT_EQ(dup.code, "duplicate_id");
  EXPECT_EQ(reg.pool_size(), 1u);
}

TEST(Push, RejectsDeltaAboveCap) {
  Registry reg;
  reg.subscribe("alice");
  GeneratorArtifact a = make_artifact("alice", "a", 6);
  // Rebuild the certificate with a delta looser than min(1e-5, 1/(10 n)).
  a.certificate.delta = 1e-3;
  const EpsilonResult res = to_epsilon_delta(a.certificate.rdp, a.certificate.delta);
  a.certificate.epsilon = res.epsilon;
  a.certificate.optimal_order = res.optimal_order;
  a.checksum_sha256 = artifact_checksum(a);
  const PushResult push = reg.push("alice", serialize(a));
  EXPECT_FALSE(push.accepted);
  EXPECT_EQ(push.code, "delta_policy");
}

TEST(Push, ArchConstraintsRejectWhenEnabled) {
  ServerRequirements reqs;
  reqs.allowed_arch.enabled = true;
  reqs.allowed_arch.max_width = 3;
  Registry reg(reqs);
  reg.subscribe("alice");
  const GeneratorArtifact a = make_artifact("alice", "a", 7);  // width 4 hidden
  const PushResult res = reg.push("alice", serialize(a));
  EXPECT_FALSE(res.accepted);
  EXPECT_EQ(res.code, "arch_policy");
}

TEST(PullPolicy, DeniedBeforeAnAcceptedPush) {
  Registry reg;
  reg.subscribe("alice");
  reg.subscribe("bob");
  EXPECT_TRUE(reg.push("alice", serialize(make_artifact("alice", "a", 8))).accepted);
  EXPECT_THROW(reg.list_generators("bob"), AuthError);
  EXPECT_THROW(reg.pull("bob", "anything"), AuthError);
  EXPECT_THROW(reg.list_generators("carol"), AuthError);  // not subscribed

  // After bob contributes, the shared pool opens up.
  EXPECT_TRUE(reg.push("bob", serialize(make_artifact("bob", "b", 9))).accepted);
  EXPECT_EQ(reg.list_generators("bob").size(), 2u);
}

TEST(PullPolicy, OpenFederationDisablesTheRule) {
  ServerRequirements reqs;
  reqs.require_push_before_pull = false;
  Registry reg(reqs);
  reg.subscribe("alice");
  EXPECT_EQ(reg.list_generators("alice").size(), 0u);
}

TEST(Pull, ByteIdenticalRoundTripAcrossClients) {
  Registry reg;
  reg.subscribe("alice");
  reg.subscribe("bob");
  const GeneratorArtifact a = make_artifact("alice", "a", 10);
  const std::string bytes = serialize(a);
  ASSERT_TRUE(reg.push("alice", bytes).accepted);
  ASSERT_TRUE(reg.push("bob", serialize(make_artifact("bob", "b", 11))).accepted);

  EXPECT_EQ(reg.pull("alice", a.generator_id), bytes);
  EXPECT_EQ(reg.pull("bob", a.generator_id), bytes);
  EXPECT_THROW(reg.pull("alice", "gdeadbeef"), NotFoundError);
}

TEST(Catalog, RowsCarryPrivacyAndArchSummary) {
  Registry reg;
  reg.subscribe("alice");
  for (int i = 0; i < 3; ++i)
    ASSERT_TRUE(
        reg.push("alice", serialize(make_artifact("alice", i % 2 ? "a" : "b",
                                                  20 + i)))
            .accepted);
  const auto rows = reg.list_generators("alice");
  ASSERT_EQ(rows.size(), 3u);
  for (const auto& r : rows) {
    EXPECT_LE(r.epsilon, 1.5);
    EXPECT_EQ(r.arch_summary, "dense 2-4-3");
    EXPECT_EQ(r.client_id, "alice");
  }
}

TEST(Persistence, RestartRestoresCatalogAndPolicy) {
  const auto dir = temp_dir("persist");
  {
    Registry reg;
    reg.subscribe("alice");
    reg.subscribe("bob");
    ASSERT_TRUE(reg.push("alice", serialize(make_artifact("alice", "a", 30))).accepted);
    ASSERT_TRUE(reg.push("alice", serialize(make_artifact("alice", "b", 31))).accepted);
    reg.persist(dir);
  }
  Registry restored = Registry::restore(dir);
  EXPECT_EQ(restored.pool_size(), 2u);
  const auto rows = restored.list_generators("alice");
  ASSERT_EQ(rows.size(), 2u);
  // bob never pushed; the policy survives the restart.
  EXPECT_THROW(restored.list_generators("bob"), AuthError);
}

TEST(Persistence, TamperedArtifactIsQuarantinedOthersServed) {
  const auto dir = temp_dir("quarantine");
  std::string good_id, bad_id;
  {
    Registry reg;
    reg.subscribe("alice");
    const GeneratorArtifact g = make_artifact("alice", "a", 32);
    const GeneratorArtifact b = make_artifact("alice", "b", 33);
    good_id = g.generator_id;
    bad_id = b.generator_id;
    ASSERT_TRUE(reg.push("alice", serialize(g)).accepted);
    ASSERT_TRUE(reg.push("alice", serialize(b)).accepted);
    reg.persist(dir);
  }
  // Flip one byte inside the stored weights of the second artifact.
  const auto file = dir / (bad_id + ".json");
  std::string bytes;
  {
    std::ifstream in(file, std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    bytes = buf.str();
  }
  const auto pos = bytes.find("\"weights_b64\":\"");
  ASSERT_NE(pos, std::string::npos);
  bytes[pos + 20] = bytes[pos + 20] == 'A' ? 'B' : 'A';
  {
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    out << bytes;
  }

  Registry restored = Registry::restore(dir);
  EXPECT_EQ(restored.pool_size(), 1u);
  ASSERT_EQ(restored.quarantined().size(), 1u);
  EXPECT_EQ(restored.quarantined()[0].generator_id, bad_id);
  EXPECT_EQ(restored.list_generators("alice")[0].generator_id, good_id);
}

TEST(Persistence, EmptyDirectoryIsEmptyPoolAndCorruptIndexFails) {
  const auto dir = temp_dir("empty");
  Registry restored = Registry::restore(dir);
  EXPECT_EQ(restored.pool_size(), 0u);

  std::ofstream(dir / "index.json") << "{not json";
  EXPECT_THROW(Registry::restore(dir), StartupError);
}

TEST(Http, FullProtocolRoundTrip) {
  Registry reg;
  RegistryHttpServer server(reg);
  const int port = server.start("127.0.0.1", 0);
  HttpExchangeClient client("http://127.0.0.1:" + std::to_string(port));

  const ServerRequirements reqs = client.subscribe("alice");
  EXPECT_DOUBLE_EQ(reqs.max_epsilon, 1.5);

  // Pull before any accepted push: denied.
  EXPECT_THROW(client.list_generators("alice"), AuthError);

  const GeneratorArtifact a = make_artifact("alice", "a", 40);
  const std::string bytes = serialize(a);
  const PushResult push = client.push("alice", bytes);
  EXPECT_TRUE(push.accepted);
  EXPECT_EQ(push.generator_id, a.generator_id);

  const auto rows = client.list_generators("alice");
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].generator_id, a.generator_id);

  EXPECT_EQ(client.pull("alice", a.generator_id), bytes);
  EXPECT_THROW(client.pull("alice", "gmissing"), NotFoundError);

  // Reject path carries the JSON error envelope through.
  const PushResult dup = client.push("alice", bytes);
  EXPECT_FALSE(dup.accepted);
  EXPECT_EQ(dup.code, "duplicate_id");

  server.stop();
}

TEST(Http, UnsubscribedAndMalformedRequests) {
  Registry reg;
  RegistryHttpServer server(reg);
  const int port = server.start("127.0.0.1", 0);
  const std::string base = "http://127.0.0.1:" + std::to_string(port);
  HttpExchangeClient client(base);
  EXPECT_THROW(client.list_generators("ghost"), AuthError);

  httplib::Client raw(base);
  const auto res = raw.Post("/v1/subscribe", "{\"nope\": 1}", "application/json");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 400);
  const auto envelope = nlohmann::json::parse(res->body);
  EXPECT_EQ(envelope.at("code"), "request_error");
  EXPECT_TRUE(envelope.contains("message"));
  server.stop();
}
