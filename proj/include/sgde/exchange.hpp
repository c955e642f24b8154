#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sgde/dp_accountant.hpp"
#include "sgde/errors.hpp"
#include "sgde/generator.hpp"
#include "sgde/requirements.hpp"

// The registry behind the exchange protocol: Subscribe distributes the
// server requirements, Push gates artifacts on a server-side recomputation
// of their privacy certificate, Pull serves stored artifacts byte-identically
// to clients that contributed one. State persists to a directory and
// survives restarts.

namespace sgde {

struct CatalogRow {
  std::string generator_id;
  std::string client_id;
  std::string class_label;
  double epsilon = 0.0;
  double delta = 0.0;
  std::string arch_summary;
};

inline void to_json(nlohmann::json& j, const CatalogRow& r) {
  j = nlohmann::json{{"generator_id", r.generator_id}, {"client_id", r.client_id},
                     {"class_label", r.class_label},   {"epsilon", r.epsilon},
                     {"delta", r.delta},               {"arch", r.arch_summary}};
}

inline void from_json(const nlohmann::json& j, CatalogRow& r) {
  r.generator_id = j.at("generator_id").get<std::string>();
  r.client_id = j.at("client_id").get<std::string>();
  r.class_label = j.at("class_label").get<std::string>();
  r.epsilon = j.at("epsilon").get<double>();
  r.delta = j.at("delta").get<double>();
  r.arch_summary = j.at("arch").get<std::string>();
}

struct PushResult {
  bool accepted = false;
  std::string generator_id;
  std::string code;    // "accepted" or a reject code
  std::string reason;  // human-readable detail
};

struct ClientRecord {
  std::string client_id;
  bool subscribed = false;
  std::size_t accepted_push_count = 0;
};

// One accepted artifact. `bytes` keeps the exact pushed serialization so
// pulls are byte-identical.
struct PoolEntry {
  GeneratorArtifact artifact;
  std::string bytes;
  std::int64_t received_at = 0;  // unix millis
};

struct QuarantinedEntry {
  std::string generator_id;
  std::string reason;
};

inline std::string arch_summary(const NetworkArch& arch) {
  std::ostringstream os;
  os << "dense " << arch.input_width();
  for (const auto& L : arch.layers) os << "-" << L.out_width;
  return os.str();
}

class Registry {
 public:
  explicit Registry(ServerRequirements requirements = {})
      : requirements_(std::move(requirements)) {
    requirements_.validate();
  }

  // Moving is only safe while no requests are in flight; the mutex is not
  // carried over.
  Registry(Registry&& other) noexcept
      : requirements_(std::move(other.requirements_)),
        clients_(std::move(other.clients_)),
        entries_(std::move(other.entries_)),
        order_(std::move(other.order_)),
        quarantined_(std::move(other.quarantined_)) {}
  Registry(const Registry&) = delete;
  Registry& operator=(const Registry&) = delete;
  Registry& operator=(Registry&&) = delete;

  // Registers the client and returns the current requirements. Idempotent.
  ServerRequirements subscribe(const std::string& client_id) {
    if (client_id.empty()) throw RequestError("client id must be non-empty");
    std::unique_lock lock(mutex_);
    clients_[client_id].client_id = client_id;
    clients_[client_id].subscribed = true;
    return requirements_;
  }

  // Verifies the artifact (checksum, certificate recomputation, epsilon and
  // delta gates, arch constraints, id uniqueness) and stores it on accept.
  PushResult push(const std::string& client_id, const std::string& artifact_bytes) {
    std::unique_lock lock(mutex_);
    auto it = clients_.find(client_id);
    if (it == clients_.end() || !it->second.subscribed)
      throw AuthError("client '" + client_id + "' is not subscribed");

    GeneratorArtifact artifact;
    try {
      artifact = deserialize(artifact_bytes);
    } catch (const IntegrityError& e) {
      return {false, "", "integrity_reject", e.what()};
    }

    const PrivacyCertificate& cert = artifact.certificate;
    EpsilonResult recomputed;
    try {
      recomputed = recompute_epsilon(cert.mechanism, cert.delta);
    } catch (const Error& e) {
      return {false, artifact.generator_id, "certificate_invalid", e.what()};
    }
    if (std::abs(recomputed.epsilon - cert.epsilon) > 1e-9) {
      std::ostringstream os;
      os << "claimed epsilon " << cert.epsilon
         << " inconsistent with mechanism parameters (recomputed "
         << recomputed.epsilon << ")";
      return {false, artifact.generator_id, "certificate_inconsistent", os.str()};
    }
    if (recomputed.epsilon > requirements_.max_epsilon) {
      std::ostringstream os;
      os << "recomputed epsilon " << recomputed.epsilon << " exceeds gate "
         << requirements_.max_epsilon;
      return {false, artifact.generator_id, "epsilon_gate", os.str()};
    }
    if (cert.class_size < 1 ||
        cert.delta > delta_cap_for_class_size(cert.class_size)) {
      return {false, artifact.generator_id, "delta_policy",
              "delta exceeds min(1e-5, 1/(10*class_size))"};
    }
    if (requirements_.min_optimal_order > 0 &&
        cert.optimal_order < requirements_.min_optimal_order) {
      return {false, artifact.generator_id, "rdp_order_gate",
              "optimal RDP order below the server minimum"};
    }
    if (!requirements_.allowed_arch.admits(artifact.decoder_arch)) {
      return {false, artifact.generator_id, "arch_policy",
              "decoder architecture violates server constraints"};
    }
    if (entries_.count(artifact.generator_id) > 0) {
      return {false, artifact.generator_id, "duplicate_id",
              "generator id already present in the pool"};
    }

    PoolEntry entry;
    entry.bytes = artifact_bytes;
    entry.received_at = std::chrono::duration_cast<std::chrono::milliseconds>(
                            std::chrono::system_clock::now().time_since_epoch())
                            .count();
    const std::string id = artifact.generator_id;
    entry.artifact = std::move(artifact);
    entries_.emplace(id, std::move(entry));
    order_.push_back(id);
    it->second.accepted_push_count += 1;
    return {true, id, "accepted", ""};
  }

  std::vector<CatalogRow> list_generators(const std::string& client_id) const {
    std::shared_lock lock(mutex_);
    check_pull_policy(client_id);
    std::vector<CatalogRow> rows;
    rows.reserve(order_.size());
    for (const auto& id : order_) {
      const PoolEntry& e = entries_.at(id);
      rows.push_back({e.artifact.generator_id, e.artifact.client_id,
                      e.artifact.class_label, e.artifact.certificate.epsilon,
                      e.artifact.certificate.delta,
                      arch_summary(e.artifact.decoder_arch)});
    }
    return rows;
  }

  // Returns the stored serialization verbatim, after re-verifying it.
  std::string pull(const std::string& client_id,
                   const std::string& generator_id) const {
    std::shared_lock lock(mutex_);
    check_pull_policy(client_id);
    auto it = entries_.find(generator_id);
    if (it == entries_.end())
      throw NotFoundError("no generator with id '" + generator_id + "'");
    verify_artifact(it->second.artifact);
    return it->second.bytes;
  }

  const ServerRequirements& requirements() const { return requirements_; }

  std::size_t pool_size() const {
    std::shared_lock lock(mutex_);
    return entries_.size();
  }

  std::vector<QuarantinedEntry> quarantined() const {
    std::shared_lock lock(mutex_);
    return quarantined_;
  }

  // One artifact file per entry plus an index file.
  void persist(const std::filesystem::path& dir) const {
    std::shared_lock lock(mutex_);
    std::filesystem::create_directories(dir);
    nlohmann::json index;
    index["protocol_version"] = requirements_.protocol_version;
    index["requirements"] = requirements_;
    nlohmann::json clients = nlohmann::json::array();
    for (const auto& [id, rec] : clients_)
      clients.push_back({{"client_id", rec.client_id},
                         {"subscribed", rec.subscribed},
                         {"accepted_push_count", rec.accepted_push_count}});
    index["clients"] = clients;
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& id : order_) {
      const PoolEntry& e = entries_.at(id);
      const std::string file = id + ".json";
      entries.push_back({{"generator_id", id},
                         {"file", file},
                         {"received_at", e.received_at}});
      std::ofstream out(dir / file, std::ios::binary | std::ios::trunc);
      out << e.bytes;
      if (!out) throw Error("failed to write artifact file " + file);
    }
    index["entries"] = entries;
    std::ofstream out(dir / "index.json", std::ios::binary | std::ios::trunc);
    out << index.dump(2);
    if (!out) throw Error("failed to write pool index");
  }

  // Restores a registry from a pool directory. An empty or missing directory
  // yields an empty pool; artifacts that fail verification are quarantined
  // and the rest are served.
  static Registry restore(const std::filesystem::path& dir,
                          ServerRequirements fallback = {}) {
    const auto index_path = dir / "index.json";
    if (!std::filesystem::exists(index_path)) return Registry(std::move(fallback));

    nlohmann::json index;
    try {
      std::ifstream in(index_path, std::ios::binary);
      index = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw StartupError(std::string("corrupt pool index: ") + e.what());
    }

    Registry reg(index.contains("requirements")
                     ? index.at("requirements").get<ServerRequirements>()
                     : std::move(fallback));
    try {
      for (const auto& c : index.at("clients")) {
        ClientRecord rec;
        rec.client_id = c.at("client_id").get<std::string>();
        rec.subscribed = c.at("subscribed").get<bool>();
        rec.accepted_push_count = c.at("accepted_push_count").get<std::size_t>();
        reg.clients_[rec.client_id] = rec;
      }
      for (const auto& e : index.at("entries")) {
        const std::string id = e.at("generator_id").get<std::string>();
        const std::string file = e.at("file").get<std::string>();
        PoolEntry entry;
        entry.received_at = e.at("received_at").get<std::int64_t>();
        std::ifstream in(dir / file, std::ios::binary);
        if (!in) {
          reg.quarantined_.push_back({id, "artifact file missing"});
          continue;
        }
        std::ostringstream buf;
        buf << in.rdbuf();
        entry.bytes = buf.str();
        try {
          entry.artifact = deserialize(entry.bytes);
          if (entry.artifact.generator_id != id)
            throw IntegrityError("generator id does not match index");
        } catch (const IntegrityError& ex) {
          reg.quarantined_.push_back({id, ex.what()});
          continue;
        }
        reg.entries_.emplace(id, std::move(entry));
        reg.order_.push_back(id);
      }
    } catch (const nlohmann::json::exception& ex) {
      throw StartupError(std::string("corrupt pool index: ") + ex.what());
    }
    return reg;
  }

 private:
  void check_pull_policy(const std::string& client_id) const {
    auto it = clients_.find(client_id);
    if (it == clients_.end() || !it->second.subscribed)
      throw AuthError("client '" + client_id + "' is not subscribed");
    if (requirements_.require_push_before_pull &&
        it->second.accepted_push_count == 0)
      throw AuthError("client '" + client_id +
                      "' has no accepted push; pool access denied");
  }

  ServerRequirements requirements_;
  mutable std::shared_mutex mutex_;
  std::map<std::string, ClientRecord> clients_;
  std::map<std::string, PoolEntry> entries_;
  std::vector<std::string> order_;  // insertion order for stable catalogs
  std::vector<QuarantinedEntry> quarantined_;
};

// Transport-agnostic client surface; implementations exist for an in-process
// registry and for the HTTP server.
class ExchangeApi {
 public:
  virtual ~ExchangeApi() = default;
  virtual ServerRequirements subscribe(const std::string& client_id) = 0;
  virtual PushResult push(const std::string& client_id, const std::string& bytes) = 0;
  virtual std::vector<CatalogRow> list_generators(const std::string& client_id) = 0;
  virtual std::string pull(const std::string& client_id,
                           const std::string& generator_id) = 0;
};

class InProcExchange final : public ExchangeApi {
 public:
  explicit InProcExchange(Registry& registry) : registry_(registry) {}

  ServerRequirements subscribe(const std::string& client_id) override {
    return registry_.subscribe(client_id);
  }
  PushResult push(const std::string& client_id, const std::string& bytes) override {
    return registry_.push(client_id, bytes);
  }
  std::vector<CatalogRow> list_generators(const std::string& client_id) override {
    return registry_.list_generators(client_id);
  }
  std::string pull(const std::string& client_id,
                   const std::string& generator_id) override {
    return registry_.pull(client_id, generator_id);
  }

 private:
  Registry& registry_;
};

}  // namespace sgde
