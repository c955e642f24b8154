#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "sgde/arch_json.hpp"
#include "sgde/detail/encoding.hpp"
#include "sgde/dp_accountant.hpp"
#include "sgde/dp_optimizer.hpp"
#include "sgde/errors.hpp"
#include "sgde/matrix.hpp"
#include "sgde/requirements.hpp"
#include "sgde/rng.hpp"
#include "sgde/schema.hpp"
#include "sgde/tensor_nn.hpp"

// Per-class beta-VAE generators: joint DP training of encoder and decoder,
// decoder-only artifact extraction, synthetic sampling, and checksummed
// canonical serialization.

namespace sgde {

inline constexpr int kArtifactFormatVersion = 1;

struct LatentSpec {
  std::size_t dim = 8;  // prior is N(0, I)
};

struct VaeConfig {
  std::size_t latent_dim = 8;
  double beta = 1.0;
  NetworkArch encoder_arch;  // data width -> ... -> 2 * latent (mean | logvar)
  NetworkArch decoder_arch;  // latent -> ... -> data width, sigmoid output
  DpTrainingConfig dp;
  std::size_t min_class_examples = 10;

  // Dense stack from the tabular generator configuration: encoder 64 -> 32
  // with LeakyReLU, decoder 64 -> 128 with LeakyReLU and a sigmoid output
  // head sized to the encoded schema width.
  static VaeConfig tabular_default(std::size_t encoded_width,
                                   std::size_t latent_dim = 8, double beta = 1.0) {
    VaeConfig cfg;
    cfg.latent_dim = latent_dim;
    cfg.beta = beta;
    cfg.encoder_arch =
        make_dense_arch(encoded_width, {64, 32}, 2 * latent_dim,
                        Activation::LeakyRelu, Activation::Linear);
    cfg.decoder_arch = make_dense_arch(latent_dim, {64, 128}, encoded_width,
                                       Activation::LeakyRelu, Activation::Sigmoid);
    return cfg;
  }

  void validate() const {
    if (latent_dim < 1) throw ConfigError("latent dimension must be >= 1");
    if (!(beta > 0.0)) throw ConfigError("beta must be > 0");
    encoder_arch.validate();
    decoder_arch.validate();
    if (encoder_arch.output_width() != 2 * latent_dim)
      throw ConfigError("encoder output width must equal 2 * latent_dim");
    if (decoder_arch.input_width() != latent_dim)
      throw ConfigError("decoder input width must equal latent_dim");
    if (encoder_arch.input_width() != decoder_arch.output_width())
      throw ConfigError("encoder input and decoder output widths must match");
    dp.validate();
  }

  std::size_t param_count() const {
    return encoder_arch.param_count() + decoder_arch.param_count();
  }
};

struct VaeLossResult {
  double total = 0.0;
  double reconstruction = 0.0;
  double kl = 0.0;
  std::vector<double> per_example_loss;
  Matrix per_example_grads;  // n x (encoder params + decoder params)
};

// beta-VAE loss on [0,1]-encoded batches: per-feature binary cross-entropy
// summed over features plus beta times the closed-form
// KL(N(mu, sigma^2) || N(0, I)), both averaged over the batch. Gradients use
// the reparameterization z = mu + sigma * eta with one eta sample per
// example, drawn from `rng`.
inline VaeLossResult vae_loss(const VaeConfig& config, const ParameterVector& params,
                              const Matrix& batch, RngStream& rng) {
  config.validate();
  if (params.size() != config.param_count())
    throw ShapeError("parameter vector does not match VAE configuration");
  for (double v : batch.data)
    if (!(v >= 0.0 && v <= 1.0))
      throw DataError("batch values must lie in [0, 1]");

  const std::size_t n = batch.rows;
  const std::size_t m = config.latent_dim;
  const std::size_t enc_count = config.encoder_arch.param_count();

  const ParameterVector enc_params(params.begin(),
                                   params.begin() + static_cast<long>(enc_count));
  const ParameterVector dec_params(params.begin() + static_cast<long>(enc_count),
                                   params.end());

  const ForwardTrace enc_trace = forward(config.encoder_arch, enc_params, batch);
  const Matrix& heads = enc_trace.output();  // n x 2m: mean | logvar

  // logvar is clamped before exponentiation; the gate zeroes its gradient
  // outside the window.
  constexpr double lv_limit = 15.0;
  Matrix mu(n, m), lv(n, m), gate(n, m), eta(n, m), z(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t d = 0; d < m; ++d) {
      mu(i, d) = heads(i, d);
      const double raw_lv = heads(i, m + d);
      lv(i, d) = std::clamp(raw_lv, -lv_limit, lv_limit);
      gate(i, d) = std::abs(raw_lv) < lv_limit ? 1.0 : 0.0;
      eta(i, d) = rng.normal();
      z(i, d) = mu(i, d) + std::exp(0.5 * lv(i, d)) * eta(i, d);
    }
  }

  const ForwardTrace dec_trace = forward(config.decoder_arch, dec_params, z);
  LossEval recon = bce_sum_loss(dec_trace.output(), batch);

  VaeLossResult result;
  result.per_example_grads = Matrix(n, params.size());
  result.per_example_loss.resize(n, 0.0);

  double recon_sum = 0.0;
  double kl_sum = 0.0;
  std::vector<double> dz(m, 0.0);
  std::vector<double> enc_upstream(2 * m, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    recon_sum += recon.per_example_loss[i];
    double kl_i = 0.0;
    for (std::size_t d = 0; d < m; ++d) {
      const double var = std::exp(lv(i, d));
      kl_i += 0.5 * (mu(i, d) * mu(i, d) + var - 1.0 - lv(i, d));
    }
    kl_sum += kl_i;
    result.per_example_loss[i] = recon.per_example_loss[i] + config.beta * kl_i;

    auto grad_row = result.per_example_grads.row(i);
    auto dec_grads = grad_row.subspan(enc_count);
    std::fill(dz.begin(), dz.end(), 0.0);
    backward_example(config.decoder_arch, dec_params, dec_trace, i,
                     recon.upstream.row(i), dec_grads, dz);

    for (std::size_t d = 0; d < m; ++d) {
      const double sigma_e = std::exp(0.5 * lv(i, d));
      enc_upstream[d] = dz[d] + config.beta * mu(i, d);
      enc_upstream[m + d] =
          gate(i, d) * (dz[d] * 0.5 * sigma_e * eta(i, d) +
                        config.beta * 0.5 * (std::exp(lv(i, d)) - 1.0));
    }
    backward_example(config.encoder_arch, enc_params, enc_trace, i, enc_upstream,
                     grad_row.subspan(0, enc_count), {});
  }

  result.reconstruction = recon_sum / static_cast<double>(n);
  result.kl = kl_sum / static_cast<double>(n);
  result.total = result.reconstruction + config.beta * result.kl;
  return result;
}

// dp_train adapter over the VAE loss.
class VaeModel {
 public:
  VaeModel(const VaeConfig& config, const Matrix& data)
      : config_(config), data_(data) {
    config_.validate();
    if (data_.cols != config_.encoder_arch.input_width())
      throw ShapeError("data width does not match encoder input");
  }

  std::size_t example_count() const { return data_.rows; }
  std::size_t param_count() const { return config_.param_count(); }

  ParameterVector initial_params(std::uint64_t seed) const {
    RngStream root(seed);
    ParameterVector params =
        init_params(config_.encoder_arch, root.derive("encoder-init").seed());
    const ParameterVector dec =
        init_params(config_.decoder_arch, root.derive("decoder-init").seed());
    params.insert(params.end(), dec.begin(), dec.end());
    return params;
  }

  Matrix per_example_gradients(const ParameterVector& params,
                               std::span<const std::size_t> idx, RngStream& rng,
                               double* mean_loss) const {
    const Matrix batch = data_.select_rows(idx);
    VaeLossResult res = vae_loss(config_, params, batch, rng);
    if (mean_loss) *mean_loss = res.total;
    return std::move(res.per_example_grads);
  }

 private:
  VaeConfig config_;
  const Matrix& data_;
};

// The unit exchanged by the protocol: the decoder network only, plus the
// latent spec, the schema needed to decode samples, and the privacy
// certificate. Never contains encoder parameters.
struct GeneratorArtifact {
  std::string generator_id;
  std::string client_id;
  std::string class_label;
  NetworkArch decoder_arch;
  std::vector<float> weights;  // decoder parameters, layout order
  LatentSpec latent;
  TabularSchema schema;
  PrivacyCertificate certificate;
  std::string checksum_sha256;
};

namespace detail {

inline nlohmann::json artifact_body_json(const GeneratorArtifact& a) {
  return nlohmann::json{
      {"format_version", kArtifactFormatVersion},
      {"generator_id", a.generator_id},
      {"client_id", a.client_id},
      {"class_label", a.class_label},
      {"decoder_arch", a.decoder_arch},
      {"latent", {{"dim", a.latent.dim}}},
      {"schema", a.schema},
      {"certificate", a.certificate},
      {"weights_b64", base64_encode(floats_to_le_bytes(a.weights))}};
}

}  // namespace detail

// Checksum over the canonical serialization: the artifact JSON with the
// checksum field removed, keys sorted, UTF-8, no insignificant whitespace.
inline std::string artifact_checksum(const GeneratorArtifact& a) {
  return detail::sha256_hex(detail::artifact_body_json(a).dump());
}

inline void verify_artifact(const GeneratorArtifact& a) {
  if (a.weights.size() != a.decoder_arch.param_count())
    throw IntegrityError("weight count inconsistent with declared architecture");
  if (a.latent.dim < 1) throw IntegrityError("latent dimension must be >= 1");
  if (a.decoder_arch.input_width() != a.latent.dim)
    throw IntegrityError("decoder input width does not match latent dimension");
  if (artifact_checksum(a) != a.checksum_sha256)
    throw IntegrityError("artifact checksum mismatch");
}

inline std::string serialize(const GeneratorArtifact& a) {
  nlohmann::json j = detail::artifact_body_json(a);
  j["checksum_sha256"] = a.checksum_sha256;
  return j.dump();
}

inline GeneratorArtifact deserialize(const std::string& bytes) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(bytes);
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError(std::string("malformed artifact JSON: ") + e.what());
  }
  GeneratorArtifact a;
  try {
    if (j.at("format_version").get<int>() != kArtifactFormatVersion)
      throw IntegrityError("unknown artifact format version");
    a.generator_id = j.at("generator_id").get<std::string>();
    a.client_id = j.at("client_id").get<std::string>();
    a.class_label = j.at("class_label").get<std::string>();
    a.decoder_arch = j.at("decoder_arch").get<NetworkArch>();
    a.latent.dim = j.at("latent").at("dim").get<std::size_t>();
    a.schema = j.at("schema").get<TabularSchema>();
    a.certificate = j.at("certificate").get<PrivacyCertificate>();
    a.weights = detail::le_bytes_to_floats(
        detail::base64_decode(j.at("weights_b64").get<std::string>()));
    a.checksum_sha256 = j.at("checksum_sha256").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError(std::string("artifact field error: ") + e.what());
  }
  a.decoder_arch.validate();
  verify_artifact(a);
  return a;
}

// Draws n latent vectors from N(0, I) and runs the decoder; outputs stay in
// [0,1] through the sigmoid head. Deterministic per seed.
inline Matrix sample(const GeneratorArtifact& artifact, std::size_t n,
                     std::uint64_t seed) {
  verify_artifact(artifact);
  RngStream rng = RngStream(seed).derive("latent");
  Matrix z(n, artifact.latent.dim);
  for (double& v : z.data) v = rng.normal();
  if (n == 0) return Matrix(0, artifact.decoder_arch.output_width());

  ParameterVector params(artifact.weights.begin(), artifact.weights.end());
  return forward(artifact.decoder_arch, params, z).output();
}

// Raw decoder outputs -> domain records via the artifact's schema.
inline Matrix decode_to_domain(const Matrix& raw, const TabularSchema& schema,
                               DecodeMode mode = DecodeMode::Argmax,
                               std::uint64_t seed = 0) {
  RngStream rng = RngStream(seed).derive("categorical-decode");
  return decode_table(schema, raw, mode, &rng);
}

// Trains encoder and decoder jointly with DP-Adam on the class dataset,
// strips the encoder, and emits a checksummed artifact whose certificate
// passes the server requirement. If config.dp.noise_multiplier is zero the
// noise is calibrated so the certificate meets requirement.max_epsilon.
inline GeneratorArtifact train_class_generator(
    const Matrix& class_data, const TabularSchema& schema, VaeConfig config,
    const ServerRequirements& requirement, const std::string& client_id,
    const std::string& class_label, std::uint64_t seed,
    std::optional<double> delta_policy = std::nullopt) {
  config.validate();
  requirement.validate();
  const std::size_t n = class_data.rows;
  if (n < config.min_class_examples)
    throw DataError("class dataset below the configured minimum of " +
                    std::to_string(config.min_class_examples) + " examples");

  const std::size_t batch = std::min(config.dp.batch_size, n);
  const std::size_t steps_per_epoch = (n + batch - 1) / batch;
  const double q = static_cast<double>(batch) / static_cast<double>(n);
  const double delta =
      delta_policy ? *delta_policy : delta_cap_for_class_size(n);

  RngStream root(seed);
  if (config.dp.noise_multiplier <= 0.0)
    config.dp.noise_multiplier = calibrate_sigma(
        requirement.max_epsilon, delta, q, config.dp.epochs * steps_per_epoch);
  config.dp.seed = root.derive("dp-train").seed();

  VaeModel model(config, class_data);
  ParameterVector params = model.initial_params(root.derive("init").seed());
  auto [trained, log] = dp_train(model, std::move(params), config.dp);

  const PrivacyCertificate cert =
      make_certificate(log.mechanism, n, delta_policy);
  if (cert.epsilon > requirement.max_epsilon)
    throw PolicyError("privacy gate failed: certificate epsilon " +
                      std::to_string(cert.epsilon) + " exceeds requirement " +
                      std::to_string(requirement.max_epsilon));

  GeneratorArtifact artifact;
  artifact.client_id = client_id;
  artifact.class_label = class_label;
  artifact.decoder_arch = config.decoder_arch;
  artifact.latent.dim = config.latent_dim;
  artifact.schema = schema;
  artifact.certificate = cert;

  const std::size_t enc_count = config.encoder_arch.param_count();
  artifact.weights.resize(config.decoder_arch.param_count());
  for (std::size_t i = 0; i < artifact.weights.size(); ++i)
    artifact.weights[i] = static_cast<float>(trained[enc_count + i]);

  const auto weight_bytes = detail::floats_to_le_bytes(artifact.weights);
  artifact.generator_id =
      "g" + detail::sha256_hex(client_id + "\n" + class_label + "\n" +
                               std::string(weight_bytes.begin(), weight_bytes.end()))
                .substr(0, 16);
  artifact.checksum_sha256 = artifact_checksum(artifact);
  return artifact;
}

}  // namespace sgde
