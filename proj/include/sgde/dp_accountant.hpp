#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "sgde/errors.hpp"

// Renyi-DP accounting for the subsampled Gaussian mechanism: per-step RDP at
// integer orders, additive composition over steps, conversion to
// (epsilon, delta), noise calibration, and certificate records.

namespace sgde {

// Parameters of one subsampled-Gaussian training mechanism. noise_multiplier
// is the noise stddev in units of the clipping norm.
struct MechanismParams {
  double noise_multiplier = 0.0;  // sigma > 0
  double sampling_rate = 0.0;     // q in [0, 1]
  std::size_t steps = 0;          // T
  double clip_norm = 1.0;         // C > 0

  void validate() const {
    if (!(noise_multiplier > 0.0)) throw DomainError("noise multiplier must be > 0");
    if (sampling_rate < 0.0 || sampling_rate > 1.0)
      throw DomainError("sampling rate must lie in [0, 1]");
    if (!(clip_norm > 0.0)) throw DomainError("clip norm must be > 0");
  }
};

// RDP epsilon per integer order, orders strictly increasing.
struct RdpCurve {
  std::vector<std::pair<int, double>> points;

  void validate() const {
    if (points.empty()) throw DomainError("RDP curve must be non-empty");
    int prev = 1;
    for (const auto& [order, value] : points) {
      if (order < 2) throw DomainError("RDP orders start at 2");
      if (order <= prev) throw DomainError("RDP orders must be strictly increasing");
      if (value < 0.0) throw DomainError("RDP epsilon must be non-negative");
      prev = order;
    }
  }
};

inline constexpr int kDefaultMinOrder = 2;
inline constexpr int kDefaultMaxOrder = 64;

namespace detail {

inline double log_binomial(int n, int k) {
  return std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
}

// ln(e^x - 1) for x > 0 without overflow or cancellation.
inline double log_expm1(double x) {
  if (x > 36.0) return x + std::log1p(-std::exp(-x));
  return std::log(std::expm1(x));
}

inline double log_sum_exp(const std::vector<double>& logs) {
  if (logs.empty()) return -std::numeric_limits<double>::infinity();
  const double m = *std::max_element(logs.begin(), logs.end());
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double v : logs) s += std::exp(v - m);
  return m + std::log(s);
}

}  // namespace detail

// Per-step RDP of the subsampled Gaussian mechanism at integer order alpha.
//
// For q = 1 this is exactly alpha / (2 sigma^2). For q < 1 it is
//   (1/(alpha-1)) * ln( sum_{k=0}^{alpha} C(alpha,k) (1-q)^{alpha-k} q^k
//                       * exp(k(k-1)/(2 sigma^2)) ).
// The binomial pmf sums to one and the k = 0, 1 terms carry a unit factor,
// so the sum equals 1 + sum_{k>=2} C(alpha,k)(1-q)^{alpha-k} q^k
// (exp(k(k-1)/(2 sigma^2)) - 1); that tail is evaluated in log space, which
// stays accurate both when the total is 1 + 1e-12 and when single terms are
// around exp(8000).
inline double rdp_subsampled_gaussian(double sigma, double q, int alpha) {
  if (!(sigma > 0.0)) throw DomainError("sigma must be > 0");
  if (q < 0.0 || q > 1.0) throw DomainError("q must lie in [0, 1]");
  if (alpha < 2) throw DomainError("alpha must be an integer >= 2");

  if (q == 0.0) return 0.0;
  const double s2 = 2.0 * sigma * sigma;
  if (q == 1.0) return static_cast<double>(alpha) / s2;

  const double log_q = std::log(q);
  const double log_1mq = std::log1p(-q);
  std::vector<double> logs;
  logs.reserve(static_cast<std::size_t>(alpha - 1));
  for (int k = 2; k <= alpha; ++k) {
    const double exponent = static_cast<double>(k) * (k - 1) / s2;
    logs.push_back(detail::log_binomial(alpha, k) + (alpha - k) * log_1mq +
                   k * log_q + detail::log_expm1(exponent));
  }
  const double tail = detail::log_sum_exp(logs);
  // ln(1 + e^tail), stable on both sides of zero.
  const double log_sum =
      tail > 0.0 ? tail + std::log1p(std::exp(-tail)) : std::log1p(std::exp(tail));
  return log_sum / static_cast<double>(alpha - 1);
}

// Per-step curve over integer orders [min_order, max_order].
inline RdpCurve rdp_curve(double sigma, double q, int min_order = kDefaultMinOrder,
                          int max_order = kDefaultMaxOrder) {
  if (min_order < 2 || max_order < min_order)
    throw DomainError("invalid order range");
  RdpCurve curve;
  curve.points.reserve(static_cast<std::size_t>(max_order - min_order + 1));
  for (int a = min_order; a <= max_order; ++a)
    curve.points.emplace_back(a, rdp_subsampled_gaussian(sigma, q, a));
  return curve;
}

// RDP composes additively: T steps multiply every order's epsilon by T.
inline RdpCurve compose(const RdpCurve& per_step, std::size_t steps) {
  per_step.validate();
  RdpCurve out = per_step;
  for (auto& [order, value] : out.points) value *= static_cast<double>(steps);
  return out;
}

struct EpsilonResult {
  double epsilon = 0.0;
  int optimal_order = 0;
};

// Standard RDP -> (epsilon, delta) conversion:
// epsilon = min_alpha [ rdp(alpha) + ln(1/delta)/(alpha-1) ],
// ties broken toward the smallest order.
inline EpsilonResult to_epsilon_delta(const RdpCurve& curve, double delta) {
  curve.validate();
  if (!(delta > 0.0) || !(delta < 1.0))
    throw DomainError("delta must lie in (0, 1)");
  const double log_inv_delta = std::log(1.0 / delta);
  EpsilonResult best{std::numeric_limits<double>::infinity(), 0};
  for (const auto& [order, value] : curve.points) {
    const double eps = value + log_inv_delta / static_cast<double>(order - 1);
    if (eps < best.epsilon) best = {eps, order};
  }
  return best;
}

// Full pipeline for a mechanism: per-step curve, composition, conversion.
inline EpsilonResult recompute_epsilon(const MechanismParams& mech, double delta,
                                       int min_order = kDefaultMinOrder,
                                       int max_order = kDefaultMaxOrder) {
  mech.validate();
  return to_epsilon_delta(
      compose(rdp_curve(mech.noise_multiplier, mech.sampling_rate, min_order,
                        max_order),
              mech.steps),
      delta);
}

// Smallest sigma on a bisection grid (relative tolerance 1e-3) such that the
// composed mechanism satisfies epsilon <= target. epsilon(sigma) is
// non-increasing in sigma, so bisection is sound.
inline double calibrate_sigma(double target_epsilon, double delta, double q,
                              std::size_t steps) {
  if (!(target_epsilon > 0.0)) throw DomainError("target epsilon must be > 0");
  if (q < 0.0 || q > 1.0) throw DomainError("q must lie in [0, 1]");

  const auto epsilon_at = [&](double sigma) {
    return to_epsilon_delta(compose(rdp_curve(sigma, q), steps), delta).epsilon;
  };

  double lo = 0.1;
  double hi = 1000.0;
  if (epsilon_at(lo) <= target_epsilon) return lo;
  if (epsilon_at(hi) > target_epsilon)
    throw CalibrationError("privacy target unreachable within sigma in [0.1, 1000]");
  while (hi / lo > 1.0 + 1e-3) {
    const double mid = std::sqrt(lo * hi);
    if (epsilon_at(mid) <= target_epsilon)
      hi = mid;
    else
      lo = mid;
  }
  return hi;
}

// The provable privacy claim attached to every shared artifact. `epsilon`
// always equals the conversion of `rdp` at `delta`; anyone holding the
// mechanism parameters can recompute and verify it.
struct PrivacyCertificate {
  MechanismParams mechanism;
  RdpCurve rdp;
  double delta = 0.0;
  double epsilon = 0.0;
  int optimal_order = 0;
  std::size_t class_size = 0;
};

inline double delta_cap_for_class_size(std::size_t class_size) {
  return std::min(1e-5, 1.0 / (10.0 * static_cast<double>(class_size)));
}

inline PrivacyCertificate make_certificate(
    const MechanismParams& mechanism, std::size_t class_size,
    std::optional<double> delta_policy = std::nullopt) {
  mechanism.validate();
  if (class_size < 1) throw DomainError("class size must be >= 1");

  const double cap = delta_cap_for_class_size(class_size);
  double delta = cap;
  if (delta_policy) {
    if (*delta_policy > cap)
      throw PolicyError("delta policy looser than the 1/(10*class_size) cap");
    if (!(*delta_policy > 0.0)) throw DomainError("delta policy must be > 0");
    delta = *delta_policy;
  }

  PrivacyCertificate cert;
  cert.mechanism = mechanism;
  cert.rdp = compose(rdp_curve(mechanism.noise_multiplier, mechanism.sampling_rate),
                     mechanism.steps);
  cert.delta = delta;
  const EpsilonResult res = to_epsilon_delta(cert.rdp, delta);
  cert.epsilon = res.epsilon;
  cert.optimal_order = res.optimal_order;
  cert.class_size = class_size;
  return cert;
}

// Recomputes epsilon from the stored mechanism and delta; a certificate is
// consistent when the stored value matches within 1e-9.
inline bool certificate_consistent(const PrivacyCertificate& cert,
                                   double tolerance = 1e-9) {
  const EpsilonResult res = recompute_epsilon(cert.mechanism, cert.delta);
  return std::abs(res.epsilon - cert.epsilon) <= tolerance;
}

// ---- Wire format -----------------------------------------------------------

inline void to_json(nlohmann::json& j, const PrivacyCertificate& c) {
  nlohmann::json rdp = nlohmann::json::array();
  for (const auto& [order, value] : c.rdp.points)
    rdp.push_back(nlohmann::json::array({order, value}));
  j = nlohmann::json{{"noise_multiplier", c.mechanism.noise_multiplier},
                     {"sampling_rate", c.mechanism.sampling_rate},
                     {"steps", c.mechanism.steps},
                     {"clip_norm", c.mechanism.clip_norm},
                     {"delta", c.delta},
                     {"epsilon", c.epsilon},
                     {"optimal_order", c.optimal_order},
                     {"rdp", rdp},
                     {"class_size", c.class_size}};
}

inline void from_json(const nlohmann::json& j, PrivacyCertificate& c) {
  c.mechanism.noise_multiplier = j.at("noise_multiplier").get<double>();
  c.mechanism.sampling_rate = j.at("sampling_rate").get<double>();
  c.mechanism.steps = j.at("steps").get<std::size_t>();
  c.mechanism.clip_norm = j.at("clip_norm").get<double>();
  c.delta = j.at("delta").get<double>();
  c.epsilon = j.at("epsilon").get<double>();
  c.optimal_order = j.at("optimal_order").get<int>();
  c.class_size = j.at("class_size").get<std::size_t>();
  c.rdp.points.clear();
  for (const auto& p : j.at("rdp"))
    c.rdp.points.emplace_back(p.at(0).get<int>(), p.at(1).get<double>());
  c.rdp.validate();
}

}  // namespace sgde
