#pragma once

// Deselby distributions: D_{lambda,Delta}(k) = (k)_Delta lambda^{k-Delta} e^-lambda / k!,
// i.e. a Poisson(lambda) count shifted up by Delta. Delta = 0 is Poisson.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

namespace fockda {

struct DeselbyParams {
  double lambda = 0.0;
  std::uint32_t delta = 0;

  friend bool operator==(const DeselbyParams&, const DeselbyParams&) = default;
};

/// Product-of-Deselby belief over all agent states.
struct DeselbyState {
  std::vector<double> lambdas;
  std::vector<std::uint32_t> deltas;

  DeselbyState() = default;
  DeselbyState(std::vector<double> l, std::vector<std::uint32_t> d)
      : lambdas(std::move(l)), deltas(std::move(d)) {
    if (lambdas.size() != deltas.size()) throw std::invalid_argument("lambda/delta size mismatch");
  }

  static DeselbyState ground(std::vector<double> l) {
    std::vector<std::uint32_t> d(l.size(), 0);
    return DeselbyState(std::move(l), std::move(d));
  }

  std::size_t size() const { return lambdas.size(); }
  DeselbyParams at(std::size_t i) const { return {lambdas.at(i), deltas.at(i)}; }

  friend bool operator==(const DeselbyState&, const DeselbyState&) = default;
};

inline double log_pmf(const DeselbyParams& p, std::uint64_t k) {
  if (k < p.delta) return -std::numeric_limits<double>::infinity();
  const double shifted = static_cast<double>(k - p.delta);
  if (p.lambda == 0.0) {
    return shifted == 0.0 ? 0.0 : -std::numeric_limits<double>::infinity();
  }
  return shifted * std::log(p.lambda) - p.lambda - std::lgamma(shifted + 1.0);
}

inline double pmf(const DeselbyParams& p, std::uint64_t k) {
  if (k < p.delta) return 0.0;
  return std::exp(log_pmf(p, k));
}

inline double mean(const DeselbyParams& p) { return p.lambda + p.delta; }

inline DeselbyParams apply_creation(const DeselbyParams& p) { return {p.lambda, p.delta + 1}; }

/// Smallest K with the Poisson(lambda + Delta) mass beyond K below `tail`.
inline std::uint64_t tail_cap(const DeselbyParams& p, double tail = 1e-12) {
  const double mu = p.lambda + p.delta;
  if (mu == 0.0) return 0;
  double term = std::exp(-mu);
  double cdf = term;
  std::uint64_t k = 0;
  while (1.0 - cdf >= tail || k < p.delta) {
    ++k;
    term *= mu / static_cast<double>(k);
    cdf += term;
    if (term == 0.0 && k > mu) break;
  }
  return k;
}

class ImpossibleObservation : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Normalised posterior over k after observing m detections with probability
/// r each: P(k|m) ~ C(k,m) r^m (1-r)^{k-m} pmf(k), on k = 0..K.
inline std::vector<double> binomial_posterior_exact(const DeselbyParams& p, std::uint32_t m,
                                                    double r) {
  if (!(r >= 0.0 && r <= 1.0)) throw std::invalid_argument("detection probability outside [0,1]");
  if (r == 0.0 && m > 0) throw ImpossibleObservation("detections reported with r = 0");
  // The binomial factor can lift the prior tail; widen the cap accordingly.
  const std::uint64_t cap = std::max<std::uint64_t>(tail_cap(p), m) + m + 20;
  std::vector<double> post(cap + 1, 0.0);
  double total = 0.0;
  for (std::uint64_t k = m; k <= cap; ++k) {
    const double lp = log_pmf(p, k);
    if (!std::isfinite(lp)) continue;
    double log_like = std::lgamma(k + 1.0) - std::lgamma(m + 1.0) - std::lgamma(k - m + 1.0);
    if (m > 0) log_like += m * std::log(r);
    if (k > m) {
      if (r == 1.0) continue;
      log_like += static_cast<double>(k - m) * std::log1p(-r);
    }
    post[k] = std::exp(log_like + lp);
    total += post[k];
  }
  if (!(total > 0.0)) throw ImpossibleObservation("observation has zero likelihood under the prior");
  for (auto& v : post) v /= total;
  return post;
}

}  // namespace fockda
