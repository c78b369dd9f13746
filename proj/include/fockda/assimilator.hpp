#pragma once

// Data assimilation for one window: evolve the belief under H for time t,
// condition on binomial observations and project back onto a product of
// Deselby distributions by matching means.
//
// Expectations y = F(X e^{tH} psi0) are computed as
//
//   y = e^-t sum_{n=0}^N t^n/n! F(Z'_n),   Z'_0 = X,   Z'_{n+1} = Z'_n + [Z'_n, H]
//
// with creation operators stripped from every Z'_n, where F sums the
// coefficients of an expression applied to psi0.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <queue>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fockda/behavior_hamiltonian.hpp"
#include "fockda/deselby.hpp"
#include "fockda/detail/parallel.hpp"
#include "fockda/detail/stripped_series.hpp"
#include "fockda/fock_algebra.hpp"

namespace fockda {

struct Observation {
  StateIndex index;
  std::uint32_t count = 0;
  double detect = 1.0;

  friend bool operator==(const Observation&, const Observation&) = default;
};

/// Smallest Lg survival factor used for an observation. A perfect detector
/// (r = 1) would need survival 0, which the normal-ordered Lg rules cannot
/// represent, so it is approximated by this floor.
inline constexpr double kMinSurvival = 1e-9;

struct SeriesDiagnostics {
  int order = 0;
  std::vector<double> term_values;  // F(Z'_n) for n = 0..order
  double error_estimate = 0.0;
  std::size_t pruned = 0;
};

class ConvergenceError : public std::runtime_error {
 public:
  ConvergenceError(const std::string& what, SeriesDiagnostics diag)
      : std::runtime_error(what), diagnostics(std::move(diag)) {}
  SeriesDiagnostics diagnostics;
};

class ZeroLikelihoodError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NegativeRateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline OperatorPoly observation_operator(const Observation& obs) {
  if (!(obs.detect > 0.0 && obs.detect <= 1.0)) {
    throw std::invalid_argument("detection probability must lie in (0, 1]");
  }
  TermKey key;
  key.creations.set(obs.index, obs.count);
  key.annihilations.set(obs.index, obs.count);
  key.lg.set(obs.index, std::max(1.0 - obs.detect, kMinSurvival));
  return OperatorPoly::from_term({1.0, key});
}

/// Product of the observation operators. Operators at distinct indices
/// commute, so the order of `omega` is immaterial.
inline OperatorPoly observation_product(std::span<const Observation> omega) {
  OperatorPoly p = OperatorPoly::identity();
  for (const auto& o : omega) p = multiply(p, observation_operator(o));
  return p;
}

/// Estimated error of truncating the series after order N:
/// e^-t (e^x - sum_{n<=N} x^n/n!) with x = (t/N) sum_{n=1}^N |F(Z'_n)|^{1/n}.
/// `term_values` holds F(Z'_1) .. F(Z'_N).
inline double truncation_error(std::span<const double> term_values, double t, int n_order) {
  if (n_order < 1) throw std::invalid_argument("truncation estimate needs N >= 1");
  if (term_values.size() < static_cast<std::size_t>(n_order)) {
    throw std::invalid_argument("fewer term values than the truncation order");
  }
  double x = 0.0;
  for (int n = 1; n <= n_order; ++n) {
    x += std::pow(std::abs(term_values[n - 1]), 1.0 / n);
  }
  x *= t / n_order;
  if (x == 0.0) return 0.0;
  // Sum the tail directly instead of subtracting from e^x.
  double term = 1.0;
  for (int n = 1; n <= n_order; ++n) term *= x / n;
  double tail = 0.0;
  for (int n = n_order + 1; n < n_order + 2000; ++n) {
    term *= x / n;
    tail += term;
    if (term <= tail * 1e-17) break;
  }
  return std::exp(-t) * tail;
}

// ---------------------------------------------------------------------------
// Series evaluation

/// F(Z) by the general route: multiply in psi0's creations, normal order,
/// strip creations, evaluate against the ground rates.
inline double functional_on_state(const OperatorPoly& z, const DeselbyState& psi0) {
  TermKey creations;
  for (std::size_t i = 0; i < psi0.size(); ++i) {
    if (psi0.deltas[i] > 0) creations.creations.set(StateIndex{static_cast<std::uint32_t>(i)}, psi0.deltas[i]);
  }
  const OperatorPoly with_state = multiply(z, OperatorPoly::from_term({1.0, creations}));
  return eval_functional(strip_creations(with_state), psi0.lambdas);
}

namespace detail {

/// Z' recurrence for an arbitrary creation-free polynomial: terms are split by
/// their Lg maps and each group runs its own stripped series.
class SeriesStepper {
 public:
  SeriesStepper(const OperatorPoly& z0, const Hamiltonian& h, const DeselbyState& psi0,
                double term_drop, std::size_t max_terms = 0) {
    std::map<LgMap, StrippedTerms, std::less<>> groups;
    for (const auto& term : strip_creations(z0).sorted_terms()) {
      groups[term.key.lg][pack(term.key.annihilations)] += term.coeff;
    }
    for (auto& [lg, terms] : groups) parts_.emplace_back(h, psi0, lg, std::move(terms), term_drop, max_terms);
  }

  double value() const {
    double v = 0.0;
    for (const auto& p : parts_) v += p.value();
    return v;
  }

  /// F(Z'_{n+1}) for the current order n, without advancing.
  double peek_next() {
    double v = 0.0;
    for (auto& p : parts_) v += p.peek_next();
    return v;
  }

  void step() {
    for (auto& p : parts_) p.step();
    ++order_;
  }

  int order() const { return order_; }

  std::size_t size() const {
    std::size_t n = 0;
    for (const auto& p : parts_) n += p.size();
    return n;
  }

 private:
  std::vector<StrippedSeries> parts_;
  int order_ = 0;
};

// Values F(Z'_0), F(Z'_1), ... computed on demand. The highest order asked
// for is only peeked at, which skips building the largest polynomial.
class LazySeries {
 public:
  LazySeries(const OperatorPoly& z0, const Hamiltonian& h, const DeselbyState& psi0,
             double term_drop, std::size_t max_terms = 0)
      : stepper_(z0, h, psi0, term_drop, max_terms) {
    values_.push_back(stepper_.value());
  }

  double value(int n) {
    while (static_cast<int>(values_.size()) <= n) {
      while (stepper_.order() + 1 < static_cast<int>(values_.size())) stepper_.step();
      values_.push_back(stepper_.peek_next());
    }
    return values_[n];
  }

 private:
  SeriesStepper stepper_;
  std::vector<double> values_;
};

/// Running e^-t sum t^n/n! F_n with the truncation estimate.
class SeriesSum {
 public:
  explicit SeriesSum(double t) : t_(t), scale_(std::exp(-t)) {}

  void push(double f) {
    const int n = static_cast<int>(values_.size());
    if (n > 0) weight_ *= t_ / n;
    values_.push_back(f);
    sum_ += scale_ * weight_ * f;
  }

  int order() const { return static_cast<int>(values_.size()) - 1; }
  double sum() const { return sum_; }
  const std::vector<double>& values() const { return values_; }

  double error() const {
    if (t_ == 0.0 || order() < 1) return 0.0;
    return truncation_error(std::span<const double>(values_).subspan(1), t_, order());
  }

  bool converged(double rel_tol) const {
    if (t_ == 0.0) return true;
    if (order() < 1) return false;
    return error() <= rel_tol * std::abs(sum_);
  }

 private:
  double t_;
  double scale_;
  double weight_ = 1.0;
  double sum_ = 0.0;
  std::vector<double> values_;
};

}  // namespace detail

struct SeriesResult {
  double value = 0.0;
  SeriesDiagnostics diagnostics;
};

inline SeriesResult z_series_value(const OperatorPoly& z0, const Hamiltonian& h,
                                   const DeselbyState& psi0, double t, double rel_tol,
                                   int max_order, double term_drop = kDropEpsilon,
                                   std::size_t max_terms = 0) {
  if (!(t >= 0.0)) throw std::invalid_argument("negative window length");
  detail::LazySeries series(z0, h, psi0, term_drop, max_terms);
  detail::SeriesSum sum(t);
  sum.push(series.value(0));
  while (!sum.converged(rel_tol)) {
    if (sum.order() >= max_order) {
      SeriesDiagnostics diag{sum.order(), sum.values(), sum.error(), 0};
      throw ConvergenceError("series did not reach tolerance by max order", std::move(diag));
    }
    sum.push(series.value(sum.order() + 1));
  }
  return {sum.sum(), SeriesDiagnostics{sum.order(), sum.values(), sum.error(), 0}};
}

// ---------------------------------------------------------------------------
// Observation pruning

/// Hop distance from `from` in the state-coupling graph of H, up to `limit`.
inline std::vector<int> coupling_distances(StateIndex from, const Hamiltonian& h, int limit) {
  std::vector<int> dist(h.num_states(), -1);
  std::queue<std::uint32_t> frontier;
  dist.at(from.id) = 0;
  frontier.push(from.id);
  while (!frontier.empty()) {
    const auto u = frontier.front();
    frontier.pop();
    if (dist[u] == limit) continue;
    for (auto v : h.neighbours(StateIndex{u})) {
      if (dist[v] < 0) {
        dist[v] = dist[u] + 1;
        frontier.push(v);
      }
    }
  }
  return dist;
}

/// Observations whose N-hop light cone meets the N-hop cone of `target`.
/// Cones of radius N intersect exactly when the hop distance is at most 2N.
inline std::vector<Observation> prune_observations(StateIndex target,
                                                   std::span<const Observation> omega,
                                                   const Hamiltonian& h, int n_hops) {
  if (n_hops < 0) throw std::invalid_argument("negative light-cone radius");
  const auto dist = coupling_distances(target, h, 2 * n_hops);
  std::vector<Observation> kept;
  for (const auto& o : omega) {
    if (dist.at(o.index.id) >= 0) kept.push_back(o);
  }
  return kept;
}

// ---------------------------------------------------------------------------
// Window assimilation

struct AssimilationOptions {
  double rel_tol = 0.002;
  int max_order = 12;
  /// Light-cone radius for observation pruning; unset keeps every observation.
  std::optional<int> prune_hops = 4;
  double term_drop = kDropEpsilon;
  /// Per-polynomial term budget (0 = unlimited); exceeding it throws TermLimitError.
  std::size_t max_terms = 8'000'000;
  unsigned threads = 1;
};

struct TargetDiagnostics {
  int order = 0;
  double error_estimate = 0.0;  // numerator series
  std::size_t pruned = 0;
};

struct WindowDiagnostics {
  std::vector<TargetDiagnostics> targets;
  double wall_seconds = 0.0;
  std::size_t clamped = 0;
};

struct AssimilationResult {
  DeselbyState posterior;
  WindowDiagnostics diagnostics;
};

namespace detail {

// Denominator series shared by every target with the same pruned
// observation set. Orders are computed on demand; values never depend on
// which target asked first.
class SharedSeries {
 public:
  SharedSeries(const OperatorPoly& z0, const Hamiltonian& h, const DeselbyState& psi0,
               double term_drop, std::size_t max_terms)
      : series_(z0, h, psi0, term_drop, max_terms) {}

  double value(int n) {
    std::lock_guard lock(mutex_);
    return series_.value(n);
  }

 private:
  std::mutex mutex_;
  LazySeries series_;
};

inline void validate_window(const DeselbyState& psi0, std::span<const Observation> omega,
                            const Hamiltonian& h, double t) {
  if (psi0.size() != h.num_states()) throw std::invalid_argument("belief state does not match H");
  if (!(t >= 0.0)) throw std::invalid_argument("negative window length");
  std::vector<char> seen(h.num_states(), 0);
  for (const auto& o : omega) {
    if (o.index.id >= h.num_states()) throw std::invalid_argument("observation outside state space");
    if (!(o.detect > 0.0 && o.detect <= 1.0)) {
      throw std::invalid_argument("detection probability must lie in (0, 1]");
    }
    if (seen[o.index.id]) {
      throw std::invalid_argument("state observed more than once in one window");
    }
    seen[o.index.id] = 1;
  }
  for (double l : psi0.lambdas) {
    if (!(l >= 0.0) || !std::isfinite(l)) throw std::invalid_argument("invalid ground rate");
  }
}

}  // namespace detail

/// Posterior Deselby state after evolving psi0 for time t and conditioning on
/// omega. Delta'_i is the observed count (0 if unobserved); lambda'_i is the
/// posterior mean minus Delta'_i. Numerator and denominator of each mean run
/// to a common order so that shared terms cancel exactly.
inline AssimilationResult assimilate_window(const DeselbyState& psi0,
                                            std::span<const Observation> omega,
                                            const Hamiltonian& h, double t,
                                            const AssimilationOptions& opts = {}) {
  const auto started = std::chrono::steady_clock::now();
  detail::validate_window(psi0, omega, h, t);
  const std::uint32_t n = h.num_states();

  std::vector<std::uint32_t> new_delta(n, 0);
  for (const auto& o : omega) new_delta[o.index.id] = o.count;

  // Pruned observation set per target, as positions into omega.
  std::vector<std::vector<std::uint32_t>> kept(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    if (!opts.prune_hops) {
      kept[i].resize(omega.size());
      for (std::uint32_t k = 0; k < omega.size(); ++k) kept[i][k] = k;
      continue;
    }
    const auto dist = coupling_distances(StateIndex{i}, h, 2 * *opts.prune_hops);
    for (std::uint32_t k = 0; k < omega.size(); ++k) {
      if (dist[omega[k].index.id] >= 0) kept[i].push_back(k);
    }
  }

  std::map<std::vector<std::uint32_t>, std::unique_ptr<detail::SharedSeries>> denominators;
  std::map<std::vector<std::uint32_t>, OperatorPoly> products;
  for (std::uint32_t i = 0; i < n; ++i) {
    auto& slot = denominators[kept[i]];
    if (slot) continue;
    std::vector<Observation> subset;
    for (auto k : kept[i]) subset.push_back(omega[k]);
    OperatorPoly prod = observation_product(subset);
    slot = std::make_unique<detail::SharedSeries>(prod, h, psi0, opts.term_drop, opts.max_terms);
    products.emplace(kept[i], std::move(prod));
  }

  AssimilationResult result;
  result.posterior = DeselbyState(std::vector<double>(n, 0.0), new_delta);
  result.diagnostics.targets.resize(n);
  std::vector<char> clamped(n, 0);

  detail::parallel_for(n, opts.threads, [&](std::size_t i) {
    const StateIndex target{static_cast<std::uint32_t>(i)};
    auto& den_series = *denominators.at(kept[i]);
    const OperatorPoly z0 = multiply(annihilate(target), products.at(kept[i]));
    detail::LazySeries num_series(z0, h, psi0, opts.term_drop, opts.max_terms);

    detail::SeriesSum num(t);
    detail::SeriesSum den(t);
    num.push(num_series.value(0));
    den.push(den_series.value(0));
    while (!(num.converged(opts.rel_tol) && den.converged(opts.rel_tol))) {
      if (num.order() >= opts.max_order) {
        SeriesDiagnostics diag{num.order(), num.values(), num.error(),
                               omega.size() - kept[i].size()};
        throw ConvergenceError("assimilation series for state " + std::to_string(i) +
                                   " did not converge",
                               std::move(diag));
      }
      num.push(num_series.value(num.order() + 1));
      den.push(den_series.value(num.order()));
    }

    auto& diag = result.diagnostics.targets[i];
    diag.order = num.order();
    diag.error_estimate = num.error();
    diag.pruned = omega.size() - kept[i].size();

    if (!(den.sum() > 0.0)) {
      throw ZeroLikelihoodError("observations have zero likelihood (state " + std::to_string(i) +
                                ")");
    }
    double lambda = num.sum() / den.sum() - static_cast<double>(new_delta[i]);
    if (lambda < 0.0) {
      if (lambda > -1e-9) {
        lambda = 0.0;
        clamped[i] = 1;
      } else {
        throw NegativeRateError("posterior rate " + std::to_string(lambda) + " for state " +
                                std::to_string(i));
      }
    }
    result.posterior.lambdas[i] = lambda;
  });

  result.diagnostics.clamped = static_cast<std::size_t>(std::count(clamped.begin(), clamped.end(), 1));
  result.diagnostics.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return result;
}

}  // namespace fockda
