#pragma once

// Ground-truth forward simulation: exact event-driven stochastic simulation of
// a BehaviorSpec, plus the noisy census used to generate observations.

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "fockda/assimilator.hpp"
#include "fockda/behavior_hamiltonian.hpp"

namespace fockda {

/// Named random streams derived from one run seed. Each stream is an
/// independent mt19937_64 seeded from (seed, stream id) through seed_seq.
enum class Stream : std::uint32_t { kInitial = 1, kTrajectory = 2, kObservation = 3 };

class Rng {
 public:
  Rng(std::uint64_t seed, Stream stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), 0x5eedU};
    engine_.seed(seq);
  }

  std::mt19937_64& engine() { return engine_; }

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }

 private:
  std::mt19937_64 engine_;
};

struct WorldState {
  std::vector<std::uint64_t> counts;
  double time = 0.0;

  friend bool operator==(const WorldState&, const WorldState&) = default;
};

inline constexpr std::uint64_t kMaxCount = 1'000'000'000;

inline WorldState sample_initial(std::span<const double> lambdas, Rng& rng) {
  WorldState w;
  w.counts.resize(lambdas.size(), 0);
  for (std::size_t i = 0; i < lambdas.size(); ++i) {
    if (!(lambdas[i] >= 0.0)) throw std::invalid_argument("negative Poisson rate");
    if (lambdas[i] > 0.0) {
      w.counts[i] = std::poisson_distribution<std::uint64_t>(lambdas[i])(rng.engine());
    }
  }
  return w;
}

inline WorldState sample_initial(std::span<const double> lambdas, std::uint64_t seed) {
  Rng rng(seed, Stream::kInitial);
  return sample_initial(lambdas, rng);
}

/// Direct-method SSA over all rules of a spec. Propensities: rho * n_i for
/// actions, rho * n_i * n_j for interactions with i != j and rho * n_i (n_i - 1)
/// for i == j.
class EventSimulator {
 public:
  explicit EventSimulator(const BehaviorSpec& spec) : spec_(&spec) {
    spec.validate();
    depends_.resize(spec.num_states);
    for (std::size_t r = 0; r < spec.actions.size(); ++r) {
      depends_[spec.actions[r].subject.id].push_back(r);
    }
    const std::size_t na = spec.actions.size();
    for (std::size_t r = 0; r < spec.interactions.size(); ++r) {
      const auto& rule = spec.interactions[r];
      depends_[rule.subject.id].push_back(na + r);
      if (rule.partner != rule.subject) depends_[rule.partner.id].push_back(na + r);
    }
    propensity_.assign(spec.rule_count(), 0.0);
  }

  double propensity(std::size_t rule, const std::vector<std::uint64_t>& n) const {
    const std::size_t na = spec_->actions.size();
    if (rule < na) {
      const auto& a = spec_->actions[rule];
      return a.rate * static_cast<double>(n[a.subject.id]);
    }
    const auto& r = spec_->interactions[rule - na];
    const double ni = static_cast<double>(n[r.subject.id]);
    if (r.subject == r.partner) return r.rate * ni * (ni - 1.0);
    return r.rate * ni * static_cast<double>(n[r.partner.id]);
  }

  double total_propensity(const std::vector<std::uint64_t>& n) const {
    double total = 0.0;
    for (std::size_t r = 0; r < propensity_.size(); ++r) total += propensity(r, n);
    return total;
  }

  /// Advances to t_end, firing events in order. Stops early if `max_events`
  /// (when non-zero) have fired; returns the number of events.
  std::size_t advance(WorldState& world, double t_end, Rng& rng, std::size_t max_events = 0) {
    if (world.counts.size() != spec_->num_states) throw std::invalid_argument("world size mismatch");
    if (world.time > t_end) throw std::invalid_argument("cannot advance backwards in time");
    double total = 0.0;
    for (std::size_t r = 0; r < propensity_.size(); ++r) {
      propensity_[r] = propensity(r, world.counts);
      total += propensity_[r];
    }
    std::size_t events = 0;
    while (true) {
      if (total <= 0.0) break;
      const double wait = std::exponential_distribution<double>(total)(rng.engine());
      if (world.time + wait > t_end) break;
      world.time += wait;

      double pick = rng.uniform() * total;
      std::size_t rule = 0;
      for (; rule + 1 < propensity_.size(); ++rule) {
        if (pick < propensity_[rule]) break;
        pick -= propensity_[rule];
      }
      while (propensity_[rule] == 0.0 && rule > 0) --rule;
      fire(rule, world.counts);
      ++events;
      total = 0.0;
      for (double p : propensity_) total += p;
      if (max_events != 0 && events >= max_events) return events;
    }
    world.time = t_end;
    return events;
  }

 private:
  void fire(std::size_t rule, std::vector<std::uint64_t>& n) {
    touched_.clear();
    auto remove = [&](StateIndex i) {
      if (n[i.id] == 0) throw std::logic_error("event fired with no reactant");
      --n[i.id];
      touched_.push_back(i.id);
    };
    auto add = [&](StateIndex i) {
      if (++n[i.id] > kMaxCount) throw std::overflow_error("agent count exceeds simulation bound");
      touched_.push_back(i.id);
    };
    const std::size_t na = spec_->actions.size();
    if (rule < na) {
      const auto& a = spec_->actions[rule];
      remove(a.subject);
      for (auto p : a.products) add(p);
    } else {
      const auto& r = spec_->interactions[rule - na];
      remove(r.subject);
      remove(r.partner);
      for (auto p : r.products) add(p);
    }
    for (auto i : touched_) {
      for (auto dep : depends_[i]) {
        propensity_[dep] = propensity(dep, n);
      }
    }
  }

  const BehaviorSpec* spec_;
  std::vector<std::vector<std::size_t>> depends_;
  std::vector<double> propensity_;
  std::vector<std::uint32_t> touched_;
};

inline WorldState advance(WorldState world, const BehaviorSpec& spec, double t_end, Rng& rng) {
  EventSimulator sim(spec);
  sim.advance(world, t_end, rng);
  return world;
}

/// Noisy census: each state is observed with probability p_observe, and an
/// observed state reports Binomial(n, p_detect). Zero counts are reported.
inline std::vector<Observation> observe(const WorldState& world, double p_observe, double p_detect,
                                        Rng& rng) {
  if (!(p_observe >= 0.0 && p_observe <= 1.0) || !(p_detect >= 0.0 && p_detect <= 1.0)) {
    throw std::invalid_argument("observation probabilities must lie in [0, 1]");
  }
  std::vector<Observation> out;
  for (std::size_t i = 0; i < world.counts.size(); ++i) {
    if (!(rng.uniform() < p_observe)) continue;
    const auto m = std::binomial_distribution<std::uint64_t>(world.counts[i], p_detect)(rng.engine());
    out.push_back({StateIndex{static_cast<std::uint32_t>(i)}, static_cast<std::uint32_t>(m), p_detect});
  }
  return out;
}

}  // namespace fockda
