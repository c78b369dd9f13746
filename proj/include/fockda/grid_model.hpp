#pragma once

// Spatial predator-prey behaviours on a W x H grid.

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "fockda/behavior_hamiltonian.hpp"

namespace fockda {

enum class Species : std::uint32_t { kPrey = 0, kPredator = 1 };
enum class Boundary { kTorus, kWalled };
/// kTotal splits a directional rate evenly over the four neighbours.
enum class RateSplit { kTotal, kPerDirection };
/// Where the predator's offspring appears after eating prey at c'.
enum class PredationOutcome { kOffspringOnPreySquare, kOffspringOnPredatorSquare };

struct PredatorPreyRates {
  double prey_death = 0.1;
  double prey_reproduction = 0.15;
  double prey_move = 1.0;
  double predator_death = 0.1;
  double predation = 0.5;  // per (predator, adjacent prey) pair
  double predator_move = 1.0;
};

struct GridGeometry {
  std::uint32_t width = 16;
  std::uint32_t height = 16;
  Boundary boundary = Boundary::kTorus;

  std::uint32_t num_cells() const { return width * height; }
  std::uint32_t num_states() const { return num_cells() * 2; }

  StateIndex index(std::uint32_t x, std::uint32_t y, Species s) const {
    return StateIndex{((y * width) + x) * 2 + static_cast<std::uint32_t>(s)};
  }

  struct Cell {
    std::uint32_t x, y;
    Species species;
  };

  Cell cell(StateIndex i) const {
    const std::uint32_t c = i.id / 2;
    return {c % width, c / width, static_cast<Species>(i.id % 2)};
  }

  /// Up, down, left, right neighbours; off-grid ones are empty when walled.
  std::array<std::optional<std::array<std::uint32_t, 2>>, 4> neighbours(std::uint32_t x,
                                                                        std::uint32_t y) const {
    constexpr int dx[4] = {0, 0, -1, 1};
    constexpr int dy[4] = {-1, 1, 0, 0};
    std::array<std::optional<std::array<std::uint32_t, 2>>, 4> out;
    for (int k = 0; k < 4; ++k) {
      long nx = static_cast<long>(x) + dx[k];
      long ny = static_cast<long>(y) + dy[k];
      if (boundary == Boundary::kTorus) {
        nx = (nx + width) % width;
        ny = (ny + height) % height;
      } else if (nx < 0 || ny < 0 || nx >= static_cast<long>(width) ||
                 ny >= static_cast<long>(height)) {
        continue;
      }
      out[k] = std::array<std::uint32_t, 2>{static_cast<std::uint32_t>(nx),
                                            static_cast<std::uint32_t>(ny)};
    }
    return out;
  }
};

struct PredatorPreyModel {
  GridGeometry grid;
  PredatorPreyRates rates;
  RateSplit split = RateSplit::kTotal;
  PredationOutcome outcome = PredationOutcome::kOffspringOnPreySquare;
};

/// Emits, per cell: prey death, 4 prey reproductions, 4 prey moves, predator
/// death, 4 predator moves and 4 predations (fewer at walls).
inline BehaviorSpec build_predator_prey_spec(const PredatorPreyModel& model) {
  const auto& g = model.grid;
  if (g.width == 0 || g.height == 0) throw std::invalid_argument("grid must be non-empty");
  const double per_neighbour = model.split == RateSplit::kTotal ? 0.25 : 1.0;
  const auto& r = model.rates;

  BehaviorSpec spec;
  spec.num_states = g.num_states();
  for (std::uint32_t y = 0; y < g.height; ++y) {
    for (std::uint32_t x = 0; x < g.width; ++x) {
      const StateIndex prey = g.index(x, y, Species::kPrey);
      const StateIndex pred = g.index(x, y, Species::kPredator);
      const auto nbrs = g.neighbours(x, y);

      spec.actions.push_back({prey, r.prey_death, {}});
      for (const auto& n : nbrs) {
        if (!n) continue;
        const StateIndex target = g.index((*n)[0], (*n)[1], Species::kPrey);
        spec.actions.push_back({prey, r.prey_reproduction * per_neighbour, {prey, target}});
      }
      for (const auto& n : nbrs) {
        if (!n) continue;
        const StateIndex target = g.index((*n)[0], (*n)[1], Species::kPrey);
        spec.actions.push_back({prey, r.prey_move * per_neighbour, {target}});
      }

      spec.actions.push_back({pred, r.predator_death, {}});
      for (const auto& n : nbrs) {
        if (!n) continue;
        const StateIndex target = g.index((*n)[0], (*n)[1], Species::kPredator);
        spec.actions.push_back({pred, r.predator_move * per_neighbour, {target}});
      }
      for (const auto& n : nbrs) {
        if (!n) continue;
        const StateIndex victim = g.index((*n)[0], (*n)[1], Species::kPrey);
        const StateIndex offspring = model.outcome == PredationOutcome::kOffspringOnPreySquare
                                         ? g.index((*n)[0], (*n)[1], Species::kPredator)
                                         : pred;
        spec.interactions.push_back({pred, victim, r.predation, {pred, offspring}});
      }
    }
  }
  return spec;
}

inline Boundary parse_boundary(const std::string& s) {
  if (s == "torus") return Boundary::kTorus;
  if (s == "walled") return Boundary::kWalled;
  throw std::invalid_argument("unknown boundary mode: " + s);
}

inline std::string to_string(Boundary b) { return b == Boundary::kTorus ? "torus" : "walled"; }

inline RateSplit parse_rate_split(const std::string& s) {
  if (s == "total") return RateSplit::kTotal;
  if (s == "per_direction") return RateSplit::kPerDirection;
  throw std::invalid_argument("unknown rate split: " + s);
}

inline std::string to_string(RateSplit s) {
  return s == RateSplit::kTotal ? "total" : "per_direction";
}

inline PredationOutcome parse_predation_outcome(const std::string& s) {
  if (s == "prey_square") return PredationOutcome::kOffspringOnPreySquare;
  if (s == "predator_square") return PredationOutcome::kOffspringOnPredatorSquare;
  throw std::invalid_argument("unknown predation outcome: " + s);
}

inline std::string to_string(PredationOutcome o) {
  return o == PredationOutcome::kOffspringOnPreySquare ? "prey_square" : "predator_square";
}

}  // namespace fockda
