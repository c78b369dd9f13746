#pragma once

// Declarative agent behaviours and the Hamiltonian they induce.
//
// An action (rho(i), A(i)) contributes  rho(i) (prod_{k in A(i)} a^dag_k - a^dag_i) a_i
// and a binary interaction (rho(i,j), I(i,j)) contributes
// rho(i,j) (prod_{k in I(i,j)} a^dag_k - a^dag_i a^dag_j) a_j a_i.

#include <algorithm>
#include <cstdint>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "fockda/fock_algebra.hpp"

namespace fockda {

struct ActionRule {
  StateIndex subject;
  double rate = 0.0;
  std::vector<StateIndex> products;  // multiset; empty means death
};

struct InteractionRule {
  StateIndex subject;
  StateIndex partner;
  double rate = 0.0;
  std::vector<StateIndex> products;
};

struct BehaviorSpec {
  std::uint32_t num_states = 0;
  std::vector<ActionRule> actions;
  std::vector<InteractionRule> interactions;

  std::size_t rule_count() const { return actions.size() + interactions.size(); }

  void validate() const {
    auto check = [this](StateIndex i) {
      if (i.id >= num_states) throw std::invalid_argument("behaviour references unknown state");
    };
    for (const auto& a : actions) {
      check(a.subject);
      for (auto p : a.products) check(p);
      if (!(a.rate >= 0.0)) throw std::invalid_argument("negative action rate");
    }
    for (const auto& r : interactions) {
      check(r.subject);
      check(r.partner);
      for (auto p : r.products) check(p);
      if (!(r.rate >= 0.0)) throw std::invalid_argument("negative interaction rate");
    }
  }
};

namespace detail {

inline OperatorPoly creation_product(const std::vector<StateIndex>& products) {
  TermKey key;
  for (auto p : products) key.creations.combine(p, 1);
  return OperatorPoly::from_term({1.0, key});
}

}  // namespace detail

inline OperatorPoly build_action_term(const ActionRule& rule) {
  if (!(rule.rate >= 0.0)) throw std::invalid_argument("negative action rate");
  if (rule.rate == 0.0) return {};
  OperatorPoly gain = detail::creation_product(rule.products) - create(rule.subject);
  return multiply(gain, annihilate(rule.subject)) * rule.rate;
}

inline OperatorPoly build_interaction_term(const InteractionRule& rule) {
  if (!(rule.rate >= 0.0)) throw std::invalid_argument("negative interaction rate");
  if (rule.rate == 0.0) return {};
  OperatorPoly gain = detail::creation_product(rule.products) -
                      multiply(create(rule.subject), create(rule.partner));
  OperatorPoly pair = multiply(annihilate(rule.partner), annihilate(rule.subject));
  return multiply(gain, pair) * rule.rate;
}

/// Ladder-operator-only term of a Hamiltonian, flattened for the inner loops
/// of the commutator series.
struct HamiltonianTerm {
  double coeff = 0.0;
  std::vector<std::pair<StateIndex, std::uint32_t>> creations;
  std::vector<std::pair<StateIndex, std::uint32_t>> annihilations;
};

/// The model Hamiltonian with index lookups. Immutable once built.
class Hamiltonian {
 public:
  Hamiltonian() = default;

  Hamiltonian(std::uint32_t num_states, OperatorPoly poly)
      : num_states_(num_states), poly_(std::move(poly)),
        by_creation_(num_states), by_annihilation_(num_states), touching_(num_states),
        neighbours_(num_states) {
    for (const auto& term : poly_.sorted_terms()) {
      if (!term.key.lg.empty()) throw std::invalid_argument("Hamiltonian terms cannot carry Lg");
      HamiltonianTerm flat;
      flat.coeff = term.coeff;
      flat.creations = term.key.creations.entries();
      flat.annihilations = term.key.annihilations.entries();
      const std::size_t id = terms_.size();
      std::vector<std::uint32_t> support;
      for (const auto& [i, n] : flat.creations) {
        check(i);
        by_creation_[i.id].push_back(id);
        support.push_back(i.id);
      }
      for (const auto& [i, n] : flat.annihilations) {
        check(i);
        by_annihilation_[i.id].push_back(id);
        support.push_back(i.id);
      }
      std::sort(support.begin(), support.end());
      support.erase(std::unique(support.begin(), support.end()), support.end());
      for (auto i : support) {
        touching_[i].push_back(id);
        for (auto j : support) {
          if (j != i) neighbours_[i].push_back(j);
        }
      }
      terms_.push_back(std::move(flat));
      keys_.push_back(term.key);
    }
    for (auto& n : neighbours_) {
      std::sort(n.begin(), n.end());
      n.erase(std::unique(n.begin(), n.end()), n.end());
    }
  }

  std::uint32_t num_states() const { return num_states_; }
  const OperatorPoly& poly() const { return poly_; }
  const std::vector<HamiltonianTerm>& terms() const { return terms_; }
  const TermKey& key(std::size_t term) const { return keys_[term]; }

  /// Terms whose creation support contains `i`.
  const std::vector<std::size_t>& by_index(StateIndex i) const { return by_creation_.at(i.id); }
  const std::vector<std::size_t>& by_annihilation(StateIndex i) const {
    return by_annihilation_.at(i.id);
  }
  /// Terms with any ladder operator at `i`.
  const std::vector<std::size_t>& touching(StateIndex i) const { return touching_.at(i.id); }
  /// States coupled to `i` by at least one term.
  const std::vector<std::uint32_t>& neighbours(StateIndex i) const { return neighbours_.at(i.id); }

 private:
  void check(StateIndex i) const {
    if (i.id >= num_states_) throw std::invalid_argument("Hamiltonian term outside state space");
  }

  std::uint32_t num_states_ = 0;
  OperatorPoly poly_;
  std::vector<HamiltonianTerm> terms_;
  std::vector<TermKey> keys_;
  std::vector<std::vector<std::size_t>> by_creation_;
  std::vector<std::vector<std::size_t>> by_annihilation_;
  std::vector<std::vector<std::size_t>> touching_;
  std::vector<std::vector<std::uint32_t>> neighbours_;
};

inline Hamiltonian build_hamiltonian(const BehaviorSpec& spec) {
  spec.validate();
  OperatorPoly h;
  for (const auto& a : spec.actions) h += build_action_term(a);
  for (const auto& r : spec.interactions) h += build_interaction_term(r);
  return Hamiltonian(spec.num_states, std::move(h));
}

/// [X, H], visiting only the Hamiltonian terms that can fail to commute with
/// each term of X.
inline OperatorPoly commutator_with_H(const OperatorPoly& x, const Hamiltonian& h,
                                      double eps = kDropEpsilon) {
  OperatorPoly out;
  std::vector<std::size_t> candidates;
  for (const auto& [kx, cx] : x.terms()) {
    candidates.clear();
    for (const auto& [i, n] : kx.annihilations) {
      const auto& ids = h.by_index(i);
      candidates.insert(candidates.end(), ids.begin(), ids.end());
    }
    for (const auto& [i, n] : kx.creations) {
      const auto& ids = h.by_annihilation(i);
      candidates.insert(candidates.end(), ids.begin(), ids.end());
    }
    for (const auto& [i, s] : kx.lg) {
      const auto& ids = h.touching(i);
      candidates.insert(candidates.end(), ids.begin(), ids.end());
    }
    std::sort(candidates.begin(), candidates.end());
    candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());

    OperatorPoly single;
    single.add_term(kx, cx, 0.0);
    for (auto id : candidates) {
      OperatorPoly hterm;
      hterm.add_term(h.key(id), h.terms()[id].coeff, 0.0);
      const OperatorPoly part = commutator(single, hterm, 0.0);
      for (const auto& [k, c] : part.terms()) out.add_term(k, c, 0.0);
    }
  }
  out.drop_small(eps);
  return out;
}

/// One rule per line: `action <subject> <rate> -> <products...>` or
/// `interaction <subject> <partner> <rate> -> <products...>`.
inline std::string dump_spec(const BehaviorSpec& spec) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "states " << spec.num_states << '\n';
  for (const auto& a : spec.actions) {
    os << "action " << a.subject.id << ' ' << a.rate << " ->";
    for (auto p : a.products) os << ' ' << p.id;
    os << '\n';
  }
  for (const auto& r : spec.interactions) {
    os << "interaction " << r.subject.id << ' ' << r.partner.id << ' ' << r.rate << " ->";
    for (auto p : r.products) os << ' ' << p.id;
    os << '\n';
  }
  return os.str();
}

}  // namespace fockda
