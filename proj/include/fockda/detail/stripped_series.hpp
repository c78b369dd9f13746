#pragma once

// Fast path for the Z' recurrence. Once creation operators are stripped every
// term is a pure annihilation monomial, and all terms share the Lg factors of
// the window's observations, so a term is just (monomial, coefficient).
//
// For a term Z = a^d Lg and a Hamiltonian term h = a^dag^C a^E:
//
//   Z h = s^{C-E} sum_q [d! C! / (q! (d-q)! (C-q)!)] a^dag^{C-q} a^{d-q+E} Lg
//   h Z = a^dag^C a^{d+E} Lg
//
// so after stripping, [Z, h] keeps the contraction terms (q != 0) with weight
// s^{C-E}, and the q = 0 term with weight s^{C-E} - 1. The latter only exists
// for terms of H that touch an Lg index and does not depend on Z, so those
// "activation" terms are aggregated by annihilation pattern up front.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <absl/container/flat_hash_map.h>
#include <boost/container/small_vector.hpp>

#include "fockda/behavior_hamiltonian.hpp"
#include "fockda/deselby.hpp"
#include "fockda/fock_algebra.hpp"

namespace fockda {

/// A series polynomial outgrew its term budget.
class TermLimitError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace fockda

namespace fockda::detail {

/// Sorted (index << 32 | exponent) entries.
using PackedMonomial = boost::container::small_vector<std::uint64_t, 6>;

inline std::uint64_t pack(std::uint32_t index, std::uint32_t exponent) {
  return (static_cast<std::uint64_t>(index) << 32) | exponent;
}
inline std::uint32_t packed_index(std::uint64_t e) { return static_cast<std::uint32_t>(e >> 32); }
inline std::uint32_t packed_exponent(std::uint64_t e) { return static_cast<std::uint32_t>(e); }

struct PackedMonomialHash {
  std::size_t operator()(const PackedMonomial& m) const {
    std::uint64_t h = 0xcbf29ce484222325ULL ^ m.size();
    for (auto e : m) {
      h ^= e + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
      h *= 0x100000001b3ULL;
    }
    return static_cast<std::size_t>(h ^ (h >> 29));
  }
};

using StrippedTerms = absl::flat_hash_map<PackedMonomial, double, PackedMonomialHash>;
/// Terms sorted by monomial. Every sum over a series runs in this order, so
/// results never depend on hash-table layout.
using TermList = std::vector<std::pair<PackedMonomial, double>>;

inline TermList sorted_terms(StrippedTerms&& terms) {
  TermList out;
  out.reserve(terms.size());
  for (auto it = terms.begin(); it != terms.end();) {
    auto node = terms.extract(it++);
    out.emplace_back(std::move(node.key()), node.mapped());
  }
  std::sort(out.begin(), out.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  return out;
}

inline PackedMonomial pack(const Monomial& m) {
  PackedMonomial out;
  for (const auto& [i, d] : m) out.push_back(pack(i.id, d));
  return out;
}

inline Monomial unpack(const PackedMonomial& m) {
  Monomial out;
  for (auto e : m) out.set(StateIndex{packed_index(e)}, packed_exponent(e));
  return out;
}

// Adds `delta` to the exponent at `index`, keeping entries sorted. The result
// must stay non-negative.
inline void bump(PackedMonomial& m, std::uint32_t index, std::int64_t delta) {
  auto it = std::lower_bound(m.begin(), m.end(), pack(index, 0));
  if (it != m.end() && packed_index(*it) == index) {
    const std::int64_t e = static_cast<std::int64_t>(packed_exponent(*it)) + delta;
    if (e == 0) {
      m.erase(it);
    } else {
      *it = pack(index, static_cast<std::uint32_t>(e));
    }
  } else if (delta != 0) {
    m.insert(it, pack(index, static_cast<std::uint32_t>(delta)));
  }
}

inline std::uint32_t exponent_of(const PackedMonomial& m, std::uint32_t index) {
  auto it = std::lower_bound(m.begin(), m.end(), pack(index, 0));
  return it != m.end() && packed_index(*it) == index ? packed_exponent(*it) : 0;
}

inline double binomial(std::uint32_t n, std::uint32_t k) {
  double r = 1.0;
  for (std::uint32_t i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

/// d! C! / (q! (d-q)! (C-q)!): the coefficient of a^dag^{C-q} a^{d-q} in a^d a^dag^C.
inline double contraction_weight(std::uint32_t d, std::uint32_t c, std::uint32_t q) {
  double w = binomial(d, q) * binomial(c, q);
  for (std::uint32_t i = 2; i <= q; ++i) w *= i;
  return w;
}

/// Evolves Z'_n = strip(Z'_{n-1} + [Z'_{n-1}, H]) for annihilation-only terms
/// sharing one Lg map, and evaluates F(Z'_n) against psi0.
class StrippedSeries {
 public:
  StrippedSeries(const Hamiltonian& h, const DeselbyState& psi0, const LgMap& lg, StrippedTerms z0,
                 double term_drop, std::size_t max_terms = 0)
      : h_(&h), psi0_(&psi0), terms_(sorted_terms(std::move(z0))), term_drop_(term_drop), max_terms_(max_terms) {
    const std::uint32_t n = h.num_states();
    if (psi0.size() != n) throw std::invalid_argument("belief state does not match Hamiltonian");
    ground_.assign(psi0.lambdas.begin(), psi0.lambdas.end());
    tables_.resize(n);
    info_.resize(n);
    std::vector<double> survival(n, 1.0);
    for (const auto& [i, s] : lg) {
      if (i.id >= n) throw std::out_of_range("Lg index outside state space");
      survival[i.id] = s;
      ground_[i.id] *= s;
      lg_prefactor_ *= std::pow(s, static_cast<double>(psi0.deltas[i.id]));
    }

    std::vector<std::size_t> touched;
    for (const auto& [i, s] : lg) {
      const auto& ids = h.touching(i);
      touched.insert(touched.end(), ids.begin(), ids.end());
    }
    std::sort(touched.begin(), touched.end());
    touched.erase(std::unique(touched.begin(), touched.end()), touched.end());

    lg_factor_.assign(h.terms().size(), 1.0);
    std::map<PackedMonomial, double> activation;
    for (auto id : touched) {
      const auto& t = h.terms()[id];
      double f = 1.0;
      for (const auto& [i, c] : t.creations) f *= std::pow(survival[i.id], static_cast<double>(c));
      for (const auto& [i, e] : t.annihilations) f /= std::pow(survival[i.id], static_cast<double>(e));
      lg_factor_[id] = f;
      PackedMonomial pattern;
      for (const auto& [i, e] : t.annihilations) pattern.push_back(pack(i.id, e));
      activation[pattern] += t.coeff * (f - 1.0);
    }
    for (auto& [pattern, w] : activation) {
      if (w == 0.0) continue;
      activation_.emplace_back(pattern, w);
      bool fixed = true;
      double ratio = 1.0;
      for (auto e : pattern) {
        fixed = fixed && psi0.deltas[packed_index(e)] == 0;
        ratio *= std::pow(ground_[packed_index(e)], static_cast<double>(packed_exponent(e)));
      }
      if (fixed) {
        fixed_activation_ += w * ratio;
      } else {
        variable_activation_.emplace_back(pattern, w);
      }
    }
    prune();
    current_ = evaluate();
  }

  std::size_t size() const { return terms_.size(); }
  const TermList& terms() const { return terms_; }
  double value() const { return current_; }

  /// F(Z'_{n+1}) without materialising Z'_{n+1}.
  double peek_next() {
    double delta = 0.0;
    for (const auto& [m, c] : terms_) {
      const double fm = monomial_value(m);
      if (fm == 0.0) {
        for_each_commutator_term(m, c, [&](const PackedMonomial& key, double coeff) {
          delta += coeff * monomial_value(key);
        });
      } else {
        delta += c * fm * relative_commutator_value(m);
      }
    }
    return current_ + delta * lg_prefactor_;
  }

  void step() {
    StrippedTerms next;
    std::size_t guess = terms_.size() * (activation_.size() + 8);
    if (max_terms_ != 0) guess = std::min(guess, max_terms_);
    next.reserve(std::min<std::size_t>(guess, 1u << 20));
    for (const auto& [m, c] : terms_) next.emplace(m, c);
    for (const auto& [m, c] : terms_) {
      for_each_commutator_term(m, c, [&](const PackedMonomial& key, double coeff) {
        next[key] += coeff;
        if (max_terms_ != 0 && next.size() > max_terms_) {
          throw TermLimitError("series exceeded " + std::to_string(max_terms_) + " terms");
        }
      });
    }
    terms_.clear();
    terms_.shrink_to_fit();
    terms_ = sorted_terms(std::move(next));
    prune();
    current_ = evaluate();
  }

 private:
  // Emits every (monomial, coefficient) of strip([a^m Lg, H]) for one term.
  template <class Emit>
  void for_each_commutator_term(const PackedMonomial& m, double c, Emit&& emit) const {
    for (const auto& [pattern, w] : activation_) {
      PackedMonomial key = m;
      for (auto e : pattern) bump(key, packed_index(e), packed_exponent(e));
      emit(key, c * w);
    }
    for (auto entry : m) {
      const std::uint32_t k = packed_index(entry);
      for (auto id : h_->by_index(StateIndex{k})) {
        const auto& t = h_->terms()[id];
        // Visit each term once: from the first of its creation indices present in m.
        std::uint32_t idx[2] = {0, 0};
        std::uint32_t dexp[2] = {0, 0};
        std::uint32_t cexp[2] = {0, 0};
        int nc = 0;
        for (const auto& [i, ce] : t.creations) {
          const std::uint32_t d = exponent_of(m, i.id);
          if (d == 0) continue;
          if (nc == 2) throw std::logic_error("Hamiltonian term with more than two creation states");
          idx[nc] = i.id;
          dexp[nc] = d;
          cexp[nc] = ce;
          ++nc;
        }
        if (nc == 0 || idx[0] != k) continue;
        const double base = c * t.coeff * lg_factor_[id];
        const std::uint32_t q0max = std::min(dexp[0], cexp[0]);
        const std::uint32_t q1max = nc > 1 ? std::min(dexp[1], cexp[1]) : 0;
        for (std::uint32_t q0 = 0; q0 <= q0max; ++q0) {
          for (std::uint32_t q1 = 0; q1 <= q1max; ++q1) {
            if (q0 == 0 && q1 == 0) continue;
            double coeff = base * contraction_weight(dexp[0], cexp[0], q0);
            if (nc > 1) coeff *= contraction_weight(dexp[1], cexp[1], q1);
            PackedMonomial key = m;
            if (q0 > 0) bump(key, idx[0], -static_cast<std::int64_t>(q0));
            if (q1 > 0) bump(key, idx[1], -static_cast<std::int64_t>(q1));
            for (const auto& [i, e] : t.annihilations) bump(key, i.id, e);
            emit(key, coeff);
          }
        }
      }
    }
  }

  // F(strip([a^m Lg, H])) / F(a^m Lg) per unit coefficient; F(a^m Lg) != 0.
  //
  // A term of H whose support has Delta = 0 everywhere scales F by lambda'
  // powers that do not depend on m, so its contractions at a single creation
  // index are memoised per (index, exponent). Contractions at both creation
  // indices at once, and terms near Delta > 0 states, are done per monomial.
  double relative_commutator_value(const PackedMonomial& m) {
    double total = fixed_activation_;
    for (const auto& [pattern, w] : variable_activation_) {
      double r = w;
      for (auto e : pattern) {
        const std::uint32_t k = packed_index(e);
        const std::uint32_t d = exponent_of(m, k);
        r *= local_factor(k, d + packed_exponent(e)) / local_factor(k, d);
      }
      total += r;
    }
    for (auto entry : m) {
      const std::uint32_t k = packed_index(entry);
      const auto& info = index_info(k);
      total += single_contractions(k, packed_exponent(entry));
      for (auto id : info.pairs) {
        const auto& t = h_->terms()[id];
        const std::uint32_t j = t.creations[1].first.id;
        if (exponent_of(m, j) > 0) total += contractions(m, id, true);
      }
      for (auto id : info.general) {
        const auto& t = h_->terms()[id];
        std::uint32_t first = 0;
        for (const auto& [i, ce] : t.creations) {
          if (exponent_of(m, i.id) > 0) {
            first = i.id;
            break;
          }
        }
        if (first == k) total += contractions(m, id, false);
      }
    }
    return total;
  }

  // Relative value of the contraction terms of one term of H, with
  // q != (0, 0), or with both q > 0 when `both_only`.
  double contractions(const PackedMonomial& m, std::size_t id, bool both_only) {
    const auto& t = h_->terms()[id];
    std::uint32_t idx[2] = {0, 0};
    std::uint32_t dexp[2] = {0, 0};
    std::uint32_t cexp[2] = {0, 0};
    int nc = 0;
    for (const auto& [i, ce] : t.creations) {
      const std::uint32_t d = exponent_of(m, i.id);
      if (d == 0) continue;
      if (nc == 2) throw std::logic_error("Hamiltonian term with more than two creation states");
      idx[nc] = i.id;
      dexp[nc] = d;
      cexp[nc] = ce;
      ++nc;
    }
    if (nc == 0 || (both_only && nc < 2)) return 0.0;
    const double base = t.coeff * lg_factor_[id];
    const std::uint32_t q0max = std::min(dexp[0], cexp[0]);
    const std::uint32_t q1max = nc > 1 ? std::min(dexp[1], cexp[1]) : 0;
    double total = 0.0;
    for (std::uint32_t q0 = both_only ? 1 : 0; q0 <= q0max; ++q0) {
      for (std::uint32_t q1 = both_only ? 1 : 0; q1 <= q1max; ++q1) {
        if (q0 == 0 && q1 == 0) continue;
        double coeff = base * contraction_weight(dexp[0], cexp[0], q0);
        if (nc > 1) coeff *= contraction_weight(dexp[1], cexp[1], q1);
        // Net exponent change per touched index.
        std::uint32_t kk[4];
        std::int64_t shift[4];
        int nk = 0;
        auto change = [&](std::uint32_t index, std::int64_t by) {
          for (int j = 0; j < nk; ++j) {
            if (kk[j] == index) {
              shift[j] += by;
              return;
            }
          }
          kk[nk] = index;
          shift[nk] = by;
          ++nk;
        };
        if (q0 > 0) change(idx[0], -static_cast<std::int64_t>(q0));
        if (q1 > 0) change(idx[1], -static_cast<std::int64_t>(q1));
        for (const auto& [i, e] : t.annihilations) change(i.id, e);
        for (int j = 0; j < nk; ++j) {
          if (shift[j] == 0) continue;
          const std::uint32_t d = exponent_of(m, kk[j]);
          coeff *= local_factor(kk[j], static_cast<std::uint32_t>(d + shift[j])) /
                   local_factor(kk[j], d);
        }
        total += coeff;
      }
    }
    return total;
  }

  struct IndexInfo {
    bool ready = false;
    std::vector<std::size_t> pairs;    // plain, two creation states, k the lower
    std::vector<std::size_t> general;  // not plain
    std::vector<std::size_t> plain;
    std::vector<double> single;        // memo by exponent
  };

  const IndexInfo& index_info(std::uint32_t k) {
    auto& info = info_[k];
    if (info.ready) return info;
    info.ready = true;
    for (auto id : h_->by_index(StateIndex{k})) {
      const auto& t = h_->terms()[id];
      bool plain = true;
      for (const auto& [i, c] : t.creations) plain = plain && psi0_->deltas[i.id] == 0;
      for (const auto& [i, e] : t.annihilations) plain = plain && psi0_->deltas[i.id] == 0;
      if (!plain) {
        info.general.push_back(id);
        continue;
      }
      info.plain.push_back(id);
      if (t.creations.size() == 2 && t.creations[0].first.id == k) info.pairs.push_back(id);
    }
    return info;
  }

  // Sum over plain terms creating at k of their q_k > 0, other q = 0
  // contractions, for a monomial with exponent d at k.
  double single_contractions(std::uint32_t k, std::uint32_t d) {
    auto& info = info_[k];
    while (info.single.size() <= d) {
      const std::uint32_t dd = static_cast<std::uint32_t>(info.single.size());
      double sum = 0.0;
      for (auto id : info.plain) {
        const auto& t = h_->terms()[id];
        std::uint32_t ck = 0;
        for (const auto& [i, c] : t.creations) {
          if (i.id == k) ck = c;
        }
        std::int64_t ek = 0;
        double others = t.coeff * lg_factor_[id];
        for (const auto& [i, e] : t.annihilations) {
          if (i.id == k) {
            ek = e;
          } else {
            others *= std::pow(ground_[i.id], static_cast<double>(e));
          }
        }
        for (std::uint32_t q = 1; q <= std::min(dd, ck); ++q) {
          sum += others * contraction_weight(dd, ck, q) *
                 std::pow(ground_[k], static_cast<double>(ek - static_cast<std::int64_t>(q)));
        }
      }
      info.single.push_back(sum);
    }
    return info.single[d];
  }

  // g_k(d) = sum_q w(d, Delta_k, q) lambda'_k^{d-q}: what a_k^d yields after
  // psi0's a^dag_k^Delta_k is moved through it onto the (Lg-scaled) ground.
  double local_factor(std::uint32_t k, std::uint32_t d) {
    auto& table = tables_[k];
    if (table.size() <= d) {
      const double lam = ground_[k];
      const std::uint32_t delta = psi0_->deltas[k];
      for (std::uint32_t dd = static_cast<std::uint32_t>(table.size()); dd <= d; ++dd) {
        double sum = 0.0;
        const std::uint32_t qmax = std::min(dd, delta);
        for (std::uint32_t q = 0; q <= qmax; ++q) {
          sum += contraction_weight(dd, delta, q) * std::pow(lam, static_cast<double>(dd - q));
        }
        table.push_back(sum);
      }
    }
    return table[d];
  }

  double monomial_value(const PackedMonomial& m) {
    double v = 1.0;
    for (auto e : m) v *= local_factor(packed_index(e), packed_exponent(e));
    return v;
  }

  double evaluate() {
    double total = 0.0;
    for (const auto& [m, c] : terms_) total += c * monomial_value(m);
    return total * lg_prefactor_;
  }

  void prune() {
    double largest = 0.0;
    for (const auto& [m, c] : terms_) largest = std::max(largest, std::abs(c));
    const double cut = largest * term_drop_;
    std::erase_if(terms_, [cut](const auto& kv) { return std::abs(kv.second) <= cut; });
  }

  const Hamiltonian* h_;
  const DeselbyState* psi0_;
  TermList terms_;
  double term_drop_;
  std::size_t max_terms_;
  std::vector<double> ground_;  // lambda_k scaled by its Lg survival
  std::vector<std::vector<double>> tables_;
  std::vector<IndexInfo> info_;
  double lg_prefactor_ = 1.0;  // prod_k s_k^Delta_k over Lg indices
  std::vector<double> lg_factor_;
  std::vector<std::pair<PackedMonomial, double>> activation_;
  // Split of activation_ for relative evaluation: with Delta_k = 0 the local
  // factor is lambda'^d, so a pattern scales any term by the same amount.
  double fixed_activation_ = 0.0;
  std::vector<std::pair<PackedMonomial, double>> variable_activation_;
  double current_ = 0.0;
};

}  // namespace fockda::detail
