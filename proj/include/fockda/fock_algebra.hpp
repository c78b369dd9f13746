#pragma once

// Sparse algebra of creation/annihilation operators over discrete agent
// states. Every polynomial is kept in normal order:
//
//   coeff * prod_i a_i^dag^{c_i} * prod_j a_j^{d_j} * prod_k Lg_{k}
//
// where Lg_k rescales the ground rate of state k by its survival factor
// (1 - r). Lg factors are stored rightmost; the commutation rules
//
//   a a^dag = a^dag a + 1,   Lg a^dag = s a^dag Lg,   Lg a = s^-1 a Lg
//
// are enough to bring any product back to this form.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <iomanip>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace fockda {

/// Dense identifier of one agent state.
struct StateIndex {
  std::uint32_t id = 0;

  friend constexpr auto operator<=>(StateIndex, StateIndex) = default;
};

inline constexpr double kDropEpsilon = 1e-14;

namespace detail {

struct ExponentTraits {
  using value_type = std::uint32_t;
  static constexpr value_type neutral() { return 0; }
  static constexpr value_type combine(value_type a, value_type b) { return a + b; }
};

struct SurvivalTraits {
  using value_type = double;
  static constexpr value_type neutral() { return 1.0; }
  static constexpr value_type combine(value_type a, value_type b) { return a * b; }
};

inline std::size_t hash_mix(std::size_t seed, std::size_t v) {
  return seed ^ (v + 0x9e3779b97f4a7c15ULL + (seed << 6) + (seed >> 2));
}

}  // namespace detail

/// Sorted sparse map StateIndex -> value that never stores the neutral value.
template <class Traits>
class IndexMap {
 public:
  using value_type = typename Traits::value_type;
  using Entry = std::pair<StateIndex, value_type>;

  IndexMap() = default;
  IndexMap(std::initializer_list<Entry> entries) {
    for (const auto& [index, value] : entries) combine(index, value);
  }

  value_type get(StateIndex index) const {
    auto it = find(index);
    return it != entries_.end() && it->first == index ? it->second : Traits::neutral();
  }

  void set(StateIndex index, value_type value) {
    auto it = find(index);
    const bool present = it != entries_.end() && it->first == index;
    if (value == Traits::neutral()) {
      if (present) entries_.erase(it);
    } else if (present) {
      it->second = value;
    } else {
      entries_.insert(it, Entry{index, value});
    }
  }

  void combine(StateIndex index, value_type value) {
    set(index, Traits::combine(get(index), value));
  }

  void combine(const IndexMap& other) {
    for (const auto& [index, value] : other.entries_) combine(index, value);
  }

  bool contains(StateIndex index) const {
    auto it = find(index);
    return it != entries_.end() && it->first == index;
  }

  bool empty() const { return entries_.empty(); }
  std::size_t size() const { return entries_.size(); }
  void clear() { entries_.clear(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }
  const std::vector<Entry>& entries() const { return entries_; }

  friend bool operator==(const IndexMap&, const IndexMap&) = default;

  friend bool operator<(const IndexMap& a, const IndexMap& b) {
    return std::lexicographical_compare(
        a.entries_.begin(), a.entries_.end(), b.entries_.begin(), b.entries_.end(),
        [](const Entry& x, const Entry& y) {
          return x.first != y.first ? x.first < y.first : x.second < y.second;
        });
  }

  std::size_t hash() const {
    std::size_t h = entries_.size();
    for (const auto& [index, value] : entries_) {
      h = detail::hash_mix(h, index.id);
      h = detail::hash_mix(h, std::hash<value_type>{}(value));
    }
    return h;
  }

 private:
  auto find(StateIndex index) const {
    return std::lower_bound(entries_.begin(), entries_.end(), index,
                            [](const Entry& e, StateIndex i) { return e.first < i; });
  }
  auto find(StateIndex index) {
    return std::lower_bound(entries_.begin(), entries_.end(), index,
                            [](const Entry& e, StateIndex i) { return e.first < i; });
  }

  std::vector<Entry> entries_;
};

/// Exponents of a product of same-kind ladder operators.
using Monomial = IndexMap<detail::ExponentTraits>;
/// Survival factors (1 - r) of the Lg operators in a term.
using LgMap = IndexMap<detail::SurvivalTraits>;

inline std::uint32_t degree(const Monomial& m) {
  std::uint32_t total = 0;
  for (const auto& [index, exponent] : m) total += exponent;
  return total;
}

/// Operator content of a normal-ordered term, without its coefficient.
struct TermKey {
  Monomial creations;
  Monomial annihilations;
  LgMap lg;

  friend bool operator==(const TermKey&, const TermKey&) = default;

  friend bool operator<(const TermKey& a, const TermKey& b) {
    if (a.creations != b.creations) return a.creations < b.creations;
    if (a.annihilations != b.annihilations) return a.annihilations < b.annihilations;
    return a.lg < b.lg;
  }
};

struct TermKeyHash {
  std::size_t operator()(const TermKey& k) const {
    std::size_t h = k.creations.hash();
    h = detail::hash_mix(h, k.annihilations.hash());
    return detail::hash_mix(h, k.lg.hash());
  }
};

struct OperatorTerm {
  double coeff = 1.0;
  TermKey key;
};

/// Normal-ordered sparse sum of operator terms. Values are immutable in
/// practice: every algebra function returns a new polynomial.
class OperatorPoly {
 public:
  using Map = std::unordered_map<TermKey, double, TermKeyHash>;

  OperatorPoly() = default;

  static OperatorPoly constant(double c) {
    OperatorPoly p;
    p.add_term(TermKey{}, c);
    return p;
  }

  static OperatorPoly identity() { return constant(1.0); }

  static OperatorPoly from_term(const OperatorTerm& term) {
    OperatorPoly p;
    p.add_term(term.key, term.coeff);
    return p;
  }

  /// Accumulates c into the term with the given key. Entries whose magnitude
  /// falls to `eps` or below are removed.
  void add_term(const TermKey& key, double c, double eps = kDropEpsilon) {
    if (c == 0.0) return;
    auto [it, inserted] = terms_.try_emplace(key, c);
    if (!inserted) it->second += c;
    if (std::abs(it->second) <= eps) terms_.erase(it);
  }

  double coefficient(const TermKey& key) const {
    auto it = terms_.find(key);
    return it == terms_.end() ? 0.0 : it->second;
  }

  const Map& terms() const { return terms_; }
  std::size_t size() const { return terms_.size(); }
  bool is_zero() const { return terms_.empty(); }

  /// Terms ordered by key; use when iteration order must be reproducible.
  std::vector<OperatorTerm> sorted_terms() const {
    std::vector<OperatorTerm> out;
    out.reserve(terms_.size());
    for (const auto& [key, c] : terms_) out.push_back(OperatorTerm{c, key});
    std::sort(out.begin(), out.end(),
              [](const OperatorTerm& a, const OperatorTerm& b) { return a.key < b.key; });
    return out;
  }

  double max_abs_coeff() const {
    double m = 0.0;
    for (const auto& [key, c] : terms_) m = std::max(m, std::abs(c));
    return m;
  }

  void drop_small(double eps = kDropEpsilon) {
    std::erase_if(terms_, [eps](const auto& kv) { return std::abs(kv.second) <= eps; });
  }

  OperatorPoly& operator+=(const OperatorPoly& other) {
    for (const auto& [key, c] : other.terms_) add_term(key, c);
    return *this;
  }

  OperatorPoly& operator-=(const OperatorPoly& other) {
    for (const auto& [key, c] : other.terms_) add_term(key, -c);
    return *this;
  }

  OperatorPoly& operator*=(double s) {
    if (s == 0.0) {
      terms_.clear();
      return *this;
    }
    for (auto& [key, c] : terms_) c *= s;
    drop_small();
    return *this;
  }

  friend OperatorPoly operator+(OperatorPoly a, const OperatorPoly& b) { return a += b; }
  friend OperatorPoly operator-(OperatorPoly a, const OperatorPoly& b) { return a -= b; }
  friend OperatorPoly operator*(OperatorPoly a, double s) { return a *= s; }
  friend OperatorPoly operator*(double s, OperatorPoly a) { return a *= s; }
  friend OperatorPoly operator-(OperatorPoly a) { return a *= -1.0; }

 private:
  Map terms_;
};

// ---------------------------------------------------------------------------
// Builders

inline OperatorPoly create(StateIndex i, std::uint32_t power = 1) {
  TermKey key;
  key.creations.set(i, power);
  return OperatorPoly::from_term({1.0, key});
}

inline OperatorPoly annihilate(StateIndex i, std::uint32_t power = 1) {
  TermKey key;
  key.annihilations.set(i, power);
  return OperatorPoly::from_term({1.0, key});
}

/// Lg operator for detection probability `detect`; stored as survival 1 - r.
inline OperatorPoly lg_operator(StateIndex i, double detect) {
  if (!(detect >= 0.0 && detect < 1.0)) {
    throw std::invalid_argument("Lg survival factor must lie in (0, 1]");
  }
  TermKey key;
  key.lg.set(i, 1.0 - detect);
  return OperatorPoly::from_term({1.0, key});
}

// ---------------------------------------------------------------------------
// Normal ordering

namespace detail {

// Right-multiplies a normal-ordered term by a^dag_i. The creator is moved
// left through Lg_i (factor s) and then through a_i^d using a a^dag = a^dag a + 1,
// which leaves a^dag a^d + d a^{d-1}.
inline void times_creation(const TermKey& key, double c, StateIndex i, OperatorPoly& out) {
  const double s = key.lg.get(i);
  const std::uint32_t d = key.annihilations.get(i);
  TermKey moved = key;
  moved.creations.combine(i, 1);
  out.add_term(moved, c * s, 0.0);
  if (d > 0) {
    TermKey contracted = key;
    contracted.annihilations.set(i, d - 1);
    out.add_term(contracted, c * s * d, 0.0);
  }
}

// Lg_i a_i = s^-1 a_i Lg_i.
inline void times_annihilation(const TermKey& key, double c, StateIndex i, OperatorPoly& out) {
  TermKey moved = key;
  moved.annihilations.combine(i, 1);
  out.add_term(moved, c / key.lg.get(i), 0.0);
}

inline OperatorPoly right_multiply(const OperatorPoly& p, const TermKey& factor) {
  OperatorPoly cur = p;
  for (const auto& [i, n] : factor.creations) {
    for (std::uint32_t k = 0; k < n; ++k) {
      OperatorPoly next;
      for (const auto& [key, c] : cur.terms()) times_creation(key, c, i, next);
      cur = std::move(next);
    }
  }
  for (const auto& [i, n] : factor.annihilations) {
    for (std::uint32_t k = 0; k < n; ++k) {
      OperatorPoly next;
      for (const auto& [key, c] : cur.terms()) times_annihilation(key, c, i, next);
      cur = std::move(next);
    }
  }
  if (!factor.lg.empty()) {
    OperatorPoly next;
    for (const auto& [key, c] : cur.terms()) {
      TermKey moved = key;
      moved.lg.combine(factor.lg);
      next.add_term(moved, c, 0.0);
    }
    cur = std::move(next);
  }
  return cur;
}

// True when the two terms fail to commute for structural reasons: some index
// is annihilated by one and created by the other, or an Lg index meets a
// ladder operator of the other term.
inline bool may_interact(const TermKey& x, const TermKey& y) {
  auto overlaps = [](const auto& a, const auto& b) {
    auto ia = a.begin();
    auto ib = b.begin();
    while (ia != a.end() && ib != b.end()) {
      if (ia->first == ib->first) return true;
      if (ia->first < ib->first) ++ia; else ++ib;
    }
    return false;
  };
  return overlaps(x.annihilations, y.creations) || overlaps(y.annihilations, x.creations) ||
         overlaps(x.lg, y.creations) || overlaps(x.lg, y.annihilations) ||
         overlaps(y.lg, x.creations) || overlaps(y.lg, x.annihilations);
}

}  // namespace detail

/// Normal-ordered form of the ordered product of the given factors.
inline OperatorPoly normal_order(std::span<const OperatorTerm> factors,
                                 double eps = kDropEpsilon) {
  OperatorPoly cur = OperatorPoly::identity();
  for (const auto& f : factors) {
    if (f.coeff == 0.0) return {};
    cur = detail::right_multiply(cur, f.key);
    cur *= f.coeff;
  }
  cur.drop_small(eps);
  return cur;
}

inline OperatorPoly normal_order(std::initializer_list<OperatorTerm> factors,
                                 double eps = kDropEpsilon) {
  return normal_order(std::span<const OperatorTerm>(factors.begin(), factors.size()), eps);
}

inline OperatorPoly multiply(const OperatorPoly& a, const OperatorPoly& b,
                             double eps = kDropEpsilon) {
  OperatorPoly out;
  for (const auto& [ka, ca] : a.terms()) {
    OperatorPoly left;
    left.add_term(ka, ca, 0.0);
    for (const auto& [kb, cb] : b.terms()) {
      const OperatorPoly prod = detail::right_multiply(left, kb);
      for (const auto& [k, c] : prod.terms()) out.add_term(k, c * cb, 0.0);
    }
  }
  out.drop_small(eps);
  return out;
}

inline OperatorPoly operator*(const OperatorPoly& a, const OperatorPoly& b) {
  return multiply(a, b);
}

/// [A, B] = AB - BA. Term pairs with disjoint interacting supports are
/// skipped without forming either product.
inline OperatorPoly commutator(const OperatorPoly& a, const OperatorPoly& b,
                               double eps = kDropEpsilon) {
  OperatorPoly out;
  for (const auto& [ka, ca] : a.terms()) {
    for (const auto& [kb, cb] : b.terms()) {
      if (!detail::may_interact(ka, kb)) continue;
      OperatorPoly left;
      left.add_term(ka, ca * cb, 0.0);
      OperatorPoly right;
      right.add_term(kb, ca * cb, 0.0);
      const OperatorPoly ab = detail::right_multiply(left, kb);
      const OperatorPoly ba = detail::right_multiply(right, ka);
      for (const auto& [k, c] : ab.terms()) out.add_term(k, c, 0.0);
      for (const auto& [k, c] : ba.terms()) out.add_term(k, -c, 0.0);
    }
  }
  out.drop_small(eps);
  return out;
}

/// Drops every creation operator. Only valid underneath the summing
/// functional, where sum_j a_j absorbs a leading a^dag_i.
inline OperatorPoly strip_creations(const OperatorPoly& p, double eps = kDropEpsilon) {
  OperatorPoly out;
  for (const auto& [key, c] : p.terms()) {
    TermKey stripped = key;
    stripped.creations.clear();
    out.add_term(stripped, c, 0.0);
  }
  out.drop_small(eps);
  return out;
}

/// Total probability mass of P applied to the ground state D_Lambda.
/// Lg scales its ground rate first; each annihilator then yields lambda'.
inline double eval_functional(const OperatorPoly& p, std::span<const double> lambdas) {
  double total = 0.0;
  for (const auto& [key, c] : p.terms()) {
    double v = c;
    for (const auto& [i, d] : key.annihilations) {
      if (i.id >= lambdas.size()) throw std::out_of_range("state index outside ground state");
      v *= std::pow(lambdas[i.id] * key.lg.get(i), static_cast<double>(d));
    }
    total += v;
  }
  return total;
}

/// Debug text: one line per term, `coeff | i^c ... | i^d ... | i:s ...`.
inline std::string to_string(const OperatorPoly& p) {
  std::ostringstream os;
  os << std::setprecision(12);
  for (const auto& term : p.sorted_terms()) {
    os << term.coeff << " |";
    for (const auto& [i, n] : term.key.creations) os << ' ' << i.id << '^' << n;
    os << " |";
    for (const auto& [i, n] : term.key.annihilations) os << ' ' << i.id << '^' << n;
    os << " |";
    for (const auto& [i, s] : term.key.lg) os << ' ' << i.id << ':' << s;
    os << '\n';
  }
  return os.str();
}

}  // namespace fockda
