#include <gtest/gtest.h>

#include <cmath>

#include "fockda/assimilator.hpp"
#include "fockda/deselby.hpp"
#include "support/occupation_oracle.hpp"

using namespace fockda;

namespace {

// Posterior over k from the operator form a^dag^m a^m Lg_r applied to
// sum_k pmf(k) |k>, normalised.
std::vector<double> operator_posterior(const DeselbyParams& p, std::uint32_t m, double r,
                                       std::size_t cap) {
  const auto op = observation_operator({StateIndex{0}, m, r});
  oracle::StateVector prior;
  for (std::uint32_t k = 0; k <= cap; ++k) prior[{k}] = pmf(p, k);
  const auto post = oracle::apply(op, prior);
  std::vector<double> out(cap + 1, 0.0);
  double total = 0.0;
  for (const auto& [occ, v] : post) {
    if (occ[0] <= cap) {
      out[occ[0]] = v;
      total += v;
    }
  }
  for (auto& v : out) v /= total;
  return out;
}

}  // namespace

TEST(Pmf, Examples) {
  EXPECT_NEAR(pmf({1.0, 0}, 0), std::exp(-1.0), 1e-15);
  EXPECT_EQ(pmf({0.5, 1}, 0), 0.0);
  EXPECT_NEAR(pmf({0.5, 1}, 2), 0.5 * std::exp(-0.5), 1e-15);
}

TEST(Pmf, NormalisedOverLattice) {
  for (double lam : {0.0, 0.01, 0.5, 1.0, 5.0}) {
    for (std::uint32_t d = 0; d <= 5; ++d) {
      const DeselbyParams p{lam, d};
      double total = 0.0;
      for (std::uint64_t k = 0; k <= tail_cap(p); ++k) total += pmf(p, k);
      EXPECT_NEAR(total, 1.0, 1e-10) << lam << "," << d;
    }
  }
}

TEST(Pmf, ZeroBelowDelta) {
  for (std::uint32_t d = 1; d <= 5; ++d) {
    for (std::uint32_t k = 0; k < d; ++k) EXPECT_EQ(pmf({0.7, d}, k), 0.0);
  }
}

TEST(Pmf, LargeCountsStayFinite) {
  const double v = pmf({200.0, 3}, 203);
  EXPECT_TRUE(std::isfinite(v));
  EXPECT_GT(v, 0.0);
}

TEST(Mean, Examples) {
  EXPECT_EQ(mean({1.0, 0}), 1.0);
  EXPECT_EQ(mean({0.0, 3}), 3.0);
  const DeselbyParams p{0.5, 2};
  double m = 0.0;
  for (std::uint64_t k = 0; k <= tail_cap(p); ++k) m += k * pmf(p, k);
  EXPECT_NEAR(m, mean(p), 1e-10);
  EXPECT_EQ(mean(p), 2.5);
}

TEST(ApplyCreation, IncrementsDelta) {
  EXPECT_EQ(apply_creation({1.0, 0}), (DeselbyParams{1.0, 1}));
  EXPECT_EQ(apply_creation({0.5, 2}), (DeselbyParams{0.5, 3}));
}

TEST(ApplyCreation, RepeatedMatchesShiftedPoisson) {
  // a^dag^k D_{lambda,0} shifts every occupation up by k.
  const double lam = 0.8;
  for (std::uint32_t k = 1; k <= 4; ++k) {
    DeselbyParams p{lam, 0};
    for (std::uint32_t j = 0; j < k; ++j) p = apply_creation(p);
    oracle::StateVector ground;
    for (std::uint32_t n = 0; n <= 30; ++n) ground[{n}] = pmf({lam, 0}, n);
    const auto shifted = oracle::apply(create(StateIndex{0}, k), ground);
    for (const auto& [occ, v] : shifted) EXPECT_NEAR(pmf(p, occ[0]), v, 1e-14);
  }
}

TEST(BinomialPosterior, PaperParameters) {
  const auto post = binomial_posterior_exact({0.06, 0}, 1, 0.9);
  for (std::size_t k = 0; k < post.size(); ++k) {
    EXPECT_NEAR(post[k], pmf({0.006, 1}, k), 1e-12) << k;
  }
}

TEST(BinomialPosterior, UninformativeObservation) {
  const DeselbyParams p{0.7, 1};
  const auto post = binomial_posterior_exact(p, 0, 0.0);
  for (std::size_t k = 0; k < post.size(); ++k) EXPECT_NEAR(post[k], pmf(p, k), 1e-12);
}

TEST(BinomialPosterior, ImpossibleObservation) {
  EXPECT_THROW(binomial_posterior_exact({1.0, 0}, 2, 0.0), ImpossibleObservation);
  EXPECT_THROW(binomial_posterior_exact({0.0, 0}, 1, 0.5), ImpossibleObservation);
  EXPECT_THROW(binomial_posterior_exact({1.0, 0}, 0, 1.5), std::invalid_argument);
}

TEST(BinomialPosterior, PoissonPriorGivesShiftedThinnedPoisson) {
  for (double lam : {0.06, 0.5, 1.0, 3.0}) {
    for (std::uint32_t m = 0; m <= 3; ++m) {
      for (double r : {0.5, 0.9}) {
        const auto post = binomial_posterior_exact({lam, 0}, m, r);
        for (std::size_t k = 0; k < post.size(); ++k) {
          EXPECT_NEAR(post[k], pmf({lam * (1.0 - r), m}, k), 1e-10);
        }
      }
    }
  }
}

TEST(BinomialPosterior, OperatorFormMatchesBayesOnLattice) {
  for (double lam : {0.06, 0.5, 1.0}) {
    for (std::uint32_t d = 0; d <= 2; ++d) {
      for (std::uint32_t m = 0; m <= 3; ++m) {
        for (double r : {0.5, 0.9}) {
          const auto bayes = binomial_posterior_exact({lam, d}, m, r);
          const auto op = operator_posterior({lam, d}, m, r, 60);
          for (std::size_t k = 0; k < op.size(); ++k) {
            const double b = k < bayes.size() ? bayes[k] : 0.0;
            EXPECT_NEAR(op[k], b, 1e-10) << lam << " " << d << " " << m << " " << r << " k=" << k;
          }
        }
      }
    }
  }
}

TEST(BinomialPosterior, OperatorExampleDeltaOne) {
  const auto bayes = binomial_posterior_exact({1.0, 1}, 2, 0.5);
  const auto op = operator_posterior({1.0, 1}, 2, 0.5, 60);
  for (std::size_t k = 0; k < bayes.size(); ++k) EXPECT_NEAR(op[k], bayes[k], 1e-10);
}

TEST(GroundFunctional, AnnihilatorYieldsRate) {
  const std::vector<double> lam{0.3, 0.06, 1.7};
  for (std::uint32_t i = 0; i < 3; ++i) {
    EXPECT_DOUBLE_EQ(eval_functional(annihilate(StateIndex{i}), lam), lam[i]);
  }
}
