#include <gtest/gtest.h>

#include <random>
#include <set>

#include "fockda/behavior_hamiltonian.hpp"
#include "fockda/grid_model.hpp"
#include "support/occupation_oracle.hpp"

using namespace fockda;

namespace {

constexpr StateIndex I{0};
constexpr StateIndex J{1};
constexpr StateIndex K{2};

TermKey key(std::initializer_list<std::pair<StateIndex, std::uint32_t>> cr,
            std::initializer_list<std::pair<StateIndex, std::uint32_t>> an) {
  TermKey k;
  for (auto [i, n] : cr) k.creations.set(i, n);
  for (auto [i, n] : an) k.annihilations.set(i, n);
  return k;
}

BehaviorSpec random_spec(std::mt19937_64& rng, std::uint32_t states) {
  std::uniform_int_distribution<std::uint32_t> idx(0, states - 1);
  std::uniform_int_distribution<int> count(0, 2);
  std::uniform_real_distribution<double> rate(0.0, 1.5);
  BehaviorSpec spec;
  spec.num_states = states;
  const int actions = 1 + count(rng);
  for (int a = 0; a < actions; ++a) {
    ActionRule r{StateIndex{idx(rng)}, rate(rng), {}};
    for (int p = count(rng); p > 0; --p) r.products.push_back(StateIndex{idx(rng)});
    spec.actions.push_back(r);
  }
  for (int a = count(rng); a > 0; --a) {
    InteractionRule r{StateIndex{idx(rng)}, StateIndex{idx(rng)}, rate(rng), {}};
    for (int p = count(rng); p > 0; --p) r.products.push_back(StateIndex{idx(rng)});
    spec.interactions.push_back(r);
  }
  return spec;
}

}  // namespace

TEST(ActionTerm, Death) {
  const auto h = build_action_term({I, 0.1, {}});
  EXPECT_EQ(h.size(), 2u);
  EXPECT_DOUBLE_EQ(h.coefficient(key({}, {{I, 1}})), 0.1);
  EXPECT_DOUBLE_EQ(h.coefficient(key({{I, 1}}, {{I, 1}})), -0.1);
}

TEST(ActionTerm, Reproduction) {
  const auto h = build_action_term({I, 0.15, {I, K}});
  EXPECT_EQ(h.size(), 2u);
  EXPECT_DOUBLE_EQ(h.coefficient(key({{I, 1}, {K, 1}}, {{I, 1}})), 0.15);
  EXPECT_DOUBLE_EQ(h.coefficient(key({{I, 1}}, {{I, 1}})), -0.15);
}

TEST(ActionTerm, ZeroRateIsZeroAndNegativeRejected) {
  EXPECT_TRUE(build_action_term({I, 0.0, {J}}).is_zero());
  EXPECT_THROW(build_action_term({I, -1.0, {J}}), std::invalid_argument);
}

TEST(InteractionTerm, Predation) {
  const StateIndex pred_c{1}, prey_n{2}, pred_n{3};
  const auto h = build_interaction_term({pred_c, prey_n, 0.5, {pred_c, pred_n}});
  EXPECT_EQ(h.size(), 2u);
  EXPECT_DOUBLE_EQ(h.coefficient(key({{pred_c, 1}, {pred_n, 1}}, {{pred_c, 1}, {prey_n, 1}})), 0.5);
  EXPECT_DOUBLE_EQ(h.coefficient(key({{pred_c, 1}, {prey_n, 1}}, {{pred_c, 1}, {prey_n, 1}})), -0.5);
}

TEST(InteractionTerm, SelfInteractionCountsOrderedPairs) {
  const auto h = build_interaction_term({I, I, 1.0, {}});
  EXPECT_DOUBLE_EQ(h.coefficient(key({}, {{I, 2}})), 1.0);
  EXPECT_DOUBLE_EQ(h.coefficient(key({{I, 2}}, {{I, 2}})), -1.0);
  // The loss term acting on |n> has weight n(n-1).
  OperatorPoly loss;
  loss.add_term(key({{I, 2}}, {{I, 2}}), 1.0);
  for (std::uint32_t n = 0; n <= 6; ++n) {
    const auto out = oracle::apply(loss, oracle::basis({n}));
    const double w = out.empty() ? 0.0 : out.begin()->second;
    EXPECT_DOUBLE_EQ(w, static_cast<double>(n) * (n > 0 ? n - 1 : 0));
  }
}

TEST(InteractionTerm, ZeroRateIsZeroAndNegativeRejected) {
  EXPECT_TRUE(build_interaction_term({I, J, 0.0, {I}}).is_zero());
  EXPECT_THROW(build_interaction_term({I, J, -0.5, {I}}), std::invalid_argument);
}

TEST(BuildHamiltonian, SingleCellDeath) {
  BehaviorSpec spec{1, {{I, 0.1, {}}}, {}};
  const auto h = build_hamiltonian(spec);
  EXPECT_EQ(h.poly().size(), 2u);
  EXPECT_DOUBLE_EQ(h.poly().coefficient(key({}, {{I, 1}})), 0.1);
  EXPECT_DOUBLE_EQ(h.poly().coefficient(key({{I, 1}}, {{I, 1}})), -0.1);
}

TEST(BuildHamiltonian, EmptySpec) {
  BehaviorSpec spec{3, {}, {}};
  const auto h = build_hamiltonian(spec);
  EXPECT_TRUE(h.poly().is_zero());
  EXPECT_EQ(h.terms().size(), 0u);
}

TEST(BuildHamiltonian, RejectsOutOfRangeIndex) {
  BehaviorSpec spec{1, {{I, 0.1, {J}}}, {}};
  EXPECT_THROW(build_hamiltonian(spec), std::invalid_argument);
}

TEST(BuildHamiltonian, LookupsCoverEveryTerm) {
  std::mt19937_64 rng(2);
  const auto spec = random_spec(rng, 4);
  const auto h = build_hamiltonian(spec);
  for (std::size_t id = 0; id < h.terms().size(); ++id) {
    for (const auto& [i, n] : h.terms()[id].creations) {
      const auto& ids = h.by_index(i);
      EXPECT_NE(std::find(ids.begin(), ids.end(), id), ids.end());
    }
  }
}

TEST(GridModel, RuleCountForThirtyTwoSquare) {
  PredatorPreyModel model;
  model.grid.width = 32;
  model.grid.height = 32;
  const auto spec = build_predator_prey_spec(model);
  EXPECT_EQ(spec.rule_count(), 1024u * 18u);
  EXPECT_EQ(spec.num_states, 2048u);
}

TEST(GridModel, WalledCornerOmitsOffGridRules) {
  PredatorPreyModel model;
  model.grid = {2, 2, Boundary::kWalled};
  const auto spec = build_predator_prey_spec(model);
  // Each corner cell has two neighbours: 1 + 2 + 2 prey rules, 1 + 2 + 2 predator rules.
  EXPECT_EQ(spec.rule_count(), 4u * 10u);
}

TEST(GridModel, IndexEncoding) {
  GridGeometry g{5, 3, Boundary::kTorus};
  EXPECT_EQ(g.index(2, 1, Species::kPredator).id, ((1u * 5u) + 2u) * 2u + 1u);
  const auto c = g.cell(StateIndex{23});
  EXPECT_EQ(c.x, 1u);
  EXPECT_EQ(c.y, 2u);
  EXPECT_EQ(c.species, Species::kPredator);
}

TEST(GridModel, TorusWrapsNeighbours) {
  GridGeometry g{4, 4, Boundary::kTorus};
  std::set<std::array<std::uint32_t, 2>> seen;
  for (const auto& n : g.neighbours(0, 0)) {
    ASSERT_TRUE(n.has_value());
    seen.insert(*n);
  }
  const std::set<std::array<std::uint32_t, 2>> want{{0, 3}, {0, 1}, {3, 0}, {1, 0}};
  EXPECT_EQ(seen, want);
}

TEST(GridModel, RateSplitAndPredationOutcome) {
  PredatorPreyModel model;
  model.grid = {3, 3, Boundary::kTorus};
  auto spec = build_predator_prey_spec(model);
  const auto& g = model.grid;
  const StateIndex prey = g.index(1, 1, Species::kPrey);
  const StateIndex pred = g.index(1, 1, Species::kPredator);
  double move_total = 0.0;
  for (const auto& a : spec.actions) {
    if (a.subject == prey && a.products.size() == 1) move_total += a.rate;
  }
  EXPECT_DOUBLE_EQ(move_total, 1.0);
  for (const auto& r : spec.interactions) {
    if (r.subject != pred) continue;
    const auto victim = g.cell(r.partner);
    ASSERT_EQ(r.products.size(), 2u);
    EXPECT_EQ(r.products[0], pred);
    EXPECT_EQ(r.products[1], g.index(victim.x, victim.y, Species::kPredator));
    EXPECT_DOUBLE_EQ(r.rate, 0.5);
  }

  model.split = RateSplit::kPerDirection;
  model.outcome = PredationOutcome::kOffspringOnPredatorSquare;
  spec = build_predator_prey_spec(model);
  move_total = 0.0;
  for (const auto& a : spec.actions) {
    if (a.subject == prey && a.products.size() == 1) move_total += a.rate;
  }
  EXPECT_DOUBLE_EQ(move_total, 4.0);
  for (const auto& r : spec.interactions) {
    if (r.subject == pred) EXPECT_EQ(r.products[1], pred);
  }
}

TEST(GridModel, ParseNames) {
  EXPECT_EQ(parse_boundary("walled"), Boundary::kWalled);
  EXPECT_EQ(parse_rate_split("per_direction"), RateSplit::kPerDirection);
  EXPECT_EQ(parse_predation_outcome("predator_square"), PredationOutcome::kOffspringOnPredatorSquare);
  EXPECT_THROW(parse_boundary("sphere"), std::invalid_argument);
  EXPECT_EQ(to_string(parse_rate_split(to_string(RateSplit::kTotal))), "total");
}

TEST(GridModel, HamiltonianTermCountSixteenSquare) {
  PredatorPreyModel model;
  const auto h = build_hamiltonian(build_predator_prey_spec(model));
  // Per cell: prey death/move/birth share the a^dag a loss term (1 + 1 + 4 + 4),
  // predator death/move share theirs (1 + 1 + 4), and 4 predations carry 2 terms each.
  EXPECT_EQ(h.terms().size(), 256u * 24u);
}

TEST(SpecDump, GoldenTwoByOneWalled) {
  PredatorPreyModel model;
  model.grid = {2, 1, Boundary::kWalled};
  const std::string want =
      "states 4\n"
      "action 0 0.10000000000000001 ->\n"
      "action 0 0.037499999999999999 -> 0 2\n"
      "action 0 0.25 -> 2\n"
      "action 1 0.10000000000000001 ->\n"
      "action 1 0.25 -> 3\n"
      "action 2 0.10000000000000001 ->\n"
      "action 2 0.037499999999999999 -> 2 0\n"
      "action 2 0.25 -> 0\n"
      "action 3 0.10000000000000001 ->\n"
      "action 3 0.25 -> 1\n"
      "interaction 1 2 0.5 -> 1 3\n"
      "interaction 3 0 0.5 -> 3 1\n";
  EXPECT_EQ(dump_spec(build_predator_prey_spec(model)), want);
}

TEST(CommutatorWithH, PureDeath) {
  BehaviorSpec spec{1, {{I, 0.1, {}}}, {}};
  const auto h = build_hamiltonian(spec);
  const auto c = commutator_with_H(annihilate(I), h);
  EXPECT_EQ(c.size(), 1u);
  EXPECT_NEAR(c.coefficient(key({}, {{I, 1}})), -0.1, 1e-15);
}

TEST(CommutatorWithH, PureDeathAgainstOracle) {
  BehaviorSpec spec{1, {{I, 0.1, {}}}, {}};
  const auto h = build_hamiltonian(spec);
  const auto c = commutator_with_H(annihilate(I), h);
  for (std::uint32_t n = 0; n <= 12; ++n) {
    const auto s = oracle::basis({n});
    auto want = oracle::apply(annihilate(I), oracle::apply(h.poly(), s));
    for (const auto& [occ, v] : oracle::apply(h.poly(), oracle::apply(annihilate(I), s))) want[occ] -= v;
    EXPECT_LE(oracle::max_difference(want, oracle::apply(c, s)), 1e-12);
  }
}

TEST(CommutatorWithH, DisjointSupportIsZero) {
  BehaviorSpec spec{3, {{K, 0.7, {K, K}}, {K, 0.2, {}}}, {}};
  const auto h = build_hamiltonian(spec);
  EXPECT_TRUE(commutator_with_H(annihilate(I), h).is_zero());
  EXPECT_TRUE(commutator_with_H(multiply(annihilate(I), annihilate(J)), h).is_zero());
}

TEST(CommutatorWithH, MatchesFullCommutatorOnRandomInputs) {
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<std::uint32_t> idx(0, 3);
  std::uniform_int_distribution<std::uint32_t> power(0, 2);
  std::uniform_real_distribution<double> surv(0.1, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    const auto h = build_hamiltonian(random_spec(rng, 4));
    OperatorPoly x;
    for (int t = 0; t < 3; ++t) {
      TermKey k;
      k.annihilations.combine(StateIndex{idx(rng)}, power(rng));
      k.annihilations.combine(StateIndex{idx(rng)}, power(rng));
      if (power(rng) == 0) k.lg.set(StateIndex{idx(rng)}, surv(rng));
      x.add_term(k, 1.0 + t);
    }
    const auto fast = commutator_with_H(x, h);
    const auto full = commutator(x, h.poly());
    EXPECT_LE((fast - full).max_abs_coeff(), 1e-12 * std::max(1.0, full.max_abs_coeff()));
  }
}

TEST(Conservation, HamiltonianPreservesMassOnRandomSpecs) {
  std::mt19937_64 rng(23);
  std::uniform_int_distribution<std::uint32_t> power(0, 3);
  std::uniform_real_distribution<double> lam(0.0, 2.0);
  for (int trial = 0; trial < 50; ++trial) {
    const std::uint32_t states = 1 + trial % 4;
    const auto h = build_hamiltonian(random_spec(rng, states));
    std::vector<double> lambdas(states);
    for (auto& l : lambdas) l = lam(rng);
    TermKey psi;
    for (std::uint32_t i = 0; i < states; ++i) psi.creations.set(StateIndex{i}, power(rng));
    const auto state = OperatorPoly::from_term({1.0, psi});
    EXPECT_NEAR(eval_functional(multiply(h.poly(), state), lambdas), 0.0, 1e-10) << trial;
  }
}
