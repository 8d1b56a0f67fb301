#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "oracles.hpp"
#include "tdr/common.hpp"
#include "tdr/core.hpp"
#include "tdr/estimators.hpp"
#include "tdr/rng.hpp"
#include "tdr/targeting.hpp"

using namespace tdr;

namespace {

PropensityField field(std::vector<double> p) {
  PropensityField f;
  f.p_hat = std::move(p);
  return f;
}

struct Instance {
  std::vector<double> e;
  PairMask o;
  ImputationState state;
};

Instance random_instance(RngStream& rng, std::size_t max_n = 300) {
  Instance inst;
  const std::size_t n = 2 + rng.uniform_int(max_n);
  std::vector<double> e_hat(n), p(n);
  inst.e.resize(n);
  inst.o.resize(n);
  bool any = false;
  for (std::size_t k = 0; k < n; ++k) {
    inst.e[k] = rng.uniform(0.0, 5.0);
    e_hat[k] = rng.uniform(0.0, 5.0);
    p[k] = rng.uniform(0.05, 0.95);
    inst.o[k] = rng.bernoulli(0.5) ? 1 : 0;
    any = any || inst.o[k];
  }
  if (!any) inst.o[0] = 1;
  inst.state = ImputationState(std::move(e_hat), field(std::move(p)));
  return inst;
}

}  // namespace

TEST_CASE("targeting on a worked two-pair example") {
  // w = {1, 3}, d = {2, 1}: eta* = (1*2 + 3*1) / (1 + 9) = 0.5.
  const std::vector<double> e = {3.0, 2.0};
  const PairMask o = {1, 1};
  ImputationState state({1.0, 1.0}, field({0.5, 0.25}));

  const TargetingResult res = targeting_cycle(e, o, state);
  CHECK(res.eta_star == Catch::Approx(0.5).margin(1e-15));
  CHECK_FALSE(res.degenerate);
  CHECK(state.omega[0] == Catch::Approx(0.5).margin(1e-15));
  CHECK(state.omega[1] == Catch::Approx(1.5).margin(1e-15));
  const PairArray e_tilde = targeted_imputation(state);
  CHECK(e_tilde[0] == Catch::Approx(1.5).margin(1e-15));
  CHECK(e_tilde[1] == Catch::Approx(2.5).margin(1e-15));
  // (3 - 1.5)*1 + (2 - 2.5)*3 = 0.
  CHECK(std::abs(res.residual_correction) <= 1e-15);
}

TEST_CASE("one cycle zeroes the validity constraint on random instances") {
  RngStream rng = SeededRng(202).stream("validity");
  for (int trial = 0; trial < 150; ++trial) {
    Instance inst = random_instance(rng);
    const TargetingResult res = targeting_cycle(inst.e, inst.o, inst.state);
    double scale = mean(inst.e);
    scale = std::max(scale, 1e-3);
    REQUIRE(std::abs(res.residual_correction) <= tol::kValidityRel * scale);
    REQUIRE(std::abs(check_validity(inst.e, inst.o, inst.state)) <=
            tol::kValidityRel * scale);
  }
}

TEST_CASE("tdr equals eib on the targeted imputation after one cycle") {
  RngStream rng = SeededRng(203).stream("equal");
  for (int trial = 0; trial < 100; ++trial) {
    Instance inst = random_instance(rng);
    targeting_cycle(inst.e, inst.o, inst.state);
    const PairArray e_tilde = targeted_imputation(inst.state);
    const double t = tdr_loss(inst.e, inst.o, e_tilde, inst.state.p_hat);
    const double b = eib_loss(inst.e, inst.o, e_tilde);
    REQUIRE(std::abs(t - b) <= tol::kIdentityRel * std::max(1.0, std::abs(t)));
  }
}

TEST_CASE("an imputation that already satisfies the constraint is preserved") {
  // w = {1, 3}, d = {3, -1}: sum w d = 0 exactly, so eta* = 0 and omega stays 0.
  const std::vector<double> e = {4.0, 0.0};
  const PairMask o = {1, 1};
  ImputationState state({1.0, 1.0}, field({0.5, 0.25}));
  const PairArray e_hat_before = state.e_hat;

  const TargetingResult res = targeting_cycle(e, o, state);
  CHECK(res.eta_star == 0.0);
  const PairArray e_tilde = targeted_imputation(state);
  REQUIRE(e_tilde.size() == e_hat_before.size());
  for (std::size_t k = 0; k < e_tilde.size(); ++k) {
    REQUIRE(e_tilde[k] == e_hat_before[k]);  // bitwise
  }
}

TEST_CASE("solving again after a cycle finds nothing left to correct") {
  RngStream rng = SeededRng(204).stream("idem");
  for (int trial = 0; trial < 100; ++trial) {
    Instance inst = random_instance(rng);
    const TargetingResult first = targeting_cycle(inst.e, inst.o, inst.state);
    const TargetingResult second = solve_eta(inst.e, inst.o, inst.state);
    REQUIRE(std::abs(second.eta_star) <= 1e-10 * (std::abs(first.eta_star) + 1.0));
  }
}

TEST_CASE("closed-form eta matches golden-section minimization") {
  RngStream rng = SeededRng(205).stream("golden");
  for (int trial = 0; trial < 100; ++trial) {
    Instance inst = random_instance(rng);
    const double closed = solve_eta(inst.e, inst.o, inst.state).eta_star;
    const double oracle = oracles::golden_section_eta(inst.e, inst.o, inst.state);
    REQUIRE(std::abs(closed - oracle) <= tol::kEtaOracleAbs);
  }
}

TEST_CASE("repeated raw-residual cycles double omega instead of converging") {
  const std::vector<double> e = {3.0, 2.0, 1.0};
  const PairMask o = {1, 1, 0};
  ImputationState state({1.0, 1.0, 1.0}, field({0.5, 0.25, 0.5}));

  const TargetingResult first = targeting_cycle(e, o, state, ResidualMode::WithoutOmega);
  const PairArray omega_once = state.omega;
  const TargetingResult second = targeting_cycle(e, o, state, ResidualMode::WithoutOmega);
  CHECK(second.eta_star == first.eta_star);  // residual ignores omega, same fit
  for (std::size_t k = 0; k < state.omega.size(); ++k) {
    CHECK(state.omega[k] == Catch::Approx(2.0 * omega_once[k]).epsilon(1e-14));
  }
  // With omega in the residual the second cycle is a no-op up to rounding.
  ImputationState fixed({1.0, 1.0, 1.0}, field({0.5, 0.25, 0.5}));
  targeting_cycle(e, o, fixed, ResidualMode::WithOmega);
  const PairArray omega_ref = fixed.omega;
  const TargetingResult again = targeting_cycle(e, o, fixed, ResidualMode::WithOmega);
  CHECK(std::abs(again.eta_star) <= 1e-12);
  for (std::size_t k = 0; k < fixed.omega.size(); ++k) {
    CHECK(fixed.omega[k] == Catch::Approx(omega_ref[k]).margin(1e-12));
  }
}

TEST_CASE("omega update touches unexposed pairs too") {
  const std::vector<double> e = {2.0, 0.0};
  const PairMask o = {1, 0};
  ImputationState state({1.0, 1.0}, field({0.5, 0.2}));
  const TargetingResult res = targeting_cycle(e, o, state);
  // Only pair 0 is exposed: eta* = (1*1)/1 = 1.
  CHECK(res.eta_star == Catch::Approx(1.0).margin(1e-15));
  CHECK(state.omega[0] == Catch::Approx(1.0).margin(1e-15));
  CHECK(state.omega[1] == Catch::Approx(4.0).margin(1e-14));  // 1/0.2 - 1
}

TEST_CASE("degenerate and invalid targeting inputs") {
  const std::vector<double> e = {1.0, 2.0};

  // All exposed propensities are 1: the regressor vanishes.
  ImputationState unit({0.0, 0.0}, field({1.0, 1.0}));
  const TargetingResult res = targeting_cycle(e, PairMask{1, 1}, unit);
  CHECK(res.degenerate);
  CHECK(res.eta_star == 0.0);
  CHECK(unit.omega == PairArray{0.0, 0.0});

  ImputationState state({0.0, 0.0}, field({0.5, 0.5}));
  CHECK_THROWS_AS(solve_eta(e, PairMask{0, 0}, state), DomainError);
  CHECK_THROWS_AS(apply_targeting(state, std::nan("")), std::runtime_error);
  CHECK_THROWS_AS(ImputationState({1.0}, field({0.5, 0.5})), std::runtime_error);
}
