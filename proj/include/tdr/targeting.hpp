#pragma once

#include <cmath>
#include <span>

#include "tdr/common.hpp"
#include "tdr/core.hpp"

namespace tdr {

// Imputation split into the parametric part e_hat and the accumulated
// nonparametric correction omega. The effective imputation at every pair is
// e_hat + omega; omega starts at zero and grows by eta * (1/p_hat - 1) per
// targeting step.
struct ImputationState {
  PairArray e_hat;
  PairArray omega;
  PropensityField p_hat;

  ImputationState() = default;
  ImputationState(PairArray e_hat_in, PropensityField p_hat_in)
      : e_hat(std::move(e_hat_in)), omega(e_hat.size(), 0.0), p_hat(std::move(p_hat_in)) {
    require(e_hat.size() == p_hat.p_hat.size(), "ImputationState: size mismatch");
  }
};

struct TargetingResult {
  double eta_star = 0.0;
  double residual_correction = 0.0;  // value of the validity constraint after the update
  bool degenerate = false;           // all exposed propensities were 1, regressor vanished
};

// Whether the one-parameter fit regresses on e - e_hat - omega (fixed-point
// behaviour across repeated cycles) or on the raw e - e_hat.
enum class ResidualMode { WithOmega, WithoutOmega };

// |D|^-1 sum_D o (e - e_hat - omega) (1 - p_hat)/p_hat. Zero is the validity
// constraint the targeting step enforces.
inline double check_validity(std::span<const double> e, std::span<const std::uint8_t> o,
                             const ImputationState& state) {
  Accum acc;
  for (std::size_t k = 0; k < e.size(); ++k) {
    if (o[k]) {
      const double p = state.p_hat.p_hat[k];
      acc.add((e[k] - state.e_hat[k] - state.omega[k]) * (1.0 - p) / p);
    }
  }
  return acc.value() / static_cast<double>(e.size());
}

// Closed-form least squares for the one-parameter model over exposed pairs:
// eta* = sum_O w d / sum_O w^2 with w = 1/p_hat - 1 and
// d = e - e_hat [- omega].
inline TargetingResult solve_eta(std::span<const double> e, std::span<const std::uint8_t> o,
                                 const ImputationState& state,
                                 ResidualMode mode = ResidualMode::WithOmega) {
  Accum num, den;
  std::size_t exposed = 0;
  for (std::size_t k = 0; k < e.size(); ++k) {
    if (!o[k]) continue;
    ++exposed;
    const double p = state.p_hat.p_hat[k];
    const double w = 1.0 / p - 1.0;
    double d = e[k] - state.e_hat[k];
    if (mode == ResidualMode::WithOmega) d -= state.omega[k];
    num.add(w * d);
    den.add(w * w);
  }
  if (exposed == 0) throw DomainError("solve_eta: empty exposed set");
  TargetingResult res;
  if (den.value() == 0.0) {
    res.eta_star = 0.0;
    res.degenerate = true;
  } else {
    res.eta_star = num.value() / den.value();
  }
  return res;
}

// omega <- omega + eta (1/p_hat - 1) at every pair in D, not only exposed.
inline void apply_targeting(ImputationState& state, double eta) {
  require(std::isfinite(eta), "apply_targeting: eta must be finite");
  for (std::size_t k = 0; k < state.omega.size(); ++k) {
    state.omega[k] += eta * (1.0 / state.p_hat.p_hat[k] - 1.0);
  }
}

// The targeted imputation e_tilde = e_hat + omega.
inline PairArray targeted_imputation(const ImputationState& state) {
  PairArray out(state.e_hat.size());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = state.e_hat[k] + state.omega[k];
  return out;
}

// One full targeting cycle; fills residual_correction with the post-update
// validity value.
inline TargetingResult targeting_cycle(std::span<const double> e, std::span<const std::uint8_t> o,
                                       ImputationState& state,
                                       ResidualMode mode = ResidualMode::WithOmega) {
  TargetingResult res = solve_eta(e, o, state, mode);
  if (!res.degenerate) apply_targeting(state, res.eta_star);
  res.residual_correction = check_validity(e, o, state);
  return res;
}

}  // namespace tdr
