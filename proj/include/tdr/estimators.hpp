#pragma once

#include <cmath>
#include <span>
#include <string>

#include "tdr/common.hpp"
#include "tdr/core.hpp"

namespace tdr {

// Inputs shared by the loss estimators. e is the per-pair prediction error
// (defined on all of D in semi-synthetic mode, on exposed pairs otherwise);
// e_hat is whatever imputation the caller brings. The kernels are
// loss-agnostic: e can be a squared error, a cross entropy, anything summable.
struct LossInputs {
  std::span<const double> e;
  std::span<const double> e_hat;
  std::span<const std::uint8_t> o;
  const PropensityField* p_hat = nullptr;
};

struct EstimateReport {
  std::string estimator;
  double loss = 0.0;
  double ideal = 0.0;
  double relative_error = 0.0;
};

inline double ideal_loss(std::span<const double> e) { return mean(e); }

// Mean over exposed pairs only.
inline double naive_loss(std::span<const double> e, std::span<const std::uint8_t> o) {
  Accum num;
  std::size_t exposed = 0;
  for (std::size_t k = 0; k < e.size(); ++k) {
    if (o[k]) {
      num.add(e[k]);
      ++exposed;
    }
  }
  if (exposed == 0) throw DomainError("naive_loss: no exposed pairs");
  return num.value() / static_cast<double>(exposed);
}

inline double ips_loss(std::span<const double> e, std::span<const std::uint8_t> o,
                       const PropensityField& p) {
  Accum acc;
  for (std::size_t k = 0; k < e.size(); ++k) {
    if (o[k]) {
      if (!(p.p_hat[k] > 0.0)) throw DomainError("ips_loss: nonpositive propensity on exposed pair");
      acc.add(e[k] / p.p_hat[k]);
    }
  }
  return acc.value() / static_cast<double>(e.size());
}

// Self-normalized IPS: weighted sum divided by the sum of weights.
inline double snips_loss(std::span<const double> e, std::span<const std::uint8_t> o,
                         const PropensityField& p) {
  Accum num, den;
  for (std::size_t k = 0; k < e.size(); ++k) {
    if (o[k]) {
      if (!(p.p_hat[k] > 0.0)) throw DomainError("snips_loss: nonpositive propensity on exposed pair");
      const double w = 1.0 / p.p_hat[k];
      num.add(e[k] * w);
      den.add(w);
    }
  }
  if (den.value() <= 0.0) throw DomainError("snips_loss: zero weight normalizer");
  return num.value() / den.value();
}

inline double eib_loss(std::span<const double> e, std::span<const std::uint8_t> o,
                       std::span<const double> e_hat) {
  Accum acc;
  for (std::size_t k = 0; k < e.size(); ++k) {
    acc.add(o[k] ? e[k] : e_hat[k]);
  }
  return acc.value() / static_cast<double>(e.size());
}

inline double dr_loss(std::span<const double> e, std::span<const std::uint8_t> o,
                      std::span<const double> e_hat, const PropensityField& p) {
  Accum acc;
  for (std::size_t k = 0; k < e.size(); ++k) {
    acc.add(e_hat[k]);
    if (o[k]) {
      if (!(p.p_hat[k] > 0.0)) throw DomainError("dr_loss: nonpositive propensity on exposed pair");
      acc.add((e[k] - e_hat[k]) / p.p_hat[k]);
    }
  }
  return acc.value() / static_cast<double>(e.size());
}

// |D|^-1 sum o (e - e_hat) (1 - p_hat)/p_hat; dr_loss == eib_loss + this.
inline double correction_term(std::span<const double> e, std::span<const std::uint8_t> o,
                              std::span<const double> e_hat, const PropensityField& p) {
  Accum acc;
  for (std::size_t k = 0; k < e.size(); ++k) {
    if (o[k]) {
      if (!(p.p_hat[k] > 0.0)) throw DomainError("correction_term: nonpositive propensity");
      acc.add((e[k] - e_hat[k]) * (1.0 - p.p_hat[k]) / p.p_hat[k]);
    }
  }
  return acc.value() / static_cast<double>(e.size());
}

// Same functional form as DR with the targeted imputation substituted.
inline double tdr_loss(std::span<const double> e, std::span<const std::uint8_t> o,
                       std::span<const double> e_tilde, const PropensityField& p) {
  return dr_loss(e, o, e_tilde, p);
}

inline double relative_error(double est, double ideal) {
  if (!(ideal > 0.0)) throw DomainError("relative_error: ideal loss must be positive");
  return std::abs(ideal - est) / ideal;
}

}  // namespace tdr
