#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "tdr/common.hpp"
#include "tdr/core.hpp"
#include "tdr/estimators.hpp"
#include "tdr/rng.hpp"
#include "tdr/synthgen.hpp"
#include "tdr/targeting.hpp"

namespace tdr {

// A fully known world: exposure probability, conditional error mean and
// variance per pair. Nothing is estimated, so every closed form is exact.
struct MCWorld {
  PairSpace space{1, 1};
  PairArray p_true;
  PairArray g_true;  // E[e | x]
  PairArray sigma2;  // Var(e | x)

  double ideal() const { return mean(g_true); }
};

struct MCWorldConfig {
  double p_lo = 0.2;
  double p_hi = 0.9;
  double low_p = 0.05;      // propensity pinned on the hard slice; <= 0 disables
  double low_p_share = 0.05;  // fraction of pairs pinned at low_p
  double g_const = 0.5;     // constant E[e|x]; keeps the closed-form variance exact
  double sigma2_lo = 0.05;
  double sigma2_hi = 0.25;
};

inline MCWorld make_mc_world(const PairSpace& space, const MCWorldConfig& cfg,
                             const SeededRng& rng) {
  require(cfg.p_lo > 0.0 && cfg.p_hi <= 1.0 && cfg.p_lo <= cfg.p_hi, "make_mc_world: bad p range");
  require(cfg.g_const > 0.0, "make_mc_world: g must be positive");
  require(cfg.sigma2_lo >= 0.0 && cfg.sigma2_lo <= cfg.sigma2_hi, "make_mc_world: bad sigma2");
  MCWorld w;
  w.space = space;
  const std::size_t n = space.total();
  w.p_true.resize(n);
  w.g_true.assign(n, cfg.g_const);
  w.sigma2.resize(n);
  RngStream p_rng = rng.stream("mc-world-p");
  RngStream s_rng = rng.stream("mc-world-sigma2");
  const std::size_t n_low =
      cfg.low_p > 0.0
          ? static_cast<std::size_t>(std::llround(cfg.low_p_share * static_cast<double>(n)))
          : 0;
  for (std::size_t k = 0; k < n; ++k) {
    w.p_true[k] = k < n_low ? cfg.low_p : p_rng.uniform(cfg.p_lo, cfg.p_hi);
    w.sigma2[k] = s_rng.uniform(cfg.sigma2_lo, cfg.sigma2_hi);
  }
  return w;
}

// Nuisance accuracy per scenario. Corruption forms: propensities get the
// harmonic mixture toward the world's mean exposure rate; imputation gets a
// constant shift off g_true.
struct MCScenario {
  bool accurate_propensity = true;
  bool accurate_imputation = true;
  double beta = 0.5;              // mixture weight when propensities are corrupted
  double imputation_shift = 0.5;  // added to g_true when imputation is corrupted
};

struct MCEstimatorStats {
  std::string name;
  double mean = 0.0;
  double variance = 0.0;
  double se_mean = 0.0;  // sd / sqrt(R)
  double se_var = 0.0;   // variance * sqrt(2/(R-1)), normal-theory
};

struct MCReport {
  std::size_t replicates = 0;
  double ideal = 0.0;
  std::vector<MCEstimatorStats> stats;

  const MCEstimatorStats& by_name(std::string_view name) const {
    for (const auto& s : stats) {
      if (s.name == name) return s;
    }
    throw ConfigError("MCReport: no estimator named '" + std::string(name) + "'");
  }
};

inline const std::vector<std::string>& mc_estimators() {
  static const std::vector<std::string> names = {"naive", "eib", "ips", "snips", "dr", "tdr"};
  return names;
}

namespace detail {

// e | x with mean g and variance s2; gamma-shaped since errors are
// nonnegative losses. s2 = 0 degenerates to the constant g.
inline double sample_error(double g, double s2, RngStream& rng) {
  if (s2 <= 0.0) return g;
  const double shape = g * g / s2;
  const double scale = s2 / g;
  return rng.gamma(shape, scale);
}

}  // namespace detail

inline PropensityField mc_propensities(const MCWorld& world, const MCScenario& sc) {
  if (sc.accurate_propensity) {
    PropensityField f;
    f.p_hat = world.p_true;
    return f;
  }
  return noisy_propensities_mixture(world.p_true, sc.beta, mean(world.p_true));
}

inline PairArray mc_imputation(const MCWorld& world, const MCScenario& sc) {
  PairArray e_hat = world.g_true;
  if (!sc.accurate_imputation) {
    for (double& v : e_hat) v += sc.imputation_shift;
  }
  return e_hat;
}

// Resamples o and e per replicate, evaluates every estimator, and aggregates
// replicate means and variances. Worker fan-out writes into per-replicate
// slots, so the aggregation order is fixed regardless of thread count.
inline MCReport run_bias_variance(const MCWorld& world, const MCScenario& sc,
                                  std::size_t replicates, const SeededRng& rng) {
  require(replicates >= 100, "run_bias_variance: need at least 100 replicates");
  const PropensityField p_hat = mc_propensities(world, sc);
  const PairArray e_hat = mc_imputation(world, sc);
  const std::size_t n_est = mc_estimators().size();

  std::vector<std::vector<double>> draws(n_est, std::vector<double>(replicates, 0.0));
  parallel_for_indexed(replicates, [&](std::size_t rep) {
    RngStream expo = rng.stream("mc-exposure", rep);
    const PairMask o = bernoulli_sample(world.p_true, expo);
    RngStream err = rng.stream("mc-errors", rep);
    PairArray e(world.space.total());
    for (std::size_t k = 0; k < e.size(); ++k) {
      e[k] = detail::sample_error(world.g_true[k], world.sigma2[k], err);
    }

    ImputationState state(e_hat, p_hat);
    targeting_cycle(e, o, state);
    const PairArray e_tilde = targeted_imputation(state);

    draws[0][rep] = naive_loss(e, o);
    draws[1][rep] = eib_loss(e, o, e_hat);
    draws[2][rep] = ips_loss(e, o, p_hat);
    draws[3][rep] = snips_loss(e, o, p_hat);
    draws[4][rep] = dr_loss(e, o, e_hat, p_hat);
    draws[5][rep] = tdr_loss(e, o, e_tilde, p_hat);
  });

  MCReport report;
  report.replicates = replicates;
  report.ideal = world.ideal();
  const double r = static_cast<double>(replicates);
  for (std::size_t j = 0; j < n_est; ++j) {
    MCEstimatorStats s;
    s.name = mc_estimators()[j];
    s.mean = mean(draws[j]);
    s.variance = sample_variance(draws[j]);
    s.se_mean = std::sqrt(s.variance / r);
    s.se_var = s.variance * std::sqrt(2.0 / (r - 1.0));
    report.stats.push_back(std::move(s));
  }
  return report;
}

// ---------------------------------------------------------------------------
// Closed forms on the known world (accurate-nuisance scenario).

struct ClosedFormVariance {
  double ips = 0.0;
  double dr = 0.0;
  double eib = 0.0;
};

inline ClosedFormVariance closed_form_variance(const MCWorld& world) {
  Accum ips_acc, dr_acc, eib_acc, g_acc;
  const std::size_t n = world.space.total();
  for (std::size_t k = 0; k < n; ++k) {
    const double p = world.p_true[k];
    const double g = world.g_true[k];
    const double s2 = world.sigma2[k];
    ips_acc.add((s2 + g * g) / p);
    dr_acc.add(s2 / p + g * g);
    eib_acc.add(p * s2 + g * g);
    g_acc.add(g);
  }
  const double nd = static_cast<double>(n);
  const double mean_e_sq = (g_acc.value() / nd) * (g_acc.value() / nd);
  ClosedFormVariance v;
  v.ips = (ips_acc.value() / nd - mean_e_sq) / nd;
  v.dr = (dr_acc.value() / nd - mean_e_sq) / nd;
  v.eib = (eib_acc.value() / nd - mean_e_sq) / nd;
  return v;
}

struct ClosedFormBias {
  double eib = 0.0;
  double dr = 0.0;
  double tdr = 0.0;  // delta-method limit of the coupled targeting step
};

// Population biases for fixed nuisances: EIB picks up E[(1-p)(e_hat - g)],
// DR and TDR pick up E[(p - p_hat)/p_hat * (g - imputation)]. TDR's
// imputation uses the limiting eta from the targeting fit.
inline ClosedFormBias closed_form_bias(const MCWorld& world, const MCScenario& sc) {
  const PropensityField p_hat = mc_propensities(world, sc);
  const PairArray e_hat = mc_imputation(world, sc);
  const std::size_t n = world.space.total();
  const double nd = static_cast<double>(n);

  Accum eib_acc, dr_acc;
  Accum eta_num, eta_den;
  for (std::size_t k = 0; k < n; ++k) {
    const double p = world.p_true[k];
    const double ph = p_hat.p_hat[k];
    const double g = world.g_true[k];
    const double d = g - e_hat[k];
    eib_acc.add((1.0 - p) * (e_hat[k] - g));
    dr_acc.add((p - ph) / ph * d);
    const double w = 1.0 / ph - 1.0;
    eta_num.add(p * w * d);
    eta_den.add(p * w * w);
  }
  ClosedFormBias b;
  b.eib = eib_acc.value() / nd;
  b.dr = dr_acc.value() / nd;

  const double eta_bar = eta_den.value() == 0.0 ? 0.0 : eta_num.value() / eta_den.value();
  Accum tdr_acc;
  for (std::size_t k = 0; k < n; ++k) {
    const double p = world.p_true[k];
    const double ph = p_hat.p_hat[k];
    const double e_tilde = e_hat[k] + eta_bar * (1.0 / ph - 1.0);
    tdr_acc.add((p - ph) / ph * (world.g_true[k] - e_tilde));
  }
  b.tdr = tdr_acc.value() / nd;
  return b;
}

// ---------------------------------------------------------------------------
// Variance blow-up sweep: empirical variances per estimator as the hard
// slice's propensity shrinks.

struct SweepRow {
  double p_min = 0.0;
  MCReport report;
  ClosedFormVariance closed;
};

inline std::vector<SweepRow> small_propensity_sweep(const PairSpace& space,
                                                    const MCWorldConfig& base_cfg,
                                                    std::span<const double> p_min_grid,
                                                    std::size_t replicates,
                                                    const SeededRng& rng) {
  require(!p_min_grid.empty(), "small_propensity_sweep: empty grid");
  std::vector<SweepRow> rows;
  for (double p_min : p_min_grid) {
    MCWorldConfig cfg = base_cfg;
    cfg.low_p = p_min;
    const MCWorld world = make_mc_world(space, cfg, rng);
    SweepRow row;
    row.p_min = p_min;
    row.report = run_bias_variance(world, MCScenario{}, replicates, rng);
    row.closed = closed_form_variance(world);
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace tdr
