#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tdr/common.hpp"
#include "tdr/core.hpp"
#include "tdr/datasets.hpp"
#include "tdr/estimators.hpp"
#include "tdr/models.hpp"
#include "tdr/rng.hpp"
#include "tdr/targeting.hpp"

namespace tdr {

enum class Scenario { One, Three, Five, Rotate, Skew, Crs };

// Canonical five-point conversion rates; every r_true is one of these exact
// doubles, so scenario code may compare levels instead of drifted sums.
inline constexpr std::array<double, 5> kFivePointValues = {0.1, 0.3, 0.5, 0.7, 0.9};

namespace detail {

inline std::size_t five_point_level(double r) {
  const long long lvl = std::llround((r - 0.1) / 0.2);
  if (lvl < 0 || lvl > 4 || std::abs(r - kFivePointValues[static_cast<std::size_t>(lvl)]) > 1e-9) {
    throw DomainError("five_point_level: value outside the five-point set");
  }
  return static_cast<std::size_t>(lvl);
}

}  // namespace detail

inline constexpr std::array<Scenario, 6> kAllScenarios = {
    Scenario::One, Scenario::Three, Scenario::Five,
    Scenario::Rotate, Scenario::Skew, Scenario::Crs};

inline const char* scenario_name(Scenario s) {
  switch (s) {
    case Scenario::One: return "ONE";
    case Scenario::Three: return "THREE";
    case Scenario::Five: return "FIVE";
    case Scenario::Rotate: return "ROTATE";
    case Scenario::Skew: return "SKEW";
    case Scenario::Crs: return "CRS";
  }
  throw ConfigError("scenario_name: unknown scenario");
}

inline Scenario parse_scenario(std::string_view name) {
  for (Scenario s : kAllScenarios) {
    if (name == scenario_name(s)) return s;
  }
  throw ConfigError("parse_scenario: unknown scenario '" + std::string(name) + "'");
}

struct SynthConfig {
  double alpha = 0.5;           // exposure decay base
  double p_base = 1.0;          // scale of p_{u,i} = p_base * alpha^max(1, 5-R)
  double target_obs_rate = 0.05;  // > 0 rescales p_base so mean(p) hits this
  std::size_t n_replicates = 20;
};

// ---------------------------------------------------------------------------
// Rating-matrix completion from sparse five-scale triples.

struct CompletionConfig {
  std::size_t rank = 32;
  AdamConfig adam{0.05, 0.9, 0.999, 1e-8};
  double weight_decay = 1e-5;
  std::size_t max_epochs = 200;
  std::size_t patience = 5;
  double holdout_frac = 0.1;
  std::size_t batch = 1024;
  double r_min = 1.0;
  double r_max = 5.0;
};

namespace detail {

inline int round_to_scale(double x, double r_min, double r_max) {
  const double r = std::round(x);
  return static_cast<int>(std::min(std::max(r, r_min), r_max));
}

}  // namespace detail

// Fits a squared-loss factorization to the observed triples, early-stops on a
// held-out slice, and rounds dense predictions to the nearest integer rating.
// Rows or columns with no observations fall back to the global mean.
inline std::vector<int> complete_ratings(const PairSpace& space,
                                         std::span<const std::size_t> users,
                                         std::span<const std::size_t> items,
                                         std::span<const double> ratings,
                                         const CompletionConfig& cfg, const SeededRng& rng) {
  const std::size_t n = users.size();
  require(n == items.size() && n == ratings.size(), "complete_ratings: triple size mismatch");
  if (n == 0) throw DataError("complete_ratings: no observed ratings");
  for (std::size_t k = 0; k < n; ++k) {
    require(users[k] < space.n_users && items[k] < space.n_items,
            "complete_ratings: id out of range");
    if (ratings[k] < cfg.r_min || ratings[k] > cfg.r_max) {
      throw DataError("complete_ratings: rating outside scale");
    }
  }

  Accum rsum;
  for (double r : ratings) rsum.add(r);
  const double global_mean = rsum.value() / static_cast<double>(n);

  std::vector<std::uint8_t> user_seen(space.n_users, 0), item_seen(space.n_items, 0);
  for (std::size_t k = 0; k < n; ++k) {
    user_seen[users[k]] = 1;
    item_seen[items[k]] = 1;
  }

  RngStream init_rng = rng.stream("completion-init");
  MFParams model = init_mf(space.n_users, space.n_items, cfg.rank, Head::Linear, init_rng);
  model.w[model.mu_off()] = global_mean;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  RngStream split_rng = rng.stream("completion-holdout");
  split_rng.shuffle(order);
  const std::size_t n_hold = n >= 10 ? static_cast<std::size_t>(
                                           std::floor(cfg.holdout_frac * static_cast<double>(n)))
                                     : 0;
  std::vector<std::size_t> hold(order.begin(), order.begin() + n_hold);
  std::vector<std::size_t> train(order.begin() + n_hold, order.end());
  require(!train.empty(), "complete_ratings: holdout swallowed all ratings");

  auto holdout_mse = [&]() {
    if (hold.empty()) return 0.0;
    Accum acc;
    for (std::size_t k : hold) {
      const double d = mf_value(model, users[k], items[k]) - ratings[k];
      acc.add(d * d);
    }
    return acc.value() / static_cast<double>(hold.size());
  };

  AdamState opt(model.size());
  std::vector<double> grad(model.size(), 0.0);
  RngStream epoch_rng = rng.stream("completion-epochs");
  std::vector<double> best_w = model.w;
  double best_mse = holdout_mse();
  std::size_t since_best = 0;

  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    epoch_rng.shuffle(train);
    for (std::size_t start = 0; start < train.size(); start += cfg.batch) {
      const std::size_t stop = std::min(start + cfg.batch, train.size());
      std::fill(grad.begin(), grad.end(), 0.0);
      const double inv_b = 1.0 / static_cast<double>(stop - start);
      for (std::size_t j = start; j < stop; ++j) {
        const std::size_t k = train[j];
        const double err = mf_value(model, users[k], items[k]) - ratings[k];
        mf_backward(model, users[k], items[k], 2.0 * err * inv_b, grad);
      }
      for (std::size_t k = 0; k < grad.size(); ++k) grad[k] += cfg.weight_decay * model.w[k];
      adam_step(opt, model.w, grad, cfg.adam);
    }
    if (!hold.empty()) {
      const double cur = holdout_mse();
      if (cur < best_mse) {
        best_mse = cur;
        best_w = model.w;
        since_best = 0;
      } else if (++since_best > cfg.patience) {
        break;
      }
    }
  }
  if (!hold.empty()) model.w = best_w;

  std::vector<int> out(space.total());
  for (std::size_t u = 0; u < space.n_users; ++u) {
    for (std::size_t i = 0; i < space.n_items; ++i) {
      const double pred = (user_seen[u] && item_seen[i]) ? mf_value(model, u, i) : global_mean;
      out[space.index(u, i)] = detail::round_to_scale(pred, cfg.r_min, cfg.r_max);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Built-in dense rating source for fully offline runs: a low-rank score
// matrix bucketed by global quantiles so the five-scale marginal matches a
// chosen distribution.

struct BuiltinRatingsConfig {
  std::size_t latent_rank = 4;
  double noise_sd = 0.3;
  // Five-scale marginal, ratings 1..5. The default mirrors a completed
  // (imputation-filled) rating matrix, which is dominated by low ratings.
  std::array<double, 5> marginal = {0.76, 0.01, 0.21, 0.01, 0.01};
};

inline std::vector<int> builtin_ratings(const PairSpace& space, const BuiltinRatingsConfig& cfg,
                                        const SeededRng& rng) {
  double frac_sum = 0.0;
  for (double f : cfg.marginal) {
    require(f >= 0.0, "builtin_ratings: negative marginal");
    frac_sum += f;
  }
  require(std::abs(frac_sum - 1.0) < 1e-9, "builtin_ratings: marginal must sum to 1");

  RngStream latent = rng.stream("builtin-latent");
  const std::size_t r = cfg.latent_rank;
  std::vector<double> a(space.n_users * r), b(space.n_items * r);
  for (double& x : a) x = latent.normal();
  for (double& x : b) x = latent.normal();

  const std::size_t total = space.total();
  std::vector<double> score(total);
  RngStream noise = rng.stream("builtin-noise");
  const double inv_sqrt_r = 1.0 / std::sqrt(static_cast<double>(r));
  for (std::size_t u = 0; u < space.n_users; ++u) {
    for (std::size_t i = 0; i < space.n_items; ++i) {
      Accum dot;
      for (std::size_t k = 0; k < r; ++k) dot.add(a[u * r + k] * b[i * r + k]);
      score[space.index(u, i)] = dot.value() * inv_sqrt_r + cfg.noise_sd * noise.normal();
    }
  }

  std::vector<std::size_t> order(total);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
    if (score[x] != score[y]) return score[x] < score[y];
    return x < y;
  });

  std::vector<int> out(total);
  double cum = 0.0;
  std::size_t lo = 0;
  for (int rating = 1; rating <= 5; ++rating) {
    cum += cfg.marginal[static_cast<std::size_t>(rating - 1)];
    const std::size_t hi =
        rating == 5 ? total
                    : static_cast<std::size_t>(std::llround(cum * static_cast<double>(total)));
    for (std::size_t j = lo; j < hi; ++j) out[order[j]] = rating;
    lo = hi;
  }
  return out;
}

// ---------------------------------------------------------------------------
// World construction: exposure propensities and five-point conversion rates.

inline PairArray assign_propensities(std::span<const int> R, const SynthConfig& cfg) {
  require(cfg.alpha > 0.0 && cfg.alpha < 1.0, "assign_propensities: alpha outside (0,1)");
  require(cfg.p_base > 0.0, "assign_propensities: p_base must be positive");
  PairArray p(R.size());
  Accum shape_sum;
  for (std::size_t k = 0; k < R.size(); ++k) {
    require(R[k] >= 1 && R[k] <= 5, "assign_propensities: rating outside 1..5");
    const double expo = std::max(1.0, 5.0 - static_cast<double>(R[k]));
    p[k] = std::pow(cfg.alpha, expo);
    shape_sum.add(p[k]);
  }
  double scale = cfg.p_base;
  if (cfg.target_obs_rate > 0.0) {
    require(cfg.target_obs_rate < 1.0, "assign_propensities: target rate outside (0,1)");
    scale = cfg.target_obs_rate * static_cast<double>(R.size()) / shape_sum.value();
  }
  for (double& x : p) {
    x = std::min(x * scale, 1.0);
    if (x <= 0.0) throw ConfigError("assign_propensities: nonpositive propensity");
  }
  return p;
}

inline PairArray map_to_rtrue(std::span<const int> R) {
  PairArray r(R.size());
  for (std::size_t k = 0; k < R.size(); ++k) {
    require(R[k] >= 1 && R[k] <= 5, "map_to_rtrue: rating outside 1..5");
    r[k] = kFivePointValues[static_cast<std::size_t>(R[k] - 1)];
  }
  return r;
}

// ---------------------------------------------------------------------------
// The six prediction-matrix scenarios.

struct PredictionMatrix {
  Scenario scenario = Scenario::One;
  PairArray r_hat;
};

namespace detail {

// Flips entries at `from_level` over to 0.9, one per r_true = 0.9 entry,
// drawn uniformly without replacement; flips the whole pool when it is
// smaller than that count.
inline void flip_scenario(PairArray& r_hat, std::span<const double> r_true,
                          std::size_t from_level, RngStream& rng) {
  std::vector<std::size_t> pool;
  std::size_t n_flip = 0;
  for (std::size_t k = 0; k < r_true.size(); ++k) {
    const std::size_t lvl = five_point_level(r_true[k]);
    if (lvl == from_level) pool.push_back(k);
    if (lvl == 4) ++n_flip;
  }
  n_flip = std::min(n_flip, pool.size());
  for (std::size_t j = 0; j < n_flip; ++j) {
    const std::size_t pick = j + rng.uniform_int(pool.size() - j);
    std::swap(pool[j], pool[pick]);
    r_hat[pool[j]] = 0.9;
  }
}

}  // namespace detail

inline PredictionMatrix make_prediction_matrix(Scenario scenario,
                                               std::span<const double> r_true, RngStream& rng) {
  PredictionMatrix pm;
  pm.scenario = scenario;
  pm.r_hat.assign(r_true.begin(), r_true.end());
  switch (scenario) {
    case Scenario::One:
      detail::flip_scenario(pm.r_hat, r_true, 0, rng);
      break;
    case Scenario::Three:
      detail::flip_scenario(pm.r_hat, r_true, 1, rng);
      break;
    case Scenario::Five:
      detail::flip_scenario(pm.r_hat, r_true, 2, rng);
      break;
    case Scenario::Rotate:
      for (std::size_t k = 0; k < pm.r_hat.size(); ++k) {
        const std::size_t lvl = detail::five_point_level(r_true[k]);
        pm.r_hat[k] = lvl >= 1 ? kFivePointValues[lvl - 1] : 0.9;
      }
      break;
    case Scenario::Skew:
      for (std::size_t k = 0; k < pm.r_hat.size(); ++k) {
        const double sd = (1.0 - r_true[k]) / 2.0;
        pm.r_hat[k] = rng.truncated_normal(r_true[k], sd, 0.1, 0.9);
      }
      break;
    case Scenario::Crs:
      for (std::size_t k = 0; k < pm.r_hat.size(); ++k) {
        pm.r_hat[k] = detail::five_point_level(r_true[k]) <= 2 ? 0.2 : 0.6;
      }
      break;
  }
  return pm;
}

// ---------------------------------------------------------------------------
// Learned-propensity noise: harmonic mixture between the truth and the
// empirical exposure rate, one mixing weight per replicate.

inline PropensityField noisy_propensities_mixture(std::span<const double> p_true, double beta,
                                                  double p_e) {
  require(beta >= 0.0 && beta <= 1.0, "noisy_propensities: beta outside [0,1]");
  require(p_e > 0.0, "noisy_propensities: empirical exposure rate must be positive");
  PropensityField f;
  f.p_hat.resize(p_true.size());
  for (std::size_t k = 0; k < p_true.size(); ++k) {
    require(p_true[k] > 0.0 && p_true[k] <= 1.0, "noisy_propensities: p outside (0,1]");
    f.p_hat[k] = 1.0 / ((1.0 - beta) / p_true[k] + beta / p_e);
  }
  return f;
}

inline PropensityField noisy_propensities(std::span<const double> p_true,
                                          std::span<const std::uint8_t> o, RngStream& rng) {
  require(p_true.size() == o.size(), "noisy_propensities: size mismatch");
  Accum osum;
  for (std::uint8_t v : o) osum.add(static_cast<double>(v));
  const double p_e = osum.value() / static_cast<double>(o.size());
  if (p_e == 0.0) throw DomainError("noisy_propensities: no exposures");
  return noisy_propensities_mixture(p_true, rng.uniform(), p_e);
}

// ---------------------------------------------------------------------------
// Per-pair errors and the shared imputed error.

// e_{u,i} = CE(r_{u,i}, r_hat_{u,i}) for every pair.
inline PairArray pair_errors(std::span<const double> r, std::span<const double> r_hat) {
  require(r.size() == r_hat.size(), "pair_errors: size mismatch");
  PairArray e(r.size());
  for (std::size_t k = 0; k < r.size(); ++k) {
    if (!(r_hat[k] > 0.0 && r_hat[k] < 1.0)) throw DomainError("pair_errors: r_hat outside (0,1)");
    e[k] = cross_entropy(r[k], r_hat[k]);
  }
  return e;
}

// e_hat_{u,i} = CE(r_bar, r_hat_{u,i}) where r_bar is the inverse-propensity
// weighted mean of the exposed labels.
inline PairArray shared_imputed_errors(std::span<const double> r,
                                       std::span<const std::uint8_t> o,
                                       const PropensityField& p_hat,
                                       std::span<const double> r_hat) {
  require(r.size() == o.size() && r.size() == p_hat.p_hat.size() && r.size() == r_hat.size(),
          "shared_imputed_errors: size mismatch");
  Accum wsum, rsum;
  std::size_t exposed = 0;
  for (std::size_t k = 0; k < r.size(); ++k) {
    if (!o[k]) continue;
    ++exposed;
    const double w = 1.0 / p_hat.p_hat[k];
    wsum.add(w);
    rsum.add(w * r[k]);
  }
  if (exposed == 0) throw DomainError("shared_imputed_errors: empty exposed set");
  const double r_bar = rsum.value() / wsum.value();
  PairArray e_hat(r.size());
  for (std::size_t k = 0; k < r.size(); ++k) {
    if (!(r_hat[k] > 0.0 && r_hat[k] < 1.0)) {
      throw DomainError("shared_imputed_errors: r_hat outside (0,1)");
    }
    e_hat[k] = cross_entropy(r_bar, r_hat[k]);
  }
  return e_hat;
}

// ---------------------------------------------------------------------------
// Whole-world assembly and the per-replicate draw.

struct SynthWorld {
  PairSpace space{1, 1};
  std::vector<int> R;     // completed five-scale ratings
  PairArray r_true;       // conversion rates in {0.1,...,0.9}
  PairArray p_true;       // exposure propensities
};

inline SynthWorld make_world(const PairSpace& space, std::vector<int> R,
                             const SynthConfig& cfg) {
  SynthWorld w{space, std::move(R), {}, {}};
  require(w.R.size() == space.total(), "make_world: rating matrix size mismatch");
  w.r_true = map_to_rtrue(w.R);
  w.p_true = assign_propensities(w.R, cfg);
  return w;
}

inline SynthWorld make_builtin_world(const PairSpace& space, const SynthConfig& cfg,
                                     const BuiltinRatingsConfig& ratings_cfg,
                                     const SeededRng& rng) {
  return make_world(space, builtin_ratings(space, ratings_cfg, rng), cfg);
}

// One Monte-Carlo trial: a fresh prediction matrix, exposures, binary labels,
// noisy propensities, and the error arrays every estimator consumes.
struct ScenarioReplicate {
  PredictionMatrix prediction;
  PairMask o;
  PairArray r;       // binary conversion labels, sampled at every pair
  PropensityField p_hat;
  double beta = 0.0;
  PairArray e;       // CE(r, r_hat)
  PairArray e_hat;   // shared imputed error
};

inline ScenarioReplicate make_replicate(const SynthWorld& world, Scenario scenario,
                                        const SeededRng& rng, std::uint64_t rep) {
  ScenarioReplicate out;
  RngStream scen_rng = rng.stream("scenario", rep);
  out.prediction = make_prediction_matrix(scenario, world.r_true, scen_rng);

  RngStream expo_rng = rng.stream("exposure", rep);
  out.o = bernoulli_sample(world.p_true, expo_rng);

  RngStream label_rng = rng.stream("labels", rep);
  out.r.resize(world.r_true.size());
  for (std::size_t k = 0; k < out.r.size(); ++k) {
    out.r[k] = label_rng.bernoulli(world.r_true[k]) ? 1.0 : 0.0;
  }

  RngStream beta_rng = rng.stream("beta", rep);
  out.beta = beta_rng.uniform();
  Accum osum;
  for (std::uint8_t v : out.o) osum.add(static_cast<double>(v));
  const double p_e = osum.value() / static_cast<double>(out.o.size());
  if (p_e == 0.0) throw DomainError("make_replicate: no exposures drawn");
  out.p_hat = noisy_propensities_mixture(world.p_true, out.beta, p_e);

  out.e = pair_errors(out.r, out.prediction.r_hat);
  out.e_hat = shared_imputed_errors(out.r, out.o, out.p_hat, out.prediction.r_hat);
  return out;
}

// ---------------------------------------------------------------------------
// Relative-error table over scenarios and replicates.

struct RETableCell {
  std::string estimator;
  double mean_re = 0.0;
  double sd_re = 0.0;
};

struct RETableRow {
  Scenario scenario = Scenario::One;
  std::vector<RETableCell> cells;
};

inline const std::vector<std::string>& re_table_estimators() {
  static const std::vector<std::string> names = {"naive", "eib", "ips", "snips", "dr", "tdr"};
  return names;
}

// Evaluates every estimator's relative error on each replicate of each
// scenario. TDR applies one targeting cycle to the shared imputed errors.
inline std::vector<RETableRow> run_re_table(const SynthWorld& world,
                                            std::span<const Scenario> scenarios,
                                            std::size_t n_replicates, const SeededRng& rng) {
  require(n_replicates >= 2, "run_re_table: need at least two replicates for a SD");
  std::vector<RETableRow> rows;
  for (Scenario scenario : scenarios) {
    std::vector<std::vector<double>> re(re_table_estimators().size());
    for (std::uint64_t rep = 0; rep < n_replicates; ++rep) {
      const ScenarioReplicate t = make_replicate(world, scenario, rng, rep);
      const double ideal = ideal_loss(t.e);

      ImputationState state(t.e_hat, t.p_hat);
      targeting_cycle(t.e, t.o, state);
      const PairArray e_tilde = targeted_imputation(state);

      const double losses[] = {
          naive_loss(t.e, t.o),
          eib_loss(t.e, t.o, t.e_hat),
          ips_loss(t.e, t.o, t.p_hat),
          snips_loss(t.e, t.o, t.p_hat),
          dr_loss(t.e, t.o, t.e_hat, t.p_hat),
          tdr_loss(t.e, t.o, e_tilde, t.p_hat),
      };
      for (std::size_t j = 0; j < re.size(); ++j) {
        re[j].push_back(relative_error(losses[j], ideal));
      }
    }
    RETableRow row;
    row.scenario = scenario;
    for (std::size_t j = 0; j < re.size(); ++j) {
      RETableCell cell;
      cell.estimator = re_table_estimators()[j];
      cell.mean_re = mean(re[j]);
      cell.sd_re = std::sqrt(sample_variance(re[j]));
      row.cells.push_back(std::move(cell));
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// MNAR-train / MAR-test split drawn from a synthetic world, for training
// experiments without any external dataset. Exposed pairs carry one binary
// conversion label each; the test set samples unexposed pairs uniformly.

struct SynthSplitConfig {
  double val_fraction = 0.1;
  double test_rate = 0.03;  // fraction of all pairs drawn into the MAR test set
};

inline SplitDataset make_synthetic_split(const SynthWorld& world, const SynthSplitConfig& cfg,
                                         const SeededRng& rng) {
  require(cfg.test_rate > 0.0 && cfg.test_rate < 1.0, "make_synthetic_split: bad test_rate");
  const PairSpace& space = world.space;

  RngStream expo = rng.stream("split-exposure");
  const PairMask o = bernoulli_sample(world.p_true, expo);

  RngStream label_rng = rng.stream("split-labels");
  Triples mnar;
  std::vector<std::size_t> unexposed;
  for (std::size_t u = 0; u < space.n_users; ++u) {
    for (std::size_t i = 0; i < space.n_items; ++i) {
      const std::size_t k = space.index(u, i);
      if (o[k]) {
        mnar.push_back(u, i, label_rng.bernoulli(world.r_true[k]) ? 1.0 : 0.0);
      } else {
        unexposed.push_back(k);
      }
    }
  }
  if (mnar.empty()) throw DataError("make_synthetic_split: no exposures drawn");

  std::size_t n_test =
      static_cast<std::size_t>(std::llround(cfg.test_rate * static_cast<double>(space.total())));
  n_test = std::min(n_test, unexposed.size());
  if (n_test == 0) throw DataError("make_synthetic_split: empty test set");

  RngStream pick = rng.stream("split-test-pairs");
  RngStream test_label_rng = rng.stream("split-test-labels");
  Triples mar;
  for (std::size_t j = 0; j < n_test; ++j) {
    const std::size_t swap_with = j + pick.uniform_int(unexposed.size() - j);
    std::swap(unexposed[j], unexposed[swap_with]);
    const std::size_t k = unexposed[j];
    mar.push_back(k / space.n_items, k % space.n_items,
                  test_label_rng.bernoulli(world.r_true[k]) ? 1.0 : 0.0);
  }
  return make_split(mnar, mar, space, cfg.val_fraction, rng.seed());
}

// ---------------------------------------------------------------------------
// Binary world dump so expensive completions can be reused across runs.

inline constexpr std::uint64_t kWorldMagic = 0x5244545730314646ULL;

inline void save_world(std::ostream& os, const SynthWorld& w) {
  detail::write_u64(os, kWorldMagic);
  detail::write_u64(os, w.space.n_users);
  detail::write_u64(os, w.space.n_items);
  std::vector<double> rd(w.R.begin(), w.R.end());
  detail::write_doubles(os, rd);
  detail::write_doubles(os, w.r_true);
  detail::write_doubles(os, w.p_true);
}

inline SynthWorld load_world(std::istream& is) {
  if (detail::read_u64(is) != kWorldMagic) throw ParseError("world dump: bad magic");
  const std::size_t n_users = detail::read_u64(is);
  const std::size_t n_items = detail::read_u64(is);
  SynthWorld w{PairSpace(n_users, n_items), {}, {}, {}};
  const std::vector<double> rd = detail::read_doubles(is);
  w.R.resize(rd.size());
  for (std::size_t k = 0; k < rd.size(); ++k) w.R[k] = static_cast<int>(rd[k]);
  w.r_true = detail::read_doubles(is);
  w.p_true = detail::read_doubles(is);
  if (w.R.size() != w.space.total() || w.r_true.size() != w.space.total() ||
      w.p_true.size() != w.space.total()) {
    throw ParseError("world dump: size mismatch");
  }
  return w;
}

}  // namespace tdr
