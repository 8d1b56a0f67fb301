#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <set>
#include <sstream>
#include <vector>

#include <catch2/catch_amalgamated.hpp>

#include "tdr/synthgen.hpp"

namespace {

using Catch::Approx;

std::vector<int> pattern_ratings(const tdr::PairSpace& space) {
  // Deterministic mix with every rating present.
  std::vector<int> R(space.total());
  for (std::size_t k = 0; k < R.size(); ++k) R[k] = static_cast<int>(k % 5) + 1;
  return R;
}

std::size_t count_value(const tdr::PairArray& a, double v) {
  return static_cast<std::size_t>(std::count(a.begin(), a.end(), v));
}

// Mean of a normal(mu, sd) truncated to [lo, hi], by the standard closed form.
double truncated_normal_mean(double mu, double sd, double lo, double hi) {
  auto phi = [](double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI); };
  auto cdf = [](double x) { return 0.5 * (1.0 + std::erf(x / std::sqrt(2.0))); };
  const double a = (lo - mu) / sd;
  const double b = (hi - mu) / sd;
  return mu + sd * (phi(a) - phi(b)) / (cdf(b) - cdf(a));
}

}  // namespace

TEST_CASE("five-point conversion map") {
  const std::vector<int> R = {1, 2, 3, 4, 5};
  const tdr::PairArray r = tdr::map_to_rtrue(R);
  CHECK(r[0] == 0.1);
  CHECK(r[1] == 0.3);
  CHECK(r[2] == 0.5);
  CHECK(r[3] == 0.7);
  CHECK(r[4] == 0.9);

  const std::vector<int> bad = {0};
  CHECK_THROWS_AS(tdr::map_to_rtrue(bad), std::runtime_error);
  const std::vector<int> big = {6};
  CHECK_THROWS_AS(tdr::map_to_rtrue(big), std::runtime_error);
}

TEST_CASE("exposure propensity formula") {
  tdr::SynthConfig cfg;
  cfg.alpha = 0.5;
  cfg.p_base = 1.0;
  cfg.target_obs_rate = 0.0;  // no rescaling: p = alpha^max(1, 5-R)

  const std::vector<int> R = {5, 1, 3, 4, 2};
  const tdr::PairArray p = tdr::assign_propensities(R, cfg);
  CHECK(p[0] == Approx(0.5).margin(1e-15));
  CHECK(p[1] == Approx(0.0625).margin(1e-15));
  CHECK(p[2] == Approx(0.25).margin(1e-15));
  CHECK(p[3] == Approx(0.5).margin(1e-15));    // exponent max(1, 1) = 1
  CHECK(p[4] == Approx(0.125).margin(1e-15));

  SECTION("p_base scales every propensity") {
    cfg.p_base = 0.4;
    const tdr::PairArray q = tdr::assign_propensities(R, cfg);
    for (std::size_t k = 0; k < q.size(); ++k) CHECK(q[k] == Approx(0.4 * p[k]).margin(1e-15));
  }

  SECTION("target rate rescales the mean") {
    cfg.target_obs_rate = 0.05;
    const tdr::PairArray q = tdr::assign_propensities(R, cfg);
    CHECK(tdr::mean(q) == Approx(0.05).margin(1e-12));
    // Ratios between pairs survive the rescale.
    CHECK(q[0] / q[1] == Approx(8.0).margin(1e-9));
  }

  SECTION("rescale caps at one") {
    const std::vector<int> mix = {5, 1};
    cfg.target_obs_rate = 0.9;  // wants scale 3.2: 0.5 would exceed 1
    const tdr::PairArray q = tdr::assign_propensities(mix, cfg);
    CHECK(q[0] == 1.0);
    CHECK(q[1] == Approx(0.0625 * 3.2).margin(1e-12));
  }

  SECTION("parameter validation") {
    tdr::SynthConfig bad = cfg;
    bad.alpha = 1.0;
    CHECK_THROWS_AS(tdr::assign_propensities(R, bad), std::runtime_error);
    bad = cfg;
    bad.p_base = 0.0;
    bad.target_obs_rate = 0.0;
    CHECK_THROWS_AS(tdr::assign_propensities(R, bad), std::runtime_error);
    const std::vector<int> out_of_scale = {0, 3};
    CHECK_THROWS_AS(tdr::assign_propensities(out_of_scale, cfg), std::runtime_error);
  }
}

TEST_CASE("flip scenarios change exactly the documented entries") {
  const tdr::PairSpace space(10, 10);
  const std::vector<int> R = pattern_ratings(space);
  const tdr::PairArray r_true = tdr::map_to_rtrue(R);
  const std::size_t n_nine = count_value(r_true, 0.9);
  REQUIRE(n_nine == 20);

  const tdr::SeededRng rng(99);

  struct Case {
    tdr::Scenario scenario;
    double from;
  };
  for (const Case c : {Case{tdr::Scenario::One, 0.1}, Case{tdr::Scenario::Three, 0.3},
                       Case{tdr::Scenario::Five, 0.5}}) {
    tdr::RngStream stream = rng.stream("flip");
    const tdr::PredictionMatrix pm = tdr::make_prediction_matrix(c.scenario, r_true, stream);
    REQUIRE(pm.r_hat.size() == r_true.size());

    std::size_t changed = 0;
    for (std::size_t k = 0; k < r_true.size(); ++k) {
      if (pm.r_hat[k] != r_true[k]) {
        ++changed;
        CHECK(r_true[k] == c.from);
        CHECK(pm.r_hat[k] == 0.9);
      }
    }
    CHECK(changed == n_nine);
    CHECK(count_value(pm.r_hat, 0.9) == 2 * n_nine);
    CHECK(count_value(pm.r_hat, c.from) == count_value(r_true, c.from) - n_nine);
  }

  SECTION("flip pool smaller than the 0.9 count flips the whole pool") {
    // 9 entries at rating 5 but only 4 at rating 2.
    std::vector<int> skewed(13, 5);
    std::fill(skewed.begin() + 9, skewed.end(), 2);
    const tdr::PairArray rt = tdr::map_to_rtrue(skewed);
    tdr::RngStream stream = rng.stream("flip-capped");
    const tdr::PredictionMatrix pm = tdr::make_prediction_matrix(tdr::Scenario::Three, rt, stream);
    CHECK(count_value(pm.r_hat, 0.3) == 0);
    CHECK(count_value(pm.r_hat, 0.9) == 13);
  }

  SECTION("flip targets are deterministic per stream") {
    tdr::RngStream s1 = rng.stream("flip");
    tdr::RngStream s2 = rng.stream("flip");
    const tdr::PredictionMatrix a = tdr::make_prediction_matrix(tdr::Scenario::One, r_true, s1);
    const tdr::PredictionMatrix b = tdr::make_prediction_matrix(tdr::Scenario::One, r_true, s2);
    CHECK(a.r_hat == b.r_hat);
  }
}

TEST_CASE("rotate and crs prediction maps") {
  const std::vector<int> R = {1, 2, 3, 4, 5};
  const tdr::PairArray r_true = tdr::map_to_rtrue(R);
  const tdr::SeededRng rng(5);

  SECTION("rotate steps one level down and wraps 0.1 to 0.9") {
    tdr::RngStream stream = rng.stream("rotate");
    const tdr::PredictionMatrix pm =
        tdr::make_prediction_matrix(tdr::Scenario::Rotate, r_true, stream);
    CHECK(pm.r_hat[0] == 0.9);
    CHECK(pm.r_hat[1] == 0.1);
    CHECK(pm.r_hat[2] == 0.3);
    CHECK(pm.r_hat[3] == 0.5);
    CHECK(pm.r_hat[4] == 0.7);
  }

  SECTION("crs collapses to two predicted values") {
    tdr::RngStream stream = rng.stream("crs");
    const tdr::PredictionMatrix pm =
        tdr::make_prediction_matrix(tdr::Scenario::Crs, r_true, stream);
    CHECK(pm.r_hat[0] == 0.2);
    CHECK(pm.r_hat[1] == 0.2);
    CHECK(pm.r_hat[2] == 0.2);
    CHECK(pm.r_hat[3] == 0.6);
    CHECK(pm.r_hat[4] == 0.6);
  }
}

TEST_CASE("skew scenario matches truncated gaussian moments") {
  const tdr::SeededRng rng(2024);
  const std::size_t n = 100000;

  struct Case {
    double r;
    const char* stream;
  };
  for (const Case c : {Case{0.5, "skew-mid"}, Case{0.7, "skew-high"}}) {
    const tdr::PairArray r_true(n, c.r);
    tdr::RngStream stream = rng.stream(c.stream);
    const tdr::PredictionMatrix pm =
        tdr::make_prediction_matrix(tdr::Scenario::Skew, r_true, stream);

    double lo = 1.0, hi = 0.0;
    tdr::Accum acc;
    for (double v : pm.r_hat) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
      acc.add(v);
    }
    CHECK(lo >= 0.1);
    CHECK(hi <= 0.9);

    const double expected = truncated_normal_mean(c.r, (1.0 - c.r) / 2.0, 0.1, 0.9);
    CHECK(acc.value() / static_cast<double>(n) == Approx(expected).margin(0.02));
  }
}

TEST_CASE("noisy propensities form a harmonic mixture") {
  SECTION("hand-evaluated mixture") {
    const tdr::PairArray p_true = {0.5};
    const tdr::PropensityField f = tdr::noisy_propensities_mixture(p_true, 0.5, 0.05);
    // 1/p = 0.5*2 + 0.5*20 = 11.
    CHECK(f.p_hat[0] == Approx(1.0 / 11.0).margin(1e-15));
  }

  SECTION("beta zero is the identity") {
    const tdr::PairArray p_true = {0.5, 0.3, 0.7, 0.05};
    const tdr::PropensityField f = tdr::noisy_propensities_mixture(p_true, 0.0, 0.2);
    for (std::size_t k = 0; k < p_true.size(); ++k) CHECK(f.p_hat[k] == p_true[k]);
  }

  SECTION("beta one collapses to the exposure rate") {
    const tdr::PairArray p_true = {0.5, 0.3};
    const tdr::PropensityField f = tdr::noisy_propensities_mixture(p_true, 1.0, 0.25);
    CHECK(f.p_hat[0] == 0.25);
    CHECK(f.p_hat[1] == 0.25);
  }

  SECTION("validation") {
    const tdr::PairArray p_true = {0.5};
    CHECK_THROWS_AS(tdr::noisy_propensities_mixture(p_true, -0.1, 0.2), std::runtime_error);
    CHECK_THROWS_AS(tdr::noisy_propensities_mixture(p_true, 1.1, 0.2), std::runtime_error);
    const tdr::PairArray bad = {1.5};
    CHECK_THROWS_AS(tdr::noisy_propensities_mixture(bad, 0.5, 0.2), std::runtime_error);

    const tdr::SeededRng rng(1);
    tdr::RngStream stream = rng.stream("beta");
    const tdr::PairMask no_expo(1, 0);
    CHECK_THROWS_AS(tdr::noisy_propensities(p_true, no_expo, stream), tdr::DomainError);
  }
}

TEST_CASE("shared imputed errors use one weighted label") {
  SECTION("hand-evaluated weighted mean") {
    // Exposed weights 1/p = [2, 4, 2]: r_bar = (2*1 + 4*0 + 2*1) / 8 = 0.5.
    const tdr::PairArray r = {1.0, 0.0, 1.0, 1.0};
    const tdr::PairMask o = {1, 1, 1, 0};
    tdr::PropensityField p;
    p.p_hat = {0.5, 0.25, 0.5, 0.9};
    const tdr::PairArray r_hat = {0.5, 0.5, 0.5, 0.5};
    const tdr::PairArray e_hat = tdr::shared_imputed_errors(r, o, p, r_hat);
    REQUIRE(e_hat.size() == 4);
    for (double v : e_hat) CHECK(v == Approx(std::log(2.0)).margin(1e-12));
  }

  SECTION("unanimous exposed labels give the plain log loss") {
    const tdr::PairArray r = {1.0, 1.0, 0.0};
    const tdr::PairMask o = {1, 1, 0};
    tdr::PropensityField p;
    p.p_hat = {0.3, 0.3, 0.3};
    const tdr::PairArray r_hat = {0.8, 0.4, 0.6};
    const tdr::PairArray e_hat = tdr::shared_imputed_errors(r, o, p, r_hat);
    CHECK(e_hat[0] == Approx(-std::log(0.8)).margin(1e-12));
    CHECK(e_hat[1] == Approx(-std::log(0.4)).margin(1e-12));
    CHECK(e_hat[2] == Approx(-std::log(0.6)).margin(1e-12));
  }

  SECTION("validation") {
    const tdr::PairArray r = {1.0};
    tdr::PropensityField p;
    p.p_hat = {0.5};
    const tdr::PairMask none = {0};
    const tdr::PairArray r_hat = {0.5};
    CHECK_THROWS_AS(tdr::shared_imputed_errors(r, none, p, r_hat), tdr::DomainError);
    const tdr::PairMask o = {1};
    const tdr::PairArray bad_pred = {1.0};
    CHECK_THROWS_AS(tdr::shared_imputed_errors(r, o, p, bad_pred), tdr::DomainError);
  }
}

TEST_CASE("rating completion on constant and missing rows") {
  const tdr::SeededRng rng(11);
  const tdr::CompletionConfig cfg;

  SECTION("constant ratings complete to the constant") {
    const tdr::PairSpace space(3, 3);
    std::vector<std::size_t> users, items;
    std::vector<double> ratings;
    for (std::size_t u = 0; u < 3; ++u) {
      for (std::size_t i = 0; i < 3; ++i) {
        users.push_back(u);
        items.push_back(i);
        ratings.push_back(4.0);
      }
    }
    const std::vector<int> R = tdr::complete_ratings(space, users, items, ratings, cfg, rng);
    for (int v : R) CHECK(v == 4);

    std::vector<double> fives(ratings.size(), 5.0);
    const std::vector<int> R5 = tdr::complete_ratings(space, users, items, fives, cfg, rng);
    for (int v : R5) CHECK(v == 5);
  }

  SECTION("unseen users fall back to the global mean") {
    const tdr::PairSpace space(3, 3);
    const std::vector<std::size_t> users = {0, 0, 0};
    const std::vector<std::size_t> items = {0, 1, 2};
    const std::vector<double> ratings = {2.0, 2.0, 2.0};
    const std::vector<int> R = tdr::complete_ratings(space, users, items, ratings, cfg, rng);
    CHECK(R[space.index(1, 1)] == 2);
    CHECK(R[space.index(2, 0)] == 2);
  }

  SECTION("validation") {
    const tdr::PairSpace space(2, 2);
    const std::vector<std::size_t> empty_ids;
    const std::vector<double> empty_ratings;
    CHECK_THROWS_AS(
        tdr::complete_ratings(space, empty_ids, empty_ids, empty_ratings, cfg, rng),
        tdr::DataError);
    const std::vector<std::size_t> u = {0}, i = {0};
    const std::vector<double> outside = {6.0};
    CHECK_THROWS_AS(tdr::complete_ratings(space, u, i, outside, cfg, rng), tdr::DataError);
  }
}

TEST_CASE("rating completion recovers a rank-one matrix") {
  const tdr::PairSpace space(60, 70);
  const tdr::SeededRng rng(17);

  // Ground truth s_u * t_i with factors in {1, 2}: ratings in {1, 2, 4}.
  tdr::RngStream factor = rng.stream("factors");
  std::vector<int> s(space.n_users), t(space.n_items);
  for (int& v : s) v = factor.bernoulli(0.5) ? 2 : 1;
  for (int& v : t) v = factor.bernoulli(0.5) ? 2 : 1;

  std::vector<int> truth(space.total());
  for (std::size_t u = 0; u < space.n_users; ++u) {
    for (std::size_t i = 0; i < space.n_items; ++i) {
      truth[space.index(u, i)] = s[u] * t[i];
    }
  }

  // Hide half the entries.
  tdr::RngStream mask = rng.stream("mask");
  std::vector<std::size_t> users, items;
  std::vector<double> ratings;
  std::vector<std::size_t> hidden;
  for (std::size_t u = 0; u < space.n_users; ++u) {
    for (std::size_t i = 0; i < space.n_items; ++i) {
      if (mask.bernoulli(0.5)) {
        users.push_back(u);
        items.push_back(i);
        ratings.push_back(static_cast<double>(truth[space.index(u, i)]));
      } else {
        hidden.push_back(space.index(u, i));
      }
    }
  }
  REQUIRE(hidden.size() > 1500);

  tdr::CompletionConfig cfg;
  cfg.rank = 8;
  const std::vector<int> R = tdr::complete_ratings(space, users, items, ratings, cfg, rng);

  std::size_t correct = 0;
  for (std::size_t k : hidden) {
    if (R[k] == truth[k]) ++correct;
  }
  CHECK(static_cast<double>(correct) >= 0.95 * static_cast<double>(hidden.size()));
}

TEST_CASE("builtin ratings follow the requested marginal") {
  const tdr::PairSpace space(40, 50);
  const tdr::SeededRng rng(3);
  tdr::BuiltinRatingsConfig cfg;

  const std::vector<int> R = tdr::builtin_ratings(space, cfg, rng);
  REQUIRE(R.size() == space.total());

  std::array<std::size_t, 5> counts = {0, 0, 0, 0, 0};
  for (int v : R) {
    REQUIRE((v >= 1 && v <= 5));
    ++counts[static_cast<std::size_t>(v - 1)];
  }
  const auto total = static_cast<double>(space.total());
  for (std::size_t j = 0; j < 5; ++j) {
    CHECK(static_cast<double>(counts[j]) ==
          Approx(cfg.marginal[j] * total).margin(2.0));
  }

  const std::vector<int> again = tdr::builtin_ratings(space, cfg, rng);
  CHECK(again == R);

  cfg.marginal = {0.5, 0.5, 0.5, 0.0, 0.0};
  CHECK_THROWS_AS(tdr::builtin_ratings(space, cfg, rng), std::runtime_error);
}

TEST_CASE("world assembly and replicate draws are deterministic") {
  const tdr::PairSpace space(20, 30);
  tdr::SynthConfig cfg;
  cfg.target_obs_rate = 0.1;
  const tdr::SeededRng rng(77);

  const tdr::SynthWorld world =
      tdr::make_builtin_world(space, cfg, tdr::BuiltinRatingsConfig{}, rng);
  REQUIRE(world.R.size() == space.total());
  CHECK(world.r_true == tdr::map_to_rtrue(world.R));
  CHECK(world.p_true == tdr::assign_propensities(world.R, cfg));

  const tdr::ScenarioReplicate a = tdr::make_replicate(world, tdr::Scenario::Rotate, rng, 3);
  const tdr::ScenarioReplicate b = tdr::make_replicate(world, tdr::Scenario::Rotate, rng, 3);
  CHECK(a.o == b.o);
  CHECK(a.r == b.r);
  CHECK(a.beta == b.beta);
  CHECK(a.e == b.e);
  CHECK(a.e_hat == b.e_hat);
  CHECK(a.p_hat.p_hat == b.p_hat.p_hat);

  const tdr::ScenarioReplicate c = tdr::make_replicate(world, tdr::Scenario::Rotate, rng, 4);
  CHECK(a.beta != c.beta);

  SECTION("replicate fields satisfy their construction") {
    for (double label : a.r) CHECK((label == 0.0 || label == 1.0));

    tdr::Accum osum;
    for (std::uint8_t v : a.o) osum.add(static_cast<double>(v));
    const double p_e = osum.value() / static_cast<double>(a.o.size());
    for (std::size_t k = 0; k < space.total(); ++k) {
      const double expected = 1.0 / ((1.0 - a.beta) / world.p_true[k] + a.beta / p_e);
      CHECK(a.p_hat.p_hat[k] == Approx(expected).margin(1e-15));
    }

    const tdr::PairArray e = tdr::pair_errors(a.r, a.prediction.r_hat);
    CHECK(a.e == e);
    const tdr::PairArray e_hat =
        tdr::shared_imputed_errors(a.r, a.o, a.p_hat, a.prediction.r_hat);
    CHECK(a.e_hat == e_hat);
  }
}

TEST_CASE("relative error table covers scenarios and estimators") {
  const tdr::PairSpace space(15, 20);
  tdr::SynthConfig cfg;
  cfg.target_obs_rate = 0.2;
  const tdr::SeededRng rng(41);
  const tdr::SynthWorld world =
      tdr::make_builtin_world(space, cfg, tdr::BuiltinRatingsConfig{}, rng);

  const std::vector<tdr::RETableRow> rows =
      tdr::run_re_table(world, tdr::kAllScenarios, 3, rng);
  REQUIRE(rows.size() == 6);
  for (std::size_t j = 0; j < rows.size(); ++j) {
    CHECK(rows[j].scenario == tdr::kAllScenarios[j]);
    REQUIRE(rows[j].cells.size() == tdr::re_table_estimators().size());
    for (std::size_t c = 0; c < rows[j].cells.size(); ++c) {
      CHECK(rows[j].cells[c].estimator == tdr::re_table_estimators()[c]);
      CHECK(std::isfinite(rows[j].cells[c].mean_re));
      CHECK(rows[j].cells[c].mean_re >= 0.0);
      CHECK(std::isfinite(rows[j].cells[c].sd_re));
    }
  }

  const std::array<tdr::Scenario, 1> one = {tdr::Scenario::Crs};
  CHECK_THROWS_AS(tdr::run_re_table(world, one, 1, rng), std::runtime_error);
}

TEST_CASE("synthetic split draws a disjoint unexposed test set") {
  const tdr::PairSpace space(40, 50);
  tdr::SynthConfig cfg;
  cfg.target_obs_rate = 0.15;
  const tdr::SeededRng rng(7);
  const tdr::SynthWorld world =
      tdr::make_builtin_world(space, cfg, tdr::BuiltinRatingsConfig{}, rng);

  tdr::SynthSplitConfig scfg;
  const tdr::SplitDataset split = tdr::make_synthetic_split(world, scfg, rng);

  CHECK(split.test.size() == static_cast<std::size_t>(std::llround(0.03 * 2000.0)));
  CHECK(!split.train.empty());
  CHECK(!split.val.empty());

  auto all_binary = [](const tdr::Triples& t) {
    return std::all_of(t.rating.begin(), t.rating.end(),
                       [](double r) { return r == 0.0 || r == 1.0; });
  };
  CHECK(all_binary(split.train));
  CHECK(all_binary(split.val));
  CHECK(all_binary(split.test));

  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (const tdr::Triples* t : {&split.train, &split.val}) {
    for (std::size_t k = 0; k < t->size(); ++k) seen.insert({t->user[k], t->item[k]});
  }
  for (std::size_t k = 0; k < split.test.size(); ++k) {
    CHECK(!seen.count({split.test.user[k], split.test.item[k]}));
  }

  const tdr::SplitDataset again = tdr::make_synthetic_split(world, scfg, rng);
  CHECK(again.train.rating == split.train.rating);
  CHECK(again.test.user == split.test.user);
}

TEST_CASE("world dump round-trips") {
  const tdr::PairSpace space(6, 9);
  tdr::SynthConfig cfg;
  const tdr::SeededRng rng(13);
  const tdr::SynthWorld world =
      tdr::make_builtin_world(space, cfg, tdr::BuiltinRatingsConfig{}, rng);

  std::stringstream buf;
  tdr::save_world(buf, world);
  const tdr::SynthWorld back = tdr::load_world(buf);
  CHECK(back.space.n_users == world.space.n_users);
  CHECK(back.space.n_items == world.space.n_items);
  CHECK(back.R == world.R);
  CHECK(back.r_true == world.r_true);
  CHECK(back.p_true == world.p_true);

  std::stringstream junk("not a world dump at all........");
  CHECK_THROWS_AS(tdr::load_world(junk), tdr::ParseError);
}
