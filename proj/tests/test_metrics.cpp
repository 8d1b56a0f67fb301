#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "tdr/common.hpp"
#include "tdr/metrics.hpp"
#include "tdr/rng.hpp"

using namespace tdr;

namespace {

// Pair-counting oracle: fraction of (positive, negative) pairs ranked
// correctly, ties counting half.
double auc_oracle(std::span<const double> score, std::span<const double> label) {
  double wins = 0.0;
  std::size_t pairs = 0;
  for (std::size_t a = 0; a < score.size(); ++a) {
    if (label[a] != 1.0) continue;
    for (std::size_t b = 0; b < score.size(); ++b) {
      if (label[b] != 0.0) continue;
      ++pairs;
      if (score[a] > score[b]) wins += 1.0;
      else if (score[a] == score[b]) wins += 0.5;
    }
  }
  return wins / static_cast<double>(pairs);
}

}  // namespace

TEST_CASE("mse on a hand example") {
  const std::vector<double> pred = {1.0, 2.0, 3.0};
  const std::vector<double> label = {0.0, 2.0, 5.0};
  CHECK(mse(pred, label) == Catch::Approx(5.0 / 3.0).epsilon(1e-15));
  CHECK_THROWS_AS(mse(pred, std::vector<double>{1.0}), std::runtime_error);
}

TEST_CASE("auc on a hand example is 0.75") {
  const std::vector<double> score = {0.1, 0.4, 0.35, 0.8};
  const std::vector<double> label = {0.0, 0.0, 1.0, 1.0};
  CHECK(auc(score, label) == Catch::Approx(0.75).margin(1e-15));
}

TEST_CASE("auc handles ties by half credit") {
  const std::vector<double> score = {0.5, 0.5, 0.5, 0.5};
  const std::vector<double> label = {0.0, 1.0, 0.0, 1.0};
  CHECK(auc(score, label) == Catch::Approx(0.5).margin(1e-15));
}

TEST_CASE("auc matches the pair-counting oracle on random data") {
  RngStream rng = SeededRng(404).stream("auc");
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t n = 5 + rng.uniform_int(200);
    std::vector<double> score(n), label(n);
    bool pos = false, neg = false;
    for (std::size_t k = 0; k < n; ++k) {
      // Coarse grid forces plenty of exact ties.
      score[k] = std::floor(rng.uniform(0.0, 8.0)) / 8.0;
      label[k] = rng.bernoulli(0.4) ? 1.0 : 0.0;
      pos = pos || label[k] == 1.0;
      neg = neg || label[k] == 0.0;
    }
    if (!pos) label[0] = 1.0;
    if (!neg) label[1] = 0.0;
    REQUIRE(auc(score, label) == Catch::Approx(auc_oracle(score, label)).margin(1e-10));
  }
}

TEST_CASE("auc is invariant under monotone score transforms") {
  const std::vector<double> score = {-2.0, 0.3, 0.1, 1.7, 0.9, -0.4};
  const std::vector<double> label = {0.0, 1.0, 0.0, 1.0, 0.0, 1.0};
  const double base = auc(score, label);
  std::vector<double> affine(score.size()), expv(score.size());
  for (std::size_t k = 0; k < score.size(); ++k) {
    affine[k] = 3.0 * score[k] + 11.0;
    expv[k] = std::exp(score[k]);
  }
  CHECK(auc(affine, label) == base);
  CHECK(auc(expv, label) == base);
}

TEST_CASE("auc rejects degenerate label sets") {
  CHECK_THROWS_AS(auc(std::vector<double>{0.1, 0.2}, std::vector<double>{1.0, 1.0}),
                  DomainError);
  CHECK_THROWS_AS(auc(std::vector<double>{0.1, 0.2}, std::vector<double>{0.0, 0.0}),
                  DomainError);
  CHECK_THROWS_AS(auc(std::vector<double>{0.1, 0.2}, std::vector<double>{0.0, 0.5}),
                  DomainError);
}

TEST_CASE("ndcg hand example: positive ranked second scores 1/log2(3)") {
  const std::vector<std::size_t> user = {0, 0};
  const std::vector<std::size_t> item = {0, 1};
  const std::vector<double> score = {0.9, 0.2};  // item 0 tops the list
  const std::vector<double> label = {0.0, 1.0};  // but item 1 is the positive
  const double expect = 1.0 / std::log2(3.0);
  CHECK(ndcg_at_k(user, item, score, label, 5) == Catch::Approx(expect).epsilon(1e-12));
  // Truncation at k=1 leaves no credited positive.
  CHECK(ndcg_at_k(user, item, score, label, 1) == Catch::Approx(0.0).margin(1e-15));
  // Perfect ordering.
  CHECK(ndcg_at_k(user, item, label, label, 5) == Catch::Approx(1.0).margin(1e-15));
}

TEST_CASE("ndcg averages only over users that have positives") {
  const std::vector<std::size_t> user = {0, 0, 1, 1};
  const std::vector<std::size_t> item = {0, 1, 0, 1};
  const std::vector<double> score = {0.9, 0.2, 0.8, 0.3};
  const std::vector<double> label = {0.0, 1.0, 0.0, 0.0};  // user 1 has none
  const double expect = 1.0 / std::log2(3.0);  // user 0 alone
  CHECK(ndcg_at_k(user, item, score, label, 5) == Catch::Approx(expect).epsilon(1e-12));
  CHECK_THROWS_AS(
      ndcg_at_k(user, item, score, std::vector<double>{0.0, 0.0, 0.0, 0.0}, 5), DomainError);
}

TEST_CASE("ndcg breaks score ties by ascending item id") {
  const std::vector<std::size_t> user = {0, 0};
  const std::vector<std::size_t> item = {5, 2};
  const std::vector<double> score = {0.4, 0.4};
  const std::vector<double> label = {1.0, 0.0};  // the positive has the larger id
  // Item 2 wins the tie, the positive lands second.
  CHECK(ndcg_at_k(user, item, score, label, 5) ==
        Catch::Approx(1.0 / std::log2(3.0)).epsilon(1e-12));
}

TEST_CASE("ndcg with two positives uses the ideal dcg") {
  const std::vector<std::size_t> user = {0, 0, 0};
  const std::vector<std::size_t> item = {0, 1, 2};
  const std::vector<double> score = {0.9, 0.5, 0.1};
  const std::vector<double> label = {1.0, 0.0, 1.0};
  // DCG = 1 + 1/log2(4); IDCG = 1 + 1/log2(3).
  const double expect = (1.0 + 1.0 / std::log2(4.0)) / (1.0 + 1.0 / std::log2(3.0));
  CHECK(ndcg_at_k(user, item, score, label, 5) == Catch::Approx(expect).epsilon(1e-12));
}

TEST_CASE("binarize and scale_unit") {
  const std::vector<double> r = {1.0, 3.0, 4.0, 5.0};
  CHECK(binarize(r, 4.0) == std::vector<double>{0.0, 0.0, 1.0, 1.0});
  CHECK(scale_unit(r, 1.0, 5.0) == std::vector<double>{0.0, 0.5, 0.75, 1.0});
  CHECK_THROWS_AS(scale_unit(r, 2.0, 2.0), std::runtime_error);
}
