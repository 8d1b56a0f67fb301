#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "tdr/common.hpp"

namespace tdr {

inline double mse(std::span<const double> pred, std::span<const double> label) {
  require(pred.size() == label.size() && !pred.empty(), "mse: size mismatch or empty");
  Accum acc;
  for (std::size_t k = 0; k < pred.size(); ++k) {
    const double d = pred[k] - label[k];
    acc.add(d * d);
  }
  return acc.value() / static_cast<double>(pred.size());
}

// Mann-Whitney AUC with average ranks, so tied scores count one half. Labels
// must be 0/1; both classes must be present.
inline double auc(std::span<const double> score, std::span<const double> label) {
  require(score.size() == label.size() && !score.empty(), "auc: size mismatch or empty");
  std::vector<std::size_t> idx(score.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(),
            [&](std::size_t a, std::size_t b) { return score[a] < score[b]; });

  std::size_t n_pos = 0;
  for (double y : label) {
    if (y != 0.0 && y != 1.0) throw DomainError("auc: labels must be 0 or 1");
    if (y == 1.0) ++n_pos;
  }
  const std::size_t n_neg = score.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) throw DomainError("auc: needs both classes");

  Accum rank_sum;  // 1-based average ranks of the positives
  std::size_t lo = 0;
  while (lo < idx.size()) {
    std::size_t hi = lo;
    while (hi + 1 < idx.size() && score[idx[hi + 1]] == score[idx[lo]]) ++hi;
    const double avg_rank = 0.5 * static_cast<double>(lo + hi) + 1.0;
    for (std::size_t j = lo; j <= hi; ++j) {
      if (label[idx[j]] == 1.0) rank_sum.add(avg_rank);
    }
    lo = hi + 1;
  }
  const double u = rank_sum.value() -
                   0.5 * static_cast<double>(n_pos) * static_cast<double>(n_pos + 1);
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

// Mean per-user NDCG at cutoff k with binary gains. Users holding no positive
// label are excluded from the mean; ties in score break on the smaller item id
// so evaluation is order-independent.
inline double ndcg_at_k(std::span<const std::size_t> user, std::span<const std::size_t> item,
                        std::span<const double> score, std::span<const double> label,
                        std::size_t k) {
  require(user.size() == item.size() && user.size() == score.size() &&
              user.size() == label.size() && !user.empty(),
          "ndcg_at_k: size mismatch or empty");
  require(k > 0, "ndcg_at_k: k must be positive");

  std::vector<std::size_t> idx(user.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (user[a] != user[b]) return user[a] < user[b];
    if (score[a] != score[b]) return score[a] > score[b];
    return item[a] < item[b];
  });

  Accum total;
  std::size_t n_users_scored = 0;
  std::size_t lo = 0;
  while (lo < idx.size()) {
    std::size_t hi = lo;
    while (hi + 1 < idx.size() && user[idx[hi + 1]] == user[idx[lo]]) ++hi;

    std::size_t n_pos = 0;
    for (std::size_t j = lo; j <= hi; ++j) {
      const double y = label[idx[j]];
      if (y != 0.0 && y != 1.0) throw DomainError("ndcg_at_k: labels must be 0 or 1");
      if (y == 1.0) ++n_pos;
    }
    if (n_pos > 0) {
      Accum dcg;
      for (std::size_t j = lo; j <= hi && j - lo < k; ++j) {
        if (label[idx[j]] == 1.0) {
          dcg.add(1.0 / std::log2(static_cast<double>(j - lo) + 2.0));
        }
      }
      Accum idcg;
      for (std::size_t j = 0; j < std::min(k, n_pos); ++j) {
        idcg.add(1.0 / std::log2(static_cast<double>(j) + 2.0));
      }
      total.add(dcg.value() / idcg.value());
      ++n_users_scored;
    }
    lo = hi + 1;
  }
  if (n_users_scored == 0) throw DomainError("ndcg_at_k: no user has a positive label");
  return total.value() / static_cast<double>(n_users_scored);
}

inline std::vector<double> binarize(std::span<const double> r, double threshold) {
  std::vector<double> out(r.size());
  for (std::size_t k = 0; k < r.size(); ++k) out[k] = r[k] >= threshold ? 1.0 : 0.0;
  return out;
}

// Linear map of ratings onto [0, 1].
inline std::vector<double> scale_unit(std::span<const double> r, double r_min, double r_max) {
  require(r_max > r_min, "scale_unit: degenerate range");
  std::vector<double> out(r.size());
  for (std::size_t k = 0; k < r.size(); ++k) out[k] = (r[k] - r_min) / (r_max - r_min);
  return out;
}

}  // namespace tdr
