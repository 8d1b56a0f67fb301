#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "tdr/common.hpp"
#include "tdr/rng.hpp"

namespace tdr {

// The full user-item index set D. Per-pair arrays are dense, row-major
// (index = u * n_items + i); the matrices this library targets fit in memory
// and the estimators all sum over the whole of D anyway.
struct PairSpace {
  std::size_t n_users = 0;
  std::size_t n_items = 0;

  PairSpace() = default;
  PairSpace(std::size_t users, std::size_t items) : n_users(users), n_items(items) {
    require(users > 0 && items > 0, "PairSpace: dimensions must be positive");
  }

  std::size_t total() const { return n_users * n_items; }

  std::size_t index(std::size_t u, std::size_t i) const {
    require(u < n_users && i < n_items, "PairSpace: index out of range");
    return u * n_items + i;
  }
};

using PairArray = std::vector<double>;  // one double per pair in D
using PairMask = std::vector<std::uint8_t>;

// Ground-truth world of the semi-synthetic protocol: true rating
// probabilities, one Bernoulli label and exposure draw, true propensities.
struct InteractionTable {
  PairSpace space;
  PairArray r_true;  // in {0.1, 0.3, 0.5, 0.7, 0.9}
  PairMask r;        // r_{u,i}(1), binary
  PairMask o;        // exposure indicator
  PairArray p_true;  // in (0, 1]
};

// Learned or assigned propensities with the applied lower clip recorded.
// A threshold of kNoClip means the field was built without meaningful
// clipping (the floor is never active for the propensity ranges in play).
struct PropensityField {
  static constexpr double kNoClip = 1e-12;

  PairArray p_hat;
  double clip_threshold = kNoClip;
};

inline PairMask bernoulli_sample(std::span<const double> probs, RngStream& rng) {
  PairMask out(probs.size());
  for (std::size_t k = 0; k < probs.size(); ++k) {
    if (!(probs[k] >= 0.0 && probs[k] <= 1.0)) {
      throw DomainError("bernoulli_sample: probability outside [0,1]");
    }
    out[k] = rng.bernoulli(probs[k]) ? 1 : 0;
  }
  return out;
}

inline PropensityField clip_propensities(std::span<const double> p, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw ConfigError("clip_propensities: threshold must lie in (0,1)");
  }
  PropensityField field;
  field.clip_threshold = threshold;
  field.p_hat.resize(p.size());
  for (std::size_t k = 0; k < p.size(); ++k) {
    if (!(p[k] > 0.0 && p[k] <= 1.0)) {
      throw DomainError("clip_propensities: propensity outside (0,1]");
    }
    field.p_hat[k] = std::max(p[k], threshold);
  }
  return field;
}

}  // namespace tdr
