#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tdr/common.hpp"
#include "tdr/core.hpp"
#include "tdr/datasets.hpp"
#include "tdr/metrics.hpp"
#include "tdr/models.hpp"
#include "tdr/rng.hpp"
#include "tdr/targeting.hpp"

namespace tdr {

enum class TrainerVariant {
  Base,
  Ips,
  Snips,
  Dr,
  DrJL,
  MrdrJL,
  DrCL,
  MrdrCL,
  Tdr,
  TdrJL,
  TmrdrJL,
  TdrCL,
  TmrdrCL,
};

inline const char* variant_name(TrainerVariant v) {
  switch (v) {
    case TrainerVariant::Base: return "BASE";
    case TrainerVariant::Ips: return "IPS";
    case TrainerVariant::Snips: return "SNIPS";
    case TrainerVariant::Dr: return "DR";
    case TrainerVariant::DrJL: return "DR_JL";
    case TrainerVariant::MrdrJL: return "MRDR_JL";
    case TrainerVariant::DrCL: return "DR_CL";
    case TrainerVariant::MrdrCL: return "MRDR_CL";
    case TrainerVariant::Tdr: return "TDR";
    case TrainerVariant::TdrJL: return "TDR_JL";
    case TrainerVariant::TmrdrJL: return "TMRDR_JL";
    case TrainerVariant::TdrCL: return "TDR_CL";
    case TrainerVariant::TmrdrCL: return "TMRDR_CL";
  }
  throw ConfigError("variant_name: unknown variant");
}

inline const std::vector<TrainerVariant>& all_variants() {
  static const std::vector<TrainerVariant> vs = {
      TrainerVariant::Base,   TrainerVariant::Ips,     TrainerVariant::Snips,
      TrainerVariant::Dr,     TrainerVariant::DrJL,    TrainerVariant::MrdrJL,
      TrainerVariant::DrCL,   TrainerVariant::MrdrCL,  TrainerVariant::Tdr,
      TrainerVariant::TdrJL,  TrainerVariant::TmrdrJL, TrainerVariant::TdrCL,
      TrainerVariant::TmrdrCL};
  return vs;
}

inline TrainerVariant parse_variant(std::string_view name) {
  for (TrainerVariant v : all_variants()) {
    if (name == variant_name(v)) return v;
  }
  throw ConfigError("parse_variant: unknown variant '" + std::string(name) + "'");
}

// Structural traits of each variant. Everything else in the trainer is one
// shared loop driven by these flags.
struct VariantTraits {
  bool dr_family = false;          // trains on the doubly robust loss (vs plain CE)
  bool learned_imputation = false; // has a g model updated by the imputation phase
  bool static_imputation = false;  // scalar residual heuristic instead of g
  bool trains_propensity = false;  // CL: xi updated jointly, CE term in the loss
  bool mrdr_weight = false;        // imputation phase weight (1-p)/p^2 instead of 1/p
  bool targeting_per_epoch = false;
  bool targeting_final_once = false;
  bool ips_weighted_ce = false;    // plain IPS objective
  bool self_normalized = false;    // plain SNIPS objective
};

inline VariantTraits variant_traits(TrainerVariant v) {
  VariantTraits t;
  switch (v) {
    case TrainerVariant::Base:
      break;
    case TrainerVariant::Ips:
      t.ips_weighted_ce = true;
      break;
    case TrainerVariant::Snips:
      t.ips_weighted_ce = true;
      t.self_normalized = true;
      break;
    case TrainerVariant::Dr:
      t.dr_family = t.static_imputation = true;
      break;
    case TrainerVariant::Tdr:
      t.dr_family = t.static_imputation = t.targeting_final_once = true;
      break;
    case TrainerVariant::DrJL:
      t.dr_family = t.learned_imputation = true;
      break;
    case TrainerVariant::MrdrJL:
      t.dr_family = t.learned_imputation = t.mrdr_weight = true;
      break;
    case TrainerVariant::DrCL:
      t.dr_family = t.learned_imputation = t.trains_propensity = true;
      break;
    case TrainerVariant::MrdrCL:
      t.dr_family = t.learned_imputation = t.trains_propensity = t.mrdr_weight = true;
      break;
    case TrainerVariant::TdrJL:
      t.dr_family = t.learned_imputation = t.targeting_final_once = true;
      break;
    case TrainerVariant::TmrdrJL:
      t.dr_family = t.learned_imputation = t.mrdr_weight = t.targeting_final_once = true;
      break;
    case TrainerVariant::TdrCL:
      t.dr_family = t.learned_imputation = t.trains_propensity = t.targeting_per_epoch = true;
      break;
    case TrainerVariant::TmrdrCL:
      t.dr_family = t.learned_imputation = t.trains_propensity = t.mrdr_weight =
          t.targeting_per_epoch = true;
      break;
  }
  return t;
}

struct TrainerConfig {
  TrainerVariant variant = TrainerVariant::TdrCL;
  std::size_t dim = 32;
  AdamConfig adam_pred{0.01, 0.9, 0.999, 1e-8};
  AdamConfig adam_imp{0.01, 0.9, 0.999, 1e-8};
  AdamConfig adam_prop{0.01, 0.9, 0.999, 1e-8};
  double weight_decay = 1e-5;
  std::size_t d_batch = 8192;  // batches over all pairs
  std::size_t o_batch = 2048;  // batches over exposed pairs
  std::size_t max_epochs = 100;
  std::size_t patience = 5;
  double clip_threshold = 0.05;
  ResidualMode targeting_residual = ResidualMode::WithOmega;
  bool ips_weight_grads = true;          // xi gradients flow through the 1/p weights
  bool propensity_embedding_grads = false;
  bool oracle_propensities = false;      // inject true propensities (synthetic runs)
  std::size_t warm_epochs = 5;           // plain CE warm start for the embeddings
  std::size_t pretrain_epochs = 100;     // exposure logistic-regression epochs
  double pretrain_lr = 0.1;
  std::uint64_t seed = 1;

  void validate() const {
    const VariantTraits t = variant_traits(variant);
    require(clip_threshold > 0.0 && clip_threshold < 1.0,
            "TrainerConfig: clip threshold outside (0,1)");
    if (t.targeting_per_epoch || t.targeting_final_once) {
      require(clip_threshold < 1.0, "TrainerConfig: targeting needs clip threshold < 1");
    }
    require(dim > 0 && d_batch > 0 && o_batch > 0 && max_epochs > 0,
            "TrainerConfig: zero-sized knob");
  }
};

// Dense view of a split: exposure mask and binary labels over the full pair
// grid for training, triples kept for validation/test metrics.
struct TrainingData {
  PairSpace space{1, 1};
  PairMask o;           // 1 where a training label exists
  PairArray label;      // binary label; meaningful only where o = 1
  std::vector<std::size_t> exposed;  // indices with o = 1
  Triples val;          // binary labels
  Triples test;         // binary labels
  std::optional<PairArray> p_true;  // for oracle-propensity runs
};

inline TrainingData build_training_data(const SplitDataset& split, double binarize_threshold) {
  TrainingData d;
  d.space = split.space;
  d.o.assign(d.space.total(), 0);
  d.label.assign(d.space.total(), 0.0);
  for (std::size_t k = 0; k < split.train.size(); ++k) {
    const std::size_t idx = d.space.index(split.train.user[k], split.train.item[k]);
    d.o[idx] = 1;
    d.label[idx] = split.train.rating[k] >= binarize_threshold ? 1.0 : 0.0;
    d.exposed.push_back(idx);
  }
  auto binarize_triples = [&](const Triples& src) {
    Triples out = src;
    for (double& r : out.rating) r = r >= binarize_threshold ? 1.0 : 0.0;
    return out;
  };
  d.val = binarize_triples(split.val);
  d.test = binarize_triples(split.test);
  if (d.exposed.empty()) throw DataError("build_training_data: no training labels");
  return d;
}

struct TrainSnapshot {
  std::size_t epoch = 0;
  double val_auc = 0.0;
  double joint_loss = 0.0;   // epoch mean of the prediction-phase loss
  double imp_loss = 0.0;     // epoch mean of the imputation-phase loss
  double eta_star = 0.0;
  double validity = 0.0;     // correction-term residual right after the omega update
  double omega_abs_mean = 0.0;
};

struct TrainResult {
  ModelBundle bundle;
  PairArray omega;
  PairArray p_hat;           // dense propensities as used at the end of training
  std::vector<TrainSnapshot> history;
  bool diverged = false;
  std::size_t best_epoch = 0;
  double best_val_auc = 0.0;
};

// ---------------------------------------------------------------------------
// Loss plumbing shared by the trainer and the gradient tests. The context
// provides per-pair propensities (fixed array, or live through the exposure
// model), the imputation value (model, or static scalar), and omega.

struct TrainContext {
  const TrainingData* data = nullptr;
  ModelBundle* bundle = nullptr;
  PairArray* omega = nullptr;
  const PairArray* fixed_p_hat = nullptr;  // when set, propensities do not track xi
  double clip_threshold = 0.05;
  double static_g = 0.0;                   // residual heuristic for model-free variants
  VariantTraits traits;
  bool ips_weight_grads = true;
  bool propensity_embedding_grads = false;

  std::size_t user_of(std::size_t k) const { return k / data->space.n_items; }
  std::size_t item_of(std::size_t k) const { return k % data->space.n_items; }

  double imputation_value(std::size_t k) const {
    if (!traits.learned_imputation) return static_g;
    return mf_value(bundle->imp, user_of(k), item_of(k));
  }

  // Raw exposure-model score; meaningful only when propensities are live.
  double prop_score(std::size_t k, std::vector<double>& feat_buf) const {
    concat_features(bundle->pred, user_of(k), item_of(k), feat_buf);
    return logistic_score(bundle->prop, feat_buf);
  }

  double propensity(std::size_t k, std::vector<double>& feat_buf) const {
    if (fixed_p_hat) return (*fixed_p_hat)[k];
    return std::max(sigmoid(prop_score(k, feat_buf)), clip_threshold);
  }
};

struct JointLossValue {
  double total = 0.0;
  double dr_part = 0.0;
  double ce_part = 0.0;
};

// Prediction/propensity phase loss over a batch of pair indices: batch mean of
// e_tilde + (o/p)(e - e_tilde) with e = (f - r)^2, e_tilde forward-valued as
// (g + omega)^2, plus the exposure cross entropy when xi trains. Gradients go
// to the prediction model (and exposure model); the imputation model and
// omega stay fixed.
inline JointLossValue joint_loss(const TrainContext& ctx, std::span<const std::size_t> batch,
                                 std::vector<double>* grad_pred,
                                 std::vector<double>* grad_prop) {
  require(!batch.empty(), "joint_loss: empty batch");
  const TrainingData& d = *ctx.data;
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  std::vector<double> feat(ctx.bundle->feature_dim());
  std::vector<double> feat_grad(ctx.traits.trains_propensity && ctx.propensity_embedding_grads
                                    ? ctx.bundle->feature_dim()
                                    : 0);
  Accum dr_acc, ce_acc;
  for (std::size_t k : batch) {
    const std::size_t u = ctx.user_of(k), i = ctx.item_of(k);
    const double f = mf_value(ctx.bundle->pred, u, i);
    const double g_plus_omega = ctx.imputation_value(k) + (*ctx.omega)[k];
    const double e_tilde = g_plus_omega * g_plus_omega;
    const double o = d.o[k] ? 1.0 : 0.0;

    double z = 0.0;
    double p_hat;
    const bool live_p = ctx.fixed_p_hat == nullptr;
    if (live_p) {
      z = ctx.prop_score(k, feat);
      p_hat = std::max(sigmoid(z), ctx.clip_threshold);
    } else {
      p_hat = (*ctx.fixed_p_hat)[k];
    }

    double e = 0.0;
    double upstream_f = -2.0 * g_plus_omega;  // d e_tilde / d f on the live path
    double upstream_z = 0.0;                  // accumulated exposure-score gradient
    if (d.o[k]) {
      const double resid = f - d.label[k];
      e = resid * resid;
      const double w = 1.0 / p_hat;
      dr_acc.add(e_tilde + w * (e - e_tilde));
      upstream_f = upstream_f * (1.0 - w) + w * 2.0 * resid;
      if (live_p && ctx.ips_weight_grads && sigmoid(z) > ctx.clip_threshold) {
        // d/dz of (e - e_tilde)/p with p = sigmoid(z): -(e - e_tilde)(1-p)/p
        upstream_z += -(e - e_tilde) * (1.0 - p_hat) / p_hat * inv_b;
      }
    } else {
      dr_acc.add(e_tilde);
    }
    if (grad_pred) mf_backward(ctx.bundle->pred, u, i, upstream_f * inv_b, *grad_pred);

    if (ctx.traits.trains_propensity && live_p) {
      const double q = sigmoid(z);
      ce_acc.add(cross_entropy(o, q));
      upstream_z += (q - o) * inv_b;
    }
    if (upstream_z != 0.0 && grad_prop) {
      if (!feat_grad.empty()) std::fill(feat_grad.begin(), feat_grad.end(), 0.0);
      logistic_backward(ctx.bundle->prop, feat, upstream_z, *grad_prop,
                        feat_grad.empty() ? std::span<double>{}
                                          : std::span<double>(feat_grad));
      if (!feat_grad.empty() && grad_pred) {
        const std::size_t dim = ctx.bundle->pred.dim;
        for (std::size_t j = 0; j < dim; ++j) {
          (*grad_pred)[ctx.bundle->pred.p_off(u) + j] += feat_grad[j];
          (*grad_pred)[ctx.bundle->pred.q_off(i) + j] += feat_grad[dim + j];
        }
      }
    }
  }
  JointLossValue v;
  v.dr_part = dr_acc.value() * inv_b;
  v.ce_part = ce_acc.value() * inv_b;
  v.total = v.dr_part + v.ce_part;
  if (!std::isfinite(v.total)) throw DomainError("joint_loss: non-finite loss");
  return v;
}

// Imputation phase loss over a batch of exposed pair indices: batch mean of
// weight * ((g + omega) - (r - f))^2 with weight 1/p (or (1-p)/p^2 for the
// variance-minimizing variants). Only the imputation model receives
// gradients.
inline double imputation_loss(const TrainContext& ctx, std::span<const std::size_t> batch,
                              std::vector<double>* grad_imp) {
  require(!batch.empty(), "imputation_loss: empty batch");
  require(ctx.traits.learned_imputation, "imputation_loss: variant has no imputation model");
  const TrainingData& d = *ctx.data;
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  std::vector<double> feat(ctx.bundle->feature_dim());
  Accum acc;
  for (std::size_t k : batch) {
    require(d.o[k] != 0, "imputation_loss: batch contains an unexposed pair");
    const std::size_t u = ctx.user_of(k), i = ctx.item_of(k);
    const double f = mf_value(ctx.bundle->pred, u, i);
    const double g = mf_value(ctx.bundle->imp, u, i);
    const double gap = (g + (*ctx.omega)[k]) - (d.label[k] - f);
    const double p = ctx.propensity(k, feat);
    const double w = ctx.traits.mrdr_weight ? (1.0 - p) / (p * p) : 1.0 / p;
    acc.add(w * gap * gap);
    if (grad_imp) mf_backward(ctx.bundle->imp, u, i, 2.0 * w * gap * inv_b, *grad_imp);
  }
  const double value = acc.value() * inv_b;
  if (!std::isfinite(value)) throw DomainError("imputation_loss: non-finite loss");
  return value;
}

// ---------------------------------------------------------------------------
// Exposure-model pretraining: logistic regression of o on the concatenated
// embeddings over every pair, full batch.

inline void pretrain_propensity(const TrainingData& d, ModelBundle& bundle,
                                std::size_t epochs, double lr) {
  const std::size_t n = d.space.total();
  std::size_t n_pos = d.exposed.size();
  if (n_pos == 0 || n_pos == n) {
    throw DomainError("pretrain_propensity: exposure is all-zero or all-one");
  }
  AdamState opt(bundle.prop.w.size());
  AdamConfig cfg{lr, 0.9, 0.999, 1e-8};
  std::vector<double> grad(bundle.prop.w.size(), 0.0);
  std::vector<double> feat(bundle.feature_dim());
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    std::fill(grad.begin(), grad.end(), 0.0);
    for (std::size_t k = 0; k < n; ++k) {
      concat_features(bundle.pred, k / d.space.n_items, k % d.space.n_items, feat);
      const double q = sigmoid(logistic_score(bundle.prop, feat));
      const double o = d.o[k] ? 1.0 : 0.0;
      logistic_backward(bundle.prop, feat, (q - o) * inv_n, grad);
    }
    adam_step(opt, bundle.prop.w, grad, cfg, "exposure model");
  }
}

// Mean exposure cross entropy of the current exposure model over all pairs.
inline double propensity_ce(const TrainingData& d, const ModelBundle& bundle) {
  std::vector<double> feat(bundle.feature_dim());
  Accum acc;
  for (std::size_t k = 0; k < d.space.total(); ++k) {
    concat_features(bundle.pred, k / d.space.n_items, k % d.space.n_items, feat);
    const double q = sigmoid(logistic_score(bundle.prop, feat));
    acc.add(cross_entropy(d.o[k] ? 1.0 : 0.0, q));
  }
  return acc.value() / static_cast<double>(d.space.total());
}

// ---------------------------------------------------------------------------
// The trainer.

namespace detail {

struct BestState {
  double val_auc = -1.0;
  std::size_t epoch = 0;
  std::vector<double> pred_w, imp_w, prop_w;
  PairArray omega;
};

inline double validation_auc(const TrainingData& d, const MFParams& pred) {
  std::vector<double> score(d.val.size());
  for (std::size_t k = 0; k < d.val.size(); ++k) {
    score[k] = mf_value(pred, d.val.user[k], d.val.item[k]);
  }
  return auc(score, d.val.rating);
}

inline void capture_best(BestState& best, const ModelBundle& b, const PairArray& omega,
                         double val_auc, std::size_t epoch) {
  best.val_auc = val_auc;
  best.epoch = epoch;
  best.pred_w = b.pred.w;
  best.imp_w = b.imp.w;
  best.prop_w = b.prop.w;
  best.omega = omega;
}

inline void restore_best(const BestState& best, ModelBundle& b, PairArray& omega) {
  b.pred.w = best.pred_w;
  b.imp.w = best.imp_w;
  b.prop.w = best.prop_w;
  omega = best.omega;
}

// IPS-weighted mean signed residual over exposed pairs; the static
// imputation heuristic for the model-free doubly robust variants.
inline double static_residual(const TrainContext& ctx) {
  const TrainingData& d = *ctx.data;
  std::vector<double> feat(ctx.bundle->feature_dim());
  Accum num, den;
  for (std::size_t k : d.exposed) {
    const double p = ctx.propensity(k, feat);
    const double f = mf_value(ctx.bundle->pred, ctx.user_of(k), ctx.item_of(k));
    num.add((d.label[k] - f) / p);
    den.add(1.0 / p);
  }
  return num.value() / den.value();
}

// Full-batch targeting over exposed pairs on signed residuals, then the
// omega update over every pair. Returns eta*.
inline TargetingResult training_targeting_step(const TrainContext& ctx, ResidualMode mode) {
  const TrainingData& d = *ctx.data;
  std::vector<double> feat(ctx.bundle->feature_dim());
  Accum num, den;
  for (std::size_t k : d.exposed) {
    const double p = ctx.propensity(k, feat);
    const double w = 1.0 / p - 1.0;
    const double f = mf_value(ctx.bundle->pred, ctx.user_of(k), ctx.item_of(k));
    double resid = (d.label[k] - f) - ctx.imputation_value(k);
    if (mode == ResidualMode::WithOmega) resid -= (*ctx.omega)[k];
    num.add(w * resid);
    den.add(w * w);
  }
  TargetingResult res;
  if (den.value() == 0.0) {
    res.degenerate = true;
  } else {
    res.eta_star = num.value() / den.value();
    PairArray& omega = *ctx.omega;
    for (std::size_t k = 0; k < omega.size(); ++k) {
      omega[k] += res.eta_star * (1.0 / ctx.propensity(k, feat) - 1.0);
    }
  }
  // Residual of the correction constraint immediately after the update.
  Accum check;
  for (std::size_t k : d.exposed) {
    const double p = ctx.propensity(k, feat);
    const double f = mf_value(ctx.bundle->pred, ctx.user_of(k), ctx.item_of(k));
    const double resid = (d.label[k] - f) - ctx.imputation_value(k) - (*ctx.omega)[k];
    check.add(resid * (1.0 - p) / p);
  }
  res.residual_correction = check.value() / static_cast<double>(d.space.total());
  return res;
}

// Plain-objective phase for BASE / IPS / SNIPS: (weighted) cross entropy over
// a batch of exposed pairs.
inline double plain_ce_loss(const TrainContext& ctx, std::span<const std::size_t> batch,
                            std::vector<double>* grad_pred) {
  const TrainingData& d = *ctx.data;
  std::vector<double> feat(ctx.bundle->feature_dim());
  std::vector<double> weights(batch.size(), 1.0);
  if (ctx.traits.ips_weighted_ce) {
    for (std::size_t j = 0; j < batch.size(); ++j) {
      weights[j] = 1.0 / ctx.propensity(batch[j], feat);
    }
  }
  double norm = static_cast<double>(batch.size());
  if (ctx.traits.self_normalized) {
    norm = compensated_sum(weights);
  }
  Accum acc;
  for (std::size_t j = 0; j < batch.size(); ++j) {
    const std::size_t k = batch[j];
    const std::size_t u = ctx.user_of(k), i = ctx.item_of(k);
    const double f = mf_value(ctx.bundle->pred, u, i);
    acc.add(weights[j] * cross_entropy(d.label[k], f));
    if (grad_pred) {
      mf_backward_score(ctx.bundle->pred, u, i, weights[j] * (f - d.label[k]) / norm,
                        *grad_pred);
    }
  }
  const double value = acc.value() / norm;
  if (!std::isfinite(value)) throw DomainError("plain_ce_loss: non-finite loss");
  return value;
}

}  // namespace detail

struct EvalRow {
  double mse = 0.0;
  double auc_value = 0.0;
  double ndcg5 = 0.0;
  double ndcg10 = 0.0;
};

inline EvalRow evaluate_model(const Triples& test, const MFParams& pred) {
  require(!test.empty(), "evaluate_model: empty test set");
  std::vector<double> score(test.size());
  for (std::size_t k = 0; k < test.size(); ++k) {
    score[k] = mf_value(pred, test.user[k], test.item[k]);
  }
  EvalRow row;
  row.mse = mse(score, test.rating);
  row.auc_value = auc(score, test.rating);
  row.ndcg5 = ndcg_at_k(test.user, test.item, score, test.rating, 5);
  row.ndcg10 = ndcg_at_k(test.user, test.item, score, test.rating, 10);
  return row;
}

// Trains any variant. One loop: an optional plain-CE warm start, exposure
// pretraining, then epochs of (prediction/propensity phase, imputation phase,
// targeting step) with early stopping on validation AUC and best-state
// restore. Model-free variants collapse to the appropriate subset of phases.
inline TrainResult run_training(const TrainingData& data, const TrainerConfig& cfg) {
  cfg.validate();
  const VariantTraits traits = variant_traits(cfg.variant);
  const SeededRng rng(cfg.seed);

  TrainResult out;
  RngStream pred_init = rng.stream("init-pred");
  out.bundle.pred = init_mf(data.space.n_users, data.space.n_items, cfg.dim, Head::Sigmoid,
                            pred_init);
  RngStream imp_init = rng.stream("init-imp");
  out.bundle.imp = init_mf(data.space.n_users, data.space.n_items, cfg.dim, Head::Linear,
                           imp_init);
  out.bundle.prop = init_logistic(2 * cfg.dim);
  out.omega.assign(data.space.total(), 0.0);

  AdamState opt_pred(out.bundle.pred.size());
  AdamState opt_imp(out.bundle.imp.size());
  AdamState opt_prop(out.bundle.prop.w.size());
  std::vector<double> grad_pred(out.bundle.pred.size());
  std::vector<double> grad_imp(out.bundle.imp.size());
  std::vector<double> grad_prop(out.bundle.prop.w.size());

  TrainContext ctx;
  ctx.data = &data;
  ctx.bundle = &out.bundle;
  ctx.omega = &out.omega;
  ctx.clip_threshold = cfg.clip_threshold;
  ctx.traits = traits;
  ctx.ips_weight_grads = cfg.ips_weight_grads;
  ctx.propensity_embedding_grads = cfg.propensity_embedding_grads;

  // Warm start: a few epochs of plain cross entropy so the embeddings carry
  // signal before the exposure model reads them. Identical across variants
  // for a given seed, which keeps paired-seed comparisons aligned.
  {
    TrainContext warm_ctx = ctx;
    warm_ctx.traits = variant_traits(TrainerVariant::Base);
    RngStream order_rng = rng.stream("warm-order");
    std::vector<std::size_t> order = data.exposed;
    for (std::size_t epoch = 0; epoch < cfg.warm_epochs; ++epoch) {
      order_rng.shuffle(order);
      for (std::size_t start = 0; start < order.size(); start += cfg.o_batch) {
        const std::size_t stop = std::min(start + cfg.o_batch, order.size());
        std::fill(grad_pred.begin(), grad_pred.end(), 0.0);
        detail::plain_ce_loss(warm_ctx,
                              std::span<const std::size_t>(order.data() + start, stop - start),
                              &grad_pred);
        for (std::size_t k = 0; k < grad_pred.size(); ++k) {
          grad_pred[k] += cfg.weight_decay * out.bundle.pred.w[k];
        }
        adam_step(opt_pred, out.bundle.pred.w, grad_pred, cfg.adam_pred, "prediction model");
      }
    }
  }

  // Dense propensities. Oracle mode injects the truth; otherwise fit the
  // exposure model and freeze its output for the JL/static variants.
  PairArray fixed_p_hat;
  const bool needs_propensities = traits.dr_family || traits.ips_weighted_ce;
  if (cfg.oracle_propensities) {
    require(data.p_true.has_value(), "run_training: oracle propensities unavailable");
    fixed_p_hat.resize(data.space.total());
    for (std::size_t k = 0; k < fixed_p_hat.size(); ++k) {
      fixed_p_hat[k] = std::max((*data.p_true)[k], cfg.clip_threshold);
    }
    ctx.fixed_p_hat = &fixed_p_hat;
  } else if (needs_propensities) {
    pretrain_propensity(data, out.bundle, cfg.pretrain_epochs, cfg.pretrain_lr);
    if (!traits.trains_propensity) {
      fixed_p_hat.resize(data.space.total());
      std::vector<double> feat(out.bundle.feature_dim());
      for (std::size_t k = 0; k < fixed_p_hat.size(); ++k) {
        fixed_p_hat[k] = std::max(
            sigmoid(ctx.prop_score(k, feat)), cfg.clip_threshold);
      }
      ctx.fixed_p_hat = &fixed_p_hat;
    }
  } else {
    fixed_p_hat.assign(data.space.total(), 1.0);
    ctx.fixed_p_hat = &fixed_p_hat;
  }

  std::vector<std::size_t> d_order(data.space.total());
  std::iota(d_order.begin(), d_order.end(), 0);
  std::vector<std::size_t> o_order = data.exposed;
  RngStream d_order_rng = rng.stream("d-order");
  RngStream o_order_rng = rng.stream("o-order");

  detail::BestState best;
  detail::capture_best(best, out.bundle, out.omega, detail::validation_auc(data, out.bundle.pred),
                       0);
  std::size_t since_best = 0;
  bool final_stage = !(traits.targeting_final_once);  // single-stage variants start "final"
  std::size_t epoch = 0;

  auto run_epoch = [&](bool allow_targeting, bool imputation_enabled) {
    TrainSnapshot snap;
    snap.epoch = ++epoch;

    if (traits.static_imputation && imputation_enabled) {
      ctx.static_g = detail::static_residual(ctx);
    }

    // Prediction (and exposure) phase over D or, for plain objectives, O.
    Accum joint_acc;
    std::size_t joint_steps = 0;
    if (traits.dr_family) {
      d_order_rng.shuffle(d_order);
      for (std::size_t start = 0; start < d_order.size(); start += cfg.d_batch) {
        const std::size_t stop = std::min(start + cfg.d_batch, d_order.size());
        std::fill(grad_pred.begin(), grad_pred.end(), 0.0);
        std::fill(grad_prop.begin(), grad_prop.end(), 0.0);
        const JointLossValue v = joint_loss(
            ctx, std::span<const std::size_t>(d_order.data() + start, stop - start), &grad_pred,
            traits.trains_propensity ? &grad_prop : nullptr);
        joint_acc.add(v.total);
        ++joint_steps;
        for (std::size_t k = 0; k < grad_pred.size(); ++k) {
          grad_pred[k] += cfg.weight_decay * out.bundle.pred.w[k];
        }
        adam_step(opt_pred, out.bundle.pred.w, grad_pred, cfg.adam_pred, "prediction model");
        if (traits.trains_propensity) {
          for (std::size_t k = 0; k < grad_prop.size(); ++k) {
            grad_prop[k] += cfg.weight_decay * out.bundle.prop.w[k];
          }
          adam_step(opt_prop, out.bundle.prop.w, grad_prop, cfg.adam_prop, "exposure model");
        }
      }
    } else {
      o_order_rng.shuffle(o_order);
      for (std::size_t start = 0; start < o_order.size(); start += cfg.o_batch) {
        const std::size_t stop = std::min(start + cfg.o_batch, o_order.size());
        std::fill(grad_pred.begin(), grad_pred.end(), 0.0);
        joint_acc.add(detail::plain_ce_loss(
            ctx, std::span<const std::size_t>(o_order.data() + start, stop - start),
            &grad_pred));
        ++joint_steps;
        for (std::size_t k = 0; k < grad_pred.size(); ++k) {
          grad_pred[k] += cfg.weight_decay * out.bundle.pred.w[k];
        }
        adam_step(opt_pred, out.bundle.pred.w, grad_pred, cfg.adam_pred, "prediction model");
      }
    }
    snap.joint_loss = joint_steps ? joint_acc.value() / static_cast<double>(joint_steps) : 0.0;

    // Imputation phase over O.
    if (traits.learned_imputation && imputation_enabled) {
      Accum imp_acc;
      std::size_t imp_steps = 0;
      o_order_rng.shuffle(o_order);
      for (std::size_t start = 0; start < o_order.size(); start += cfg.o_batch) {
        const std::size_t stop = std::min(start + cfg.o_batch, o_order.size());
        std::fill(grad_imp.begin(), grad_imp.end(), 0.0);
        imp_acc.add(imputation_loss(
            ctx, std::span<const std::size_t>(o_order.data() + start, stop - start), &grad_imp));
        ++imp_steps;
        for (std::size_t k = 0; k < grad_imp.size(); ++k) {
          grad_imp[k] += cfg.weight_decay * out.bundle.imp.w[k];
        }
        adam_step(opt_imp, out.bundle.imp.w, grad_imp, cfg.adam_imp, "imputation model");
      }
      snap.imp_loss = imp_steps ? imp_acc.value() / static_cast<double>(imp_steps) : 0.0;
    }

    // Targeting step.
    if (allow_targeting) {
      const TargetingResult t = detail::training_targeting_step(ctx, cfg.targeting_residual);
      snap.eta_star = t.eta_star;
      snap.validity = t.residual_correction;
    }

    Accum omega_abs;
    for (double w : out.omega) omega_abs.add(std::abs(w));
    snap.omega_abs_mean = omega_abs.value() / static_cast<double>(out.omega.size());
    snap.val_auc = detail::validation_auc(data, out.bundle.pred);
    out.history.push_back(snap);
    return snap;
  };

  try {
    // Stage 1: the variant's main loop; targeting only for the per-epoch
    // (collaborative) variants.
    while (epoch < cfg.max_epochs) {
      const TrainSnapshot snap = run_epoch(traits.targeting_per_epoch, true);
      if (snap.val_auc > best.val_auc) {
        detail::capture_best(best, out.bundle, out.omega, snap.val_auc, epoch);
        since_best = 0;
      } else if (++since_best > cfg.patience) {
        break;
      }
    }
    detail::restore_best(best, out.bundle, out.omega);

    // Stage 2 for the single-targeting variants: one targeting step on the
    // restored model, then prediction-model training against the corrected
    // imputation until validation stops improving.
    if (!final_stage) {
      const TargetingResult t = detail::training_targeting_step(ctx, cfg.targeting_residual);
      TrainSnapshot mark;
      mark.epoch = ++epoch;
      mark.eta_star = t.eta_star;
      mark.validity = t.residual_correction;
      mark.val_auc = detail::validation_auc(data, out.bundle.pred);
      Accum omega_abs;
      for (double w : out.omega) omega_abs.add(std::abs(w));
      mark.omega_abs_mean = omega_abs.value() / static_cast<double>(out.omega.size());
      out.history.push_back(mark);

      detail::capture_best(best, out.bundle, out.omega, mark.val_auc, epoch);
      since_best = 0;
      const std::size_t stage2_limit = epoch + cfg.max_epochs;
      while (epoch < stage2_limit) {
        const TrainSnapshot snap = run_epoch(false, false);
        if (snap.val_auc > best.val_auc) {
          detail::capture_best(best, out.bundle, out.omega, snap.val_auc, epoch);
          since_best = 0;
        } else if (++since_best > cfg.patience) {
          break;
        }
      }
      detail::restore_best(best, out.bundle, out.omega);
    }
  } catch (const DomainError&) {
    out.diverged = true;
    detail::restore_best(best, out.bundle, out.omega);
  }

  out.best_epoch = best.epoch;
  out.best_val_auc = best.val_auc;
  out.p_hat.resize(data.space.total());
  {
    std::vector<double> feat(out.bundle.feature_dim());
    for (std::size_t k = 0; k < out.p_hat.size(); ++k) {
      out.p_hat[k] = ctx.propensity(k, feat);
    }
  }
  return out;
}

}  // namespace tdr
