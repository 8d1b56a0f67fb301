#pragma once

#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "tdr/common.hpp"
#include "tdr/core.hpp"
#include "tdr/rng.hpp"

namespace tdr {

enum class Head { Linear, Sigmoid };

// Matrix factorization with per-user/per-item biases and a global offset,
// stored as one flat parameter vector so the optimizer and checkpoints treat
// every model identically. Layout: P | Q | bu | bi | mu.
struct MFParams {
  std::size_t n_users = 0;
  std::size_t n_items = 0;
  std::size_t dim = 0;
  Head head = Head::Linear;
  std::vector<double> w;

  std::size_t p_off(std::size_t u) const { return u * dim; }
  std::size_t q_off(std::size_t i) const { return (n_users + i) * dim; }
  std::size_t bu_off(std::size_t u) const { return (n_users + n_items) * dim + u; }
  std::size_t bi_off(std::size_t i) const { return (n_users + n_items) * dim + n_users + i; }
  std::size_t mu_off() const { return (n_users + n_items) * dim + n_users + n_items; }
  std::size_t size() const { return (n_users + n_items) * dim + n_users + n_items + 1; }
};

inline MFParams init_mf(std::size_t n_users, std::size_t n_items, std::size_t dim, Head head,
                        RngStream& rng, double init_sd = 0.1) {
  require(n_users > 0 && n_items > 0 && dim > 0, "init_mf: empty model");
  MFParams m;
  m.n_users = n_users;
  m.n_items = n_items;
  m.dim = dim;
  m.head = head;
  m.w.assign(m.size(), 0.0);
  // Embeddings get small Gaussian noise; biases and the offset start at zero.
  for (std::size_t k = 0; k < (n_users + n_items) * dim; ++k) m.w[k] = rng.normal(0.0, init_sd);
  return m;
}

inline double mf_score(const MFParams& m, std::size_t u, std::size_t i) {
  const double* p = m.w.data() + m.p_off(u);
  const double* q = m.w.data() + m.q_off(i);
  Accum dot;
  for (std::size_t k = 0; k < m.dim; ++k) dot.add(p[k] * q[k]);
  return dot.value() + m.w[m.bu_off(u)] + m.w[m.bi_off(i)] + m.w[m.mu_off()];
}

inline double head_value(Head head, double z) {
  return head == Head::Sigmoid ? sigmoid(z) : z;
}

// d value / d score given the already-computed value.
inline double head_slope(Head head, double value) {
  return head == Head::Sigmoid ? value * (1.0 - value) : 1.0;
}

inline double mf_value(const MFParams& m, std::size_t u, std::size_t i) {
  return head_value(m.head, mf_score(m, u, i));
}

// Accumulates upstream * d score / d w into grad (same layout as m.w),
// bypassing the head. Lets cross-entropy losses use the stable (value - label)
// form of d loss / d score.
inline void mf_backward_score(const MFParams& m, std::size_t u, std::size_t i, double upstream_z,
                              std::vector<double>& grad) {
  const double* p = m.w.data() + m.p_off(u);
  const double* q = m.w.data() + m.q_off(i);
  double* gp = grad.data() + m.p_off(u);
  double* gq = grad.data() + m.q_off(i);
  for (std::size_t k = 0; k < m.dim; ++k) {
    gp[k] += upstream_z * q[k];
    gq[k] += upstream_z * p[k];
  }
  grad[m.bu_off(u)] += upstream_z;
  grad[m.bi_off(i)] += upstream_z;
  grad[m.mu_off()] += upstream_z;
}

// Accumulates upstream * d value / d w into grad (same layout as m.w).
inline void mf_backward(const MFParams& m, std::size_t u, std::size_t i, double upstream,
                        std::vector<double>& grad) {
  const double z = mf_score(m, u, i);
  const double g = upstream * head_slope(m.head, head_value(m.head, z));
  const double* p = m.w.data() + m.p_off(u);
  const double* q = m.w.data() + m.q_off(i);
  double* gp = grad.data() + m.p_off(u);
  double* gq = grad.data() + m.q_off(i);
  for (std::size_t k = 0; k < m.dim; ++k) {
    gp[k] += g * q[k];
    gq[k] += g * p[k];
  }
  grad[m.bu_off(u)] += g;
  grad[m.bi_off(i)] += g;
  grad[m.mu_off()] += g;
}

// Logistic regression head used for exposure probabilities. The weight vector
// carries the bias in its last slot.
struct LogisticParams {
  std::size_t input_dim = 0;
  std::vector<double> w;  // input_dim weights followed by one bias
};

inline LogisticParams init_logistic(std::size_t input_dim) {
  require(input_dim > 0, "init_logistic: empty input");
  LogisticParams lp;
  lp.input_dim = input_dim;
  lp.w.assign(input_dim + 1, 0.0);
  return lp;
}

inline double logistic_score(const LogisticParams& lp, std::span<const double> x) {
  require(x.size() == lp.input_dim, "logistic_score: feature size mismatch");
  Accum dot;
  for (std::size_t k = 0; k < lp.input_dim; ++k) dot.add(lp.w[k] * x[k]);
  return dot.value() + lp.w[lp.input_dim];
}

inline double logistic_value(const LogisticParams& lp, std::span<const double> x) {
  return sigmoid(logistic_score(lp, x));
}

// upstream_z = dL/dscore. Weight gradients accumulate into grad; feature
// gradients accumulate into grad_x when the caller passes a buffer.
inline void logistic_backward(const LogisticParams& lp, std::span<const double> x,
                              double upstream_z, std::vector<double>& grad,
                              std::span<double> grad_x = {}) {
  for (std::size_t k = 0; k < lp.input_dim; ++k) grad[k] += upstream_z * x[k];
  grad[lp.input_dim] += upstream_z;
  if (!grad_x.empty()) {
    require(grad_x.size() == lp.input_dim, "logistic_backward: grad_x size mismatch");
    for (std::size_t k = 0; k < lp.input_dim; ++k) grad_x[k] += upstream_z * lp.w[k];
  }
}

// Copies [P_u ; Q_i] out of an embedding model into a caller-owned buffer.
inline void concat_features(const MFParams& m, std::size_t u, std::size_t i,
                            std::span<double> out) {
  require(out.size() == 2 * m.dim, "concat_features: buffer size mismatch");
  std::memcpy(out.data(), m.w.data() + m.p_off(u), m.dim * sizeof(double));
  std::memcpy(out.data() + m.dim, m.w.data() + m.q_off(i), m.dim * sizeof(double));
}

// Marks values excluded from differentiation. The analytic gradients realize
// the exclusion; this identity exists so call sites can state it.
inline double stop_gradient(double x) { return x; }

struct AdamConfig {
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t t = 0;

  explicit AdamState(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

// One bias-corrected update. Weight decay is not applied here; trainers fold
// it into grad so decay participates in the moment estimates.
inline void adam_step(AdamState& st, std::vector<double>& w, std::span<const double> grad,
                      const AdamConfig& cfg, const char* tag = "params") {
  require(st.m.size() == w.size() && grad.size() == w.size(), "adam_step: size mismatch");
  for (std::size_t k = 0; k < grad.size(); ++k) {
    if (!std::isfinite(grad[k])) {
      throw DomainError(std::string("adam_step: non-finite gradient in ") + tag + " at index " +
                        std::to_string(k));
    }
  }
  st.t += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.t));
  for (std::size_t k = 0; k < w.size(); ++k) {
    st.m[k] = cfg.beta1 * st.m[k] + (1.0 - cfg.beta1) * grad[k];
    st.v[k] = cfg.beta2 * st.v[k] + (1.0 - cfg.beta2) * grad[k] * grad[k];
    const double mhat = st.m[k] / bc1;
    const double vhat = st.v[k] / bc2;
    w[k] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }
}

namespace detail {

inline void write_u64(std::ostream& os, std::uint64_t v) {
  char buf[8];
  std::memcpy(buf, &v, 8);
  os.write(buf, 8);
}

inline std::uint64_t read_u64(std::istream& is) {
  char buf[8];
  is.read(buf, 8);
  if (!is) throw ParseError("checkpoint: truncated header");
  std::uint64_t v;
  std::memcpy(&v, buf, 8);
  return v;
}

inline void write_doubles(std::ostream& os, std::span<const double> xs) {
  write_u64(os, xs.size());
  os.write(reinterpret_cast<const char*>(xs.data()),
           static_cast<std::streamsize>(xs.size() * sizeof(double)));
}

inline std::vector<double> read_doubles(std::istream& is) {
  const std::uint64_t n = read_u64(is);
  std::vector<double> xs(n);
  is.read(reinterpret_cast<char*>(xs.data()), static_cast<std::streamsize>(n * sizeof(double)));
  if (!is) throw ParseError("checkpoint: truncated payload");
  return xs;
}

}  // namespace detail

inline constexpr std::uint64_t kMfMagic = 0x5244544d30314646ULL;
inline constexpr std::uint64_t kLogisticMagic = 0x5244544c30314646ULL;

inline void save_mf(std::ostream& os, const MFParams& m) {
  detail::write_u64(os, kMfMagic);
  detail::write_u64(os, m.n_users);
  detail::write_u64(os, m.n_items);
  detail::write_u64(os, m.dim);
  detail::write_u64(os, m.head == Head::Sigmoid ? 1 : 0);
  detail::write_doubles(os, m.w);
}

inline MFParams load_mf(std::istream& is) {
  if (detail::read_u64(is) != kMfMagic) throw ParseError("checkpoint: bad factor-model magic");
  MFParams m;
  m.n_users = detail::read_u64(is);
  m.n_items = detail::read_u64(is);
  m.dim = detail::read_u64(is);
  m.head = detail::read_u64(is) == 1 ? Head::Sigmoid : Head::Linear;
  m.w = detail::read_doubles(is);
  if (m.w.size() != m.size()) throw ParseError("checkpoint: factor-model size mismatch");
  return m;
}

inline void save_logistic(std::ostream& os, const LogisticParams& lp) {
  detail::write_u64(os, kLogisticMagic);
  detail::write_u64(os, lp.input_dim);
  detail::write_doubles(os, lp.w);
}

inline LogisticParams load_logistic(std::istream& is) {
  if (detail::read_u64(is) != kLogisticMagic) throw ParseError("checkpoint: bad logistic magic");
  LogisticParams lp;
  lp.input_dim = detail::read_u64(is);
  lp.w = detail::read_doubles(is);
  if (lp.w.size() != lp.input_dim + 1) throw ParseError("checkpoint: logistic size mismatch");
  return lp;
}

// Everything a collaborative training run carries: the prediction model, the
// error-imputation model, and the exposure model. The exposure model reads
// its features from the prediction model's embeddings.
struct ModelBundle {
  MFParams pred;
  MFParams imp;
  LogisticParams prop;

  std::size_t feature_dim() const { return 2 * pred.dim; }
};

inline void save_bundle(std::ostream& os, const ModelBundle& b) {
  save_mf(os, b.pred);
  save_mf(os, b.imp);
  save_logistic(os, b.prop);
}

inline ModelBundle load_bundle(std::istream& is) {
  ModelBundle b;
  b.pred = load_mf(is);
  b.imp = load_mf(is);
  b.prop = load_logistic(is);
  return b;
}

}  // namespace tdr
