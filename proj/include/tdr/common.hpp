#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace tdr {

inline constexpr const char* kVersion = "tdr 0.1.0";

// Shared tolerance constants. Defined once; every module asserts against these.
namespace tol {
inline constexpr double kIdentityRel = 1e-12;   // exact algebraic identities
inline constexpr double kValidityRel = 1e-8;    // targeting validity residual, relative to scale(e)
inline constexpr double kTightRel = 1e-10;      // repeated-targeting eta, exactness checks
inline constexpr double kEtaOracleAbs = 1e-8;   // closed-form eta vs line-search oracle
inline constexpr double kGradCheckRel = 1e-4;   // analytic vs central-difference gradients
}  // namespace tol

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DomainError : std::runtime_error {
  explicit DomainError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ParseError : std::runtime_error {
  explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::runtime_error(msg);
}

// Neumaier-compensated accumulator. All loss reductions run through this so
// that sums are independent of optimization level and stable enough for the
// 1e-12 identity checks.
class Accum {
 public:
  void add(double x) {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x)) {
      comp_ += (sum_ - t) + x;
    } else {
      comp_ += (x - t) + sum_;
    }
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

inline double compensated_sum(std::span<const double> xs) {
  Accum a;
  for (double x : xs) a.add(x);
  return a.value();
}

inline double mean(std::span<const double> xs) {
  if (xs.empty()) throw DomainError("mean of empty range");
  return compensated_sum(xs) / static_cast<double>(xs.size());
}

// Sample variance (n-1 denominator) via the two-pass compensated formula.
inline double sample_variance(std::span<const double> xs) {
  if (xs.size() < 2) throw DomainError("variance needs >= 2 samples");
  const double m = mean(xs);
  Accum a;
  for (double x : xs) a.add((x - m) * (x - m));
  return a.value() / static_cast<double>(xs.size() - 1);
}

inline double sigmoid(double z) {
  if (z >= 0.0) {
    return 1.0 / (1.0 + std::exp(-z));
  }
  const double ez = std::exp(z);
  return ez / (1.0 + ez);
}

// log(1 + exp(z)) without overflow.
inline double softplus(double z) {
  return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z)));
}

inline double clamp01_log_safe(double x) {
  constexpr double eps = 1e-6;
  return std::min(std::max(x, eps), 1.0 - eps);
}

// Binary cross entropy -[y log q + (1-y) log(1-q)], q clamped away from {0,1}.
inline double cross_entropy(double y, double q) {
  const double qc = clamp01_log_safe(q);
  return -(y * std::log(qc) + (1.0 - y) * std::log1p(-qc));
}

// Worker count: TDR_WORKERS env var wins, then hardware_concurrency.
inline unsigned worker_count() {
  if (const char* env = std::getenv("TDR_WORKERS")) {
    const long n = std::strtol(env, nullptr, 10);
    if (n >= 1) return static_cast<unsigned>(n);
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1u : hw;
}

// Runs fn(i) for i in [0, n) on a small worker pool. Results must be written
// into preallocated per-index slots by fn; index order of side effects is up
// to the caller, which keeps aggregation deterministic regardless of workers.
template <typename Fn>
void parallel_for_indexed(std::size_t n, Fn&& fn, unsigned workers = worker_count()) {
  if (n == 0) return;
  workers = std::min<std::size_t>(workers, n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  pool.reserve(workers);
  std::exception_ptr first_error;
  std::mutex err_mu;
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      while (true) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n) break;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(err_mu);
          if (!first_error) first_error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace tdr
