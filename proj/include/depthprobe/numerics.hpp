#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "depthprobe/errors.hpp"

// Dense matrix storage plus the metric kernels every experiment shares.
// Storage is 32-bit; every reduction in this file accumulates in 64-bit so
// metrics reproduce to tight tolerances regardless of vector length.

namespace depthprobe {

template <typename S>
class Mat {
 public:
  Mat() = default;
  Mat(int rows, int cols, S fill = S(0))
      : rows_(rows), cols_(cols), data_(checked_size(rows, cols), fill) {}

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  size_t size() const { return data_.size(); }

  S& at(int r, int c) { return data_[static_cast<size_t>(r) * cols_ + c]; }
  const S& at(int r, int c) const { return data_[static_cast<size_t>(r) * cols_ + c]; }

  S* row(int r) { return data_.data() + static_cast<size_t>(r) * cols_; }
  const S* row(int r) const { return data_.data() + static_cast<size_t>(r) * cols_; }

  std::span<S> row_span(int r) { return {row(r), static_cast<size_t>(cols_)}; }
  std::span<const S> row_span(int r) const { return {row(r), static_cast<size_t>(cols_)}; }

  S* data() { return data_.data(); }
  const S* data() const { return data_.data(); }

  void fill(S value) { std::fill(data_.begin(), data_.end(), value); }

  // In-place reshape; entries are unspecified afterwards. Keeps capacity.
  void reshape(int rows, int cols) {
    if (rows < 0 || cols < 0) throw ValueError("Mat: negative shape");
    rows_ = rows;
    cols_ = cols;
    data_.resize(static_cast<size_t>(rows) * cols);
  }

  bool all_finite() const {
    for (const S& x : data_)
      if (!std::isfinite(static_cast<double>(x))) return false;
    return true;
  }

  bool same_shape(const Mat& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }

  friend bool operator==(const Mat& a, const Mat& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

 private:
  static size_t checked_size(int rows, int cols) {
    if (rows < 0 || cols < 0) throw ValueError("Mat: negative shape");
    return static_cast<size_t>(rows) * static_cast<size_t>(cols);
  }

  int rows_ = 0;
  int cols_ = 0;
  std::vector<S> data_;
};

using Matrix = Mat<float>;

// Probability vector over the vocabulary: entries >= 0, sum == 1 within 1e-6.
using ProbVector = std::vector<float>;

inline void require_finite(std::span<const float> v, const char* who) {
  for (float x : v)
    if (!std::isfinite(x)) throw ValueError(std::string(who) + ": non-finite input");
}

// Max-subtracted softmax; exp/sum evaluated in 64-bit.
inline ProbVector softmax(std::span<const float> logits) {
  if (logits.empty()) throw ValueError("softmax: empty input");
  require_finite(logits, "softmax");
  float max_logit = logits[0];
  for (float x : logits) max_logit = std::max(max_logit, x);
  std::vector<double> expd(logits.size());
  double total = 0.0;
  for (size_t i = 0; i < logits.size(); ++i) {
    expd[i] = std::exp(static_cast<double>(logits[i]) - static_cast<double>(max_logit));
    total += expd[i];
  }
  ProbVector out(logits.size());
  for (size_t i = 0; i < logits.size(); ++i)
    out[i] = static_cast<float>(expd[i] / total);
  return out;
}

// log_softmax = logits - max - log(sum(exp(logits - max))).
inline std::vector<double> log_softmax(std::span<const float> logits) {
  if (logits.empty()) throw ValueError("log_softmax: empty input");
  require_finite(logits, "log_softmax");
  float max_logit = logits[0];
  for (float x : logits) max_logit = std::max(max_logit, x);
  double total = 0.0;
  for (float x : logits)
    total += std::exp(static_cast<double>(x) - static_cast<double>(max_logit));
  const double log_z = static_cast<double>(max_logit) + std::log(total);
  std::vector<double> out(logits.size());
  for (size_t i = 0; i < logits.size(); ++i)
    out[i] = static_cast<double>(logits[i]) - log_z;
  return out;
}

struct KlResult {
  double value = 0.0;
  bool clamped = false;  // true when some q_i hit the 1e-12 floor with p_i > 0
};

// D_KL(p || q) in nats. Terms with p_i == 0 contribute nothing; q_i == 0
// against p_i > 0 is clamped to 1e-12 and flagged.
inline KlResult kl_divergence(const ProbVector& p, const ProbVector& q) {
  if (p.size() != q.size()) throw ValueError("kl_divergence: length mismatch");
  if (p.empty()) throw ValueError("kl_divergence: empty input");
  KlResult result;
  double acc = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    const double pi = p[i];
    if (pi <= 0.0) continue;
    double qi = q[i];
    if (qi < 1e-12) {
      qi = 1e-12;
      result.clamped = true;
    }
    acc += pi * (std::log(pi) - std::log(qi));
  }
  result.value = acc;
  return result;
}

// Average ranks; ties get the mean of the rank range they occupy.
inline std::vector<double> average_ranks(std::span<const double> values) {
  const size_t n = values.size();
  std::vector<size_t> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    const double shared = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
    for (size_t k = i; k <= j; ++k) ranks[order[k]] = shared;
    i = j + 1;
  }
  return ranks;
}

// Spearman's rank correlation. Zero variance in either argument has no
// defined correlation and yields nullopt instead of NaN.
inline std::optional<double> spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ValueError("spearman: length mismatch");
  if (a.size() < 2) throw ValueError("spearman: need at least 2 observations");
  const std::vector<double> ra = average_ranks(a);
  const std::vector<double> rb = average_ranks(b);
  const size_t n = ra.size();
  double mean_a = 0.0;
  double mean_b = 0.0;
  for (size_t i = 0; i < n; ++i) {
    mean_a += ra[i];
    mean_b += rb[i];
  }
  mean_a /= static_cast<double>(n);
  mean_b /= static_cast<double>(n);
  double cov = 0.0;
  double var_a = 0.0;
  double var_b = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double da = ra[i] - mean_a;
    const double db = rb[i] - mean_b;
    cov += da * db;
    var_a += da * da;
    var_b += db * db;
  }
  if (var_a <= 0.0 || var_b <= 0.0) return std::nullopt;
  double rho = cov / std::sqrt(var_a * var_b);
  return std::clamp(rho, -1.0, 1.0);
}

// Index of the maximum; ties resolve to the lowest index.
inline size_t argmax_top1(std::span<const float> v) {
  if (v.empty()) throw ValueError("argmax_top1: empty input");
  size_t best = 0;
  for (size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

template <typename S>
inline double l2_diff(std::span<const S> a, std::span<const S> b) {
  if (a.size() != b.size()) throw ValueError("l2_diff: length mismatch");
  double acc = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    acc += d * d;
  }
  return std::sqrt(acc);
}

template <typename S>
inline double l2_norm(std::span<const S> a) {
  double acc = 0.0;
  for (const S& x : a) acc += static_cast<double>(x) * static_cast<double>(x);
  return std::sqrt(acc);
}

}  // namespace depthprobe
