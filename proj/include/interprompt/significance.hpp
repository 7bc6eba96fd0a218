#pragma once

// Student's t-tests (pooled, Welch, paired) with two-sided p-values from the
// regularized incomplete beta function.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace interprompt::significance {

/// Convergence tolerance of the continued fraction (relative step size).
inline constexpr double kContinuedFractionTolerance = 1e-12;

namespace detail {

// Modified Lentz evaluation of the continued fraction for I_x(a, b).
inline double beta_continued_fraction(double a, double b, double x) {
  constexpr int kMaxIterations = 10000;
  constexpr double kTiny = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIterations; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < kContinuedFractionTolerance) return h;
  }
  throw std::runtime_error("incomplete beta: continued fraction did not converge");
}

}  // namespace detail

/// Regularized incomplete beta I_x(a, b) for a, b > 0 and x in [0, 1].
inline double regularized_incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0) || !(b > 0.0)) throw std::domain_error("incomplete beta: a and b must be positive");
  if (!(x >= 0.0 && x <= 1.0)) throw std::domain_error("incomplete beta: x outside [0, 1]");
  if (x == 0.0) return 0.0;
  if (x == 1.0) return 1.0;
  const double log_front =
      std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  // The fraction converges fast for x < (a+1)/(a+b+2); use the symmetry otherwise.
  if (x < (a + 1.0) / (a + b + 2.0)) return front * detail::beta_continued_fraction(a, b, x) / a;
  return 1.0 - front * detail::beta_continued_fraction(b, a, 1.0 - x) / b;
}

/// Two-sided tail probability P(|T| >= |t|) for Student's t with `df` degrees of freedom.
inline double two_sided_p(double t, double df) {
  if (!(df > 0.0)) throw std::domain_error("t distribution: df must be positive");
  if (std::isnan(t)) throw std::domain_error("t distribution: t is NaN");
  if (std::isinf(t)) return 0.0;
  const double p = regularized_incomplete_beta(0.5 * df, 0.5, df / (df + t * t));
  return std::clamp(p, 0.0, 1.0);
}

/// CDF of Student's t.
inline double student_t_cdf(double t, double df) {
  const double tail = 0.5 * two_sided_p(t, df);
  return t >= 0.0 ? 1.0 - tail : tail;
}

/// Smallest |t| whose two-sided p-value is <= alpha (bisection on the CDF).
inline double critical_value(double df, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::domain_error("critical_value: alpha outside (0, 1)");
  double lo = 0.0, hi = 1.0;
  while (two_sided_p(hi, df) > alpha) hi *= 2.0;
  for (int i = 0; i < 200 && hi - lo > 1e-13 * hi; ++i) {
    const double mid = 0.5 * (lo + hi);
    (two_sided_p(mid, df) > alpha ? lo : hi) = mid;
  }
  return hi;
}

struct SampleVector {
  std::string label;
  std::vector<double> values;
};

enum class Flavor { two_sample_pooled, welch, paired };

inline std::string_view to_string(Flavor f) {
  switch (f) {
    case Flavor::two_sample_pooled: return "pooled";
    case Flavor::welch: return "welch";
    case Flavor::paired: return "paired";
  }
  return "unknown";
}

inline Flavor flavor_from_string(std::string_view s) {
  if (s == "pooled" || s == "two_sample_pooled" || s == "student") return Flavor::two_sample_pooled;
  if (s == "welch") return Flavor::welch;
  if (s == "paired") return Flavor::paired;
  throw std::invalid_argument("unknown t-test flavor: " + std::string(s));
}

struct TTestResult {
  double t_statistic = 0.0;  // +-infinity when the variance is zero but means differ
  double p_value = 1.0;      // two-sided
  double degrees_of_freedom = 0.0;
  Flavor flavor = Flavor::welch;
};

namespace detail {

inline void check_sample(const SampleVector& s) {
  if (s.values.size() < 2)
    throw std::invalid_argument("t_test: sample '" + s.label + "' needs at least 2 values");
  for (double v : s.values)
    if (!std::isfinite(v)) throw std::invalid_argument("t_test: sample '" + s.label + "' has a non-finite value");
}

inline double mean(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// Unbiased sample variance (two-pass).
inline double variance(const std::vector<double>& v, double m) {
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return ss / static_cast<double>(v.size() - 1);
}

inline TTestResult finish(double diff, double se, double df, Flavor f) {
  TTestResult r;
  r.flavor = f;
  r.degrees_of_freedom = df;
  if (se == 0.0) {
    if (diff == 0.0) {
      r.t_statistic = 0.0;
      r.p_value = 1.0;
    } else {
      r.t_statistic = diff > 0.0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
      r.p_value = 0.0;
    }
    return r;
  }
  r.t_statistic = diff / se;
  r.p_value = two_sided_p(r.t_statistic, df);
  return r;
}

}  // namespace detail

/// Two-sided t-test of mean(a) - mean(b).
inline TTestResult t_test(const SampleVector& a, const SampleVector& b, Flavor flavor = Flavor::welch) {
  detail::check_sample(a);
  detail::check_sample(b);
  const double na = static_cast<double>(a.values.size()), nb = static_cast<double>(b.values.size());
  switch (flavor) {
    case Flavor::paired: {
      if (a.values.size() != b.values.size())
        throw std::invalid_argument("t_test: paired samples must have equal length");
      std::vector<double> d(a.values.size());
      for (std::size_t i = 0; i < d.size(); ++i) d[i] = a.values[i] - b.values[i];
      const double md = detail::mean(d);
      const double se = std::sqrt(detail::variance(d, md) / na);
      return detail::finish(md, se, na - 1.0, flavor);
    }
    case Flavor::two_sample_pooled: {
      const double ma = detail::mean(a.values), mb = detail::mean(b.values);
      const double df = na + nb - 2.0;
      const double pooled =
          ((na - 1.0) * detail::variance(a.values, ma) + (nb - 1.0) * detail::variance(b.values, mb)) / df;
      const double se = std::sqrt(pooled * (1.0 / na + 1.0 / nb));
      return detail::finish(ma - mb, se, df, flavor);
    }
    case Flavor::welch: {
      const double ma = detail::mean(a.values), mb = detail::mean(b.values);
      const double qa = detail::variance(a.values, ma) / na, qb = detail::variance(b.values, mb) / nb;
      const double se = std::sqrt(qa + qb);
      // Welch-Satterthwaite; with both variances zero fall back to the pooled df.
      const double df = qa + qb == 0.0 ? na + nb - 2.0
                                       : (qa + qb) * (qa + qb) / (qa * qa / (na - 1.0) + qb * qb / (nb - 1.0));
      return detail::finish(ma - mb, se, df, flavor);
    }
  }
  throw std::invalid_argument("t_test: unknown flavor");
}

/// Upper triangle of pairwise tests: cell(i, j) for i < j compares vectors i and j.
class PairwiseMatrix {
 public:
  PairwiseMatrix(std::vector<std::string> labels, Flavor flavor)
      : labels_(std::move(labels)), flavor_(flavor), cells_(labels_.size() * labels_.size()) {}

  const std::vector<std::string>& labels() const { return labels_; }
  Flavor flavor() const { return flavor_; }
  std::size_t size() const { return labels_.size(); }
  std::size_t cell_count() const { return size() * (size() - 1) / 2; }

  const TTestResult& at(std::size_t i, std::size_t j) const {
    if (!(i < j && j < size())) throw std::out_of_range("PairwiseMatrix: need i < j < size");
    return cells_[i * size() + j];
  }
  TTestResult& at(std::size_t i, std::size_t j) {
    return const_cast<TTestResult&>(static_cast<const PairwiseMatrix&>(*this).at(i, j));
  }

 private:
  std::vector<std::string> labels_;
  Flavor flavor_;
  std::vector<TTestResult> cells_;
};

inline PairwiseMatrix pairwise_matrix(const std::vector<SampleVector>& vectors, Flavor flavor = Flavor::welch) {
  if (vectors.size() < 2) throw std::invalid_argument("pairwise_matrix: need at least 2 sample vectors");
  std::vector<std::string> labels;
  for (const auto& v : vectors) labels.push_back(v.label);
  PairwiseMatrix m(std::move(labels), flavor);
  for (std::size_t i = 0; i < vectors.size(); ++i)
    for (std::size_t j = i + 1; j < vectors.size(); ++j) m.at(i, j) = t_test(vectors[i], vectors[j], flavor);
  return m;
}

}  // namespace interprompt::significance
