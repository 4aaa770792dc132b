#pragma once

#include "radsim/common.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>

namespace radsim::stats {

inline double mean(std::span<const double> v) {
  if (v.empty()) throw Error(ErrorCode::kInvalidArgument, "mean of an empty sample");
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

/// Sample standard deviation (n - 1 denominator).
inline double stddev(std::span<const double> v) {
  if (v.size() < 2) throw Error(ErrorCode::kInvalidArgument, "standard deviation needs two values");
  const double m = mean(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

struct Correlation {
  double r = 0.0;
  double p = 1.0;  // two-sided, t with n - 2 degrees of freedom
};

inline Correlation pearson_r(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw Error(ErrorCode::kDimensionMismatch, "samples differ in length");
  if (x.size() < 3) throw Error(ErrorCode::kInvalidArgument, "correlation needs at least three pairs");
  const double mx = mean(x);
  const double my = mean(y);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw Error(ErrorCode::kZeroVariance, "correlation of a constant sample");
  Correlation c;
  c.r = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
  const double dof = static_cast<double>(x.size() - 2);
  if (std::abs(c.r) >= 1.0) {
    c.p = 0.0;
  } else {
    const double t = c.r * std::sqrt(dof / (1.0 - c.r * c.r));
    const boost::math::students_t dist(dof);
    c.p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
  }
  return c;
}

struct TTest {
  double mean = 0.0;
  double sd = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  double t = 0.0;
  double p = 1.0;
  /// Set when every value is identical; t and p are then 0 and 1 by convention.
  bool zero_variance = false;
};

/// Two-sided one-sample t-test against mu0 with a 95% confidence interval.
inline TTest one_sample_t(std::span<const double> v, double mu0) {
  if (v.size() < 2) throw Error(ErrorCode::kInvalidArgument, "t-test needs at least two values");
  TTest r;
  r.mean = mean(v);
  // A constant sample can leave a rounding-level sd; treat it as exactly zero.
  const bool constant = std::all_of(v.begin(), v.end(), [&](double x) { return x == v.front(); });
  r.sd = constant ? 0.0 : stddev(v);
  const double n = static_cast<double>(v.size());
  const boost::math::students_t dist(n - 1.0);
  const double half = boost::math::quantile(boost::math::complement(dist, 0.025)) * r.sd / std::sqrt(n);
  r.ci_low = r.mean - half;
  r.ci_high = r.mean + half;
  if (constant) {
    r.mean = v.front();
    r.ci_low = r.ci_high = r.mean;
    r.zero_variance = true;
    return r;
  }
  r.t = (r.mean - mu0) / (r.sd / std::sqrt(n));
  r.p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t)));
  return r;
}

inline double rmse(std::span<const double> pred, std::span<const double> truth) {
  if (pred.size() != truth.size()) throw Error(ErrorCode::kDimensionMismatch, "samples differ in length");
  if (pred.empty()) throw Error(ErrorCode::kInvalidArgument, "RMSE of empty samples");
  double ss = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) ss += (pred[i] - truth[i]) * (pred[i] - truth[i]);
  return std::sqrt(ss / static_cast<double>(pred.size()));
}

}  // namespace radsim::stats
