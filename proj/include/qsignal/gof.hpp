#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "qsignal/error.hpp"

namespace qsignal::gof {

struct KsResult {
  std::size_t n = 0;
  double mean = 0.0;
  double statistic = 0.0;
  double critical_5pct = 0.0;  // 1.36 / sqrt(n), asymptotic
  double p_value = 1.0;

  bool passes() const { return statistic < critical_5pct; }
};

// Asymptotic Kolmogorov survival function Q(sqrt(n) * D).
inline double kolmogorov_q(double lambda) {
  if (lambda < 1e-3) return 1.0;
  double sum = 0.0;
  for (int k = 1; k <= 100; ++k) {
    const double term = std::exp(-2.0 * k * k * lambda * lambda);
    sum += (k % 2 == 1 ? 2.0 : -2.0) * term;
    if (term < 1e-16) break;
  }
  return std::clamp(sum, 0.0, 1.0);
}

template <class Cdf>
KsResult ks_one_sample(std::span<const double> samples, Cdf&& cdf) {
  if (samples.empty()) throw NoDataError("ks test: no samples");
  std::vector<double> x(samples.begin(), samples.end());
  std::sort(x.begin(), x.end());
  const double n = static_cast<double>(x.size());
  double d = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double f = cdf(x[i]);
    d = std::max({d, (static_cast<double>(i) + 1.0) / n - f, f - static_cast<double>(i) / n});
  }
  KsResult r;
  r.n = x.size();
  r.mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
  r.statistic = d;
  r.critical_5pct = 1.36 / std::sqrt(n);
  r.p_value = kolmogorov_q(std::sqrt(n) * d);
  return r;
}

/// KS test against the exponential whose mean is the sample mean.
inline KsResult ks_exponential(std::span<const double> samples) {
  if (samples.empty()) throw NoDataError("ks test: no samples");
  const double mean = std::accumulate(samples.begin(), samples.end(), 0.0) / static_cast<double>(samples.size());
  if (!(mean > 0.0)) throw InvalidInput("ks_exponential: sample mean must be > 0");
  return ks_one_sample(samples, [mean](double x) { return x <= 0.0 ? 0.0 : -std::expm1(-x / mean); });
}

}  // namespace qsignal::gof
