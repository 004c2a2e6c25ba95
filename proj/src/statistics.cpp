#include "sparse_lab/errors.hpp"
#include "sparse_lab/experiments.hpp"

#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <numbers>
#include <thread>

namespace sparse_lab {

double kolmogorov_survival(double lambda) {
  if (!(lambda > 0.0)) return 1.0;
  constexpr int kTerms = 100;
  double q = 0.0;
  if (lambda < 1.18) {
    // Theta-function form of the same distribution; the alternating series
    // does not converge for small lambda.
    const double pi2 = std::numbers::pi * std::numbers::pi;
    double cdf = 0.0;
    for (int k = 1; k <= kTerms; ++k) {
      const double odd = 2.0 * k - 1.0;
      cdf += std::exp(-odd * odd * pi2 / (8.0 * lambda * lambda));
    }
    cdf *= std::sqrt(2.0 * std::numbers::pi) / lambda;
    q = 1.0 - cdf;
  } else {
    for (int k = 1; k <= kTerms; ++k) {
      const double term = std::exp(-2.0 * k * k * lambda * lambda);
      q += (k % 2 == 1 ? 2.0 : -2.0) * term;
    }
  }
  return std::clamp(q, 0.0, 1.0);
}

KsResult ks_test(std::vector<double> samples) {
  if (samples.empty()) throw DomainError("ks_test: empty sample");
  std::sort(samples.begin(), samples.end());
  const boost::math::normal_distribution<double> phi;
  const double n = static_cast<double>(samples.size());
  double d = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double f = boost::math::cdf(phi, std::clamp(samples[i], -40.0, 40.0));
    d = std::max({d, (static_cast<double>(i) + 1.0) / n - f, f - static_cast<double>(i) / n});
  }
  return {d, kolmogorov_survival(std::sqrt(n) * d)};
}

KsResult ks_two_sample(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw DomainError("ks_two_sample: empty sample");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  std::size_t i = 0;
  std::size_t j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] == x) ++i;
    while (j < b.size() && b[j] == x) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  return {d, kolmogorov_survival(std::sqrt(na * nb / (na + nb)) * d)};
}

double mean(const std::vector<double>& x) {
  if (x.empty()) throw DomainError("mean: empty sample");
  double s = 0.0;
  for (double v : x) s += v;
  return s / static_cast<double>(x.size());
}

double variance(const std::vector<double>& x) {
  if (x.size() < 2) throw DomainError("variance: need at least two values");
  const double m = mean(x);
  double s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  return s / static_cast<double>(x.size() - 1);
}

double correlation(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw DomainError("correlation: need two equal-length samples");
  const double mx = mean(x);
  const double my = mean(y);
  double sxx = 0.0;
  double syy = 0.0;
  double sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

Regression linear_regression(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 3) throw DomainError("linear_regression: need three or more pairs");
  const double mx = mean(x);
  const double my = mean(y);
  double sxx = 0.0;
  double sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (sxx == 0.0) throw DegenerateError("linear_regression: constant regressor");
  Regression r;
  r.slope = sxy / sxx;
  r.intercept = my - r.slope * mx;
  double ssr = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double e = y[i] - r.intercept - r.slope * x[i];
    ssr += e * e;
  }
  r.slope_se = std::sqrt(ssr / static_cast<double>(x.size() - 2) / sxx);
  return r;
}

double quantile(std::vector<double> x, double u) {
  if (x.empty()) throw DomainError("quantile: empty sample");
  if (!(u >= 0.0 && u <= 1.0)) throw DomainError("quantile: level outside [0, 1]");
  std::sort(x.begin(), x.end());
  const double h = u * static_cast<double>(x.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, x.size() - 1);
  return x[lo] + (h - static_cast<double>(lo)) * (x[hi] - x[lo]);
}

double variance_ratio(const std::vector<double>& a, const std::vector<double>& b) {
  const double va = variance(a);
  const double vb = variance(b);
  if (va == 0.0 && vb == 0.0) return 1.0;
  if (va == 0.0) return std::numeric_limits<double>::infinity();
  return vb / va;
}

std::vector<std::vector<double>> parallel_map(std::int64_t count, int workers,
                                              const std::function<std::vector<double>(std::int64_t)>& fn) {
  std::vector<std::vector<double>> out(static_cast<std::size_t>(std::max<std::int64_t>(count, 0)));
  const int threads = static_cast<int>(std::clamp<std::int64_t>(workers, 1, std::max<std::int64_t>(count, 1)));
  std::atomic<std::int64_t> next{0};
  std::mutex error_mutex;
  std::int64_t error_index = count;
  std::exception_ptr error;
  auto work = [&] {
    for (;;) {
      const std::int64_t i = next.fetch_add(1);
      if (i >= count) return;
      try {
        out[static_cast<std::size_t>(i)] = fn(i);
      } catch (...) {
        // Report the failure of the lowest index so the outcome does not
        // depend on scheduling.
        std::lock_guard lock(error_mutex);
        if (i < error_index) {
          error_index = i;
          error = std::current_exception();
        }
      }
    }
  };
  if (threads == 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(static_cast<std::size_t>(threads));
    for (int t = 0; t < threads; ++t) pool.emplace_back(work);
  }
  if (error) std::rethrow_exception(error);
  return out;
}

}  // namespace sparse_lab
