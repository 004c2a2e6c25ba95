#include "sparse_lab/rational.hpp"

#include "sparse_lab/errors.hpp"

#include <cmath>

namespace sparse_lab {

Rational rational_from_double(double x) {
  if (!std::isfinite(x)) throw DomainError("rational_from_double: non-finite value");
  if (x == 0.0) return Rational(0);
  int exp = 0;
  const double mant = std::frexp(x, &exp);  // x = mant * 2^exp, |mant| in [0.5, 1)
  const auto scaled = static_cast<long long>(std::ldexp(mant, 53));
  exp -= 53;
  Rational r(scaled);
  if (exp > 0) {
    r *= Rational(BigInt(1) << exp);
  } else if (exp < 0) {
    r /= Rational(BigInt(1) << -exp);
  }
  return r;
}

double to_double(const Rational& r) { return r.convert_to<double>(); }

std::string to_string(const Rational& r) { return r.str(); }

std::vector<Rational> cumulants_from_moments(const std::vector<Rational>& moments) {
  const std::size_t kmax = moments.empty() ? 0 : moments.size() - 1;
  std::vector<Rational> kappa(kmax + 1, Rational(0));
  // binomial row C(n-1, .) updated in place
  std::vector<BigInt> binom{1};
  for (std::size_t n = 1; n <= kmax; ++n) {
    Rational acc = moments[n];
    for (std::size_t k = 1; k < n; ++k) {
      acc -= Rational(binom[k - 1]) * kappa[k] * moments[n - k];
    }
    kappa[n] = acc;
    std::vector<BigInt> next(binom.size() + 1);
    next.front() = 1;
    next.back() = 1;
    for (std::size_t k = 1; k < binom.size(); ++k) next[k] = binom[k - 1] + binom[k];
    binom = std::move(next);
  }
  return kappa;
}

}  // namespace sparse_lab
