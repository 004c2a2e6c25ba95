#include <doctest.h>

#include "sparse_lab/errors.hpp"
#include "sparse_lab/formalcalc.hpp"
#include "sparse_lab/scmeasure.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <nlohmann/json.hpp>

#include <cmath>
#include <numbers>
#include <sstream>

using namespace sparse_lab;

namespace {

const SelfConsistentPolynomial& quadratic() {
  static const auto p = make_polynomial(0.3, 4.0, {1.0});
  return p;
}

cplx m_sc(cplx z) {
  // Root of 1 + z m + m^2 with Im m > 0.
  const cplx d = std::sqrt(z * z - 4.0);
  cplx m = (-z + d) / 2.0;
  if (m.imag() <= 0) m = (-z - d) / 2.0;
  return m;
}

const SelfConsistentPolynomial& er_poly() {
  static const auto p = build_P0(make_er_model(2000, er_p_for_beta(2000, 0.2)));
  return p;
}

const SpectralMeasure& er_measure() {
  static const SpectralMeasure m(er_poly(), 0.0);
  return m;
}

// Pilot-calibrated constants (ER, N = 2000, q = N^0.2 and N = 1500, q = N^0.25:
// observed (L0 - 2) q^2 ~ 0.95 and max |gamma0 - gamma_sc| q^2 ~ 0.90).
constexpr double kEdgeConstant = 2.0;
constexpr double kQuantileConstant = 2.0;
constexpr double kEdgeShiftConstant = 2.0;

}  // namespace

TEST_CASE("quadratic root at z = i") {
  const cplx m = solve_m(quadratic(), 0.0, cplx(0.0, 1.0));
  CHECK(std::abs(m - cplx(0.0, (std::sqrt(5.0) - 1.0) / 2.0)) <= 1e-12);
}

TEST_CASE("large |z| asymptotics") {
  const cplx z(0.0, 1e6);
  CHECK(std::abs(solve_m(quadratic(), 0.0, z) + 1.0 / z) <= 1e-10);
}

TEST_CASE("quadratic roots agree with the closed form and stay in the upper half plane") {
  for (double e = -3.0; e <= 3.0; e += 0.37) {
    for (double eta : {1e-3, 0.05, 0.7, 3.0}) {
      const cplx z(e, eta);
      const cplx m = solve_m(quadratic(), 0.0, z);
      CHECK(m.imag() > 0.0);
      CHECK(std::abs(m - m_sc(z)) <= 1e-10);
      CHECK(std::abs(evaluate_P(quadratic(), 0.0, z, m_sc(z))) <= 1e-12);
    }
  }
  for (double e = -2.5; e <= 2.5; e += 0.5) CHECK(solve_m(er_poly(), 0.0, cplx(e, 0.01)).imag() > 0.0);
  CHECK_THROWS_AS(solve_m(quadratic(), 0.0, cplx(1.0, 0.0)), DomainError);
}

TEST_CASE("evaluate_P constant term and shift") {
  CHECK(evaluate_P(er_poly(), 0.0, cplx(0.3, 0.2), 0.0) == cplx(1.0, 0.0));
  const cplx z(0.1, 0.9), x(0.2, 0.3);
  CHECK(std::abs(evaluate_P(er_poly(), 0.02, z, x) - er_poly().evaluate(z, x) - 0.02 * x * x) < 1e-15);
}

TEST_CASE("rescaling identity for the shifted semicircle") {
  for (double delta : {-0.1, -0.03, 0.04, 0.1}) {
    for (const cplx z : {cplx(0.0, 1.0), cplx(1.2, 0.3), cplx(-1.9, 0.05), cplx(2.5, 0.01)}) {
      const double s = std::sqrt(1.0 + delta);
      const cplx lhs = solve_m(quadratic(), delta, s * z) * s;
      CHECK(std::abs(lhs - solve_m(quadratic(), 0.0, z)) <= 1e-9);
    }
  }
}

TEST_CASE("semicircle edge, density and CDF") {
  CHECK(std::abs(find_edge(quadratic(), 0.0) - 2.0) <= 1e-11);
  CHECK(density(quadratic(), 0.0, 0.0) == doctest::Approx(1.0 / std::numbers::pi).epsilon(1e-9));
  CHECK(density(quadratic(), 0.0, 2.0) <= 1e-4);
  CHECK(density(quadratic(), 0.0, -2.0) <= 1e-4);
  CHECK(semicircle_cdf(0.0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(semicircle_cdf(2.0) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(semicircle_cdf(-2.0) == doctest::Approx(0.0));
  CHECK_THROWS_AS(semicircle_cdf(2.1), DomainError);
  CHECK_THROWS_AS(semicircle_quantile(-0.1), DomainError);

  // Quantile 1/4 against adaptive quadrature of the density.
  auto mass_to = [](double x) {
    return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(semicircle_density, -2.0, x, 15, 1e-14);
  };
  double lo = -2.0, hi = 0.0;
  for (int it = 0; it < 80; ++it) {
    const double mid = 0.5 * (lo + hi);
    (mass_to(mid) < 0.25 ? lo : hi) = mid;
  }
  CHECK(std::abs(semicircle_quantile(0.25) - 0.5 * (lo + hi)) <= 1e-9);
}

TEST_CASE("edge against a grid scan of the density") {
  const auto p = make_polynomial(0.3, 2.0, {1.0, 1.0});
  const double edge = find_edge(p, 0.0);
  // Inside the support (Im m)^2 is linear in L - E to leading order; fit a
  // line on a window below the edge at eta = 1e-7 and take its root.
  const double guess = edge;
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  int n = 0;
  for (double t = 2e-5; t <= 2e-4; t += 2e-6) {
    const double e = guess - t;
    const double im = solve_m(p, 0.0, cplx(e, 1e-7)).imag();
    const double y = im * im;
    sx += e;
    sy += y;
    sxx += e * e;
    sxy += e * y;
    ++n;
  }
  const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  const double icept = (sy - slope * sx) / n;
  const double scan_edge = -icept / slope;
  MESSAGE("bisection " << edge << " scan " << scan_edge);
  CHECK(std::abs(edge - scan_edge) <= 1e-6);
  // The density vanishes beyond the edge.
  CHECK(solve_m(p, 0.0, cplx(edge + 1e-3, 1e-9)).imag() < 1e-6);
  CHECK(solve_m(p, 0.0, cplx(edge - 1e-3, 1e-9)).imag() > 1e-3);
}

TEST_CASE("no edge in range is a shape error") {
  CHECK_THROWS_AS(find_edge(quadratic(), 10.0), ShapeError);
}

TEST_CASE("semicircle measure: normalization, symmetry, quantiles") {
  const SpectralMeasure m(quadratic(), 0.0);
  CHECK(std::abs(m.mass() - 1.0) <= 1e-6);
  CHECK(std::abs(m.edge_L() - 2.0) <= 1e-11);
  const auto& g = m.grid();
  const auto& d = m.density_grid();
  for (std::size_t k = 0; k < g.size(); ++k) {
    CHECK(d[k] >= 0.0);
    CHECK(std::abs(d[k] - d[g.size() - 1 - k]) <= 1e-8);
  }
  const std::int64_t N = 1000;
  const QuantileTable t = quantiles(m, N);
  CHECK(t.gamma[N / 2 - 1] == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(std::abs(t.gamma[N / 2 - 1]) <= 1e-9);
  CHECK(t.gamma.back() == doctest::Approx(2.0).epsilon(1e-11));
  CHECK(t.gamma_sc.back() == 2.0);
  for (std::int64_t i = 1; i < N; ++i) {
    const auto k = static_cast<std::size_t>(i - 1);
    CHECK(std::abs(m.cdf(t.gamma[k]) - static_cast<double>(i) / N) <= 1e-8);
    CHECK(std::abs(t.gamma[k] - t.gamma_sc[k]) <= 1e-6);
    CHECK(std::abs(t.gamma_sc[k] + t.gamma_sc[N - 2 - k]) <= 1e-10);
    if (k > 0) {
      CHECK(t.gamma[k] >= t.gamma[k - 1]);
      CHECK(t.gamma_sc[k] >= t.gamma_sc[k - 1]);
    }
  }
}

TEST_CASE("ER polynomial: edge and quantile shifts of order 1/q^2") {
  const auto& m = er_measure();
  const double q = er_poly().q;
  CHECK(std::abs(m.mass() - 1.0) <= 1e-6);
  CHECK(std::abs(m.edge_L() - 2.0) <= kEdgeConstant / (q * q));
  const QuantileTable t = quantiles(m, 2000);
  double worst = 0.0;
  for (std::size_t k = 0; k < t.gamma.size(); ++k) worst = std::max(worst, std::abs(t.gamma0[k] - t.gamma_sc[k]));
  CHECK(worst <= kQuantileConstant / (q * q));
  for (std::size_t k = 0; k < m.grid().size(); ++k)
    CHECK(std::abs(m.density_grid()[k] - m.density_grid()[m.grid().size() - 1 - k]) <= 1e-8);
}

TEST_CASE("square-root behaviour at the edge") {
  const auto& m = er_measure();
  double lo = 1e300, hi = 0.0;
  for (double t : {1e-4, 3e-4, 1e-3, 3e-3, 1e-2}) {
    const double r = density(m, m.edge_L() - t) / std::sqrt(t);
    lo = std::min(lo, r);
    hi = std::max(hi, r);
  }
  MESSAGE("rho(L - t)/sqrt(t) in [" << lo << ", " << hi << "]");
  CHECK(lo > 0.1);
  CHECK(hi < 1.0);
  CHECK_THROWS_AS(density(m, m.edge_L() + 0.2), DomainError);
}

TEST_CASE("edge moves with the shift") {
  const double q = er_poly().q;
  const double l0 = er_measure().edge_L();
  for (double z : {-0.05, -0.02, 0.01, 0.05}) {
    const double shift = find_edge(er_poly(), z) - l0;
    CHECK(std::abs(shift - z) <= kEdgeShiftConstant * (z * z + std::abs(z) / (q * q)));
  }
}

TEST_CASE("quantile relation under a shift") {
  const SpectralMeasure quad(quadratic(), 0.0);
  CHECK(gamma_relation_check(quad, 0.0, 500) <= 1e-8);
  CHECK(gamma_relation_check(quad, 0.01, 500) <= 10 * 0.01 * 0.01);
  const double q = er_poly().q;
  CHECK(gamma_relation_check(er_measure(), 0.005, 2000) <= 10.0 / (std::sqrt(2000.0) * q * q * q));
  CHECK_THROWS_AS(gamma_relation_check(quad, 0.6, 100), DomainError);
}

TEST_CASE("lost branch is reported") {
  // At q = N^0.1 with N = 16384 the truncated polynomial has a branch point
  // in the upper half plane near E = 0.
  const auto p = build_P0(make_er_model(16384, er_p_for_beta(16384, 0.1)));
  CHECK_THROWS_AS(solve_m(p, 0.0, cplx(0.0, 0.1)), ContinuationError);
  CHECK(find_edge(p, 0.0) == doctest::Approx(2.156).epsilon(1e-3));
}

TEST_CASE("measure export") {
  const SpectralMeasure m(quadratic(), 0.0, {101});
  std::ostringstream csv;
  write_measure_csv(m, csv);
  const std::string s = csv.str();
  CHECK(s.rfind("E,density\n", 0) == 0);
  CHECK(std::count(s.begin(), s.end(), '\n') == 102);
  const QuantileTable t = quantiles(m, 4);
  std::ostringstream qcsv;
  write_quantiles_csv(t, qcsv);
  CHECK(qcsv.str().rfind("i,gamma,gamma0,gamma_sc\n1,", 0) == 0);
  const auto j = to_json(m, &t);
  CHECK(j.at("L").get<double>() == doctest::Approx(2.0));
  CHECK(j.at("quantiles").at("gamma").size() == 4);
}
