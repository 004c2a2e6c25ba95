#include "sparse_lab/scmeasure.hpp"

#include "sparse_lab/errors.hpp"

#include <boost/math/interpolators/pchip.hpp>
#include <nlohmann/json.hpp>
#include <unsupported/Eigen/Polynomials>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <ostream>

namespace sparse_lab {

namespace {

using Pchip = boost::math::interpolators::pchip<std::vector<double>>;

constexpr double kMassTolerance = 1e-5;

Eigen::VectorXcd coefficients(const SelfConsistentPolynomial& poly, double z_shift, cplx z) {
  const int top = 2 * static_cast<int>(poly.a.size());
  Eigen::VectorXcd c = Eigen::VectorXcd::Zero(top + 1);
  c(0) = 1.0;
  c(1) = z;
  for (int l = 1; l <= static_cast<int>(poly.a.size()); ++l) c(2 * l) = poly.x_coefficient(2 * l);
  c(2) += z_shift;
  int deg = top;
  while (deg > 1 && c(deg) == 0.0) --deg;
  return c.head(deg + 1);
}

std::vector<cplx> roots_at(const SelfConsistentPolynomial& poly, double z_shift, cplx z) {
  const Eigen::VectorXcd c = coefficients(poly, z_shift, z);
  if (c.size() == 2) return {-c(0) / c(1)};
  Eigen::PolynomialSolver<cplx, Eigen::Dynamic> solver(c);
  const auto& r = solver.roots();
  return {r.data(), r.data() + r.size()};
}

cplx polish(const SelfConsistentPolynomial& poly, double z_shift, cplx z, cplx m) {
  const Eigen::VectorXcd c = coefficients(poly, z_shift, z);
  for (int it = 0; it < 3; ++it) {
    cplx p = 0.0, dp = 0.0;
    for (Eigen::Index k = c.size() - 1; k >= 0; --k) {
      dp = dp * m + p;
      p = p * m + c(k);
    }
    if (dp == 0.0) break;
    const cplx step = p / dp;
    if (!std::isfinite(step.real()) || !std::isfinite(step.imag()) || std::abs(step) > 1e-6) break;
    m -= step;
  }
  return m;
}

/// Follows the root starting at m along z(t), t in [0, 1].
cplx track(const SelfConsistentPolynomial& poly, double z_shift, const std::function<cplx(double)>& path, cplx m,
           const ContinuationOptions& opt) {
  double t = 0.0;
  double h = 1.0;
  int steps = 0;
  while (t < 1.0) {
    if (++steps > opt.max_steps) throw ContinuationError("solve_m: step limit reached", m.real(), m.imag());
    h = std::min(h, 1.0 - t);
    const double tn = (1.0 - t - h < 1e-15) ? 1.0 : t + h;
    const auto roots = roots_at(poly, z_shift, path(tn));
    double best = std::numeric_limits<double>::infinity();
    double second = best;
    cplx pick = m;
    for (const cplx& r : roots) {
      const double d = std::abs(r - m);
      if (d < best) {
        second = best;
        best = d;
        pick = r;
      } else if (d < second) {
        second = d;
      }
    }
    if (best <= opt.max_jump && best < 0.5 * second) {
      m = pick;
      t = tn;
      h *= 2.0;
    } else {
      h *= 0.5;
      if (h < 1e-14) throw ContinuationError("solve_m: roots collide along the path", m.real(), m.imag());
    }
  }
  return m;
}

cplx solve_from_top(const SelfConsistentPolynomial& poly, double z_shift, cplx z, const ContinuationOptions& opt) {
  const double top = std::max(opt.start_height, 2.0 * z.imag());
  const cplx z0(0.0, top);
  cplx m = -1.0 / z0;
  {
    const auto roots = roots_at(poly, z_shift, z0);
    m = *std::min_element(roots.begin(), roots.end(),
                          [&](cplx a, cplx b) { return std::abs(a + 1.0 / z0) < std::abs(b + 1.0 / z0); });
  }
  const double re = z.real();
  m = track(poly, z_shift, [&](double t) { return cplx(t * re, top); }, m, opt);
  const double la = std::log(top);
  const double lb = std::log(z.imag());
  m = track(poly, z_shift, [&](double t) { return cplx(re, std::exp(la + t * (lb - la))); }, m, opt);
  return polish(poly, z_shift, z, m);
}

double neville_at_zero(const std::vector<double>& x, std::vector<double> y) {
  const auto n = x.size();
  for (std::size_t level = 1; level < n; ++level)
    for (std::size_t i = 0; i + level < n; ++i)
      y[i] = (x[i + level] * y[i] - x[i] * y[i + 1]) / (x[i + level] - x[i]);
  return y[0];
}

}  // namespace

cplx evaluate_P(const SelfConsistentPolynomial& poly, double Z_shift, cplx z, cplx x) {
  return poly.evaluate(z, x) + Z_shift * x * x;
}

cplx solve_m(const SelfConsistentPolynomial& poly, double Z_shift, cplx z, const ContinuationOptions& options) {
  if (!(z.imag() > 0.0)) throw DomainError("solve_m: Im z must be positive");
  const cplx m = solve_from_top(poly, Z_shift, z, options);
  if (!(m.imag() > 0.0)) throw ContinuationError("solve_m: tracked root left the upper half plane", m.real(), m.imag());
  return m;
}

std::vector<cplx> solve_m_path(const SelfConsistentPolynomial& poly, double Z_shift, const std::vector<cplx>& zs,
                               const ContinuationOptions& options) {
  std::vector<cplx> out;
  out.reserve(zs.size());
  for (std::size_t k = 0; k < zs.size(); ++k) {
    if (!(zs[k].imag() > 0.0)) throw DomainError("solve_m_path: Im z must be positive");
    if (k > 0) {
      try {
        const cplx a = zs[k - 1];
        const cplx b = zs[k];
        cplx m = track(poly, Z_shift, [&](double t) { return a + t * (b - a); }, out.back(), options);
        m = polish(poly, Z_shift, b, m);
        if (m.imag() > 0.0) {
          out.push_back(m);
          continue;
        }
      } catch (const ContinuationError&) {
      }
    }
    out.push_back(solve_m(poly, Z_shift, zs[k], options));
  }
  return out;
}

double find_edge(const SelfConsistentPolynomial& poly, double Z_shift) {
  auto inside = [&](double e) {
    const cplx m = solve_m(poly, Z_shift, cplx(e, 1e-9));
    const Eigen::VectorXcd c = coefficients(poly, Z_shift, cplx(e, 0.0));
    std::vector<cplx> roots;
    if (c.size() == 2) {
      roots = {-c(0) / c(1)};
    } else {
      Eigen::PolynomialSolver<double, Eigen::Dynamic> solver(c.real());
      roots.assign(solver.roots().data(), solver.roots().data() + solver.roots().size());
    }
    const cplx r = *std::min_element(roots.begin(), roots.end(),
                                     [&](cplx a, cplx b) { return std::abs(a - m) < std::abs(b - m); });
    return std::abs(r.imag()) > 1e-7 * std::max(1.0, std::abs(r));
  };
  double lo = 1.0, hi = 4.0;
  if (!inside(lo) || inside(hi))
    throw ShapeError("find_edge: no support edge in [1, 4]; polynomial outside the perturbative regime");
  while (hi - lo > 1e-12) {
    const double mid = 0.5 * (lo + hi);
    (inside(mid) ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

double density(const SelfConsistentPolynomial& poly, double Z_shift, double E, const MeasureOptions& options) {
  std::vector<double> vals;
  for (double eta : options.eta_ladder) vals.push_back(solve_m(poly, Z_shift, cplx(E, eta)).imag() / std::numbers::pi);
  return std::max(0.0, neville_at_zero(options.eta_ladder, std::move(vals)));
}

double density(const SpectralMeasure& measure, double E, const MeasureOptions& options) {
  if (std::abs(E) > measure.edge_L() + 0.1) throw DomainError("density: |E| beyond L + 0.1");
  return density(measure.poly(), measure.Z_shift(), E, options);
}

SpectralMeasure::SpectralMeasure(SelfConsistentPolynomial poly, double Z_shift, const MeasureOptions& options)
    : poly_(std::move(poly)), z_shift_(Z_shift) {
  if (options.grid_points < 5 || options.grid_points % 2 == 0)
    throw DomainError("SpectralMeasure: grid_points must be odd and >= 5");
  edge_ = find_edge(poly_, z_shift_);
  const int n = options.grid_points;
  const double dtheta = std::numbers::pi / (n - 1);
  grid_.resize(n);
  for (int k = 0; k < n; ++k) grid_[k] = -edge_ * std::cos(k * dtheta);
  grid_.front() = -edge_;
  grid_.back() = edge_;
  grid_[(n - 1) / 2] = 0.0;

  std::vector<std::vector<double>> ladder;
  for (double eta : options.eta_ladder) {
    std::vector<cplx> zs(n);
    for (int k = 0; k < n; ++k) zs[k] = cplx(grid_[k], eta);
    const auto ms = solve_m_path(poly_, z_shift_, zs);
    std::vector<double> im(n);
    for (int k = 0; k < n; ++k) im[k] = ms[k].imag() / std::numbers::pi;
    ladder.push_back(std::move(im));
  }
  density_.resize(n);
  std::vector<double> vals(options.eta_ladder.size());
  for (int k = 0; k < n; ++k) {
    for (std::size_t e = 0; e < vals.size(); ++e) vals[e] = ladder[e][k];
    density_[k] = std::max(0.0, neville_at_zero(options.eta_ladder, vals));
  }

  // Integrate in theta (E = -L cos theta), where the integrand is smooth.
  std::vector<double> g(n);
  for (int k = 0; k < n; ++k) g[k] = density_[k] * edge_ * std::sin(k * dtheta);
  cdf_values_.assign(n, 0.0);
  for (int k = 0; k + 1 < n; ++k) {
    double piece;
    if (k + 2 < n)
      piece = dtheta / 12.0 * (5.0 * g[k] + 8.0 * g[k + 1] - g[k + 2]);
    else
      piece = dtheta / 12.0 * (-g[k - 1] + 8.0 * g[k] + 5.0 * g[k + 1]);
    cdf_values_[k + 1] = cdf_values_[k] + piece;
  }
  mass_ = cdf_values_.back();
  if (!(std::abs(mass_ - 1.0) <= kMassTolerance))
    throw ContinuationError("SpectralMeasure: density integrates to " + std::to_string(mass_) +
                                ", the Stieltjes branch was lost",
                            mass_, 0.0);
  for (int k = 0; k < n; ++k) {
    cdf_values_[k] = std::clamp(cdf_values_[k] / mass_, 0.0, 1.0);
    if (k > 0) cdf_values_[k] = std::max(cdf_values_[k], cdf_values_[k - 1]);
  }
  cdf_values_.back() = 1.0;
  interpolant_ = std::make_shared<const Pchip>(std::vector<double>(grid_), std::vector<double>(cdf_values_));
}

double SpectralMeasure::cdf(double x) const {
  if (x <= -edge_) return 0.0;
  if (x >= edge_) return 1.0;
  const auto& p = *static_cast<const Pchip*>(interpolant_.get());
  return std::clamp(p(x), 0.0, 1.0);
}

double SpectralMeasure::quantile(double u) const {
  if (!(u >= 0.0 && u <= 1.0)) throw DomainError("quantile: u outside [0, 1]");
  if (u == 1.0) return edge_;
  double lo = -edge_, hi = edge_;
  while (hi - lo > 1e-13) {
    const double mid = 0.5 * (lo + hi);
    (cdf(mid) < u ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

double semicircle_density(double x) {
  return std::abs(x) >= 2.0 ? 0.0 : std::sqrt(4.0 - x * x) / (2.0 * std::numbers::pi);
}

double semicircle_cdf(double x) {
  if (!(x >= -2.0 && x <= 2.0)) throw DomainError("semicircle_cdf: x outside [-2, 2]");
  return 0.5 + x * std::sqrt(4.0 - x * x) / (4.0 * std::numbers::pi) + std::asin(x / 2.0) / std::numbers::pi;
}

double semicircle_quantile(double u) {
  if (!(u >= 0.0 && u <= 1.0)) throw DomainError("semicircle_quantile: u outside [0, 1]");
  if (u == 0.0) return -2.0;
  if (u == 1.0) return 2.0;
  double lo = -2.0, hi = 2.0;
  while (hi - lo > 1e-12) {
    const double mid = 0.5 * (lo + hi);
    (semicircle_cdf(mid) < u ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

std::vector<double> semicircle_quantiles(std::int64_t N) {
  if (N < 1) throw DomainError("semicircle_quantiles: N must be positive");
  std::vector<double> out(static_cast<std::size_t>(N));
  for (std::int64_t i = 1; i <= N; ++i)
    out[static_cast<std::size_t>(i - 1)] = semicircle_quantile(static_cast<double>(i) / static_cast<double>(N));
  return out;
}

QuantileTable quantiles(const SpectralMeasure& measure, std::int64_t N) {
  if (N < 1) throw DomainError("quantiles: N must be positive");
  QuantileTable t;
  t.N = N;
  auto fill = [N](const SpectralMeasure& m) {
    std::vector<double> g(static_cast<std::size_t>(N));
    for (std::int64_t i = 1; i <= N; ++i)
      g[static_cast<std::size_t>(i - 1)] = i == N ? m.edge_L() : m.quantile(static_cast<double>(i) / N);
    return g;
  };
  t.gamma = fill(measure);
  if (measure.Z_shift() == 0.0)
    t.gamma0 = t.gamma;
  else
    t.gamma0 = fill(SpectralMeasure(measure.poly(), 0.0, {static_cast<int>(measure.grid().size())}));
  t.gamma_sc = semicircle_quantiles(N);
  return t;
}

double gamma_relation_check(const SpectralMeasure& measure0, double Z, std::int64_t N, const MeasureOptions& options) {
  if (std::abs(Z) > 0.5) throw DomainError("gamma_relation_check: |Z| must not exceed 0.5");
  const SpectralMeasure shifted(measure0.poly(), measure0.Z_shift() + Z, options);
  double worst = 0.0;
  for (std::int64_t i = 1; i <= N; ++i) {
    const double u = static_cast<double>(i) / static_cast<double>(N);
    if (std::abs(u - 0.5) < 0.05) continue;
    const double g = i == N ? shifted.edge_L() : shifted.quantile(u);
    const double g0 = i == N ? measure0.edge_L() : measure0.quantile(u);
    const double gsc = semicircle_quantile(u);
    worst = std::max(worst, std::abs(g - g0 - 0.5 * gsc * Z));
  }
  return worst;
}

void write_measure_csv(const SpectralMeasure& measure, std::ostream& out) {
  char buf[96];
  out << "E,density\n";
  for (std::size_t k = 0; k < measure.grid().size(); ++k) {
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g\n", measure.grid()[k], measure.density_grid()[k]);
    out << buf;
  }
}

void write_quantiles_csv(const QuantileTable& table, std::ostream& out) {
  char buf[128];
  out << "i,gamma,gamma0,gamma_sc\n";
  for (std::size_t k = 0; k < table.gamma.size(); ++k) {
    std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g\n", k + 1, table.gamma[k], table.gamma0[k],
                  table.gamma_sc[k]);
    out << buf;
  }
}

nlohmann::json to_json(const SpectralMeasure& measure, const QuantileTable* table) {
  nlohmann::json j;
  j["L"] = measure.edge_L();
  j["L0"] = measure.Z_shift() == 0.0 ? measure.edge_L() : find_edge(measure.poly(), 0.0);
  j["Z_shift"] = measure.Z_shift();
  j["mass"] = measure.mass();
  if (table) {
    j["quantiles"] = {{"N", table->N}, {"gamma", table->gamma}, {"gamma0", table->gamma0},
                      {"gamma_sc", table->gamma_sc}};
  }
  return j;
}

}  // namespace sparse_lab
