#pragma once

#include "sparse_lab/formalcalc.hpp"

#include <nlohmann/json_fwd.hpp>

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <vector>

namespace sparse_lab {

/// P(z, x) = P0(z, x) + Z x^2.
cplx evaluate_P(const SelfConsistentPolynomial& poly, double Z_shift, cplx z, cplx x);

struct ContinuationOptions {
  /// Start height of the homotopy path.
  double start_height = 100.0;
  /// Largest accepted jump of the tracked root between two path points.
  double max_jump = 0.1;
  int max_steps = 200000;
};

/// Root of P(z, .) on the Stieltjes branch, tracked from i T (where
/// m ~ -1/z) to z. Throws DomainError for Im z <= 0, ContinuationError when
/// the branch cannot be followed.
cplx solve_m(const SelfConsistentPolynomial& poly, double Z_shift, cplx z, const ContinuationOptions& options = {});

/// solve_m along a path of points, each tracked from its predecessor and
/// restarted from i T when the nearest root jumps.
std::vector<cplx> solve_m_path(const SelfConsistentPolynomial& poly, double Z_shift, const std::vector<cplx>& zs,
                               const ContinuationOptions& options = {});

/// Right edge of the support: the smallest E >= 1 where the Stieltjes root of
/// P(E, .) becomes real, by bisection to 1e-12. Throws ShapeError when there
/// is no such E in [1, 4].
double find_edge(const SelfConsistentPolynomial& poly, double Z_shift);

struct MeasureOptions {
  int grid_points = 4001;
  std::vector<double> eta_ladder = {1e-5, 1e-6, 1e-7};
};

/// Density grid, edge and cumulative distribution of the measure with
/// Stieltjes transform m solving P(z, m) = 0. Immutable once built.
class SpectralMeasure {
 public:
  SpectralMeasure(SelfConsistentPolynomial poly, double Z_shift, const MeasureOptions& options = {});

  const SelfConsistentPolynomial& poly() const noexcept { return poly_; }
  double Z_shift() const noexcept { return z_shift_; }
  double edge_L() const noexcept { return edge_; }
  /// Chebyshev points on [-L, L], ascending.
  const std::vector<double>& grid() const noexcept { return grid_; }
  const std::vector<double>& density_grid() const noexcept { return density_; }
  /// Integral of the density over [-L, L] before normalization.
  double mass() const noexcept { return mass_; }

  /// Normalized distribution function; 0 below -L, 1 above L.
  double cdf(double x) const;
  /// Smallest x with cdf(x) = u, by bisection to 1e-13.
  double quantile(double u) const;

 private:
  SelfConsistentPolynomial poly_;
  double z_shift_ = 0.0;
  double edge_ = 2.0;
  double mass_ = 1.0;
  std::vector<double> grid_;
  std::vector<double> density_;
  std::vector<double> cdf_values_;
  std::shared_ptr<const void> interpolant_;
};

/// (1/pi) Im m(E + i eta) extrapolated to eta = 0 over the ladder, clipped at
/// 0. Throws DomainError for |E| > L + 0.1.
double density(const SpectralMeasure& measure, double E, const MeasureOptions& options = {});
double density(const SelfConsistentPolynomial& poly, double Z_shift, double E, const MeasureOptions& options = {});

double semicircle_density(double x);
/// 1/2 + x sqrt(4 - x^2) / (4 pi) + asin(x / 2) / pi on [-2, 2].
double semicircle_cdf(double x);
double semicircle_quantile(double u);

struct QuantileTable {
  std::int64_t N = 0;
  /// Entry i-1 holds the i-th quantile, i = 1..N.
  std::vector<double> gamma;
  std::vector<double> gamma0;
  std::vector<double> gamma_sc;
};

/// gamma from the measure, gamma0 from its unshifted polynomial, gamma_sc from
/// the semicircle. The N-th quantile is the edge.
QuantileTable quantiles(const SpectralMeasure& measure, std::int64_t N);
/// Semicircle quantiles only.
std::vector<double> semicircle_quantiles(std::int64_t N);

/// max |gamma_i - gamma0_i - gamma_sc_i Z / 2| over i with |i/N - 1/2| >= 0.05,
/// gamma from the Z-shifted measure. Throws DomainError for |Z| > 0.5.
double gamma_relation_check(const SpectralMeasure& measure0, double Z, std::int64_t N,
                            const MeasureOptions& options = {});

/// CSV "E,density".
void write_measure_csv(const SpectralMeasure& measure, std::ostream& out);
/// CSV "i,gamma,gamma0,gamma_sc".
void write_quantiles_csv(const QuantileTable& table, std::ostream& out);
nlohmann::json to_json(const SpectralMeasure& measure, const QuantileTable* table = nullptr);

}  // namespace sparse_lab
