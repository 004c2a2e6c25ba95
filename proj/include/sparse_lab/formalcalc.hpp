#pragma once

#include "sparse_lab/ensemble.hpp"
#include "sparse_lab/rational.hpp"
#include "sparse_lab/spectra.hpp"

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

#include <compare>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <string>
#include <vector>

namespace sparse_lab {

/// Formal resolvent entry G_xy; stored with x <= y.
struct FormalFactor {
  int x = 0;
  int y = 0;

  FormalFactor() = default;
  FormalFactor(int a, int b) : x(a < b ? a : b), y(a < b ? b : a) {}
  bool diagonal() const noexcept { return x == y; }
  auto operator<=>(const FormalFactor&) const = default;
};

/// Term  coeff * prod_k kappa_k * N^(-n_power) q^(-q_power) * prod G_xy,
/// summed over the nu1 formal indices 0..nu1-1.
struct FormalMonomial {
  Rational coeff{1};
  /// Cumulant orders of the symbolic weights, sorted (repeats allowed).
  std::vector<int> kappas;
  int nu1 = 0;
  int n_power = 0;
  int q_power = 0;
  /// Sorted.
  std::vector<FormalFactor> factors;

  int sigma() const noexcept { return static_cast<int>(factors.size()); }
  int nu2() const noexcept;
  /// theta with N^(-theta) = N^(-n_power) q^(-q_power) at q = N^beta.
  double theta(double beta) const noexcept { return n_power + beta * q_power; }

  /// Product; index labels of `other` are shifted past ours.
  FormalMonomial operator*(const FormalMonomial& other) const;

  /// Everything except the coefficient.
  bool same_shape(const FormalMonomial& other) const noexcept;
  std::string to_string() const;
};

/// Monomial with the given factors; nu1 is one past the largest label.
FormalMonomial make_monomial(std::vector<FormalFactor> factors, Rational coeff = Rational(1));

/// Relabels indices to the lexicographically least factor list. Only valid
/// for summed monomials whose coefficient does not depend on the labels.
FormalMonomial canonicalize(const FormalMonomial& m);

struct TermSum {
  /// Sorted by (sigma, n_power, q_power, factors, kappas, nu1); like terms
  /// merged, zero terms removed.
  std::vector<FormalMonomial> terms;
  /// max (nu1 - theta) over dropped terms; -inf when nothing was dropped.
  double discarded_bound = -std::numeric_limits<double>::infinity();
  /// Number of terms generated before merging.
  std::uint64_t raw_term_count = 0;

  void add(FormalMonomial m);
  std::size_t size() const noexcept { return terms.size(); }
  bool empty() const noexcept { return terms.empty(); }
  std::string to_string() const;
};

TermSum make_sum(std::vector<FormalMonomial> terms);

constexpr int kMaxFullDerivativeOrder = 12;

/// k-fold derivative in H_ij by the two-term rule
///   dG_xy/dH_ij = -(G_xi G_jy + G_xj G_iy) / (1 + delta_ij).
/// Throws SizeError for k > 12.
TermSum differentiate(const FormalMonomial& term, int i, int j, int k);

struct DiagonalSplit {
  TermSum diagonal;
  TermSum dropped;
};

/// Splits into nu2 = 0 terms and the rest. With finite beta the dropped
/// sum records max (nu1 - theta) as its discarded_bound.
DiagonalSplit diagonal_projection(const TermSum& sum,
                                  double beta = std::numeric_limits<double>::quiet_NaN());

/// Diagonal part of d^k/dH_ij^k (G_ii^a G_jj^b G_ij^c), i != j, as a map
/// (exponent of G_ii, exponent of G_jj) -> coefficient. Off-diagonal factors
/// that cannot be removed in the remaining steps are pruned.
std::map<std::pair<int, int>, Rational> pair_diagonal_derivative(int a, int b, int c, int k);

constexpr int kMaxPairDerivativeOrder = 63;

/// One term of an averaged expansion:
///   coeff * prod kappa * q^(-q_power) * ulG^ulG_power.
struct ReducedTerm {
  int ulG_power = 0;
  int q_power = 0;
  std::vector<int> kappas;
  Rational coeff{0};
};

/// M(r, T) = N^n_exponent * sum terms.
struct ReducedExpansion {
  int n_exponent = 0;
  /// Sorted by (ulG_power, q_power, kappas).
  std::vector<ReducedTerm> terms;
};

enum class AveragingTarget { largest_exponent, smallest_exponent };

/// Expands the expectation of a diagonal monomial as a polynomial in ulG by
/// repeatedly replacing G_tt with ulG plus cumulant corrections. Each
/// correction of order k (odd, >= 3) spends (k+1)/2 of the budget r.
/// Throws ClassError when the term has off-diagonal factors.
ReducedExpansion averaging_reduce(const FormalMonomial& term, int r,
                                  AveragingTarget target = AveragingTarget::largest_exponent);

/// P0(z, x) = 1 + z x + sum_l a_l q^(-2(l-1)) x^(2l).
struct SelfConsistentPolynomial {
  double beta = 0.0;
  double q = 1.0;
  /// 2 ceil(1/beta).
  int degree = 2;
  /// Largest power with a nonzero coefficient.
  int effective_degree = 2;
  /// a_1 = 1, a_2, ...; trailing zeros trimmed.
  std::vector<double> a;
  /// |a_l| <= a_bound[l-1], from the stored cumulant bounds.
  std::vector<double> a_bound;
  /// Q0 as exact symbolic terms (ulG_power is the power of x).
  std::vector<ReducedTerm> symbolic;
  /// The monomials T^(s) fed into the averaging step.
  std::vector<FormalMonomial> intermediates;

  /// Coefficient of x^(2l) in P0.
  double x_coefficient(int two_l) const;
  cplx evaluate(cplx z, cplx x) const;
};

/// Quadratic (a = {1}) or user-specified polynomial.
SelfConsistentPolynomial make_polynomial(double beta, double q, std::vector<double> a);

/// Throws PreconditionError when the model stores fewer than
/// 2 ceil(1/beta) + 2 cumulants.
SelfConsistentPolynomial build_P0(const CumulantModel& model);

nlohmann::json to_json(const SelfConsistentPolynomial& p);
SelfConsistentPolynomial polynomial_from_json(const nlohmann::json& j);

/// Numeric value of the symbolic weight prod kappa * N^(-n) q^(-m).
double monomial_weight(const FormalMonomial& m, double n, double q,
                       const std::function<double(int)>& kappa);

/// sum over all index tuples of the monomial with G given densely.
/// Throws SizeError for nu1 > 3.
cplx evaluate_sum(const FormalMonomial& term, const Eigen::MatrixXcd& G, double q,
                  const std::function<double(int)>& kappa);
/// Same with G(z) of the sample's centred matrix; kappas and q from its model.
cplx evaluate_sum(const FormalMonomial& term, const MatrixSample& sample, cplx z);

constexpr int kMaxEvaluateIndices = 3;

}  // namespace sparse_lab
