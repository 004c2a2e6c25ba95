#pragma once

#include "sparse_lab/ensemble.hpp"

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

#include <complex>
#include <cstdint>
#include <iosfwd>
#include <vector>

namespace sparse_lab {

using cplx = std::complex<double>;

enum class SpectrumSource { dense, iterative_topk };

struct Spectrum {
  /// Ascending.
  std::vector<double> eigenvalues;
  SpectrumSource source = SpectrumSource::dense;
  /// max ||M v - lambda v||_2 over the reported pairs. For value-only dense
  /// solves this is the backward-error bound 2 N eps ||M||_F of the solver.
  double residual = 0.0;
  /// Column i belongs to eigenvalues[i]; empty unless vectors were requested.
  Eigen::MatrixXd vectors;

  std::size_t size() const noexcept { return eigenvalues.size(); }
  bool has_vectors() const noexcept { return vectors.cols() > 0; }
};

/// All eigenvalues (and optionally eigenvectors) of a symmetric matrix by
/// Householder tridiagonalization and divide and conquer. With vectors the
/// residual is measured unless `measure_residual` is false, in which case the
/// backward-error bound is reported. Throws SizeError above the dense cap.
Spectrum full_spectrum(const MatrixSample& sample, MatrixView view = MatrixView::centred,
                       bool vectors = false, bool measure_residual = true);
Spectrum full_spectrum(const Eigen::MatrixXd& m, bool vectors = false, bool measure_residual = true);

enum class Side { top, bottom };

struct LanczosOptions {
  /// Krylov subspace dimension; 0 selects 4k + 40.
  int krylov_dim = 0;
  int max_restarts = 400;
  /// Convergence: ||M v - theta v|| < tol * max(1, |theta|).
  double tol = 1e-10;
  std::uint64_t start_seed = 0x5EED5EEDULL;
};

/// k extreme eigenpairs of a sparse sample by thick-restart Lanczos with full
/// reorthogonalization. Eigenvalues are returned ascending. Throws
/// ConvergenceError carrying the best residual after the restart cap.
Spectrum extreme_eigs(const MatrixSample& sample, int k, Side side,
                      MatrixView view = MatrixView::centred, const LanczosOptions& options = {});

struct GreenEvaluation {
  cplx z;
  cplx ulG;       ///< (1/N) tr G(z)
  double im_ulG;  ///< Im ulG
  double Gamma;   ///< Im ulG / (N Im z)
};

/// Normalized trace of the resolvent from a complete spectrum.
GreenEvaluation stieltjes(const Spectrum& spectrum, cplx z);

/// Dense resolvent U diag(1/(lambda - z)) U^T; requires eigenvectors.
Eigen::MatrixXcd green_function(const Spectrum& spectrum, cplx z);

/// Diagonal G_ii(z) only; O(N^2).
Eigen::VectorXcd green_diagonal(const Spectrum& spectrum, cplx z);

/// Columns G_ii(z) for each z in `zs`, without an eigendecomposition:
/// M = Q T Q^T by Householder reflections, then one tridiagonal solve per row.
Eigen::MatrixXcd resolvent_diagonal(const Eigen::MatrixXd& m, const std::vector<cplx>& zs);

/// max over probe rows of |sum_j |G_ij|^2 - Im G_ii / eta| / (Im G_ii / eta).
double ward_check(const Spectrum& spectrum, cplx z, const std::vector<std::int64_t>& probe_rows);
double ward_check(const MatrixSample& sample, cplx z, const std::vector<std::int64_t>& probe_rows);

/// max over entries of N u_i(k)^2 for eigenvectors first..first+count-1
/// (count = -1: all of them).
double delocalization_check(const Spectrum& spectrum, std::int64_t first = 0, std::int64_t count = -1);
double delocalization_check(const MatrixSample& sample);

/// CSV "index,eigenvalue" with 1-based indices.
void write_spectrum_csv(const Spectrum& spectrum, std::ostream& out);
nlohmann::json to_json(const GreenEvaluation& g);

}  // namespace sparse_lab
