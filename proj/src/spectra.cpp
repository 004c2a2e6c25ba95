#include "sparse_lab/spectra.hpp"

#include "sparse_lab/errors.hpp"
#include "sparse_lab/random.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>

namespace sparse_lab {

namespace {

constexpr double kEps = std::numeric_limits<double>::epsilon();

}  // namespace

Spectrum full_spectrum(const Eigen::MatrixXd& m, bool vectors, bool measure_residual) {
  if (m.rows() != m.cols()) throw DomainError("full_spectrum: matrix must be square");
  const auto n = m.rows();
  if (n > dense_cap()) {
    throw SizeError("N = " + std::to_string(n) + " exceeds the dense cap; use extreme_eigs");
  }
  Spectrum out;
  out.source = SpectrumSource::dense;
  if (n == 0) return out;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(
      m, vectors ? Eigen::ComputeEigenvectors : Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) {
    throw ConvergenceError("dense eigensolver did not converge", std::numeric_limits<double>::infinity());
  }
  out.eigenvalues.assign(es.eigenvalues().data(), es.eigenvalues().data() + n);
  if (vectors && measure_residual) {
    // ||M V - V Lambda|| column by column
    Eigen::MatrixXd r = m * es.eigenvectors();
    r -= es.eigenvectors() * es.eigenvalues().asDiagonal();
    out.residual = r.colwise().norm().maxCoeff();
  } else {
    out.residual = 2.0 * static_cast<double>(n) * kEps * m.norm();
  }
  if (vectors) out.vectors = es.eigenvectors();
  return out;
}

Spectrum full_spectrum(const MatrixSample& sample, MatrixView view, bool vectors, bool measure_residual) {
  return full_spectrum(sample.dense(view), vectors, measure_residual);
}

// ---------------------------------------------------------------------------
// Thick-restart Lanczos. The basis V satisfies M V_m = V_m H + beta v_m e_m^T
// with H symmetric; after a restart H is diagonal plus one arrow row/column.

Spectrum extreme_eigs(const MatrixSample& sample, int k, Side side, MatrixView view,
                      const LanczosOptions& options) {
  const auto n = sample.N();
  if (k < 1 || k > 8) throw DomainError("extreme_eigs: k must lie in [1, 8]");
  if (k > n) throw DomainError("extreme_eigs: k exceeds N");
  const double sign = side == Side::top ? 1.0 : -1.0;

  int m = options.krylov_dim > 0 ? options.krylov_dim : 4 * k + 40;
  if (m >= n) {
    // the whole space fits in the Krylov basis
    auto full = full_spectrum(sample.dense(view), true);
    Spectrum out;
    out.source = SpectrumSource::iterative_topk;
    const auto first = side == Side::top ? n - k : 0;
    out.eigenvalues.assign(full.eigenvalues.begin() + first, full.eigenvalues.begin() + first + k);
    out.vectors = full.vectors.middleCols(first, k);
    out.residual = full.residual;
    return out;
  }
  if (m < k + 2) m = k + 2;

  std::vector<double> xbuf(static_cast<std::size_t>(n)), ybuf(static_cast<std::size_t>(n));
  auto apply = [&](const Eigen::Ref<const Eigen::VectorXd>& x, Eigen::Ref<Eigen::VectorXd> y) {
    std::copy(x.data(), x.data() + n, xbuf.begin());
    sample.apply(view, xbuf, ybuf);
    for (Eigen::Index i = 0; i < n; ++i) y(i) = sign * ybuf[static_cast<std::size_t>(i)];
  };

  Rng rng(options.start_seed);
  auto random_unit = [&](int cols_to_avoid, const Eigen::MatrixXd& basis) {
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = rng.uniform() - 0.5;
    for (int pass = 0; pass < 2 && cols_to_avoid > 0; ++pass) {
      v -= basis.leftCols(cols_to_avoid) * (basis.leftCols(cols_to_avoid).transpose() * v);
    }
    return Eigen::VectorXd(v / v.norm());
  };

  Eigen::MatrixXd V(n, m + 1);
  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(m, m);
  V.col(0) = random_unit(0, V);
  Eigen::VectorXd w(n);
  int kept = 0;
  double beta_last = 0.0;
  double best_residual = std::numeric_limits<double>::infinity();

  for (int restart = 0; restart <= options.max_restarts; ++restart) {
    for (int j = kept; j < m; ++j) {
      apply(V.col(j), w);
      const double scale = w.norm();
      Eigen::VectorXd h = V.leftCols(j + 1).transpose() * w;
      w -= V.leftCols(j + 1) * h;
      const Eigen::VectorXd h2 = V.leftCols(j + 1).transpose() * w;
      w -= V.leftCols(j + 1) * h2;
      h += h2;
      for (int i = 0; i <= j; ++i) {
        H(i, j) = h(i);
        H(j, i) = h(i);
      }
      double beta = w.norm();
      if (beta <= 1e-12 * std::max(scale, 1.0)) {
        // invariant subspace: continue with a fresh orthogonal direction
        V.col(j + 1) = random_unit(j + 1, V);
        beta = 0.0;
      } else {
        V.col(j + 1) = w / beta;
      }
      if (j + 1 < m) {
        H(j + 1, j) = beta;
        H(j, j + 1) = beta;
      }
      beta_last = beta;
    }

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(H);
    const Eigen::VectorXd& theta = es.eigenvalues();
    const Eigen::MatrixXd& Y = es.eigenvectors();

    bool estimated = true;
    for (int i = m - k; i < m; ++i) {
      const double est = std::abs(beta_last * Y(m - 1, i));
      if (est >= options.tol * std::max(1.0, std::abs(theta(i)))) estimated = false;
    }
    if (estimated || restart == options.max_restarts) {
      Eigen::MatrixXd X = V.leftCols(m) * Y.rightCols(k);
      double worst = 0.0;
      bool ok = true;
      Eigen::VectorXd ax(n);
      for (int c = 0; c < k; ++c) {
        X.col(c).normalize();
        apply(X.col(c), ax);
        const double th = theta(m - k + c);
        const double res = (ax - th * X.col(c)).norm();
        worst = std::max(worst, res);
        if (res >= options.tol * std::max(1.0, std::abs(th))) ok = false;
      }
      best_residual = std::min(best_residual, worst);
      if (ok) {
        Spectrum out;
        out.source = SpectrumSource::iterative_topk;
        out.residual = worst;
        std::vector<int> order(static_cast<std::size_t>(k));
        std::iota(order.begin(), order.end(), 0);
        if (side == Side::bottom) std::reverse(order.begin(), order.end());
        out.vectors.resize(n, k);
        for (int c = 0; c < k; ++c) {
          out.eigenvalues.push_back(sign * theta(m - k + order[static_cast<std::size_t>(c)]));
          out.vectors.col(c) = X.col(order[static_cast<std::size_t>(c)]);
        }
        return out;
      }
    }
    if (restart == options.max_restarts) break;

    const int keep = std::min(m - 1, k + (m - k) / 2);
    const Eigen::MatrixXd Vk = V.leftCols(m) * Y.rightCols(keep);
    const Eigen::VectorXd b = beta_last * Y.row(m - 1).tail(keep).transpose();
    V.col(keep) = V.col(m);
    V.leftCols(keep) = Vk;
    H.setZero();
    for (int i = 0; i < keep; ++i) {
      H(i, i) = theta(m - keep + i);
      H(i, keep) = b(i);
      H(keep, i) = b(i);
    }
    kept = keep;
  }
  throw ConvergenceError("extreme_eigs: no convergence after " + std::to_string(options.max_restarts) +
                             " restarts",
                         best_residual);
}

// ---------------------------------------------------------------------------

GreenEvaluation stieltjes(const Spectrum& spectrum, cplx z) {
  if (!(z.imag() > 0.0)) throw DomainError("stieltjes: Im z must be positive");
  if (spectrum.source != SpectrumSource::dense || spectrum.eigenvalues.empty()) {
    throw PreconditionError("stieltjes: a complete spectrum is required");
  }
  cplx acc = 0.0;
  for (double lam : spectrum.eigenvalues) acc += 1.0 / (lam - z);
  const double n = static_cast<double>(spectrum.size());
  GreenEvaluation g;
  g.z = z;
  g.ulG = acc / n;
  g.im_ulG = g.ulG.imag();
  g.Gamma = g.im_ulG / (n * z.imag());
  return g;
}

namespace {

void require_vectors(const Spectrum& s, const char* who) {
  if (!s.has_vectors() || s.source != SpectrumSource::dense) {
    throw PreconditionError(std::string(who) + ": complete eigendecomposition required");
  }
}

Eigen::VectorXcd resolvent_weights(const Spectrum& s, cplx z) {
  Eigen::VectorXcd d(static_cast<Eigen::Index>(s.size()));
  for (std::size_t k = 0; k < s.size(); ++k) d(static_cast<Eigen::Index>(k)) = 1.0 / (s.eigenvalues[k] - z);
  return d;
}

}  // namespace

Eigen::MatrixXcd green_function(const Spectrum& spectrum, cplx z) {
  require_vectors(spectrum, "green_function");
  if (!(z.imag() > 0.0)) throw DomainError("green_function: Im z must be positive");
  const Eigen::MatrixXcd u = spectrum.vectors.cast<cplx>();
  const Eigen::VectorXcd d = resolvent_weights(spectrum, z);
  return (u * d.asDiagonal()) * u.transpose();
}

Eigen::VectorXcd green_diagonal(const Spectrum& spectrum, cplx z) {
  require_vectors(spectrum, "green_diagonal");
  if (!(z.imag() > 0.0)) throw DomainError("green_diagonal: Im z must be positive");
  return spectrum.vectors.cwiseAbs2().cast<cplx>() * resolvent_weights(spectrum, z);
}

Eigen::MatrixXcd resolvent_diagonal(const Eigen::MatrixXd& m, const std::vector<cplx>& zs) {
  if (m.rows() != m.cols()) throw DomainError("resolvent_diagonal: matrix must be square");
  const auto n = m.rows();
  if (n > dense_cap()) throw SizeError("resolvent_diagonal: N exceeds the dense cap");
  for (const auto z : zs) {
    if (!(z.imag() > 0.0)) throw DomainError("resolvent_diagonal: Im z must be positive");
  }
  Eigen::MatrixXcd out(n, static_cast<Eigen::Index>(zs.size()));
  if (n == 0) return out;
  if (n == 1) {
    for (std::size_t c = 0; c < zs.size(); ++c) out(0, static_cast<Eigen::Index>(c)) = 1.0 / (m(0, 0) - zs[c]);
    return out;
  }
  const Eigen::Tridiagonalization<Eigen::MatrixXd> tri(m);
  const Eigen::MatrixXd q = tri.matrixQ();
  const Eigen::VectorXd d = tri.diagonal();
  const Eigen::VectorXd e = tri.subDiagonal();
  std::vector<cplx> lower(static_cast<std::size_t>(n - 1)), pivot(static_cast<std::size_t>(n));
  Eigen::VectorXcd y(n);
  for (std::size_t c = 0; c < zs.size(); ++c) {
    const cplx z = zs[c];
    // T - z = L D L^T; no pivoting needed since Im z > 0 keeps pivots off zero
    pivot[0] = d(0) - z;
    for (Eigen::Index k = 1; k < n; ++k) {
      lower[static_cast<std::size_t>(k - 1)] = e(k - 1) / pivot[static_cast<std::size_t>(k - 1)];
      pivot[static_cast<std::size_t>(k)] = d(k) - z - lower[static_cast<std::size_t>(k - 1)] * e(k - 1);
    }
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index k = 0; k < n; ++k) y(k) = q(i, k);
      for (Eigen::Index k = 1; k < n; ++k) y(k) -= lower[static_cast<std::size_t>(k - 1)] * y(k - 1);
      for (Eigen::Index k = 0; k < n; ++k) y(k) /= pivot[static_cast<std::size_t>(k)];
      for (Eigen::Index k = n - 2; k >= 0; --k) y(k) -= lower[static_cast<std::size_t>(k)] * y(k + 1);
      cplx acc = 0.0;
      for (Eigen::Index k = 0; k < n; ++k) acc += q(i, k) * y(k);
      out(i, static_cast<Eigen::Index>(c)) = acc;
    }
  }
  return out;
}

double ward_check(const Spectrum& spectrum, cplx z, const std::vector<std::int64_t>& probe_rows) {
  require_vectors(spectrum, "ward_check");
  if (!(z.imag() > 0.0)) throw DomainError("ward_check: Im z must be positive");
  const auto n = static_cast<Eigen::Index>(spectrum.size());
  const Eigen::VectorXcd d = resolvent_weights(spectrum, z);
  const double eta = z.imag();
  double worst = 0.0;
  for (const auto row : probe_rows) {
    if (row < 0 || row >= n) throw DomainError("ward_check: probe row out of range");
    const Eigen::VectorXcd coeff = spectrum.vectors.row(row).transpose().cast<cplx>().cwiseProduct(d);
    const Eigen::VectorXcd g = spectrum.vectors.cast<cplx>() * coeff;  // row `row` of G
    const double lhs = g.squaredNorm();
    const double rhs = g(row).imag() / eta;
    if (!std::isfinite(lhs) || !std::isfinite(rhs) || rhs == 0.0) {
      throw DegenerateError("ward_check: resolvent not representable at this z");
    }
    worst = std::max(worst, std::abs(lhs - rhs) / rhs);
  }
  return worst;
}

double ward_check(const MatrixSample& sample, cplx z, const std::vector<std::int64_t>& probe_rows) {
  return ward_check(full_spectrum(sample, MatrixView::centred, true), z, probe_rows);
}

double delocalization_check(const Spectrum& spectrum, std::int64_t first, std::int64_t count) {
  if (!spectrum.has_vectors()) throw PreconditionError("delocalization_check: eigenvectors required");
  const auto cols = spectrum.vectors.cols();
  if (count < 0) count = cols - first;
  if (first < 0 || first + count > cols) throw DomainError("delocalization_check: column range");
  if (count == 0) return 0.0;
  const double n = static_cast<double>(spectrum.vectors.rows());
  return n * spectrum.vectors.middleCols(first, count).cwiseAbs2().maxCoeff();
}

double delocalization_check(const MatrixSample& sample) {
  return delocalization_check(full_spectrum(sample, MatrixView::centred, true));
}

void write_spectrum_csv(const Spectrum& spectrum, std::ostream& out) {
  out << "index,eigenvalue\n";
  char buf[64];
  for (std::size_t i = 0; i < spectrum.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g\n", i + 1, spectrum.eigenvalues[i]);
    out << buf;
  }
}

nlohmann::json to_json(const GreenEvaluation& g) {
  return {{"z_re", g.z.real()}, {"z_im", g.z.imag()}, {"ulG_re", g.ulG.real()},
          {"ulG_im", g.ulG.imag()}, {"gamma", g.Gamma}};
}

}  // namespace sparse_lab
