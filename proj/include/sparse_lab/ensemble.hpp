#pragma once

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace sparse_lab {

enum class EnsembleKind { erdos_renyi, sparse_rademacher, custom };

std::string_view to_string(EnsembleKind kind);
EnsembleKind parse_ensemble_kind(std::string_view name);

/// Robust ceil(1/beta): values within 1e-9 of an integer are not rounded up.
int ceil_inverse_beta(double beta);

struct ModelOptions {
  /// Draw the diagonal from the same law as the off-diagonal entries.
  bool loops = true;
  /// Highest cumulant order stored; 0 selects 2*ceil(1/beta) + 4.
  int k_max = 0;
};

/// Entry-law description of a sparse ensemble through its normalized
/// cumulants: C_k(H_ij) = kappa_k / (N q^(k-2)) for i != j.
///
/// Immutable after construction.
class CumulantModel {
 public:
  EnsembleKind kind() const noexcept { return kind_; }
  std::int64_t N() const noexcept { return n_; }
  double q() const noexcept { return q_; }
  double beta() const noexcept { return beta_; }
  /// Edge probability (Erdős–Rényi only, NaN otherwise).
  double p() const noexcept { return p_; }
  /// Rank-one shift magnitude in A = H + f e e*.
  double f() const noexcept { return f_; }
  bool loops() const noexcept { return loops_; }
  int k_max() const noexcept { return static_cast<int>(kappas_.size()) - 1; }

  /// Normalized off-diagonal cumulant kappa_k, 1 <= k <= k_max.
  double kappa(int k) const;
  /// Normalized diagonal cumulant (same normalization as kappa).
  double diag_kappa(int k) const;
  /// Stored bound C_k with |kappa_k| <= C_k.
  double kappa_bound(int k) const;
  /// Mean of the diagonal entries (nonzero only for the no-loops ER variant).
  double diag_mean() const noexcept { return diag_mean_; }

  /// Raw cumulant C_k(H_ij) of an off-diagonal entry.
  double cumulant(int k) const;

  double offdiag_fourth_moment() const noexcept { return m4_off_; }
  double diag_fourth_moment() const noexcept { return m4_diag_; }

  /// Scale s = sqrt(N p (1-p)) of the normalized adjacency (ER only).
  double er_scale() const;

  nlohmann::json descriptor() const;

 private:
  friend CumulantModel make_er_model(std::int64_t, double, ModelOptions);
  friend CumulantModel make_rademacher_model(std::int64_t, double, ModelOptions);
  friend CumulantModel make_custom_model(std::int64_t, double, std::vector<double>);

  CumulantModel() = default;

  EnsembleKind kind_ = EnsembleKind::custom;
  std::int64_t n_ = 0;
  double q_ = 0.0;
  double beta_ = 0.0;
  double p_ = 0.0;
  double f_ = 0.0;
  bool loops_ = true;
  double diag_mean_ = 0.0;
  double m4_off_ = 0.0;
  double m4_diag_ = 0.0;
  std::vector<double> kappas_;
  std::vector<double> diag_kappas_;
  std::vector<double> kappa_bounds_;
};

/// Normalized adjacency matrix of G(N, p). Throws DomainError for p outside
/// (0, 1) and RegimeError for Np < 1.
CumulantModel make_er_model(std::int64_t n, double p, ModelOptions options = {});

/// Entries +-1/q with probability q^2/(2N) each, 0 otherwise.
/// Throws DomainError unless 1 <= q <= sqrt(N).
CumulantModel make_rademacher_model(std::int64_t n, double q, ModelOptions options = {});

/// Free-form cumulant list {kappa_2, kappa_3, ...}; kappa_2 must be 1.
/// Cumulants beyond the list are zero. Cannot be sampled.
CumulantModel make_custom_model(std::int64_t n, double beta, std::vector<double> kappas_from_2);

/// Edge probability giving q = N^beta for G(N, p), i.e. p = N^(2 beta - 1).
double er_p_for_beta(std::int64_t n, double beta);

CumulantModel model_from_descriptor(const nlohmann::json& descriptor);

/// One upper-triangular stored value (row <= col).
struct Entry {
  std::int32_t row;
  std::int32_t col;
  double value;
};

enum class MatrixView {
  centred,  ///< H
  shifted,  ///< A = H + f e e*
};

/// Symmetric sample stored as upper-triangular coordinates plus a constant
/// background added to every entry and a rank-one shift f e e*:
///   H_ij = background + stored(i, j),   A = H + f e e*.
/// For ER samples the background is the centring -p/s, so A is sparse.
class MatrixSample {
 public:
  MatrixSample(std::shared_ptr<const CumulantModel> model, std::uint64_t seed,
               std::int64_t n, std::vector<Entry> entries, double background,
               double shift, bool centred);

  /// Hand-built sample from an explicit symmetric dense matrix (tests).
  static MatrixSample from_dense(const Eigen::MatrixXd& h, double shift = 0.0);

  const CumulantModel* model() const noexcept { return model_.get(); }
  std::shared_ptr<const CumulantModel> model_ptr() const noexcept { return model_; }
  std::uint64_t seed() const noexcept { return seed_; }
  std::int64_t N() const noexcept { return n_; }
  std::span<const Entry> entries() const noexcept { return entries_; }
  double background() const noexcept { return background_; }
  double shift() const noexcept { return shift_; }
  /// True when the sample holds the centred matrix H of its model.
  bool centred() const noexcept { return centred_; }
  std::optional<double> cached_Z() const noexcept { return cached_z_; }

  /// H_ij (binary search in the stored pattern).
  double entry(std::int64_t i, std::int64_t j) const;

  /// y = M x for M = H or A; O(nnz + N).
  void apply(MatrixView view, std::span<const double> x, std::span<double> y) const;

  /// Dense copy of H or A. Throws SizeError above the dense cap.
  Eigen::MatrixXd dense(MatrixView view = MatrixView::centred) const;

  /// tr H^2 in one pass over the stored entries.
  double trace_of_square() const;

 private:
  std::shared_ptr<const CumulantModel> model_;
  std::uint64_t seed_ = 0;
  std::int64_t n_ = 0;
  std::vector<Entry> entries_;
  double background_ = 0.0;
  double shift_ = 0.0;
  double shifted_background_ = 0.0;  // background + shift / N
  bool centred_ = true;
  std::optional<double> cached_z_;
};

/// Largest N materialized densely; SPARSE_LAB_DENSE_CAP overrides 4096.
std::int64_t dense_cap();

/// Draws H with independent upper-triangular entries. A pure function of
/// (model, seed). Throws UnsupportedError for custom models.
MatrixSample sample(std::shared_ptr<const CumulantModel> model, std::uint64_t seed);
MatrixSample sample(const CumulantModel& model, std::uint64_t seed);

/// ER sample with a prescribed edge set (pairs may be given in either order;
/// a pair (i, i) is a loop). Throws DomainError on repeated or out-of-range
/// pairs, UnsupportedError for non-ER models.
MatrixSample er_sample_from_edges(std::shared_ptr<const CumulantModel> model,
                                  std::vector<std::pair<std::int64_t, std::int64_t>> edges);

/// Z = (1/N) tr H^2 - 1.
double compute_Z(const MatrixSample& sample);

struct SigmaValue {
  double exact;  ///< ((1/N^2) sum_ij E H_ij^4)^(1/2)
  double proxy;  ///< 1 / (sqrt(N) q)
};

SigmaValue compute_Sigma(const CumulantModel& model);

struct SampleStats {
  double Z = 0.0;
  double D = 0.0;  ///< average degree (ER only)
  double d = 0.0;  ///< expected degree Np (ER only)
};

SampleStats sample_stats(const MatrixSample& sample);

/// A-hat = adjacency / sqrt(D) for an ER sample. Throws UnsupportedError for
/// other kinds and DegenerateError for an empty graph.
MatrixSample rescaled_adjacency(const MatrixSample& sample);

/// Matrix Market coordinate dump of the stored pattern (lower triangle as
/// required by the `symmetric` qualifier); background and shift are written
/// as comment lines.
void write_matrix_market(const MatrixSample& sample, std::ostream& out);

}  // namespace sparse_lab
