#pragma once

#include "sparse_lab/ensemble.hpp"
#include "sparse_lab/spectra.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace sparse_lab {

/// Model part of an experiment configuration. Exactly one of p / beta / q
/// fixes the sparsity (p: ER only, q: Rademacher only).
struct ModelSpec {
  EnsembleKind kind = EnsembleKind::erdos_renyi;
  std::int64_t N = 0;
  std::optional<double> p;
  std::optional<double> beta;
  std::optional<double> q;
  bool loops = true;
  /// Custom models: kappa_2, kappa_3, ...
  std::vector<double> kappas;

  bool operator==(const ModelSpec&) const = default;
};

/// Model at dimension n (beta-parameterized specs rescale p or q with n).
CumulantModel make_model(const ModelSpec& spec, std::int64_t n);
CumulantModel make_model(const ModelSpec& spec);

/// Eigenvalue index: c0 + num * N / den (1-based).
struct IndexExpr {
  std::int64_t num = 0;
  std::int64_t den = 1;
  std::int64_t offset = 0;

  std::int64_t resolve(std::int64_t n) const;
  std::string to_string() const;
  bool operator==(const IndexExpr&) const = default;
};

/// "17", "N", "N-1", "N/4", "3N/4", "N/2+1".
IndexExpr parse_index(const std::string& text);

struct ExperimentConfig {
  std::string experiment;
  ModelSpec model;
  std::int64_t M = 0;
  std::uint64_t master_seed = 0;
  int workers = 1;
  std::vector<IndexExpr> indices;
  std::vector<IndexExpr> centre_indices;
  std::vector<cplx> z_probes;
  std::vector<std::pair<double, double>> intervals;
  std::vector<std::int64_t> N_ladder;
  bool edge = false;
  /// "built" or "quadratic" (p-small).
  std::string polynomial = "built";
  /// Spectral-domain constant c: N^(-1+c) <= Im z <= 10, |Re z| <= 10.
  double domain_c = 0.05;
  std::map<std::string, double> thresholds;

  bool operator==(const ExperimentConfig&) const = default;
};

const std::vector<std::string>& experiment_names();

/// Parses TOML; throws ConfigError with line and field on bad input.
/// N, the sparsity (p, beta or q), M and master_seed are mandatory.
ExperimentConfig parse_config(const std::string& toml_text);
ExperimentConfig load_config(const std::filesystem::path& path);
std::string serialize_config(const ExperimentConfig& config);

/// Checks that need N and the experiment kind (index ranges, centre window,
/// probe domain, sample counts). Throws ConfigError; returns warnings.
std::vector<std::string> validate_config(const ExperimentConfig& config);

/// Threshold `name` from the config, else the experiment default, times scale.
double threshold(const ExperimentConfig& config, const std::string& name, double scale = 1.0);

struct Gate {
  std::string name;
  double value = 0.0;
  double lo = -std::numeric_limits<double>::infinity();
  double hi = std::numeric_limits<double>::infinity();
  bool pass = false;
};

struct PlotRow {
  std::string series;
  double x = 0.0;
  double y = 0.0;
};

/// Per-sample records, aggregates and gates of one run.
struct EnsembleStats {
  std::string experiment;
  std::vector<std::string> columns;
  std::vector<std::uint64_t> seeds;
  std::vector<std::vector<double>> rows;
  nlohmann::json summary = nlohmann::json::object();
  std::vector<Gate> gates;
  std::vector<std::string> warnings;
  std::vector<PlotRow> plot;

  bool passed() const;
  std::vector<std::string> failed_gates() const;
};

struct RunOptions {
  /// Overrides config.workers when > 0.
  int workers = 0;
  double gate_scale = 1.0;
};

EnsembleStats run_experiment(const ExperimentConfig& config, const RunOptions& options = {});

EnsembleStats run_z_clt(const ExperimentConfig& config, const RunOptions& options = {});
EnsembleStats run_edge_fluctuation(const ExperimentConfig& config, const RunOptions& options = {});
EnsembleStats run_bulk_fluctuation(const ExperimentConfig& config, const RunOptions& options = {});
EnsembleStats run_rescaling(const ExperimentConfig& config, const RunOptions& options = {});
EnsembleStats run_joint(const ExperimentConfig& config, const RunOptions& options = {});
EnsembleStats run_rigidity(const ExperimentConfig& config, const RunOptions& options = {});
EnsembleStats run_p_smallness(const ExperimentConfig& config, const RunOptions& options = {});

/// records.csv, stats.json and plotdata.csv under `dir`, each carrying the
/// config digest.
void write_outputs(const EnsembleStats& stats, const std::filesystem::path& dir, const std::string& digest);
nlohmann::json stats_json(const EnsembleStats& stats, const std::string& digest);

/// delta(beta) = min(beta, 1/6 - beta) / 10.
double delta_exponent(double beta);

/// True when |i/N - 1/2| < 0.05.
bool in_centre_window(std::int64_t i, std::int64_t n);

// Statistics helpers.
struct KsResult {
  double statistic = 0.0;
  double p_value = 1.0;
};

/// One-sample Kolmogorov-Smirnov test against the standard normal; p-value
/// from the asymptotic Kolmogorov series (100 terms). Throws DomainError on
/// empty input.
KsResult ks_test(std::vector<double> samples);
KsResult ks_two_sample(std::vector<double> a, std::vector<double> b);
/// Q(lambda) = 2 sum_{k>=1} (-1)^(k-1) exp(-2 k^2 lambda^2), clamped to [0, 1].
double kolmogorov_survival(double lambda);

double mean(const std::vector<double>& x);
/// Unbiased sample variance.
double variance(const std::vector<double>& x);
double correlation(const std::vector<double>& x, const std::vector<double>& y);

struct Regression {
  double slope = 0.0;
  double intercept = 0.0;
  double slope_se = 0.0;
};

Regression linear_regression(const std::vector<double>& x, const std::vector<double>& y);
/// Linear-interpolation quantile of the sorted data.
double quantile(std::vector<double> x, double u);
/// var(b) / var(a); 1 when both vanish.
double variance_ratio(const std::vector<double>& a, const std::vector<double>& b);

/// Runs fn(i) for i in [0, count) on `workers` threads; results in index order.
std::vector<std::vector<double>> parallel_map(std::int64_t count, int workers,
                                              const std::function<std::vector<double>(std::int64_t)>& fn);

}  // namespace sparse_lab
