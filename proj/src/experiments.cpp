#include "sparse_lab/experiments.hpp"

#include "sparse_lab/errors.hpp"
#include "sparse_lab/formalcalc.hpp"
#include "sparse_lab/random.hpp"
#include "sparse_lab/scmeasure.hpp"

#include <boost/math/distributions/normal.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <memory>
#include <numbers>

namespace sparse_lab {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kInf = std::numeric_limits<double>::infinity();
const double kSqrt2 = std::numbers::sqrt2;

/// Every ladder position gets its own block of 2^32 sample indices.
std::uint64_t sample_seed(std::uint64_t master, std::size_t ladder_pos, std::int64_t index) {
  return derive_seed(master, (static_cast<std::uint64_t>(ladder_pos) << 32) + static_cast<std::uint64_t>(index));
}

int worker_count(const ExperimentConfig& cfg, const RunOptions& opt) {
  return opt.workers > 0 ? opt.workers : cfg.workers;
}

void require_samples(const ExperimentConfig& cfg, std::int64_t minimum, const char* op) {
  if (cfg.M < minimum) {
    throw PreconditionError(std::string(op) + ": M = " + std::to_string(cfg.M) + " is below the minimum " +
                            std::to_string(minimum) + " for a distributional test");
  }
}

void add_gate(EnsembleStats& st, std::string name, double value, double lo, double hi) {
  Gate g;
  g.name = std::move(name);
  g.value = value;
  g.lo = lo;
  g.hi = hi;
  g.pass = std::isfinite(value) ? (value >= lo && value <= hi) : false;
  st.gates.push_back(std::move(g));
}

void regime_warning(EnsembleStats& st, double beta) {
  if (beta >= 1.0 / 6.0) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "beta = %.6g is outside the fluctuation regime beta < 1/6; results are flagged",
                  beta);
    st.warnings.emplace_back(buf);
  }
}

std::vector<double> column(const EnsembleStats& st, std::size_t c) {
  std::vector<double> out;
  out.reserve(st.rows.size());
  for (const auto& r : st.rows) out.push_back(r[c]);
  return out;
}

std::size_t add_column(EnsembleStats& st, const std::string& name, const std::vector<double>& values) {
  st.columns.push_back(name);
  for (std::size_t i = 0; i < st.rows.size(); ++i) st.rows[i].push_back(values[i]);
  return st.columns.size() - 1;
}

std::vector<double> scaled(const std::vector<double>& x, double factor) {
  std::vector<double> out(x);
  for (auto& v : out) v *= factor;
  return out;
}

double stddev(const std::vector<double>& x) { return std::sqrt(variance(x)); }

void add_histogram(EnsembleStats& st, const std::string& name, const std::vector<double>& values, int bins = 30) {
  if (values.empty()) return;
  const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  double lo = *lo_it;
  double hi = *hi_it;
  if (hi == lo) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double width = (hi - lo) / bins;
  std::vector<double> counts(static_cast<std::size_t>(bins), 0.0);
  for (double v : values) {
    auto b = static_cast<std::size_t>(std::clamp((v - lo) / width, 0.0, bins - 1.0));
    counts[b] += 1.0;
  }
  for (int b = 0; b < bins; ++b) {
    st.plot.push_back({"hist:" + name, lo + (b + 0.5) * width,
                       counts[static_cast<std::size_t>(b)] / (static_cast<double>(values.size()) * width)});
  }
}

void add_qq(EnsembleStats& st, const std::string& name, std::vector<double> standardized) {
  std::sort(standardized.begin(), standardized.end());
  const boost::math::normal_distribution<double> phi;
  const double n = static_cast<double>(standardized.size());
  for (std::size_t i = 0; i < standardized.size(); ++i) {
    st.plot.push_back({"qq:" + name, boost::math::quantile(phi, (static_cast<double>(i) + 0.5) / n), standardized[i]});
  }
}

std::vector<double> standardize(const std::vector<double>& x) {
  const double m = mean(x);
  const double s = stddev(x);
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = s > 0.0 ? (x[i] - m) / s : 0.0;
  return out;
}

std::int64_t resolve_checked(const IndexExpr& e, std::int64_t n, const char* field) {
  const std::int64_t i = e.resolve(n);
  if (i < 1 || i > n) {
    throw ConfigError(std::string("config: ") + field + " entry '" + e.to_string() + "' resolves to " +
                      std::to_string(i) + ", outside [1, " + std::to_string(n) + "]");
  }
  return i;
}

std::vector<std::int64_t> resolve_bulk_indices(const std::vector<IndexExpr>& list, std::int64_t n, const char* field) {
  std::vector<std::int64_t> out;
  for (const auto& e : list) {
    const std::int64_t i = resolve_checked(e, n, field);
    if (in_centre_window(i, n)) {
      throw ConfigError(std::string("config: ") + field + " entry '" + e.to_string() + "' = " + std::to_string(i) +
                        " lies in the excluded centre window |i/N - 1/2| < 0.05");
    }
    out.push_back(i);
  }
  return out;
}

double gamma_sc(std::int64_t i, std::int64_t n) {
  return semicircle_quantile(static_cast<double>(i) / static_cast<double>(n));
}

double sigma_of(const CumulantModel& model) {
  const double sigma = compute_Sigma(model).exact;
  if (!(sigma > 0.0)) throw DegenerateError("experiment: Sigma = 0 for this model");
  return sigma;
}

EnsembleStats start(const ExperimentConfig& cfg, const char* name) {
  if (cfg.experiment != name) {
    throw ConfigError("config: experiment is '" + cfg.experiment + "', runner is '" + name + "'");
  }
  EnsembleStats st;
  st.experiment = name;
  st.columns = {};
  return st;
}

void collect(EnsembleStats& st, const std::vector<std::vector<double>>& rows, std::uint64_t master, std::size_t pos) {
  for (std::size_t i = 0; i < rows.size(); ++i) {
    st.seeds.push_back(sample_seed(master, pos, static_cast<std::int64_t>(i)));
    st.rows.push_back(rows[i]);
  }
}

std::string index_key(std::int64_t i) { return std::to_string(i); }

}  // namespace

CumulantModel make_model(const ModelSpec& spec, std::int64_t n) {
  ModelOptions opts;
  opts.loops = spec.loops;
  switch (spec.kind) {
    case EnsembleKind::erdos_renyi:
      return make_er_model(n, spec.p ? *spec.p : er_p_for_beta(n, *spec.beta), opts);
    case EnsembleKind::sparse_rademacher:
      return make_rademacher_model(n, spec.q ? *spec.q : std::pow(static_cast<double>(n), *spec.beta), opts);
    case EnsembleKind::custom:
      return make_custom_model(n, *spec.beta, spec.kappas);
  }
  throw ConfigError("unknown model kind");
}

CumulantModel make_model(const ModelSpec& spec) { return make_model(spec, spec.N); }

double delta_exponent(double beta) { return 0.1 * std::min(beta, 1.0 / 6.0 - beta); }

bool in_centre_window(std::int64_t i, std::int64_t n) {
  return std::abs(static_cast<double>(i) / static_cast<double>(n) - 0.5) < 0.05;
}

bool EnsembleStats::passed() const {
  return std::all_of(gates.begin(), gates.end(), [](const Gate& g) { return g.pass; });
}

std::vector<std::string> EnsembleStats::failed_gates() const {
  std::vector<std::string> out;
  for (const auto& g : gates) {
    if (!g.pass) out.push_back(g.name);
  }
  return out;
}

EnsembleStats run_z_clt(const ExperimentConfig& cfg, const RunOptions& opt) {
  auto st = start(cfg, "z-clt");
  require_samples(cfg, 1000, "run_z_clt");
  const std::vector<std::int64_t> ladder = cfg.N_ladder.empty() ? std::vector<std::int64_t>{cfg.model.N} : cfg.N_ladder;
  st.columns = {"N", "Z", "Sigma", "Z_std"};
  const double scale = opt.gate_scale;
  std::vector<double> ks_values;
  for (std::size_t pos = 0; pos < ladder.size(); ++pos) {
    const std::int64_t n = ladder[pos];
    auto model = std::make_shared<const CumulantModel>(make_model(cfg.model, n));
    const double sigma = sigma_of(*model);
    if (pos == 0) regime_warning(st, model->beta());
    auto rows = parallel_map(cfg.M, worker_count(cfg, opt), [&](std::int64_t i) {
      const auto s = sample(model, sample_seed(cfg.master_seed, pos, i));
      const double z = compute_Z(s);
      return std::vector<double>{static_cast<double>(n), z, sigma, z / (kSqrt2 * sigma)};
    });
    std::vector<double> zstd;
    for (const auto& r : rows) zstd.push_back(r[3]);
    collect(st, rows, cfg.master_seed, pos);

    const auto ks = ks_test(zstd);
    const double sd = stddev(zstd);
    const std::string key = std::to_string(n);
    st.summary["per_N"][key] = {{"N", n},
                                {"Sigma", sigma},
                                {"mean_Z_std", mean(zstd)},
                                {"var_Z_std", variance(zstd)},
                                {"std_Z_std", sd},
                                {"ks_statistic", ks.statistic},
                                {"ks_p_value", ks.p_value}};
    const std::string suffix = ladder.size() > 1 ? "@N=" + key : "";
    add_gate(st, "std" + suffix, sd, threshold(cfg, "std_min", scale), threshold(cfg, "std_max", scale));
    add_gate(st, "ks_p" + suffix, ks.p_value, threshold(cfg, "ks_p_min", scale), kInf);
    ks_values.push_back(ks.statistic);
    if (pos + 1 == ladder.size()) {
      add_histogram(st, "Z_std", zstd);
      add_qq(st, "Z_std", zstd);
    }
  }
  // KS statistic under the null has standard deviation ~0.2603 / sqrt(M).
  const double se_diff = kSqrt2 * 0.2603 / std::sqrt(static_cast<double>(cfg.M));
  for (std::size_t k = 0; k + 1 < ks_values.size(); ++k) {
    add_gate(st, "ks_trend@N=" + std::to_string(ladder[k + 1]), ks_values[k + 1] - ks_values[k], -kInf,
             threshold(cfg, "ks_trend_sigmas", scale) * se_diff);
  }
  return st;
}

EnsembleStats run_edge_fluctuation(const ExperimentConfig& cfg, const RunOptions& opt) {
  auto st = start(cfg, "edge");
  require_samples(cfg, 30, "run_edge_fluctuation");
  auto model = std::make_shared<const CumulantModel>(make_model(cfg.model));
  regime_warning(st, model->beta());
  const std::int64_t n = model->N();
  const double sigma = sigma_of(*model);
  const double gamma = gamma_sc(n - 1, n);
  const bool symmetric = model->f() == 0.0;
  st.columns = {"Z", "lambda_N", "lambda_Nm1"};
  if (symmetric) st.columns.push_back("lambda_1");
  st.columns.push_back("residual");

  auto rows = parallel_map(cfg.M, worker_count(cfg, opt), [&](std::int64_t i) {
    const auto s = sample(model, sample_seed(cfg.master_seed, 0, i));
    const auto top = extreme_eigs(s, 2, Side::top, MatrixView::shifted);
    std::vector<double> r{compute_Z(s), top.eigenvalues[1], top.eigenvalues[0]};
    double residual = top.residual;
    if (symmetric) {
      const auto bottom = extreme_eigs(s, 1, Side::bottom, MatrixView::shifted);
      r.push_back(bottom.eigenvalues[0]);
      residual = std::max(residual, bottom.residual);
    }
    r.push_back(residual);
    return r;
  });
  collect(st, rows, cfg.master_seed, 0);

  const auto z = column(st, 0);
  const auto lam = column(st, 2);
  const double m = mean(lam);
  const double unit = gamma * sigma / kSqrt2;
  std::vector<double> x(lam.size());
  for (std::size_t i = 0; i < lam.size(); ++i) x[i] = (lam[i] - m) / unit;
  add_column(st, "X_Nm1", x);

  const double corr = correlation(lam, scaled(z, gamma / 2.0));
  const double ratio = stddev(lam) / unit;
  const auto ks = ks_test(standardize(lam));
  const auto residuals = column(st, symmetric ? 4 : 3);
  st.summary = {{"N", n},
                {"q", model->q()},
                {"beta", model->beta()},
                {"Sigma", sigma},
                {"gamma_sc", gamma},
                {"mean_lambda_Nm1", m},
                {"var_lambda_Nm1", variance(lam)},
                {"var_Z", variance(z)},
                {"correlation", corr},
                {"std_ratio", ratio},
                {"ks_statistic", ks.statistic},
                {"ks_p_value", ks.p_value},
                {"max_residual", *std::max_element(residuals.begin(), residuals.end())}};
  const double scale = opt.gate_scale;
  add_gate(st, "correlation", corr, threshold(cfg, "corr_min", scale), kInf);
  add_gate(st, "std_ratio", ratio, threshold(cfg, "std_ratio_min", scale), threshold(cfg, "std_ratio_max", scale));
  if (symmetric) {
    const auto top = column(st, 1);
    auto bottom = scaled(column(st, 3), -1.0);
    const auto sym = ks_two_sample(top, bottom);
    st.summary["symmetry_ks_statistic"] = sym.statistic;
    st.summary["symmetry_ks_p_value"] = sym.p_value;
    add_gate(st, "symmetry_ks_p", sym.p_value, threshold(cfg, "sym_ks_p_min", scale), kInf);
  }
  add_histogram(st, "X_Nm1", x);
  add_qq(st, "lambda_Nm1", standardize(lam));
  for (std::size_t i = 0; i < lam.size(); ++i) st.plot.push_back({"scatter:Z_lambda_Nm1", z[i], lam[i]});
  return st;
}

EnsembleStats run_bulk_fluctuation(const ExperimentConfig& cfg, const RunOptions& opt) {
  auto st = start(cfg, "bulk");
  require_samples(cfg, 30, "run_bulk_fluctuation");
  auto model = std::make_shared<const CumulantModel>(make_model(cfg.model));
  regime_warning(st, model->beta());
  const std::int64_t n = model->N();
  if (n > dense_cap()) throw SizeError("run_bulk_fluctuation: N exceeds the dense cap");
  const auto bulk = resolve_bulk_indices(cfg.indices, n, "probes.indices");
  std::vector<std::int64_t> centre;
  for (const auto& e : cfg.centre_indices) centre.push_back(resolve_checked(e, n, "probes.centre_indices"));
  if (bulk.empty() && centre.empty()) throw ConfigError("config: bulk needs probes.indices or probes.centre_indices");
  const double sigma = sigma_of(*model);
  const double delta = delta_exponent(model->beta());

  st.columns = {"Z"};
  for (auto i : bulk) st.columns.push_back("lambda_" + index_key(i));
  for (auto i : centre) st.columns.push_back("lambda_" + index_key(i));
  auto rows = parallel_map(cfg.M, worker_count(cfg, opt), [&](std::int64_t k) {
    const auto s = sample(model, sample_seed(cfg.master_seed, 0, k));
    const auto spec = full_spectrum(s, MatrixView::shifted);
    std::vector<double> r{compute_Z(s)};
    for (auto i : bulk) r.push_back(spec.eigenvalues[static_cast<std::size_t>(i - 1)]);
    for (auto i : centre) r.push_back(spec.eigenvalues[static_cast<std::size_t>(i - 1)]);
    return r;
  });
  collect(st, rows, cfg.master_seed, 0);

  const auto z = column(st, 0);
  const double scale = opt.gate_scale;
  const double residual_unit = std::pow(static_cast<double>(n), -delta / 2.0) * sigma;
  st.summary = {{"N", n},      {"q", model->q()},        {"beta", model->beta()},
                {"Sigma", sigma}, {"delta", delta},       {"var_Z", variance(z)},
                {"residual_unit", residual_unit}};
  for (std::size_t k = 0; k < bulk.size(); ++k) {
    const std::int64_t i = bulk[k];
    const auto lam = column(st, 1 + k);
    const double gamma = gamma_sc(i, n);
    const double m = mean(lam);
    const double unit = gamma * sigma / kSqrt2;
    std::vector<double> x(lam.size());
    std::vector<double> resid(lam.size());
    for (std::size_t j = 0; j < lam.size(); ++j) {
      x[j] = (lam[j] - m) / unit;
      resid[j] = std::abs(lam[j] - m - gamma / 2.0 * z[j]);
    }
    add_column(st, "X_" + index_key(i), x);
    const double corr = correlation(lam, scaled(z, gamma / 2.0));
    const double rq = quantile(resid, 0.99) / residual_unit;
    st.summary["indices"][index_key(i)] = {{"gamma_sc", gamma},
                                           {"mean_lambda", m},
                                           {"var_lambda", variance(lam)},
                                           {"correlation", corr},
                                           {"residual_q99_over_unit", rq}};
    add_gate(st, "correlation@i=" + index_key(i), corr, threshold(cfg, "corr_min", scale), kInf);
    add_histogram(st, "X_" + index_key(i), x);
    add_qq(st, "X_" + index_key(i), standardize(lam));
  }
  for (std::size_t k = 0; k < centre.size(); ++k) {
    const std::int64_t i = centre[k];
    const auto lam = column(st, 1 + bulk.size() + k);
    const auto fit = linear_regression(z, lam);
    const double t = fit.slope_se > 0.0 ? fit.slope / fit.slope_se : 0.0;
    st.summary["centre"][index_key(i)] = {{"gamma_sc", gamma_sc(i, n)},
                                          {"mean_lambda", mean(lam)},
                                          {"var_lambda", variance(lam)},
                                          {"slope", fit.slope},
                                          {"slope_se", fit.slope_se}};
    const double lim = threshold(cfg, "slope_sigmas", scale);
    add_gate(st, "centre_slope_t@i=" + index_key(i), t, -lim, lim);
  }
  return st;
}

EnsembleStats run_rescaling(const ExperimentConfig& cfg, const RunOptions& opt) {
  auto st = start(cfg, "rescale");
  require_samples(cfg, 30, "run_rescaling");
  if (cfg.model.kind != EnsembleKind::erdos_renyi) throw PreconditionError("run_rescaling: requires an ER model");
  auto model = std::make_shared<const CumulantModel>(make_model(cfg.model));
  regime_warning(st, model->beta());
  st.columns = {"Z", "D", "lambda_Nm1_A", "lambda_Nm1_Ahat", "skipped"};
  auto rows = parallel_map(cfg.M, worker_count(cfg, opt), [&](std::int64_t i) {
    const auto s = sample(model, sample_seed(cfg.master_seed, 0, i));
    const auto stats = sample_stats(s);
    const double lam_a = extreme_eigs(s, 2, Side::top, MatrixView::shifted).eigenvalues[0];
    try {
      const auto hat = rescaled_adjacency(s);
      const double lam_hat = extreme_eigs(hat, 2, Side::top, MatrixView::centred).eigenvalues[0];
      return std::vector<double>{stats.Z, stats.D, lam_a, lam_hat, 0.0};
    } catch (const DegenerateError&) {
      return std::vector<double>{stats.Z, stats.D, lam_a, kNaN, 1.0};
    }
  });
  collect(st, rows, cfg.master_seed, 0);

  std::vector<double> a;
  std::vector<double> b;
  std::int64_t skipped = 0;
  for (const auto& r : st.rows) {
    if (r[4] != 0.0) {
      ++skipped;
      continue;
    }
    a.push_back(r[2]);
    b.push_back(r[3]);
  }
  if (a.size() < 2) throw DegenerateError("run_rescaling: fewer than two non-degenerate samples");
  const double ratio = variance_ratio(a, b);
  st.summary = {{"N", model->N()},
                {"q", model->q()},
                {"beta", model->beta()},
                {"p", model->p()},
                {"skipped", skipped},
                {"used", static_cast<std::int64_t>(a.size())},
                {"var_lambda_Nm1_A", variance(a)},
                {"var_lambda_Nm1_Ahat", variance(b)},
                {"variance_ratio", ratio}};
  if (skipped > 0) st.warnings.push_back(std::to_string(skipped) + " degenerate (empty) graph samples skipped");
  add_gate(st, "variance_ratio", ratio, threshold(cfg, "ratio_min", opt.gate_scale),
           threshold(cfg, "ratio_max", opt.gate_scale));
  add_histogram(st, "lambda_Nm1_A", standardize(a));
  add_histogram(st, "lambda_Nm1_Ahat", standardize(b));
  return st;
}

EnsembleStats run_joint(const ExperimentConfig& cfg, const RunOptions& opt) {
  auto st = start(cfg, "joint");
  require_samples(cfg, 30, "run_joint");
  auto model = std::make_shared<const CumulantModel>(make_model(cfg.model));
  regime_warning(st, model->beta());
  const std::int64_t n = model->N();
  const auto idx = resolve_bulk_indices(cfg.indices, n, "probes.indices");
  if (idx.empty()) throw ConfigError("config: joint needs probes.indices");
  const double sigma = sigma_of(*model);
  st.columns = {"Z"};
  for (auto i : idx) st.columns.push_back("lambda_" + index_key(i));
  auto rows = parallel_map(cfg.M, worker_count(cfg, opt), [&](std::int64_t k) {
    const auto s = sample(model, sample_seed(cfg.master_seed, 0, k));
    const auto spec = full_spectrum(s, MatrixView::shifted);
    std::vector<double> r{compute_Z(s)};
    for (auto i : idx) r.push_back(spec.eigenvalues[static_cast<std::size_t>(i - 1)]);
    return r;
  });
  collect(st, rows, cfg.master_seed, 0);

  std::vector<std::vector<double>> xs;
  st.summary = {{"N", n}, {"q", model->q()}, {"beta", model->beta()}, {"Sigma", sigma}};
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const auto lam = column(st, 1 + k);
    const double gamma = gamma_sc(idx[k], n);
    const double m = mean(lam);
    const double unit = gamma * sigma / kSqrt2;
    std::vector<double> x(lam.size());
    for (std::size_t j = 0; j < lam.size(); ++j) x[j] = (lam[j] - m) / unit;
    st.summary["indices"][index_key(idx[k])] = {{"gamma_sc", gamma}, {"mean_lambda", m}, {"var_lambda", variance(lam)}};
    xs.push_back(x);
  }
  for (std::size_t k = 0; k < idx.size(); ++k) add_column(st, "X_" + index_key(idx[k]), xs[k]);

  nlohmann::json matrix = nlohmann::json::array();
  double min_corr = 1.0;
  double max_dev = 0.0;
  for (std::size_t a = 0; a < xs.size(); ++a) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t b = 0; b < xs.size(); ++b) {
      const double c = a == b ? 1.0 : correlation(xs[a], xs[b]);
      row.push_back(c);
      if (a != b) min_corr = std::min(min_corr, c);
      max_dev = std::max(max_dev, std::abs(c - 1.0));
    }
    matrix.push_back(row);
  }
  st.summary["correlation_matrix"] = matrix;
  st.summary["max_deviation_from_ones"] = max_dev;
  st.summary["min_pairwise_correlation"] = min_corr;
  if (xs.size() >= 2) {
    add_gate(st, "min_pairwise_correlation", min_corr, threshold(cfg, "corr_min", opt.gate_scale), kInf);
    for (std::size_t j = 0; j < xs[0].size(); ++j) st.plot.push_back({"scatter:X_pair", xs[0][j], xs[1][j]});
  } else {
    st.warnings.emplace_back("single index: correlation matrix is [1], no pairwise gate");
  }
  return st;
}

EnsembleStats run_rigidity(const ExperimentConfig& cfg, const RunOptions& opt) {
  auto st = start(cfg, "rigidity");
  if (cfg.intervals.empty() && !cfg.edge) {
    throw ConfigError("config: rigidity needs probes.intervals or probes.edge = true");
  }
  auto model = std::make_shared<const CumulantModel>(make_model(cfg.model));
  const double beta = model->beta();
  regime_warning(st, beta);
  const std::int64_t n = model->N();
  const double nd = static_cast<double>(n);
  const double q = model->q();
  const double delta = delta_exponent(beta);
  const auto poly = build_P0(*model);
  const double L0 = find_edge(poly, 0.0);
  const double edge_scale = std::pow(nd, -0.5 - delta) / q;
  const bool counting = !cfg.intervals.empty();

  st.columns = {"Z"};
  for (std::size_t k = 0; k < cfg.intervals.size(); ++k) {
    st.columns.push_back("rho_" + std::to_string(k));
    st.columns.push_back("varrho_" + std::to_string(k));
  }
  if (cfg.edge) st.columns.insert(st.columns.end(), {"mu_N", "edge_excess"});

  auto rows = parallel_map(cfg.M, worker_count(cfg, opt), [&](std::int64_t k) {
    const auto s = sample(model, sample_seed(cfg.master_seed, 0, k));
    const double z = compute_Z(s);
    std::vector<double> r{z};
    if (counting) {
      const auto spec = full_spectrum(s, MatrixView::centred);
      const SpectralMeasure measure(poly, z);
      for (const auto& [lo, hi] : cfg.intervals) {
        const auto first = std::lower_bound(spec.eigenvalues.begin(), spec.eigenvalues.end(), lo);
        const auto last = std::upper_bound(spec.eigenvalues.begin(), spec.eigenvalues.end(), hi);
        r.push_back(static_cast<double>(last - first) / nd);
        r.push_back(measure.cdf(hi) - measure.cdf(lo));
      }
    }
    if (cfg.edge) {
      const double mu = extreme_eigs(s, 1, Side::top, MatrixView::centred).eigenvalues[0];
      r.push_back(mu);
      r.push_back(std::max(0.0, mu - L0 - z));
    }
    return r;
  });
  collect(st, rows, cfg.master_seed, 0);

  const auto z = column(st, 0);
  const double scale = opt.gate_scale;
  st.summary = {{"N", n}, {"q", q}, {"beta", beta}, {"delta", delta}, {"L0", L0}, {"var_Z", variance(z)}};
  const double zmin = *std::min_element(z.begin(), z.end());
  const double upper = L0 + zmin - 2.0 * edge_scale;
  for (std::size_t k = 0; k < cfg.intervals.size(); ++k) {
    const auto [lo, hi] = cfg.intervals[k];
    const auto rho = column(st, 1 + 2 * k);
    const auto varrho = column(st, 2 + 2 * k);
    double max_dev = 0.0;
    for (std::size_t j = 0; j < rho.size(); ++j) max_dev = std::max(max_dev, std::abs(rho[j] - varrho[j]));
    const double bound = 1.0 / nd + std::sqrt((hi - lo) / (nd * q * q * q));
    const std::string key = std::to_string(k);
    st.summary["intervals"][key] = {{"lo", lo},
                                    {"hi", hi},
                                    {"mean_rho", mean(rho)},
                                    {"mean_varrho", mean(varrho)},
                                    {"max_deviation", max_dev},
                                    {"bound", bound}};
    if (lo < -0.5 || hi > upper) {
      char buf[200];
      std::snprintf(buf, sizeof buf,
                    "interval %zu [%.6g, %.6g] leaves the range [-1/2, L0 + Z - 2 N^(-1/2-delta)/q] = [-0.5, %.6g]", k,
                    lo, hi, upper);
      st.warnings.emplace_back(buf);
    }
    add_gate(st, "counting@I" + key, max_dev / bound, -kInf, threshold(cfg, "count_prefactor", scale));
  }
  if (cfg.edge) {
    const std::size_t c = st.columns.size() - 1;
    const auto excess = column(st, c);
    const auto mu = column(st, c - 1);
    const double level = threshold(cfg, "edge_quantile");
    const double qv = quantile(excess, level);
    const double slack = std::pow(nd, threshold(cfg, "epsilon0"));
    std::vector<double> normalized = scaled(excess, 1.0 / edge_scale);
    st.summary["edge"] = {{"quantile_level", level},
                          {"excess_quantile", qv},
                          {"edge_scale", edge_scale},
                          {"slack", slack},
                          {"mean_mu_N", mean(mu)},
                          {"normalized_quantile", qv / edge_scale}};
    add_gate(st, "edge_excess", qv / (edge_scale * slack), -kInf, threshold(cfg, "edge_prefactor", scale));
    add_histogram(st, "edge_excess_normalized", normalized);
  }
  return st;
}

EnsembleStats run_p_smallness(const ExperimentConfig& cfg, const RunOptions& opt) {
  auto st = start(cfg, "p-small");
  require_samples(cfg, 30, "run_p_smallness");
  if (cfg.z_probes.empty()) throw ConfigError("config: p-small needs probes.z");
  const std::vector<std::int64_t> ladder = cfg.N_ladder.empty() ? std::vector<std::int64_t>{cfg.model.N} : cfg.N_ladder;
  for (auto n : ladder) {
    const double eta_min = std::pow(static_cast<double>(n), -1.0 + cfg.domain_c);
    for (const auto& z : cfg.z_probes) {
      if (std::abs(z.real()) > 10.0 || z.imag() < eta_min || z.imag() > 10.0) {
        char buf[200];
        std::snprintf(buf, sizeof buf,
                      "config: probe z = %.6g%+.6gi lies outside the spectral domain at N = %lld "
                      "(|Re z| <= 10, %.4g <= Im z <= 10)",
                      z.real(), z.imag(), static_cast<long long>(n), eta_min);
        throw ConfigError(buf);
      }
    }
  }
  const bool built = cfg.polynomial == "built";
  const std::size_t nz = cfg.z_probes.size();
  st.columns = {"N", "Z"};
  for (std::size_t k = 0; k < nz; ++k) {
    const std::string key = std::to_string(k);
    st.columns.insert(st.columns.end(), {"re_P_" + key, "im_P_" + key, "Gamma_" + key});
  }
  const double scale = opt.gate_scale;
  std::vector<std::vector<double>> t(nz);
  std::vector<std::vector<double>> t_se(nz);
  for (std::size_t pos = 0; pos < ladder.size(); ++pos) {
    const std::int64_t n = ladder[pos];
    auto model = std::make_shared<const CumulantModel>(make_model(cfg.model, n));
    if (pos == 0) regime_warning(st, model->beta());
    const auto poly = built ? build_P0(*model) : make_polynomial(model->beta(), model->q(), {1.0});
    const std::size_t row0 = st.rows.size();
    auto rows = parallel_map(cfg.M, worker_count(cfg, opt), [&](std::int64_t i) {
      const auto s = sample(model, sample_seed(cfg.master_seed, pos, i));
      const auto spec = full_spectrum(s, MatrixView::centred);
      std::vector<double> r{static_cast<double>(n), compute_Z(s)};
      for (const auto& z : cfg.z_probes) {
        const auto g = stieltjes(spec, z);
        const cplx p = poly.evaluate(z, g.ulG);
        r.insert(r.end(), {p.real(), p.imag(), g.Gamma});
      }
      return r;
    });
    collect(st, rows, cfg.master_seed, pos);
    const std::string nkey = std::to_string(n);
    st.summary["per_N"][nkey]["a"] = poly.a;
    for (std::size_t k = 0; k < nz; ++k) {
      std::vector<double> re;
      std::vector<double> im;
      std::vector<double> gam;
      for (std::size_t j = row0; j < st.rows.size(); ++j) {
        re.push_back(st.rows[j][2 + 3 * k]);
        im.push_back(st.rows[j][3 + 3 * k]);
        gam.push_back(st.rows[j][4 + 3 * k]);
      }
      const double abs_mean = std::abs(cplx(mean(re), mean(im)));
      const double spread = std::sqrt(variance(re) + variance(im));
      const double floor = mean(gam) + 1.0 / static_cast<double>(n);
      const double se = spread / std::sqrt(static_cast<double>(re.size()));
      t[k].push_back(abs_mean / floor);
      t_se[k].push_back(se / floor);
      const std::string key = std::to_string(k);
      st.summary["per_N"][nkey]["probes"][key] = {{"z", {cfg.z_probes[k].real(), cfg.z_probes[k].imag()}},
                                                  {"abs_mean_P", abs_mean},
                                                  {"mean_re_P", mean(re)},
                                                  {"mean_im_P", mean(im)},
                                                  {"mean_Gamma", mean(gam)},
                                                  {"spread", spread},
                                                  {"normalized_mean", abs_mean / floor},
                                                  {"normalized_se", se / floor}};
      add_gate(st, "mean_P@N=" + nkey + ",z" + key, abs_mean / floor, -kInf,
               threshold(cfg, "bound_prefactor", scale));
      if (built) {
        add_gate(st, "spread_ratio@N=" + nkey + ",z" + key, abs_mean > 0.0 ? spread / abs_mean : kInf,
                 threshold(cfg, "spread_ratio_min", scale), kInf);
      }
      st.plot.push_back({"normalized_mean:z" + key, static_cast<double>(n), abs_mean / floor});
    }
  }
  for (std::size_t k = 0; k < nz; ++k) {
    for (std::size_t j = 0; j + 1 < t[k].size(); ++j) {
      const double allow = threshold(cfg, "trend_sigmas", scale) * std::hypot(t_se[k][j], t_se[k][j + 1]);
      add_gate(st, "trend@N=" + std::to_string(ladder[j + 1]) + ",z" + std::to_string(k), t[k][j + 1] - t[k][j],
               -kInf, allow);
    }
  }
  return st;
}

std::vector<std::string> validate_config(const ExperimentConfig& cfg) {
  std::vector<std::string> warnings;
  const auto& names = experiment_names();
  if (std::find(names.begin(), names.end(), cfg.experiment) == names.end()) {
    throw ConfigError("config: unknown experiment '" + cfg.experiment + "'");
  }
  const std::int64_t minimum = cfg.experiment == "z-clt" ? 1000 : cfg.experiment == "rigidity" ? 1 : 30;
  if (cfg.M < minimum) {
    throw ConfigError("config: run.M = " + std::to_string(cfg.M) + " is below the minimum " + std::to_string(minimum) +
                      " for '" + cfg.experiment + "'");
  }
  const auto model = make_model(cfg.model);
  if (model.beta() >= 1.0 / 6.0) {
    warnings.push_back("beta = " + std::to_string(model.beta()) + " is outside the fluctuation regime beta < 1/6");
  }
  const std::int64_t n = cfg.model.N;
  if (cfg.experiment == "bulk" || cfg.experiment == "joint") {
    resolve_bulk_indices(cfg.indices, n, "probes.indices");
    for (const auto& e : cfg.centre_indices) resolve_checked(e, n, "probes.centre_indices");
    if (cfg.indices.empty() && cfg.centre_indices.empty()) throw ConfigError("config: probes.indices is empty");
  } else {
    for (const auto& e : cfg.indices) resolve_checked(e, n, "probes.indices");
  }
  if (cfg.experiment == "rigidity" && cfg.intervals.empty() && !cfg.edge) {
    throw ConfigError("config: rigidity needs probes.intervals or probes.edge = true");
  }
  if (cfg.experiment == "p-small") {
    if (cfg.z_probes.empty()) throw ConfigError("config: p-small needs probes.z");
    const std::vector<std::int64_t> ladder = cfg.N_ladder.empty() ? std::vector<std::int64_t>{n} : cfg.N_ladder;
    for (auto m : ladder) {
      const double eta_min = std::pow(static_cast<double>(m), -1.0 + cfg.domain_c);
      for (const auto& z : cfg.z_probes) {
        if (std::abs(z.real()) > 10.0 || z.imag() < eta_min || z.imag() > 10.0) {
          throw ConfigError("config: probe outside the spectral domain at N = " + std::to_string(m));
        }
      }
    }
  }
  if (cfg.experiment == "rescale" && cfg.model.kind != EnsembleKind::erdos_renyi) {
    throw ConfigError("config: rescale requires kind = \"er\"");
  }
  return warnings;
}

EnsembleStats run_experiment(const ExperimentConfig& cfg, const RunOptions& opt) {
  if (cfg.experiment == "z-clt") return run_z_clt(cfg, opt);
  if (cfg.experiment == "edge") return run_edge_fluctuation(cfg, opt);
  if (cfg.experiment == "bulk") return run_bulk_fluctuation(cfg, opt);
  if (cfg.experiment == "rescale") return run_rescaling(cfg, opt);
  if (cfg.experiment == "joint") return run_joint(cfg, opt);
  if (cfg.experiment == "rigidity") return run_rigidity(cfg, opt);
  if (cfg.experiment == "p-small") return run_p_smallness(cfg, opt);
  throw ConfigError("unknown experiment '" + cfg.experiment + "'");
}

namespace {

nlohmann::json bound_json(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

void write_double(std::ostream& out, double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  out << buf;
}

}  // namespace

nlohmann::json stats_json(const EnsembleStats& stats, const std::string& digest) {
  nlohmann::json gates = nlohmann::json::array();
  for (const auto& g : stats.gates) {
    gates.push_back({{"name", g.name}, {"value", g.value}, {"lo", bound_json(g.lo)}, {"hi", bound_json(g.hi)},
                     {"pass", g.pass}});
  }
  return {{"experiment", stats.experiment}, {"digest", digest},         {"samples", stats.rows.size()},
          {"summary", stats.summary},       {"gates", gates},           {"warnings", stats.warnings},
          {"pass", stats.passed()}};
}

void write_outputs(const EnsembleStats& stats, const std::filesystem::path& dir, const std::string& digest) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "records.csv", std::ios::binary);
    out << "# digest: " << digest << "\n";
    out << "index,seed";
    for (const auto& c : stats.columns) out << ',' << c;
    out << '\n';
    for (std::size_t i = 0; i < stats.rows.size(); ++i) {
      out << i << ',' << stats.seeds[i];
      for (double v : stats.rows[i]) {
        out << ',';
        write_double(out, v);
      }
      out << '\n';
    }
  }
  {
    std::ofstream out(dir / "stats.json", std::ios::binary);
    out << stats_json(stats, digest).dump(2) << '\n';
  }
  {
    std::ofstream out(dir / "plotdata.csv", std::ios::binary);
    out << "# digest: " << digest << "\n";
    out << "series,x,y\n";
    for (const auto& row : stats.plot) {
      out << row.series << ',';
      write_double(out, row.x);
      out << ',';
      write_double(out, row.y);
      out << '\n';
    }
  }
}

}  // namespace sparse_lab
