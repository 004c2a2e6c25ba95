#include "sparse_lab/ensemble.hpp"

#include "sparse_lab/errors.hpp"
#include "sparse_lab/random.hpp"
#include "sparse_lab/rational.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <ostream>

namespace sparse_lab {

namespace {

constexpr int kMaxCumulantOrder = 64;

int default_k_max(double beta) {
  if (beta < 1.0 / 30.0) return kMaxCumulantOrder;
  return std::min(kMaxCumulantOrder, 2 * ceil_inverse_beta(beta) + 4);
}

void check_dimension(std::int64_t n) {
  if (n < 2) throw DomainError("matrix dimension must be at least 2");
  if (n > std::numeric_limits<std::int32_t>::max()) throw SizeError("matrix dimension exceeds int32 range");
}

}  // namespace

std::string_view to_string(EnsembleKind kind) {
  switch (kind) {
    case EnsembleKind::erdos_renyi: return "erdos_renyi";
    case EnsembleKind::sparse_rademacher: return "sparse_rademacher";
    case EnsembleKind::custom: return "custom";
  }
  return "custom";
}

EnsembleKind parse_ensemble_kind(std::string_view name) {
  if (name == "erdos_renyi" || name == "er") return EnsembleKind::erdos_renyi;
  if (name == "sparse_rademacher" || name == "rademacher") return EnsembleKind::sparse_rademacher;
  if (name == "custom") return EnsembleKind::custom;
  throw ConfigError("unknown ensemble kind '" + std::string(name) + "'");
}

int ceil_inverse_beta(double beta) {
  if (!(beta > 0.0)) throw DomainError("beta must be positive");
  return static_cast<int>(std::ceil(1.0 / beta - 1e-9));
}

double CumulantModel::kappa(int k) const {
  if (k < 1 || k > k_max()) throw DomainError("cumulant order out of range");
  return kappas_[static_cast<std::size_t>(k)];
}

double CumulantModel::diag_kappa(int k) const {
  if (k < 1 || k > k_max()) throw DomainError("cumulant order out of range");
  return diag_kappas_[static_cast<std::size_t>(k)];
}

double CumulantModel::kappa_bound(int k) const {
  if (k < 1 || k > k_max()) throw DomainError("cumulant order out of range");
  return kappa_bounds_[static_cast<std::size_t>(k)];
}

double CumulantModel::cumulant(int k) const {
  return kappa(k) / (static_cast<double>(n_) * std::pow(q_, k - 2));
}

double CumulantModel::er_scale() const {
  if (kind_ != EnsembleKind::erdos_renyi) throw UnsupportedError("er_scale: not an Erdős–Rényi model");
  return std::sqrt(static_cast<double>(n_) * p_ * (1.0 - p_));
}

nlohmann::json CumulantModel::descriptor() const {
  nlohmann::json j;
  j["kind"] = std::string(to_string(kind_));
  j["N"] = n_;
  switch (kind_) {
    case EnsembleKind::erdos_renyi: j["p"] = p_; break;
    case EnsembleKind::sparse_rademacher: j["q"] = q_; break;
    case EnsembleKind::custom: {
      j["beta"] = beta_;
      std::vector<double> ks(kappas_.begin() + 2, kappas_.end());
      while (ks.size() > 1 && ks.back() == 0.0) ks.pop_back();
      j["kappas"] = ks;
      break;
    }
  }
  j["loops"] = loops_;
  j["k_max"] = k_max();
  j["seed_policy"] = "splitmix64(splitmix64(master) ^ index * 0xD1B54A32D192ED03)";
  return j;
}

CumulantModel make_er_model(std::int64_t n, double p, ModelOptions options) {
  check_dimension(n);
  if (!(p > 0.0 && p < 1.0)) throw DomainError("edge probability must lie in (0, 1)");
  const double np = static_cast<double>(n) * p;
  if (np < 1.0) throw RegimeError("Np < 1: outside the sparse regime");

  CumulantModel m;
  m.kind_ = EnsembleKind::erdos_renyi;
  m.n_ = n;
  m.p_ = p;
  m.q_ = std::sqrt(np);
  m.beta_ = std::log(m.q_) / std::log(static_cast<double>(n));
  m.f_ = std::sqrt(np / (1.0 - p));
  m.loops_ = options.loops;
  const int kmax = options.k_max > 0 ? options.k_max : default_k_max(m.beta_);

  // centred Bernoulli X = a - p: E X^k = p (1-p)^k + (1-p) (-p)^k
  const Rational pr = rational_from_double(p);
  const Rational one_minus = Rational(1) - pr;
  std::vector<Rational> moments(static_cast<std::size_t>(kmax) + 1, Rational(0));
  Rational up = 1, dn = 1;
  for (int k = 1; k <= kmax; ++k) {
    up *= one_minus;
    dn *= -pr;
    moments[static_cast<std::size_t>(k)] = pr * up + one_minus * dn;
  }
  const auto c = cumulants_from_moments(moments);

  // kappa_k = c_k / (p (1-p)^(k/2)); the N-dependence cancels
  m.kappas_.assign(static_cast<std::size_t>(kmax) + 1, 0.0);
  m.kappas_[2] = 1.0;
  for (int k = 3; k <= kmax; ++k) {
    const Rational ratio = c[static_cast<std::size_t>(k)] / pr;
    if (k % 2 == 0) {
      Rational denom = 1;
      for (int t = 0; t < k / 2; ++t) denom *= one_minus;
      m.kappas_[static_cast<std::size_t>(k)] = to_double(ratio / denom);
    } else {
      m.kappas_[static_cast<std::size_t>(k)] = to_double(ratio) / std::pow(1.0 - p, 0.5 * k);
    }
  }
  m.kappa_bounds_.resize(m.kappas_.size());
  std::transform(m.kappas_.begin(), m.kappas_.end(), m.kappa_bounds_.begin(),
                 [](double v) { return std::abs(v); });

  const double s = m.er_scale();
  const double s4 = s * s * s * s;
  m.m4_off_ = p * (1.0 - p) * (std::pow(1.0 - p, 3) + p * p * p) / s4;
  if (m.loops_) {
    m.diag_kappas_ = m.kappas_;
    m.m4_diag_ = m.m4_off_;
  } else {
    // deterministic diagonal -p/s
    m.diag_kappas_.assign(m.kappas_.size(), 0.0);
    m.diag_mean_ = -p / s;
    m.m4_diag_ = std::pow(p / s, 4);
  }
  return m;
}

CumulantModel make_rademacher_model(std::int64_t n, double q, ModelOptions options) {
  check_dimension(n);
  const double nn = static_cast<double>(n);
  if (!(q >= 1.0) || q * q > nn * (1.0 + 1e-12)) throw DomainError("q must satisfy 1 <= q <= sqrt(N)");

  CumulantModel m;
  m.kind_ = EnsembleKind::sparse_rademacher;
  m.n_ = n;
  m.q_ = q;
  m.p_ = std::numeric_limits<double>::quiet_NaN();
  m.beta_ = std::log(q) / std::log(nn);
  m.f_ = 0.0;
  m.loops_ = options.loops;
  const int kmax = options.k_max > 0 ? options.k_max : default_k_max(m.beta_);

  // u = q X is +-1 with probability t/2 each, t = q^2/N; kappa_k = c_k(u) / t
  const Rational qr = rational_from_double(q);
  Rational t = qr * qr / Rational(n);
  if (t > 1) t = 1;
  std::vector<Rational> moments(static_cast<std::size_t>(kmax) + 1, Rational(0));
  for (int k = 2; k <= kmax; k += 2) moments[static_cast<std::size_t>(k)] = t;
  const auto c = cumulants_from_moments(moments);
  m.kappas_.assign(static_cast<std::size_t>(kmax) + 1, 0.0);
  for (int k = 2; k <= kmax; ++k) m.kappas_[static_cast<std::size_t>(k)] = to_double(c[static_cast<std::size_t>(k)] / t);
  m.kappa_bounds_.resize(m.kappas_.size());
  std::transform(m.kappas_.begin(), m.kappas_.end(), m.kappa_bounds_.begin(),
                 [](double v) { return std::abs(v); });

  m.m4_off_ = 1.0 / (nn * q * q);
  if (m.loops_) {
    m.diag_kappas_ = m.kappas_;
    m.m4_diag_ = m.m4_off_;
  } else {
    m.diag_kappas_.assign(m.kappas_.size(), 0.0);
  }
  return m;
}

CumulantModel make_custom_model(std::int64_t n, double beta, std::vector<double> kappas_from_2) {
  check_dimension(n);
  if (!(beta > 0.0 && beta <= 0.5)) throw DomainError("beta must lie in (0, 1/2]");
  if (kappas_from_2.empty() || kappas_from_2.front() != 1.0) throw DomainError("kappa_2 must equal 1");

  CumulantModel m;
  m.kind_ = EnsembleKind::custom;
  m.n_ = n;
  m.beta_ = beta;
  m.q_ = std::pow(static_cast<double>(n), beta);
  m.p_ = std::numeric_limits<double>::quiet_NaN();
  m.f_ = 0.0;
  m.loops_ = true;
  const int kmax = std::max(default_k_max(beta), static_cast<int>(kappas_from_2.size()) + 1);
  m.kappas_.assign(static_cast<std::size_t>(kmax) + 1, 0.0);
  std::copy(kappas_from_2.begin(), kappas_from_2.end(), m.kappas_.begin() + 2);
  m.kappa_bounds_.resize(m.kappas_.size());
  std::transform(m.kappas_.begin(), m.kappas_.end(), m.kappa_bounds_.begin(),
                 [](double v) { return std::abs(v); });
  m.diag_kappas_ = m.kappas_;
  const double nn = static_cast<double>(n);
  m.m4_off_ = m.kappas_[4] / (nn * m.q_ * m.q_) + 3.0 / (nn * nn);
  m.m4_diag_ = m.m4_off_;
  return m;
}

double er_p_for_beta(std::int64_t n, double beta) {
  if (!(beta > 0.0 && beta <= 0.5)) throw DomainError("beta must lie in (0, 1/2]");
  return std::pow(static_cast<double>(n), 2.0 * beta - 1.0);
}

CumulantModel model_from_descriptor(const nlohmann::json& d) {
  try {
    const auto kind = parse_ensemble_kind(d.at("kind").get<std::string>());
    const auto n = d.at("N").get<std::int64_t>();
    ModelOptions opts;
    opts.loops = d.value("loops", true);
    opts.k_max = d.value("k_max", 0);
    switch (kind) {
      case EnsembleKind::erdos_renyi: return make_er_model(n, d.at("p").get<double>(), opts);
      case EnsembleKind::sparse_rademacher: return make_rademacher_model(n, d.at("q").get<double>(), opts);
      case EnsembleKind::custom:
        return make_custom_model(n, d.at("beta").get<double>(), d.at("kappas").get<std::vector<double>>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model descriptor: ") + e.what());
  }
  throw ConfigError("model descriptor: unreachable");
}

// ---------------------------------------------------------------------------

std::int64_t dense_cap() {
  if (const char* env = std::getenv("SPARSE_LAB_DENSE_CAP")) {
    char* end = nullptr;
    const long long v = std::strtoll(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return v;
  }
  return 4096;
}

MatrixSample::MatrixSample(std::shared_ptr<const CumulantModel> model, std::uint64_t seed,
                           std::int64_t n, std::vector<Entry> entries, double background,
                           double shift, bool centred)
    : model_(std::move(model)),
      seed_(seed),
      n_(n),
      entries_(std::move(entries)),
      background_(background),
      shift_(shift),
      centred_(centred) {
  if (n_ < 1) throw DomainError("matrix dimension must be positive");
  for (const auto& e : entries_) {
    if (e.row < 0 || e.row > e.col || e.col >= n_) throw DomainError("entries must be upper-triangular and in range");
  }
  if (!std::is_sorted(entries_.begin(), entries_.end(), [](const Entry& a, const Entry& b) {
        return a.row != b.row ? a.row < b.row : a.col < b.col;
      })) {
    std::sort(entries_.begin(), entries_.end(), [](const Entry& a, const Entry& b) {
      return a.row != b.row ? a.row < b.row : a.col < b.col;
    });
  }
  // background and shift/N cancel analytically for ER; drop the rounding residue
  const double per_entry_shift = shift_ / static_cast<double>(n_);
  shifted_background_ = background_ + per_entry_shift;
  if (std::abs(shifted_background_) <= 8 * std::numeric_limits<double>::epsilon() *
                                           std::max(std::abs(background_), std::abs(per_entry_shift))) {
    shifted_background_ = 0.0;
  }
  if (centred_) cached_z_ = trace_of_square() / static_cast<double>(n_) - 1.0;
}

MatrixSample MatrixSample::from_dense(const Eigen::MatrixXd& h, double shift) {
  if (h.rows() != h.cols()) throw DomainError("from_dense: matrix must be square");
  if (h != h.transpose()) throw DomainError("from_dense: matrix must be exactly symmetric");
  std::vector<Entry> entries;
  for (Eigen::Index i = 0; i < h.rows(); ++i) {
    for (Eigen::Index j = i; j < h.cols(); ++j) {
      if (h(i, j) != 0.0) {
        entries.push_back({static_cast<std::int32_t>(i), static_cast<std::int32_t>(j), h(i, j)});
      }
    }
  }
  return MatrixSample(nullptr, 0, h.rows(), std::move(entries), 0.0, shift, true);
}

double MatrixSample::entry(std::int64_t i, std::int64_t j) const {
  if (i < 0 || j < 0 || i >= n_ || j >= n_) throw DomainError("entry index out of range");
  if (i > j) std::swap(i, j);
  const auto it = std::lower_bound(entries_.begin(), entries_.end(), std::pair{i, j},
                                   [](const Entry& e, const std::pair<std::int64_t, std::int64_t>& key) {
                                     return e.row != key.first ? e.row < key.first : e.col < key.second;
                                   });
  if (it != entries_.end() && it->row == i && it->col == j) return background_ + it->value;
  return background_;
}

void MatrixSample::apply(MatrixView view, std::span<const double> x, std::span<double> y) const {
  if (static_cast<std::int64_t>(x.size()) != n_ || static_cast<std::int64_t>(y.size()) != n_) {
    throw DomainError("apply: vector length mismatch");
  }
  const double c = view == MatrixView::shifted ? shifted_background_ : background_;
  double sum = 0.0;
  if (c != 0.0) {
    for (double v : x) sum += v;
  }
  std::fill(y.begin(), y.end(), c * sum);
  for (const auto& e : entries_) {
    y[static_cast<std::size_t>(e.row)] += e.value * x[static_cast<std::size_t>(e.col)];
    if (e.row != e.col) y[static_cast<std::size_t>(e.col)] += e.value * x[static_cast<std::size_t>(e.row)];
  }
}

Eigen::MatrixXd MatrixSample::dense(MatrixView view) const {
  if (n_ > dense_cap()) {
    throw SizeError("N = " + std::to_string(n_) + " exceeds the dense cap " + std::to_string(dense_cap()) +
                    "; use extreme_eigs");
  }
  const double c = view == MatrixView::shifted ? shifted_background_ : background_;
  Eigen::MatrixXd m = Eigen::MatrixXd::Constant(n_, n_, c);
  for (const auto& e : entries_) {
    m(e.row, e.col) += e.value;
    if (e.row != e.col) m(e.col, e.row) += e.value;
  }
  return m;
}

double MatrixSample::trace_of_square() const {
  // sum over all N^2 positions: background^2 off the pattern, (b + v)^2 on it
  const double nn = static_cast<double>(n_);
  double stored_positions = 0.0;
  double acc = 0.0;
  for (const auto& e : entries_) {
    const double h = background_ + e.value;
    const double mult = e.row == e.col ? 1.0 : 2.0;
    acc += mult * h * h;
    stored_positions += mult;
  }
  return acc + (nn * nn - stored_positions) * background_ * background_;
}

// ---------------------------------------------------------------------------

namespace {

// Visits the upper-triangular positions selected with probability `prob` in
// (row, col) order using geometric skips.
template <class Visit>
void sample_pattern(std::int64_t n, bool loops, double prob, Rng& rng, Visit&& visit) {
  if (prob <= 0.0) return;
  const double log1m = prob >= 1.0 ? -INFINITY : std::log1p(-prob);
  const std::int64_t offset = loops ? 0 : 1;
  std::int64_t row = 0;
  std::uint64_t pos = 0;  // position inside the current row
  for (;;) {
    const std::uint64_t skip = rng.geometric_skip(log1m);
    if (skip == UINT64_MAX) return;
    pos += skip;
    for (;;) {
      const auto len = static_cast<std::uint64_t>(n - row - offset);
      if (pos < len) break;
      pos -= len;
      if (++row >= n - offset) return;
    }
    const std::int64_t col = row + offset + static_cast<std::int64_t>(pos);
    visit(row, col);
    ++pos;
  }
}

}  // namespace

MatrixSample sample(std::shared_ptr<const CumulantModel> model, std::uint64_t seed) {
  if (!model) throw DomainError("sample: null model");
  const auto n = model->N();
  Rng rng(seed);
  std::vector<Entry> entries;
  switch (model->kind()) {
    case EnsembleKind::erdos_renyi: {
      const double p = model->p();
      const double s = model->er_scale();
      entries.reserve(static_cast<std::size_t>(0.5 * static_cast<double>(n) * static_cast<double>(n) * p * 1.1) + 16);
      const double v = 1.0 / s;
      sample_pattern(n, model->loops(), p, rng, [&](std::int64_t r, std::int64_t c) {
        entries.push_back({static_cast<std::int32_t>(r), static_cast<std::int32_t>(c), v});
      });
      const double shift = model->f();
      return MatrixSample(std::move(model), seed, n, std::move(entries), -p / s, shift, true);
    }
    case EnsembleKind::sparse_rademacher: {
      const double q = model->q();
      const double t = std::min(1.0, q * q / static_cast<double>(n));
      const double v = 1.0 / q;
      entries.reserve(static_cast<std::size_t>(0.5 * static_cast<double>(n) * static_cast<double>(n) * t * 1.1) + 16);
      sample_pattern(n, model->loops(), t, rng, [&](std::int64_t r, std::int64_t c) {
        entries.push_back({static_cast<std::int32_t>(r), static_cast<std::int32_t>(c), rng.coin() ? v : -v});
      });
      return MatrixSample(std::move(model), seed, n, std::move(entries), 0.0, 0.0, true);
    }
    case EnsembleKind::custom: break;
  }
  throw UnsupportedError("custom cumulant models cannot be sampled");
}

MatrixSample sample(const CumulantModel& model, std::uint64_t seed) {
  return sample(std::make_shared<const CumulantModel>(model), seed);
}

MatrixSample er_sample_from_edges(std::shared_ptr<const CumulantModel> model,
                                  std::vector<std::pair<std::int64_t, std::int64_t>> edges) {
  if (!model || model->kind() != EnsembleKind::erdos_renyi) throw UnsupportedError("er_sample_from_edges: ER model required");
  const auto n = model->N();
  const double s = model->er_scale();
  std::vector<Entry> entries;
  entries.reserve(edges.size());
  for (auto [i, j] : edges) {
    if (i < 0 || j < 0 || i >= n || j >= n) throw DomainError("edge index out of range");
    if (i > j) std::swap(i, j);
    entries.push_back({static_cast<std::int32_t>(i), static_cast<std::int32_t>(j), 1.0 / s});
  }
  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    return a.row != b.row ? a.row < b.row : a.col < b.col;
  });
  for (std::size_t k = 1; k < entries.size(); ++k) {
    if (entries[k].row == entries[k - 1].row && entries[k].col == entries[k - 1].col) {
      throw DomainError("repeated edge");
    }
  }
  const double shift = model->f();
  const double p = model->p();
  return MatrixSample(std::move(model), 0, n, std::move(entries), -p / s, shift, true);
}

double compute_Z(const MatrixSample& sample) {
  if (const auto z = sample.cached_Z()) return *z;
  if (!sample.centred()) throw PreconditionError("compute_Z: sample does not hold a centred matrix");
  return sample.trace_of_square() / static_cast<double>(sample.N()) - 1.0;
}

SigmaValue compute_Sigma(const CumulantModel& model) {
  const double n = static_cast<double>(model.N());
  const double sum = n * (n - 1.0) * model.offdiag_fourth_moment() + n * model.diag_fourth_moment();
  return {std::sqrt(sum) / n, 1.0 / (std::sqrt(n) * model.q())};
}

namespace {

double adjacency_degree_sum(const MatrixSample& sample) {
  double total = 0.0;
  for (const auto& e : sample.entries()) total += e.row == e.col ? 1.0 : 2.0;
  return total;
}

}  // namespace

SampleStats sample_stats(const MatrixSample& sample) {
  SampleStats st;
  st.Z = compute_Z(sample);
  const auto* m = sample.model();
  if (m != nullptr && m->kind() == EnsembleKind::erdos_renyi) {
    st.D = adjacency_degree_sum(sample) / static_cast<double>(sample.N());
    st.d = static_cast<double>(sample.N()) * m->p();
  } else {
    st.D = std::numeric_limits<double>::quiet_NaN();
    st.d = std::numeric_limits<double>::quiet_NaN();
  }
  return st;
}

MatrixSample rescaled_adjacency(const MatrixSample& sample) {
  const auto* m = sample.model();
  if (m == nullptr || m->kind() != EnsembleKind::erdos_renyi || !sample.centred()) {
    throw UnsupportedError("rescaled_adjacency: requires a centred Erdős–Rényi sample");
  }
  const double d = adjacency_degree_sum(sample) / static_cast<double>(sample.N());
  if (d == 0.0) throw DegenerateError("rescaled_adjacency: empty graph");
  const double v = 1.0 / std::sqrt(d);
  std::vector<Entry> entries(sample.entries().begin(), sample.entries().end());
  for (auto& e : entries) e.value = v;
  return MatrixSample(sample.model_ptr(), sample.seed(), sample.N(), std::move(entries), 0.0, 0.0, false);
}

void write_matrix_market(const MatrixSample& sample, std::ostream& out) {
  char buf[128];
  out << "%%MatrixMarket matrix coordinate real symmetric\n";
  std::snprintf(buf, sizeof buf, "%% background %.17g\n", sample.background());
  out << buf;
  std::snprintf(buf, sizeof buf, "%% shift %.17g\n", sample.shift());
  out << buf;
  std::snprintf(buf, sizeof buf, "%% seed %" PRIu64 "\n", sample.seed());
  out << buf;
  out << sample.N() << ' ' << sample.N() << ' ' << sample.entries().size() << '\n';
  for (const auto& e : sample.entries()) {
    std::snprintf(buf, sizeof buf, "%d %d %.17g\n", e.col + 1, e.row + 1, e.value);
    out << buf;
  }
}

}  // namespace sparse_lab
