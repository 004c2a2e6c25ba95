#include "sparse_lab/formalcalc.hpp"

#include "sparse_lab/errors.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <tuple>

namespace sparse_lab {

namespace {

auto shape_key(const FormalMonomial& m) {
  return std::tie(m.factors, m.n_power, m.q_power, m.kappas, m.nu1);
}

bool shape_less(const FormalMonomial& a, const FormalMonomial& b) {
  if (a.sigma() != b.sigma()) return a.sigma() < b.sigma();
  if (a.n_power != b.n_power) return a.n_power < b.n_power;
  if (a.q_power != b.q_power) return a.q_power < b.q_power;
  if (a.factors != b.factors) return a.factors < b.factors;
  if (a.kappas != b.kappas) return a.kappas < b.kappas;
  return a.nu1 < b.nu1;
}

struct ShapeLess {
  bool operator()(const FormalMonomial& a, const FormalMonomial& b) const { return shape_less(a, b); }
};

std::vector<int> merge_kappas(const std::vector<int>& a, const std::vector<int>& b) {
  std::vector<int> out;
  out.reserve(a.size() + b.size());
  std::merge(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

Rational factorial(int k) {
  Rational f(1);
  for (int i = 2; i <= k; ++i) f *= i;
  return f;
}

}  // namespace

int FormalMonomial::nu2() const noexcept {
  return static_cast<int>(std::count_if(factors.begin(), factors.end(),
                                        [](const FormalFactor& f) { return !f.diagonal(); }));
}

FormalMonomial FormalMonomial::operator*(const FormalMonomial& other) const {
  FormalMonomial out = *this;
  out.coeff *= other.coeff;
  out.kappas = merge_kappas(kappas, other.kappas);
  out.nu1 = nu1 + other.nu1;
  out.n_power += other.n_power;
  out.q_power += other.q_power;
  for (const auto& f : other.factors) out.factors.emplace_back(f.x + nu1, f.y + nu1);
  std::sort(out.factors.begin(), out.factors.end());
  return out;
}

bool FormalMonomial::same_shape(const FormalMonomial& other) const noexcept {
  return shape_key(*this) == shape_key(other);
}

std::string FormalMonomial::to_string() const {
  std::ostringstream os;
  os << sparse_lab::to_string(coeff);
  for (int k : kappas) os << " k" << k;
  if (n_power != 0) os << " N^-" << n_power;
  if (q_power != 0) os << " q^-" << q_power;
  for (const auto& f : factors) os << " G" << f.x << "_" << f.y;
  return os.str();
}

FormalMonomial make_monomial(std::vector<FormalFactor> factors, Rational coeff) {
  FormalMonomial m;
  m.coeff = std::move(coeff);
  int top = -1;
  for (const auto& f : factors) top = std::max(top, f.y);
  m.nu1 = top + 1;
  std::sort(factors.begin(), factors.end());
  m.factors = std::move(factors);
  return m;
}

FormalMonomial canonicalize(const FormalMonomial& m) {
  std::vector<int> perm(m.nu1);
  std::iota(perm.begin(), perm.end(), 0);
  auto relabel = [&](const std::vector<int>& p) {
    std::vector<FormalFactor> out;
    out.reserve(m.factors.size());
    for (const auto& f : m.factors) out.emplace_back(p[f.x], p[f.y]);
    std::sort(out.begin(), out.end());
    return out;
  };
  FormalMonomial out = m;
  if (m.nu2() == 0) {
    // Diagonal monomials are determined by their exponent multiset.
    std::vector<int> exps(m.nu1, 0);
    for (const auto& f : m.factors) ++exps[f.x];
    std::vector<int> order(m.nu1);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return exps[a] > exps[b]; });
    for (int r = 0; r < m.nu1; ++r) perm[order[r]] = r;
    out.factors = relabel(perm);
    return out;
  }
  if (m.nu1 > 8) return out;
  auto best = relabel(perm);
  while (std::next_permutation(perm.begin(), perm.end())) {
    auto cand = relabel(perm);
    if (cand < best) best = std::move(cand);
  }
  out.factors = std::move(best);
  return out;
}

void TermSum::add(FormalMonomial m) {
  if (m.coeff == 0) return;
  auto it = std::lower_bound(terms.begin(), terms.end(), m, ShapeLess{});
  if (it != terms.end() && it->same_shape(m)) {
    it->coeff += m.coeff;
    if (it->coeff == 0) terms.erase(it);
    return;
  }
  terms.insert(it, std::move(m));
}

std::string TermSum::to_string() const {
  if (terms.empty()) return "0";
  std::ostringstream os;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    if (i) os << " + ";
    os << "(" << terms[i].to_string() << ")";
  }
  return os.str();
}

TermSum make_sum(std::vector<FormalMonomial> terms) {
  TermSum s;
  for (auto& t : terms) s.add(std::move(t));
  s.raw_term_count = s.terms.size();
  return s;
}

TermSum differentiate(const FormalMonomial& term, int i, int j, int k) {
  if (k < 0) throw DomainError("differentiate: negative order");
  if (k > kMaxFullDerivativeOrder)
    throw SizeError("differentiate: order " + std::to_string(k) + " exceeds the full-expansion guard of " +
                    std::to_string(kMaxFullDerivativeOrder));
  if (i < 0 || j < 0 || i >= term.nu1 || j >= term.nu1)
    throw DomainError("differentiate: index pair outside the monomial's alphabet");

  // Shape -> (coefficient, number of raw terms represented).
  std::map<FormalMonomial, std::pair<Rational, std::uint64_t>, ShapeLess> current;
  {
    FormalMonomial seed = term;
    seed.coeff = 1;
    current.emplace(seed, std::make_pair(term.coeff, std::uint64_t{1}));
  }
  const Rational half = (i == j) ? Rational(1, 2) : Rational(1);
  for (int step = 0; step < k; ++step) {
    std::map<FormalMonomial, std::pair<Rational, std::uint64_t>, ShapeLess> next;
    for (const auto& [shape, entry] : current) {
      const auto& [c, raw] = entry;
      for (std::size_t p = 0; p < shape.factors.size(); ++p) {
        const auto [a, b] = std::pair(shape.factors[p].x, shape.factors[p].y);
        for (int branch = 0; branch < 2; ++branch) {
          FormalMonomial t = shape;
          t.factors.erase(t.factors.begin() + static_cast<std::ptrdiff_t>(p));
          if (branch == 0) {
            t.factors.emplace_back(a, i);
            t.factors.emplace_back(j, b);
          } else {
            t.factors.emplace_back(a, j);
            t.factors.emplace_back(i, b);
          }
          std::sort(t.factors.begin(), t.factors.end());
          auto& slot = next[t];
          slot.first -= c * half;
          slot.second += raw;
        }
      }
    }
    current = std::move(next);
  }
  TermSum out;
  for (const auto& [shape, entry] : current) {
    out.raw_term_count += entry.second;
    FormalMonomial t = shape;
    t.coeff = entry.first;
    out.add(std::move(t));
  }
  return out;
}

DiagonalSplit diagonal_projection(const TermSum& sum, double beta) {
  DiagonalSplit split;
  for (const auto& t : sum.terms) {
    if (t.nu2() == 0) {
      split.diagonal.add(t);
    } else {
      if (std::isfinite(beta))
        split.dropped.discarded_bound = std::max(split.dropped.discarded_bound, t.nu1 - t.theta(beta));
      split.dropped.add(t);
    }
  }
  split.diagonal.raw_term_count = split.diagonal.terms.size();
  split.dropped.raw_term_count = split.dropped.terms.size();
  return split;
}

std::map<std::pair<int, int>, Rational> pair_diagonal_derivative(int a, int b, int c, int k) {
  if (a < 0 || b < 0 || c < 0 || k < 0) throw DomainError("pair_diagonal_derivative: negative exponent");
  if (k > kMaxPairDerivativeOrder) throw SizeError("pair_diagonal_derivative: order too large");
  using State = std::tuple<int, int, int>;
  std::map<State, Rational> cur{{State{a, b, c}, Rational(1)}};
  for (int step = 0; step < k; ++step) {
    const int remaining = k - step - 1;
    std::map<State, Rational> next;
    auto put = [&](int x, int y, int w, const Rational& v) {
      if (w > remaining) return;
      auto& slot = next[State{x, y, w}];
      slot += v;
    };
    for (const auto& [s, v] : cur) {
      const auto [x, y, w] = s;
      // dG_ii = -2 G_ii G_ij, dG_jj = -2 G_jj G_ij, dG_ij = -(G_ii G_jj + G_ij^2).
      if (x + y > 0) put(x, y, w + 1, v * (-2 * (x + y)));
      if (w > 0) {
        put(x + 1, y + 1, w - 1, v * (-w));
        put(x, y, w + 1, v * (-w));
      }
    }
    std::erase_if(next, [](const auto& kv) { return kv.second == 0; });
    cur = std::move(next);
  }
  std::map<std::pair<int, int>, Rational> out;
  for (const auto& [s, v] : cur)
    if (std::get<2>(s) == 0) out[{std::get<0>(s), std::get<1>(s)}] += v;
  return out;
}

namespace {

using ReducedKey = std::tuple<int, int, std::vector<int>>;  // ulG power, q power, kappas
using ReducedMap = std::map<ReducedKey, Rational>;

/// Diagonal coefficient of the single monomial produced by
/// d^k (G_ij G_ii^(e-1)) / dH_ij^k, i.e. of G_ii^(e+(k-1)/2) G_jj^((k+1)/2).
Rational replacement_coefficient(int e, int k) {
  const auto d = pair_diagonal_derivative(e - 1, 0, 1, k);
  const auto it = d.find({e + (k - 1) / 2, (k + 1) / 2});
  return it == d.end() ? Rational(0) : it->second;
}

class Averager {
 public:
  explicit Averager(AveragingTarget target) : target_(target) {}

  const ReducedMap& reduce(std::vector<int> parts, int budget) {
    std::sort(parts.begin(), parts.end(), std::greater<>());
    auto key = std::make_pair(parts, budget);
    if (auto it = memo_.find(key); it != memo_.end()) return it->second;

    ReducedMap out;
    const int sigma = std::accumulate(parts.begin(), parts.end(), 0);
    std::size_t t = parts.size();
    for (std::size_t idx = 0; idx < parts.size(); ++idx) {
      if (parts[idx] < 2) continue;
      if (t == parts.size() || (target_ == AveragingTarget::largest_exponent ? parts[idx] > parts[t]
                                                                            : parts[idx] < parts[t]))
        t = idx;
    }
    if (t == parts.size()) {
      out[ReducedKey{sigma, 0, {}}] = 1;
      return memo_.emplace(std::move(key), std::move(out)).first->second;
    }
    const int e = parts[t];

    auto accumulate = [&](std::vector<int> next, int next_budget, const Rational& c, int kappa_order, int qp) {
      const ReducedMap sub = reduce(std::move(next), next_budget);
      for (const auto& [k2, v] : sub) {
        auto kap = std::get<2>(k2);
        if (kappa_order > 0) kap.insert(std::upper_bound(kap.begin(), kap.end(), kappa_order), kappa_order);
        out[ReducedKey{std::get<0>(k2), std::get<1>(k2) + qp, std::move(kap)}] += c * v;
      }
    };

    {
      auto next = parts;
      next[t] = e - 1;
      next.push_back(1);
      accumulate(std::move(next), budget, Rational(1), 0, 0);
    }
    for (int k = 3; (k + 1) / 2 <= budget; k += 2) {
      const int l = (k + 1) / 2;
      const Rational kf = factorial(k);
      const Rational ca = -replacement_coefficient(e, k) / kf;
      const Rational cb = pair_coefficient(k) / kf;
      if (ca != 0) {
        auto next = parts;
        next[t] = e + (k - 1) / 2;
        next.push_back((k + 1) / 2);
        next.push_back(1);
        accumulate(std::move(next), budget - l, ca, k + 1, k - 1);
      }
      if (cb != 0) {
        auto next = parts;
        next.push_back((k + 1) / 2);
        next.push_back((k + 1) / 2);
        accumulate(std::move(next), budget - l, cb, k + 1, k - 1);
      }
    }
    std::erase_if(out, [](const auto& kv) { return kv.second == 0; });
    return memo_.emplace(std::move(key), std::move(out)).first->second;
  }

  /// Diagonal coefficient of d^k G_ij / dH_ij^k.
  Rational pair_coefficient(int k) {
    if (auto it = pair_cache_.find(k); it != pair_cache_.end()) return it->second;
    const auto d = pair_diagonal_derivative(0, 0, 1, k);
    const auto it = d.find({(k + 1) / 2, (k + 1) / 2});
    const Rational v = it == d.end() ? Rational(0) : it->second;
    pair_cache_.emplace(k, v);
    return v;
  }

 private:
  AveragingTarget target_;
  std::map<std::pair<std::vector<int>, int>, ReducedMap> memo_;
  std::map<int, Rational> pair_cache_;
};

ReducedExpansion reduce_with(Averager& av, const FormalMonomial& term, int r) {
  if (term.nu2() != 0) throw ClassError("averaging_reduce: monomial has off-diagonal factors");
  if (r < 1) throw DomainError("averaging_reduce: r must be at least 1");
  std::vector<int> exps(term.nu1, 0);
  for (const auto& f : term.factors) ++exps[f.x];
  std::vector<int> parts;
  for (int e : exps)
    if (e > 0) parts.push_back(e);

  ReducedExpansion out;
  out.n_exponent = term.nu1 - term.n_power;
  for (const auto& [key, v] : av.reduce(parts, r)) {
    ReducedTerm t;
    t.ulG_power = std::get<0>(key);
    t.q_power = std::get<1>(key) + term.q_power;
    t.kappas = merge_kappas(std::get<2>(key), term.kappas);
    t.coeff = v * term.coeff;
    out.terms.push_back(std::move(t));
  }
  return out;
}

}  // namespace

ReducedExpansion averaging_reduce(const FormalMonomial& term, int r, AveragingTarget target) {
  Averager av(target);
  return reduce_with(av, term, r);
}

double SelfConsistentPolynomial::x_coefficient(int two_l) const {
  if (two_l == 0) return 1.0;
  if (two_l % 2 != 0 || two_l < 0) return 0.0;
  const auto l = static_cast<std::size_t>(two_l / 2);
  if (l > a.size()) return 0.0;
  return a[l - 1] * std::pow(q, -2.0 * static_cast<double>(l - 1));
}

cplx SelfConsistentPolynomial::evaluate(cplx z, cplx x) const {
  const cplx x2 = x * x;
  cplx acc = 0.0;
  for (std::size_t l = a.size(); l >= 1; --l) acc = acc * x2 + a[l - 1] * std::pow(q, -2.0 * static_cast<double>(l - 1));
  return 1.0 + z * x + acc * x2;
}

SelfConsistentPolynomial make_polynomial(double beta, double q, std::vector<double> a) {
  if (!(beta > 0.0) || !(q >= 1.0)) throw DomainError("make_polynomial: need beta > 0 and q >= 1");
  if (a.empty()) a = {1.0};
  if (a.front() != 1.0) throw DomainError("make_polynomial: a_1 must be 1");
  while (a.size() > 1 && a.back() == 0.0) a.pop_back();
  SelfConsistentPolynomial p;
  p.beta = beta;
  p.q = q;
  p.degree = 2 * ceil_inverse_beta(beta);
  p.effective_degree = 2 * static_cast<int>(a.size());
  p.a_bound.reserve(a.size());
  for (double v : a) p.a_bound.push_back(std::abs(v));
  p.a = std::move(a);
  return p;
}

SelfConsistentPolynomial build_P0(const CumulantModel& model) {
  const double beta = model.beta();
  const int big_s = ceil_inverse_beta(beta);
  if (model.k_max() < 2 * big_s + 2)
    throw PreconditionError("build_P0: model stores cumulants up to order " + std::to_string(model.k_max()) +
                            ", need " + std::to_string(2 * big_s + 2));

  Averager av(AveragingTarget::largest_exponent);
  ReducedMap q0;
  q0[ReducedKey{2, 0, {}}] = 1;
  std::vector<FormalMonomial> intermediates;
  for (int s = 2; big_s - 2 * s + 2 >= 1; ++s) {
    const int r = big_s - 2 * s + 2;
    const int k = 2 * s - 1;
    const Rational c = av.pair_coefficient(k) / factorial(k);
    FormalMonomial t;
    t.coeff = c;
    t.kappas = {2 * s};
    t.nu1 = 2;
    t.n_power = 2;
    t.q_power = 2 * s - 2;
    for (int i = 0; i < s; ++i) {
      t.factors.emplace_back(0, 0);
      t.factors.emplace_back(1, 1);
    }
    std::sort(t.factors.begin(), t.factors.end());
    intermediates.push_back(t);
    const ReducedExpansion red = reduce_with(av, t, r);
    for (const auto& term : red.terms) q0[ReducedKey{term.ulG_power, term.q_power, term.kappas}] -= term.coeff;
  }
  std::erase_if(q0, [](const auto& kv) { return kv.second == 0; });

  SelfConsistentPolynomial p;
  p.beta = beta;
  p.q = model.q();
  p.degree = 2 * big_s;
  int top = 2;
  for (const auto& [key, v] : q0) top = std::max(top, std::get<0>(key));
  std::vector<double> a(static_cast<std::size_t>(top / 2), 0.0);
  std::vector<double> bound(a.size(), 0.0);
  for (const auto& [key, v] : q0) {
    const auto& [power, qp, kappas] = key;
    if (power % 2 != 0) throw Error("build_P0: odd power in Q0");
    const int l = power / 2;
    double w = 1.0;
    double wb = 1.0;
    for (int kk : kappas) {
      w *= model.kappa(kk);
      wb *= model.kappa_bound(kk);
    }
    const int rel = 2 * (l - 1) - qp;
    const double qrel = rel == 0 ? 1.0 : std::pow(model.q(), static_cast<double>(rel));
    a[l - 1] += to_double(v) * w * qrel;
    bound[l - 1] += std::abs(to_double(v)) * wb * qrel;
    ReducedTerm rt;
    rt.ulG_power = power;
    rt.q_power = qp;
    rt.kappas = kappas;
    rt.coeff = v;
    p.symbolic.push_back(std::move(rt));
  }
  a[0] = 1.0;
  bound[0] = 1.0;
  while (a.size() > 1 && a.back() == 0.0) {
    a.pop_back();
    bound.pop_back();
  }
  p.effective_degree = 2 * static_cast<int>(a.size());
  p.a = std::move(a);
  p.a_bound = std::move(bound);
  p.intermediates = std::move(intermediates);
  return p;
}

nlohmann::json to_json(const SelfConsistentPolynomial& p) {
  nlohmann::json j;
  j["beta"] = p.beta;
  j["q"] = p.q;
  j["degree"] = p.degree;
  j["effective_degree"] = p.effective_degree;
  j["a"] = p.a;
  return j;
}

SelfConsistentPolynomial polynomial_from_json(const nlohmann::json& j) {
  try {
    auto p = make_polynomial(j.at("beta").get<double>(), j.at("q").get<double>(),
                             j.at("a").get<std::vector<double>>());
    if (j.contains("degree")) p.degree = j.at("degree").get<int>();
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("polynomial_from_json: ") + e.what());
  }
}

double monomial_weight(const FormalMonomial& m, double n, double q, const std::function<double(int)>& kappa) {
  double w = to_double(m.coeff);
  for (int k : m.kappas) w *= kappa(k);
  w *= std::pow(n, -static_cast<double>(m.n_power));
  w *= std::pow(q, -static_cast<double>(m.q_power));
  return w;
}

cplx evaluate_sum(const FormalMonomial& term, const Eigen::MatrixXcd& G, double q,
                  const std::function<double(int)>& kappa) {
  if (term.nu1 > kMaxEvaluateIndices)
    throw SizeError("evaluate_sum: " + std::to_string(term.nu1) + " free indices exceed the guard of " +
                    std::to_string(kMaxEvaluateIndices));
  const auto n = G.rows();
  if (G.cols() != n) throw DomainError("evaluate_sum: G must be square");
  std::vector<Eigen::Index> idx(term.nu1, 0);
  cplx total = 0.0;
  while (true) {
    cplx prod = 1.0;
    for (const auto& f : term.factors) prod *= G(idx[f.x], idx[f.y]);
    total += prod;
    int pos = 0;
    while (pos < term.nu1 && ++idx[pos] == n) idx[pos++] = 0;
    if (pos == term.nu1) break;
  }
  return total * monomial_weight(term, static_cast<double>(n), q, kappa);
}

cplx evaluate_sum(const FormalMonomial& term, const MatrixSample& sample, cplx z) {
  const Spectrum spec = full_spectrum(sample, MatrixView::centred, true, false);
  const Eigen::MatrixXcd g = green_function(spec, z);
  const CumulantModel* model = sample.model();
  if (model == nullptr && (!term.kappas.empty() || term.q_power != 0))
    throw PreconditionError("evaluate_sum: cumulant weights need a sample with a model");
  const double q = model ? model->q() : 1.0;
  return evaluate_sum(term, g, q, [model](int k) { return model->kappa(k); });
}

}  // namespace sparse_lab
