#include <doctest.h>

#include "sparse_lab/ensemble.hpp"
#include "sparse_lab/errors.hpp"
#include "sparse_lab/random.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <vector>

using namespace sparse_lab;

namespace {

// Moments of a finite discrete law given as (value, probability) pairs.
double raw_moment(const std::vector<std::pair<double, double>>& law, int k) {
  double m = 0.0;
  for (const auto& [v, w] : law) m += w * std::pow(v, k);
  return m;
}

}  // namespace

TEST_CASE("ER model: normalization and rank-one shift") {
  const auto m = make_er_model(100, 0.25);
  CHECK(m.kappa(2) == 1.0);
  CHECK(m.kappa(1) == 0.0);
  CHECK(m.q() == doctest::Approx(5.0).epsilon(1e-15));
  CHECK(m.beta() == doctest::Approx(std::log(5.0) / std::log(100.0)));

  // E A = pJ = pN e e*, so the mean part of A/s is f e e* with f = pN/s
  const double s = std::sqrt(100 * 0.25 * 0.75);
  CHECK(m.f() == doctest::Approx(0.25 * 100 / s).epsilon(1e-14));
  CHECK(m.f() == doctest::Approx(std::sqrt(100 * 0.25 / 0.75)).epsilon(1e-14));
}

TEST_CASE("ER kappa_4 matches enumeration of the centred two-point law") {
  for (const double p : {0.25, 0.01, 0.5, 0.9}) {
    const std::int64_t n = 100;
    const auto m = make_er_model(n, p);
    const double s = std::sqrt(n * p * (1 - p));
    const std::vector<std::pair<double, double>> law{{(1 - p) / s, p}, {-p / s, 1 - p}};
    const double m2 = raw_moment(law, 2);
    const double m3 = raw_moment(law, 3);
    const double m4 = raw_moment(law, 4);
    const double q2 = n * p;
    CHECK(m2 * n == doctest::Approx(1.0).epsilon(1e-13));
    CHECK(m.kappa(3) == doctest::Approx(n * std::sqrt(q2) * m3).epsilon(1e-12));
    CHECK(m.kappa(4) == doctest::Approx(n * q2 * (m4 - 3 * m2 * m2)).epsilon(1e-12));
    CHECK(m.kappa(4) == doctest::Approx((1 - 6 * p + 6 * p * p) / (1 - p)).epsilon(1e-12));
    CHECK(m.offdiag_fourth_moment() == doctest::Approx(m4).epsilon(1e-13));
  }
}

TEST_CASE("ER higher cumulants against the moment recursion in floating point") {
  const double p = 0.1;
  const std::int64_t n = 400;
  const auto m = make_er_model(n, p);
  CHECK(m.k_max() >= 2 * ceil_inverse_beta(m.beta()) + 2);
  const double s = std::sqrt(n * p * (1 - p));
  const std::vector<std::pair<double, double>> law{{(1 - p) / s, p}, {-p / s, 1 - p}};
  std::vector<double> mom(9), cum(9);
  for (int k = 1; k <= 8; ++k) mom[k] = raw_moment(law, k);
  auto binom = [](int a, int b) {
    double r = 1;
    for (int i = 1; i <= b; ++i) r = r * (a - b + i) / i;
    return r;
  };
  for (int k = 1; k <= 8; ++k) {
    cum[k] = mom[k];
    for (int j = 1; j < k; ++j) cum[k] -= binom(k - 1, j - 1) * cum[j] * mom[k - j];
  }
  for (int k = 2; k <= 8; ++k) {
    CHECK(m.cumulant(k) == doctest::Approx(cum[k]).epsilon(1e-9));
  }
}

TEST_CASE("ER model argument checks") {
  CHECK_THROWS_AS(make_er_model(100, 0.0), DomainError);
  CHECK_THROWS_AS(make_er_model(100, 1.0), DomainError);
  CHECK_THROWS_AS(make_er_model(100, -0.1), DomainError);
  CHECK_THROWS_AS(make_er_model(100, 0.005), RegimeError);
  CHECK_NOTHROW(make_er_model(100, 0.01));
}

TEST_CASE("Rademacher model") {
  SUBCASE("odd cumulants vanish") {
    for (const double q : {1.0, 2.0, 3.5, 8.0}) {
      const auto m = make_rademacher_model(64, q);
      CHECK(m.kappa(2) == doctest::Approx(1.0).epsilon(1e-15));
      for (int k = 1; k <= m.k_max(); k += 2) CHECK(m.kappa(k) == 0.0);
      CHECK(m.f() == 0.0);
    }
  }
  SUBCASE("fourth moment by enumeration of the three-point law") {
    const std::int64_t n = 64;
    const double q = 2.0;
    const double t = q * q / n;
    const std::vector<std::pair<double, double>> law{{1 / q, t / 2}, {-1 / q, t / 2}, {0.0, 1 - t}};
    const double m4 = raw_moment(law, 4);
    CHECK(m4 == doctest::Approx(1.0 / (n * q * q)).epsilon(1e-15));
    const auto m = make_rademacher_model(n, q);
    CHECK(m.offdiag_fourth_moment() == doctest::Approx(m4).epsilon(1e-15));
    const double m2 = raw_moment(law, 2);
    CHECK(m.kappa(4) == doctest::Approx(n * q * q * (m4 - 3 * m2 * m2)).epsilon(1e-13));
  }
  SUBCASE("q = sqrt(N) boundary") {
    const auto m = make_rademacher_model(64, 8.0);
    const auto s = sample(m, 3);
    CHECK(s.entries().size() == 64u * 65u / 2u);
    for (const auto& e : s.entries()) CHECK(std::abs(e.value) == 0.125);
  }
  SUBCASE("domain") {
    CHECK_THROWS_AS(make_rademacher_model(64, 8.01), DomainError);
    CHECK_THROWS_AS(make_rademacher_model(64, 0.5), DomainError);
  }
}

TEST_CASE("custom model") {
  const auto m = make_custom_model(1000, 0.2, {1.0, 0.0, 0.5});
  CHECK(m.kappa(4) == 0.5);
  CHECK(m.kappa(6) == 0.0);
  CHECK(m.k_max() == 14);
  CHECK_THROWS_AS(make_custom_model(1000, 0.2, {0.9}), DomainError);
  CHECK_THROWS_AS(sample(m, 1), UnsupportedError);
}

TEST_CASE("ceil_inverse_beta is robust at exact reciprocals") {
  CHECK(ceil_inverse_beta(0.2) == 5);
  CHECK(ceil_inverse_beta(0.25) == 4);
  CHECK(ceil_inverse_beta(0.1) == 10);
  CHECK(ceil_inverse_beta(0.3) == 4);
  CHECK(ceil_inverse_beta(0.15) == 7);
  CHECK(ceil_inverse_beta(std::log(std::pow(2000.0, 0.2)) / std::log(2000.0)) == 5);
}

TEST_CASE("sampling is deterministic and symmetric") {
  auto model = std::make_shared<const CumulantModel>(make_er_model(300, 0.05));
  const auto a = sample(model, 42);
  const auto b = sample(model, 42);
  const auto c = sample(model, 43);
  REQUIRE(a.entries().size() == b.entries().size());
  for (std::size_t k = 0; k < a.entries().size(); ++k) {
    CHECK(a.entries()[k].row == b.entries()[k].row);
    CHECK(a.entries()[k].col == b.entries()[k].col);
    CHECK(a.entries()[k].value == b.entries()[k].value);
  }
  CHECK(a.cached_Z() == b.cached_Z());
  CHECK(a.cached_Z() != c.cached_Z());

  const auto h = a.dense();
  CHECK((h - h.transpose()).cwiseAbs().maxCoeff() == 0.0);

  // off-diagonal entries take exactly the two values (1-p)/s, -p/s
  const double p = model->p();
  const double s = model->er_scale();
  for (int i = 0; i < 300; ++i) {
    for (int j = i + 1; j < 300; ++j) {
      const double v = a.entry(i, j);
      CHECK((v == -p / s || v == -p / s + 1.0 / s));
    }
  }
  CHECK(a.entry(5, 17) == a.entry(17, 5));
}

TEST_CASE("ER entries: mean and variance") {
  const std::int64_t n = 2000;
  const double p = 0.01;
  auto model = std::make_shared<const CumulantModel>(make_er_model(n, p));
  const double s = model->er_scale();

  // H_12 across independent seeds
  {
    const int reps = 2000;
    double sum = 0;
    for (int r = 0; r < reps; ++r) sum += sample(model, derive_seed(7, r)).entry(0, 1);
    const double mean = sum / reps;
    CHECK(std::abs(mean) <= 4.0 * std::sqrt(1.0 / n / reps));
  }
  // 1e5 independent off-diagonal positions
  const auto smp = sample(model, 11);
  const int count = 100000;
  double sum = 0, sum2 = 0;
  int taken = 0;
  for (std::int64_t i = 0; i < n && taken < count; ++i) {
    for (std::int64_t j = i + 1; j < n && taken < count; ++j, ++taken) {
      const double v = smp.entry(i, j);
      sum += v;
      sum2 += v * v;
    }
  }
  const double mean = sum / count;
  const double var = sum2 / count - mean * mean;
  CHECK(std::abs(mean) <= 4.0 * std::sqrt(1.0 / n / count));
  const double m4 = p * (1 - p) * (std::pow(1 - p, 3) + std::pow(p, 3)) / std::pow(s, 4);
  const double var_se = std::sqrt((m4 - 1.0 / (n * n)) / count);
  CHECK(std::abs(var - 1.0 / n) <= 4.0 * var_se);
}

TEST_CASE("edge count of the geometric sampler") {
  const std::int64_t n = 500;
  const double p = 0.02;
  auto model = std::make_shared<const CumulantModel>(make_er_model(n, p));
  const double positions = n * (n + 1) / 2.0;
  const int reps = 200;
  double sum = 0;
  for (int r = 0; r < reps; ++r) sum += static_cast<double>(sample(model, derive_seed(99, r)).entries().size());
  const double se = std::sqrt(positions * p * (1 - p) / reps);
  CHECK(std::abs(sum / reps - positions * p) <= 4 * se);
}

TEST_CASE("compute_Z examples") {
  Eigen::MatrixXd h(2, 2);
  h << 0, 1, 1, 0;
  CHECK(compute_Z(MatrixSample::from_dense(h)) == 0.0);
  CHECK(compute_Z(MatrixSample::from_dense(Eigen::MatrixXd::Zero(3, 3))) == -1.0);
  h << 0, 2, 2, 0;
  CHECK(compute_Z(MatrixSample::from_dense(h)) == 3.0);
}

TEST_CASE("Z matches a dense trace and is bounded below") {
  auto model = std::make_shared<const CumulantModel>(make_er_model(400, 0.03));
  for (int r = 0; r < 5; ++r) {
    const auto smp = sample(model, derive_seed(5, r));
    const auto h = smp.dense();
    const double z = h.squaredNorm() / 400.0 - 1.0;
    CHECK(compute_Z(smp) == doctest::Approx(z).epsilon(1e-12));
    CHECK(compute_Z(smp) >= -1.0);
  }
}

TEST_CASE("A - H is the rank-one shift f e e*") {
  auto model = std::make_shared<const CumulantModel>(make_er_model(200, 0.05));
  const auto smp = sample(model, 1);
  const Eigen::MatrixXd diff = smp.dense(MatrixView::shifted) - smp.dense(MatrixView::centred);
  const Eigen::VectorXd e = Eigen::VectorXd::Constant(200, 1.0 / std::sqrt(200.0));
  const Eigen::MatrixXd expected = model->f() * e * e.transpose();
  CHECK((diff - expected).cwiseAbs().maxCoeff() <= 1e-12);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(diff);
  CHECK(es.eigenvalues()(199) == doctest::Approx(model->f()).epsilon(1e-12));
  CHECK(std::abs(es.eigenvalues()(198)) <= 1e-12);

  // A equals the adjacency divided by s
  const double s = model->er_scale();
  const auto a = smp.dense(MatrixView::shifted);
  for (int i = 0; i < 200; ++i)
    for (int j = 0; j < 200; ++j) CHECK((a(i, j) == 0.0 || a(i, j) == doctest::Approx(1.0 / s)));

  // matrix-free product agrees with the dense one
  std::vector<double> x(200), y(200);
  for (int i = 0; i < 200; ++i) x[i] = std::sin(i + 1.0);
  smp.apply(MatrixView::shifted, x, y);
  const Eigen::VectorXd yd = a * Eigen::Map<Eigen::VectorXd>(x.data(), 200);
  for (int i = 0; i < 200; ++i) CHECK(y[i] == doctest::Approx(yd(i)).epsilon(1e-12));
}

TEST_CASE("compute_Sigma") {
  SUBCASE("ER order of magnitude") {
    const auto m = make_er_model(10000, 0.01);
    const auto sig = compute_Sigma(m);
    const double scaled = sig.exact * std::sqrt(10000.0) * m.q();
    CHECK(scaled >= 0.5);
    CHECK(scaled <= 2.0);
    CHECK(sig.proxy == doctest::Approx(1.0 / (100.0 * m.q())));
  }
  SUBCASE("ER closed form") {
    for (const double p : {0.01, 0.1, 0.3}) {
      const std::int64_t n = 1000;
      const auto m = make_er_model(n, p);
      // E H_12^4 = p(1-p)((1-p)^3 + p^3) / (Np(1-p))^2, Sigma^2 = E H^4 with loops
      const double m4 = p * (1 - p) * (std::pow(1 - p, 3) + std::pow(p, 3)) / std::pow(n * p * (1 - p), 2);
      CHECK(compute_Sigma(m).exact == doctest::Approx(std::sqrt(m4)).epsilon(1e-13));
      CHECK(compute_Sigma(m).exact ==
            doctest::Approx(std::sqrt((std::pow(1 - p, 3) + std::pow(p, 3)) / (p * (1 - p))) / n).epsilon(1e-13));
    }
  }
  SUBCASE("Rademacher exact") {
    const auto m = make_rademacher_model(4096, 4.0);
    CHECK(compute_Sigma(m).exact == doctest::Approx(1.0 / (64.0 * 4.0)).epsilon(1e-14));
  }
}

TEST_CASE("rescaled adjacency") {
  SUBCASE("complete graph on three vertices without loops") {
    auto model = std::make_shared<const CumulantModel>(make_er_model(3, 0.5, {.loops = false}));
    const auto smp = er_sample_from_edges(model, {{0, 1}, {0, 2}, {1, 2}});
    CHECK(sample_stats(smp).D == 2.0);
    const auto ah = rescaled_adjacency(smp).dense();
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) CHECK(ah(i, j) == doctest::Approx(i == j ? 0.0 : 1.0 / std::sqrt(2.0)));
  }
  SUBCASE("single edge") {
    auto model = std::make_shared<const CumulantModel>(make_er_model(2, 0.5));
    const auto smp = er_sample_from_edges(model, {{1, 0}});
    const auto ah = rescaled_adjacency(smp).dense();
    CHECK(ah(0, 1) == 1.0);
    CHECK(ah(1, 0) == 1.0);
    CHECK(ah(0, 0) == 0.0);
  }
  SUBCASE("empty graph and other kinds") {
    auto model = std::make_shared<const CumulantModel>(make_er_model(2, 0.5));
    CHECK_THROWS_AS(rescaled_adjacency(er_sample_from_edges(model, {})), DegenerateError);
    const auto rad = sample(make_rademacher_model(50, 3.0), 1);
    CHECK_THROWS_AS(rescaled_adjacency(rad), UnsupportedError);
  }
  SUBCASE("average degree tracks Z") {
    const std::int64_t n = 2000;
    const double p = 0.01;
    auto model = std::make_shared<const CumulantModel>(make_er_model(n, p));
    double acc = 0;
    const int reps = 1000;
    for (int r = 0; r < reps; ++r) {
      const auto st = sample_stats(sample(model, derive_seed(2024, r)));
      acc += st.D / st.d - 1.0 - (1.0 - p) * st.Z;
    }
    CHECK(std::abs(acc / reps) <= 3 * p);
  }
}

TEST_CASE("Z concentration") {
  const std::int64_t n = 1000;
  auto model = std::make_shared<const CumulantModel>(make_er_model(n, er_p_for_beta(n, 0.25)));
  std::vector<double> absz;
  for (int r = 0; r < 300; ++r) absz.push_back(std::abs(compute_Z(sample(model, derive_seed(3, r)))));
  std::sort(absz.begin(), absz.end());
  const double q99 = absz[static_cast<std::size_t>(0.99 * (absz.size() - 1))];
  CHECK(q99 <= 10.0 / (std::sqrt(double(n)) * model->q()));
}

TEST_CASE("no-loops variant leaves the diagonal pattern empty") {
  auto model = std::make_shared<const CumulantModel>(make_er_model(300, 0.1, {.loops = false}));
  const auto smp = sample(model, 8);
  for (const auto& e : smp.entries()) CHECK(e.row < e.col);
  CHECK(model->diag_mean() == doctest::Approx(-0.1 / model->er_scale()));
  auto rmodel = std::make_shared<const CumulantModel>(make_rademacher_model(300, 5.0, {.loops = false}));
  for (const auto& e : sample(rmodel, 8).entries()) CHECK(e.row < e.col);
}

TEST_CASE("descriptor round trip and Matrix Market export") {
  const auto m = make_er_model(500, 0.02, {.loops = false});
  const auto back = model_from_descriptor(m.descriptor());
  CHECK(back.N() == 500);
  CHECK(back.p() == 0.02);
  CHECK_FALSE(back.loops());
  CHECK(back.kappa(4) == m.kappa(4));
  const auto r = model_from_descriptor(make_rademacher_model(100, 3.0).descriptor());
  CHECK(r.kind() == EnsembleKind::sparse_rademacher);
  CHECK(r.q() == 3.0);
  const auto c = model_from_descriptor(make_custom_model(100, 0.3, {1.0, 0.0, 2.0}).descriptor());
  CHECK(c.kappa(4) == 2.0);

  Eigen::MatrixXd h(2, 2);
  h << 0.5, 1, 1, 0;
  std::ostringstream os;
  write_matrix_market(MatrixSample::from_dense(h), os);
  const std::string text = os.str();
  CHECK(text.rfind("%%MatrixMarket matrix coordinate real symmetric", 0) == 0);
  CHECK(text.find("2 2 2\n") != std::string::npos);
  CHECK(text.find("2 1 1\n") != std::string::npos);
  CHECK(text.find("1 1 0.5\n") != std::string::npos);
}

TEST_CASE("dense cap") {
  CHECK(dense_cap() >= 1);
  auto model = std::make_shared<const CumulantModel>(make_rademacher_model(dense_cap() + 1, 2.0));
  CHECK_THROWS_AS(sample(model, 1).dense(), SizeError);
}
