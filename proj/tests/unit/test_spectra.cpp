#include <doctest.h>

#include "sparse_lab/ensemble.hpp"
#include "sparse_lab/errors.hpp"
#include "sparse_lab/random.hpp"
#include "sparse_lab/spectra.hpp"

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <cmath>
#include <sstream>

using namespace sparse_lab;

namespace {

// Number of eigenvalues of m below x from the signs of the LDL^T pivots of
// m - x I (Sylvester inertia on the leading principal minors).
int count_below(const Eigen::MatrixXd& m, double x) {
  Eigen::MatrixXd a = m - x * Eigen::MatrixXd::Identity(m.rows(), m.cols());
  const auto n = a.rows();
  int neg = 0;
  for (Eigen::Index k = 0; k < n; ++k) {
    double piv = a(k, k);
    if (piv == 0.0) piv = -1e-300;
    if (piv < 0) ++neg;
    for (Eigen::Index i = k + 1; i < n; ++i) {
      const double l = a(i, k) / piv;
      for (Eigen::Index j = k + 1; j < n; ++j) a(i, j) -= l * a(k, j);
    }
  }
  return neg;
}

std::vector<double> sturm_eigenvalues(const Eigen::MatrixXd& m) {
  const double bound = m.cwiseAbs().rowwise().sum().maxCoeff() + 1.0;
  std::vector<double> out;
  for (int idx = 0; idx < m.rows(); ++idx) {
    double lo = -bound, hi = bound;
    for (int it = 0; it < 200 && hi - lo > 1e-14; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (count_below(m, mid) > idx) hi = mid;
      else lo = mid;
    }
    out.push_back(0.5 * (lo + hi));
  }
  return out;
}

Eigen::MatrixXd random_symmetric(int n, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::MatrixXd m(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) m(i, j) = m(j, i) = rng.uniform() * 2 - 1;
  return m;
}

cplx m_sc(cplx z) {
  cplx r = std::sqrt(z * z - 4.0);
  cplx m = (-z + r) / 2.0;
  if (m.imag() < 0) m = (-z - r) / 2.0;
  return m;
}

}  // namespace

TEST_CASE("full_spectrum small cases") {
  Eigen::MatrixXd x(2, 2);
  x << 0, 1, 1, 0;
  auto s = full_spectrum(x);
  REQUIRE(s.size() == 2);
  CHECK(s.eigenvalues[0] == doctest::Approx(-1.0).epsilon(1e-15));
  CHECK(s.eigenvalues[1] == doctest::Approx(1.0).epsilon(1e-15));

  Eigen::MatrixXd d = Eigen::Vector3d(3, 1, 2).asDiagonal();
  s = full_spectrum(d);
  CHECK(s.eigenvalues == std::vector<double>{1, 2, 3});
}

TEST_CASE("full_spectrum agrees with Sturm bisection") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto m = random_symmetric(6, seed);
    const auto s = full_spectrum(m, true);
    const auto ref = sturm_eigenvalues(m);
    for (int i = 0; i < 6; ++i) CHECK(std::abs(s.eigenvalues[i] - ref[i]) <= 1e-9);
    double lam_max = 1.0;
    for (double l : s.eigenvalues) lam_max = std::max(lam_max, std::abs(l));
    CHECK(s.residual <= 1e-8 * lam_max);
  }
}

TEST_CASE("dense spectrum identities on samples") {
  auto model = std::make_shared<const CumulantModel>(make_er_model(300, 0.03));
  for (int r = 0; r < 20; ++r) {
    const auto smp = sample(model, derive_seed(17, r));
    const auto h = smp.dense(MatrixView::centred);
    const auto sh = full_spectrum(h, true);
    const auto sa = full_spectrum(smp, MatrixView::shifted);
    const double hmax = h.cwiseAbs().maxCoeff();
    double tr = 0, tr2 = 0;
    for (double l : sh.eigenvalues) {
      tr += l;
      tr2 += l * l;
    }
    CHECK(std::abs(tr - h.trace()) <= 1e-8 * 300 * hmax);
    CHECK(std::abs(tr2 - 300.0 * (1.0 + compute_Z(smp))) <= 1e-8 * 300 * hmax);
    CHECK(sh.residual <= 1e-8 * 4);
    // interlacing for a positive rank-one perturbation
    for (int i = 0; i < 300; ++i) {
      CHECK(sh.eigenvalues[i] <= sa.eigenvalues[i] + 1e-12);
      if (i + 1 < 300) CHECK(sa.eigenvalues[i] <= sh.eigenvalues[i + 1] + 1e-12);
    }
  }
}

TEST_CASE("full_spectrum respects the dense cap") {
  auto model = std::make_shared<const CumulantModel>(make_rademacher_model(dense_cap() + 1, 2.0));
  CHECK_THROWS_AS(full_spectrum(sample(model, 1)), SizeError);
}

TEST_CASE("extreme_eigs") {
  SUBCASE("exchange matrix") {
    Eigen::MatrixXd x(2, 2);
    x << 0, 1, 1, 0;
    const auto s = extreme_eigs(MatrixSample::from_dense(x), 1, Side::top);
    REQUIRE(s.size() == 1);
    CHECK(s.eigenvalues[0] == doctest::Approx(1.0).epsilon(1e-14));
    const auto b = extreme_eigs(MatrixSample::from_dense(x), 1, Side::bottom);
    CHECK(b.eigenvalues[0] == doctest::Approx(-1.0).epsilon(1e-14));
  }
  SUBCASE("identity plus rank one") {
    const auto smp = MatrixSample::from_dense(Eigen::MatrixXd::Identity(100, 100), 5.0);
    const auto s = extreme_eigs(smp, 1, Side::top, MatrixView::shifted);
    CHECK(std::abs(s.eigenvalues[0] - 6.0) <= 1e-10);
    const auto s2 = extreme_eigs(smp, 2, Side::top, MatrixView::shifted);
    CHECK(std::abs(s2.eigenvalues[0] - 1.0) <= 1e-10);
    CHECK(std::abs(s2.eigenvalues[1] - 6.0) <= 1e-10);
  }
  SUBCASE("ER samples against the dense solver") {
    for (const double beta : {0.1, 0.25}) {
      const std::int64_t n = 512;
      auto model = std::make_shared<const CumulantModel>(make_er_model(n, er_p_for_beta(n, beta)));
      for (int r = 0; r < 3; ++r) {
        const auto smp = sample(model, derive_seed(31, r));
        for (const auto view : {MatrixView::centred, MatrixView::shifted}) {
          const auto dense = full_spectrum(smp, view);
          const auto top = extreme_eigs(smp, 2, Side::top, view);
          CHECK(std::abs(top.eigenvalues[1] - dense.eigenvalues[n - 1]) <= 1e-8);
          CHECK(std::abs(top.eigenvalues[0] - dense.eigenvalues[n - 2]) <= 1e-8);
          CHECK(top.residual <= 1e-8 * std::max(1.0, std::abs(top.eigenvalues[1])));
          const auto bot = extreme_eigs(smp, 3, Side::bottom, view);
          for (int i = 0; i < 3; ++i) CHECK(std::abs(bot.eigenvalues[i] - dense.eigenvalues[i]) <= 1e-8);
        }
      }
    }
  }
  SUBCASE("argument checks") {
    const auto smp = MatrixSample::from_dense(Eigen::MatrixXd::Identity(20, 20));
    CHECK_THROWS_AS(extreme_eigs(smp, 9, Side::top), DomainError);
    CHECK_THROWS_AS(extreme_eigs(smp, 0, Side::top), DomainError);
  }
  SUBCASE("restart cap raises with the best residual") {
    auto model = std::make_shared<const CumulantModel>(make_er_model(2000, er_p_for_beta(2000, 0.1)));
    const auto smp = sample(model, 5);
    LanczosOptions opts;
    opts.krylov_dim = 12;
    opts.max_restarts = 0;
    try {
      extreme_eigs(smp, 2, Side::top, MatrixView::shifted, opts);
      FAIL("expected ConvergenceError");
    } catch (const ConvergenceError& e) {
      CHECK(e.best_residual() > 0.0);
      CHECK(std::isfinite(e.best_residual()));
    }
  }
}

TEST_CASE("stieltjes") {
  Spectrum s;
  s.eigenvalues = {0.0};
  auto g = stieltjes(s, cplx(0, 1));
  CHECK(std::abs(g.ulG - cplx(0, 1)) <= 1e-15);
  s.eigenvalues = {-1.0, 1.0};
  g = stieltjes(s, cplx(0, 1));
  CHECK(std::abs(g.ulG - cplx(0, 0.5)) <= 1e-15);
  CHECK(g.Gamma == doctest::Approx(0.25));
  CHECK_THROWS_AS(stieltjes(s, cplx(0, 0)), DomainError);
  CHECK_THROWS_AS(stieltjes(s, cplx(1, -1)), DomainError);

  const std::int64_t n = 2000;
  auto model = std::make_shared<const CumulantModel>(make_er_model(n, er_p_for_beta(n, 0.25)));
  const auto spec = full_spectrum(sample(model, 77));
  const cplx z(0, 2.5);
  CHECK(std::abs(stieltjes(spec, z).ulG - m_sc(z)) <= 0.05);

  // Herglotz bounds and monotone decay in eta on a fixed spectrum
  double prev = std::numeric_limits<double>::infinity();
  for (const double eta : {0.05, 0.1, 0.2, 0.5, 1.0, 2.0}) {
    const auto ge = stieltjes(spec, cplx(0.3, eta));
    CHECK(ge.im_ulG > 0.0);
    CHECK(std::abs(ge.ulG) <= 1.0 / eta);
    CHECK(ge.im_ulG < prev);
    prev = ge.im_ulG;
  }
}

TEST_CASE("ward identity") {
  SUBCASE("1x1") {
    const auto smp = MatrixSample::from_dense(Eigen::MatrixXd::Zero(1, 1));
    CHECK(ward_check(smp, cplx(0.7, 0.3), {0}) <= 1e-15);
  }
  SUBCASE("N = 50 samples") {
    auto model = std::make_shared<const CumulantModel>(make_er_model(50, 0.2));
    std::vector<std::int64_t> rows(50);
    for (int i = 0; i < 50; ++i) rows[i] = i;
    for (int r = 0; r < 20; ++r) {
      const auto spec = full_spectrum(sample(model, derive_seed(3, r)), MatrixView::centred, true);
      CHECK(ward_check(spec, cplx(0, 1), rows) <= 1e-10);
      CHECK(ward_check(spec, cplx(0.5, 0.1), rows) <= 1e-10);
    }
  }
  SUBCASE("N = 500 against a direct inverse") {
    auto model = std::make_shared<const CumulantModel>(make_er_model(500, 0.02));
    const auto smp = sample(model, 12);
    const cplx z(0.5, 0.01);
    const auto spec = full_spectrum(smp, MatrixView::centred, true);
    const Eigen::MatrixXcd h = smp.dense().cast<cplx>();
    const Eigen::MatrixXcd direct = (h - z * Eigen::MatrixXcd::Identity(500, 500)).inverse();
    const Eigen::MatrixXcd g = green_function(spec, z);
    CHECK((g - direct).cwiseAbs().maxCoeff() <= 1e-8 * direct.cwiseAbs().maxCoeff());
    const Eigen::VectorXcd gd = green_diagonal(spec, z);
    CHECK((gd - direct.diagonal()).cwiseAbs().maxCoeff() <= 1e-8 * direct.cwiseAbs().maxCoeff());
    CHECK(ward_check(spec, z, {0, 1, 2, 100, 499}) <= 1e-8);
  }
}

TEST_CASE("delocalization") {
  const auto shifted = full_spectrum(Eigen::MatrixXd::Identity(40, 40) + Eigen::MatrixXd::Constant(40, 40, 5.0 / 40),
                                     true);
  CHECK(delocalization_check(shifted, 39, 1) == doctest::Approx(1.0).epsilon(1e-12));

  Eigen::MatrixXd x(2, 2);
  x << 0, 1, 1, 0;
  CHECK(delocalization_check(MatrixSample::from_dense(x)) == doctest::Approx(1.0).epsilon(1e-12));

  const std::int64_t n = 1000;
  auto model = std::make_shared<const CumulantModel>(make_er_model(n, er_p_for_beta(n, 0.2)));
  double worst = 0;
  for (int r = 0; r < 20; ++r) worst = std::max(worst, delocalization_check(sample(model, derive_seed(8, r))));
  CHECK(worst <= 30.0 * std::log(double(n)));
}

TEST_CASE("export formats") {
  Spectrum s;
  s.eigenvalues = {-1.5, 0.25};
  std::ostringstream os;
  write_spectrum_csv(s, os);
  CHECK(os.str() == "index,eigenvalue\n1,-1.5\n2,0.25\n");
  const auto j = to_json(stieltjes(s, cplx(0, 1)));
  CHECK(j.at("z_im").get<double>() == 1.0);
  CHECK(j.contains("gamma"));
}

TEST_CASE("resolvent diagonal without eigenvectors") {
  auto model = std::make_shared<const CumulantModel>(make_er_model(400, 0.05));
  const auto h = sample(model, 4).dense();
  const std::vector<cplx> zs{{0, 2.5}, {0.3, 0.05}, {-1.9, 0.2}};
  const auto diag = resolvent_diagonal(h, zs);
  const auto spec = full_spectrum(h, true);
  for (std::size_t c = 0; c < zs.size(); ++c) {
    const Eigen::VectorXcd ref = green_diagonal(spec, zs[c]);
    CHECK((diag.col(static_cast<Eigen::Index>(c)) - ref).cwiseAbs().maxCoeff() <= 1e-10);
  }
  CHECK_THROWS_AS(resolvent_diagonal(h, {{0.0, 0.0}}), DomainError);
}
