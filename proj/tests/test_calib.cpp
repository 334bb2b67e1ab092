#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "affcal/calib.hpp"
#include "affcal/io.hpp"
#include "test_support.hpp"

using namespace affcal;
using affcal::testing::Rng;

namespace {

struct Instance {
  AffineTransform<double> truth;
  DataMatrix<double> x;
  DataMatrix<double> y;
};

// Noiseless pair: y_i = A x_i + b with x_i uniform in [-10, 10]^q.
Instance noiseless(Rng& rng, Index q, Index n) {
  auto t = affcal::testing::random_transform(rng, q);
  DataMatrix<double> x(affcal::testing::uniform_matrix(rng, q, n, -10, 10));
  DataMatrix<double> y(apply_transform(t, x).values());
  return {std::move(t), std::move(x), std::move(y)};
}

Instance noisy(Rng& rng, Index q, Index n, double sigma) {
  auto inst = noiseless(rng, q, n);
  DataMatrix<double> x(inst.x.values() + affcal::testing::gaussian_matrix(rng, q, n, sigma));
  DataMatrix<double> y(inst.y.values() + affcal::testing::gaussian_matrix(rng, q, n, sigma));
  return {inst.truth, std::move(x), std::move(y)};
}

double max_abs(const Matrix<double>& m) { return m.cwiseAbs().maxCoeff(); }

double loop_objective(const Matrix<double>& x, const Matrix<double>& y, const Matrix<double>& t,
                      const Matrix<double>& b) {
  double f = 0.0;
  for (Index j = 0; j < x.cols(); ++j)
    for (Index i = 0; i < x.rows(); ++i) {
      const double dx = x(i, j) - t(i, j);
      double bt = 0.0;
      for (Index k = 0; k < b.cols(); ++k) bt += b(i, k) * t(k, j);
      const double dy = y(i, j) - bt;
      f += dx * dx + dy * dy;
    }
  return f;
}

}  // namespace

TEST_CASE("augment / deaugment") {
  Matrix<double> v(2, 4);
  v << 1, 2, 3, 4, 5, 6, 7, 8;
  const DataMatrix<double> x(v, SampleCheck::ApplyOnly);
  const auto a = augment(x);
  CHECK(a.p() == 3);
  CHECK(a.values().row(2) == Matrix<double>::Ones(1, 4));
  CHECK(a.values().topRows(2) == v);
  CHECK(deaugment(a).values() == v);

  Matrix<double> bad = a.values();
  bad(2, 1) = 1.0 + 1e-15;
  CHECK_THROWS_AS(AugmentedData<double>{bad}, ContractError);
}

TEST_CASE("DataMatrix enforces n >= 2(q+1) for estimation") {
  CHECK_THROWS_AS(DataMatrix<double>(Matrix<double>::Ones(2, 5)), ArgumentError);
  CHECK_NOTHROW(DataMatrix<double>(Matrix<double>::Ones(2, 6)));
  CHECK_NOTHROW(DataMatrix<double>(Matrix<double>::Ones(2, 1), SampleCheck::ApplyOnly));
}

TEST_CASE("AugmentedTransform round trip and last-row contract") {
  Rng rng(1);
  const auto t = affcal::testing::random_transform(rng, 3);
  const auto aug = AugmentedTransform<double>::from_affine(t);
  const auto back = deaugment_transform(aug);
  CHECK(back.a() == t.a());
  CHECK(back.b() == t.b());
  Matrix<double> m = aug.bmat();
  m(3, 0) = 1e-12;
  CHECK_THROWS_AS(AugmentedTransform<double>{m}, ContractError);
}

TEST_CASE("estimator names") {
  for (auto e : kAllEstimators) CHECK(parse_estimator(estimator_name(e)) == e);
  CHECK(parse_estimator("alg1") == Estimator::GleserWatsonDenoised);
  CHECK(parse_estimator("alg2") == Estimator::LeastSquares);
  CHECK(parse_estimator("alg3") == Estimator::Hybrid);
  CHECK_FALSE(parse_estimator("tls").has_value());
}

TEST_CASE("objective_f") {
  Rng rng(2);
  const Matrix<double> theta = affcal::testing::uniform_matrix(rng, 3, 8);
  const Matrix<double> b = affcal::testing::uniform_matrix(rng, 3, 3);

  SUBCASE("exact model gives zero") {
    CHECK(objective_f(theta, Matrix<double>(b * theta), theta, b) == 0.0);
  }
  SUBCASE("noise on X only gives its squared norm") {
    const Matrix<double> e = affcal::testing::uniform_matrix(rng, 3, 8);
    CHECK(objective_f(Matrix<double>(theta + e), Matrix<double>(b * theta), theta, b) ==
          doctest::Approx(e.squaredNorm()).epsilon(1e-14));
  }
  SUBCASE("double-loop oracle") {
    for (int trial = 0; trial < 20; ++trial) {
      const Matrix<double> x = affcal::testing::uniform_matrix(rng, 3, 8, -5, 5);
      const Matrix<double> y = affcal::testing::uniform_matrix(rng, 3, 8, -5, 5);
      CHECK(objective_f(x, y, theta, b) ==
            doctest::Approx(loop_objective(x, y, theta, b)).epsilon(1e-12));
    }
  }
  SUBCASE("typed overload agrees") {
    Matrix<double> x = theta;
    x.topRows(2) += affcal::testing::uniform_matrix(rng, 2, 8);
    Matrix<double> t = theta;
    t.row(2).setOnes();
    x.row(2).setOnes();
    const auto bt = AugmentedTransform<double>::from_affine(affcal::testing::random_transform(rng, 2));
    Matrix<double> y = bt.bmat() * t;
    y.topRows(2) += affcal::testing::uniform_matrix(rng, 2, 8);
    CHECK(objective_f(AugmentedData<double>(x), AugmentedData<double>(y), AugmentedData<double>(t),
                      bt) == objective_f(x, y, t, bt.bmat()));
  }
  SUBCASE("shape mismatch") {
    CHECK_THROWS_AS(objective_f(theta, theta, Matrix<double>(theta.leftCols(4)), b), ArgumentError);
    CHECK_THROWS_AS(grad_f_theta(theta, theta, theta, Matrix<double>(2, 2)), ArgumentError);
    CHECK_THROWS_AS(grad_f_bmat(theta, Matrix<double>(2, 8), theta, b), ArgumentError);
  }
}

TEST_CASE("gradients vanish at an exact fit") {
  Rng rng(3);
  const Matrix<double> theta = affcal::testing::uniform_matrix(rng, 3, 10);
  const Matrix<double> b = affcal::testing::uniform_matrix(rng, 3, 3);
  const Matrix<double> y = b * theta;
  CHECK(grad_f_theta(theta, y, theta, b).norm() == 0.0);
  CHECK(grad_f_bmat(theta, y, theta, b).norm() == 0.0);
}

TEST_CASE("gradients match central finite differences") {
  Rng rng(4);
  const double h = 1e-6;
  for (int trial = 0; trial < 50; ++trial) {
    const Index p = 2 + trial % 3;
    const Index n = 2 * p + trial % 5;
    const Matrix<double> x = affcal::testing::uniform_matrix(rng, p, n);
    const Matrix<double> y = affcal::testing::uniform_matrix(rng, p, n);
    const Matrix<double> theta = affcal::testing::uniform_matrix(rng, p, n);
    const Matrix<double> b = affcal::testing::uniform_matrix(rng, p, p);
    const Matrix<double> gt = grad_f_theta(x, y, theta, b);
    const Matrix<double> gb = grad_f_bmat(x, y, theta, b);

    Matrix<double> fd_t(p, n), fd_b(p, p);
    for (Index j = 0; j < n; ++j)
      for (Index i = 0; i < p; ++i) {
        Matrix<double> tp = theta, tm = theta;
        tp(i, j) += h;
        tm(i, j) -= h;
        fd_t(i, j) = (objective_f(x, y, tp, b) - objective_f(x, y, tm, b)) / (2 * h);
      }
    for (Index j = 0; j < p; ++j)
      for (Index i = 0; i < p; ++i) {
        Matrix<double> bp = b, bm = b;
        bp(i, j) += h;
        bm(i, j) -= h;
        fd_b(i, j) = (objective_f(x, y, theta, bp) - objective_f(x, y, theta, bm)) / (2 * h);
      }
    CHECK((gt - fd_t).norm() <= 1e-5 * std::max(1.0, gt.norm()));
    CHECK((gb - fd_b).norm() <= 1e-5 * std::max(1.0, gb.norm()));
  }
}

TEST_CASE("gradients are linear in the residuals") {
  // Theta = 0 makes both residuals equal to the data, so scaling X and Y scales the gradient.
  Rng rng(5);
  const Matrix<double> x = affcal::testing::uniform_matrix(rng, 3, 9);
  const Matrix<double> y = affcal::testing::uniform_matrix(rng, 3, 9);
  const Matrix<double> zero = Matrix<double>::Zero(3, 9);
  const Matrix<double> b = affcal::testing::uniform_matrix(rng, 3, 3);
  CHECK((grad_f_theta(Matrix<double>(2 * x), Matrix<double>(2 * y), zero, b) -
         2 * grad_f_theta(x, y, zero, b))
            .norm() <= 1e-12);
  const Matrix<double> theta = affcal::testing::uniform_matrix(rng, 3, 9);
  const Matrix<double> ry = y - b * theta;
  CHECK((grad_f_bmat(x, Matrix<double>(b * theta + 2 * ry), theta, b) -
         2 * grad_f_bmat(x, y, theta, b))
            .norm() <= 1e-12);
}

TEST_CASE("noiseless data is recovered exactly by every estimator") {
  Rng rng(6);
  for (Index q = 1; q <= 3; ++q) {
    for (int trial = 0; trial < 10; ++trial) {
      const auto inst = noiseless(rng, q, 40);
      for (auto method : kAllEstimators) {
        CAPTURE(q);
        CAPTURE(estimator_name(method));
        const auto r = fit(method, inst.x, inst.y);
        CHECK(max_abs(r.transform.a() - inst.truth.a()) <= 1e-8);
        CHECK(max_abs(r.transform.b() - inst.truth.b()) <= 1e-8);
        CHECK(max_abs(r.theta_e.values() - inst.x.values()) <= 1e-8);
        CHECK(r.diagnostics.last_row_deviation <= 1e-6);
        CHECK(r.diagnostics.warnings.empty());
      }
    }
  }
}

TEST_CASE("too few samples or mismatched shapes are rejected") {
  const DataMatrix<double> small(Matrix<double>::Ones(2, 5), SampleCheck::ApplyOnly);
  for (auto method : kAllEstimators) CHECK_THROWS_AS(fit(method, small, small), ArgumentError);
  Rng rng(7);
  const DataMatrix<double> a(affcal::testing::uniform_matrix(rng, 2, 10));
  const DataMatrix<double> b(affcal::testing::uniform_matrix(rng, 2, 12));
  CHECK_THROWS_AS(fit_least_squares(a, b), ArgumentError);
}

TEST_CASE("degenerate data raises a singularity error with advice") {
  // every sample identical: X X^T is rank one
  const DataMatrix<double> x(Matrix<double>::Ones(2, 10));
  try {
    fit_least_squares(x, x);
    FAIL("expected SingularMatrixError");
  } catch (const SingularMatrixError& e) {
    CHECK(std::string(e.what()).find("more samples") != std::string::npos);
  }
}

TEST_CASE("hybrid at full rank reproduces least squares and returns X") {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const Index q = 1 + trial % 3;
    const Index n = 2 * (q + 1) + trial;
    const auto inst = noisy(rng, q, n, 2.0);
    const auto ls = fit_least_squares(inst.x, inst.y);
    const auto hy = fit_hybrid(inst.x, inst.y, n);
    CHECK(hy.transform.a() == ls.transform.a());
    CHECK(hy.transform.b() == ls.transform.b());
    CHECK(max_abs(hy.theta_e.values() - inst.x.values()) <= 1e-9);
    CHECK(hy.denoise_rank == n);
  }
}

TEST_CASE("hybrid rank bounds") {
  Rng rng(9);
  const auto inst = noisy(rng, 2, 12, 1.0);
  CHECK_THROWS_AS(fit_hybrid(inst.x, inst.y, Index(0)), ArgumentError);
  CHECK_THROWS_AS(fit_hybrid(inst.x, inst.y, Index(13)), ArgumentError);
  CHECK(fit_hybrid(inst.x, inst.y).denoise_rank == 3);
}

TEST_CASE("least squares: stationarity, augmentation row, scale equivariance") {
  Rng rng(10);
  for (int trial = 0; trial < 20; ++trial) {
    const Index q = 1 + trial % 3;
    const auto inst = noisy(rng, q, 50, 3.0);
    const auto r = fit_least_squares(inst.x, inst.y);
    const Matrix<double> xa = augment(inst.x).values();
    const Matrix<double> ya = augment(inst.y).values();
    const Matrix<double> b = AugmentedTransform<double>::from_affine(r.transform).bmat();
    CHECK(grad_f_bmat(xa, ya, xa, b).norm() <= 1e-6 * ya.norm());
    CHECK(r.diagnostics.last_row_deviation <= 1e-9);

    const double s = 3.7;
    const auto rs = fit_least_squares(DataMatrix<double>(s * inst.x.values()),
                                      DataMatrix<double>(s * inst.y.values()));
    CHECK(max_abs(rs.transform.a() - r.transform.a()) <= 1e-9);
    CHECK(max_abs(rs.transform.b() - s * r.transform.b()) <= 1e-9 * std::max(1.0, s * r.transform.b().norm()));
  }
}

TEST_CASE("direct and reduced eigenvector paths agree") {
  Rng rng(12);
  for (int trial = 0; trial < 10; ++trial) {
    const Index q = 1 + trial % 3;
    const auto inst = noisy(rng, q, 60 + trial, 5.0);
    for (auto method : {Estimator::GleserWatson, Estimator::GleserWatsonDenoised, Estimator::Hybrid}) {
      const auto d = fit(method, inst.x, inst.y, FitOptions{std::nullopt, ProjectionPath::Direct});
      const auto r = fit(method, inst.x, inst.y, FitOptions{std::nullopt, ProjectionPath::Reduced});
      const double scale = std::max(1.0, inst.x.values().cwiseAbs().maxCoeff());
      CHECK(max_abs(d.theta_e.values() - r.theta_e.values()) <= 1e-8 * scale);
      CHECK(max_abs(d.transform.a() - r.transform.a()) <= 1e-8);
      CHECK(max_abs(d.transform.b() - r.transform.b()) <= 1e-8 * scale);
    }
  }
}

TEST_CASE("projection is invariant to eigenvector sign flips and permutations") {
  Rng rng(13);
  const auto inst = noisy(rng, 2, 30, 2.0);
  const Matrix<double> xa = augment(inst.x).values();
  const Matrix<double> ya = augment(inst.y).values();
  const Matrix<double> gram = xa.transpose() * xa + ya.transpose() * ya;
  const Matrix<double> u = top_k_eigvecs(gram, 3);
  Matrix<double> flipped(u.rows(), 3);
  flipped << -u.col(2), u.col(0), -u.col(1);
  const Matrix<double> reference = project_leading_subspace(xa, ya, 3, ProjectionPath::Direct);
  CHECK(max_abs(project_rows(xa, flipped) - reference) <= 1e-9 * xa.cwiseAbs().maxCoeff());
}

TEST_CASE("projection is invariant to sample order") {
  Rng rng(14);
  const auto inst = noisy(rng, 2, 25, 2.0);
  std::vector<Index> perm(25);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  Matrix<double> xp(2, 25), yp(2, 25);
  for (Index i = 0; i < 25; ++i) {
    xp.col(i) = inst.x.values().col(perm[i]);
    yp.col(i) = inst.y.values().col(perm[i]);
  }
  for (auto method : kAllEstimators) {
    const auto a = fit(method, inst.x, inst.y);
    const auto b = fit(method, DataMatrix<double>(xp), DataMatrix<double>(yp));
    CHECK(max_abs(a.transform.a() - b.transform.a()) <= 1e-9);
    CHECK(max_abs(a.transform.b() - b.transform.b()) <= 1e-9 * 50);
    for (Index i = 0; i < 25; ++i)
      CHECK((a.theta_e.values().col(perm[i]) - b.theta_e.values().col(i)).norm() <= 1e-9 * 50);
  }
}

TEST_CASE("denoising resets only the augmentation row") {
  Rng rng(15);
  const auto inst = noisy(rng, 2, 40, 8.0);
  const auto plain = fit_gleser_watson(inst.x, inst.y, false);
  const auto den = fit_gleser_watson(inst.x, inst.y, true);
  CHECK(plain.theta_e.values() == den.theta_e.values());
  CHECK(plain.method == Estimator::GleserWatson);
  CHECK(den.method == Estimator::GleserWatsonDenoised);
}

TEST_CASE("apply_transform") {
  SUBCASE("identity") {
    Matrix<double> v(2, 3);
    v << 1, 2, 3, 4, 5, 6;
    const DataMatrix<double> x(v, SampleCheck::ApplyOnly);
    CHECK(apply_transform(AffineTransform<double>::identity(2), x).values() == v);
  }
  SUBCASE("reference transform maps the origin to b") {
    Matrix<double> a(2, 2);
    a << 0.3430, 0.3430, 0.1715, 0.8575;
    Vector<double> b(2);
    b << 52, -58;
    const DataMatrix<double> zero(Matrix<double>::Zero(2, 1), SampleCheck::ApplyOnly);
    const auto y = apply_transform(AffineTransform<double>(a, b), zero);
    CHECK(y.values()(0, 0) == 52.0);
    CHECK(y.values()(1, 0) == -58.0);
  }
  SUBCASE("composition with a hand-built inverse") {
    Rng rng(16);
    for (int trial = 0; trial < 20; ++trial) {
      const Index q = 1 + trial % 3;
      const auto t = affcal::testing::random_transform(rng, q);
      const Matrix<double> ainv = t.a().inverse();
      const AffineTransform<double> inv(ainv, -ainv * t.b());
      const DataMatrix<double> x(affcal::testing::uniform_matrix(rng, q, 7, -10, 10),
                                 SampleCheck::ApplyOnly);
      const auto back = apply_transform(t, apply_transform(inv, x));
      CHECK(max_abs(back.values() - x.values()) <= 1e-9);
    }
  }
  SUBCASE("dimension mismatch") {
    const DataMatrix<double> x(Matrix<double>::Zero(3, 1), SampleCheck::ApplyOnly);
    CHECK_THROWS_AS(apply_transform(AffineTransform<double>::identity(2), x), ArgumentError);
  }
}

TEST_CASE("transform JSON round trip is exact") {
  Rng rng(17);
  const auto t = affcal::testing::random_transform(rng, 3);
  const io::TransformRecord rec{t, "hybrid", 4};
  const auto doc = io::transform_to_json(rec);
  const auto back = io::transform_from_json(nlohmann::json::parse(doc.dump()));
  CHECK(back.transform.a() == t.a());
  CHECK(back.transform.b() == t.b());
  CHECK(back.method == "hybrid");
  CHECK(back.denoise_rank == 4);
  CHECK(doc["a"].size() == 9);

  auto broken = doc;
  broken["b"].push_back(1.0);
  CHECK_THROWS(io::transform_from_json(broken));
}

TEST_CASE("number text round trip") {
  Rng rng(18);
  std::uniform_real_distribution<double> u(-1e6, 1e6);
  for (int i = 0; i < 1000; ++i) {
    const double v = u(rng) * std::pow(10.0, (i % 20) - 10);
    CHECK(io::parse_double(io::format_double(v)) == v);
  }
  CHECK(io::parse_double(" +1.5 ") == 1.5);
  CHECK_THROWS_AS(io::parse_double("1.5x"), InputError);
  CHECK_THROWS_AS(io::parse_double(""), InputError);
}

TEST_CASE("data CSV parsing") {
  const auto t = io::parse_data_csv("f1,f2\n1,2\n3,4\n5,6\n");
  CHECK(t.header == std::vector<std::string>{"f1", "f2"});
  REQUIRE(t.values.rows() == 2);
  REQUIRE(t.values.cols() == 3);
  CHECK(t.values(1, 2) == 6.0);
  CHECK_THROWS_AS(io::parse_data_csv("f1,f2\n1,2\n3\n"), InputError);
  CHECK_THROWS_AS(io::parse_data_csv("f1,f2\n1,abc\n"), InputError);
}
