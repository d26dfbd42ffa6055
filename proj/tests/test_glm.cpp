#include <cmath>
#include <random>

#include "test_util.hpp"
#include "tpsd/glm.hpp"

using namespace tpsd;
using test::code_of;

namespace {

Eigen::MatrixXd with_intercept(const std::vector<std::vector<double>>& cols) {
  Eigen::MatrixXd x(static_cast<Eigen::Index>(cols[0].size()), static_cast<Eigen::Index>(cols.size() + 1));
  x.col(0).setOnes();
  for (std::size_t j = 0; j < cols.size(); ++j) {
    for (std::size_t i = 0; i < cols[j].size(); ++i) x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j + 1)) = cols[j][i];
  }
  return x;
}

Eigen::VectorXd to_vec(const std::vector<double>& v) { return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())); }

// Cyclic one-coordinate Newton ascent on the logistic log-likelihood.
Eigen::VectorXd logistic_oracle(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const Eigen::VectorXd& w) {
  Eigen::VectorXd b = Eigen::VectorXd::Zero(x.cols());
  for (int sweep = 0; sweep < 20000; ++sweep) {
    double worst = 0.0;
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      double g = 0.0, hess = 0.0;
      for (Eigen::Index i = 0; i < x.rows(); ++i) {
        double p = expit(x.row(i).dot(b));
        g += w(i) * x(i, j) * (y(i) - p);
        hess += w(i) * x(i, j) * x(i, j) * p * (1 - p);
      }
      b(j) += g / hess;
      worst = std::max(worst, std::abs(g));
    }
    if (worst < 1e-13) break;
  }
  return b;
}

struct LogisticData {
  Eigen::MatrixXd x;
  Eigen::VectorXd y, w;
};

LogisticData logistic_data(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto x1 = test::normals(n, rng);
  std::bernoulli_distribution coin(0.4);
  std::vector<double> x2(n);
  for (auto& v : x2) v = coin(rng);
  LogisticData d{with_intercept({x1, x2}), Eigen::VectorXd(n), Eigen::VectorXd(n)};
  std::uniform_real_distribution<double> u(0, 1);
  for (std::size_t i = 0; i < n; ++i) {
    double p = expit(-0.5 + 0.8 * x1[i] - 0.7 * x2[i]);
    d.y(i) = u(rng) < p ? 1.0 : 0.0;
    d.w(i) = 1.0 + 3.0 * u(rng);
  }
  return d;
}

}  // namespace

TEST_CASE("design matrix: intercept, spline, indicator and interaction columns") {
  Cohort c(4);
  c.set_column("y", {0, 1, 0, 1}, ColumnRole::Outcome);
  c.set_column("age", {0.5, 1.0, 2.0, 4.0}, ColumnRole::Phase1);
  c.set_column("stage", {1, 3, 4, 2}, ColumnRole::Phase1);
  c.set_column("diam", {10, 12, 7, 5}, ColumnRole::Phase1);
  ModelSpec spec{Family::Logistic, "y",
                 {Term::spline("age", 1.0), Term::interaction({Term::indicator("stage", 2.5), Term::main("diam")})},
                 ""};
  auto d = build_design_matrix(c, spec, {}, {});
  REQUIRE(d.x.cols() == 4);
  CHECK(d.names == std::vector<std::string>{"(Intercept)", "age<1", "age>1", "I(stage>2.5):diam"});
  Eigen::MatrixXd expect(4, 4);
  expect << 1, 0.5, 0, 0,
            1, 1.0, 0, 12,
            1, 1.0, 1, 7,
            1, 1.0, 3, 0;
  CHECK((d.x - expect).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("design matrix errors") {
  Cohort c(3);
  c.set_column("y", {1, 2, 3}, ColumnRole::Outcome);
  c.set_column("a", {1, 2, 3}, ColumnRole::Phase1);
  c.set_column("b", {2, 4, 6}, ColumnRole::Phase1);
  auto collinear = build_design_matrix(c, {Family::Linear, "y", {Term::main("a"), Term::main("b")}, ""});
  Eigen::VectorXd y{{1.0, 2.0, 3.0}};
  CHECK(code_of([&] { fit_weighted(collinear.x, y, Eigen::VectorXd::Ones(3), Family::Linear); }) ==
        ErrorCode::RankDeficient);
  CHECK(code_of([&] { build_design_matrix(c, {Family::Linear, "y", {Term::main("nope")}, ""}); }) ==
        ErrorCode::MissingColumn);
  CHECK(code_of([&] { build_design_matrix(c, {Family::Linear, "y", {Term::spline("a", 9.0)}, ""}); }) ==
        ErrorCode::InvalidArgument);
  ColumnOverrides bad{{"a", {1.0, 2.0}}};
  CHECK(code_of([&] { build_design_matrix(c, {Family::Linear, "y", {Term::main("a")}, ""}, bad); }) ==
        ErrorCode::InvalidArgument);
}

TEST_CASE("linear fit matches the weighted normal equations") {
  std::mt19937_64 rng(11);
  const std::size_t n = 150;
  auto a = test::normals(n, rng), b = test::normals(n, rng), e = test::normals(n, rng);
  std::vector<double> y(n), w(n);
  std::uniform_real_distribution<double> u(0.5, 4.0);
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = 1.0 + 2.0 * a[i] - b[i] + e[i];
    w[i] = u(rng);
  }
  Eigen::MatrixXd x = with_intercept({a, b});
  Eigen::VectorXd wy = to_vec(w), yy = to_vec(y);
  auto fit = fit_weighted(x, yy, wy, Family::Linear);
  Eigen::MatrixXd xtwx = x.transpose() * wy.asDiagonal() * x;
  Eigen::VectorXd oracle = xtwx.ldlt().solve(x.transpose() * wy.asDiagonal() * yy);
  CHECK(fit.converged);
  CHECK((fit.beta - oracle).cwiseAbs().maxCoeff() < 1e-10);
  CHECK((fit.info - xtwx / wy.sum()).cwiseAbs().maxCoeff() < 1e-10);
  CHECK((fit.info - fit.info.transpose()).cwiseAbs().maxCoeff() == 0.0);
  CHECK(fit.info.llt().info() == Eigen::Success);
}

TEST_CASE("exactly linear response is interpolated") {
  std::vector<double> a{0, 1, 2, 3, 4}, y{3, 5, 7, 9, 11};
  auto fit = fit_weighted(with_intercept({a}), to_vec(y), Eigen::VectorXd::Ones(5), Family::Linear);
  CHECK(fit.beta(0) == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(fit.beta(1) == doctest::Approx(2.0).epsilon(1e-12));
  CHECK((fit.fitted - to_vec(y)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("weight 2 equals a duplicated row") {
  auto d = logistic_data(80, 5);
  Eigen::VectorXd w = Eigen::VectorXd::Ones(80);
  w(7) = 2.0;
  Eigen::MatrixXd xd(81, d.x.cols());
  xd << d.x, d.x.row(7);
  Eigen::VectorXd yd(81);
  yd << d.y, d.y(7);
  for (Family f : {Family::Linear, Family::Logistic}) {
    auto a = fit_weighted(d.x, d.y, w, f);
    auto b = fit_weighted(xd, yd, Eigen::VectorXd::Ones(81), f);
    CHECK((a.beta - b.beta).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("logistic fit agrees with an independent maximiser") {
  auto d = logistic_data(200, 17);
  auto fit = fit_weighted(d.x, d.y, d.w, Family::Logistic);
  Eigen::VectorXd oracle = logistic_oracle(d.x, d.y, d.w);
  CHECK(fit.converged);
  CHECK((fit.beta - oracle).cwiseAbs().maxCoeff() < 1e-6);
  Eigen::VectorXd score = d.x.transpose() * d.w.cwiseProduct(d.y - predict(d.x, fit.beta, Family::Logistic));
  CHECK(score.cwiseAbs().maxCoeff() < 1e-8 * d.w.sum());
  CHECK((fit.info - fit.info.transpose()).cwiseAbs().maxCoeff() == 0.0);
  CHECK(fit.info.llt().info() == Eigen::Success);
}

TEST_CASE("IRLS log-likelihood never decreases") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    auto d = logistic_data(120, seed);
    Eigen::VectorXd start = Eigen::VectorXd::Constant(d.x.cols(), 3.0);
    auto fit = fit_weighted(d.x, d.y, d.w, Family::Logistic, {}, &start);
    for (std::size_t t = 1; t < fit.objective_trace.size(); ++t) {
      CHECK(fit.objective_trace[t] >= fit.objective_trace[t - 1] - 1e-12 * (1 + std::abs(fit.objective_trace[t - 1])));
    }
  }
}

TEST_CASE("fit errors") {
  Eigen::MatrixXd x = with_intercept({{-0.01, -0.01, 0.01, 0.01, -0.02, 0.02}});
  Eigen::VectorXd y(6);
  y << 0, 0, 1, 1, 0, 1;
  CHECK(code_of([&] { fit_weighted(x, y, Eigen::VectorXd::Ones(6), Family::Logistic); }) == ErrorCode::Separation);
  FitOptions few;
  few.max_iterations = 1;
  auto d = logistic_data(100, 3);
  CHECK(code_of([&] { fit_weighted(d.x, d.y, d.w, Family::Logistic, few); }) == ErrorCode::NonConvergence);
  Eigen::VectorXd w = d.w;
  w(0) = 0.0;
  CHECK(code_of([&] { fit_weighted(d.x, d.y, w, Family::Logistic); }) == ErrorCode::InvalidArgument);
  Eigen::VectorXd y2 = d.y;
  y2(0) = 2.0;
  CHECK(code_of([&] { fit_weighted(d.x, y2, d.w, Family::Logistic); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("influence functions sum to zero") {
  auto d = logistic_data(300, 23);
  for (Family f : {Family::Linear, Family::Logistic}) {
    auto fit = fit_weighted(d.x, d.y, Eigen::VectorXd::Ones(300), f);
    Eigen::MatrixXd h = influence_functions(fit, d.x, d.y);
    REQUIRE(h.rows() == 300);
    REQUIRE(h.cols() == 3);
    double scale = h.cwiseAbs().colwise().sum().maxCoeff();
    CHECK(h.colwise().sum().cwiseAbs().maxCoeff() < 1e-8 * scale);
  }
}

TEST_CASE("linear influence functions match leave-one-out refits") {
  std::mt19937_64 rng(31);
  const std::size_t n = 200;
  auto a = test::normals(n, rng), e = test::normals(n, rng);
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = 0.5 + a[i] + e[i];
  Eigen::MatrixXd x = with_intercept({a});
  Eigen::VectorXd yy = to_vec(y);
  auto fit = fit_weighted(x, yy, Eigen::VectorXd::Ones(n), Family::Linear);
  Eigen::MatrixXd h = influence_functions(fit, x, yy);
  Eigen::MatrixXd xtx_inv = (x.transpose() * x).inverse();
  for (Eigen::Index i : {0, 17, 99, 150, 199}) {
    Eigen::MatrixXd xm(n - 1, 2);
    Eigen::VectorXd ym(n - 1);
    for (Eigen::Index r = 0, j = 0; r < static_cast<Eigen::Index>(n); ++r) {
      if (r == i) continue;
      xm.row(j) = x.row(r);
      ym(j++) = yy(r);
    }
    auto loo = fit_weighted(xm, ym, Eigen::VectorXd::Ones(n - 1), Family::Linear);
    Eigen::VectorXd dfbeta = static_cast<double>(n) * (fit.beta - loo.beta);
    // Plain dfbeta agrees to O(1/N); the leverage-corrected form is exact.
    double tol = 5e-2 * h.row(i).norm();
    CHECK((dfbeta.transpose() - h.row(i)).norm() < tol + 5e-2);
    double lev = x.row(i) * xtx_inv * x.row(i).transpose();
    CHECK((dfbeta.transpose() * (1 - lev) - h.row(i)).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("perturbing one response moves the coefficients along its influence direction") {
  std::mt19937_64 rng(41);
  const std::size_t n = 100;
  auto a = test::normals(n, rng), e = test::normals(n, rng);
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = a[i] + e[i];
  Eigen::MatrixXd x = with_intercept({a});
  Eigen::VectorXd yy = to_vec(y);
  auto fit = fit_weighted(x, yy, Eigen::VectorXd::Ones(n), Family::Linear);
  const double delta = 1e-6;
  for (Eigen::Index j : {3, 40, 77}) {
    Eigen::VectorXd y2 = yy;
    y2(j) += delta;
    auto fit2 = fit_weighted(x, y2, Eigen::VectorXd::Ones(n), Family::Linear);
    // d beta / d y_j = I^{-1} x_j / N = h_j / (N resid_j)
    Eigen::VectorXd slope = (fit2.beta - fit.beta) / delta;
    Eigen::VectorXd expect = fit.info.ldlt().solve(x.row(j).transpose()) / static_cast<double>(n);
    CHECK((slope - expect).cwiseAbs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("linear influence functions do not depend on the generating coefficients") {
  std::mt19937_64 rng(43);
  const std::size_t n = 120;
  auto a = test::normals(n, rng), e = test::normals(n, rng);
  Eigen::MatrixXd x = with_intercept({a});
  Eigen::MatrixXd h[2];
  double betas[2] = {0.0, 2.5};
  for (int s = 0; s < 2; ++s) {
    Eigen::VectorXd y(n);
    for (std::size_t i = 0; i < n; ++i) y(i) = betas[s] * a[i] + e[i];
    auto fit = fit_weighted(x, y, Eigen::VectorXd::Ones(n), Family::Linear);
    h[s] = influence_functions(fit, x, y);
  }
  CHECK((h[0] - h[1]).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("intercept-only logistic influence is proportional to y minus its mean") {
  Eigen::VectorXd y(10);
  y << 1, 0, 0, 1, 0, 0, 0, 1, 0, 0;
  Eigen::MatrixXd x = Eigen::MatrixXd::Ones(10, 1);
  auto fit = fit_weighted(x, y, Eigen::VectorXd::Ones(10), Family::Logistic);
  Eigen::MatrixXd h = influence_functions(fit, x, y);
  const double ybar = 0.3;
  for (Eigen::Index i = 0; i < 10; ++i) {
    CHECK(h(i, 0) == doctest::Approx((y(i) - ybar) / (ybar * (1 - ybar))).epsilon(1e-6));
  }
}

TEST_CASE("influence functions need a converged fit") {
  FitResult fit;
  fit.beta = Eigen::VectorXd::Zero(1);
  CHECK(code_of([&] { influence_functions(fit, Eigen::MatrixXd::Ones(2, 1), Eigen::VectorXd::Zero(2)); }) ==
        ErrorCode::NonConvergence);
}
