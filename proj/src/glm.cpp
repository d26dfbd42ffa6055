#include "tpsd/glm.hpp"

#include <algorithm>
#include <cmath>

#include "tpsd/error.hpp"

namespace tpsd {

const char* to_string(Family f) noexcept { return f == Family::Linear ? "linear" : "logistic"; }

Family parse_family(const std::string& s) {
  if (s == "linear" || s == "gaussian") return Family::Linear;
  if (s == "logistic" || s == "binomial") return Family::Logistic;
  fail(ErrorCode::InvalidArgument, "unknown family '" + s + "'");
}

Term Term::main(std::string column) {
  Term t;
  t.kind = Kind::Main;
  t.column = std::move(column);
  return t;
}

Term Term::indicator(std::string column, double threshold) {
  Term t;
  t.kind = Kind::Indicator;
  t.column = std::move(column);
  t.threshold = threshold;
  return t;
}

Term Term::spline(std::string column, double knot) {
  Term t;
  t.kind = Kind::Spline;
  t.column = std::move(column);
  t.knot = knot;
  return t;
}

Term Term::interaction(std::vector<Term> factors) {
  Term t;
  t.kind = Kind::Interaction;
  t.factors = std::move(factors);
  return t;
}

namespace {

std::string fmt_num(double v) {
  std::string s = std::to_string(v);
  s.erase(s.find_last_not_of('0') + 1);
  if (!s.empty() && s.back() == '.') s.pop_back();
  return s;
}

}  // namespace

std::vector<std::string> Term::column_names() const {
  switch (kind) {
    case Kind::Main: return {column};
    case Kind::Indicator: return {"I(" + column + ">" + fmt_num(threshold) + ")"};
    case Kind::Spline: return {column + "<" + fmt_num(knot), column + ">" + fmt_num(knot)};
    case Kind::Interaction: {
      std::string name;
      for (const auto& f : factors) {
        auto n = f.column_names();
        if (n.size() != 1) fail(ErrorCode::InvalidArgument, "interaction factors must be single-column terms");
        name += (name.empty() ? "" : ":") + n[0];
      }
      return {name};
    }
  }
  return {};
}

void Term::referenced_columns(std::vector<std::string>& out) const {
  if (kind == Kind::Interaction) {
    for (const auto& f : factors) f.referenced_columns(out);
  } else {
    out.push_back(column);
  }
}

std::vector<std::string> ModelSpec::design_names() const {
  std::vector<std::string> names{"(Intercept)"};
  for (const auto& t : terms) {
    auto n = t.column_names();
    names.insert(names.end(), n.begin(), n.end());
  }
  return names;
}

std::size_t ModelSpec::target_index() const {
  auto names = design_names();
  if (target.empty()) {
    if (names.size() < 2) fail(ErrorCode::InvalidArgument, "model has no target coefficient");
    return 1;
  }
  auto it = std::find(names.begin(), names.end(), target);
  if (it == names.end()) fail(ErrorCode::InvalidArgument, "target '" + target + "' is not a model column");
  return static_cast<std::size_t>(it - names.begin());
}

namespace {

const std::vector<double>& source_column(const Cohort& cohort, const ColumnOverrides& overrides,
                                         const std::string& name) {
  auto it = overrides.find(name);
  if (it != overrides.end()) {
    if (it->second.size() != cohort.n_rows()) {
      fail(ErrorCode::InvalidArgument, "override for '" + name + "' has wrong length");
    }
    return it->second;
  }
  return cohort.column(name);
}

double row_value(const std::vector<double>& v, std::size_t row, const std::string& name) {
  double x = v[row];
  if (std::isnan(x)) {
    fail(ErrorCode::MissingValue, "column '" + name + "' is missing at row " + std::to_string(row + 1));
  }
  return x;
}

void fill_term(const Term& t, const Cohort& cohort, const ColumnOverrides& ov, std::span<const std::size_t> rows,
               Eigen::MatrixXd& x, Eigen::Index& col) {
  const Eigen::Index n = x.rows();
  auto row_of = [&](Eigen::Index i) { return rows.empty() ? static_cast<std::size_t>(i) : rows[static_cast<std::size_t>(i)]; };
  switch (t.kind) {
    case Term::Kind::Main: {
      const auto& v = source_column(cohort, ov, t.column);
      for (Eigen::Index i = 0; i < n; ++i) x(i, col) = row_value(v, row_of(i), t.column);
      ++col;
      break;
    }
    case Term::Kind::Indicator: {
      const auto& v = source_column(cohort, ov, t.column);
      for (Eigen::Index i = 0; i < n; ++i) x(i, col) = row_value(v, row_of(i), t.column) > t.threshold ? 1.0 : 0.0;
      ++col;
      break;
    }
    case Term::Kind::Spline: {
      const auto& v = source_column(cohort, ov, t.column);
      double lo = INFINITY, hi = -INFINITY;
      for (Eigen::Index i = 0; i < n; ++i) {
        double a = row_value(v, row_of(i), t.column);
        lo = std::min(lo, a);
        hi = std::max(hi, a);
        x(i, col) = std::min(a, t.knot);
        x(i, col + 1) = std::max(a - t.knot, 0.0);
      }
      if (n > 0 && (t.knot < lo || t.knot > hi)) {
        fail(ErrorCode::InvalidArgument, "spline knot for '" + t.column + "' is outside the observed range");
      }
      col += 2;
      break;
    }
    case Term::Kind::Interaction: {
      Eigen::MatrixXd tmp(n, 1);
      x.col(col).setOnes();
      for (const auto& f : t.factors) {
        if (f.kind == Term::Kind::Interaction || f.kind == Term::Kind::Spline) {
          fail(ErrorCode::InvalidArgument, "interaction factors must be main or indicator terms");
        }
        Eigen::Index c = 0;
        fill_term(f, cohort, ov, rows, tmp, c);
        x.col(col).array() *= tmp.col(0).array();
      }
      ++col;
      break;
    }
  }
}

}  // namespace

DesignMatrix build_design_matrix(const Cohort& cohort, const ModelSpec& spec, const ColumnOverrides& overrides,
                                 std::span<const std::size_t> rows) {
  DesignMatrix dm;
  dm.names = spec.design_names();
  const auto n = static_cast<Eigen::Index>(rows.empty() ? cohort.n_rows() : rows.size());
  dm.x.resize(n, static_cast<Eigen::Index>(dm.names.size()));
  dm.x.col(0).setOnes();
  Eigen::Index col = 1;
  for (const auto& t : spec.terms) fill_term(t, cohort, overrides, rows, dm.x, col);
  return dm;
}

Eigen::VectorXd response_vector(const Cohort& cohort, const std::string& column, const ColumnOverrides& overrides,
                                std::span<const std::size_t> rows) {
  const auto& v = source_column(cohort, overrides, column);
  const auto n = static_cast<Eigen::Index>(rows.empty() ? cohort.n_rows() : rows.size());
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    y(i) = row_value(v, rows.empty() ? static_cast<std::size_t>(i) : rows[static_cast<std::size_t>(i)], column);
  }
  return y;
}

Eigen::VectorXd predict(const Eigen::MatrixXd& x, const Eigen::VectorXd& beta, Family family) {
  Eigen::VectorXd eta = x * beta;
  if (family == Family::Logistic) eta = eta.unaryExpr([](double t) { return expit(t); });
  return eta;
}

double weighted_loglik(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const Eigen::VectorXd& w,
                       const Eigen::VectorXd& beta, Family family) {
  Eigen::VectorXd eta = x * beta;
  double ll = 0.0;
  if (family == Family::Linear) {
    for (Eigen::Index i = 0; i < eta.size(); ++i) ll -= 0.5 * w(i) * (y(i) - eta(i)) * (y(i) - eta(i));
  } else {
    // y*eta - log(1 + exp(eta)), written to avoid overflow
    for (Eigen::Index i = 0; i < eta.size(); ++i) {
      double e = eta(i);
      double log1pexp = e > 0 ? e + std::log1p(std::exp(-e)) : std::log1p(std::exp(e));
      ll += w(i) * (y(i) * e - log1pexp);
    }
  }
  return ll;
}

namespace {

void check_inputs(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const Eigen::VectorXd& w, Family family) {
  if (x.rows() != y.size() || x.rows() != w.size()) fail(ErrorCode::InvalidArgument, "fit: dimension mismatch");
  if (x.rows() < x.cols()) fail(ErrorCode::RankDeficient, "fit: fewer rows than coefficients");
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    if (!(w(i) > 0.0) || !std::isfinite(w(i))) fail(ErrorCode::InvalidArgument, "fit: weights must be positive");
  }
  if (family == Family::Logistic) {
    for (Eigen::Index i = 0; i < y.size(); ++i) {
      if (y(i) < 0.0 || y(i) > 1.0) fail(ErrorCode::InvalidArgument, "logistic response outside [0,1]");
    }
  }
}

void check_rank(const Eigen::MatrixXd& x, const Eigen::VectorXd& w) {
  Eigen::MatrixXd xs = w.cwiseSqrt().asDiagonal() * x;
  // Column-normalise so the rank threshold is scale free.
  for (Eigen::Index j = 0; j < xs.cols(); ++j) {
    double nrm = xs.col(j).norm();
    if (nrm == 0.0) fail(ErrorCode::RankDeficient, "design column " + std::to_string(j) + " is identically zero");
    xs.col(j) /= nrm;
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(xs);
  qr.setThreshold(1e-10);
  if (qr.rank() < xs.cols()) {
    fail(ErrorCode::RankDeficient, "design matrix is rank deficient (rank " + std::to_string(qr.rank()) + " < " +
                                       std::to_string(xs.cols()) + ")");
  }
}

Eigen::MatrixXd weighted_crossprod(const Eigen::MatrixXd& x, const Eigen::VectorXd& v) {
  Eigen::MatrixXd xv = x.transpose() * v.asDiagonal();
  Eigen::MatrixXd m = xv * x;
  return 0.5 * (m + m.transpose());
}

}  // namespace

FitResult fit_weighted(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const Eigen::VectorXd& w,
                       Family family, const FitOptions& opt, const Eigen::VectorXd* start) {
  check_inputs(x, y, w, family);
  if (opt.check_rank) check_rank(x, w);

  FitResult fit;
  fit.family = family;
  fit.total_weight = w.sum();
  const double tol = opt.score_tolerance * fit.total_weight;

  if (family == Family::Linear) {
    Eigen::VectorXd sw = w.cwiseSqrt();
    Eigen::MatrixXd xs = sw.asDiagonal() * x;
    Eigen::VectorXd ys = sw.cwiseProduct(y);
    fit.beta = xs.colPivHouseholderQr().solve(ys);
    fit.fitted = x * fit.beta;
    fit.info = weighted_crossprod(x, w) / fit.total_weight;
    Eigen::VectorXd score = x.transpose() * (w.cwiseProduct(y - fit.fitted));
    fit.max_abs_score = score.cwiseAbs().maxCoeff();
    fit.iterations = 1;
    fit.objective_trace.push_back(weighted_loglik(x, y, w, fit.beta, family));
    // Score is zero up to rounding; scale the check by the response magnitude.
    double scale = std::max(1.0, y.cwiseAbs().maxCoeff()) * std::max(1.0, x.cwiseAbs().maxCoeff());
    fit.converged = fit.max_abs_score < tol * scale;
    return fit;
  }

  Eigen::VectorXd beta = start ? *start : Eigen::VectorXd::Zero(x.cols());
  if (beta.size() != x.cols()) fail(ErrorCode::InvalidArgument, "fit: start vector has wrong length");
  double ll = weighted_loglik(x, y, w, beta, family);
  fit.objective_trace.push_back(ll);
  Eigen::VectorXd mu, v, score;
  Eigen::MatrixXd info;
  for (int iter = 0;; ++iter) {
    mu = predict(x, beta, family);
    v = w.cwiseProduct(mu.cwiseProduct((1.0 - mu.array()).matrix()));
    score = x.transpose() * (w.cwiseProduct(y - mu));
    fit.max_abs_score = score.cwiseAbs().maxCoeff();
    fit.iterations = iter;
    if (fit.max_abs_score < tol) {
      fit.converged = true;
      break;
    }
    if (iter >= opt.max_iterations) {
      fail(ErrorCode::NonConvergence, "IRLS did not converge in " + std::to_string(opt.max_iterations) +
                                          " iterations (max |score| " + std::to_string(fit.max_abs_score) + ")");
    }
    info = weighted_crossprod(x, v);
    Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
    if (ldlt.info() != Eigen::Success) fail(ErrorCode::Singular, "IRLS: singular information matrix");
    Eigen::VectorXd step = ldlt.solve(score);
    double t = 1.0;
    Eigen::VectorXd trial = beta + step;
    double trial_ll = weighted_loglik(x, y, w, trial, family);
    // Near the optimum the likelihood changes by less than rounding error.
    const double slack = 1e-12 * (1.0 + std::abs(ll));
    int halvings = 0;
    while (!(trial_ll >= ll - slack) && halvings < opt.max_halvings) {
      t *= 0.5;
      trial = beta + t * step;
      trial_ll = weighted_loglik(x, y, w, trial, family);
      ++halvings;
    }
    if (!(trial_ll >= ll - slack)) {
      fail(ErrorCode::NonConvergence, "IRLS step-halving failed to increase the likelihood");
    }
    beta = trial;
    ll = trial_ll;
    fit.objective_trace.push_back(ll);
    if (beta.cwiseAbs().maxCoeff() > opt.separation_bound) {
      fail(ErrorCode::Separation, "coefficients diverge (|beta| > " + std::to_string(opt.separation_bound) +
                                      "); the data appear separated");
    }
  }
  fit.beta = beta;
  fit.fitted = mu;
  fit.info = weighted_crossprod(x, v) / fit.total_weight;
  return fit;
}

Eigen::MatrixXd influence_functions(const FitResult& fit, const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
  if (!fit.converged) fail(ErrorCode::NonConvergence, "influence functions need a converged fit");
  if (x.rows() != y.size() || x.cols() != fit.beta.size()) {
    fail(ErrorCode::InvalidArgument, "influence_functions: dimension mismatch");
  }
  Eigen::LDLT<Eigen::MatrixXd> ldlt(fit.info);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive() || ldlt.vectorD().minCoeff() <= 0.0) {
    fail(ErrorCode::Singular, "information matrix is singular");
  }
  Eigen::VectorXd resid = y - predict(x, fit.beta, fit.family);
  // h = diag(resid) X I^{-1}  (I symmetric)
  Eigen::MatrixXd h = ldlt.solve(x.transpose()).transpose();
  h.array().colwise() *= resid.array();
  return h;
}

}  // namespace tpsd
