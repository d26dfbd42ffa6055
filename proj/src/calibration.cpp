#include "tpsd/calibration.hpp"

#include <cmath>
#include <limits>

#include "tpsd/error.hpp"

namespace tpsd {

const char* to_string(Distance d) noexcept { return d == Distance::ChiSquare ? "chi-square" : "exponential"; }

Distance parse_distance(const std::string& s) {
  if (s == "chi-square" || s == "chisq" || s == "linear") return Distance::ChiSquare;
  if (s == "exponential" || s == "raking") return Distance::Exponential;
  fail(ErrorCode::InvalidArgument, "unknown calibration distance '" + s + "'");
}

double constraint_gap(const Eigen::VectorXd& weights, const Eigen::VectorXd& base, const Eigen::MatrixXd& s,
                      const Eigen::VectorXd& totals) {
  Eigen::VectorXd achieved = s.transpose() * weights;
  Eigen::VectorXd scale = s.cwiseAbs().transpose() * base;
  double worst = 0.0;
  for (Eigen::Index j = 0; j < totals.size(); ++j) {
    double denom = std::max({std::abs(totals(j)), scale(j), std::numeric_limits<double>::min()});
    worst = std::max(worst, std::abs(achieved(j) - totals(j)) / denom);
  }
  return worst;
}

namespace {

// Linear map A with (S A)' D (S A) = I. Constraints and multipliers carry over
// through A, so the problem is solved in the whitened coordinates.
Eigen::MatrixXd whitening(const Eigen::VectorXd& base, const Eigen::MatrixXd& s) {
  const Eigen::Index p = s.cols();
  Eigen::VectorXd c(p);
  for (Eigen::Index j = 0; j < p; ++j) {
    c(j) = std::sqrt((base.array() * s.col(j).array().square()).sum());
    if (!(c(j) > 0.0) || !std::isfinite(c(j))) {
      fail(ErrorCode::Singular, "auxiliary column " + std::to_string(j) + " is zero on the sample");
    }
  }
  Eigen::MatrixXd sc = s * c.cwiseInverse().asDiagonal();
  Eigen::MatrixXd m = sc.transpose() * base.asDiagonal() * sc;
  Eigen::LLT<Eigen::MatrixXd> llt(0.5 * (m + m.transpose()));
  if (llt.info() != Eigen::Success) fail(ErrorCode::Singular, "auxiliaries are not of full column rank on the sample");
  Eigen::VectorXd diag = llt.matrixL().toDenseMatrix().diagonal();
  if (diag.minCoeff() < 1e-7 * diag.maxCoeff()) {
    fail(ErrorCode::Singular, "auxiliaries are numerically collinear on the sample");
  }
  // A = diag(1/c) L^{-T}
  Eigen::MatrixXd linv_t = llt.matrixU().solve(Eigen::MatrixXd::Identity(p, p));
  return c.cwiseInverse().asDiagonal() * linv_t;
}

}  // namespace

CalibrationResult calibrate(const Eigen::VectorXd& base, const Eigen::MatrixXd& s, const Eigen::VectorXd& totals,
                            Distance distance, const CalibrationOptions& opt) {
  if (s.rows() != base.size() || s.cols() != totals.size()) {
    fail(ErrorCode::InvalidArgument, "calibrate: dimension mismatch");
  }
  if (s.rows() < s.cols()) fail(ErrorCode::Singular, "calibrate: fewer sampled units than constraints");
  for (Eigen::Index i = 0; i < base.size(); ++i) {
    if (!(base(i) > 0.0)) fail(ErrorCode::InvalidArgument, "calibrate: base weights must be positive");
  }

  const Eigen::MatrixXd a = whitening(base, s);
  const Eigen::MatrixXd sw = s * a;
  const Eigen::VectorXd tw = a.transpose() * totals;

  CalibrationResult res;
  Eigen::VectorXd lam_w = Eigen::VectorXd::Zero(s.cols());

  if (distance == Distance::ChiSquare) {
    // w = d (1 + S lambda); in whitened coordinates the normal matrix is I.
    Eigen::VectorXd sum0 = sw.transpose() * base;
    lam_w = tw - sum0;
    res.weights = base.cwiseProduct((1.0 + (sw * lam_w).array()).matrix());
    res.iterations = 1;
  } else {
    auto weights_at = [&](const Eigen::VectorXd& lam) {
      Eigen::VectorXd eta = sw * lam;
      Eigen::VectorXd w(eta.size());
      for (Eigen::Index i = 0; i < eta.size(); ++i) {
        w(i) = eta(i) > 700.0 ? std::numeric_limits<double>::infinity() : base(i) * std::exp(eta(i));
      }
      return w;
    };
    auto gap_norm = [&](const Eigen::VectorXd& w) {
      double g = (sw.transpose() * w - tw).norm();
      return std::isfinite(g) ? g : std::numeric_limits<double>::infinity();
    };

    Eigen::VectorXd w = base;
    double gap = gap_norm(w);
    int bad = 0;
    for (int iter = 0; iter < opt.max_iterations; ++iter) {
      res.iterations = iter;
      if (constraint_gap(w, base, s, totals) < opt.tolerance) break;
      Eigen::VectorXd g = sw.transpose() * w - tw;
      Eigen::MatrixXd jac = sw.transpose() * w.asDiagonal() * sw;
      Eigen::LDLT<Eigen::MatrixXd> ldlt(0.5 * (jac + jac.transpose()));
      if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) {
        fail(ErrorCode::Singular, "calibration: singular Jacobian");
      }
      Eigen::VectorXd step = ldlt.solve(-g);
      double t = 1.0;
      Eigen::VectorXd trial = lam_w + step;
      Eigen::VectorXd trial_w = weights_at(trial);
      double trial_gap = gap_norm(trial_w);
      for (int h = 0; h < opt.max_halvings && !(trial_gap < gap); ++h) {
        t *= 0.5;
        trial = lam_w + t * step;
        trial_w = weights_at(trial);
        trial_gap = gap_norm(trial_w);
      }
      if (!std::isfinite(trial_gap)) fail(ErrorCode::Divergence, "calibration: weights overflow");
      bad = trial_gap < gap ? 0 : bad + 1;
      if (bad >= opt.divergence_limit) {
        fail(ErrorCode::Divergence, "calibration: constraint gap grew for " + std::to_string(bad) +
                                        " consecutive damped Newton steps");
      }
      lam_w = trial;
      w = trial_w;
      gap = trial_gap;
      res.iterations = iter + 1;
    }
    res.weights = w;
  }

  res.lambda = a * lam_w;
  res.constraint_residual = constraint_gap(res.weights, base, s, totals);
  res.converged = res.constraint_residual < opt.tolerance;
  res.negative_weights = (res.weights.array() < 0.0).any();
  return res;
}

double greg_total(const Eigen::VectorXd& y, const CalibrationResult& result) {
  if (!result.converged) fail(ErrorCode::InvalidArgument, "greg_total: calibration did not converge");
  if (y.size() != result.weights.size()) fail(ErrorCode::InvalidArgument, "greg_total: length mismatch");
  return result.weights.dot(y);
}

}  // namespace tpsd
