#pragma once

// Maximum likelihood by Fisher scoring, Wald intervals, information
// criteria, basis-size selection and conditional smoothing.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/distributions/normal.hpp>

#include "graphcov/errors.hpp"
#include "graphcov/likelihood.hpp"
#include "graphcov/models.hpp"

namespace graphcov {

struct FitOptions {
  double gamma = 1.0;  // initial step scale, 0 < gamma <= 1
  double tol = 1e-6;   // on the gradient sup-norm
  double rel_tol = 1e-10;
  int max_iter = 100;
  int max_halvings = 20;
  double divergence_bound = 50.0;
  double max_condition = 1e14;
  /// Variance parameters (sigma2, tau2) are bounded below by this fraction of
  /// the data variance, and |logit((kappa+1)/2)| by kappa_logit_bound. A
  /// parameter whose MLE lies on such a bound is held there (active set).
  double variance_floor_ratio = 1e-6;
  double kappa_logit_bound = 9.0;
  bool observed_hessian = true;
  double hessian_step = 1e-5;

  void validate() const {
    detail::require(gamma > 0.0 && gamma <= 1.0, "step scale gamma must lie in (0, 1]");
    detail::require(tol > 0.0, "tolerance must be > 0");
    detail::require(max_iter >= 1, "max_iter must be >= 1");
    detail::require(max_halvings >= 0, "max_halvings must be >= 0");
    detail::require(variance_floor_ratio > 0.0 && kappa_logit_bound > 0.0, "parameter bounds must be > 0");
  }
};

struct IterationRecord {
  int iteration = 0;
  double loglik = 0.0;
  double gradient_norm = 0.0;
  double step_scale = 0.0;
};

struct FitResult {
  std::vector<std::string> names;
  std::vector<ParameterKind> kinds;
  Eigen::VectorXd theta;    // transformed scale
  Eigen::VectorXd natural;  // natural scale
  double loglik = -std::numeric_limits<double>::infinity();
  double beta0 = 0.0;
  bool mean_estimated = false;
  double beta0_se = std::numeric_limits<double>::quiet_NaN();
  Eigen::VectorXd gradient;
  Eigen::MatrixXd information;
  std::optional<Eigen::MatrixXd> hessian;
  std::vector<IterationRecord> trace;
  bool converged = false;
  bool diverged = false;
  int iterations = 0;
  std::string message;
  /// Parameters held on a bound (for example a variance whose MLE is zero).
  std::vector<std::string> at_boundary;
  int free_parameters = 0;
  int n = 0;
  int p = 0;
  double aic = std::numeric_limits<double>::quiet_NaN();
  double bic = std::numeric_limits<double>::quiet_NaN();
};

struct InformationCriteria {
  double aic;
  double bic;
};

/// AIC = -2 l + 2 k, BIC = -2 l + k log(n p).
inline InformationCriteria information_criteria(double loglik, int k, int n, int p) {
  detail::require(k >= 0 && n >= 1 && p >= 1, "information criteria need k >= 0, n >= 1, p >= 1");
  return {-2.0 * loglik + 2.0 * k, -2.0 * loglik + k * std::log(static_cast<double>(n) * p)};
}

inline InformationCriteria information_criteria(const FitResult& fit) {
  return information_criteria(fit.loglik, fit.free_parameters, fit.n, fit.p);
}

namespace detail {

inline double data_variance(const Eigen::MatrixXd& y, const MeanPolicy& mean) {
  const double centre = mean.estimate ? y.mean() : mean.value;
  const double v = (y.array() - centre).square().mean();
  return v > 0.0 ? v : 1.0;
}

inline double safe_log_likelihood(const Eigen::MatrixXd& y, const Eigen::VectorXd& theta, const ModelContext& ctx) {
  try {
    const double l = log_likelihood(y, theta, ctx);
    return std::isfinite(l) ? l : -std::numeric_limits<double>::infinity();
  } catch (const NumericalError&) {
    return -std::numeric_limits<double>::infinity();
  }
}

}  // namespace detail

/// Starting values: variance parameters from the data variance (split 0.8 /
/// 0.2 with a nugget), kappa = 0.9, then a line search over the model's
/// scale direction (GDEF intercept or Matérn range).
inline Eigen::VectorXd initial_theta(const Eigen::MatrixXd& y, const ModelContext& ctx) {
  const ParameterLayout& layout = ctx->layout();
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(layout.dim());
  const double v = detail::data_variance(y, ctx.mean);
  const bool nugget = layout.find(ParameterKind::log_tau2).has_value();
  if (auto i = layout.find(ParameterKind::log_sigma2)) theta(*i) = std::log(nugget ? 0.8 * v : v);
  if (auto i = layout.find(ParameterKind::log_tau2)) theta(*i) = std::log(0.2 * v);
  if (auto i = layout.find(ParameterKind::logit_kappa)) theta(*i) = from_natural(ParameterKind::logit_kappa, 0.9);

  if (auto dir = ctx->scale_direction()) {
    double best = -std::numeric_limits<double>::infinity();
    Eigen::VectorXd best_theta = theta;
    for (int s = -12; s <= 12; ++s) {
      const Eigen::VectorXd candidate = theta + (0.5 * s) * (*dir);
      const double l = detail::safe_log_likelihood(y, candidate, ctx);
      if (l > best) {
        best = l;
        best_theta = candidate;
      }
    }
    theta = best_theta;
  }
  return theta;
}

/// Copies entries with matching parameter names from a previous fit; new
/// parameters keep the values in `base` (zero for new basis coefficients).
inline Eigen::VectorXd transfer_theta(const FitResult& previous, const ParameterLayout& layout,
                                      Eigen::VectorXd base) {
  detail::require(base.size() == layout.dim(), "base theta has wrong length");
  for (std::size_t j = 0; j < previous.names.size(); ++j) {
    const auto i = layout.find(previous.names[j]);
    if (i && layout[*i].kind == previous.kinds[j]) base(*i) = previous.theta(static_cast<Eigen::Index>(j));
  }
  for (int i = 0; i < layout.dim(); ++i) {
    const bool known = std::find(previous.names.begin(), previous.names.end(), layout[i].name) != previous.names.end();
    if (!known && layout[i].kind == ParameterKind::eta) base(i) = 0.0;
  }
  return base;
}

namespace detail {

inline Eigen::MatrixXd finite_difference_hessian(const Eigen::MatrixXd& y, const Eigen::VectorXd& theta,
                                                 const ModelContext& ctx, double h) {
  const Eigen::Index d = theta.size();
  Eigen::MatrixXd hess(d, d);
  for (Eigen::Index j = 0; j < d; ++j) {
    Eigen::VectorXd plus = theta, minus = theta;
    plus(j) += h;
    minus(j) -= h;
    const Eigen::VectorXd gp = evaluate_likelihood(y, plus, ctx, Derivatives::gradient).gradient;
    const Eigen::VectorXd gm = evaluate_likelihood(y, minus, ctx, Derivatives::gradient).gradient;
    hess.col(j) = (gp - gm) / (2.0 * h);
  }
  return 0.5 * (hess + hess.transpose());
}

inline void fill_fit(FitResult& fit, const Eigen::MatrixXd& y, const ModelContext& ctx, const LikelihoodTerms& t,
                     const Eigen::VectorXd& theta) {
  const ParameterLayout& layout = ctx->layout();
  fit.theta = theta;
  fit.natural = layout.natural(theta);
  fit.loglik = t.loglik;
  fit.beta0 = t.beta0;
  fit.beta0_se = ctx.mean.estimate ? 1.0 / std::sqrt(t.beta0_information) : std::numeric_limits<double>::quiet_NaN();
  fit.gradient = t.gradient;
  fit.information = t.information;
  fit.n = static_cast<int>(y.rows());
  fit.p = static_cast<int>(y.cols());
  fit.free_parameters = layout.dim() + (ctx.mean.estimate ? 1 : 0);
  const auto ic = information_criteria(fit.loglik, fit.free_parameters, fit.n, fit.p);
  fit.aic = ic.aic;
  fit.bic = ic.bic;
}

}  // namespace detail

/// Fisher scoring: theta <- theta + gamma I^-1 grad, with gamma halved until
/// the log-likelihood does not decrease. Divergence (|theta|_inf above the
/// bound, or no acceptable step after max_halvings halvings) is flagged in
/// the result. An ill-conditioned information matrix throws NumericalError.
inline FitResult fit_mle(const Eigen::MatrixXd& y, const ModelContext& ctx,
                         std::optional<Eigen::VectorXd> theta0 = std::nullopt, const FitOptions& options = {}) {
  options.validate();
  const ParameterLayout& layout = ctx->layout();
  detail::check_data(y, ctx->nodes());
  Eigen::VectorXd theta = theta0 ? *theta0 : initial_theta(y, ctx);
  detail::require(theta.size() == layout.dim(), "starting theta has " + std::to_string(theta.size()) +
                                                    " entries, expected " + std::to_string(layout.dim()));

  FitResult fit;
  fit.names = layout.names();
  for (const auto& e : layout.entries()) fit.kinds.push_back(e.kind);
  fit.mean_estimated = ctx.mean.estimate;

  const double inf = std::numeric_limits<double>::infinity();
  Eigen::VectorXd lower = Eigen::VectorXd::Constant(layout.dim(), -inf);
  Eigen::VectorXd upper = Eigen::VectorXd::Constant(layout.dim(), inf);
  const double variance_floor = std::log(options.variance_floor_ratio * detail::data_variance(y, ctx.mean));
  for (int i = 0; i < layout.dim(); ++i) {
    const auto kind = layout[i].kind;
    if (kind == ParameterKind::log_sigma2 || kind == ParameterKind::log_tau2) lower(i) = variance_floor;
    if (kind == ParameterKind::logit_kappa) {
      lower(i) = -options.kappa_logit_bound;
      upper(i) = options.kappa_logit_bound;
    }
  }
  theta = theta.cwiseMax(lower).cwiseMin(upper);
  // Coordinates held on a bound because the likelihood pushes them outward.
  auto active_set = [&](const Eigen::VectorXd& th, const Eigen::VectorXd& grad) {
    std::vector<bool> held(static_cast<std::size_t>(th.size()), false);
    for (Eigen::Index i = 0; i < th.size(); ++i) {
      held[static_cast<std::size_t>(i)] = (th(i) <= lower(i) + 1e-12 && grad(i) < 0.0) ||
                                          (th(i) >= upper(i) - 1e-12 && grad(i) > 0.0);
    }
    return held;
  };
  auto projected_norm = [&](const Eigen::VectorXd& grad, const std::vector<bool>& held) {
    double m = 0.0;
    for (Eigen::Index i = 0; i < grad.size(); ++i)
      if (!held[static_cast<std::size_t>(i)]) m = std::max(m, std::abs(grad(i)));
    return m;
  };

  LikelihoodTerms current = evaluate_likelihood(y, theta, ctx, Derivatives::information);
  std::vector<bool> held = active_set(theta, current.gradient);
  fit.trace.push_back({0, current.loglik, projected_norm(current.gradient, held), 0.0});

  for (int it = 1; it <= options.max_iter; ++it) {
    if (layout.dim() == 0 || projected_norm(current.gradient, held) < options.tol) {
      fit.converged = true;
      break;
    }
    std::vector<Eigen::Index> free;
    for (Eigen::Index i = 0; i < theta.size(); ++i)
      if (!held[static_cast<std::size_t>(i)]) free.push_back(i);
    const auto m = static_cast<Eigen::Index>(free.size());
    Eigen::MatrixXd info(m, m);
    Eigen::VectorXd grad(m);
    for (Eigen::Index a = 0; a < m; ++a) {
      grad(a) = current.gradient(free[static_cast<std::size_t>(a)]);
      for (Eigen::Index b = 0; b < m; ++b)
        info(a, b) = current.information(free[static_cast<std::size_t>(a)], free[static_cast<std::size_t>(b)]);
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(info);
    const double lo = eig.eigenvalues().minCoeff();
    const double hi = eig.eigenvalues().maxCoeff();
    if (!(lo > 0.0) || hi / lo > options.max_condition) {
      throw NumericalError("expected information is ill-conditioned (condition number " +
                           std::to_string(lo > 0.0 ? hi / lo : std::numeric_limits<double>::infinity()) + ") at " +
                           detail::theta_text(theta));
    }
    const Eigen::VectorXd reduced =
        eig.eigenvectors() * (eig.eigenvalues().cwiseInverse().asDiagonal() * (eig.eigenvectors().transpose() * grad));
    Eigen::VectorXd direction = Eigen::VectorXd::Zero(theta.size());
    for (Eigen::Index a = 0; a < m; ++a) direction(free[static_cast<std::size_t>(a)]) = reduced(a);
    const double predicted_gain = grad.dot(reduced);

    double step = options.gamma;
    bool accepted = false;
    bool escaped = false;
    Eigen::VectorXd candidate;
    double candidate_loglik = -std::numeric_limits<double>::infinity();
    for (int h = 0; h <= options.max_halvings; ++h, step *= 0.5) {
      candidate = (theta + step * direction).cwiseMax(lower).cwiseMin(upper);
      if (candidate.cwiseAbs().maxCoeff() > options.divergence_bound) {
        escaped = true;
        continue;
      }
      candidate_loglik = detail::safe_log_likelihood(y, candidate, ctx);
      if (candidate_loglik >= current.loglik) {
        accepted = true;
        break;
      }
    }
    fit.iterations = it;
    if (!accepted) {
      if (predicted_gain < options.rel_tol * (1.0 + std::abs(current.loglik))) {
        fit.converged = true;  // at the numerical optimum already
        break;
      }
      fit.diverged = true;
      fit.message = escaped ? "parameters left the bounded region"
                            : "log-likelihood failed to increase under step halving";
      break;
    }
    const double previous = current.loglik;
    theta = candidate;
    current = evaluate_likelihood(y, theta, ctx, Derivatives::information);
    held = active_set(theta, current.gradient);
    fit.trace.push_back({it, current.loglik, projected_norm(current.gradient, held), step});
    if (std::abs(current.loglik - previous) <= options.rel_tol * std::abs(previous)) {
      fit.converged = true;
      break;
    }
  }
  for (std::size_t i = 0; i < held.size(); ++i)
    if (held[i]) fit.at_boundary.push_back(fit.names[i]);
  if (!fit.converged && !fit.diverged) fit.message = "iteration limit reached";

  detail::fill_fit(fit, y, ctx, current, theta);
  if (fit.converged && options.observed_hessian && layout.dim() > 0) {
    try {
      fit.hessian = detail::finite_difference_hessian(y, theta, ctx, options.hessian_step);
    } catch (const NumericalError& e) {
      fit.message = std::string("observed Hessian unavailable: ") + e.what();
    }
  }
  return fit;
}

struct WaldInterval {
  std::string name;
  double estimate;  // transformed scale
  double se;        // transformed scale
  double lower;
  double upper;
  double natural_estimate;
  double natural_lower;
  double natural_upper;
};

struct WaldResult {
  bool available = false;
  std::string diagnostic;
  std::vector<WaldInterval> intervals;
};

inline double normal_quantile(double prob) {
  return boost::math::quantile(boost::math::normal_distribution<double>(), prob);
}

/// theta_j +- z sqrt([-H^-1]_jj) on the transformed scale, endpoints mapped to
/// the natural scale. beta0 (if estimated) uses its GLS standard error.
inline WaldResult wald_intervals(const FitResult& fit, double level) {
  detail::require(level >= 0.0 && level < 1.0, "level must lie in [0, 1)");
  WaldResult out;
  if (!fit.hessian) {
    out.diagnostic = "observed Hessian not available";
    return out;
  }
  const Eigen::MatrixXd neg = -*fit.hessian;
  Eigen::LLT<Eigen::MatrixXd> llt(neg);
  if (llt.info() != Eigen::Success) {
    out.diagnostic = "observed Hessian is not negative definite; smallest eigenvalue of -H is " +
                     std::to_string(detail::smallest_eigenvalue(neg));
    return out;
  }
  const Eigen::MatrixXd cov = llt.solve(Eigen::MatrixXd::Identity(neg.rows(), neg.cols()));
  const double z = level == 0.0 ? 0.0 : normal_quantile(0.5 * (1.0 + level));
  for (Eigen::Index j = 0; j < fit.theta.size(); ++j) {
    WaldInterval w;
    w.name = fit.names[static_cast<std::size_t>(j)];
    w.estimate = fit.theta(j);
    w.se = std::sqrt(cov(j, j));
    w.lower = w.estimate - z * w.se;
    w.upper = w.estimate + z * w.se;
    const ParameterKind kind = fit.kinds[static_cast<std::size_t>(j)];
    w.natural_estimate = to_natural(kind, w.estimate);
    w.natural_lower = to_natural(kind, w.lower);
    w.natural_upper = to_natural(kind, w.upper);
    out.intervals.push_back(w);
  }
  if (fit.mean_estimated) {
    const double se = fit.beta0_se;
    out.intervals.push_back(
        {"beta0", fit.beta0, se, fit.beta0 - z * se, fit.beta0 + z * se, fit.beta0, fit.beta0 - z * se, fit.beta0 + z * se});
  }
  out.available = true;
  return out;
}

struct BasisSizeRow {
  int k = 0;
  double loglik = std::numeric_limits<double>::quiet_NaN();
  double aic = std::numeric_limits<double>::quiet_NaN();
  double bic = std::numeric_limits<double>::quiet_NaN();
  int free_parameters = 0;
  bool converged = false;
  bool diverged = false;
  std::string message;
};

struct BasisSizeSelection {
  std::vector<BasisSizeRow> rows;
  std::optional<int> best_aic_k;
  std::optional<int> best_bic_k;
};

/// One fit per k (ascending), each warm-started from the previous fit.
/// Failed fits are recorded as diverged rows.
inline BasisSizeSelection select_basis_size(const Eigen::MatrixXd& y,
                                            const std::function<ModelContext(int)>& context_for_k,
                                            const std::vector<int>& k_grid, const FitOptions& options = {}) {
  detail::require(!k_grid.empty(), "k grid must be nonempty");
  detail::require(std::is_sorted(k_grid.begin(), k_grid.end()) &&
                      std::adjacent_find(k_grid.begin(), k_grid.end()) == k_grid.end(),
                  "k grid must be strictly ascending");
  BasisSizeSelection out;
  std::optional<FitResult> previous;
  for (const int k : k_grid) {
    const ModelContext ctx = context_for_k(k);
    BasisSizeRow row;
    row.k = k;
    row.free_parameters = ctx->dim() + (ctx.mean.estimate ? 1 : 0);
    try {
      Eigen::VectorXd start = initial_theta(y, ctx);
      if (previous) {
        const Eigen::VectorXd warm = transfer_theta(*previous, ctx->layout(), start);
        if (detail::safe_log_likelihood(y, warm, ctx) >= detail::safe_log_likelihood(y, start, ctx)) start = warm;
      }
      FitResult fit = fit_mle(y, ctx, start, [&] {
        FitOptions o = options;
        o.observed_hessian = false;
        return o;
      }());
      row.loglik = fit.loglik;
      row.aic = fit.aic;
      row.bic = fit.bic;
      row.converged = fit.converged;
      row.diverged = fit.diverged;
      row.message = fit.message;
      if (!fit.diverged) previous = std::move(fit);
    } catch (const NumericalError& e) {
      row.diverged = true;
      row.message = e.what();
    }
    out.rows.push_back(row);
  }
  auto pick = [&out](auto criterion) -> std::optional<int> {
    std::optional<int> best;
    double value = std::numeric_limits<double>::infinity();
    for (const auto& r : out.rows) {
      if (!r.converged || r.diverged) continue;
      const double v = criterion(r);
      if (v < value) {
        value = v;
        best = r.k;
      }
    }
    return best;
  };
  out.best_aic_k = pick([](const BasisSizeRow& r) { return r.aic; });
  out.best_bic_k = pick([](const BasisSizeRow& r) { return r.bic; });
  return out;
}

struct SmoothedField {
  Eigen::VectorXd mean;        // z-hat
  Eigen::MatrixXd covariance;  // Cov(z | y)
  Eigen::VectorXd residuals;   // y - beta0 - z-hat
};

/// Conditional distribution of the spatial effect z given y = beta0 1 + z + e,
/// z ~ N(0, C), e ~ N(0, tau2 I): mean C (C + tau2 I)^-1 (y - beta0 1).
inline SmoothedField smooth_field(const Eigen::VectorXd& y, const Eigen::MatrixXd& spatial_covariance, double tau2,
                                  double beta0) {
  const Eigen::Index p = y.size();
  detail::require(spatial_covariance.rows() == p && spatial_covariance.cols() == p,
                  "spatial covariance must be p x p");
  detail::require(tau2 >= 0.0, "nugget variance must be >= 0");
  SmoothedField out;
  const Eigen::VectorXd centred = y.array() - beta0;
  if (tau2 == 0.0) {
    out.mean = centred;
    out.covariance = Eigen::MatrixXd::Zero(p, p);
    out.residuals = Eigen::VectorXd::Zero(p);
    return out;
  }
  Eigen::MatrixXd marginal = spatial_covariance;
  marginal.diagonal().array() += tau2;
  Eigen::LLT<Eigen::MatrixXd> llt(marginal);
  if (llt.info() != Eigen::Success) throw NumericalError("marginal covariance is not positive definite");
  out.mean = spatial_covariance * llt.solve(centred);
  out.covariance = spatial_covariance - spatial_covariance * llt.solve(spatial_covariance);
  out.covariance = 0.5 * (out.covariance + out.covariance.transpose());
  out.residuals = centred - out.mean;
  return out;
}

/// smooth_field at a fitted model: C = Sigma(theta-hat) - tau2-hat I.
inline SmoothedField smooth_field(const Eigen::VectorXd& y, const FitResult& fit, const ModelContext& ctx) {
  const auto tau_index = ctx->layout().find(ParameterKind::log_tau2);
  detail::require(tau_index.has_value(), "smoothing needs a model with a nugget");
  const double tau2 = std::exp(fit.theta(*tau_index));
  Eigen::MatrixXd c = ctx->evaluate(fit.theta, false).sigma;
  c.diagonal().array() -= tau2;
  return smooth_field(y, c, tau2, fit.beta0);
}

/// Gaussian approximation of the posterior at the mode: N(theta-hat, (-H)^-1),
/// falling back to the inverse expected information.
struct LaplaceApproximation {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;
};

inline LaplaceApproximation laplace_approximation(const FitResult& fit) {
  const Eigen::MatrixXd precision = fit.hessian ? Eigen::MatrixXd(-*fit.hessian) : fit.information;
  Eigen::LLT<Eigen::MatrixXd> llt(precision);
  if (llt.info() != Eigen::Success) throw NumericalError("curvature at the mode is not positive definite");
  return {fit.theta, llt.solve(Eigen::MatrixXd::Identity(precision.rows(), precision.cols()))};
}

}  // namespace graphcov
