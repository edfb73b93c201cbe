#pragma once

// Gaussian log-likelihood of i.i.d. replicates y_i ~ N(beta0 1, Sigma(theta)),
// its analytic score and the expected (Fisher) information.

#include <cmath>
#include <memory>
#include <numbers>
#include <optional>
#include <sstream>
#include <utility>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include "graphcov/covariance.hpp"
#include "graphcov/errors.hpp"
#include "graphcov/models.hpp"

namespace graphcov {

/// How the constant mean beta0 is handled: fixed at `value`, or profiled out
/// by generalized least squares under the current Sigma.
struct MeanPolicy {
  bool estimate = false;
  double value = 0.0;
};

struct ModelContext {
  std::shared_ptr<const CovarianceModel> model;
  MeanPolicy mean;

  const CovarianceModel& operator*() const { return *model; }
  const CovarianceModel* operator->() const { return model.get(); }
};

template <class Model>
ModelContext make_context(Model model, MeanPolicy mean = {}) {
  return ModelContext{std::make_shared<const Model>(std::move(model)), mean};
}

enum class Derivatives { none, gradient, information };

struct LikelihoodTerms {
  double loglik = 0.0;
  double beta0 = 0.0;
  /// n 1' Sigma^-1 1; the GLS variance of beta0 is its inverse.
  double beta0_information = 0.0;
  /// d loglik / d beta0 at `beta0` (zero when it is profiled).
  double beta0_gradient = 0.0;
  /// sum_i r_i' Sigma^-1 r_i with r_i = y_i - beta0 1.
  double quadratic = 0.0;
  Eigen::VectorXd gradient;
  Eigen::MatrixXd information;
};

namespace detail {

inline std::string theta_text(const Eigen::VectorXd& theta) {
  std::ostringstream s;
  s << "theta = [";
  for (Eigen::Index i = 0; i < theta.size(); ++i) s << (i ? ", " : "") << theta(i);
  s << "]";
  return s.str();
}

inline void check_data(const Eigen::MatrixXd& y, int p) {
  require(y.rows() >= 1, "data must contain at least one replicate row");
  require(y.cols() == p, "data has " + std::to_string(y.cols()) + " columns, model has " + std::to_string(p) +
                             " nodes");
  require(y.allFinite(), "data must be finite");
}

// Sparse route for CAR without nugget: log|Sigma| = -log|Q|.
inline LikelihoodTerms sparse_log_likelihood(const Eigen::MatrixXd& y, const Eigen::SparseMatrix<double>& q,
                                             const MeanPolicy& mean, std::optional<double> beta0_override,
                                             const Eigen::VectorXd& theta) {
  double log_det_q = 0.0;
  try {
    log_det_q = sparse_log_det(q);
  } catch (const NumericalError&) {
    throw NumericalError("precision is not positive definite at " + theta_text(theta));
  }
  const double n = static_cast<double>(y.rows());
  const double p = static_cast<double>(y.cols());
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(y.cols());
  const Eigen::VectorXd q1 = q * ones;

  LikelihoodTerms out;
  out.beta0_information = n * q1.sum();
  const Eigen::VectorXd ysum = y.colwise().sum().transpose();
  if (beta0_override) {
    out.beta0 = *beta0_override;
  } else if (mean.estimate) {
    out.beta0 = q1.dot(ysum) / out.beta0_information;
  } else {
    out.beta0 = mean.value;
  }
  const Eigen::MatrixXd r = y.array() - out.beta0;
  const Eigen::MatrixXd rq = r * q;
  const double quad = rq.cwiseProduct(r).sum();
  out.quadratic = quad;
  out.beta0_gradient = rq.sum();
  out.loglik = -0.5 * n * p * std::log(2.0 * std::numbers::pi) + 0.5 * n * log_det_q - 0.5 * quad;
  return out;
}

}  // namespace detail

/// Log-likelihood and (optionally) its score and expected information at
/// theta. `beta0_override` evaluates at a given mean instead of the policy.
inline LikelihoodTerms evaluate_likelihood(const Eigen::MatrixXd& y, const Eigen::VectorXd& theta,
                                           const ModelContext& ctx, Derivatives what = Derivatives::none,
                                           std::optional<double> beta0_override = std::nullopt) {
  const CovarianceModel& model = *ctx;
  detail::check_data(y, model.nodes());

  if (what == Derivatives::none) {
    if (auto q = model.precision(theta)) return detail::sparse_log_likelihood(y, *q, ctx.mean, beta0_override, theta);
  }

  CovarianceTerms terms = model.evaluate(theta, what != Derivatives::none);
  const Eigen::Index p = model.nodes();
  const double n = static_cast<double>(y.rows());

  Eigen::LLT<Eigen::MatrixXd> llt;
  try {
    llt = detail::guarded_cholesky(terms.sigma, std::max(1e-300, terms.sigma.diagonal().maxCoeff()));
  } catch (const NumericalError& e) {
    throw NumericalError(std::string(e.what()) + " at " + detail::theta_text(theta));
  }
  const double log_det = detail::log_det_from_llt(llt);
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(p);
  const Eigen::VectorXd sinv1 = llt.solve(ones);

  LikelihoodTerms out;
  out.beta0_information = n * sinv1.sum();
  const Eigen::VectorXd ysum = y.colwise().sum().transpose();
  if (beta0_override) {
    out.beta0 = *beta0_override;
  } else if (ctx.mean.estimate) {
    out.beta0 = sinv1.dot(ysum) / out.beta0_information;
  } else {
    out.beta0 = ctx.mean.value;
  }
  const Eigen::MatrixXd rt = (y.array() - out.beta0).matrix().transpose();  // p x n
  const Eigen::MatrixXd whitened = llt.matrixL().solve(rt);
  out.quadratic = whitened.squaredNorm();
  out.loglik = -0.5 * n * static_cast<double>(p) * std::log(2.0 * std::numbers::pi) - 0.5 * n * log_det -
               0.5 * out.quadratic;
  const Eigen::MatrixXd u = llt.solve(rt);  // Sigma^-1 r_i as columns
  out.beta0_gradient = u.sum();
  if (what == Derivatives::none) return out;

  const int dim = model.dim();
  out.gradient.resize(dim);

  if (terms.precision_form()) {
    // l = (n/2) log|Q| - (1/2) tr(Q S); Sigma = Q^-1 is terms.sigma.
    const Eigen::MatrixXd sigma = terms.sigma;
    const Eigen::MatrixXd s = rt * rt.transpose();
    const Eigen::MatrixXd weight = n * sigma - s;
    for (int a = 0; a < dim; ++a) {
      const auto& dq = terms.precision_derivatives[static_cast<std::size_t>(a)];
      double acc = 0.0;
      for (int col = 0; col < dq.outerSize(); ++col)
        for (Eigen::SparseMatrix<double>::InnerIterator it(dq, col); it; ++it)
          acc += it.value() * weight(it.row(), it.col());
      out.gradient(a) = 0.5 * acc;
    }
    if (what == Derivatives::information) {
      std::vector<Eigen::MatrixXd> t(static_cast<std::size_t>(dim));
      for (int a = 0; a < dim; ++a) t[static_cast<std::size_t>(a)] = terms.precision_derivatives[static_cast<std::size_t>(a)] * sigma;
      out.information.resize(dim, dim);
      for (int a = 0; a < dim; ++a)
        for (int b = a; b < dim; ++b) {
          const double v = 0.5 * n *
                           t[static_cast<std::size_t>(a)].cwiseProduct(t[static_cast<std::size_t>(b)].transpose()).sum();
          out.information(a, b) = out.information(b, a) = v;
        }
    }
    return out;
  }

  // Dense route: dl/da = (1/2) sum((Sigma^-1 S Sigma^-1 - n Sigma^-1) .* dSigma_a).
  const Eigen::MatrixXd sigma_inv = llt.solve(Eigen::MatrixXd::Identity(p, p));
  const Eigen::MatrixXd g = u * u.transpose() - n * sigma_inv;
  for (int a = 0; a < dim; ++a)
    out.gradient(a) = 0.5 * g.cwiseProduct(terms.sigma_derivatives[static_cast<std::size_t>(a)]).sum();

  if (what == Derivatives::information) {
    std::vector<Eigen::MatrixXd> k(static_cast<std::size_t>(dim));
    for (int a = 0; a < dim; ++a) k[static_cast<std::size_t>(a)] = sigma_inv * terms.sigma_derivatives[static_cast<std::size_t>(a)];
    out.information.resize(dim, dim);
    for (int a = 0; a < dim; ++a)
      for (int b = a; b < dim; ++b) {
        const double v =
            0.5 * n * k[static_cast<std::size_t>(a)].cwiseProduct(k[static_cast<std::size_t>(b)].transpose()).sum();
        out.information(a, b) = out.information(b, a) = v;
      }
  }
  return out;
}

inline double log_likelihood(const Eigen::MatrixXd& y, const Eigen::VectorXd& theta, const ModelContext& ctx) {
  return evaluate_likelihood(y, theta, ctx).loglik;
}

inline std::pair<Eigen::VectorXd, Eigen::MatrixXd> score_and_information(const Eigen::MatrixXd& y,
                                                                         const Eigen::VectorXd& theta,
                                                                         const ModelContext& ctx) {
  LikelihoodTerms t = evaluate_likelihood(y, theta, ctx, Derivatives::information);
  return {std::move(t.gradient), std::move(t.information)};
}

/// d Sigma / d w_e for every edge of a GDEF model with unit sigma2 and the
/// given weights; each matrix is symmetric with zero diagonal.
inline std::vector<Eigen::MatrixXd> dSigma_dw(const Graph& g, const EdgeWeights& w, const CovarianceSpec& spec) {
  spec.validate();
  detail::require(spec.family == Family::gdef, "dSigma_dw is defined for the GDEF family");
  w.check_matches(g);
  const int q = g.edge_count();
  EdgeModelOptions opts;
  opts.nu = spec.nu;
  opts.fixed_sigma2 = spec.sigma2;
  std::vector<std::string> names;
  for (int e = 0; e < q; ++e) names.push_back("w" + std::to_string(e));
  const EdgeWeightModel model(g, Eigen::MatrixXd::Identity(q, q), std::move(names), {}, opts);
  // The identity basis makes theta = log w; derivatives are taken in w itself.
  const Eigen::VectorXd theta = w.values().array().log();
  return model.sigma_weight_derivatives(theta);
}

}  // namespace graphcov
