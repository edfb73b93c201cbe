#pragma once

// Metropolis-adjusted Langevin sampling. A generic kernel over any
// differentiable log density, and a posterior sampler for covariance models
// that mixes Langevin moves with conjugate Gibbs updates.

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "graphcov/errors.hpp"
#include "graphcov/likelihood.hpp"
#include "graphcov/models.hpp"
#include "graphcov/rng.hpp"

namespace graphcov {

struct LogDensity {
  double value = -std::numeric_limits<double>::infinity();
  Eigen::VectorXd gradient;
};

/// May throw NumericalError, which the sampler treats as zero density.
using LogTarget = std::function<LogDensity(const Eigen::VectorXd&)>;

/// One Langevin proposal x* ~ N(x + (h^2/2) grad, h^2 I) with the
/// Metropolis-Hastings correction for the asymmetric proposal.
class MalaKernel {
 public:
  explicit MalaKernel(double step, double target_acceptance = 0.574)
      : log_step_(std::log(step)), target_(target_acceptance) {
    detail::require(step > 0.0 && std::isfinite(step), "MALA step size h must be > 0");
    detail::require(target_acceptance > 0.0 && target_acceptance < 1.0, "target acceptance must lie in (0, 1)");
  }

  double step_size() const { return std::exp(log_step_); }

  /// Advances x in place; returns the acceptance probability.
  double advance(const LogTarget& target, Eigen::VectorXd& x, LogDensity& current, Rng& rng, bool& accepted) const {
    const double h = step_size();
    const double h2 = h * h;
    const Eigen::VectorXd mean_fwd = x + 0.5 * h2 * current.gradient;
    const Eigen::VectorXd proposal = mean_fwd + h * standard_normal_vector(x.size(), rng);
    const double u = uniform01(rng);
    accepted = false;

    LogDensity next;
    try {
      next = target(proposal);
    } catch (const NumericalError&) {
      return 0.0;
    }
    if (!std::isfinite(next.value) || !next.gradient.allFinite()) return 0.0;

    const Eigen::VectorXd mean_back = proposal + 0.5 * h2 * next.gradient;
    const double log_q_fwd = -(proposal - mean_fwd).squaredNorm() / (2.0 * h2);
    const double log_q_back = -(x - mean_back).squaredNorm() / (2.0 * h2);
    const double log_alpha = next.value - current.value + log_q_back - log_q_fwd;
    const double alpha = log_alpha >= 0.0 ? 1.0 : std::exp(log_alpha);
    if (u < alpha) {
      x = proposal;
      current = std::move(next);
      accepted = true;
    }
    return alpha;
  }

  /// Robbins-Monro update of log h toward the target acceptance.
  void adapt(double alpha, int iteration) {
    log_step_ += (alpha - target_) / std::pow(static_cast<double>(iteration) + 1.0, 0.6);
  }

 private:
  double log_step_;
  double target_;
};

struct MalaRun {
  Eigen::MatrixXd draws;  // retained draws, one per row
  double acceptance_rate = 0.0;
  double step = 0.0;
};

/// Runs `burnin` adaptive (if requested) iterations followed by `draws`
/// retained iterations with the step frozen.
inline MalaRun run_mala(const LogTarget& target, Eigen::VectorXd x0, int draws, int burnin, double step, bool adapt,
                        std::uint64_t seed) {
  detail::require(draws >= 1, "number of draws T must be >= 1");
  detail::require(burnin >= 0, "burn-in must be >= 0");
  MalaKernel kernel(step);
  Rng rng = make_rng(seed);
  LogDensity current = target(x0);
  if (!std::isfinite(current.value)) throw NumericalError("log density is not finite at the initial point");

  MalaRun out;
  out.draws.resize(draws, x0.size());
  int accepted_count = 0;
  bool accepted = false;
  for (int t = 0; t < burnin + draws; ++t) {
    const double alpha = kernel.advance(target, x0, current, rng, accepted);
    if (t < burnin) {
      if (adapt) kernel.adapt(alpha, t);
      continue;
    }
    accepted_count += accepted ? 1 : 0;
    out.draws.row(t - burnin) = x0.transpose();
  }
  out.acceptance_rate = static_cast<double>(accepted_count) / draws;
  out.step = kernel.step_size();
  return out;
}

struct InverseGammaPrior {
  double shape = 0.01;
  double scale = 0.01;
};

struct BetaPrior {
  double a = 1.0;
  double b = 1.0;
};

struct GammaPrior {
  double shape = 1.0;
  double rate = 1.0;
};

/// Priors on natural-scale parameters; densities are applied in the
/// transformed coordinates with the Jacobian of the transform.
struct PriorSpec {
  double eta_variance = 100.0;  // phi, when no hyperprior is given
  std::optional<InverseGammaPrior> eta_variance_prior;
  double psi_variance = 100.0;
  InverseGammaPrior sigma2;
  BetaPrior kappa;  // on (kappa + 1) / 2
  InverseGammaPrior tau2;
  double log_range_variance = 100.0;
  /// Full-W mode: Gamma prior on each raw edge weight (model with an
  /// identity basis, so eta = log w).
  std::optional<GammaPrior> raw_weight;

  void validate() const {
    detail::require(eta_variance > 0.0 && psi_variance > 0.0 && log_range_variance > 0.0,
                    "prior variances must be > 0");
    auto ig = [](const InverseGammaPrior& p, const char* what) {
      detail::require(p.shape > 0.0 && p.scale > 0.0, std::string(what) + " inverse-gamma prior needs shape, scale > 0");
    };
    ig(sigma2, "sigma2");
    ig(tau2, "tau2");
    if (eta_variance_prior) ig(*eta_variance_prior, "phi");
    detail::require(kappa.a > 0.0 && kappa.b > 0.0, "kappa Beta prior needs a, b > 0");
    if (raw_weight) detail::require(raw_weight->shape > 0.0 && raw_weight->rate > 0.0, "Gamma prior needs shape, rate > 0");
  }
};

/// log prior density of theta in transformed coordinates, and its gradient.
inline LogDensity log_prior(const ParameterLayout& layout, const Eigen::VectorXd& theta, const PriorSpec& prior,
                            double phi) {
  LogDensity out;
  out.value = 0.0;
  out.gradient = Eigen::VectorXd::Zero(layout.dim());
  auto inverse_gamma_log = [&](int i, const InverseGammaPrior& p) {
    // v = exp(s): IG density times Jacobian v gives -a s - b exp(-s).
    const double s = theta(i);
    out.value += -p.shape * s - p.scale * std::exp(-s);
    out.gradient(i) = -p.shape + p.scale * std::exp(-s);
  };
  for (int i = 0; i < layout.dim(); ++i) {
    const double t = theta(i);
    switch (layout[i].kind) {
      case ParameterKind::eta:
        if (prior.raw_weight) {
          out.value += prior.raw_weight->shape * t - prior.raw_weight->rate * std::exp(t);
          out.gradient(i) = prior.raw_weight->shape - prior.raw_weight->rate * std::exp(t);
        } else {
          out.value += -0.5 * t * t / phi;
          out.gradient(i) = -t / phi;
        }
        break;
      case ParameterKind::psi:
        out.value += -0.5 * t * t / prior.psi_variance;
        out.gradient(i) = -t / prior.psi_variance;
        break;
      case ParameterKind::log_sigma2: inverse_gamma_log(i, prior.sigma2); break;
      case ParameterKind::log_tau2: inverse_gamma_log(i, prior.tau2); break;
      case ParameterKind::logit_kappa: {
        const double u = 1.0 / (1.0 + std::exp(-t));
        out.value += prior.kappa.a * std::log(u) + prior.kappa.b * std::log1p(-u);
        out.gradient(i) = prior.kappa.a * (1.0 - u) - prior.kappa.b * u;
        break;
      }
      case ParameterKind::log_range:
        out.value += -0.5 * t * t / prior.log_range_variance;
        out.gradient(i) = -t / prior.log_range_variance;
        break;
    }
  }
  return out;
}

struct MalaOptions {
  int draws = 5000;  // T, retained
  int burnin = 1000;
  double step = 0.05;  // h
  bool adapt = true;
  std::uint64_t seed = 1;

  void validate() const {
    detail::require(draws >= 1, "number of draws T must be >= 1");
    detail::require(burnin >= 0, "burn-in must be >= 0");
    detail::require(step > 0.0 && std::isfinite(step), "step size h must be > 0");
  }
};

struct PosteriorChain {
  std::vector<std::string> names;  // natural-scale columns
  Eigen::MatrixXd draws;           // T x columns, natural scale
  Eigen::MatrixXd transformed;     // T x dim(theta)
  double acceptance_rate = 0.0;
  double step = 0.0;
  int burnin = 0;
  PriorSpec prior;
  std::uint64_t seed = 0;
};

/// Posterior sampler. Each iteration: sigma2 from its inverse-gamma full
/// conditional (when sigma2 is free and there is no nugget), beta0 from its
/// normal full conditional (when estimated), phi from its inverse-gamma full
/// conditional (when it has a hyperprior), then one Langevin move on the
/// remaining coordinates.
inline PosteriorChain mala_sample(const Eigen::MatrixXd& y, const ModelContext& ctx, const PriorSpec& prior,
                                  const MalaOptions& options, std::optional<Eigen::VectorXd> theta0 = std::nullopt) {
  prior.validate();
  options.validate();
  const ParameterLayout& layout = ctx->layout();
  detail::check_data(y, ctx->nodes());
  const double n = static_cast<double>(y.rows());
  const double p = static_cast<double>(y.cols());

  Eigen::VectorXd theta = theta0 ? *theta0 : Eigen::VectorXd::Zero(layout.dim());
  detail::require(theta.size() == layout.dim(), "initial theta has wrong length");

  const auto sigma_index = layout.find(ParameterKind::log_sigma2);
  const bool gibbs_sigma2 = sigma_index.has_value() && !layout.find(ParameterKind::log_tau2).has_value();
  const bool gibbs_phi = prior.eta_variance_prior.has_value() && !prior.raw_weight;
  std::vector<int> eta_indices;
  std::vector<int> moving;
  for (int i = 0; i < layout.dim(); ++i) {
    if (layout[i].kind == ParameterKind::eta) eta_indices.push_back(i);
    if (!(gibbs_sigma2 && i == *sigma_index)) moving.push_back(i);
  }

  Rng rng = make_rng(options.seed);
  double phi = prior.eta_variance;
  double beta0 = ctx.mean.value;
  if (ctx.mean.estimate) beta0 = evaluate_likelihood(y, theta, ctx).beta0;

  auto embed = [&](const Eigen::VectorXd& sub) {
    Eigen::VectorXd full = theta;
    for (std::size_t j = 0; j < moving.size(); ++j) full(moving[j]) = sub(static_cast<Eigen::Index>(j));
    return full;
  };
  auto target = [&](const Eigen::VectorXd& sub) {
    const Eigen::VectorXd full = embed(sub);
    const LikelihoodTerms lt = evaluate_likelihood(y, full, ctx, Derivatives::gradient, beta0);
    const LogDensity lp = log_prior(layout, full, prior, phi);
    LogDensity out;
    out.value = lt.loglik + lp.value;
    out.gradient.resize(static_cast<Eigen::Index>(moving.size()));
    for (std::size_t j = 0; j < moving.size(); ++j)
      out.gradient(static_cast<Eigen::Index>(j)) = lt.gradient(moving[j]) + lp.gradient(moving[j]);
    return out;
  };

  Eigen::VectorXd sub(static_cast<Eigen::Index>(moving.size()));
  for (std::size_t j = 0; j < moving.size(); ++j) sub(static_cast<Eigen::Index>(j)) = theta(moving[j]);
  LogDensity current;
  try {
    current = target(sub);
  } catch (const NumericalError& e) {
    throw NumericalError(std::string("log posterior is not finite at the initial point: ") + e.what());
  }
  if (!std::isfinite(current.value)) throw NumericalError("log posterior is not finite at the initial point");
  const bool conditionals_move = gibbs_sigma2 || ctx.mean.estimate || gibbs_phi;

  PosteriorChain chain;
  chain.names = layout.names();
  if (gibbs_phi) chain.names.push_back("phi");
  if (ctx.mean.estimate) chain.names.push_back("beta0");
  chain.draws.resize(options.draws, static_cast<Eigen::Index>(chain.names.size()));
  chain.transformed.resize(options.draws, layout.dim());
  chain.prior = prior;
  chain.seed = options.seed;
  chain.burnin = options.burnin;

  MalaKernel kernel(options.step);
  int accepted_count = 0;
  for (int t = 0; t < options.burnin + options.draws; ++t) {
    if (gibbs_sigma2) {
      Eigen::VectorXd unit = theta;
      unit(*sigma_index) = 0.0;
      const double quad = evaluate_likelihood(y, unit, ctx, Derivatives::none, beta0).quadratic;
      const double s2 = inverse_gamma_draw(prior.sigma2.shape + 0.5 * n * p, prior.sigma2.scale + 0.5 * quad, rng);
      theta(*sigma_index) = std::log(s2);
    }
    if (ctx.mean.estimate) {
      const LikelihoodTerms lt = evaluate_likelihood(y, theta, ctx);
      std::normal_distribution<double> normal(lt.beta0, 1.0 / std::sqrt(lt.beta0_information));
      beta0 = normal(rng);
    }
    if (gibbs_phi) {
      double ss = 0.0;
      for (const int i : eta_indices) ss += theta(i) * theta(i);
      phi = inverse_gamma_draw(prior.eta_variance_prior->shape + 0.5 * static_cast<double>(eta_indices.size()),
                               prior.eta_variance_prior->scale + 0.5 * ss, rng);
    }
    bool accepted = false;
    if (!moving.empty()) {
      // The target depends on the Gibbs-updated quantities; refresh it.
      if (conditionals_move) current = target(sub);
      const double alpha = kernel.advance(target, sub, current, rng, accepted);
      theta = embed(sub);
      if (t < options.burnin && options.adapt) kernel.adapt(alpha, t);
    }
    if (t < options.burnin) continue;
    const int row = t - options.burnin;
    accepted_count += accepted ? 1 : 0;
    chain.transformed.row(row) = theta.transpose();
    Eigen::Index col = 0;
    for (int i = 0; i < layout.dim(); ++i) chain.draws(row, col++) = to_natural(layout[i].kind, theta(i));
    if (gibbs_phi) chain.draws(row, col++) = phi;
    if (ctx.mean.estimate) chain.draws(row, col++) = beta0;
  }
  chain.acceptance_rate = moving.empty() ? 1.0 : static_cast<double>(accepted_count) / options.draws;
  chain.step = kernel.step_size();
  return chain;
}

/// Monte Carlo standard error of the mean of a chain by non-overlapping
/// batch means (batch size floor(sqrt(T)) unless given).
inline double batch_means_mcse(const Eigen::VectorXd& x, int batch_size = 0) {
  const Eigen::Index t = x.size();
  detail::require(t >= 4, "batch means need at least 4 draws");
  const Eigen::Index b = batch_size > 0 ? batch_size : static_cast<Eigen::Index>(std::sqrt(static_cast<double>(t)));
  const Eigen::Index a = t / b;
  detail::require(a >= 2, "batch means need at least 2 batches");
  const double mean = x.head(a * b).mean();
  double ss = 0.0;
  for (Eigen::Index j = 0; j < a; ++j) {
    const double m = x.segment(j * b, b).mean();
    ss += (m - mean) * (m - mean);
  }
  const double variance = static_cast<double>(b) * ss / static_cast<double>(a - 1);
  return std::sqrt(variance / static_cast<double>(a * b));
}

}  // namespace graphcov
