#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace graphcov;

namespace {

LogDensity standard_normal(const Eigen::VectorXd& x) { return {-0.5 * x.squaredNorm(), -x}; }

// Two independent normal means with N(0, s0^2) priors and unit-variance data.
struct ConjugateToy {
  Eigen::Vector2d data_sum{6.0, -3.0};
  Eigen::Vector2d data_count{4.0, 9.0};
  double prior_var = 2.0;

  Eigen::Vector2d posterior_precision() const { return data_count.array() + 1.0 / prior_var; }
  Eigen::Vector2d posterior_mean() const { return data_sum.array() / posterior_precision().array(); }

  LogDensity operator()(const Eigen::VectorXd& m) const {
    const Eigen::Vector2d prec = posterior_precision();
    const Eigen::Vector2d mu = posterior_mean();
    const Eigen::Vector2d d = m - mu;
    return {-0.5 * d.dot(prec.asDiagonal() * d), -(prec.asDiagonal() * d)};
  }
};

}  // namespace

TEST(MalaKernel, TinyStepAcceptsAlmostEverything) {
  const MalaRun run = run_mala(standard_normal, Eigen::VectorXd::Zero(3), 2000, 0, 1e-4, false, 1);
  EXPECT_GT(run.acceptance_rate, 0.999);
  EXPECT_NEAR(run.step, 1e-4, 1e-16);
}

TEST(MalaKernel, SameSeedSameChain) {
  const MalaRun a = run_mala(standard_normal, Eigen::VectorXd::Ones(2), 300, 100, 0.5, true, 42);
  const MalaRun b = run_mala(standard_normal, Eigen::VectorXd::Ones(2), 300, 100, 0.5, true, 42);
  const MalaRun c = run_mala(standard_normal, Eigen::VectorXd::Ones(2), 300, 100, 0.5, true, 43);
  EXPECT_EQ(a.draws, b.draws);
  EXPECT_EQ(a.step, b.step);
  EXPECT_NE(a.draws, c.draws);
}

TEST(MalaKernel, AdaptationReachesModerateAcceptance) {
  const MalaRun run = run_mala(standard_normal, Eigen::VectorXd::Zero(6), 4000, 2000, 5.0, true, 7);
  EXPECT_GE(run.acceptance_rate, 0.4);
  EXPECT_LE(run.acceptance_rate, 0.75);
}

TEST(MalaKernel, ConjugateNormalPosteriorMean) {
  const ConjugateToy toy;
  const MalaRun run = run_mala(toy, Eigen::Vector2d(3.0, 3.0), 20000, 2000, 0.3, true, 11);
  const Eigen::Vector2d truth = toy.posterior_mean();
  for (int j = 0; j < 2; ++j) {
    const Eigen::VectorXd column = run.draws.col(j);
    const double mcse = batch_means_mcse(column);
    EXPECT_LT(std::abs(column.mean() - truth(j)), 3.0 * mcse) << "coordinate " << j;
  }
}

TEST(MalaKernel, RejectsInvalidSettings) {
  EXPECT_THROW(MalaKernel(0.0), ValidationError);
  EXPECT_THROW(MalaKernel(0.1, 1.0), ValidationError);
  EXPECT_THROW(run_mala(standard_normal, Eigen::VectorXd::Zero(1), 0, 0, 0.1, false, 1), ValidationError);
  auto nowhere = [](const Eigen::VectorXd& x) {
    return LogDensity{-std::numeric_limits<double>::infinity(), Eigen::VectorXd::Zero(x.size())};
  };
  EXPECT_THROW(run_mala(nowhere, Eigen::VectorXd::Zero(1), 5, 0, 0.1, false, 1), NumericalError);
}

TEST(LogPrior, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(5);
  const Graph g = testsupport::random_connected_graph(6, 0.4, rng);
  const EdgeCovariates cov =
      edge_covariates_from_nodes(g, testsupport::random_normal_vector(6, rng), EdgeFeatureMode::average);
  EdgeModelOptions o;
  o.family = Family::car;
  o.nugget = true;
  const EdgeWeightModel car = EdgeWeightModel::with_lgl_basis(g, 3, o, cov);
  const MaternCoordsModel matern({{0.0, 0.0}, {1.0, 1.0}}, Smoothness::half, true);

  PriorSpec prior;
  prior.sigma2 = {2.0, 1.5};
  prior.tau2 = {3.0, 0.5};
  prior.kappa = {2.0, 5.0};
  prior.psi_variance = 4.0;
  PriorSpec full_w = prior;
  full_w.raw_weight = GammaPrior{2.0, 0.7};

  for (const ParameterLayout* layout : {&car.layout(), &matern.layout()}) {
    for (const PriorSpec* spec : {&prior, &full_w}) {
      Eigen::VectorXd theta = testsupport::random_normal_vector(layout->dim(), rng, 0.5);
      const LogDensity d = log_prior(*layout, theta, *spec, 3.0);
      const Eigen::VectorXd fd = testsupport::central_gradient(
          [&](const Eigen::VectorXd& t) { return log_prior(*layout, t, *spec, 3.0).value; }, theta, 1e-6);
      EXPECT_LT(testsupport::relative_error(d.gradient, fd), 1e-7);
    }
  }
}

TEST(LogPrior, InverseGammaIncludesJacobian) {
  ParameterLayout layout;
  layout.add("sigma2", ParameterKind::log_sigma2);
  PriorSpec prior;
  prior.sigma2 = {3.0, 2.0};
  // log IG(v; a, b) + log v, up to a constant, at v = e^s.
  const double s = 0.4, v = std::exp(s);
  const double expect = -(3.0 + 1.0) * std::log(v) - 2.0 / v + std::log(v);
  const double zero = -(3.0 + 1.0) * 0.0 - 2.0;
  EXPECT_NEAR(log_prior(layout, Eigen::VectorXd::Constant(1, s), prior, 1.0).value -
                  log_prior(layout, Eigen::VectorXd::Zero(1), prior, 1.0).value,
              expect - zero, 1e-12);
}

TEST(PriorSpec, Validation) {
  PriorSpec p;
  p.sigma2.shape = 0.0;
  EXPECT_THROW(p.validate(), ValidationError);
  p = {};
  p.kappa.b = -1.0;
  EXPECT_THROW(p.validate(), ValidationError);
  p = {};
  p.eta_variance = 0.0;
  EXPECT_THROW(p.validate(), ValidationError);
}

TEST(MalaSample, GibbsVarianceMatchesConjugatePosterior) {
  const Graph g = lattice_graph(3, 3);
  EdgeModelOptions o;
  o.intercept_fixed = true;
  const auto ctx = make_context(EdgeWeightModel::with_lgl_basis(g, 1, o));
  ASSERT_EQ(ctx->dim(), 1);
  const Eigen::MatrixXd phi = ctx->evaluate(Eigen::VectorXd::Zero(1), false).sigma;
  const Eigen::MatrixXd y = sample_from_covariance(2.5 * phi, 6, 3);
  const Eigen::MatrixXd inv = phi.inverse();
  double quad = 0.0;
  for (Eigen::Index i = 0; i < y.rows(); ++i) quad += y.row(i) * inv * y.row(i).transpose();

  PriorSpec prior;
  prior.sigma2 = {3.0, 2.0};
  const double a = 3.0 + 0.5 * 6 * 9, b = 2.0 + 0.5 * quad;
  MalaOptions opts;
  opts.draws = 20000;
  opts.burnin = 10;
  const PosteriorChain chain = mala_sample(y, ctx, prior, opts);
  const Eigen::VectorXd s2 = chain.draws.col(0);
  EXPECT_LT(std::abs(s2.mean() - b / (a - 1.0)), 3.0 * batch_means_mcse(s2));
  EXPECT_EQ(chain.acceptance_rate, 1.0);
}

TEST(MalaSample, ChainContract) {
  const Graph g = lattice_graph(3, 3);
  const auto ctx = make_context(EdgeWeightModel::with_lgl_basis(g, 2, {}), {true, 0.0});
  const Eigen::MatrixXd y =
      sample_from_covariance(ctx->evaluate(Eigen::Vector3d(0.3, 0.2, 0.0), false).sigma, 10, 4).array() + 1.0;
  PriorSpec prior;
  prior.eta_variance_prior = InverseGammaPrior{2.0, 2.0};
  MalaOptions opts;
  opts.draws = 300;
  opts.burnin = 100;
  opts.seed = 9;
  const PosteriorChain a = mala_sample(y, ctx, prior, opts);
  const PosteriorChain b = mala_sample(y, ctx, prior, opts);
  EXPECT_EQ(a.draws, b.draws);
  ASSERT_EQ(a.names.size(), 5u);
  EXPECT_EQ(a.names[3], "phi");
  EXPECT_EQ(a.names[4], "beta0");
  EXPECT_TRUE(a.draws.allFinite());
  EXPECT_GE(a.acceptance_rate, 0.0);
  EXPECT_LE(a.acceptance_rate, 1.0);
  EXPECT_EQ(a.draws.rows(), 300);
  EXPECT_EQ(a.seed, 9u);
  for (Eigen::Index t = 0; t < a.draws.rows(); ++t) EXPECT_NEAR(a.draws(t, 2), std::exp(a.transformed(t, 2)), 1e-12);

  MalaOptions bad = opts;
  bad.draws = 0;
  EXPECT_THROW(mala_sample(y, ctx, prior, bad), ValidationError);
  EXPECT_THROW(mala_sample(y, ctx, prior, opts, Eigen::VectorXd::Zero(5)), ValidationError);
}

TEST(BatchMeans, HandCaseAndScale) {
  Eigen::VectorXd x(4);
  x << 0.0, 0.0, 1.0, 1.0;
  EXPECT_NEAR(batch_means_mcse(x, 2), 0.5, 1e-14);
  EXPECT_THROW(batch_means_mcse(Eigen::VectorXd::Zero(3)), ValidationError);

  std::mt19937_64 rng(6);
  const Eigen::VectorXd iid = testsupport::random_normal_vector(10000, rng);
  EXPECT_NEAR(batch_means_mcse(iid), 0.01, 0.002);
}
