#include <cmath>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace graphcov;

namespace {

Eigen::MatrixXd simulate(const ModelContext& ctx, const Eigen::VectorXd& theta, int n, std::uint64_t seed) {
  return sample_from_covariance(ctx->evaluate(theta, false).sigma, n, seed);
}

ModelContext lattice_gdef(int rows, int cols, int k, bool nugget = false, MeanPolicy mean = {}) {
  EdgeModelOptions o;
  o.nugget = nugget;
  return make_context(EdgeWeightModel::with_lgl_basis(lattice_graph(rows, cols), k, o), mean);
}

}  // namespace

TEST(InformationCriteria, Arithmetic) {
  const auto ic = information_criteria(-100.0, 10, 10, 100);
  EXPECT_DOUBLE_EQ(ic.aic, 220.0);
  EXPECT_NEAR(ic.bic, 269.078, 1e-3);
  EXPECT_NEAR(ic.bic, 200.0 + 10.0 * std::log(1000.0), 1e-12);
  EXPECT_THROW(information_criteria(0.0, -1, 1, 1), ValidationError);
}

TEST(FitOptions, ValidatesStepScale) {
  const auto ctx = lattice_gdef(2, 2, 1);
  const Eigen::MatrixXd y = Eigen::MatrixXd::Ones(1, 4);
  FitOptions o;
  o.gamma = 0.0;
  EXPECT_THROW(fit_mle(y, ctx, std::nullopt, o), ValidationError);
  o.gamma = 1.5;
  EXPECT_THROW(fit_mle(y, ctx, std::nullopt, o), ValidationError);
}

TEST(FitMle, ConvergedFitSatisfiesItsContract) {
  const auto ctx = lattice_gdef(4, 4, 3, true, {true, 0.0});
  Eigen::VectorXd truth(5);
  truth << 0.5, 0.8, -0.6, 0.0, std::log(0.2);
  const Eigen::MatrixXd y = simulate(ctx, truth, 20, 3).array() + 2.0;
  const FitResult fit = fit_mle(y, ctx);
  ASSERT_TRUE(fit.converged) << fit.message;
  EXPECT_FALSE(fit.diverged);
  ASSERT_TRUE(fit.hessian.has_value());
  EXPECT_LT((fit.information - fit.information.transpose()).norm(), 1e-10 * fit.information.norm());
  EXPECT_GT(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(fit.information).eigenvalues().minCoeff(), 0.0);
  // The last recorded step either met the gradient tolerance or stalled ℓ.
  EXPECT_LT(fit.gradient.lpNorm<Eigen::Infinity>(), 1e-3);
  EXPECT_EQ(fit.free_parameters, 6);
  EXPECT_NEAR(fit.beta0, 2.0, 0.5);
  for (std::size_t i = 1; i < fit.trace.size(); ++i) EXPECT_GE(fit.trace[i].loglik, fit.trace[i - 1].loglik);
  EXPECT_EQ(fit.natural.size(), fit.theta.size());
  EXPECT_NEAR(fit.natural(4), std::exp(fit.theta(4)), 1e-12);
}

TEST(FitMle, FixedPointConvergesImmediately) {
  const auto ctx = lattice_gdef(4, 4, 3);
  Eigen::VectorXd truth(4);
  truth << 0.3, 0.5, -0.4, 0.2;
  const Eigen::MatrixXd y = simulate(ctx, truth, 15, 4);
  const FitResult first = fit_mle(y, ctx);
  ASSERT_TRUE(first.converged);
  const FitResult again = fit_mle(y, ctx, first.theta);
  EXPECT_TRUE(again.converged);
  EXPECT_LE(again.iterations, 2);
  EXPECT_NEAR(again.loglik, first.loglik, 1e-8 * std::abs(first.loglik));
}

TEST(FitMle, RecoversTruthWithinThreeStandardErrors) {
  const auto ctx = lattice_gdef(5, 5, 3);
  Eigen::VectorXd truth(4);
  truth << 0.4, 0.7, -0.5, 0.3;
  int covered = 0, total = 0;
  for (std::uint64_t r = 0; r < 8; ++r) {
    const Eigen::MatrixXd y = simulate(ctx, truth, 40, 100 + r);
    const FitResult fit = fit_mle(y, ctx);
    ASSERT_TRUE(fit.converged);
    const WaldResult w = wald_intervals(fit, 0.95);
    ASSERT_TRUE(w.available) << w.diagnostic;
    for (std::size_t j = 0; j < w.intervals.size(); ++j) {
      covered += std::abs(w.intervals[j].estimate - truth(static_cast<Eigen::Index>(j))) <= 3.0 * w.intervals[j].se;
      ++total;
    }
  }
  EXPECT_GE(static_cast<double>(covered) / total, 0.85);
}

TEST(FitMle, InvariantToRowOrder) {
  const auto ctx = lattice_gdef(3, 4, 2, false, {true, 0.0});
  Eigen::VectorXd truth(3);
  truth << 0.2, 0.6, 0.1;
  const Eigen::MatrixXd y = simulate(ctx, truth, 12, 7).array() + 1.0;
  const Eigen::MatrixXd reversed = y.colwise().reverse();
  FitOptions o;
  o.tol = 1e-9;
  const FitResult a = fit_mle(y, ctx, std::nullopt, o);
  const FitResult b = fit_mle(reversed, ctx, std::nullopt, o);
  ASSERT_TRUE(a.converged && b.converged);
  EXPECT_NEAR(a.loglik, b.loglik, 1e-8);
}

TEST(FitMle, InvariantToNodeRelabeling) {
  std::mt19937_64 rng(8);
  const int p = 9;
  const Graph g = testsupport::random_connected_graph(p, 0.3, rng);
  std::vector<int> perm(p);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<std::pair<int, int>> moved;
  for (int e = 0; e < g.edge_count(); ++e) moved.emplace_back(perm[g.edge(e).u], perm[g.edge(e).v]);
  const Graph h = build_graph(p, moved);

  const auto ctx_g = make_context(EdgeWeightModel::with_lgl_basis(g, 3, {}));
  const auto ctx_h = make_context(EdgeWeightModel::with_lgl_basis(h, 3, {}));
  Eigen::VectorXd truth(4);
  truth << 0.3, 0.4, -0.3, 0.0;
  const Eigen::MatrixXd y = simulate(ctx_g, truth, 25, 9);
  Eigen::MatrixXd y_h(y.rows(), p);
  for (int i = 0; i < p; ++i) y_h.col(perm[i]) = y.col(i);

  FitOptions o;
  o.tol = 1e-9;
  const FitResult a = fit_mle(y, ctx_g, std::nullopt, o);
  const FitResult b = fit_mle(y_h, ctx_h, std::nullopt, o);
  ASSERT_TRUE(a.converged && b.converged);
  EXPECT_NEAR(a.loglik, b.loglik, 1e-8);
}

TEST(FitMle, DivergenceIsFlaggedNotThrown) {
  const auto ctx = lattice_gdef(3, 3, 2);
  Eigen::VectorXd truth(3);
  truth << 0.0, 0.5, 0.0;
  const Eigen::MatrixXd y = simulate(ctx, truth, 5, 10);
  FitOptions o;
  o.divergence_bound = 1.0;
  Eigen::VectorXd start(3);
  start << 0.9, -0.9, 0.9;
  const FitResult fit = fit_mle(y, ctx, start, o);
  if (!fit.converged) {
    EXPECT_TRUE(fit.diverged);
    EXPECT_FALSE(fit.message.empty());
  }
  FitOptions short_run;
  short_run.max_iter = 1;
  short_run.tol = 1e-14;
  short_run.rel_tol = 0.0;
  const FitResult cut = fit_mle(y, ctx, Eigen::Vector3d(2.0, -1.0, 1.0), short_run);
  EXPECT_FALSE(cut.converged);
  EXPECT_FALSE(cut.message.empty());
}

TEST(FitMle, LargeBasisSingleReplicateDoesNotCrash) {
  const auto ctx = lattice_gdef(10, 10, 30);
  Eigen::VectorXd truth = Eigen::VectorXd::Zero(31);
  truth(0) = 0.5;
  const Eigen::MatrixXd y = simulate(ctx, truth, 1, 11);
  try {
    const FitResult fit = fit_mle(y, ctx);
    EXPECT_TRUE(fit.converged || fit.diverged || !fit.message.empty());
  } catch (const NumericalError& e) {
    SUCCEED() << "reported as numerical failure: " << e.what();
  }
}

TEST(Wald, LevelZeroIsDegenerate) {
  const auto ctx = lattice_gdef(3, 3, 2, false, {true, 0.0});
  Eigen::VectorXd truth(3);
  truth << 0.1, 0.4, 0.0;
  const FitResult fit = fit_mle(simulate(ctx, truth, 10, 12), ctx);
  const WaldResult w = wald_intervals(fit, 0.0);
  ASSERT_TRUE(w.available);
  ASSERT_EQ(w.intervals.size(), 4u);
  for (const auto& i : w.intervals) {
    EXPECT_EQ(i.lower, i.estimate);
    EXPECT_EQ(i.upper, i.estimate);
  }
  EXPECT_EQ(w.intervals.back().name, "beta0");
  EXPECT_THROW(wald_intervals(fit, 1.0), ValidationError);
}

TEST(Wald, NaturalScaleEndpointsAreMonotoneImages) {
  const auto ctx = lattice_gdef(3, 3, 2, true);
  Eigen::VectorXd truth(4);
  truth << 0.1, 0.4, 0.0, std::log(0.3);
  const FitResult fit = fit_mle(simulate(ctx, truth, 30, 13), ctx);
  const WaldResult w = wald_intervals(fit, 0.9);
  ASSERT_TRUE(w.available) << w.diagnostic;
  const double z = 1.6448536269514722;
  for (const auto& i : w.intervals) {
    EXPECT_NEAR(i.upper - i.estimate, z * i.se, 1e-9);
    EXPECT_LE(i.natural_lower, i.natural_estimate);
    EXPECT_LE(i.natural_estimate, i.natural_upper);
  }
  EXPECT_NEAR(w.intervals[3].natural_upper, std::exp(w.intervals[3].upper), 1e-12);
}

TEST(Wald, WithheldWithoutHessian) {
  const auto ctx = lattice_gdef(3, 3, 1);
  FitOptions o;
  o.observed_hessian = false;
  const FitResult fit = fit_mle(simulate(ctx, Eigen::Vector2d(0.0, 0.0), 5, 14), ctx, std::nullopt, o);
  const WaldResult w = wald_intervals(fit, 0.9);
  EXPECT_FALSE(w.available);
  EXPECT_FALSE(w.diagnostic.empty());

  FitResult bent = fit;
  bent.hessian = Eigen::MatrixXd::Identity(2, 2);
  EXPECT_FALSE(wald_intervals(bent, 0.9).available);
}

TEST(Wald, WidthShrinksAsRootN) {
  const auto ctx = lattice_gdef(4, 4, 2);
  Eigen::VectorXd truth(3);
  truth << 0.3, 0.5, 0.2;
  auto mean_se = [&](int n) {
    double total = 0.0;
    for (std::uint64_t r = 0; r < 6; ++r) {
      const FitResult fit = fit_mle(simulate(ctx, truth, n, 500 + r + 10 * static_cast<std::uint64_t>(n)), ctx);
      total += wald_intervals(fit, 0.9).intervals[2].se;
    }
    return total / 6.0;
  };
  const double ratio = mean_se(10) / mean_se(40);
  EXPECT_NEAR(ratio, 2.0, 0.3);
}

TEST(SelectBasisSize, SingletonGrid) {
  const auto make = [](int k) { return lattice_gdef(4, 4, k); };
  Eigen::VectorXd truth(3);
  truth << 0.3, 0.5, 0.2;
  const Eigen::MatrixXd y = simulate(make(2), truth, 10, 15);
  const BasisSizeSelection s = select_basis_size(y, make, {2});
  ASSERT_EQ(s.rows.size(), 1u);
  EXPECT_EQ(s.best_aic_k, 2);
  EXPECT_EQ(s.best_bic_k, 2);
  EXPECT_THROW(select_basis_size(y, make, {}), ValidationError);
  EXPECT_THROW(select_basis_size(y, make, {3, 2}), ValidationError);
}

TEST(SelectBasisSize, NestedWarmStartedFitsAreMonotone) {
  const auto make = [](int k) { return lattice_gdef(5, 5, k); };
  Eigen::VectorXd truth(6);
  truth << 0.4, 0.6, -0.5, 0.4, 0.3, 0.0;
  const Eigen::MatrixXd y = simulate(make(5), truth, 8, 16);
  FitOptions o;
  o.tol = 1e-8;
  const BasisSizeSelection s = select_basis_size(y, make, {1, 2, 3, 5, 8}, o);
  ASSERT_EQ(s.rows.size(), 5u);
  for (std::size_t i = 1; i < s.rows.size(); ++i) {
    ASSERT_TRUE(s.rows[i].converged);
    EXPECT_GE(s.rows[i].loglik, s.rows[i - 1].loglik - 1e-6);
    EXPECT_EQ(s.rows[i].free_parameters, s.rows[i].k + 1);
  }
  ASSERT_TRUE(s.best_aic_k && s.best_bic_k);
  EXPECT_LE(*s.best_bic_k, *s.best_aic_k);
}

TEST(SmoothField, TwoNodeHandCase) {
  const Eigen::Vector2d y(2.0, 0.0);
  const SmoothedField f = smooth_field(y, Eigen::Matrix2d::Identity(), 1.0, 0.0);
  EXPECT_NEAR(f.mean(0), 1.0, 1e-14);
  EXPECT_NEAR(f.mean(1), 0.0, 1e-14);
  EXPECT_NEAR(f.covariance(0, 0), 0.5, 1e-14);
  EXPECT_NEAR(f.residuals(0), 1.0, 1e-14);
}

TEST(SmoothField, NuggetLimits) {
  std::mt19937_64 rng(17);
  const Eigen::MatrixXd c = testsupport::random_spd(5, rng);
  const Eigen::VectorXd y = testsupport::random_normal_vector(5, rng);
  const double beta0 = 0.3;
  const Eigen::VectorXd centred = y.array() - beta0;
  EXPECT_LT(smooth_field(y, c, 1e12, beta0).mean.norm(), 1e-9);
  EXPECT_LT((smooth_field(y, c, 1e-12, beta0).mean - centred).norm(), 1e-9);
  const SmoothedField exact = smooth_field(y, c, 0.0, beta0);
  EXPECT_EQ(exact.mean, centred);
  EXPECT_EQ(exact.residuals, Eigen::VectorXd::Zero(5));
}

TEST(SmoothField, MatchesPrecisionForm) {
  std::mt19937_64 rng(18);
  const Eigen::MatrixXd phi = testsupport::random_spd(4, rng);
  const Eigen::VectorXd y = testsupport::random_normal_vector(4, rng);
  const double sigma2 = 1.7, tau2 = 0.4, beta0 = -0.2;
  const Eigen::MatrixXd post =
      (phi.inverse() / sigma2 + Eigen::MatrixXd::Identity(4, 4) / tau2).inverse();
  const Eigen::VectorXd zhat = post * (y.array() - beta0).matrix() / tau2;
  const SmoothedField f = smooth_field(y, sigma2 * phi, tau2, beta0);
  EXPECT_LT((f.mean - zhat).norm(), 1e-10);
  EXPECT_LT((f.covariance - post).norm(), 1e-10);
}

TEST(SmoothField, FromFittedModel) {
  const auto ctx = lattice_gdef(3, 3, 2, true, {true, 0.0});
  Eigen::VectorXd truth(4);
  truth << 0.1, 0.4, 0.0, std::log(0.3);
  const Eigen::MatrixXd y = simulate(ctx, truth, 20, 19).array() + 1.0;
  const FitResult fit = fit_mle(y, ctx);
  const Eigen::VectorXd row = y.row(0).transpose();
  const SmoothedField f = smooth_field(row, fit, ctx);
  EXPECT_LT((f.residuals + f.mean - (row.array() - fit.beta0).matrix()).norm(), 1e-12);
  EXPECT_THROW(smooth_field(row, fit, lattice_gdef(3, 3, 2)), ValidationError);
}

TEST(Laplace, CovarianceIsInverseNegativeHessian) {
  const auto ctx = lattice_gdef(3, 3, 2);
  Eigen::VectorXd truth(3);
  truth << 0.1, 0.4, 0.0;
  const FitResult fit = fit_mle(simulate(ctx, truth, 20, 20), ctx);
  ASSERT_TRUE(fit.hessian.has_value());
  const LaplaceApproximation a = laplace_approximation(fit);
  EXPECT_EQ(a.mean, fit.theta);
  EXPECT_LT((a.covariance * (-*fit.hessian) - Eigen::MatrixXd::Identity(3, 3)).norm(), 1e-8);
}
