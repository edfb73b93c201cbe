#pragma once

// CAR, ICAR and graph-deformation (GDEF) covariance/precision realizations
// and Gaussian sampling from them.

#include <cmath>
#include <cstdint>
#include <optional>
#include <sstream>
#include <string>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include "graphcov/errors.hpp"
#include "graphcov/graph.hpp"
#include "graphcov/matern.hpp"
#include "graphcov/rng.hpp"

namespace graphcov {

enum class Family { car, icar, gdef };

inline std::string to_string(Family f) {
  switch (f) {
    case Family::car: return "car";
    case Family::icar: return "icar";
    case Family::gdef: return "gdef";
  }
  return "?";
}

inline Family parse_family(const std::string& s) {
  if (s == "car" || s == "CAR") return Family::car;
  if (s == "icar" || s == "ICAR") return Family::icar;
  if (s == "gdef" || s == "GDEF") return Family::gdef;
  throw ValidationError("unknown family '" + s + "'; expected car, icar or gdef");
}

struct CovarianceSpec {
  Family family = Family::gdef;
  Smoothness nu = Smoothness::three_halves;  // GDEF only
  double sigma2 = 1.0;
  double kappa = 0.0;  // CAR only
  double tau2 = 0.0;   // nugget
  double beta0 = 0.0;

  /// sigma2 = 0 is accepted only as a pure-nugget spec (tau2 > 0).
  void validate() const {
    detail::require(std::isfinite(sigma2) && sigma2 >= 0.0, "sigma2 must be >= 0");
    detail::require(std::isfinite(tau2) && tau2 >= 0.0, "tau2 must be >= 0");
    detail::require(sigma2 > 0.0 || tau2 > 0.0, "sigma2 must be > 0 (or tau2 > 0 for a pure-nugget spec)");
    detail::require(std::isfinite(beta0), "beta0 must be finite");
    if (family == Family::car) {
      detail::require(std::abs(kappa) < 1.0, "CAR requires |kappa| < 1, got " + std::to_string(kappa));
    }
  }
};

/// A covariance in one of three forms: dense Sigma (GDEF, or anything with a
/// nugget), sparse precision Q (CAR, Sigma = Q^-1), or an ICAR structure
/// whose generalized covariance lives on the sum-to-zero subspace.
struct CovarianceRealization {
  Family family = Family::gdef;
  int nodes = 0;
  std::optional<Eigen::MatrixXd> covariance;
  std::optional<Eigen::SparseMatrix<double>> precision;
  double nugget = 0.0;
  /// log|Sigma| for dense/CAR; pseudo-determinant of the generalized
  /// covariance for ICAR.
  double log_det = 0.0;
  /// ICAR only: p x (p-1) matrix M with generalized covariance M M'.
  std::optional<Eigen::MatrixXd> null_free_factor;
};

namespace detail {

inline Eigen::MatrixXd matern_of(const Eigen::MatrixXd& d, Smoothness nu) {
  return d.unaryExpr([nu](double x) { return matern_correlation(x, nu); });
}

inline double smallest_eigenvalue(const Eigen::MatrixXd& a) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(a, Eigen::EigenvaluesOnly);
  return eig.eigenvalues()(0);
}

/// Cholesky with the one-shot jitter guard (1e-10 * scale added to the
/// diagonal) for matrices that are PD analytically.
inline Eigen::LLT<Eigen::MatrixXd> guarded_cholesky(Eigen::MatrixXd& sigma, double jitter_scale) {
  Eigen::LLT<Eigen::MatrixXd> llt(sigma);
  if (llt.info() == Eigen::Success) return llt;
  sigma.diagonal().array() += 1e-10 * jitter_scale;
  llt.compute(sigma);
  if (llt.info() != Eigen::Success) {
    std::ostringstream msg;
    msg << "covariance is not positive definite after jitter; smallest eigenvalue " << smallest_eigenvalue(sigma);
    throw NumericalError(msg.str());
  }
  return llt;
}

inline double log_det_from_llt(const Eigen::LLT<Eigen::MatrixXd>& llt) {
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

inline Eigen::SparseMatrix<double> car_structure(const Graph& g, const Eigen::VectorXd& w, double kappa) {
  std::vector<Eigen::Triplet<double>> t;
  t.reserve(static_cast<std::size_t>(4 * g.edge_count()));
  for (int e = 0; e < g.edge_count(); ++e) {
    const auto& ed = g.edge(e);
    t.emplace_back(ed.u, ed.u, w(e));
    t.emplace_back(ed.v, ed.v, w(e));
    t.emplace_back(ed.u, ed.v, -kappa * w(e));
    t.emplace_back(ed.v, ed.u, -kappa * w(e));
  }
  Eigen::SparseMatrix<double> r(g.nodes(), g.nodes());
  r.setFromTriplets(t.begin(), t.end());
  return r;
}

/// log|Q| for a sparse symmetric positive definite Q (LDL' with D > 0).
inline double sparse_log_det(const Eigen::SparseMatrix<double>& q) {
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(q);
  if (ldlt.info() != Eigen::Success || !(ldlt.vectorD().array() > 0.0).all()) {
    throw NumericalError("sparse matrix is not positive definite");
  }
  return ldlt.vectorD().array().log().sum();
}

}  // namespace detail

/// Sigma = sigma2 * rho_nu(D) (+ tau2 I when with_nugget), D the
/// quasi-Euclidean distances of (g, w).
inline CovarianceRealization gdef_covariance(const Graph& g, const EdgeWeights& w, const CovarianceSpec& spec,
                                             bool with_nugget = true) {
  spec.validate();
  detail::require(spec.family == Family::gdef, "gdef_covariance needs a GDEF spec");
  Eigen::MatrixXd sigma = spec.sigma2 * detail::matern_of(quasi_euclidean_distances(g, w), spec.nu);
  CovarianceRealization out;
  out.family = Family::gdef;
  out.nodes = g.nodes();
  if (with_nugget) {
    sigma.diagonal().array() += spec.tau2;
    out.nugget = spec.tau2;
  }
  auto llt = detail::guarded_cholesky(sigma, std::max(spec.sigma2, spec.tau2));
  out.log_det = detail::log_det_from_llt(llt);
  out.covariance = std::move(sigma);
  return out;
}

/// Q = (diag(W1) - kappa W) / sigma2.
inline CovarianceRealization car_precision(const Graph& g, const EdgeWeights& w, const CovarianceSpec& spec) {
  spec.validate();
  detail::require(spec.family == Family::car, "car_precision needs a CAR spec");
  detail::require(spec.sigma2 > 0.0, "CAR requires sigma2 > 0");
  w.check_matches(g);
  Eigen::SparseMatrix<double> q = detail::car_structure(g, w.values(), spec.kappa) / spec.sigma2;
  Eigen::SimplicialLLT<Eigen::SparseMatrix<double>> llt(q);
  if (llt.info() != Eigen::Success) throw NumericalError("CAR precision is not positive definite");
  CovarianceRealization out;
  out.family = Family::car;
  out.nodes = g.nodes();
  out.nugget = spec.tau2;
  out.log_det = -detail::sparse_log_det(q);
  out.precision = std::move(q);
  if (spec.tau2 > 0.0) {
    // A nugget breaks the sparse structure; keep the dense marginal.
    detail::require(g.nodes() <= 2000, "dense CAR covariance is limited to p <= 2000");
    Eigen::MatrixXd sigma = llt.solve(Eigen::MatrixXd::Identity(g.nodes(), g.nodes()));
    sigma = 0.5 * (sigma + sigma.transpose());
    sigma.diagonal().array() += spec.tau2;
    auto dense_llt = detail::guarded_cholesky(sigma, spec.sigma2);
    out.log_det = detail::log_det_from_llt(dense_llt);
    out.covariance = std::move(sigma);
  }
  return out;
}

/// Sigma = Q^-1 for a CAR realization (p <= 2000).
inline Eigen::MatrixXd car_covariance_dense(const CovarianceRealization& real) {
  detail::require(real.precision.has_value(), "realization has no precision matrix");
  detail::require(real.nodes <= 2000, "dense CAR covariance is limited to p <= 2000");
  Eigen::SimplicialLLT<Eigen::SparseMatrix<double>> llt(*real.precision);
  if (llt.info() != Eigen::Success) throw NumericalError("CAR precision is not positive definite");
  Eigen::MatrixXd sigma = llt.solve(Eigen::MatrixXd::Identity(real.nodes, real.nodes));
  return 0.5 * (sigma + sigma.transpose());
}

/// Q = diag(W1) - W (rank p-1). The generalized covariance sigma2 * Q+ is
/// stored through its nonzero eigenmodes.
inline CovarianceRealization icar_structure(const Graph& g, const EdgeWeights& w, double sigma2 = 1.0) {
  detail::require(sigma2 > 0.0, "ICAR requires sigma2 > 0");
  w.check_matches(g);
  CovarianceRealization out;
  out.family = Family::icar;
  out.nodes = g.nodes();
  out.precision = detail::car_structure(g, w.values(), 1.0);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(Eigen::MatrixXd(*out.precision));
  if (eig.info() != Eigen::Success) throw NumericalError("ICAR eigendecomposition failed");
  const Eigen::Index p = g.nodes();
  // Eigenvalues ascending; the first is the constant null mode.
  Eigen::MatrixXd factor = eig.eigenvectors().rightCols(p - 1);
  Eigen::VectorXd lambda = eig.eigenvalues().tail(p - 1);
  factor = factor * (lambda.array().rsqrt() * std::sqrt(sigma2)).matrix().asDiagonal();
  out.log_det = (sigma2 / lambda.array()).log().sum();
  out.null_free_factor = std::move(factor);
  return out;
}

/// n i.i.d. rows from N(0, Sigma) (ICAR: the sum-to-zero generalized
/// Gaussian). Deterministic in `seed`.
inline Eigen::MatrixXd sample_gaussian(const CovarianceRealization& real, int n, std::uint64_t seed) {
  detail::require(n >= 1, "replicate count n must be >= 1");
  Rng rng = make_rng(seed);
  const int p = real.nodes;
  Eigen::MatrixXd out(n, p);
  if (real.family == Family::icar) {
    const Eigen::MatrixXd& m = *real.null_free_factor;
    const Eigen::MatrixXd z = standard_normal_matrix(n, m.cols(), rng);
    out = z * m.transpose();
    out = out.colwise() - out.rowwise().mean();
    return out;
  }
  if (real.covariance) {
    Eigen::MatrixXd sigma = *real.covariance;
    auto llt = detail::guarded_cholesky(sigma, std::max(1.0, sigma.diagonal().maxCoeff()));
    const Eigen::MatrixXd z = standard_normal_matrix(n, p, rng);
    out = z * llt.matrixU();
    return out;
  }
  // Sparse CAR: with P Q P' = L L', x = P' L'^-1 z has covariance Q^-1.
  Eigen::SimplicialLLT<Eigen::SparseMatrix<double>> llt(*real.precision);
  if (llt.info() != Eigen::Success) throw NumericalError("CAR precision is not positive definite");
  const Eigen::MatrixXd z = standard_normal_matrix(n, p, rng);
  Eigen::MatrixXd u = llt.matrixU().solve(Eigen::MatrixXd(z.transpose()));
  Eigen::MatrixXd x = llt.permutationPinv() * u;
  out = x.transpose();
  return out;
}

/// Pure nugget: Sigma = tau2 I.
inline CovarianceRealization nugget_only(int nodes, double tau2) {
  detail::require(tau2 > 0.0, "nugget variance must be > 0");
  CovarianceRealization out;
  out.family = Family::gdef;
  out.nodes = nodes;
  out.nugget = tau2;
  out.covariance = tau2 * Eigen::MatrixXd::Identity(nodes, nodes);
  out.log_det = nodes * std::log(tau2);
  return out;
}

}  // namespace graphcov
