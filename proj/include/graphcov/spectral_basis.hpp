#pragma once

// Eigenvector bases over the edges of a graph (line-graph Laplacian
// eigenvectors), edge covariates derived from node features, and the
// exponential map from basis coefficients to positive edge weights.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "graphcov/errors.hpp"
#include "graphcov/graph.hpp"

namespace graphcov {

/// q x k basis over the edges of a graph; columns ordered by ascending
/// eigenvalue of the (possibly projected) line-graph Laplacian.
struct EdgeBasis {
  Eigen::MatrixXd vectors;
  Eigen::VectorXd eigenvalues;
  bool orthogonalized = false;
  std::uint64_t graph_hash = 0;

  int size() const { return static_cast<int>(vectors.cols()); }
  int edge_count() const { return static_cast<int>(vectors.rows()); }
};

struct EdgeCovariates {
  Eigen::MatrixXd values;  // q x r
  std::vector<std::string> names;
  bool rank_deficient = false;
  std::vector<std::string> warnings;

  int size() const { return static_cast<int>(values.cols()); }
};

enum class EdgeFeatureMode { average, difference };

namespace detail {

inline Eigen::MatrixXd line_graph_laplacian(const Graph& g) {
  const Graph lg = line_graph(g);
  return weighted_laplacian_dense(lg, Eigen::VectorXd::Ones(lg.edge_count()));
}

/// Makes an eigensystem reproducible: within blocks of (relatively) tied
/// eigenvalues, columns are ordered by the index of their largest-magnitude
/// entry; then each column's first non-negligible entry is made positive.
inline void canonicalize_eigensystem(Eigen::VectorXd& lambda, Eigen::MatrixXd& v) {
  const Eigen::Index m = lambda.size();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(m));
  std::iota(order.begin(), order.end(), 0);
  std::vector<Eigen::Index> peak(static_cast<std::size_t>(m));
  for (Eigen::Index j = 0; j < m; ++j) v.col(j).cwiseAbs().maxCoeff(&peak[static_cast<std::size_t>(j)]);

  Eigen::Index start = 0;
  while (start < m) {
    Eigen::Index end = start + 1;
    while (end < m &&
           std::abs(lambda(end) - lambda(end - 1)) < 1e-9 * std::max(1.0, std::abs(lambda(end)))) {
      ++end;
    }
    std::stable_sort(order.begin() + start, order.begin() + end, [&peak](Eigen::Index a, Eigen::Index b) {
      return peak[static_cast<std::size_t>(a)] < peak[static_cast<std::size_t>(b)];
    });
    start = end;
  }

  Eigen::VectorXd lambda_sorted(m);
  Eigen::MatrixXd v_sorted(v.rows(), m);
  for (Eigen::Index j = 0; j < m; ++j) {
    lambda_sorted(j) = lambda(order[static_cast<std::size_t>(j)]);
    v_sorted.col(j) = v.col(order[static_cast<std::size_t>(j)]);
    const double tol = 1e-10 * v_sorted.col(j).cwiseAbs().maxCoeff();
    for (Eigen::Index i = 0; i < v.rows(); ++i) {
      if (std::abs(v_sorted(i, j)) > tol) {
        if (v_sorted(i, j) < 0.0) v_sorted.col(j) *= -1.0;
        break;
      }
    }
  }
  lambda = std::move(lambda_sorted);
  v = std::move(v_sorted);
}

}  // namespace detail

/// Eigenvectors of the line-graph Laplacian for its k smallest eigenvalues.
/// Column 0 is exactly the constant 1/sqrt(q) with eigenvalue 0.
inline EdgeBasis lgl_eigenbasis(const Graph& g, int k) {
  const int q = g.edge_count();
  detail::require(k >= 1 && k <= q, "basis size k must lie in [1, " + std::to_string(q) + "], got " +
                                        std::to_string(k));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(detail::line_graph_laplacian(g));
  if (eig.info() != Eigen::Success) throw NumericalError("line-graph Laplacian eigendecomposition failed");
  Eigen::VectorXd lambda = eig.eigenvalues();
  Eigen::MatrixXd v = eig.eigenvectors();
  // Connected line graph: one zero eigenvalue whose eigenvector is constant.
  lambda(0) = 0.0;
  v.col(0).setConstant(1.0 / std::sqrt(static_cast<double>(q)));
  detail::canonicalize_eigensystem(lambda, v);

  EdgeBasis basis;
  basis.vectors = v.leftCols(k);
  basis.eigenvalues = lambda.head(k).cwiseMax(0.0);
  basis.graph_hash = g.hash();
  return basis;
}

/// Edge features from node features: midpoint average (x_i + x_j)/2, or the
/// absolute difference |x_i - x_j|.
inline EdgeCovariates edge_covariates_from_nodes(const Graph& g, const Eigen::MatrixXd& x, EdgeFeatureMode mode,
                                                 std::vector<std::string> names = {}) {
  detail::require(x.rows() == g.nodes(), "node feature matrix has " + std::to_string(x.rows()) +
                                             " rows, graph has " + std::to_string(g.nodes()) + " nodes");
  detail::require(x.allFinite(), "node features must be finite");
  if (names.empty()) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) names.push_back("x" + std::to_string(j));
  }
  detail::require(static_cast<Eigen::Index>(names.size()) == x.cols(), "one name per feature column");

  EdgeCovariates out;
  out.values.resize(g.edge_count(), x.cols());
  for (int e = 0; e < g.edge_count(); ++e) {
    const auto& ed = g.edge(e);
    if (mode == EdgeFeatureMode::average) {
      out.values.row(e) = 0.5 * (x.row(ed.u) + x.row(ed.v));
    } else {
      out.values.row(e) = (x.row(ed.u) - x.row(ed.v)).cwiseAbs();
    }
  }
  out.names = std::move(names);
  if (x.cols() > 0) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(out.values);
    qr.setThreshold(1e-10);
    if (qr.rank() < out.values.cols()) {
      out.rank_deficient = true;
      out.warnings.push_back("edge covariate matrix has rank " + std::to_string(qr.rank()) + " < " +
                             std::to_string(out.values.cols()) + " columns");
    }
  }
  return out;
}

/// Eigenvectors of X^perp L^L X^perp restricted to the orthogonal complement
/// of the covariate column space, k smallest. With no covariates this is
/// lgl_eigenbasis.
inline EdgeBasis orthogonalized_basis(const Graph& g, const EdgeCovariates& xe, int k) {
  const int q = g.edge_count();
  const int r = xe.size();
  if (r == 0) return lgl_eigenbasis(g, k);
  detail::require(xe.values.rows() == q, "edge covariates have " + std::to_string(xe.values.rows()) +
                                             " rows, graph has " + std::to_string(q) + " edges");
  detail::require(k >= 1 && k <= q - r,
                  "basis size k must lie in [1, " + std::to_string(q - r) + "], got " + std::to_string(k));
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> rank_check(xe.values);
  rank_check.setThreshold(1e-10);
  if (rank_check.rank() < r) throw ValidationError("edge covariates are rank deficient: X'X is singular");

  Eigen::HouseholderQR<Eigen::MatrixXd> qr(xe.values);
  const Eigen::MatrixXd q_full = qr.householderQ() * Eigen::MatrixXd::Identity(q, q);
  const Eigen::MatrixXd complement = q_full.rightCols(q - r);
  const Eigen::MatrixXd projected = complement.transpose() * detail::line_graph_laplacian(g) * complement;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (projected + projected.transpose()));
  if (eig.info() != Eigen::Success) throw NumericalError("projected line-graph Laplacian eigendecomposition failed");
  Eigen::VectorXd lambda = eig.eigenvalues();
  Eigen::MatrixXd v = complement * eig.eigenvectors();
  detail::canonicalize_eigensystem(lambda, v);

  EdgeBasis basis;
  basis.vectors = v.leftCols(k);
  basis.eigenvalues = lambda.head(k).cwiseMax(0.0);
  basis.orthogonalized = true;
  basis.graph_hash = g.hash();
  return basis;
}

/// Log edge weights are basis * eta (+ covariates * psi).
struct WeightModel {
  Eigen::MatrixXd basis;       // q x k
  Eigen::VectorXd eta;         // k
  Eigen::MatrixXd covariates;  // q x r, r may be 0
  Eigen::VectorXd psi;         // r
  bool intercept_fixed = false;
  std::uint64_t graph_hash = 0;

  static WeightModel from_basis(const EdgeBasis& b, Eigen::VectorXd eta) {
    WeightModel m;
    m.basis = b.vectors;
    m.eta = std::move(eta);
    m.covariates.resize(b.edge_count(), 0);
    m.graph_hash = b.graph_hash;
    return m;
  }
};

inline Eigen::VectorXd log_weights(const WeightModel& m) {
  detail::require(m.eta.size() == m.basis.cols(), "eta has " + std::to_string(m.eta.size()) +
                                                      " entries, basis has " + std::to_string(m.basis.cols()) +
                                                      " columns");
  detail::require(m.psi.size() == m.covariates.cols(), "psi length must match covariate count");
  detail::require(m.eta.allFinite() && m.psi.allFinite(), "coefficients must be finite");
  if (m.intercept_fixed) {
    detail::require(m.eta.size() >= 1 && m.eta(0) == 0.0, "intercept is fixed but eta[0] != 0");
  }
  Eigen::VectorXd lw = m.basis * m.eta;
  if (m.covariates.cols() > 0) lw += m.covariates * m.psi;
  return lw;
}

/// w = exp(X psi + V eta).
inline EdgeWeights weights_from_coefficients(const WeightModel& m) {
  Eigen::VectorXd w = log_weights(m).array().exp();
  return EdgeWeights(m.graph_hash, static_cast<int>(m.basis.rows()), std::move(w));
}

/// Indicators of lattice edges joining nodes in the same row, and in the same
/// column. They partition the edge set.
inline std::pair<Eigen::VectorXd, Eigen::VectorXd> split_intercept_row_col(const Graph& g) {
  detail::require(g.lattice().has_value() && g.coordinates().has_value(),
                  "row/column intercept split needs a lattice graph");
  const auto& xy = *g.coordinates();
  Eigen::VectorXd row = Eigen::VectorXd::Zero(g.edge_count());
  Eigen::VectorXd col = Eigen::VectorXd::Zero(g.edge_count());
  for (int e = 0; e < g.edge_count(); ++e) {
    const auto& a = xy[static_cast<std::size_t>(g.edge(e).u)];
    const auto& b = xy[static_cast<std::size_t>(g.edge(e).v)];
    if (a[0] == b[0]) {
      row(e) = 1.0;
    } else if (a[1] == b[1]) {
      col(e) = 1.0;
    } else {
      throw ValidationError("edge " + std::to_string(e) + " is neither a row nor a column edge");
    }
  }
  return {row, col};
}

/// round(sqrt(n p)) clamped to [2, q].
inline int default_basis_size(int n, int p, int q) {
  const int k = static_cast<int>(std::lround(std::sqrt(static_cast<double>(n) * p)));
  return std::clamp(k, std::min(2, q), q);
}

}  // namespace graphcov
