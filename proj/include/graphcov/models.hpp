#pragma once

// Parameterized covariance models. A model maps an unconstrained parameter
// vector theta (log / logit coordinates for constrained quantities) to the
// marginal covariance of one observation, together with d Sigma / d theta_a
// (or, for the sparse CAR path, the precision and its derivatives).

#include <cmath>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include "graphcov/covariance.hpp"
#include "graphcov/errors.hpp"
#include "graphcov/graph.hpp"
#include "graphcov/matern.hpp"
#include "graphcov/spectral_basis.hpp"

namespace graphcov {

enum class ParameterKind { eta, psi, log_sigma2, logit_kappa, log_tau2, log_range };

struct ParameterInfo {
  std::string name;  // natural-scale name, e.g. "sigma2"
  ParameterKind kind;
};

inline double to_natural(ParameterKind kind, double t) {
  switch (kind) {
    case ParameterKind::eta:
    case ParameterKind::psi: return t;
    case ParameterKind::log_sigma2:
    case ParameterKind::log_tau2:
    case ParameterKind::log_range: return std::exp(t);
    case ParameterKind::logit_kappa: return 2.0 / (1.0 + std::exp(-t)) - 1.0;
  }
  return t;
}

inline double from_natural(ParameterKind kind, double v) {
  switch (kind) {
    case ParameterKind::eta:
    case ParameterKind::psi: return v;
    case ParameterKind::log_sigma2:
    case ParameterKind::log_tau2:
    case ParameterKind::log_range:
      detail::require(v > 0.0, "positive parameter expected");
      return std::log(v);
    case ParameterKind::logit_kappa: {
      detail::require(std::abs(v) < 1.0, "|kappa| < 1 expected");
      const double u = 0.5 * (v + 1.0);
      return std::log(u / (1.0 - u));
    }
  }
  return v;
}

/// Ordered description of theta: [eta (free), psi, log sigma2, logit kappa,
/// log tau2] for edge-weight models.
class ParameterLayout {
 public:
  void add(std::string name, ParameterKind kind) { entries_.push_back({std::move(name), kind}); }

  int dim() const { return static_cast<int>(entries_.size()); }
  const std::vector<ParameterInfo>& entries() const { return entries_; }
  const ParameterInfo& operator[](int i) const { return entries_.at(static_cast<std::size_t>(i)); }

  std::optional<int> find(ParameterKind kind) const {
    for (int i = 0; i < dim(); ++i)
      if (entries_[static_cast<std::size_t>(i)].kind == kind) return i;
    return std::nullopt;
  }
  std::optional<int> find(const std::string& name) const {
    for (int i = 0; i < dim(); ++i)
      if (entries_[static_cast<std::size_t>(i)].name == name) return i;
    return std::nullopt;
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& e : entries_) out.push_back(e.name);
    return out;
  }

  Eigen::VectorXd natural(const Eigen::VectorXd& theta) const {
    detail::require(theta.size() == dim(), "theta has wrong length");
    Eigen::VectorXd out(dim());
    for (int i = 0; i < dim(); ++i) out(i) = to_natural(entries_[static_cast<std::size_t>(i)].kind, theta(i));
    return out;
  }

  Eigen::VectorXd transformed(const Eigen::VectorXd& natural_values) const {
    detail::require(natural_values.size() == dim(), "natural parameter vector has wrong length");
    Eigen::VectorXd out(dim());
    for (int i = 0; i < dim(); ++i)
      out(i) = from_natural(entries_[static_cast<std::size_t>(i)].kind, natural_values(i));
    return out;
  }

 private:
  std::vector<ParameterInfo> entries_;
};

/// Either dense Sigma with dense derivatives, or (sparse CAR without nugget)
/// precision Q with sparse derivatives d Q / d theta_a.
struct CovarianceTerms {
  Eigen::MatrixXd sigma;
  std::vector<Eigen::MatrixXd> sigma_derivatives;
  std::optional<Eigen::SparseMatrix<double>> precision;
  std::vector<Eigen::SparseMatrix<double>> precision_derivatives;

  bool precision_form() const { return precision.has_value(); }
};

class CovarianceModel {
 public:
  virtual ~CovarianceModel() = default;

  virtual const ParameterLayout& layout() const = 0;
  virtual int nodes() const = 0;
  virtual std::string describe() const = 0;

  /// Marginal covariance (dense), and derivatives when requested. Models
  /// with a sparse precision path fill `precision` instead of derivatives of
  /// Sigma, and always fill `sigma` when `with_derivatives` is set.
  virtual CovarianceTerms evaluate(const Eigen::VectorXd& theta, bool with_derivatives) const = 0;

  /// Sparse precision of the marginal, when the model has one at theta.
  virtual std::optional<Eigen::SparseMatrix<double>> precision(const Eigen::VectorXd&) const { return std::nullopt; }

  /// Direction in theta along which the overall scale of distances changes
  /// (GDEF intercept, Matérn range); used by starting-value search.
  virtual std::optional<Eigen::VectorXd> scale_direction() const { return std::nullopt; }

  int dim() const { return layout().dim(); }
};

struct EdgeModelOptions {
  Family family = Family::gdef;
  Smoothness nu = Smoothness::three_halves;
  bool intercept_fixed = false;  // drop basis column 0 from theta
  bool nugget = false;
  std::optional<double> fixed_sigma2;  // nullopt: sigma2 is estimated
};

/// GDEF or CAR covariance with log edge weights = basis * eta + X psi.
class EdgeWeightModel final : public CovarianceModel {
 public:
  EdgeWeightModel(Graph graph, Eigen::MatrixXd basis, std::vector<std::string> basis_names,
                  EdgeCovariates covariates, EdgeModelOptions options)
      : graph_(std::move(graph)),
        basis_(std::move(basis)),
        basis_names_(std::move(basis_names)),
        covariates_(std::move(covariates)),
        options_(options) {
    const int q = graph_.edge_count();
    detail::require(options_.family != Family::icar, "ICAR is improper and cannot be fitted by likelihood");
    detail::require(basis_.rows() == q, "basis has " + std::to_string(basis_.rows()) + " rows, graph has " +
                                            std::to_string(q) + " edges");
    if (covariates_.values.size() == 0) covariates_.values.resize(q, 0);
    detail::require(covariates_.values.rows() == q, "edge covariates must have one row per edge");
    detail::require(static_cast<Eigen::Index>(basis_names_.size()) == basis_.cols(), "one name per basis column");
    if (covariates_.names.empty())
      for (int j = 0; j < covariates_.size(); ++j) covariates_.names.push_back("x" + std::to_string(j));
    detail::require(!options_.intercept_fixed || basis_.cols() >= 1, "intercept_fixed needs a basis column");
    if (options_.fixed_sigma2) detail::require(*options_.fixed_sigma2 > 0.0, "fixed sigma2 must be > 0");

    first_free_ = options_.intercept_fixed ? 1 : 0;
    for (Eigen::Index j = first_free_; j < basis_.cols(); ++j)
      layout_.add(basis_names_[static_cast<std::size_t>(j)], ParameterKind::eta);
    for (const auto& name : covariates_.names) layout_.add("psi_" + name, ParameterKind::psi);
    if (!options_.fixed_sigma2) layout_.add("sigma2", ParameterKind::log_sigma2);
    if (options_.family == Family::car) layout_.add("kappa", ParameterKind::logit_kappa);
    if (options_.nugget) layout_.add("tau2", ParameterKind::log_tau2);

    const Eigen::Index free_cols = basis_.cols() - first_free_;
    design_.resize(q, free_cols + covariates_.size());
    design_.leftCols(free_cols) = basis_.rightCols(free_cols);
    design_.rightCols(covariates_.size()) = covariates_.values;
  }

  /// LGL eigenbasis of size k; names eta1..etak.
  static EdgeWeightModel with_lgl_basis(const Graph& g, int k, EdgeModelOptions options,
                                        EdgeCovariates covariates = {}) {
    const EdgeBasis b = covariates.size() > 0 ? orthogonalized_basis(g, covariates, k) : lgl_eigenbasis(g, k);
    std::vector<std::string> names;
    for (int j = 0; j < k; ++j) names.push_back("eta" + std::to_string(j + 1));
    return EdgeWeightModel(g, b.vectors, std::move(names), std::move(covariates), options);
  }

  /// Basis whose intercept is split into row-edge and column-edge indicators,
  /// followed by LGL eigenvectors 2..k-1 (k columns in total).
  static EdgeWeightModel with_rowcol_intercept(const Graph& g, int k, EdgeModelOptions options) {
    detail::require(k >= 2, "row/column intercept needs k >= 2");
    const auto [row, col] = split_intercept_row_col(g);
    const EdgeBasis b = lgl_eigenbasis(g, k - 1);
    Eigen::MatrixXd basis(g.edge_count(), k);
    basis.col(0) = row;
    basis.col(1) = col;
    basis.rightCols(k - 2) = b.vectors.rightCols(k - 2);
    std::vector<std::string> names{"eta1_row", "eta1_col"};
    for (int j = 2; j < k; ++j) names.push_back("eta" + std::to_string(j));
    options.intercept_fixed = false;
    return EdgeWeightModel(g, std::move(basis), std::move(names), {}, options);
  }

  const ParameterLayout& layout() const override { return layout_; }
  int nodes() const override { return graph_.nodes(); }
  const Graph& graph() const { return graph_; }
  const EdgeModelOptions& options() const { return options_; }
  const Eigen::MatrixXd& basis() const { return basis_; }
  const EdgeCovariates& covariates() const { return covariates_; }

  std::string describe() const override {
    std::string s = to_string(options_.family);
    if (options_.family == Family::gdef) s += " nu=" + to_string(options_.nu);
    s += " k=" + std::to_string(basis_.cols());
    if (covariates_.size() > 0) s += " r=" + std::to_string(covariates_.size());
    if (options_.nugget) s += " +nugget";
    return s;
  }

  Eigen::VectorXd full_eta(const Eigen::VectorXd& theta) const {
    Eigen::VectorXd eta = Eigen::VectorXd::Zero(basis_.cols());
    const Eigen::Index free_cols = basis_.cols() - first_free_;
    eta.tail(free_cols) = theta.head(free_cols);
    return eta;
  }

  Eigen::VectorXd psi(const Eigen::VectorXd& theta) const {
    return theta.segment(basis_.cols() - first_free_, covariates_.size());
  }

  Eigen::VectorXd log_weights(const Eigen::VectorXd& theta) const {
    check_theta(theta);
    return design_ * theta.head(design_.cols());
  }

  EdgeWeights weights(const Eigen::VectorXd& theta) const {
    return EdgeWeights(graph_, log_weights(theta).array().exp().matrix());
  }

  double sigma2(const Eigen::VectorXd& theta) const {
    if (options_.fixed_sigma2) return *options_.fixed_sigma2;
    return std::exp(theta(*layout_.find(ParameterKind::log_sigma2)));
  }
  double kappa(const Eigen::VectorXd& theta) const {
    const auto i = layout_.find(ParameterKind::logit_kappa);
    return i ? to_natural(ParameterKind::logit_kappa, theta(*i)) : 0.0;
  }
  double tau2(const Eigen::VectorXd& theta) const {
    const auto i = layout_.find(ParameterKind::log_tau2);
    return i ? std::exp(theta(*i)) : 0.0;
  }

  CovarianceSpec spec(const Eigen::VectorXd& theta) const {
    CovarianceSpec s;
    s.family = options_.family;
    s.nu = options_.nu;
    s.sigma2 = sigma2(theta);
    s.kappa = kappa(theta);
    s.tau2 = tau2(theta);
    return s;
  }

  std::optional<Eigen::VectorXd> scale_direction() const override {
    if (options_.family != Family::gdef || design_.cols() == 0) return std::nullopt;
    const Eigen::VectorXd ones = Eigen::VectorXd::Ones(graph_.edge_count());
    Eigen::VectorXd u = design_.colPivHouseholderQr().solve(ones);
    if ((design_ * u - ones).norm() > 1e-8 * std::sqrt(static_cast<double>(ones.size()))) return std::nullopt;
    Eigen::VectorXd dir = Eigen::VectorXd::Zero(dim());
    dir.head(design_.cols()) = u;
    return dir;
  }

  std::optional<Eigen::SparseMatrix<double>> precision(const Eigen::VectorXd& theta) const override {
    if (options_.family != Family::car || options_.nugget) return std::nullopt;
    const Eigen::VectorXd w = log_weights(theta).array().exp();
    return Eigen::SparseMatrix<double>(detail::car_structure(graph_, w, kappa(theta)) / sigma2(theta));
  }

  CovarianceTerms evaluate(const Eigen::VectorXd& theta, bool with_derivatives) const override {
    check_theta(theta);
    return options_.family == Family::gdef ? evaluate_gdef(theta, with_derivatives)
                                           : evaluate_car(theta, with_derivatives);
  }

  /// d Sigma / d w_e for every edge (GDEF, no nugget term), following the
  /// chain L -> L+ -> {L+}^2 -> D^2 -> D -> Sigma. Intended for small graphs.
  std::vector<Eigen::MatrixXd> sigma_weight_derivatives(const Eigen::VectorXd& theta) const {
    detail::require(options_.family == Family::gdef, "per-edge derivatives are defined for GDEF");
    const Eigen::VectorXd w = log_weights(theta).array().exp();
    const auto pieces = gdef_pieces(w);
    const Eigen::MatrixXd g = sigma2(theta) * pieces.dsq_correlation;
    std::vector<Eigen::MatrixXd> out;
    out.reserve(static_cast<std::size_t>(graph_.edge_count()));
    for (int e = 0; e < graph_.edge_count(); ++e) {
      Eigen::VectorXd unit = Eigen::VectorXd::Zero(graph_.edge_count());
      unit(e) = 1.0;
      out.push_back(g.cwiseProduct(gdef_distance_sq_derivative(unit, pieces)));
    }
    return out;
  }

 private:
  struct GdefPieces {
    Eigen::MatrixXd lpinv;            // L+
    Eigen::MatrixXd lpinv_sq;         // {L+}^2
    Eigen::MatrixXd distance;         // D
    Eigen::MatrixXd correlation;      // rho(D)
    Eigen::MatrixXd dsq_correlation;  // d rho / d(D^2), zero diagonal
  };

  void check_theta(const Eigen::VectorXd& theta) const {
    detail::require(theta.size() == dim(), "theta has " + std::to_string(theta.size()) + " entries, model " +
                                               describe() + " expects " + std::to_string(dim()));
    detail::require(theta.allFinite(), "theta must be finite");
  }

  GdefPieces gdef_pieces(const Eigen::VectorXd& w) const {
    GdefPieces pc;
    pc.lpinv = detail::laplacian_pinv_cholesky(detail::weighted_laplacian_dense(graph_, w));
    pc.lpinv_sq = pc.lpinv * pc.lpinv;
    pc.lpinv_sq = 0.5 * (pc.lpinv_sq + pc.lpinv_sq.transpose());
    pc.distance = delta_transform(pc.lpinv_sq).cwiseMax(0.0).cwiseSqrt();
    pc.correlation = detail::matern_of(pc.distance, options_.nu);
    const Smoothness nu = options_.nu;
    pc.dsq_correlation = pc.distance.unaryExpr([nu](double d) { return matern_correlation_dsq(d, nu); });
    pc.dsq_correlation.diagonal().setZero();
    return pc;
  }

  /// d(D^2) along edge-weight direction c: dL = Laplacian(c),
  /// d{L+}^2 = -({L+}^2 dL L+ + L+ dL {L+}^2), d(D^2) = Delta(d{L+}^2).
  Eigen::MatrixXd gdef_distance_sq_derivative(const Eigen::VectorXd& c, const GdefPieces& pc) const {
    const Eigen::SparseMatrix<double> dl = detail::weighted_laplacian_sparse(graph_, c);
    const Eigen::MatrixXd a = dl * pc.lpinv;
    const Eigen::MatrixXd m = pc.lpinv_sq * a;
    return delta_transform(-(m + m.transpose()));
  }

  CovarianceTerms evaluate_gdef(const Eigen::VectorXd& theta, bool with_derivatives) const {
    const Eigen::VectorXd w = log_weights(theta).array().exp();
    const GdefPieces pc = gdef_pieces(w);
    const double s2 = sigma2(theta);
    const double t2 = tau2(theta);
    CovarianceTerms out;
    out.sigma = s2 * pc.correlation;
    out.sigma.diagonal().array() += t2;
    if (!with_derivatives) return out;

    const Eigen::MatrixXd g = s2 * pc.dsq_correlation;
    out.sigma_derivatives.reserve(static_cast<std::size_t>(dim()));
    for (Eigen::Index j = 0; j < design_.cols(); ++j) {
      const Eigen::VectorXd c = w.cwiseProduct(design_.col(j));
      out.sigma_derivatives.push_back(g.cwiseProduct(gdef_distance_sq_derivative(c, pc)));
    }
    if (!options_.fixed_sigma2) out.sigma_derivatives.push_back(s2 * pc.correlation);
    if (options_.nugget) out.sigma_derivatives.push_back(t2 * Eigen::MatrixXd::Identity(nodes(), nodes()));
    return out;
  }

  CovarianceTerms evaluate_car(const Eigen::VectorXd& theta, bool with_derivatives) const {
    const Eigen::VectorXd w = log_weights(theta).array().exp();
    const double s2 = sigma2(theta);
    const double kap = kappa(theta);
    const double t2 = tau2(theta);
    const Eigen::SparseMatrix<double> structure = detail::car_structure(graph_, w, kap);
    Eigen::SimplicialLLT<Eigen::SparseMatrix<double>> llt(structure);
    if (llt.info() != Eigen::Success) throw NumericalError("CAR structure matrix is not positive definite");
    Eigen::MatrixXd phi = llt.solve(Eigen::MatrixXd::Identity(nodes(), nodes()));
    phi = 0.5 * (phi + phi.transpose());

    CovarianceTerms out;
    out.sigma = s2 * phi;
    out.sigma.diagonal().array() += t2;
    if (!with_derivatives) return out;

    const Eigen::SparseMatrix<double> adjacency = detail::car_structure(graph_, w, 1.0) -
                                                  detail::car_structure(graph_, w, 0.0);  // -W
    const double dkappa = 0.5 * (1.0 - kap * kap);

    if (!options_.nugget) {
      // Precision form: Q = R / sigma2.
      out.precision = structure / s2;
      for (Eigen::Index j = 0; j < design_.cols(); ++j) {
        const Eigen::VectorXd c = w.cwiseProduct(design_.col(j));
        out.precision_derivatives.push_back(detail::car_structure(graph_, c, kap) / s2);
      }
      if (!options_.fixed_sigma2) out.precision_derivatives.push_back(-(*out.precision));
      out.precision_derivatives.push_back(adjacency * (dkappa / s2));
      return out;
    }

    // Dense form: d Sigma = -sigma2 Phi dR Phi.
    for (Eigen::Index j = 0; j < design_.cols(); ++j) {
      const Eigen::VectorXd c = w.cwiseProduct(design_.col(j));
      const Eigen::MatrixXd t = detail::car_structure(graph_, c, kap) * phi;
      out.sigma_derivatives.push_back(-s2 * (phi * t));
    }
    if (!options_.fixed_sigma2) out.sigma_derivatives.push_back(s2 * phi);
    {
      const Eigen::MatrixXd t = adjacency * phi;
      out.sigma_derivatives.push_back(-s2 * dkappa * (phi * t));
    }
    out.sigma_derivatives.push_back(t2 * Eigen::MatrixXd::Identity(nodes(), nodes()));
    return out;
  }

  Graph graph_;
  Eigen::MatrixXd basis_;
  std::vector<std::string> basis_names_;
  EdgeCovariates covariates_;
  EdgeModelOptions options_;
  Eigen::Index first_free_ = 0;
  Eigen::MatrixXd design_;  // free basis columns then covariates
  ParameterLayout layout_;
};

/// Stationary Matérn on point coordinates: Sigma = sigma2 rho_nu(|x-x'| /
/// range) + tau2 I. theta = (log sigma2, log range[, log tau2]).
class MaternCoordsModel final : public CovarianceModel {
 public:
  MaternCoordsModel(std::vector<Point2> coords, Smoothness nu, bool nugget) : nu_(nu), nugget_(nugget) {
    detail::require(!coords.empty(), "need at least one coordinate");
    const auto p = static_cast<Eigen::Index>(coords.size());
    distance_.resize(p, p);
    for (Eigen::Index i = 0; i < p; ++i)
      for (Eigen::Index j = 0; j < p; ++j)
        distance_(i, j) = std::hypot(coords[static_cast<std::size_t>(i)][0] - coords[static_cast<std::size_t>(j)][0],
                                     coords[static_cast<std::size_t>(i)][1] - coords[static_cast<std::size_t>(j)][1]);
    layout_.add("sigma2", ParameterKind::log_sigma2);
    layout_.add("range", ParameterKind::log_range);
    if (nugget_) layout_.add("tau2", ParameterKind::log_tau2);
  }

  const ParameterLayout& layout() const override { return layout_; }
  int nodes() const override { return static_cast<int>(distance_.rows()); }
  std::string describe() const override { return "matern nu=" + to_string(nu_) + (nugget_ ? " +nugget" : ""); }

  std::optional<Eigen::VectorXd> scale_direction() const override {
    Eigen::VectorXd dir = Eigen::VectorXd::Zero(dim());
    dir(1) = 1.0;
    return dir;
  }

  CovarianceTerms evaluate(const Eigen::VectorXd& theta, bool with_derivatives) const override {
    detail::require(theta.size() == dim() && theta.allFinite(), "bad theta for Matérn model");
    const double s2 = std::exp(theta(0));
    const double range = std::exp(theta(1));
    const double t2 = nugget_ ? std::exp(theta(2)) : 0.0;
    const Eigen::MatrixXd scaled = distance_ / range;
    const Smoothness nu = nu_;
    const Eigen::MatrixXd rho = scaled.unaryExpr([nu](double d) { return matern_correlation(d, nu); });
    CovarianceTerms out;
    out.sigma = s2 * rho;
    out.sigma.diagonal().array() += t2;
    if (!with_derivatives) return out;
    out.sigma_derivatives.push_back(s2 * rho);
    out.sigma_derivatives.push_back(
        -s2 * scaled.unaryExpr([nu](double d) { return d * matern_correlation_dd(d, nu); }));
    if (nugget_) out.sigma_derivatives.push_back(t2 * Eigen::MatrixXd::Identity(nodes(), nodes()));
    return out;
  }

 private:
  Smoothness nu_;
  bool nugget_;
  Eigen::MatrixXd distance_;
  ParameterLayout layout_;
};

}  // namespace graphcov
