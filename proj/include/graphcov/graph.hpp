#pragma once

// Undirected simple graphs with a canonical edge order, Laplacian algebra and
// the quasi-Euclidean node distances induced by positive edge weights.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "graphcov/errors.hpp"

namespace graphcov {

struct Edge {
  int u;  // u < v
  int v;
  friend bool operator==(const Edge&, const Edge&) = default;
  friend auto operator<=>(const Edge&, const Edge&) = default;
};

/// (row, col) position for lattice graphs; midpoints for line graphs of them.
using Point2 = std::array<double, 2>;

struct LatticeShape {
  int rows;
  int cols;
};

/// Connected simple undirected graph. Edges are stored sorted by (min, max)
/// node index; the position in that order is the edge's identity everywhere
/// (weights, basis rows, covariate rows, files).
class Graph {
 public:
  Graph(int nodes, std::vector<std::pair<int, int>> pairs) : nodes_(nodes) {
    detail::require(nodes >= 1, "graph must have at least one node, got " + std::to_string(nodes));
    edges_.reserve(pairs.size());
    for (auto [a, b] : pairs) {
      if (a < 0 || b < 0 || a >= nodes || b >= nodes) {
        throw ValidationError("edge (" + std::to_string(a) + "," + std::to_string(b) +
                              ") references a node outside [0, " + std::to_string(nodes) + ")");
      }
      if (a == b) throw ValidationError("self-loop at node " + std::to_string(a));
      edges_.push_back(Edge{std::min(a, b), std::max(a, b)});
    }
    std::sort(edges_.begin(), edges_.end());
    auto dup = std::adjacent_find(edges_.begin(), edges_.end());
    if (dup != edges_.end()) {
      throw ValidationError("duplicate edge (" + std::to_string(dup->u) + "," + std::to_string(dup->v) + ")");
    }
    check_connected();
  }

  int nodes() const { return nodes_; }
  int edge_count() const { return static_cast<int>(edges_.size()); }
  const std::vector<Edge>& edges() const { return edges_; }
  const Edge& edge(int e) const { return edges_.at(static_cast<std::size_t>(e)); }

  std::optional<int> edge_index(int a, int b) const {
    Edge key{std::min(a, b), std::max(a, b)};
    auto it = std::lower_bound(edges_.begin(), edges_.end(), key);
    if (it == edges_.end() || !(*it == key)) return std::nullopt;
    return static_cast<int>(it - edges_.begin());
  }

  std::vector<int> degrees() const {
    std::vector<int> deg(static_cast<std::size_t>(nodes_), 0);
    for (const auto& e : edges_) {
      ++deg[static_cast<std::size_t>(e.u)];
      ++deg[static_cast<std::size_t>(e.v)];
    }
    return deg;
  }

  /// Edge indices incident to each node, ascending.
  std::vector<std::vector<int>> incident_edges() const {
    std::vector<std::vector<int>> inc(static_cast<std::size_t>(nodes_));
    for (int e = 0; e < edge_count(); ++e) {
      inc[static_cast<std::size_t>(edges_[static_cast<std::size_t>(e)].u)].push_back(e);
      inc[static_cast<std::size_t>(edges_[static_cast<std::size_t>(e)].v)].push_back(e);
    }
    return inc;
  }

  const std::optional<std::vector<Point2>>& coordinates() const { return coordinates_; }
  void set_coordinates(std::vector<Point2> coords) {
    detail::require(static_cast<int>(coords.size()) == nodes_, "coordinate count must equal node count");
    coordinates_ = std::move(coords);
  }

  const std::optional<LatticeShape>& lattice() const { return lattice_; }
  void set_lattice(LatticeShape shape) { lattice_ = shape; }

  /// FNV-1a over (p, edge list); ties weights, bases and files to a graph.
  std::uint64_t hash() const {
    std::uint64_t h = 1469598103934665603ULL;
    auto feed = [&h](std::uint64_t x) {
      for (int i = 0; i < 8; ++i) {
        h ^= (x >> (8 * i)) & 0xFFu;
        h *= 1099511628211ULL;
      }
    };
    feed(static_cast<std::uint64_t>(nodes_));
    for (const auto& e : edges_) {
      feed(static_cast<std::uint64_t>(e.u));
      feed(static_cast<std::uint64_t>(e.v));
    }
    return h;
  }

 private:
  void check_connected() const {
    std::vector<int> parent(static_cast<std::size_t>(nodes_));
    std::iota(parent.begin(), parent.end(), 0);
    auto find = [&parent](int x) {
      while (parent[static_cast<std::size_t>(x)] != x) {
        parent[static_cast<std::size_t>(x)] = parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(x)])];
        x = parent[static_cast<std::size_t>(x)];
      }
      return x;
    };
    for (const auto& e : edges_) parent[static_cast<std::size_t>(find(e.u))] = find(e.v);
    const int root = find(0);
    for (int v = 1; v < nodes_; ++v) {
      if (find(v) != root) {
        throw ValidationError("graph is disconnected: node 0 and node " + std::to_string(v) +
                              " lie in different components");
      }
    }
  }

  int nodes_;
  std::vector<Edge> edges_;
  std::optional<std::vector<Point2>> coordinates_;
  std::optional<LatticeShape> lattice_;
};

inline Graph build_graph(int nodes, std::vector<std::pair<int, int>> pairs) {
  return Graph(nodes, std::move(pairs));
}

/// Rook-adjacency lattice; node index = row * cols + col.
inline Graph lattice_graph(int rows, int cols) {
  detail::require(rows >= 1 && cols >= 1, "lattice dimensions must be positive, got " + std::to_string(rows) +
                                              "x" + std::to_string(cols));
  detail::require(rows * cols >= 2, "lattice must have at least two nodes");
  std::vector<std::pair<int, int>> pairs;
  pairs.reserve(static_cast<std::size_t>(rows * (cols - 1) + cols * (rows - 1)));
  std::vector<Point2> coords;
  coords.reserve(static_cast<std::size_t>(rows * cols));
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const int node = r * cols + c;
      coords.push_back({static_cast<double>(r), static_cast<double>(c)});
      if (c + 1 < cols) pairs.emplace_back(node, node + 1);
      if (r + 1 < rows) pairs.emplace_back(node, node + cols);
    }
  }
  Graph g(rows * cols, std::move(pairs));
  g.set_coordinates(std::move(coords));
  g.set_lattice({rows, cols});
  return g;
}

/// Node e of the result is edge e of `g`; two nodes are adjacent iff the
/// underlying edges share an endpoint.
inline Graph line_graph(const Graph& g) {
  std::vector<std::pair<int, int>> pairs;
  for (const auto& inc : g.incident_edges()) {
    for (std::size_t a = 0; a < inc.size(); ++a)
      for (std::size_t b = a + 1; b < inc.size(); ++b) pairs.emplace_back(inc[a], inc[b]);
  }
  Graph lg(g.edge_count(), std::move(pairs));
  if (g.coordinates()) {
    const auto& xy = *g.coordinates();
    std::vector<Point2> mid;
    mid.reserve(g.edges().size());
    for (const auto& e : g.edges()) {
      const auto& a = xy[static_cast<std::size_t>(e.u)];
      const auto& b = xy[static_cast<std::size_t>(e.v)];
      mid.push_back({0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])});
    }
    lg.set_coordinates(std::move(mid));
  }
  return lg;
}

/// Positive weights, one per canonical edge index of the graph they were
/// validated against.
class EdgeWeights {
 public:
  EdgeWeights(const Graph& g, Eigen::VectorXd values) : EdgeWeights(g.hash(), g.edge_count(), std::move(values)) {}

  EdgeWeights(std::uint64_t graph_hash, int edge_count, Eigen::VectorXd values)
      : graph_hash_(graph_hash), values_(std::move(values)) {
    detail::require(values_.size() == edge_count, "weight vector has " + std::to_string(values_.size()) +
                                                      " entries, graph has " + std::to_string(edge_count) +
                                                      " edges");
    for (Eigen::Index e = 0; e < values_.size(); ++e) {
      if (!(std::isfinite(values_(e)) && values_(e) > 0.0)) {
        std::ostringstream msg;
        msg << "edge weight " << e << " must be positive and finite, got " << values_(e);
        throw ValidationError(msg.str());
      }
    }
  }

  static EdgeWeights uniform(const Graph& g, double value) {
    return EdgeWeights(g, Eigen::VectorXd::Constant(g.edge_count(), value));
  }

  const Eigen::VectorXd& values() const { return values_; }
  std::uint64_t graph_hash() const { return graph_hash_; }
  Eigen::Index size() const { return values_.size(); }

  void check_matches(const Graph& g) const {
    detail::require(graph_hash_ == g.hash() && values_.size() == g.edge_count(),
                    "edge weights were built for a different graph");
  }

  /// Symmetric p x p matrix with w_e at (u,v) and (v,u), zero elsewhere.
  Eigen::MatrixXd dense(const Graph& g) const {
    check_matches(g);
    Eigen::MatrixXd w = Eigen::MatrixXd::Zero(g.nodes(), g.nodes());
    for (int e = 0; e < g.edge_count(); ++e) {
      const auto& ed = g.edge(e);
      w(ed.u, ed.v) = w(ed.v, ed.u) = values_(e);
    }
    return w;
  }

 private:
  std::uint64_t graph_hash_;
  Eigen::VectorXd values_;
};

namespace detail {

/// diag(W 1) - W for arbitrary (possibly signed) per-edge coefficients; the
/// derivative directions of the likelihood are Laplacians of this kind.
inline Eigen::SparseMatrix<double> weighted_laplacian_sparse(const Graph& g, const Eigen::VectorXd& c) {
  std::vector<Eigen::Triplet<double>> t;
  t.reserve(static_cast<std::size_t>(4 * g.edge_count()));
  for (int e = 0; e < g.edge_count(); ++e) {
    const auto& ed = g.edge(e);
    t.emplace_back(ed.u, ed.u, c(e));
    t.emplace_back(ed.v, ed.v, c(e));
    t.emplace_back(ed.u, ed.v, -c(e));
    t.emplace_back(ed.v, ed.u, -c(e));
  }
  Eigen::SparseMatrix<double> l(g.nodes(), g.nodes());
  l.setFromTriplets(t.begin(), t.end());
  return l;
}

inline Eigen::MatrixXd weighted_laplacian_dense(const Graph& g, const Eigen::VectorXd& c) {
  Eigen::MatrixXd l = Eigen::MatrixXd::Zero(g.nodes(), g.nodes());
  for (int e = 0; e < g.edge_count(); ++e) {
    const auto& ed = g.edge(e);
    l(ed.u, ed.u) += c(e);
    l(ed.v, ed.v) += c(e);
    l(ed.u, ed.v) -= c(e);
    l(ed.v, ed.u) -= c(e);
  }
  return l;
}

/// L+ = (L + J/p)^-1 - J/p for the Laplacian of a connected graph with
/// positive weights. Cholesky-based; the hot path of likelihood evaluation.
inline Eigen::MatrixXd laplacian_pinv_cholesky(const Eigen::MatrixXd& l) {
  const auto p = l.rows();
  const double jp = 1.0 / static_cast<double>(p);
  Eigen::MatrixXd shifted = l.array() + jp;
  Eigen::LLT<Eigen::MatrixXd> llt(shifted);
  if (llt.info() != Eigen::Success) throw NumericalError("Laplacian + J/p is not positive definite");
  Eigen::MatrixXd inv = llt.solve(Eigen::MatrixXd::Identity(p, p));
  inv.array() -= jp;
  return 0.5 * (inv + inv.transpose());
}

}  // namespace detail

/// diag(W 1) - W.
inline Eigen::MatrixXd laplacian(const Graph& g, const EdgeWeights& w) {
  w.check_matches(g);
  return detail::weighted_laplacian_dense(g, w.values());
}

/// Moore-Penrose pseudoinverse of a connected-graph Laplacian by symmetric
/// eigendecomposition. Eigenvalues below p * eps * lambda_max are treated as
/// zero; exactly one may be.
inline Eigen::MatrixXd laplacian_pseudoinverse(const Eigen::MatrixXd& l) {
  detail::require(l.rows() == l.cols(), "Laplacian must be square");
  const auto p = l.rows();
  detail::require(p >= 1, "Laplacian must be non-empty");
  if (p == 1) return Eigen::MatrixXd::Zero(1, 1);
  const double scale = std::max(1.0, l.cwiseAbs().maxCoeff());
  detail::require((l - l.transpose()).cwiseAbs().maxCoeff() <= 1e-10 * scale, "Laplacian must be symmetric");
  detail::require(l.rowwise().sum().cwiseAbs().maxCoeff() <= 1e-9 * scale, "Laplacian rows must sum to zero");

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(l);
  if (eig.info() != Eigen::Success) throw NumericalError("eigendecomposition of the Laplacian failed");
  const Eigen::VectorXd& lambda = eig.eigenvalues();
  const double threshold =
      static_cast<double>(p) * std::numeric_limits<double>::epsilon() * std::max(lambda(p - 1), 0.0);
  Eigen::VectorXd inv = Eigen::VectorXd::Zero(p);
  int null_count = 0;
  for (Eigen::Index i = 0; i < p; ++i) {
    if (lambda(i) > threshold) {
      inv(i) = 1.0 / lambda(i);
    } else {
      ++null_count;
    }
  }
  if (null_count != 1) {
    throw ValidationError("Laplacian has " + std::to_string(null_count) +
                          " null eigenvalues; a connected graph has exactly one");
  }
  Eigen::MatrixXd out = eig.eigenvectors() * inv.asDiagonal() * eig.eigenvectors().transpose();
  return 0.5 * (out + out.transpose());
}

/// 1 d_A' + d_A 1' - 2A, d_A = diag(A).
inline Eigen::MatrixXd delta_transform(const Eigen::MatrixXd& a) {
  detail::require(a.rows() == a.cols(), "delta_transform needs a square matrix, got " + std::to_string(a.rows()) +
                                            "x" + std::to_string(a.cols()));
  const Eigen::VectorXd d = a.diagonal();
  const auto p = a.rows();
  Eigen::MatrixXd out(p, p);
  for (Eigen::Index j = 0; j < p; ++j)
    for (Eigen::Index i = 0; i < p; ++i) out(i, j) = d(i) + d(j) - 2.0 * a(i, j);
  return out;
}

/// Elementwise square root of Delta({L+}^2), with negative round-off clamped
/// to zero. Symmetric with an exactly zero diagonal.
inline Eigen::MatrixXd distances_from_pinv(const Eigen::MatrixXd& lpinv) {
  Eigen::MatrixXd sq = lpinv * lpinv;
  sq = 0.5 * (sq + sq.transpose());
  return delta_transform(sq).cwiseMax(0.0).cwiseSqrt();
}

/// d_ij = || L+ (e_i - e_j) ||_2.
inline Eigen::MatrixXd quasi_euclidean_distances(const Graph& g, const EdgeWeights& w) {
  return distances_from_pinv(laplacian_pseudoinverse(laplacian(g, w)));
}

}  // namespace graphcov
