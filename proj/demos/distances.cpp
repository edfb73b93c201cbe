// Quasi-Euclidean distances on a path of four nodes. Raising one edge weight
// pulls its endpoints together and leaves the rest of the geometry nearly
// intact, which is how edge weights deform a GDEF covariance.

#include <cstdio>

#include "graphcov/graphcov.hpp"

namespace {

void show(const char* title, const Eigen::MatrixXd& d) {
  std::printf("%s\n", title);
  for (Eigen::Index i = 0; i < d.rows(); ++i) {
    for (Eigen::Index j = 0; j < d.cols(); ++j) std::printf("%8.4f", d(i, j));
    std::printf("\n");
  }
}

}  // namespace

int main() {
  using namespace graphcov;
  const Graph path = build_graph(4, {{0, 1}, {1, 2}, {2, 3}});

  show("unit weights", quasi_euclidean_distances(path, EdgeWeights::uniform(path, 1.0)));

  Eigen::VectorXd w = Eigen::VectorXd::Ones(3);
  w(1) = 10.0;  // strengthen the middle edge
  show("middle edge weight 10", quasi_euclidean_distances(path, EdgeWeights(path, w)));

  const Eigen::MatrixXd corr = quasi_euclidean_distances(path, EdgeWeights(path, w))
                                   .unaryExpr([](double d) { return matern_correlation(d, Smoothness::three_halves); });
  show("Matern-3/2 correlation on the deformed distances", corr);
  return 0;
}
