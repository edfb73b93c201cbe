#pragma once

#include <algorithm>
#include <functional>
#include <numeric>
#include <random>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "graphcov/graphcov.hpp"

namespace testsupport {

using graphcov::Graph;

/// Random connected graph: a random spanning tree plus each remaining pair
/// with probability `extra`.
inline Graph random_connected_graph(int p, double extra, std::mt19937_64& rng) {
  std::vector<int> label(p);
  std::iota(label.begin(), label.end(), 0);
  std::shuffle(label.begin(), label.end(), rng);
  std::vector<std::pair<int, int>> pairs;
  std::vector<std::vector<bool>> used(p, std::vector<bool>(p, false));
  for (int i = 1; i < p; ++i) {
    std::uniform_int_distribution<int> pick(0, i - 1);
    const int a = label[i], b = label[pick(rng)];
    pairs.emplace_back(a, b);
    used[a][b] = used[b][a] = true;
  }
  std::bernoulli_distribution coin(extra);
  for (int a = 0; a < p; ++a)
    for (int b = a + 1; b < p; ++b)
      if (!used[a][b] && coin(rng)) pairs.emplace_back(a, b);
  return graphcov::build_graph(p, pairs);
}

inline Eigen::VectorXd random_positive_weights(int q, std::mt19937_64& rng, double lo = 0.3, double hi = 3.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Eigen::VectorXd w(q);
  for (int e = 0; e < q; ++e) w(e) = u(rng);
  return w;
}

inline Eigen::MatrixXd random_spd(int p, std::mt19937_64& rng) {
  std::normal_distribution<double> z;
  Eigen::MatrixXd a(p, p);
  for (int i = 0; i < p; ++i)
    for (int j = 0; j < p; ++j) a(i, j) = z(rng);
  return a * a.transpose() + 0.5 * Eigen::MatrixXd::Identity(p, p);
}

inline Eigen::VectorXd random_normal_vector(int n, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> z(0.0, sd);
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v(i) = z(rng);
  return v;
}

/// Central differences of a scalar function.
inline Eigen::VectorXd central_gradient(const std::function<double(const Eigen::VectorXd&)>& f,
                                        const Eigen::VectorXd& x, double h) {
  Eigen::VectorXd g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Eigen::VectorXd a = x, b = x;
    a(i) += h;
    b(i) -= h;
    g(i) = (f(a) - f(b)) / (2.0 * h);
  }
  return g;
}

/// Relative error with a unit floor on the scale.
inline double relative_error(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return (a - b).lpNorm<Eigen::Infinity>() / std::max(1.0, b.lpNorm<Eigen::Infinity>());
}

}  // namespace testsupport
