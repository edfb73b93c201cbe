#pragma once

// Simulation drivers, data generators and metrics: coverage of Wald
// intervals, basis-size selection under ICAR-generated weights, KL
// comparison under grid deformation, Moran's I, and the field-trial
// analysis pipeline.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "graphcov/covariance.hpp"
#include "graphcov/errors.hpp"
#include "graphcov/fit.hpp"
#include "graphcov/graph.hpp"
#include "graphcov/likelihood.hpp"
#include "graphcov/matern.hpp"
#include "graphcov/models.hpp"
#include "graphcov/report.hpp"
#include "graphcov/rng.hpp"
#include "graphcov/spectral_basis.hpp"

namespace graphcov {

// ---------------------------------------------------------------- metrics --

/// KL(N(0, sigma) || N(0, sigma_hat)) = (log(|sigma_hat| / |sigma|) +
/// tr(sigma_hat^-1 sigma) - p) / 2.
inline double kl_gaussians(const Eigen::MatrixXd& sigma, const Eigen::MatrixXd& sigma_hat) {
  detail::require(sigma.rows() == sigma.cols() && sigma_hat.rows() == sigma_hat.cols() &&
                      sigma.rows() == sigma_hat.rows(),
                  "KL needs two square matrices of the same dimension");
  Eigen::LLT<Eigen::MatrixXd> a(sigma);
  Eigen::LLT<Eigen::MatrixXd> b(sigma_hat);
  if (a.info() != Eigen::Success) throw ValidationError("KL: first covariance is not positive definite");
  if (b.info() != Eigen::Success) throw ValidationError("KL: second covariance is not positive definite");
  const double log_ratio = detail::log_det_from_llt(b) - detail::log_det_from_llt(a);
  const double trace = b.solve(sigma).trace();
  return std::max(0.0, 0.5 * (log_ratio + trace - static_cast<double>(sigma.rows())));
}

struct MoransI {
  double statistic = 0.0;
  double expected = 0.0;  // -1 / (p - 1) under no autocorrelation
  double p_value = 1.0;   // two-sided permutation p-value
  int permutations = 0;
};

/// Moran's I with 0/1 adjacency from the graph, tested by permuting the
/// residuals over nodes.
inline MoransI morans_i(const Eigen::VectorXd& residuals, const Graph& g, int permutations = 9999,
                        std::uint64_t seed = 1) {
  const int p = g.nodes();
  detail::require(residuals.size() == p, "residual vector length must equal the node count");
  detail::require(p >= 3, "Moran's I needs at least 3 nodes");
  detail::require(permutations >= 1, "permutation count must be >= 1");
  const Eigen::VectorXd r = residuals.array() - residuals.mean();
  const double rr = r.squaredNorm();
  if (!(rr > 1e-300 * p)) throw ValidationError("Moran's I is undefined for constant residuals");
  const double scale = static_cast<double>(p) / (2.0 * g.edge_count());
  auto statistic = [&](const Eigen::VectorXd& x) {
    double cross = 0.0;
    for (const auto& e : g.edges()) cross += x(e.u) * x(e.v);
    return scale * 2.0 * cross / rr;
  };
  MoransI out;
  out.statistic = statistic(r);
  out.expected = -1.0 / (p - 1.0);
  out.permutations = permutations;
  Rng rng = make_rng(seed);
  Eigen::VectorXd shuffled = r;
  const double observed = std::abs(out.statistic - out.expected);
  int extreme = 0;
  for (int b = 0; b < permutations; ++b) {
    std::shuffle(shuffled.data(), shuffled.data() + p, rng);
    if (std::abs(statistic(shuffled) - out.expected) >= observed - 1e-12) ++extreme;
  }
  out.p_value = (extreme + 1.0) / (permutations + 1.0);
  return out;
}

// ------------------------------------------------------------- generators --

struct DeformedGrid {
  int rows = 0;
  int cols = 0;
  std::vector<Point2> original;
  std::vector<Point2> deformed;
  std::vector<Point2> points;    // deformation centres
  std::vector<double> factors;   // expansion (> 1) or contraction (< 1)
  double taper_scale = 0.0;
  std::uint64_t seed = 0;
};

/// Grid coordinates (r, c), 1-based, moved sequentially around random
/// centres d: x <- x + t(x) (alpha - 1)(x - d), t(x) = exp(-|x-d|^2 / (2 s^2)),
/// s a quarter of the grid diameter and alpha log-uniform on
/// [1/strength, strength].
inline DeformedGrid deform_grid(int rows, int cols, int n_points, double strength, std::uint64_t seed) {
  detail::require(rows >= 1 && cols >= 1, "grid dimensions must be >= 1");
  detail::require(n_points >= 1, "number of deformation points must be >= 1");
  detail::require(strength >= 1.0 && std::isfinite(strength), "deformation strength must be >= 1");
  DeformedGrid out;
  out.rows = rows;
  out.cols = cols;
  out.seed = seed;
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) out.original.push_back({r + 1.0, c + 1.0});
  out.deformed = out.original;
  out.taper_scale = 0.25 * std::hypot(rows - 1.0, cols - 1.0);
  const double s2 = std::max(out.taper_scale * out.taper_scale, 1e-12);

  Rng rng = make_rng(seed);
  std::uniform_real_distribution<double> ur(1.0, std::max(1.0, static_cast<double>(rows)));
  std::uniform_real_distribution<double> uc(1.0, std::max(1.0, static_cast<double>(cols)));
  std::uniform_real_distribution<double> ua(-std::log(strength), std::log(strength));
  for (int m = 0; m < n_points; ++m) {
    const Point2 d{ur(rng), uc(rng)};
    const double alpha = strength == 1.0 ? 1.0 : std::exp(ua(rng));
    out.points.push_back(d);
    out.factors.push_back(alpha);
    for (auto& x : out.deformed) {
      const double dx = x[0] - d[0];
      const double dy = x[1] - d[1];
      const double taper = std::exp(-(dx * dx + dy * dy) / (2.0 * s2));
      x[0] += taper * (alpha - 1.0) * dx;
      x[1] += taper * (alpha - 1.0) * dy;
    }
  }
  return out;
}

/// sigma2 * rho_nu(|x_i - x_j| / range) + tau2 I.
inline Eigen::MatrixXd matern_covariance_from_coords(const std::vector<Point2>& coords, Smoothness nu, double range,
                                                     double sigma2, double tau2 = 0.0) {
  detail::require(range > 0.0, "Matérn range must be > 0");
  detail::require(sigma2 >= 0.0 && tau2 >= 0.0, "variances must be >= 0");
  const auto p = static_cast<Eigen::Index>(coords.size());
  Eigen::MatrixXd out(p, p);
  for (Eigen::Index i = 0; i < p; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) {
      const auto& a = coords[static_cast<std::size_t>(i)];
      const auto& b = coords[static_cast<std::size_t>(j)];
      out(i, j) = out(j, i) = sigma2 * matern_correlation(std::hypot(a[0] - b[0], a[1] - b[1]) / range, nu);
    }
  }
  out.diagonal().array() += tau2;
  return out;
}

struct IcarWeights {
  Eigen::VectorXd latent;  // sum-to-zero field on the line graph
  EdgeWeights weights;     // exp(scale * latent)
};

/// Edge weights whose logs are an ICAR draw on the line graph of g.
inline IcarWeights sim2_icar_weights(const Graph& g, std::uint64_t seed, double scale = 1.0) {
  detail::require(std::isfinite(scale), "scale must be finite");
  const Graph lg = line_graph(g);
  const CovarianceRealization icar = icar_structure(lg, EdgeWeights::uniform(lg, 1.0));
  Eigen::VectorXd latent = sample_gaussian(icar, 1, seed).row(0).transpose();
  Eigen::VectorXd w = (scale * latent).array().exp();
  return {std::move(latent), EdgeWeights(g, std::move(w))};
}

/// Draws n rows from N(0, sigma) (dense covariance) with a seed.
inline Eigen::MatrixXd sample_from_covariance(const Eigen::MatrixXd& sigma, int n, std::uint64_t seed) {
  CovarianceRealization r;
  r.nodes = static_cast<int>(sigma.rows());
  r.covariance = sigma;
  return sample_gaussian(r, n, seed);
}

// ------------------------------------------------------------ simulation 1 --

struct Sim1Config {
  int rows = 20;
  int cols = 20;
  int k = 10;
  int n = 10;
  int replicates = 10;
  double level = 0.90;
  double intercept_variance = 0.5;
  double coefficient_variance = 25.0;
  std::uint64_t seed = 1;
  int jobs = 1;
};

inline Json to_json(const Sim1Config& c) {
  return Json{{"rows", c.rows}, {"cols", c.cols}, {"p", c.rows * c.cols}, {"k", c.k}, {"n", c.n},
              {"replicates", c.replicates}, {"level", c.level}, {"intercept_variance", c.intercept_variance},
              {"coefficient_variance", c.coefficient_variance}, {"seed", c.seed}};
}

/// Coverage of Wald intervals for the basis coefficients of a correctly
/// specified GDEF model (nu = 3/2, sigma2 = 1 known, zero mean).
inline ExperimentReport sim1_coverage(const Sim1Config& cfg) {
  detail::require(cfg.replicates >= 1 && cfg.n >= 1, "replicates and n must be >= 1");
  const auto start = std::chrono::steady_clock::now();
  const Graph g = lattice_graph(cfg.rows, cfg.cols);
  detail::require(cfg.k >= 1 && cfg.k <= g.edge_count(), "k must lie in [1, q]");
  EdgeModelOptions opts;
  opts.nu = Smoothness::three_halves;
  opts.fixed_sigma2 = 1.0;
  const ModelContext ctx = make_context(EdgeWeightModel::with_lgl_basis(g, cfg.k, opts));

  struct Rep {
    std::vector<double> truth, estimate, lower, upper;
    bool converged = false, diverged = false, intervals = false;
    int iterations = 0;
    double coverage = std::numeric_limits<double>::quiet_NaN();
    std::string message;
  };
  const auto reps = parallel_map(cfg.replicates, cfg.jobs, [&](int r) {
    Rep rep;
    Rng rng = make_rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(r)));
    Eigen::VectorXd eta = standard_normal_vector(cfg.k, rng);
    eta(0) *= std::sqrt(cfg.intercept_variance);
    eta.tail(cfg.k - 1) *= std::sqrt(cfg.coefficient_variance);
    const Eigen::MatrixXd sigma = ctx->evaluate(eta, false).sigma;
    const Eigen::MatrixXd y = sample_from_covariance(sigma, cfg.n, derive_seed(cfg.seed + 1, static_cast<std::uint64_t>(r)));
    rep.truth.assign(eta.data(), eta.data() + eta.size());
    try {
      const FitResult fit = fit_mle(y, ctx);
      rep.converged = fit.converged;
      rep.diverged = fit.diverged;
      rep.iterations = fit.iterations;
      rep.message = fit.message;
      rep.estimate.assign(fit.theta.data(), fit.theta.data() + fit.theta.size());
      if (fit.converged) {
        const WaldResult w = wald_intervals(fit, cfg.level);
        rep.intervals = w.available;
        if (w.available) {
          int covered = 0;
          for (int j = 0; j < cfg.k; ++j) {
            rep.lower.push_back(w.intervals[static_cast<std::size_t>(j)].lower);
            rep.upper.push_back(w.intervals[static_cast<std::size_t>(j)].upper);
            covered += (rep.lower.back() <= eta(j) && eta(j) <= rep.upper.back()) ? 1 : 0;
          }
          rep.coverage = static_cast<double>(covered) / cfg.k;
        } else {
          rep.message = w.diagnostic;
        }
      }
    } catch (const NumericalError& e) {
      rep.diverged = true;
      rep.message = e.what();
    }
    return rep;
  });

  ExperimentReport report;
  report.name = "sim1";
  report.parameters = to_json(cfg);
  Table per{"replicates", {"replicate", "converged", "diverged", "iterations", "coverage", "message"}, {}};
  Table coef{"coefficients", {"replicate", "index", "truth", "estimate", "lower", "upper", "covered"}, {}};
  std::vector<double> coverages;
  int diverged = 0;
  for (int r = 0; r < cfg.replicates; ++r) {
    const Rep& rep = reps[static_cast<std::size_t>(r)];
    per.add_row({r, rep.converged, rep.diverged, rep.iterations,
                 std::isfinite(rep.coverage) ? Json(rep.coverage) : Json(nullptr), rep.message});
    if (std::isfinite(rep.coverage)) coverages.push_back(rep.coverage);
    if (!std::isfinite(rep.coverage)) ++diverged;
    for (std::size_t j = 0; j < rep.lower.size(); ++j) {
      const bool hit = rep.lower[j] <= rep.truth[j] && rep.truth[j] <= rep.upper[j];
      coef.add_row({r, static_cast<int>(j), rep.truth[j], rep.estimate[j], rep.lower[j], rep.upper[j], hit});
    }
  }
  const Aggregate cov = aggregate(coverages);
  Table summary{"coverage", {"p", "k", "n", "coverage", "mcse", "replicates_used", "failed"}, {}};
  summary.add_row({cfg.rows * cfg.cols, cfg.k, cfg.n, cov.count ? Json(cov.mean) : Json(nullptr),
                   std::isfinite(cov.mcse) ? Json(cov.mcse) : Json(nullptr), cov.count, diverged});
  report.tables = {summary, per, coef};
  report.summary["coverage"] = to_json(cov);
  report.summary["failed_replicates"] = diverged;
  report.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

// ------------------------------------------------------------ simulation 2 --

struct Sim2Config {
  int rows = 10;
  int cols = 10;
  int n = 1;
  std::vector<int> k_grid{10, 20, 30};
  int replicates = 10;
  double scale = 1.0;
  std::uint64_t seed = 1;
  int jobs = 1;
};

inline Json to_json(const Sim2Config& c) {
  return Json{{"rows", c.rows}, {"cols", c.cols}, {"p", c.rows * c.cols}, {"n", c.n}, {"k_grid", c.k_grid},
              {"replicates", c.replicates}, {"scale", c.scale}, {"seed", c.seed}};
}

/// Most frequent value (smallest on ties).
inline std::optional<int> mode_of(const std::vector<int>& values) {
  if (values.empty()) return std::nullopt;
  std::map<int, int> counts;
  for (const int v : values) ++counts[v];
  return std::max_element(counts.begin(), counts.end(),
                          [](const auto& a, const auto& b) { return a.second < b.second; })
      ->first;
}

/// Basis-size selection by AIC and BIC for data generated with ICAR-drawn
/// edge weights (GDEF, nu = 3/2, sigma2 = 1 known).
inline ExperimentReport sim2_model_selection(const Sim2Config& cfg) {
  detail::require(cfg.replicates >= 1 && cfg.n >= 1, "replicates and n must be >= 1");
  const auto start = std::chrono::steady_clock::now();
  const Graph g = lattice_graph(cfg.rows, cfg.cols);
  for (const int k : cfg.k_grid) detail::require(k >= 1 && k <= g.edge_count(), "every k must lie in [1, q]");
  EdgeModelOptions opts;
  opts.nu = Smoothness::three_halves;
  opts.fixed_sigma2 = 1.0;
  const int kmax = *std::max_element(cfg.k_grid.begin(), cfg.k_grid.end());
  const EdgeBasis full_basis = lgl_eigenbasis(g, kmax);
  std::map<int, ModelContext> contexts;
  for (const int k : cfg.k_grid) {
    std::vector<std::string> names;
    for (int j = 0; j < k; ++j) names.push_back("eta" + std::to_string(j + 1));
    contexts.emplace(k, make_context(EdgeWeightModel(g, full_basis.vectors.leftCols(k), names, {}, opts)));
  }

  const auto reps = parallel_map(cfg.replicates, cfg.jobs, [&](int r) {
    const IcarWeights w = sim2_icar_weights(g, derive_seed(cfg.seed, static_cast<std::uint64_t>(r)), cfg.scale);
    CovarianceSpec spec;
    spec.nu = Smoothness::three_halves;
    const CovarianceRealization truth = gdef_covariance(g, w.weights, spec);
    const Eigen::MatrixXd y = sample_gaussian(truth, cfg.n, derive_seed(cfg.seed + 1, static_cast<std::uint64_t>(r)));
    return select_basis_size(y, [&](int k) { return contexts.at(k); }, cfg.k_grid);
  });

  ExperimentReport report;
  report.name = "sim2";
  report.parameters = to_json(cfg);
  Table fits{"fits", {"replicate", "k", "loglik", "aic", "bic", "converged", "diverged", "message"}, {}};
  Table winners{"winners", {"replicate", "aic_k", "bic_k"}, {}};
  std::vector<int> aic_k, bic_k;
  std::map<int, int> diverged_by_k;
  auto num = [](double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); };
  auto opt = [](const std::optional<int>& v) { return v ? Json(*v) : Json(nullptr); };
  for (int r = 0; r < cfg.replicates; ++r) {
    const auto& sel = reps[static_cast<std::size_t>(r)];
    for (const auto& row : sel.rows) {
      fits.add_row({r, row.k, num(row.loglik), num(row.aic), num(row.bic), row.converged, row.diverged, row.message});
      if (row.diverged || !row.converged) ++diverged_by_k[row.k];
    }
    winners.add_row({r, opt(sel.best_aic_k), opt(sel.best_bic_k)});
    if (sel.best_aic_k) aic_k.push_back(*sel.best_aic_k);
    if (sel.best_bic_k) bic_k.push_back(*sel.best_bic_k);
  }
  Table selection{"selection", {"criterion", "mode_k", "mean_k", "mcse"}, {}};
  for (const auto& [label, ks] : {std::pair{"aic", aic_k}, std::pair{"bic", bic_k}}) {
    std::vector<double> d(ks.begin(), ks.end());
    const Aggregate a = aggregate(d);
    selection.add_row({label, opt(mode_of(ks)), num(a.mean), num(a.mcse)});
    report.summary[std::string(label) + "_mode_k"] = opt(mode_of(ks));
    report.summary[std::string(label) + "_k"] = to_json(a);
  }
  Table divergence{"divergence", {"k", "failed", "rate"}, {}};
  for (const int k : cfg.k_grid) {
    const int f = diverged_by_k[k];
    divergence.add_row({k, f, static_cast<double>(f) / cfg.replicates});
  }
  report.tables = {selection, divergence, winners, fits};
  report.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

// ------------------------------------------------------------ simulation 3 --

enum class Sim3Model { gdef32, gdefinf, matern52, car };

inline std::string to_string(Sim3Model m) {
  switch (m) {
    case Sim3Model::gdef32: return "gdef32";
    case Sim3Model::gdefinf: return "gdefinf";
    case Sim3Model::matern52: return "matern52";
    case Sim3Model::car: return "car";
  }
  return "?";
}

inline Sim3Model parse_sim3_model(const std::string& s) {
  if (s == "gdef32") return Sim3Model::gdef32;
  if (s == "gdefinf") return Sim3Model::gdefinf;
  if (s == "matern52") return Sim3Model::matern52;
  if (s == "car") return Sim3Model::car;
  throw ValidationError("unknown model '" + s + "'; expected gdef32, gdefinf, matern52 or car");
}

struct Sim3Config {
  int rows = 15;
  int cols = 15;
  std::vector<int> n_list{1, 5, 25};
  int replicates = 20;
  std::vector<Sim3Model> models{Sim3Model::gdef32, Sim3Model::gdefinf, Sim3Model::matern52, Sim3Model::car};
  int points = 10;
  double strength = 2.0;
  int k = 15;
  double sigma2 = 0.9;
  double tau2 = 0.1;
  double range = 3.0;
  std::uint64_t seed = 1;
  int jobs = 1;
};

inline Json to_json(const Sim3Config& c) {
  std::vector<std::string> models;
  for (const auto m : c.models) models.push_back(to_string(m));
  return Json{{"rows", c.rows},     {"cols", c.cols},         {"n_list", c.n_list}, {"replicates", c.replicates},
              {"models", models},   {"points", c.points},     {"strength", c.strength}, {"k", c.k},
              {"sigma2", c.sigma2}, {"tau2", c.tau2},         {"range", c.range}, {"seed", c.seed}};
}

/// The model family fitted in simulation 3 on a rows x cols lattice.
inline ModelContext sim3_context(Sim3Model m, const Graph& g, const std::vector<Point2>& original, int k) {
  EdgeModelOptions opts;
  opts.nugget = true;
  switch (m) {
    case Sim3Model::gdef32:
      opts.nu = Smoothness::three_halves;
      return make_context(EdgeWeightModel::with_lgl_basis(g, k, opts));
    case Sim3Model::gdefinf:
      opts.nu = Smoothness::infinite;
      return make_context(EdgeWeightModel::with_lgl_basis(g, k, opts));
    case Sim3Model::matern52: return make_context(MaternCoordsModel(original, Smoothness::five_halves, true));
    case Sim3Model::car:
      opts.family = Family::car;
      return make_context(EdgeWeightModel(g, Eigen::MatrixXd(g.edge_count(), 0), {}, {}, opts));
  }
  throw ValidationError("unknown model");
}

/// KL divergence of fitted covariances from the truth when the truth is a
/// stationary Matérn field on a deformed grid.
inline ExperimentReport sim3_misspecification(const Sim3Config& cfg) {
  detail::require(cfg.replicates >= 1 && !cfg.n_list.empty() && !cfg.models.empty(),
                  "need replicates, n values and models");
  for (const int n : cfg.n_list) detail::require(n >= 1, "every n must be >= 1");
  const auto start = std::chrono::steady_clock::now();
  const Graph g = lattice_graph(cfg.rows, cfg.cols);
  const std::vector<Point2> original = *g.coordinates();
  std::vector<ModelContext> contexts;
  for (const auto m : cfg.models) contexts.push_back(sim3_context(m, g, original, cfg.k));

  struct Cell {
    int n = 0;
    std::vector<double> kl;  // per model, NaN on failure
    std::vector<std::string> messages;
  };
  const int cells_per_rep = static_cast<int>(cfg.n_list.size());
  const auto cells = parallel_map(cfg.replicates * cells_per_rep, cfg.jobs, [&](int idx) {
    const int r = idx / cells_per_rep;
    const int n = cfg.n_list[static_cast<std::size_t>(idx % cells_per_rep)];
    const DeformedGrid grid =
        deform_grid(cfg.rows, cfg.cols, cfg.points, cfg.strength, derive_seed(cfg.seed, static_cast<std::uint64_t>(r)));
    const Eigen::MatrixXd truth =
        matern_covariance_from_coords(grid.deformed, Smoothness::five_halves, cfg.range, cfg.sigma2, cfg.tau2);
    const Eigen::MatrixXd y =
        sample_from_covariance(truth, n, derive_seed(derive_seed(cfg.seed + 1, static_cast<std::uint64_t>(r)),
                                                     static_cast<std::uint64_t>(n)));
    Cell cell;
    cell.n = n;
    FitOptions fo;
    fo.observed_hessian = false;
    for (const auto& ctx : contexts) {
      double kl = std::numeric_limits<double>::quiet_NaN();
      std::string msg;
      try {
        const FitResult fit = fit_mle(y, ctx, std::nullopt, fo);
        if (!fit.diverged) {
          kl = kl_gaussians(truth, ctx->evaluate(fit.theta, false).sigma);
        }
        msg = fit.message;
      } catch (const std::exception& e) {
        msg = e.what();
      }
      cell.kl.push_back(kl);
      cell.messages.push_back(msg);
    }
    return cell;
  });

  ExperimentReport report;
  report.name = "sim3";
  report.parameters = to_json(cfg);
  Table per{"fits", {"replicate", "n", "model", "kl", "message"}, {}};
  Table winners{"winners", {"replicate", "n", "model"}, {}};
  std::map<int, std::vector<std::vector<double>>> by_n;
  for (std::size_t idx = 0; idx < cells.size(); ++idx) {
    const Cell& c = cells[idx];
    const int r = static_cast<int>(idx) / cells_per_rep;
    auto& slot = by_n[c.n];
    slot.resize(cfg.models.size());
    double best = std::numeric_limits<double>::infinity();
    std::string best_model;
    for (std::size_t m = 0; m < cfg.models.size(); ++m) {
      const double v = c.kl[m];
      per.add_row({r, c.n, to_string(cfg.models[m]), std::isfinite(v) ? Json(v) : Json(nullptr), c.messages[m]});
      if (std::isfinite(v)) {
        slot[m].push_back(v);
        if (v < best) {
          best = v;
          best_model = to_string(cfg.models[m]);
        }
      }
    }
    winners.add_row({r, c.n, best_model.empty() ? Json(nullptr) : Json(best_model)});
  }
  Table kl{"kl", {"n", "model", "mean_kl", "mcse", "fits_used", "failed"}, {}};
  Json summary = Json::object();
  for (const int n : cfg.n_list) {
    for (std::size_t m = 0; m < cfg.models.size(); ++m) {
      const Aggregate a = aggregate(by_n[n][m]);
      kl.add_row({n, to_string(cfg.models[m]), a.count ? Json(a.mean) : Json(nullptr),
                  std::isfinite(a.mcse) ? Json(a.mcse) : Json(nullptr), a.count, cfg.replicates - a.count});
      summary[std::to_string(n)][to_string(cfg.models[m])] = to_json(a);
    }
  }
  report.summary["mean_kl"] = summary;
  report.tables = {kl, winners, per};
  report.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

// --------------------------------------------------------- field analysis --

struct WheatConfig {
  int rows = 20;
  int cols = 25;
  int k = 20;
  Smoothness nu = Smoothness::three_halves;
  double level = 0.95;
  int permutations = 9999;
  std::uint64_t seed = 1;
};

struct WheatAnalysis {
  FitResult fit;
  WaldResult intervals;
  Eigen::VectorXd log_weights;
  SmoothedField smoothed;
  MoransI moran;
  ExperimentReport report;
};

/// Model for a rows x cols field trial: split row/column intercept plus LGL
/// eigenvectors, nugget, constant mean estimated.
inline ModelContext wheat_context(const Graph& g, const WheatConfig& cfg) {
  EdgeModelOptions opts;
  opts.nu = cfg.nu;
  opts.nugget = true;
  return make_context(EdgeWeightModel::with_rowcol_intercept(g, cfg.k, opts), MeanPolicy{true, 0.0});
}

/// Fits the field-trial model to a rows x cols grid of plot values (row-major
/// in the matrix), smooths the field and tests residual autocorrelation.
inline WheatAnalysis wheat_pipeline(const Eigen::MatrixXd& grid, const WheatConfig& cfg = {}) {
  detail::require(grid.rows() == cfg.rows && grid.cols() == cfg.cols,
                  "yield grid must be " + std::to_string(cfg.rows) + " x " + std::to_string(cfg.cols) + ", got " +
                      std::to_string(grid.rows()) + " x " + std::to_string(grid.cols()));
  detail::require(grid.allFinite(), "yield grid must be finite");
  const auto start = std::chrono::steady_clock::now();
  const Graph g = lattice_graph(cfg.rows, cfg.cols);
  const ModelContext ctx = wheat_context(g, cfg);
  const auto& model = static_cast<const EdgeWeightModel&>(*ctx);

  Eigen::MatrixXd y(1, g.nodes());
  for (int r = 0; r < cfg.rows; ++r)
    for (int c = 0; c < cfg.cols; ++c) y(0, r * cfg.cols + c) = grid(r, c);

  WheatAnalysis out;
  out.fit = fit_mle(y, ctx);
  if (out.fit.diverged) throw NumericalError("field-trial fit diverged: " + out.fit.message);
  out.intervals = wald_intervals(out.fit, cfg.level);
  out.log_weights = model.log_weights(out.fit.theta);
  out.smoothed = smooth_field(y.row(0).transpose(), out.fit, ctx);
  out.moran = morans_i(out.smoothed.residuals, g, cfg.permutations, cfg.seed);

  ExperimentReport& rep = out.report;
  rep.name = "wheat";
  rep.parameters = Json{{"rows", cfg.rows}, {"cols", cfg.cols}, {"k", cfg.k}, {"nu", to_string(cfg.nu)},
                        {"level", cfg.level}, {"permutations", cfg.permutations}, {"seed", cfg.seed}};
  Table est{"estimates", {"parameter", "estimate", "lower", "upper"}, {}};
  auto num = [](double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); };
  if (out.intervals.available) {
    for (const auto& w : out.intervals.intervals)
      est.add_row({w.name, num(w.natural_estimate), num(w.natural_lower), num(w.natural_upper)});
  } else {
    for (std::size_t j = 0; j < out.fit.names.size(); ++j)
      est.add_row({out.fit.names[j], num(out.fit.natural(static_cast<Eigen::Index>(j))), nullptr, nullptr});
    est.add_row({"beta0", num(out.fit.beta0), nullptr, nullptr});
  }
  Table edges{"edge_log_weights", {"edge_index", "u", "v", "value"}, {}};
  for (int e = 0; e < g.edge_count(); ++e) edges.add_row({e, g.edge(e).u, g.edge(e).v, out.log_weights(e)});
  Table field{"field", {"row", "col", "value", "smoothed", "residual"}, {}};
  for (int r = 0; r < cfg.rows; ++r)
    for (int c = 0; c < cfg.cols; ++c) {
      const int i = r * cfg.cols + c;
      field.add_row({r, c, y(0, i), out.smoothed.mean(i), out.smoothed.residuals(i)});
    }
  rep.tables = {est, edges, field};
  rep.summary["loglik"] = out.fit.loglik;
  rep.summary["converged"] = out.fit.converged;
  rep.summary["iterations"] = out.fit.iterations;
  rep.summary["intervals_available"] = out.intervals.available;
  if (!out.intervals.available) rep.summary["interval_diagnostic"] = out.intervals.diagnostic;
  rep.summary["morans_i"] = Json{{"statistic", out.moran.statistic},
                                 {"expected", out.moran.expected},
                                 {"p_value", out.moran.p_value},
                                 {"permutations", out.moran.permutations}};
  rep.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

}  // namespace graphcov
