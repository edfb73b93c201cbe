// graphcov command-line tool: bases, simulation, fitting, MCMC and the
// simulation/analysis suite. Every command writes its resolved options to
// <out>/run_config.toml; `graphcov --config <out>/run_config.toml` replays it.
//
// Exit codes: 0 success, 2 invalid input, 3 numerical failure.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "graphcov/graphcov.hpp"

namespace fs = std::filesystem;
using namespace graphcov;

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitNumerical = 3;

// ------------------------------------------------------------ shared bits --

struct GraphArgs {
  std::string lattice;  // "RxC"
  std::string edges;    // edge-list CSV
};

struct ModelArgs {
  std::string family = "gdef";
  std::string nu = "1.5";
  int k = -1;  // -1: round(sqrt(n p)) clamped to [2, q]
  bool rowcol_intercept = false;
  bool intercept_fixed = false;
  bool nugget = false;
  bool estimate_mean = false;
  double beta0 = 0.0;
  double sigma2 = 0.0;  // > 0 fixes sigma2
  std::string covariates;
  std::string covariate_mode = "average";
};

LatticeShape parse_lattice(const std::string& s) {
  const auto x = s.find_first_of("xX");
  if (x == std::string::npos) throw ValidationError("--lattice must look like RxC, got '" + s + "'");
  try {
    std::size_t a = 0, b = 0;
    const int rows = std::stoi(s.substr(0, x), &a);
    const int cols = std::stoi(s.substr(x + 1), &b);
    if (a != x || b != s.size() - x - 1 || rows < 1 || cols < 1) throw std::invalid_argument("");
    return {rows, cols};
  } catch (const std::exception&) {
    throw ValidationError("--lattice must look like RxC with positive integers, got '" + s + "'");
  }
}

void add_graph_options(CLI::App* cmd, GraphArgs& g) {
  // Exclusivity is checked after parsing: echoed configs carry both keys.
  cmd->add_option("--lattice", g.lattice, "Lattice graph RxC (node = r*C + c)");
  cmd->add_option("--edges", g.edges, "Edge-list CSV with rows i,j (0-based)");
}

Graph resolve_graph(const GraphArgs& g) {
  detail::require(g.lattice.empty() || g.edges.empty(), "--lattice and --edges are mutually exclusive");
  if (!g.lattice.empty()) {
    const LatticeShape s = parse_lattice(g.lattice);
    return lattice_graph(s.rows, s.cols);
  }
  if (!g.edges.empty()) return io::read_edge_list(g.edges).graph;
  throw ValidationError("a graph is required: give --lattice RxC or --edges FILE");
}

void add_model_options(CLI::App* cmd, ModelArgs& m) {
  cmd->add_option("--family", m.family, "Covariance family: gdef or car")->capture_default_str();
  cmd->add_option("--nu", m.nu, "Matérn smoothness for GDEF: 0.5, 1.5, 2.5 or inf")->capture_default_str();
  cmd->add_option("-k,--k", m.k, "Basis size (-1: round(sqrt(n p)))")->capture_default_str();
  cmd->add_flag("--rowcol-intercept", m.rowcol_intercept, "Split the intercept into row and column edge indicators");
  cmd->add_flag("--intercept-fixed", m.intercept_fixed, "Fix the coefficient of the constant basis vector at 0");
  cmd->add_flag("--nugget", m.nugget, "Add an independent nugget variance tau2");
  cmd->add_flag("--estimate-mean", m.estimate_mean, "Estimate a constant mean beta0 by GLS");
  cmd->add_option("--beta0", m.beta0, "Known constant mean when it is not estimated")->capture_default_str();
  cmd->add_option("--sigma2", m.sigma2, "Fix sigma2 at this value (0: estimate)")->capture_default_str();
  cmd->add_option("--covariates", m.covariates, "Node feature CSV (p rows) turned into edge covariates");
  cmd->add_option("--covariate-mode", m.covariate_mode, "Edge feature: average or difference")->capture_default_str();
}

ModelContext build_context(const Graph& g, const ModelArgs& m, int n) {
  const Family family = parse_family(m.family);
  if (family == Family::icar) throw ValidationError("--family icar cannot be fitted: the ICAR model is improper");
  detail::require(m.sigma2 >= 0.0, "--sigma2 must be >= 0");
  EdgeModelOptions opts;
  opts.family = family;
  opts.nu = parse_smoothness(m.nu);
  opts.nugget = m.nugget;
  if (m.sigma2 > 0.0) opts.fixed_sigma2 = m.sigma2;
  const int q = g.edge_count();
  const int k = m.k < 0 ? default_basis_size(n, g.nodes(), q) : m.k;
  // With sigma2 free, the CAR intercept is redundant with sigma2.
  opts.intercept_fixed = m.intercept_fixed || (family == Family::car && !opts.fixed_sigma2 && k >= 1);
  const MeanPolicy mean{m.estimate_mean, m.beta0};

  if (m.rowcol_intercept) {
    detail::require(m.covariates.empty(), "--rowcol-intercept cannot be combined with --covariates");
    opts.intercept_fixed = false;
    return make_context(EdgeWeightModel::with_rowcol_intercept(g, k, opts), mean);
  }
  EdgeCovariates cov;
  if (!m.covariates.empty()) {
    const Eigen::MatrixXd x = io::read_matrix_csv(m.covariates);
    EdgeFeatureMode mode;
    if (m.covariate_mode == "average") {
      mode = EdgeFeatureMode::average;
    } else if (m.covariate_mode == "difference") {
      mode = EdgeFeatureMode::difference;
    } else {
      throw ValidationError("--covariate-mode must be average or difference");
    }
    cov = edge_covariates_from_nodes(g, x, mode);
    for (const auto& w : cov.warnings) std::cerr << "warning: " << w << '\n';
  }
  if (k == 0) {
    detail::require(cov.size() == 0, "covariates need k >= 1");
    return make_context(EdgeWeightModel(g, Eigen::MatrixXd(q, 0), {}, {}, opts), mean);
  }
  return make_context(EdgeWeightModel::with_lgl_basis(g, k, opts, cov), mean);
}

struct DataArgs {
  std::string data;        // n x p CSV, one replicate per row
  std::string field_grid;  // rows x cols CSV, a single replicate on a lattice
};

void add_data_options(CLI::App* cmd, DataArgs& d) {
  cmd->add_option("--data", d.data, "Data CSV: one replicate per row, one node per column");
  cmd->add_option("--field-grid", d.field_grid, "A rows x cols grid CSV treated as one replicate on a lattice");
}

/// Data matrix and graph; --field-grid implies the lattice.
std::pair<Eigen::MatrixXd, Graph> resolve_data(const DataArgs& d, const GraphArgs& g) {
  detail::require(d.data.empty() || d.field_grid.empty(), "--data and --field-grid are mutually exclusive");
  if (!d.field_grid.empty()) {
    const Eigen::MatrixXd grid = io::read_matrix_csv(d.field_grid);
    Graph lattice = lattice_graph(static_cast<int>(grid.rows()), static_cast<int>(grid.cols()));
    if (!g.lattice.empty() || !g.edges.empty()) {
      const Graph given = resolve_graph(g);
      detail::require(given.hash() == lattice.hash(), "--field-grid shape does not match the given graph");
    }
    Eigen::MatrixXd y(1, grid.size());
    for (Eigen::Index r = 0; r < grid.rows(); ++r)
      for (Eigen::Index c = 0; c < grid.cols(); ++c) y(0, r * grid.cols() + c) = grid(r, c);
    return {y, lattice};
  }
  if (d.data.empty()) throw ValidationError("data are required: give --data FILE or --field-grid FILE");
  Graph graph = resolve_graph(g);
  Eigen::MatrixXd y = io::read_matrix_csv(d.data);
  detail::require(y.cols() == graph.nodes(), "data have " + std::to_string(y.cols()) + " columns but the graph has " +
                                                 std::to_string(graph.nodes()) + " nodes");
  return {y, graph};
}

void write_edges(const fs::path& out, const Graph& g) { io::write_edge_list(out / "edges.csv", g); }

// Only the section of the command that ran, with every default spelled out,
// so `graphcov --config run_config.toml` selects the same command again.
void echo_config(const CLI::App& cmd, const fs::path& out) {
  fs::create_directories(out);
  std::ofstream f(out / "run_config.toml");
  if (!f) throw ValidationError("cannot write " + (out / "run_config.toml").string());
  f << '[' << cmd.get_name() << "]\n";
  // Unset list and path options echo as key="", which would read back as one
  // empty element; leaving them out restores the same empty default.
  std::istringstream lines(cmd.config_to_str(true, false));
  for (std::string line; std::getline(lines, line);)
    if (!line.ends_with("=\"\"")) f << line << '\n';
}

// ------------------------------------------------------------------ basis --

struct BasisArgs {
  GraphArgs graph;
  int k = 0;
  std::string covariates;
  std::string covariate_mode = "average";
  std::string out;
};

void cmd_basis(const BasisArgs& a) {
  const Graph g = resolve_graph(a.graph);
  EdgeBasis basis;
  if (!a.covariates.empty()) {
    const EdgeFeatureMode mode =
        a.covariate_mode == "difference" ? EdgeFeatureMode::difference : EdgeFeatureMode::average;
    const EdgeCovariates cov = edge_covariates_from_nodes(g, io::read_matrix_csv(a.covariates), mode);
    basis = orthogonalized_basis(g, cov, a.k);
  } else {
    basis = lgl_eigenbasis(g, a.k);
  }
  const fs::path out(a.out);
  io::write_basis(out / "basis.csv", basis);
  write_edges(out, g);
  std::cout << "basis: " << basis.size() << " columns over " << basis.edge_count() << " edges\n";
}

// --------------------------------------------------------------- simulate --

struct SimulateArgs {
  GraphArgs graph;
  std::string family = "gdef";
  std::string nu = "1.5";
  double kappa = 0.9;
  double sigma2 = 1.0;
  double tau2 = 0.0;
  double beta0 = 0.0;
  double uniform_weight = 1.0;
  std::string eta;
  std::string weights;
  int n = 1;
  std::uint64_t seed = 1;
  std::string figure;
  std::string out;
};

struct Panel {
  std::string name;
  Graph graph;
  EdgeWeights weights;
  CovarianceSpec spec;
};

Eigen::MatrixXd simulate_panel(const Panel& p, int n, std::uint64_t seed) {
  p.spec.validate();
  Eigen::MatrixXd y;
  switch (p.spec.family) {
    case Family::gdef: y = sample_gaussian(gdef_covariance(p.graph, p.weights, p.spec), n, seed); break;
    case Family::car: {
      CovarianceSpec no_nugget = p.spec;
      no_nugget.tau2 = 0.0;
      y = sample_gaussian(car_precision(p.graph, p.weights, no_nugget), n, seed);
      if (p.spec.tau2 > 0.0) {
        CovarianceRealization noise = nugget_only(p.graph.nodes(), p.spec.tau2);
        y += sample_gaussian(noise, n, derive_seed(seed, 1));
      }
      break;
    }
    case Family::icar: {
      y = sample_gaussian(icar_structure(p.graph, p.weights, p.spec.sigma2), n, seed);
      if (p.spec.tau2 > 0.0) y += sample_gaussian(nugget_only(p.graph.nodes(), p.spec.tau2), n, derive_seed(seed, 1));
      break;
    }
  }
  return y.array() + p.spec.beta0;
}

std::vector<Panel> figure_panels(const std::string& name) {
  std::vector<Panel> panels;
  auto spec = [](Family f, Smoothness nu, double kappa) {
    CovarianceSpec s;
    s.family = f;
    s.nu = nu;
    s.kappa = kappa;
    return s;
  };
  if (name == "covcomp") {
    const Graph g = lattice_graph(30, 30);
    for (const double w : {4.0, 1.0, 0.25}) {
      const std::string tag = w == 4.0 ? "w4" : (w == 1.0 ? "w1" : "w0.25");
      const EdgeWeights ew = EdgeWeights::uniform(g, w);
      panels.push_back({"car_" + tag, g, ew, spec(Family::car, Smoothness::half, 0.9)});
      panels.push_back({"icar_" + tag, g, ew, spec(Family::icar, Smoothness::half, 0.0)});
      for (const auto nu : {Smoothness::half, Smoothness::three_halves, Smoothness::five_halves, Smoothness::infinite})
        panels.push_back({"gdef_nu" + to_string(nu) + "_" + tag, g, ew, spec(Family::gdef, nu, 0.0)});
    }
  } else if (name == "icarres") {
    for (const int side : {8, 16, 32}) {
      const Graph g = lattice_graph(side, side);
      panels.push_back({"icar_" + std::to_string(side), g, EdgeWeights::uniform(g, 1.0),
                        spec(Family::icar, Smoothness::half, 0.0)});
    }
  } else if (name == "covcomp2" || name == "example") {
    const Graph g = lattice_graph(30, 30);
    WeightModel wm;
    if (name == "covcomp2") {
      wm = WeightModel::from_basis(lgl_eigenbasis(g, 2), Eigen::Vector2d(50.0, 50.0));
    } else {
      Eigen::VectorXd eta(4);
      eta << 0.0, 0.0, 40.0, -40.0;  // coefficients on eigenvectors 1..4
      wm = WeightModel::from_basis(lgl_eigenbasis(g, 4), eta);
    }
    const EdgeWeights ew = weights_from_coefficients(wm);
    if (name == "covcomp2") {
      panels.push_back({"car", g, ew, spec(Family::car, Smoothness::half, 0.9)});
      for (const auto nu : {Smoothness::half, Smoothness::three_halves, Smoothness::infinite})
        panels.push_back({"gdef_nu" + to_string(nu), g, ew, spec(Family::gdef, nu, 0.0)});
    } else {
      panels.push_back({"gdef_nuinf", g, ew, spec(Family::gdef, Smoothness::infinite, 0.0)});
    }
  } else {
    throw ValidationError("unknown figure '" + name + "'; expected covcomp, icarres, covcomp2 or example");
  }
  return panels;
}

void write_samples(const fs::path& out, const std::string& stem, const Eigen::MatrixXd& y, const Graph& g) {
  io::write_matrix_csv(out / (stem + ".csv"), y);
  std::ofstream tidy = io::detail::open_output(out / (stem + "_tidy.csv"));
  const auto& lat = g.lattice();
  tidy << (lat ? "replicate,row,col,value\n" : "replicate,node,value\n");
  for (Eigen::Index i = 0; i < y.rows(); ++i)
    for (Eigen::Index j = 0; j < y.cols(); ++j) {
      tidy << i << ',';
      if (lat) {
        tidy << j / lat->cols << ',' << j % lat->cols;
      } else {
        tidy << j;
      }
      tidy << ',' << format_number(y(i, j)) << '\n';
    }
}

void cmd_simulate(const SimulateArgs& a) {
  detail::require(a.n >= 1, "-n must be >= 1");
  const fs::path out(a.out);
  if (!a.figure.empty()) {
    const auto panels = figure_panels(a.figure);
    Json index = Json::array();
    for (std::size_t i = 0; i < panels.size(); ++i) {
      const Panel& p = panels[i];
      CovarianceSpec s = p.spec;
      s.sigma2 = a.sigma2;
      const Panel scaled{p.name, p.graph, p.weights, s};
      const Eigen::MatrixXd y = simulate_panel(scaled, a.n, derive_seed(a.seed, i));
      write_samples(out, "samples_" + p.name, y, p.graph);
      index.push_back({{"panel", p.name}, {"family", to_string(s.family)}, {"nu", to_string(s.nu)},
                       {"kappa", s.kappa}, {"nodes", p.graph.nodes()}});
    }
    io::write_json(out / "panels.json", index);
    std::cout << "simulate: " << panels.size() << " panels for figure " << a.figure << '\n';
    return;
  }
  const Graph g = resolve_graph(a.graph);
  CovarianceSpec spec;
  spec.family = parse_family(a.family);
  spec.nu = parse_smoothness(a.nu);
  spec.kappa = spec.family == Family::car ? a.kappa : 0.0;
  spec.sigma2 = a.sigma2;
  spec.tau2 = a.tau2;
  spec.beta0 = a.beta0;
  spec.validate();
  detail::require(a.eta.empty() || a.weights.empty(), "--eta and --weights are mutually exclusive");
  EdgeWeights w = EdgeWeights::uniform(g, 1.0);
  if (!a.eta.empty()) {
    const Eigen::MatrixXd m = io::read_matrix_csv(a.eta);
    const Eigen::VectorXd eta = Eigen::Map<const Eigen::VectorXd>(m.data(), m.size());
    w = weights_from_coefficients(WeightModel::from_basis(lgl_eigenbasis(g, static_cast<int>(eta.size())), eta));
  } else if (!a.weights.empty()) {
    const Eigen::MatrixXd m = io::read_matrix_csv(a.weights);
    w = EdgeWeights(g, Eigen::Map<const Eigen::VectorXd>(m.data(), m.size()));
  } else {
    detail::require(a.uniform_weight > 0.0 && std::isfinite(a.uniform_weight), "--uniform-weight must be > 0");
    w = EdgeWeights::uniform(g, a.uniform_weight);
  }
  const Eigen::MatrixXd y = simulate_panel({"samples", g, w, spec}, a.n, a.seed);
  write_samples(out, "samples", y, g);
  std::cout << "simulate: " << y.rows() << " x " << y.cols() << " samples\n";
}

// -------------------------------------------------------------------- fit --

struct FitArgs {
  GraphArgs graph;
  DataArgs data;
  ModelArgs model;
  double gamma = 1.0;
  double tol = 1e-6;
  int max_iter = 100;
  double level = 0.95;
  bool allow_diverged = false;
  std::string out;
};

void add_optimizer_options(CLI::App* cmd, FitArgs& a) {
  cmd->add_option("--gamma", a.gamma, "Initial Fisher-scoring step scale in (0, 1]")->capture_default_str();
  cmd->add_option("--tol", a.tol, "Gradient sup-norm tolerance")->capture_default_str();
  cmd->add_option("--max-iter", a.max_iter, "Iteration limit")->capture_default_str();
}

int cmd_fit(const FitArgs& a) {
  const auto [y, g] = resolve_data(a.data, a.graph);
  const ModelContext ctx = build_context(g, a.model, static_cast<int>(y.rows()));
  FitOptions fo;
  fo.gamma = a.gamma;
  fo.tol = a.tol;
  fo.max_iter = a.max_iter;
  const FitResult fit = fit_mle(y, ctx, std::nullopt, fo);
  const WaldResult wald = wald_intervals(fit, a.level);
  const fs::path out(a.out);
  Json j = io::fit_to_json(fit, wald);
  j["model"] = ctx->describe();
  j["n"] = fit.n;
  j["p"] = fit.p;
  io::write_json(out / "fit.json", j);
  if (const auto* edge_model = dynamic_cast<const EdgeWeightModel*>(ctx.model.get())) {
    io::write_edge_values_csv(out / "edge_log_weights.csv", edge_model->log_weights(fit.theta));
    write_edges(out, g);
  }
  std::cout << "fit: loglik " << format_number(fit.loglik) << ", " << fit.iterations << " iterations, "
            << (fit.converged ? "converged" : "not converged") << '\n';
  if (!fit.converged && !a.allow_diverged) {
    std::cerr << "error: fit did not converge (" << fit.message << "); pass --allow-diverged to accept\n";
    return kExitNumerical;
  }
  return 0;
}

// ------------------------------------------------------------------- mcmc --

struct McmcArgs {
  GraphArgs graph;
  DataArgs data;
  ModelArgs model;
  int draws = 5000;
  int burnin = 1000;
  double step = 0.05;
  bool adapt = false;
  std::uint64_t seed = 1;
  bool full_w = false;
  double eta_variance = 100.0;
  double phi_shape = 0.0;  // > 0 enables the inverse-gamma hyperprior on phi
  double phi_scale = 0.0;
  double sigma2_shape = 0.01;
  double sigma2_scale = 0.01;
  double tau2_shape = 0.01;
  double tau2_scale = 0.01;
  double kappa_a = 1.0;
  double kappa_b = 1.0;
  double gamma_shape = 1.0;
  double gamma_rate = 1.0;
  std::string out;
};

int cmd_mcmc(const McmcArgs& a) {
  detail::require(a.draws >= 1, "-T must be >= 1");
  const auto [y, g] = resolve_data(a.data, a.graph);
  PriorSpec prior;
  prior.eta_variance = a.eta_variance;
  if (a.phi_shape > 0.0 || a.phi_scale > 0.0) prior.eta_variance_prior = InverseGammaPrior{a.phi_shape, a.phi_scale};
  prior.sigma2 = {a.sigma2_shape, a.sigma2_scale};
  prior.tau2 = {a.tau2_shape, a.tau2_scale};
  prior.kappa = {a.kappa_a, a.kappa_b};
  ModelContext ctx;
  if (a.full_w) {
    prior.raw_weight = GammaPrior{a.gamma_shape, a.gamma_rate};
    EdgeModelOptions opts;
    opts.family = parse_family(a.model.family);
    opts.nu = parse_smoothness(a.model.nu);
    opts.nugget = a.model.nugget;
    if (a.model.sigma2 > 0.0) opts.fixed_sigma2 = a.model.sigma2;
    detail::require(opts.family != Family::icar, "--family icar cannot be sampled: the ICAR model is improper");
    std::vector<std::string> names;
    for (int e = 0; e < g.edge_count(); ++e) names.push_back("w" + std::to_string(e));
    ctx = make_context(EdgeWeightModel(g, Eigen::MatrixXd::Identity(g.edge_count(), g.edge_count()), names, {}, opts),
                       MeanPolicy{a.model.estimate_mean, a.model.beta0});
  } else {
    ctx = build_context(g, a.model, static_cast<int>(y.rows()));
  }
  prior.validate();
  MalaOptions mo;
  mo.draws = a.draws;
  mo.burnin = a.burnin;
  mo.step = a.step;
  mo.adapt = a.adapt;
  mo.seed = a.seed;
  const PosteriorChain chain = mala_sample(y, ctx, prior, mo, initial_theta(y, ctx));

  const fs::path out(a.out);
  io::write_chain_csv(out / "chain.csv", chain);
  Json j;
  j["model"] = ctx->describe();
  j["draws"] = a.draws;
  j["burnin"] = a.burnin;
  j["seed"] = a.seed;
  j["acceptance_rate"] = chain.acceptance_rate;
  j["step"] = chain.step;
  Json summary = Json::object();
  for (std::size_t c = 0; c < chain.names.size(); ++c) {
    const Eigen::VectorXd col = chain.draws.col(static_cast<Eigen::Index>(c));
    Json s{{"mean", col.mean()}};
    if (col.size() >= 4) s["mcse"] = batch_means_mcse(col);
    summary[chain.names[c]] = s;
  }
  j["posterior"] = summary;
  io::write_json(out / "mcmc.json", j);
  std::cout << "mcmc: " << a.draws << " draws, acceptance rate " << format_number(chain.acceptance_rate)
            << ", step " << format_number(chain.step) << '\n';
  return 0;
}

// ------------------------------------------------------------- experiment --

struct ExperimentArgs {
  std::string name;
  bool full = false;
  int p = 0;
  int rows = 0;
  int cols = 0;
  int k = 0;
  int n = 0;
  int replicates = 0;
  std::vector<int> k_grid;
  std::vector<int> n_list;
  std::vector<std::string> models;
  double strength = 2.0;
  int points = 10;
  double scale = 1.0;
  double level = 0.0;
  int permutations = 9999;
  std::string data;
  std::uint64_t seed = 1;
  int jobs = 1;
  std::string out;
};

std::pair<int, int> square_side(int p) {
  const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(p))));
  detail::require(side * side == p, "--p must be a perfect square (square lattice), got " + std::to_string(p));
  return {side, side};
}

void cmd_experiment(const ExperimentArgs& a) {
  const fs::path out(a.out);
  ExperimentReport report;
  if (a.name == "sim1") {
    Sim1Config c;
    c.replicates = a.full ? 125 : 20;
    if (a.p > 0) std::tie(c.rows, c.cols) = square_side(a.p);
    if (a.rows > 0) c.rows = a.rows;
    if (a.cols > 0) c.cols = a.cols;
    if (a.k > 0) c.k = a.k;
    if (a.n > 0) c.n = a.n;
    if (a.replicates > 0) c.replicates = a.replicates;
    if (a.level > 0.0) c.level = a.level;
    c.seed = a.seed;
    c.jobs = a.jobs;
    report = sim1_coverage(c);
  } else if (a.name == "sim2") {
    Sim2Config c;
    c.replicates = a.full ? 125 : 20;
    if (a.full) c.k_grid = {10, 20, 30, 40, 50, 60, 70, 80, 90, 100};
    if (a.p > 0) std::tie(c.rows, c.cols) = square_side(a.p);
    if (a.rows > 0) c.rows = a.rows;
    if (a.cols > 0) c.cols = a.cols;
    if (a.n > 0) c.n = a.n;
    if (!a.k_grid.empty()) c.k_grid = a.k_grid;
    if (a.replicates > 0) c.replicates = a.replicates;
    c.scale = a.scale;
    c.seed = a.seed;
    c.jobs = a.jobs;
    report = sim2_model_selection(c);
  } else if (a.name == "sim3") {
    Sim3Config c;
    c.replicates = a.full ? 125 : 20;
    if (a.full) c.n_list = {1, 5, 10, 25, 50};
    if (a.rows > 0) c.rows = a.rows;
    if (a.cols > 0) c.cols = a.cols;
    if (a.k > 0) c.k = a.k;
    if (!a.n_list.empty()) c.n_list = a.n_list;
    if (!a.models.empty()) {
      c.models.clear();
      for (const auto& m : a.models) c.models.push_back(parse_sim3_model(m));
    }
    if (a.replicates > 0) c.replicates = a.replicates;
    c.strength = a.strength;
    c.points = a.points;
    c.seed = a.seed;
    c.jobs = a.jobs;
    report = sim3_misspecification(c);
  } else if (a.name == "wheat") {
    detail::require(!a.data.empty(), "experiment wheat needs --data FILE (20 x 25 yield grid)");
    WheatConfig c;
    if (a.rows > 0) c.rows = a.rows;
    if (a.cols > 0) c.cols = a.cols;
    if (a.k > 0) c.k = a.k;
    if (a.level > 0.0) c.level = a.level;
    c.permutations = a.permutations;
    c.seed = a.seed;
    WheatAnalysis w = wheat_pipeline(io::read_field_trial(a.data, c.rows, c.cols), c);
    io::write_json(out / "fit.json", io::fit_to_json(w.fit, w.intervals));
    report = std::move(w.report);
  } else {
    throw ValidationError("unknown experiment '" + a.name + "'; valid names are sim1, sim2, sim3, wheat");
  }
  report.write(out);
  std::cout << "experiment " << a.name << ": report written to " << out.string() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Graph-based spatial covariance models: bases, simulation, fitting, MCMC, experiments"};
  app.set_config("--config", "", "Replay a run from an echoed run_config.toml");
  app.require_subcommand(1, 1);
  app.set_version_flag("--version", "graphcov 1.0.0");

  BasisArgs basis;
  auto* c_basis = app.add_subcommand("basis", "Line-graph Laplacian eigenbasis over the edges of a graph")->configurable();
  add_graph_options(c_basis, basis.graph);
  c_basis->add_option("-k,--k", basis.k, "Number of basis vectors")->required();
  c_basis->add_option("--covariates", basis.covariates, "Node feature CSV; the basis is orthogonalized to them");
  c_basis->add_option("--covariate-mode", basis.covariate_mode, "average or difference")->capture_default_str();
  c_basis->add_option("--out", basis.out, "Output directory")->required();

  SimulateArgs sim;
  auto* c_sim = app.add_subcommand("simulate", "Draw samples from a CAR, ICAR or GDEF model")->configurable();
  add_graph_options(c_sim, sim.graph);
  c_sim->add_option("--family", sim.family, "car, icar or gdef")->capture_default_str();
  c_sim->add_option("--nu", sim.nu, "GDEF smoothness: 0.5, 1.5, 2.5 or inf")->capture_default_str();
  c_sim->add_option("--kappa", sim.kappa, "CAR dependence, |kappa| < 1")->capture_default_str();
  c_sim->add_option("--sigma2", sim.sigma2, "Scale sigma2")->capture_default_str();
  c_sim->add_option("--tau2", sim.tau2, "Nugget variance")->capture_default_str();
  c_sim->add_option("--beta0", sim.beta0, "Constant mean")->capture_default_str();
  c_sim->add_option("--uniform-weight", sim.uniform_weight, "Weight of every edge")->capture_default_str();
  c_sim->add_option("--eta", sim.eta, "CSV of LGL basis coefficients (k values)");
  c_sim->add_option("--weights", sim.weights, "CSV of edge weights in canonical edge order");
  c_sim->add_option("-n,--n", sim.n, "Number of replicates")->capture_default_str();
  c_sim->add_option("--seed", sim.seed, "Random seed")->capture_default_str();
  c_sim->add_option("--figure", sim.figure, "Preset panels: covcomp, icarres, covcomp2 or example");
  c_sim->add_option("--out", sim.out, "Output directory")->required();

  FitArgs fit;
  auto* c_fit = app.add_subcommand("fit", "Maximum likelihood fit of a GDEF or CAR model")->configurable();
  add_graph_options(c_fit, fit.graph);
  add_data_options(c_fit, fit.data);
  add_model_options(c_fit, fit.model);
  add_optimizer_options(c_fit, fit);
  c_fit->add_option("--level", fit.level, "Wald interval level")->capture_default_str();
  c_fit->add_flag("--allow-diverged", fit.allow_diverged, "Exit 0 even when the fit did not converge");
  c_fit->add_option("--out", fit.out, "Output directory")->required();

  McmcArgs mcmc;
  auto* c_mcmc = app.add_subcommand("mcmc", "Posterior sampling by Metropolis-adjusted Langevin")->configurable();
  c_mcmc->set_help_flag("--help", "Print this help message and exit");  // frees -h for the step size
  add_graph_options(c_mcmc, mcmc.graph);
  add_data_options(c_mcmc, mcmc.data);
  add_model_options(c_mcmc, mcmc.model);
  c_mcmc->add_option("-T,--draws", mcmc.draws, "Retained draws")->capture_default_str();
  c_mcmc->add_option("--burnin", mcmc.burnin, "Burn-in iterations")->capture_default_str();
  c_mcmc->add_option("--h", mcmc.step, "Langevin step size h")->capture_default_str();
  c_mcmc->add_flag("--adapt", mcmc.adapt, "Adapt h toward 0.574 acceptance during burn-in");
  c_mcmc->add_option("--seed", mcmc.seed, "Random seed")->capture_default_str();
  c_mcmc->add_flag("--full-w", mcmc.full_w, "Sample every edge weight (identity basis, Gamma prior)");
  c_mcmc->add_option("--eta-var", mcmc.eta_variance, "Prior variance phi of basis coefficients")->capture_default_str();
  c_mcmc->add_option("--phi-shape", mcmc.phi_shape, "Inverse-gamma hyperprior shape for phi (0: fixed phi)")
      ->capture_default_str();
  c_mcmc->add_option("--phi-scale", mcmc.phi_scale, "Inverse-gamma hyperprior scale for phi")->capture_default_str();
  c_mcmc->add_option("--sigma2-shape", mcmc.sigma2_shape, "Inverse-gamma shape for sigma2")->capture_default_str();
  c_mcmc->add_option("--sigma2-scale", mcmc.sigma2_scale, "Inverse-gamma scale for sigma2")->capture_default_str();
  c_mcmc->add_option("--tau2-shape", mcmc.tau2_shape, "Inverse-gamma shape for tau2")->capture_default_str();
  c_mcmc->add_option("--tau2-scale", mcmc.tau2_scale, "Inverse-gamma scale for tau2")->capture_default_str();
  c_mcmc->add_option("--kappa-a", mcmc.kappa_a, "Beta prior a on (kappa+1)/2")->capture_default_str();
  c_mcmc->add_option("--kappa-b", mcmc.kappa_b, "Beta prior b on (kappa+1)/2")->capture_default_str();
  c_mcmc->add_option("--gamma-shape", mcmc.gamma_shape, "Gamma prior shape on raw weights (--full-w)")
      ->capture_default_str();
  c_mcmc->add_option("--gamma-rate", mcmc.gamma_rate, "Gamma prior rate on raw weights (--full-w)")
      ->capture_default_str();
  c_mcmc->add_option("--out", mcmc.out, "Output directory")->required();

  ExperimentArgs exp;
  exp.jobs = default_jobs();
  auto* c_exp = app.add_subcommand("experiment", "Run sim1, sim2, sim3 or the wheat analysis")->configurable();
  c_exp->add_option("name", exp.name, "sim1, sim2, sim3 or wheat")->required();
  c_exp->add_flag("--full", exp.full, "Large-scale replicate counts and grids");
  c_exp->add_option("--p", exp.p, "Square lattice with p nodes (sim1, sim2)")->capture_default_str();
  c_exp->add_option("--rows", exp.rows, "Lattice rows")->capture_default_str();
  c_exp->add_option("--cols", exp.cols, "Lattice columns")->capture_default_str();
  c_exp->add_option("-k,--k", exp.k, "Basis size")->capture_default_str();
  c_exp->add_option("-n,--n", exp.n, "Replicates per data set (sim1, sim2)")->capture_default_str();
  c_exp->add_option("--replicates", exp.replicates, "Monte Carlo replicates")->capture_default_str();
  c_exp->add_option("--k-grid", exp.k_grid, "Basis sizes compared (sim2)")->delimiter(',');
  c_exp->add_option("--n-list", exp.n_list, "Replicate counts (sim3)")->delimiter(',');
  c_exp->add_option("--models", exp.models, "gdef32, gdefinf, matern52, car (sim3)")->delimiter(',');
  c_exp->add_option("--strength", exp.strength, "Deformation strength (sim3)")->capture_default_str();
  c_exp->add_option("--points", exp.points, "Deformation points (sim3)")->capture_default_str();
  c_exp->add_option("--scale", exp.scale, "Scale of the ICAR log-weight field (sim2)")->capture_default_str();
  c_exp->add_option("--level", exp.level, "Interval level (0: experiment default)")->capture_default_str();
  c_exp->add_option("--permutations", exp.permutations, "Moran's I permutations (wheat)")->capture_default_str();
  c_exp->add_option("--data", exp.data, "Yield grid CSV (wheat)");
  c_exp->add_option("--seed", exp.seed, "Random seed")->capture_default_str();
  c_exp->add_option("--jobs", exp.jobs, "Parallel replicates (default: GRAPHCOV_JOBS or 1)")->capture_default_str();
  c_exp->add_option("--out", exp.out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitValidation;
  }

  try {
    if (c_basis->parsed()) {
      echo_config(*c_basis, basis.out);
      cmd_basis(basis);
    } else if (c_sim->parsed()) {
      echo_config(*c_sim, sim.out);
      cmd_simulate(sim);
    } else if (c_fit->parsed()) {
      echo_config(*c_fit, fit.out);
      return cmd_fit(fit);
    } else if (c_mcmc->parsed()) {
      echo_config(*c_mcmc, mcmc.out);
      return cmd_mcmc(mcmc);
    } else if (c_exp->parsed()) {
      echo_config(*c_exp, exp.out);
      cmd_experiment(exp);
    }
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  }
  return 0;
}
