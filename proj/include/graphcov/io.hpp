#pragma once

// File formats: edge lists, numeric CSV matrices, basis exports with a JSON
// sidecar, fit results as JSON, and MCMC chains as CSV.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "graphcov/errors.hpp"
#include "graphcov/fit.hpp"
#include "graphcov/graph.hpp"
#include "graphcov/mala.hpp"
#include "graphcov/report.hpp"
#include "graphcov/spectral_basis.hpp"

namespace graphcov::io {

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) {
    const auto b = cell.find_first_not_of(" \t\r");
    const auto e = cell.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? std::string() : cell.substr(b, e - b + 1));
  }
  return out;
}

inline std::optional<double> parse_number(const std::string& s) {
  if (s.empty()) return std::nullopt;
  if (s == "NA" || s == "NaN" || s == "nan") return std::numeric_limits<double>::quiet_NaN();
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) return std::nullopt;
    return v;
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

inline std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open input file '" + path.string() + "'");
  return in;
}

inline std::ofstream open_output(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write output file '" + path.string() + "'");
  return out;
}

}  // namespace detail

/// Numeric CSV; a first line that does not parse as numbers is a header.
inline Eigen::MatrixXd read_matrix_csv(const std::filesystem::path& path) {
  std::ifstream in = detail::open_input(path);
  std::vector<std::vector<double>> rows;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto cells = detail::split_csv_line(line);
    std::vector<double> row;
    bool numeric = true;
    for (const auto& c : cells) {
      const auto v = detail::parse_number(c);
      if (!v) {
        numeric = false;
        break;
      }
      row.push_back(*v);
    }
    if (!numeric) {
      if (rows.empty() && line_no == 1) continue;  // header
      throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": non-numeric value");
    }
    if (!rows.empty() && row.size() != rows.front().size())
      throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                            std::to_string(rows.front().size()) + " columns, found " + std::to_string(row.size()));
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ValidationError("'" + path.string() + "' contains no data rows");
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  return m;
}

/// A rows x cols yield grid, or a long table (row, col, value) with 1-based
/// positions.
inline Eigen::MatrixXd read_field_trial(const std::filesystem::path& path, int rows, int cols) {
  const Eigen::MatrixXd m = read_matrix_csv(path);
  if (m.rows() == rows && m.cols() == cols) return m;
  if (m.cols() == 3 && m.rows() == static_cast<Eigen::Index>(rows) * cols) {
    Eigen::MatrixXd grid = Eigen::MatrixXd::Constant(rows, cols, std::numeric_limits<double>::quiet_NaN());
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      const int r = static_cast<int>(m(i, 0)) - 1;
      const int c = static_cast<int>(m(i, 1)) - 1;
      graphcov::detail::require(r >= 0 && r < rows && c >= 0 && c < cols, "field-trial position out of range");
      grid(r, c) = m(i, 2);
    }
    graphcov::detail::require(grid.allFinite(), "field-trial table does not cover every plot");
    return grid;
  }
  throw ValidationError("field-trial data must be a " + std::to_string(rows) + " x " + std::to_string(cols) +
                        " grid or a (row, col, value) table, got " + std::to_string(m.rows()) + " x " +
                        std::to_string(m.cols()));
}

inline void write_matrix_csv(const std::filesystem::path& path, const Eigen::MatrixXd& m,
                             const std::vector<std::string>& header = {}) {
  std::ofstream out = detail::open_output(path);
  if (!header.empty()) {
    for (std::size_t j = 0; j < header.size(); ++j) out << (j ? "," : "") << header[j];
    out << '\n';
  }
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) out << (j ? "," : "") << format_number(m(i, j));
    out << '\n';
  }
}

struct EdgeList {
  Graph graph;
  std::optional<Eigen::VectorXd> weights;  // in canonical edge order
};

/// Rows `i,j` or `i,j,w` with 0-based node ids. The node count is the
/// largest id + 1 unless given.
inline EdgeList read_edge_list(const std::filesystem::path& path, std::optional<int> nodes = std::nullopt) {
  const Eigen::MatrixXd m = read_matrix_csv(path);
  if (m.cols() != 2 && m.cols() != 3)
    throw ValidationError("edge list '" + path.string() + "' must have 2 or 3 columns (i,j[,w])");
  std::vector<std::pair<int, int>> pairs;
  int max_id = -1;
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const double a = m(r, 0), b = m(r, 1);
    if (a != std::floor(a) || b != std::floor(b) || a < 0 || b < 0)
      throw ValidationError("edge list row " + std::to_string(r + 1) + ": node ids must be non-negative integers");
    pairs.emplace_back(static_cast<int>(a), static_cast<int>(b));
    max_id = std::max({max_id, static_cast<int>(a), static_cast<int>(b)});
  }
  EdgeList out{build_graph(nodes.value_or(max_id + 1), pairs), std::nullopt};
  if (m.cols() == 3) {
    Eigen::VectorXd w(out.graph.edge_count());
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      const auto& pr = pairs[static_cast<std::size_t>(r)];
      w(*out.graph.edge_index(pr.first, pr.second)) = m(r, 2);
    }
    out.weights = std::move(w);
  }
  return out;
}

inline void write_edge_list(const std::filesystem::path& path, const Graph& g,
                            const std::optional<Eigen::VectorXd>& values = std::nullopt,
                            const std::string& value_name = "w") {
  std::ofstream out = detail::open_output(path);
  out << "i,j" << (values ? "," + value_name : "") << '\n';
  for (int e = 0; e < g.edge_count(); ++e) {
    out << g.edge(e).u << ',' << g.edge(e).v;
    if (values) out << ',' << format_number((*values)(e));
    out << '\n';
  }
}

/// Long-form basis: `edge_index,eigenvalue_rank,value`, plus <stem>.json with
/// {k, eigenvalues, orthogonalized, graph_hash}.
inline void write_basis(const std::filesystem::path& csv_path, const EdgeBasis& basis) {
  {
    std::ofstream out = detail::open_output(csv_path);
    out << "edge_index,eigenvalue_rank,value\n";
    for (int e = 0; e < basis.edge_count(); ++e)
      for (int j = 0; j < basis.size(); ++j) out << e << ',' << j << ',' << format_number(basis.vectors(e, j)) << '\n';
  }
  Json side;
  side["k"] = basis.size();
  side["edges"] = basis.edge_count();
  std::vector<double> ev(basis.eigenvalues.data(), basis.eigenvalues.data() + basis.eigenvalues.size());
  side["eigenvalues"] = ev;
  side["orthogonalized"] = basis.orthogonalized;
  side["graph_hash"] = basis.graph_hash;
  std::filesystem::path json_path = csv_path;
  json_path.replace_extension(".json");
  std::ofstream out = detail::open_output(json_path);
  out << side.dump(2) << '\n';
}

inline EdgeBasis read_basis(const std::filesystem::path& csv_path) {
  std::filesystem::path json_path = csv_path;
  json_path.replace_extension(".json");
  std::ifstream side_in = detail::open_input(json_path);
  const Json side = Json::parse(side_in);
  EdgeBasis b;
  const int k = side.at("k").get<int>();
  const int q = side.at("edges").get<int>();
  b.vectors = Eigen::MatrixXd::Zero(q, k);
  const auto ev = side.at("eigenvalues").get<std::vector<double>>();
  b.eigenvalues = Eigen::Map<const Eigen::VectorXd>(ev.data(), static_cast<Eigen::Index>(ev.size()));
  b.orthogonalized = side.at("orthogonalized").get<bool>();
  b.graph_hash = side.at("graph_hash").get<std::uint64_t>();
  const Eigen::MatrixXd m = read_matrix_csv(csv_path);
  for (Eigen::Index r = 0; r < m.rows(); ++r) b.vectors(static_cast<int>(m(r, 0)), static_cast<int>(m(r, 1))) = m(r, 2);
  return b;
}

namespace detail {
inline Json number_or_null(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }
}  // namespace detail

/// {theta_hat: {natural scale}, loglik, aic, bic, converged, iterations, se:
/// {transformed scale}} plus diagnostics and interval details.
inline Json fit_to_json(const FitResult& fit, const std::optional<WaldResult>& wald = std::nullopt) {
  using detail::number_or_null;
  Json j;
  Json theta_hat = Json::object();
  Json theta_t = Json::object();
  for (std::size_t i = 0; i < fit.names.size(); ++i) {
    theta_hat[fit.names[i]] = number_or_null(fit.natural(static_cast<Eigen::Index>(i)));
    theta_t[fit.names[i]] = number_or_null(fit.theta(static_cast<Eigen::Index>(i)));
  }
  if (fit.mean_estimated) theta_hat["beta0"] = number_or_null(fit.beta0);
  j["theta_hat"] = theta_hat;
  j["theta_transformed"] = theta_t;
  j["loglik"] = number_or_null(fit.loglik);
  j["aic"] = number_or_null(fit.aic);
  j["bic"] = number_or_null(fit.bic);
  j["converged"] = fit.converged;
  j["diverged"] = fit.diverged;
  j["iterations"] = fit.iterations;
  j["free_parameters"] = fit.free_parameters;
  j["message"] = fit.message;
  j["at_boundary"] = fit.at_boundary;
  Json se = Json::object();
  if (wald && wald->available) {
    Json intervals = Json::array();
    for (const auto& w : wald->intervals) {
      se[w.name] = number_or_null(w.se);
      intervals.push_back({{"parameter", w.name},
                           {"estimate", number_or_null(w.natural_estimate)},
                           {"lower", number_or_null(w.natural_lower)},
                           {"upper", number_or_null(w.natural_upper)}});
    }
    j["intervals"] = intervals;
  } else if (wald) {
    j["interval_diagnostic"] = wald->diagnostic;
  }
  j["se"] = se;
  Json trace = Json::array();
  for (const auto& t : fit.trace)
    trace.push_back({{"iteration", t.iteration},
                     {"loglik", number_or_null(t.loglik)},
                     {"gradient_norm", number_or_null(t.gradient_norm)},
                     {"step_scale", number_or_null(t.step_scale)}});
  j["trace"] = trace;
  return j;
}

inline void write_json(const std::filesystem::path& path, const Json& j) {
  std::ofstream out = detail::open_output(path);
  out << j.dump(2) << '\n';
}

inline void write_chain_csv(const std::filesystem::path& path, const PosteriorChain& chain) {
  write_matrix_csv(path, chain.draws, chain.names);
}

/// Tidy field export `row,col,value` for a rows x cols lattice (row-major
/// node order).
inline void write_field_csv(const std::filesystem::path& path, const Eigen::VectorXd& values, int rows, int cols) {
  graphcov::detail::require(values.size() == static_cast<Eigen::Index>(rows) * cols, "field size must be rows * cols");
  std::ofstream out = detail::open_output(path);
  out << "row,col,value\n";
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) out << r << ',' << c << ',' << format_number(values(r * cols + c)) << '\n';
}

/// Tidy edge export `edge_index,value`.
inline void write_edge_values_csv(const std::filesystem::path& path, const Eigen::VectorXd& values) {
  std::ofstream out = detail::open_output(path);
  out << "edge_index,value\n";
  for (Eigen::Index e = 0; e < values.size(); ++e) out << e << ',' << format_number(values(e)) << '\n';
}

}  // namespace graphcov::io
