#pragma once

// Experiment reports (JSON + CSV tables), Monte Carlo aggregates, and a small
// index-ordered parallel map for independent replicates.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <numeric>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "graphcov/errors.hpp"

namespace graphcov {

using Json = nlohmann::ordered_json;

/// Mean and Monte Carlo standard error sd / sqrt(count). Values are sorted
/// first so the floating-point reduction does not depend on arrival order.
struct Aggregate {
  double mean = std::numeric_limits<double>::quiet_NaN();
  double mcse = std::numeric_limits<double>::quiet_NaN();
  int count = 0;
};

inline Aggregate aggregate(std::vector<double> values) {
  Aggregate a;
  a.count = static_cast<int>(values.size());
  if (values.empty()) return a;
  std::sort(values.begin(), values.end());
  a.mean = std::accumulate(values.begin(), values.end(), 0.0) / a.count;
  if (a.count >= 2) {
    double ss = 0.0;
    for (const double v : values) ss += (v - a.mean) * (v - a.mean);
    a.mcse = std::sqrt(ss / (a.count - 1)) / std::sqrt(static_cast<double>(a.count));
  }
  return a;
}

inline Json to_json(const Aggregate& a) {
  Json j;
  j["mean"] = std::isfinite(a.mean) ? Json(a.mean) : Json(nullptr);
  j["mcse"] = std::isfinite(a.mcse) ? Json(a.mcse) : Json(nullptr);
  j["count"] = a.count;
  return j;
}

struct Table {
  std::string name;
  std::vector<std::string> columns;
  std::vector<std::vector<Json>> rows;

  void add_row(std::vector<Json> row) {
    detail::require(row.size() == columns.size(), "table '" + name + "' row has wrong width");
    rows.push_back(std::move(row));
  }
};

inline std::string format_number(double v) {
  if (std::isnan(v)) return "NA";
  if (std::isinf(v)) return v > 0 ? "Inf" : "-Inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string csv_cell(const Json& v) {
  if (v.is_null()) return "NA";
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  if (v.is_number()) return format_number(v.get<double>());
  if (v.is_string()) return v.get<std::string>();
  return v.dump();
}

inline void write_table_csv(const Table& t, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path.string());
  for (std::size_t c = 0; c < t.columns.size(); ++c) out << (c ? "," : "") << t.columns[c];
  out << '\n';
  for (const auto& row : t.rows) {
    for (std::size_t c = 0; c < row.size(); ++c) out << (c ? "," : "") << csv_cell(row[c]);
    out << '\n';
  }
}

struct ExperimentReport {
  std::string name;
  Json parameters = Json::object();
  std::vector<Table> tables;
  Json summary = Json::object();
  /// Wall-clock time; kept out of written files so reruns are bit-identical.
  double runtime_seconds = 0.0;

  const Table& table(const std::string& table_name) const {
    for (const auto& t : tables)
      if (t.name == table_name) return t;
    throw ValidationError("report has no table '" + table_name + "'");
  }

  Json to_json() const {
    Json j;
    j["experiment"] = name;
    j["parameters"] = parameters;
    j["summary"] = summary;
    Json tj = Json::object();
    for (const auto& t : tables) {
      Json rows = Json::array();
      for (const auto& r : t.rows) {
        Json obj;
        for (std::size_t c = 0; c < t.columns.size(); ++c) obj[t.columns[c]] = r[c];
        rows.push_back(std::move(obj));
      }
      tj[t.name] = std::move(rows);
    }
    j["tables"] = std::move(tj);
    return j;
  }

  /// Writes <name>_report.json and one <name>_<table>.csv per table.
  void write(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    std::ofstream out(dir / (name + "_report.json"));
    if (!out) throw ValidationError("cannot write report into " + dir.string());
    out << to_json().dump(2) << '\n';
    for (const auto& t : tables) write_table_csv(t, dir / (name + "_" + t.name + ".csv"));
  }
};

/// Worker count from GRAPHCOV_JOBS (default 1).
inline int default_jobs() {
  if (const char* env = std::getenv("GRAPHCOV_JOBS")) {
    try {
      const int j = std::stoi(env);
      if (j >= 1) return j;
    } catch (const std::exception&) {
    }
  }
  return 1;
}

/// Evaluates fn(0..count-1) on up to `jobs` threads; results are returned in
/// index order. The first exception (by index) is rethrown after all workers
/// finish.
template <class F>
auto parallel_map(int count, int jobs, F&& fn) -> std::vector<decltype(fn(0))> {
  using T = decltype(fn(0));
  detail::require(count >= 0, "count must be >= 0");
  std::vector<std::optional<T>> slots(static_cast<std::size_t>(count));
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(count));
  std::atomic<int> next{0};
  auto worker = [&] {
    for (int i = next++; i < count; i = next++) {
      try {
        slots[static_cast<std::size_t>(i)].emplace(fn(i));
      } catch (...) {
        errors[static_cast<std::size_t>(i)] = std::current_exception();
      }
    }
  };
  const int threads = std::clamp(jobs, 1, std::max(1, count));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  std::vector<T> out;
  out.reserve(slots.size());
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

}  // namespace graphcov
