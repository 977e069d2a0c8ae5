#pragma once

// Grouping error against ground truth and seeded repetition sweeps.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "v1g/parallel.hpp"
#include "v1g/rng.hpp"

namespace v1g {

struct ErrorBreakdown {
  std::size_t E1 = 0;  // unit points left in the background
  std::size_t E2 = 0;  // background points put into some unit
  std::size_t E3 = 0;  // unit points outside their unit's matched cluster
  std::size_t n = 0;

  double E() const { return n ? static_cast<double>(E1 + E2 + E3) / static_cast<double>(n) : 0.0; }
};

inline nlohmann::json to_json(const ErrorBreakdown& e) {
  return {{"E1", e.E1}, {"E2", e.E2}, {"E3", e.E3}, {"n", e.n}, {"E", e.E()}};
}

/// Square assignment minimising total cost (Hungarian method, O(m^3)).
/// Returns row -> column.
inline std::vector<int> min_cost_assignment(const std::vector<std::vector<double>>& cost) {
  const int m = static_cast<int>(cost.size());
  if (m == 0) return {};
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(m + 1, 0.0), v(m + 1, 0.0);
  std::vector<int> p(m + 1, 0), way(m + 1, 0);
  for (int i = 1; i <= m; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) minv[j] = cur, way[j] = j0;
        if (minv[j] < delta) delta = minv[j], j1 = j;
      }
      for (int j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> row_to_col(m, -1);
  for (int j = 1; j <= m; ++j)
    if (p[j]) row_to_col[p[j] - 1] = j - 1;
  return row_to_col;
}

struct UnitMatch {
  // unit_to_cluster[u - 1] is the cluster id matched to truth unit u, or 0
  // when the unit gets no cluster.
  std::vector<int> unit_to_cluster;
  std::vector<std::vector<std::size_t>> overlap;  // [unit-1][cluster-1]
  std::size_t total_overlap = 0;
};

/// One-to-one matching between truth units (labels >= 1) and predicted
/// clusters (labels >= 1) maximising the number of shared points.
inline UnitMatch match_units(const std::vector<int>& labels, const std::vector<int>& truth) {
  if (labels.size() != truth.size()) throw std::invalid_argument("match_units: length mismatch");
  int U = 0, K = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || truth[i] < 0) throw std::invalid_argument("match_units: negative label");
    U = std::max(U, truth[i]);
    K = std::max(K, labels[i]);
  }
  UnitMatch m;
  m.overlap.assign(U, std::vector<std::size_t>(K, 0));
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (truth[i] > 0 && labels[i] > 0) ++m.overlap[truth[i] - 1][labels[i] - 1];
  m.unit_to_cluster.assign(U, 0);
  const int size = std::max(U, K);
  if (U == 0 || K == 0) return m;
  std::vector<std::vector<double>> cost(size, std::vector<double>(size, 0.0));
  for (int u = 0; u < U; ++u)
    for (int k = 0; k < K; ++k) cost[u][k] = -static_cast<double>(m.overlap[u][k]);
  const auto assign = min_cost_assignment(cost);
  for (int u = 0; u < U; ++u)
    if (assign[u] < K) {
      m.unit_to_cluster[u] = assign[u] + 1;
      m.total_overlap += m.overlap[u][assign[u]];
    }
  return m;
}

inline ErrorBreakdown score(const std::vector<int>& labels, const std::vector<int>& truth) {
  const UnitMatch m = match_units(labels, truth);
  ErrorBreakdown e;
  e.n = labels.size();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (truth[i] > 0 && labels[i] == 0) ++e.E1;
    else if (truth[i] == 0 && labels[i] > 0) ++e.E2;
    else if (truth[i] > 0 && labels[i] != m.unit_to_cluster[truth[i] - 1]) ++e.E3;
  }
  return e;
}

// ---------------------------------------------------------------------------
// sweeps

struct SweepAxis {
  std::string name;
  std::vector<double> values;
};

using CellParams = std::map<std::string, double>;

struct SweepGrid {
  std::vector<SweepAxis> axes;
  int reps = 100;
  std::uint64_t base_seed = 0;
  // Axes the repetition seed depends on; empty means all. Leaving kernel
  // parameters out gives every kernel setting the same stimuli.
  std::vector<std::string> seed_axes;

  void validate() const {
    if (reps < 1) throw std::invalid_argument("SweepGrid: reps must be >= 1");
    for (const auto& a : axes)
      if (a.values.empty()) throw std::invalid_argument("SweepGrid: axis '" + a.name + "' is empty");
    for (const auto& s : seed_axes) {
      bool found = false;
      for (const auto& a : axes) found = found || a.name == s;
      if (!found) throw std::invalid_argument("SweepGrid: unknown seed axis '" + s + "'");
    }
  }

  std::size_t cells() const {
    std::size_t c = 1;
    for (const auto& a : axes) c *= a.values.size();
    return c;
  }

  /// Per-axis indices of a cell; the last axis varies fastest.
  std::vector<std::size_t> indices(std::size_t cell) const {
    std::vector<std::size_t> idx(axes.size());
    for (std::size_t k = axes.size(); k-- > 0;) {
      idx[k] = cell % axes[k].values.size();
      cell /= axes[k].values.size();
    }
    return idx;
  }

  CellParams params(std::size_t cell) const {
    CellParams p;
    const auto idx = indices(cell);
    for (std::size_t k = 0; k < axes.size(); ++k) p[axes[k].name] = axes[k].values[idx[k]];
    return p;
  }

  std::uint64_t seed(std::size_t cell, int rep) const {
    const auto idx = indices(cell);
    std::size_t key = 0;
    for (std::size_t k = 0; k < axes.size(); ++k) {
      const bool used = seed_axes.empty() ||
                        std::find(seed_axes.begin(), seed_axes.end(), axes[k].name) != seed_axes.end();
      if (used) key = key * axes[k].values.size() + idx[k];
    }
    return derive_seed(base_seed, key, rep);
  }
};

inline nlohmann::json to_json(const SweepGrid& g) {
  nlohmann::json axes = nlohmann::json::array();
  for (const auto& a : g.axes) axes.push_back({{"name", a.name}, {"values", a.values}});
  return {{"axes", axes}, {"reps", g.reps}, {"base_seed", g.base_seed}, {"seed_axes", g.seed_axes}};
}

inline SweepGrid sweep_grid_from_json(const nlohmann::json& j) {
  SweepGrid g;
  for (const auto& a : j.at("axes")) g.axes.push_back({a.at("name").get<std::string>(), a.at("values").get<std::vector<double>>()});
  g.reps = j.value("reps", 100);
  g.base_seed = j.value("base_seed", std::uint64_t{0});
  g.seed_axes = j.value("seed_axes", std::vector<std::string>{});
  g.validate();
  return g;
}

struct RunRecord {
  std::size_t cell = 0;
  int rep = 0;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  ErrorBreakdown err;
};

struct Stat {
  double mean = 0.0, sd = 0.0;
};

struct CellSummary {
  std::size_t cell = 0;
  CellParams params;
  int ok_reps = 0;
  bool partial = false;
  Stat E, E1, E2, E3;  // E as a fraction, components as point counts
};

struct SweepResult {
  std::vector<RunRecord> runs;  // cell-major, then rep
  std::vector<CellSummary> cells;
};

using SweepFn = std::function<ErrorBreakdown(const CellParams&, std::uint64_t seed)>;

namespace detail {
// mean and sample standard deviation, summed in the given order
inline Stat stat_of(const std::vector<double>& xs) {
  Stat s;
  if (xs.empty()) return {std::nan(""), std::nan("")};
  for (double x : xs) s.mean += x;
  s.mean /= static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - s.mean) * (x - s.mean);
    s.sd = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return s;
}
}  // namespace detail

inline CellSummary summarize_cell(const SweepGrid& g, std::size_t cell, const std::vector<RunRecord>& runs) {
  CellSummary s;
  s.cell = cell;
  s.params = g.params(cell);
  std::vector<double> e, e1, e2, e3;
  for (const auto& r : runs) {
    if (r.cell != cell) continue;
    if (!r.ok) {
      s.partial = true;
      continue;
    }
    e.push_back(r.err.E());
    e1.push_back(static_cast<double>(r.err.E1));
    e2.push_back(static_cast<double>(r.err.E2));
    e3.push_back(static_cast<double>(r.err.E3));
  }
  s.ok_reps = static_cast<int>(e.size());
  s.E = detail::stat_of(e);
  s.E1 = detail::stat_of(e1);
  s.E2 = detail::stat_of(e2);
  s.E3 = detail::stat_of(e3);
  return s;
}

/// Runs fn for every (cell, rep). Failures are recorded per run and mark the
/// cell partial. Output is independent of jobs.
inline SweepResult sweep(const SweepGrid& g, const SweepFn& fn, int jobs = 1) {
  g.validate();
  const std::size_t cells = g.cells();
  SweepResult out;
  out.runs.resize(cells * static_cast<std::size_t>(g.reps));
  parallel_for(out.runs.size(), jobs, [&](std::size_t i) {
    RunRecord& r = out.runs[i];
    r.cell = i / static_cast<std::size_t>(g.reps);
    r.rep = static_cast<int>(i % static_cast<std::size_t>(g.reps));
    r.seed = g.seed(r.cell, r.rep);
    try {
      r.err = fn(g.params(r.cell), r.seed);
      r.ok = true;
    } catch (const std::exception& ex) {
      r.error = ex.what();
    }
  });
  for (std::size_t c = 0; c < cells; ++c) out.cells.push_back(summarize_cell(g, c, out.runs));
  return out;
}

namespace detail {
inline std::string num(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}
inline std::string csv_escape(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += (c == '\n' ? ' ' : c);
  }
  return out + "\"";
}
}  // namespace detail

inline void write_sweep_long_csv(const SweepGrid& g, const SweepResult& r, std::ostream& os) {
  os << "cell";
  for (const auto& a : g.axes) os << ',' << a.name;
  os << ",rep,seed,ok,E1,E2,E3,n,E,error\n";
  for (const auto& run : r.runs) {
    os << run.cell;
    const auto p = g.params(run.cell);
    for (const auto& a : g.axes) os << ',' << detail::num(p.at(a.name));
    os << ',' << run.rep << ',' << run.seed << ',' << (run.ok ? 1 : 0);
    if (run.ok)
      os << ',' << run.err.E1 << ',' << run.err.E2 << ',' << run.err.E3 << ',' << run.err.n << ','
         << detail::num(run.err.E()) << ",";
    else
      os << ",,,,,," << detail::csv_escape(run.error);
    os << '\n';
  }
}

inline void write_sweep_summary_csv(const SweepGrid& g, const SweepResult& r, std::ostream& os) {
  os << "cell";
  for (const auto& a : g.axes) os << ',' << a.name;
  os << ",ok_reps,partial,mean_E,sd_E,mean_E1,sd_E1,mean_E2,sd_E2,mean_E3,sd_E3\n";
  for (const auto& c : r.cells) {
    os << c.cell;
    for (const auto& a : g.axes) os << ',' << detail::num(c.params.at(a.name));
    os << ',' << c.ok_reps << ',' << (c.partial ? 1 : 0);
    for (const Stat* s : {&c.E, &c.E1, &c.E2, &c.E3}) os << ',' << detail::num(s->mean) << ',' << detail::num(s->sd);
    os << '\n';
  }
}

inline void write_sweep_files(const SweepGrid& g, const SweepResult& r, const std::string& long_path,
                              const std::string& summary_path) {
  std::ofstream a(long_path), b(summary_path);
  if (!a) throw std::runtime_error("cannot write " + long_path);
  if (!b) throw std::runtime_error("cannot write " + summary_path);
  write_sweep_long_csv(g, r, a);
  write_sweep_summary_csv(g, r, b);
}

/// Index of the cell with the smallest mean E among cells with at least one
/// successful run; ties go to the lower index.
inline std::size_t best_cell(const SweepResult& r) {
  std::size_t best = r.cells.size();
  for (std::size_t c = 0; c < r.cells.size(); ++c) {
    if (r.cells[c].ok_reps == 0) continue;
    if (best == r.cells.size() || r.cells[c].E.mean < r.cells[best].E.mean) best = c;
  }
  if (best == r.cells.size()) throw std::runtime_error("best_cell: no successful runs");
  return best;
}

}  // namespace v1g
