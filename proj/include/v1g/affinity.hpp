#pragma once

// Pairwise affinities over feature-space datasets and their row-stochastic
// normalisation.

#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "v1g/feature_space.hpp"
#include "v1g/kernels.hpp"
#include "v1g/parallel.hpp"

namespace v1g {

using DenseMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct AffinityMatrix {
  DenseMatrix a;
  bool symmetric = false;
  nlohmann::json meta = nlohmann::json::object();

  std::size_t n() const { return static_cast<std::size_t>(a.rows()); }
};

struct NormalizedAffinity {
  DenseMatrix p;
  nlohmann::json meta = nlohmann::json::object();

  std::size_t n() const { return static_cast<std::size_t>(p.rows()); }
};

/// Raised when two dataset points fall into one lattice cell.
class CompatibilityError : public std::invalid_argument {
 public:
  CompatibilityError(std::size_t i, std::size_t j)
      : std::invalid_argument("points " + std::to_string(i) + " and " + std::to_string(j) + " share a grid cell"),
        first(i),
        second(j) {}
  std::size_t first, second;
};

inline AffinityMatrix gaussian_affinity(std::span<const std::array<double, 2>> pts, double sigma) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw std::invalid_argument("gaussian_affinity: sigma must be > 0");
  const auto n = static_cast<Eigen::Index>(pts.size());
  AffinityMatrix m;
  m.a.resize(n, n);
  m.symmetric = true;
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (Eigen::Index i = 0; i < n; ++i) {
    m.a(i, i) = 1.0;
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double dx = pts[i][0] - pts[j][0];
      const double dy = pts[i][1] - pts[j][1];
      const double w = std::exp(-(dx * dx + dy * dy) * inv);
      m.a(i, j) = w;
      m.a(j, i) = w;
    }
  }
  m.meta = {{"kind", "gaussian"}, {"sigma", sigma}};
  return m;
}

inline AffinityMatrix gaussian_affinity(std::span<const FeaturePoint> pts, double sigma) {
  std::vector<std::array<double, 2>> xy;
  xy.reserve(pts.size());
  for (const auto& p : pts) xy.push_back({p.x(), p.y()});
  return gaussian_affinity(std::span<const std::array<double, 2>>(xy), sigma);
}

/// Dataset lattice with angular bins centred on multiples of dtheta.
inline GridSpec centred_lattice(Manifold m, double width = 200.0, double height = 200.0, int frames = 1,
                                double v_max = 10.0, int n_theta = kThetaBins) {
  GridSpec g = GridSpec::for_domain(m, width, height, frames, v_max);
  if (n_theta < 4) throw std::invalid_argument("centred_lattice: n_theta must be >= 4");
  g.theta.width = kTwoPi / n_theta;
  g.theta.count = n_theta;
  g.theta.lo = -0.5 * g.theta.width;
  return g;
}

struct CorticalOptions {
  // Lattice for the one-point-per-cell rule. With quantize_theta the kernel
  // is evaluated between the angular bin centres of the two points, so that
  // relative angles are whole multiples of the bin width.
  GridSpec lattice = centred_lattice(Manifold::M3);
  bool quantize_theta = true;
  bool same_frame_only = false;  // skip pairs with different t (their entries stay 0)
  int jobs = 1;
};

inline FeaturePoint with_theta(const FeaturePoint& p, double th) {
  if (p.t()) return FeaturePoint::mt(p.x(), p.y(), *p.t(), th, *p.v());
  if (p.v()) return FeaturePoint::m0(p.x(), p.y(), th, *p.v());
  return FeaturePoint::m3(p.x(), p.y(), th);
}

inline void check_compatible(std::span<const FeaturePoint> pts, const GridSpec& lattice) {
  if (auto hit = find_collision(pts, lattice)) throw CompatibilityError(hit->first, hit->second);
}

namespace detail {

inline std::vector<FeaturePoint> lookup_points(std::span<const FeaturePoint> pts, const CorticalOptions& opt) {
  std::vector<FeaturePoint> out(pts.begin(), pts.end());
  if (opt.quantize_theta)
    for (auto& p : out) p = with_theta(p, opt.lattice.theta.center(detail::theta_bin(opt.lattice.theta, p.theta())));
  return out;
}

inline nlohmann::json cortical_meta(const DiscreteKernel& k, const CorticalOptions& opt, std::string_view kind) {
  return {{"kind", kind},
          {"process", std::string(to_string(k.process().kind))},
          {"kernel_cache_key", kernel_header(k)["cache_key"]},
          {"kappa", k.process().kappa},
          {"alpha", k.process().alpha},
          {"H", k.params().H},
          {"N", k.params().N},
          {"quantize_theta", opt.quantize_theta},
          {"lattice", to_json(opt.lattice)}};
}

}  // namespace detail

/// a_ij = kernel(x_i -> x_j); no symmetrisation.
inline AffinityMatrix cortical_affinity_directed(std::span<const FeaturePoint> pts, const DiscreteKernel& k,
                                                 const CorticalOptions& opt = {}) {
  check_compatible(pts, opt.lattice);
  const auto q = detail::lookup_points(pts, opt);
  const auto n = static_cast<Eigen::Index>(q.size());
  AffinityMatrix m;
  m.a = DenseMatrix::Zero(n, n);
  parallel_for(q.size(), opt.jobs, [&](std::size_t i) {
    for (std::size_t j = 0; j < q.size(); ++j) {
      if (opt.same_frame_only && q[i].t() != q[j].t()) continue;
      m.a(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = kernel_lookup(k, q[i], q[j]);
    }
  });
  m.meta = detail::cortical_meta(k, opt, "cortical_directed");
  return m;
}

/// Hermitian part of the directed kernel affinity.
inline AffinityMatrix cortical_affinity_symmetric(std::span<const FeaturePoint> pts, const DiscreteKernel& k,
                                                  const CorticalOptions& opt = {}) {
  AffinityMatrix m = cortical_affinity_directed(pts, k, opt);
  const auto n = m.a.rows();
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double w = 0.5 * (m.a(i, j) + m.a(j, i));
      m.a(i, j) = w;
      m.a(j, i) = w;
    }
  m.symmetric = true;
  m.meta["kind"] = "cortical_symmetric";
  return m;
}

/// Zeroes every entry between points of different frames.
inline AffinityMatrix restrict_same_frame(AffinityMatrix m, std::span<const FeaturePoint> pts) {
  if (pts.size() != m.n()) throw std::invalid_argument("restrict_same_frame: size mismatch");
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (!pts[i].t()) throw std::invalid_argument("restrict_same_frame: point without t");
    for (std::size_t j = 0; j < pts.size(); ++j)
      if (*pts[i].t() != *pts[j].t()) m.a(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = 0.0;
  }
  m.meta["same_frame"] = true;
  return m;
}

/// P = D^-1 A. A row without mass becomes a self-loop.
inline NormalizedAffinity row_normalize(AffinityMatrix m) {
  NormalizedAffinity out;
  out.meta = std::move(m.meta);
  out.p = std::move(m.a);
  const auto n = out.p.rows();
  for (Eigen::Index i = 0; i < n; ++i) {
    double s = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
      const double w = out.p(i, j);
      if (!(w >= 0.0) || !std::isfinite(w)) throw std::invalid_argument("row_normalize: negative or non-finite affinity");
      s += w;
    }
    if (s > 0.0) {
      for (Eigen::Index j = 0; j < n; ++j) out.p(i, j) /= s;
    } else {
      out.p(i, i) = 1.0;
    }
  }
  return out;
}

/// (P0 + PT) / 2.
inline NormalizedAffinity combine(NormalizedAffinity p0, const NormalizedAffinity& pt) {
  if (p0.p.rows() != pt.p.rows() || p0.p.cols() != pt.p.cols()) throw std::invalid_argument("combine: size mismatch");
  p0.p = 0.5 * (p0.p + pt.p);
  p0.meta = {{"kind", "combined"}, {"parts", {p0.meta, pt.meta}}};
  return p0;
}

// ---------------------------------------------------------------------------
// export

inline void write_matrix_csv(const DenseMatrix& m, std::ostream& os) {
  char buf[32];
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j) os << ',';
      std::snprintf(buf, sizeof buf, "%.17g", m(i, j));
      os << buf;
    }
    os << '\n';
  }
}

inline void write_matrix_csv(const DenseMatrix& m, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  write_matrix_csv(m, os);
}

inline nlohmann::json affinity_descriptor(const AffinityMatrix& m, const std::string& dataset_hash) {
  return {{"n", m.n()}, {"symmetric", m.symmetric}, {"dataset_hash", dataset_hash}, {"construction", m.meta}};
}

}  // namespace v1g
