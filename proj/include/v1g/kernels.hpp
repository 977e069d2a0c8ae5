#pragma once

// Monte Carlo estimation of the connectivity kernels on M3 (SE2), M0
// (Contour) and MT (Trajectory). A kernel is tabulated once from a canonical
// base state and evaluated between arbitrary points by the rigid motion that
// carries the source point onto the base.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "v1g/feature_space.hpp"
#include "v1g/parallel.hpp"
#include "v1g/rng.hpp"

namespace v1g {

enum class ProcessKind { SE2, Contour, Trajectory };

inline std::string_view to_string(ProcessKind k) {
  switch (k) {
    case ProcessKind::SE2: return "se2";
    case ProcessKind::Contour: return "contour";
    case ProcessKind::Trajectory: return "trajectory";
  }
  return "?";
}

inline ProcessKind process_kind_from_string(std::string_view s) {
  if (s == "se2" || s == "m3") return ProcessKind::SE2;
  if (s == "contour" || s == "m0") return ProcessKind::Contour;
  if (s == "trajectory" || s == "mt") return ProcessKind::Trajectory;
  throw std::invalid_argument("unknown process kind: " + std::string(s));
}

struct ProcessSpec {
  ProcessKind kind = ProcessKind::SE2;
  double kappa = 0.0;  // angular diffusion per unit step
  double alpha = 0.0;  // velocity diffusion per unit step; unused for SE2

  bool has_velocity() const { return kind != ProcessKind::SE2; }

  Manifold manifold() const {
    switch (kind) {
      case ProcessKind::SE2: return Manifold::M3;
      case ProcessKind::Contour: return Manifold::M0;
      case ProcessKind::Trajectory: return Manifold::MT;
    }
    return Manifold::M3;
  }

  // Zero diffusion is accepted: it degenerates the kernel to a horizontal curve.
  void validate() const {
    if (!std::isfinite(kappa) || kappa < 0.0) throw std::invalid_argument("ProcessSpec: kappa must be >= 0");
    if (has_velocity() && (!std::isfinite(alpha) || alpha < 0.0))
      throw std::invalid_argument("ProcessSpec: alpha must be >= 0");
  }

  bool operator==(const ProcessSpec&) const = default;
};

/// Deterministic part of one unit step, in (x, y, t, theta, v) components.
struct Tangent {
  double dx = 0.0;
  double dy = 0.0;
  double dt = 0.0;
  double dtheta = 0.0;
  double dv = 0.0;
};

inline Tangent drift(const ProcessSpec& process, const FeaturePoint& state) {
  const double s = std::sin(state.theta());
  const double c = std::cos(state.theta());
  switch (process.kind) {
    case ProcessKind::SE2:
    case ProcessKind::Contour:
      return {-s, c, 0.0, 0.0, 0.0};
    case ProcessKind::Trajectory: {
      if (!state.v()) throw std::invalid_argument("drift: trajectory process needs a velocity");
      const double v = *state.v();
      return {v * c, v * s, 1.0, 0.0, 0.0};
    }
  }
  return {};
}

/// Relative covering grid centred on the canonical base state: spatial cells
/// are centred on integer multiples of dx, the base angle sits at the centre
/// of angular bin 0, velocity bins cover [-v_max, v_max].
inline GridSpec kernel_grid(const ProcessSpec& process, int H, double v_max = 10.0, double dx = 1.0,
                            int n_theta = kThetaBins, double dv = 0.5) {
  if (H < 1) throw std::invalid_argument("kernel_grid: H must be >= 1");
  const double speed = process.kind == ProcessKind::Trajectory ? std::max(1.0, v_max) : 1.0;
  const int radius = static_cast<int>(std::ceil(H * speed / dx - 1e-9));
  GridSpec g;
  g.x = Axis{-(radius + 0.5) * dx, dx, 2 * radius + 1};
  g.y = g.x;
  const double dtheta = kTwoPi / n_theta;
  g.theta = Axis{-0.5 * dtheta, dtheta, n_theta};
  if (process.has_velocity()) {
    const int nv = static_cast<int>(std::ceil(v_max / dv - 1e-9));
    g.v = Axis{-nv * dv, dv, 2 * nv};
  }
  if (process.kind == ProcessKind::Trajectory) g.t = Axis{-0.5, 1.0, H + 1};
  return g;
}

struct KernelParams {
  int H = 40;
  std::int64_t N = 100000;
  double ds = 1.0;
  std::uint64_t seed = 0;
  GridSpec grid;
  double spill_tolerance = 0.0;  // allowed fraction of path states outside the grid

  double v_max() const { return grid.v ? grid.v->hi() : 0.0; }

  void validate() const {
    if (H < 1) throw std::invalid_argument("KernelParams: H must be >= 1");
    if (N < 1) throw std::invalid_argument("KernelParams: N must be >= 1");
    if (ds != 1.0) throw std::invalid_argument("KernelParams: only ds = 1 is supported");
    if (!(spill_tolerance >= 0.0 && spill_tolerance < 1.0))
      throw std::invalid_argument("KernelParams: spill_tolerance must be in [0, 1)");
    grid.validate();
  }

  static KernelParams make(const ProcessSpec& process, int H, std::int64_t N, std::uint64_t seed,
                           double v_max = 10.0) {
    KernelParams p;
    p.H = H;
    p.N = N;
    p.seed = seed;
    p.grid = kernel_grid(process, H, v_max);
    return p;
  }
};

namespace detail {

struct State {
  double x, y, t, theta, v;
};

// Folds v back into [-v_max, v_max] by reflection at both ends.
inline double reflect(double v, double v_max) {
  if (v_max <= 0.0) return 0.0;
  const double width = 2.0 * v_max;
  double r = std::fmod(v + v_max, 2.0 * width);
  if (r < 0.0) r += 2.0 * width;
  return (r <= width ? r : 2.0 * width - r) - v_max;
}

inline State to_state(const FeaturePoint& p) {
  return {p.x(), p.y(), p.t().value_or(0.0), p.theta(), p.v().value_or(0.0)};
}

inline FeaturePoint from_state(const State& s, ProcessKind kind) {
  switch (kind) {
    case ProcessKind::SE2: return FeaturePoint::m3(s.x, s.y, s.theta);
    case ProcessKind::Contour: return FeaturePoint::m0(s.x, s.y, s.theta, s.v);
    case ProcessKind::Trajectory: return FeaturePoint::mt(s.x, s.y, s.t, s.theta, s.v);
  }
  return {};
}

// One Euler-Maruyama step with unit ds; the advection uses the pre-step state.
inline void step(State& s, ProcessKind kind, double kappa, double alpha, double v_max, double n_theta,
                 double n_v) {
  const double sn = std::sin(s.theta);
  const double cs = std::cos(s.theta);
  if (kind == ProcessKind::Trajectory) {
    s.x += s.v * cs;
    s.y += s.v * sn;
    s.t += 1.0;
  } else {
    s.x -= sn;
    s.y += cs;
  }
  s.theta = wrap_angle(s.theta + kappa * n_theta);
  if (kind != ProcessKind::SE2) s.v = reflect(s.v + alpha * n_v, v_max);
}

inline void check_on_manifold(const ProcessSpec& process, const FeaturePoint& p) {
  if (process.has_velocity() && !p.v()) throw std::invalid_argument("state lacks the velocity coordinate");
}

}  // namespace detail

/// One stochastic path of H+1 states (start included). Noise for path i comes
/// from the counter-based stream (params.seed, i), two gaussians per step.
inline std::vector<FeaturePoint> simulate_path(const ProcessSpec& process, const FeaturePoint& start,
                                               const KernelParams& params, std::uint64_t path_id) {
  process.validate();
  detail::check_on_manifold(process, start);
  RandomStream rng(params.seed, path_id);
  detail::State s = detail::to_state(start);
  std::vector<FeaturePoint> out;
  out.reserve(static_cast<std::size_t>(params.H) + 1);
  out.push_back(detail::from_state(s, process.kind));
  for (int h = 0; h < params.H; ++h) {
    const double n1 = rng.normal();
    const double n2 = rng.normal();
    detail::step(s, process.kind, process.kappa, process.alpha, params.v_max(), n1, n2);
    out.push_back(detail::from_state(s, process.kind));
  }
  return out;
}

struct Controls {
  double theta_rate = 0.0;
  double v_rate = 0.0;
};

/// Integral curve of the same recursion with the noise replaced by constant
/// controls.
inline std::vector<FeaturePoint> horizontal_curve(const ProcessSpec& process, const FeaturePoint& start,
                                                  Controls controls, int H, double v_max = 10.0) {
  detail::check_on_manifold(process, start);
  detail::State s = detail::to_state(start);
  std::vector<FeaturePoint> out;
  out.reserve(static_cast<std::size_t>(H) + 1);
  out.push_back(detail::from_state(s, process.kind));
  for (int h = 0; h < H; ++h) {
    detail::step(s, process.kind, 1.0, 1.0, v_max, controls.theta_rate, controls.v_rate);
    out.push_back(detail::from_state(s, process.kind));
  }
  return out;
}

/// Visit counts from one canonical base state. Weight of a cell is
/// count / (N * H).
struct KernelSlice {
  int base_v_bin = -1;  // -1 for kernels without a velocity fibre
  double base_v = 0.0;
  std::vector<std::uint64_t> keys;  // sorted, packed cell indices
  std::vector<std::uint32_t> counts;

  std::uint64_t total_count() const {
    std::uint64_t s = 0;
    for (auto c : counts) s += c;
    return s;
  }
};

class DiscreteKernel {
 public:
  DiscreteKernel(ProcessSpec process, KernelParams params, std::vector<KernelSlice> slices)
      : process_(process), params_(std::move(params)), slices_(std::move(slices)) {
    std::sort(slices_.begin(), slices_.end(),
              [](const KernelSlice& a, const KernelSlice& b) { return a.base_v_bin < b.base_v_bin; });
  }

  const ProcessSpec& process() const { return process_; }
  const KernelParams& params() const { return params_; }
  const GridSpec& grid() const { return params_.grid; }
  const std::vector<KernelSlice>& slices() const { return slices_; }

  double weight_of_count(std::uint64_t count) const {
    return static_cast<double>(count) / (static_cast<double>(params_.N) * params_.H);
  }

  /// Canonical start state of a slice: origin, theta = 0, v at the bin centre.
  FeaturePoint base_state(const KernelSlice& s) const {
    switch (process_.kind) {
      case ProcessKind::SE2: return FeaturePoint::m3(0.0, 0.0, 0.0);
      case ProcessKind::Contour: return FeaturePoint::m0(0.0, 0.0, 0.0, s.base_v);
      case ProcessKind::Trajectory: return FeaturePoint::mt(0.0, 0.0, 0.0, 0.0, s.base_v);
    }
    return {};
  }

  const KernelSlice* slice_for_bin(int base_v_bin) const {
    auto it = std::lower_bound(slices_.begin(), slices_.end(), base_v_bin,
                               [](const KernelSlice& s, int b) { return s.base_v_bin < b; });
    return it != slices_.end() && it->base_v_bin == base_v_bin ? &*it : nullptr;
  }

  /// Slice used for a source point with velocity v (ignored without a v fibre).
  const KernelSlice& slice_for_velocity(std::optional<double> v) const {
    if (!process_.has_velocity()) return slices_.front();
    if (!v) throw std::invalid_argument("kernel lookup: source point has no velocity");
    const Axis& ax = *params_.grid.v;
    if (!(*v >= ax.lo) || *v > ax.hi()) throw std::out_of_range("kernel lookup: source velocity outside the grid");
    const int bin = std::min(static_cast<int>(std::floor((*v - ax.lo) / ax.width)), ax.count - 1);
    const KernelSlice* s = slice_for_bin(bin);
    if (!s) throw std::out_of_range("kernel lookup: no table for velocity bin " + std::to_string(bin));
    return *s;
  }

  double weight(const KernelSlice& s, std::uint64_t key) const {
    auto it = std::lower_bound(s.keys.begin(), s.keys.end(), key);
    if (it == s.keys.end() || *it != key) return 0.0;
    return weight_of_count(s.counts[static_cast<std::size_t>(it - s.keys.begin())]);
  }

  double weight(const KernelSlice& s, const CellIndex& c) const {
    return in_bounds(c, params_.grid) ? weight(s, pack(c, params_.grid)) : 0.0;
  }

  double total_mass(const KernelSlice& s) const { return weight_of_count(s.total_count()); }

 private:
  ProcessSpec process_;
  KernelParams params_;
  std::vector<KernelSlice> slices_;
};

namespace detail {

inline std::optional<int> axis_bin(const Axis& a, double value) {
  const double r = (value - a.lo) / a.width;
  if (!(r >= 0.0) || r >= a.count) return std::nullopt;
  return std::min(static_cast<int>(std::floor(r)), a.count - 1);
}

// Cell of a path state in the relative grid; nullopt when outside.
inline std::optional<std::uint64_t> state_key(const State& s, ProcessKind kind, const GridSpec& g) {
  CellIndex c;
  auto bx = axis_bin(g.x, s.x);
  auto by = axis_bin(g.y, s.y);
  if (!bx || !by) return std::nullopt;
  c.x = *bx;
  c.y = *by;
  c.theta = theta_bin(g.theta, s.theta);
  if (kind == ProcessKind::Trajectory) {
    auto bt = axis_bin(*g.t, s.t);
    if (!bt) return std::nullopt;
    c.t = *bt;
  }
  if (kind != ProcessKind::SE2) {
    auto bv = axis_bin(*g.v, s.v);
    if (!bv) bv = g.v->count - 1;  // v == v_max after reflection
    c.v = *bv;
  }
  return pack(c, g);
}

inline KernelSlice estimate_slice(const ProcessSpec& process, const KernelParams& params, int base_v_bin,
                                  int jobs) {
  const GridSpec& g = params.grid;
  KernelSlice slice;
  slice.base_v_bin = base_v_bin;
  slice.base_v = base_v_bin >= 0 ? g.v->center(base_v_bin) : 0.0;
  const std::uint64_t stream_seed =
      base_v_bin >= 0 ? derive_seed(params.seed, static_cast<std::uint64_t>(base_v_bin)) : params.seed;

  const auto n_paths = static_cast<std::size_t>(params.N);
  const auto per_path = static_cast<std::size_t>(params.H) + 1;
  const int workers = std::max(1, std::min<int>(jobs, static_cast<int>(n_paths)));
  std::vector<std::vector<std::uint64_t>> chunk_keys(static_cast<std::size_t>(workers));
  std::vector<std::uint64_t> chunk_spill(static_cast<std::size_t>(workers), 0);

  parallel_for(static_cast<std::size_t>(workers), workers, [&](std::size_t w) {
    const std::size_t begin = n_paths * w / static_cast<std::size_t>(workers);
    const std::size_t end = n_paths * (w + 1) / static_cast<std::size_t>(workers);
    auto& keys = chunk_keys[w];
    keys.reserve((end - begin) * per_path);
    for (std::size_t path = begin; path < end; ++path) {
      RandomStream rng(stream_seed, path);
      State s{0.0, 0.0, 0.0, 0.0, slice.base_v};
      for (int h = 0;; ++h) {
        if (auto k = state_key(s, process.kind, g))
          keys.push_back(*k);
        else
          ++chunk_spill[w];
        if (h == params.H) break;
        const double n1 = rng.normal();
        const double n2 = rng.normal();
        step(s, process.kind, process.kappa, process.alpha, params.v_max(), n1, n2);
      }
    }
  });

  std::uint64_t spill = 0;
  std::size_t total = 0;
  for (std::size_t w = 0; w < chunk_keys.size(); ++w) {
    spill += chunk_spill[w];
    total += chunk_keys[w].size();
  }
  const double spill_fraction = static_cast<double>(spill) / static_cast<double>(n_paths * per_path);
  if (spill > 0 && spill_fraction > params.spill_tolerance)
    throw std::runtime_error("estimate_kernel: grid too small, " + std::to_string(spill) +
                             " path states fell outside the covering grid");

  std::vector<std::uint64_t> all;
  all.reserve(total);
  for (auto& k : chunk_keys) {
    all.insert(all.end(), k.begin(), k.end());
    std::vector<std::uint64_t>().swap(k);
  }
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    while (j < all.size() && all[j] == all[i]) ++j;
    slice.keys.push_back(all[i]);
    slice.counts.push_back(static_cast<std::uint32_t>(j - i));
    i = j;
  }
  slice.keys.shrink_to_fit();
  slice.counts.shrink_to_fit();
  return slice;
}

}  // namespace detail

/// Tabulates the kernel. For velocity-bearing processes `base_v_bins` selects
/// the base velocity bins to simulate; empty means every bin of the grid.
inline DiscreteKernel estimate_kernel(const ProcessSpec& process, const KernelParams& params,
                                      std::vector<int> base_v_bins = {}, int jobs = 1) {
  process.validate();
  params.validate();
  if (process.has_velocity() && !params.grid.v) throw std::invalid_argument("estimate_kernel: grid lacks a v axis");
  if (process.kind == ProcessKind::Trajectory && !params.grid.t)
    throw std::invalid_argument("estimate_kernel: grid lacks a t axis");
  std::vector<KernelSlice> slices;
  if (!process.has_velocity()) {
    slices.push_back(detail::estimate_slice(process, params, -1, jobs));
  } else {
    if (base_v_bins.empty())
      for (int b = 0; b < params.grid.v->count; ++b) base_v_bins.push_back(b);
    std::sort(base_v_bins.begin(), base_v_bins.end());
    base_v_bins.erase(std::unique(base_v_bins.begin(), base_v_bins.end()), base_v_bins.end());
    for (int b : base_v_bins) {
      if (b < 0 || b >= params.grid.v->count) throw std::out_of_range("estimate_kernel: base velocity bin out of range");
      slices.push_back(detail::estimate_slice(process, params, b, jobs));
    }
  }
  return DiscreteKernel(process, params, std::move(slices));
}

/// Kernel value between two points: the weight of the cell holding the image
/// of `to` under the motion that maps `from` to the canonical base.
inline double kernel_lookup(const DiscreteKernel& k, const FeaturePoint& from, const FeaturePoint& to) {
  const KernelSlice& slice = k.slice_for_velocity(from.v());
  const GridSpec& g = k.grid();
  const double dx = to.x() - from.x();
  const double dy = to.y() - from.y();
  const double c = std::cos(from.theta());
  const double s = std::sin(from.theta());
  detail::State rel{c * dx + s * dy, -s * dx + c * dy, 0.0, to.theta() - from.theta(), 0.0};
  if (k.process().kind == ProcessKind::Trajectory) {
    if (!from.t() || !to.t()) throw std::invalid_argument("kernel lookup: trajectory kernel needs time coordinates");
    rel.t = *to.t() - *from.t();
  }
  if (k.process().has_velocity()) {
    if (!to.v()) throw std::invalid_argument("kernel lookup: target point has no velocity");
    rel.v = *to.v();
    if (rel.v > g.v->hi() || rel.v < g.v->lo) return 0.0;
  }
  auto key = detail::state_key(rel, k.process().kind, g);
  return key ? k.weight(slice, *key) : 0.0;
}

// ---------------------------------------------------------------------------
// Cache file: "V1GKERN1", u64 header length, JSON header, then per slice
// (in header order) the entries as little-endian (u64 key, u32 count).

inline nlohmann::json kernel_identity(const ProcessSpec& process, const KernelParams& params,
                                      const std::vector<int>& base_v_bins) {
  nlohmann::json j;
  j["process"] = std::string(to_string(process.kind));
  j["kappa"] = process.kappa;
  j["alpha"] = process.has_velocity() ? process.alpha : 0.0;
  j["H"] = params.H;
  j["N"] = params.N;
  j["ds"] = params.ds;
  j["seed"] = params.seed;
  j["grid"] = to_json(params.grid);
  j["spill_tolerance"] = params.spill_tolerance;
  j["base_v_bins"] = base_v_bins;
  return j;
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

inline std::string kernel_cache_key(const ProcessSpec& process, const KernelParams& params,
                                    const std::vector<int>& base_v_bins) {
  return hex64(fnv1a(kernel_identity(process, params, base_v_bins).dump()));
}

inline std::vector<int> slice_bins(const DiscreteKernel& k) {
  std::vector<int> bins;
  if (k.process().has_velocity())
    for (const auto& s : k.slices()) bins.push_back(s.base_v_bin);
  return bins;
}

inline nlohmann::json kernel_header(const DiscreteKernel& k) {
  const auto bins = slice_bins(k);
  nlohmann::json j = kernel_identity(k.process(), k.params(), bins);
  j["cache_key"] = kernel_cache_key(k.process(), k.params(), bins);
  nlohmann::json slices = nlohmann::json::array();
  for (const auto& s : k.slices()) {
    const FeaturePoint b = k.base_state(s);
    slices.push_back({{"base_v_bin", s.base_v_bin},
                      {"base_state", {{"x", b.x()}, {"y", b.y()}, {"theta", b.theta()}, {"v", s.base_v}}},
                      {"entries", s.keys.size()}});
  }
  j["slices"] = std::move(slices);
  return j;
}

namespace detail {
template <typename T>
void write_le(std::ostream& os, T v) {
  unsigned char buf[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<unsigned char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xFF);
  os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}
template <typename T>
T read_le(std::istream& is) {
  unsigned char buf[sizeof(T)];
  is.read(reinterpret_cast<char*>(buf), sizeof(T));
  if (!is) throw std::runtime_error("kernel file truncated");
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return static_cast<T>(v);
}
}  // namespace detail

inline void save_kernel(const DiscreteKernel& k, std::ostream& os) {
  const std::string header = kernel_header(k).dump();
  os.write("V1GKERN1", 8);
  detail::write_le<std::uint64_t>(os, header.size());
  os.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const auto& s : k.slices())
    for (std::size_t i = 0; i < s.keys.size(); ++i) {
      detail::write_le<std::uint64_t>(os, s.keys[i]);
      detail::write_le<std::uint32_t>(os, s.counts[i]);
    }
}

inline void save_kernel(const DiscreteKernel& k, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write kernel file " + path);
  save_kernel(k, os);
  if (!os) throw std::runtime_error("failed writing kernel file " + path);
}

inline DiscreteKernel load_kernel(std::istream& is) {
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, "V1GKERN1", 8) != 0) throw std::runtime_error("not a kernel cache file");
  const auto len = detail::read_le<std::uint64_t>(is);
  std::string text(len, '\0');
  is.read(text.data(), static_cast<std::streamsize>(len));
  if (!is) throw std::runtime_error("kernel file truncated");
  const auto h = nlohmann::json::parse(text);
  ProcessSpec process{process_kind_from_string(h.at("process").get<std::string>()), h.at("kappa").get<double>(),
                      h.at("alpha").get<double>()};
  KernelParams params;
  params.H = h.at("H").get<int>();
  params.N = h.at("N").get<std::int64_t>();
  params.ds = h.at("ds").get<double>();
  params.seed = h.at("seed").get<std::uint64_t>();
  params.grid = grid_from_json(h.at("grid"));
  params.spill_tolerance = h.at("spill_tolerance").get<double>();
  std::vector<KernelSlice> slices;
  for (const auto& sj : h.at("slices")) {
    KernelSlice s;
    s.base_v_bin = sj.at("base_v_bin").get<int>();
    s.base_v = sj.at("base_state").at("v").get<double>();
    const auto n = sj.at("entries").get<std::size_t>();
    s.keys.resize(n);
    s.counts.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      s.keys[i] = detail::read_le<std::uint64_t>(is);
      s.counts[i] = detail::read_le<std::uint32_t>(is);
    }
    slices.push_back(std::move(s));
  }
  return DiscreteKernel(process, params, std::move(slices));
}

inline DiscreteKernel load_kernel(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open kernel file " + path);
  return load_kernel(is);
}

/// Full JSON export: header plus [x, y, t, theta, v, weight] cell-index rows.
inline nlohmann::json kernel_to_json(const DiscreteKernel& k) {
  nlohmann::json j = kernel_header(k);
  nlohmann::json tables = nlohmann::json::array();
  for (const auto& s : k.slices()) {
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t i = 0; i < s.keys.size(); ++i) {
      const CellIndex c = unpack(s.keys[i], k.grid());
      rows.push_back({c.x, c.y, c.t, c.theta, c.v, k.weight_of_count(s.counts[i])});
    }
    tables.push_back({{"base_v_bin", s.base_v_bin}, {"cells", std::move(rows)}});
  }
  j["tables"] = std::move(tables);
  return j;
}

enum class Marginal { xy, xyt, xytheta };

/// Summed projection of one slice. xy gives a dense (y rows, x columns) grid;
/// xyt and xytheta give the nonzero (x, y, third, weight) cells, sorted.
struct MarginalTable {
  Marginal kind = Marginal::xy;
  std::vector<std::vector<double>> dense;                 // xy only
  std::vector<std::tuple<int, int, int, double>> sparse;  // xyt / xytheta
};

inline MarginalTable kernel_marginal(const DiscreteKernel& k, const KernelSlice& s, Marginal kind) {
  const GridSpec& g = k.grid();
  MarginalTable m;
  m.kind = kind;
  if (kind == Marginal::xy) {
    m.dense.assign(static_cast<std::size_t>(g.y.count), std::vector<double>(static_cast<std::size_t>(g.x.count), 0.0));
    for (std::size_t i = 0; i < s.keys.size(); ++i) {
      const CellIndex c = unpack(s.keys[i], g);
      m.dense[static_cast<std::size_t>(c.y)][static_cast<std::size_t>(c.x)] += k.weight_of_count(s.counts[i]);
    }
    return m;
  }
  if (kind == Marginal::xyt && !g.t) throw std::invalid_argument("xyt marginal needs a trajectory kernel");
  std::vector<std::pair<std::uint64_t, std::uint64_t>> acc;  // (packed x,y,third), count
  acc.reserve(s.keys.size());
  for (std::size_t i = 0; i < s.keys.size(); ++i) {
    const CellIndex c = unpack(s.keys[i], g);
    const int third = kind == Marginal::xyt ? c.t : c.theta;
    const std::uint64_t key = (static_cast<std::uint64_t>(c.x) << 40) | (static_cast<std::uint64_t>(c.y) << 20) |
                              static_cast<std::uint64_t>(third);
    acc.emplace_back(key, s.counts[i]);
  }
  std::sort(acc.begin(), acc.end());
  for (std::size_t i = 0; i < acc.size();) {
    std::uint64_t sum = 0;
    std::size_t j = i;
    while (j < acc.size() && acc[j].first == acc[i].first) sum += acc[j++].second;
    const auto key = acc[i].first;
    m.sparse.emplace_back(static_cast<int>(key >> 40), static_cast<int>((key >> 20) & 0xFFFFF),
                          static_cast<int>(key & 0xFFFFF), k.weight_of_count(sum));
    i = j;
  }
  return m;
}

}  // namespace v1g
