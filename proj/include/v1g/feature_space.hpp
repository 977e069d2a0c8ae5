#pragma once

// Feature manifolds M3 = (x, y, theta), M0 = (x, y, theta, v) and
// MT = (x, y, t, theta, v), plus the covering grid used to bin them.

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstdint>
#include <numbers>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <tuple>
#include <unordered_map>
#include <utility>

#include <json.hpp>

namespace v1g {

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

enum class Manifold { M3, M0, MT };

inline std::string_view to_string(Manifold m) {
  switch (m) {
    case Manifold::M3: return "M3";
    case Manifold::M0: return "M0";
    case Manifold::MT: return "MT";
  }
  return "?";
}

/// Wraps an angle into [0, 2pi). Throws std::invalid_argument on NaN/inf.
inline double wrap_angle(double theta) {
  if (!std::isfinite(theta)) throw std::invalid_argument("wrap_angle: non-finite angle");
  double r = std::fmod(theta, kTwoPi);
  if (r < 0.0) r += kTwoPi;
  if (r >= kTwoPi) r -= kTwoPi;
  return r;
}

enum class AngleMode {
  direction,    // angles identified mod 2pi, distance in [0, pi]
  orientation,  // angles identified mod pi, distance in [0, pi/2]
};

inline double angular_distance(double a, double b, AngleMode mode) {
  const double period = mode == AngleMode::direction ? kTwoPi : kPi;
  double d = std::fmod(std::abs(wrap_angle(a) - wrap_angle(b)), period);
  return std::min(d, period - d);
}

/// A stimulus element. Which optional coordinates are present decides the
/// manifold: no t and no v is M3, v only is M0, both is MT.
class FeaturePoint {
 public:
  FeaturePoint() = default;

  static FeaturePoint m3(double x, double y, double theta) {
    return FeaturePoint(x, y, std::nullopt, theta, std::nullopt);
  }
  static FeaturePoint m0(double x, double y, double theta, double v) {
    return FeaturePoint(x, y, std::nullopt, theta, v);
  }
  static FeaturePoint mt(double x, double y, double t, double theta, double v) {
    return FeaturePoint(x, y, t, theta, v);
  }

  double x() const { return x_; }
  double y() const { return y_; }
  double theta() const { return theta_; }
  const std::optional<double>& t() const { return t_; }
  const std::optional<double>& v() const { return v_; }

  Manifold manifold() const {
    if (t_) return Manifold::MT;
    if (v_) return Manifold::M0;
    return Manifold::M3;
  }

  FeaturePoint with_v(double v) const { return FeaturePoint(x_, y_, t_, theta_, v); }
  FeaturePoint with_t(double t) const { return FeaturePoint(x_, y_, t, theta_, v_); }
  FeaturePoint without_v() const { return FeaturePoint(x_, y_, std::nullopt, theta_, std::nullopt); }

  bool operator==(const FeaturePoint&) const = default;

 private:
  FeaturePoint(double x, double y, std::optional<double> t, double theta, std::optional<double> v)
      : x_(x), y_(y), t_(t), theta_(wrap_angle(theta)), v_(v) {
    if (!std::isfinite(x) || !std::isfinite(y)) throw std::invalid_argument("FeaturePoint: non-finite position");
    if (v_ && !std::isfinite(*v_)) throw std::invalid_argument("FeaturePoint: v must be finite");
    if (t_ && !(std::isfinite(*t_) && *t_ >= 0.0)) throw std::invalid_argument("FeaturePoint: t must be finite and >= 0");
    if (t_ && !v_) throw std::invalid_argument("FeaturePoint: a time coordinate requires a velocity");
  }

  double x_ = 0.0;
  double y_ = 0.0;
  std::optional<double> t_;
  double theta_ = 0.0;
  std::optional<double> v_;
};

/// One binned dimension: bins [lo + i*width, lo + (i+1)*width), i < count.
struct Axis {
  double lo = 0.0;
  double width = 1.0;
  int count = 1;

  double hi() const { return lo + width * count; }
  double center(int i) const { return lo + (i + 0.5) * width; }
  bool operator==(const Axis&) const = default;
};

struct CellIndex {
  int x = 0;
  int y = 0;
  int t = 0;
  int theta = 0;
  int v = 0;
  auto operator<=>(const CellIndex&) const = default;
};

/// Covering grid. The angular axis is periodic and always spans 2pi; its lo
/// value is the angle where bin 0 starts.
/// Angular resolution used unless a caller asks for another.
inline constexpr int kThetaBins = 72;

struct GridSpec {
  Axis x{0.0, 1.0, 200};
  Axis y{0.0, 1.0, 200};
  Axis theta{0.0, kTwoPi / kThetaBins, kThetaBins};
  std::optional<Axis> t;
  std::optional<Axis> v;

  bool operator==(const GridSpec&) const = default;

  Manifold manifold() const {
    if (t) return Manifold::MT;
    if (v) return Manifold::M0;
    return Manifold::M3;
  }

  void validate() const {
    auto check = [](const Axis& a, std::string_view name) {
      if (!(a.width > 0.0) || !std::isfinite(a.width) || !std::isfinite(a.lo) || a.count < 1)
        throw std::invalid_argument("GridSpec: invalid axis " + std::string(name));
    };
    check(x, "x");
    check(y, "y");
    check(theta, "theta");
    if (t) check(*t, "t");
    if (v) check(*v, "v");
    if (theta.count < 4) throw std::invalid_argument("GridSpec: n_theta must be >= 4");
    if (std::abs(theta.width * theta.count - kTwoPi) > 1e-9)
      throw std::invalid_argument("GridSpec: angular bins must span 2pi");
    if (t && !v) throw std::invalid_argument("GridSpec: a time axis requires a velocity axis");
  }

  /// Default resolution over a [0, width) x [0, height) domain: unit pixels,
  /// kThetaBins angular bins, dv = 0.5 on [-v_max, v_max] (signed normal speed), one bin per frame.
  static GridSpec for_domain(Manifold m, double width = 200.0, double height = 200.0,
                             int frames = 1, double v_max = 10.0) {
    GridSpec g;
    g.x = Axis{0.0, 1.0, static_cast<int>(std::ceil(width))};
    g.y = Axis{0.0, 1.0, static_cast<int>(std::ceil(height))};
    g.theta = Axis{0.0, kTwoPi / kThetaBins, kThetaBins};
    if (m != Manifold::M3) {
      const int nv = static_cast<int>(std::ceil(v_max / 0.5));
      g.v = Axis{-0.5 * nv, 0.5, 2 * nv};
    }
    if (m == Manifold::MT) g.t = Axis{0.0, 1.0, frames};
    return g;
  }
};

namespace detail {

inline int bin_of(const Axis& a, double value, std::string_view name) {
  const double r = (value - a.lo) / a.width;
  if (!(r >= 0.0) || r >= a.count) throw std::out_of_range("quantize: " + std::string(name) + " out of grid bounds");
  return std::min(static_cast<int>(std::floor(r)), a.count - 1);
}

inline int theta_bin(const Axis& a, double theta) {
  const double r = wrap_angle(theta - a.lo) / a.width;
  return std::clamp(static_cast<int>(std::floor(r)), 0, a.count - 1);
}

}  // namespace detail

/// Cell containing p. Dimensions the grid does not have are ignored; a grid
/// dimension the point lacks is an error.
inline CellIndex quantize(const FeaturePoint& p, const GridSpec& g) {
  CellIndex c;
  c.x = detail::bin_of(g.x, p.x(), "x");
  c.y = detail::bin_of(g.y, p.y(), "y");
  c.theta = detail::theta_bin(g.theta, p.theta());
  if (g.t) {
    if (!p.t()) throw std::invalid_argument("quantize: grid has a time axis but point has no t");
    c.t = detail::bin_of(*g.t, *p.t(), "t");
  }
  if (g.v) {
    if (!p.v()) throw std::invalid_argument("quantize: grid has a velocity axis but point has no v");
    c.v = detail::bin_of(*g.v, *p.v(), "v");
  }
  return c;
}

/// Same as quantize but returns nullopt instead of throwing for positions
/// outside the grid.
inline std::optional<CellIndex> try_quantize(const FeaturePoint& p, const GridSpec& g) {
  try {
    return quantize(p, g);
  } catch (const std::out_of_range&) {
    return std::nullopt;
  }
}

inline FeaturePoint cell_center(const CellIndex& c, const GridSpec& g) {
  const double th = g.theta.center(c.theta);
  if (g.t) return FeaturePoint::mt(g.x.center(c.x), g.y.center(c.y), g.t->center(c.t), th, g.v->center(c.v));
  if (g.v) return FeaturePoint::m0(g.x.center(c.x), g.y.center(c.y), th, g.v->center(c.v));
  return FeaturePoint::m3(g.x.center(c.x), g.y.center(c.y), th);
}

inline bool in_bounds(const CellIndex& c, const GridSpec& g) {
  auto ok = [](int i, int n) { return i >= 0 && i < n; };
  return ok(c.x, g.x.count) && ok(c.y, g.y.count) && ok(c.theta, g.theta.count) &&
         ok(c.t, g.t ? g.t->count : 1) && ok(c.v, g.v ? g.v->count : 1);
}

/// Mixed-radix packing of an in-bounds cell into one integer key.
inline std::uint64_t pack(const CellIndex& c, const GridSpec& g) {
  std::uint64_t k = static_cast<std::uint64_t>(c.x);
  k = k * static_cast<std::uint64_t>(g.y.count) + static_cast<std::uint64_t>(c.y);
  k = k * static_cast<std::uint64_t>(g.t ? g.t->count : 1) + static_cast<std::uint64_t>(c.t);
  k = k * static_cast<std::uint64_t>(g.theta.count) + static_cast<std::uint64_t>(c.theta);
  k = k * static_cast<std::uint64_t>(g.v ? g.v->count : 1) + static_cast<std::uint64_t>(c.v);
  return k;
}

inline CellIndex unpack(std::uint64_t k, const GridSpec& g) {
  CellIndex c;
  const auto nv = static_cast<std::uint64_t>(g.v ? g.v->count : 1);
  const auto nth = static_cast<std::uint64_t>(g.theta.count);
  const auto nt = static_cast<std::uint64_t>(g.t ? g.t->count : 1);
  const auto ny = static_cast<std::uint64_t>(g.y.count);
  c.v = static_cast<int>(k % nv);
  k /= nv;
  c.theta = static_cast<int>(k % nth);
  k /= nth;
  c.t = static_cast<int>(k % nt);
  k /= nt;
  c.y = static_cast<int>(k % ny);
  k /= ny;
  c.x = static_cast<int>(k);
  return c;
}

/// Index of the cell of an unbounded lattice with the grid's bin widths and
/// offsets. Used for the at-most-one-point-per-cell compatibility rule.
struct LatticeKey {
  std::int64_t x, y, t, theta, v;
  bool operator==(const LatticeKey&) const = default;
};

struct LatticeKeyHash {
  std::size_t operator()(const LatticeKey& k) const noexcept {
    std::uint64_t h = 1469598103934665603ULL;
    for (std::int64_t part : {k.x, k.y, k.t, k.theta, k.v}) {
      h ^= static_cast<std::uint64_t>(part);
      h *= 1099511628211ULL;
    }
    return static_cast<std::size_t>(h);
  }
};

inline LatticeKey lattice_key(const FeaturePoint& p, const GridSpec& g) {
  auto f = [](const Axis& a, double value) { return static_cast<std::int64_t>(std::floor((value - a.lo) / a.width)); };
  LatticeKey k{f(g.x, p.x()), f(g.y, p.y()), 0, detail::theta_bin(g.theta, p.theta()), 0};
  if (g.t && p.t()) k.t = f(*g.t, *p.t());
  if (g.v && p.v()) k.v = f(*g.v, *p.v());
  return k;
}

/// First pair of points sharing a lattice cell, if any.
inline std::optional<std::pair<std::size_t, std::size_t>> find_collision(std::span<const FeaturePoint> points,
                                                                         const GridSpec& g) {
  std::unordered_map<LatticeKey, std::size_t, LatticeKeyHash> seen;
  seen.reserve(points.size() * 2);
  for (std::size_t i = 0; i < points.size(); ++i) {
    auto [it, inserted] = seen.emplace(lattice_key(points[i], g), i);
    if (!inserted) return std::pair{it->second, i};
  }
  return std::nullopt;
}

inline nlohmann::json to_json(const Axis& a) { return {{"lo", a.lo}, {"width", a.width}, {"count", a.count}}; }

inline Axis axis_from_json(const nlohmann::json& j) {
  return Axis{j.at("lo").get<double>(), j.at("width").get<double>(), j.at("count").get<int>()};
}

inline nlohmann::json to_json(const GridSpec& g) {
  nlohmann::json j;
  j["x"] = to_json(g.x);
  j["y"] = to_json(g.y);
  j["theta"] = to_json(g.theta);
  j["t"] = g.t ? to_json(*g.t) : nlohmann::json(nullptr);
  j["v"] = g.v ? to_json(*g.v) : nlohmann::json(nullptr);
  return j;
}

inline GridSpec grid_from_json(const nlohmann::json& j) {
  GridSpec g;
  g.x = axis_from_json(j.at("x"));
  g.y = axis_from_json(j.at("y"));
  g.theta = axis_from_json(j.at("theta"));
  if (j.contains("t") && !j["t"].is_null()) g.t = axis_from_json(j["t"]);
  if (j.contains("v") && !j["v"].is_null()) g.v = axis_from_json(j["v"]);
  g.validate();
  return g;
}

}  // namespace v1g
