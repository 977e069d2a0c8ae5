#pragma once

// Seeded generators for the synthetic datasets, with ground-truth labels.
// Units are sampled along curves whose tangent at each sample is the X1
// direction (-sin theta, cos theta) of that sample.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "v1g/affinity.hpp"
#include "v1g/feature_space.hpp"
#include "v1g/rng.hpp"

namespace v1g {

struct LabeledDataset {
  std::vector<FeaturePoint> points;
  std::vector<int> truth;         // 0 background, 1..U units
  std::vector<double> arc_pos;    // arc length from the unit start; NaN off units
  std::vector<double> arc_len;    // total length of the point's unit; NaN off units
  nlohmann::json meta = nlohmann::json::object();

  std::size_t size() const { return points.size(); }
  int units() const { return truth.empty() ? 0 : *std::max_element(truth.begin(), truth.end()); }

  void push(const FeaturePoint& p, int label, double pos = std::numeric_limits<double>::quiet_NaN(),
            double len = std::numeric_limits<double>::quiet_NaN()) {
    points.push_back(p);
    truth.push_back(label);
    arc_pos.push_back(pos);
    arc_len.push_back(len);
  }
};

struct Domain {
  double width = 200.0;
  double height = 200.0;
  bool contains(double x, double y) const { return x >= 0.0 && x < width && y >= 0.0 && y < height; }
};

inline nlohmann::json to_json(const Domain& d) { return {{"width", d.width}, {"height", d.height}}; }

namespace detail {
// stream ids per purpose
enum : std::uint64_t { kCloudStream = 1, kBackgroundStream = 2, kVelocityStream = 3, kSceneStream = 4 };
}  // namespace detail

// ---------------------------------------------------------------------------
// Gaussian clouds

struct CloudSpec {
  double cx, cy;
  int count;
};

/// Clouds labelled 1..C in the given order plus uniform noise labelled 0.
/// Points carry theta = 0; only positions are meaningful.
inline LabeledDataset gen_gaussian_clouds(const std::vector<CloudSpec>& clouds, double spread, int n_noise,
                                          Domain domain, std::uint64_t seed) {
  if (!(spread >= 0.0) || n_noise < 0) throw std::invalid_argument("gen_gaussian_clouds: bad parameters");
  if (!std::isfinite(domain.width) || !std::isfinite(domain.height) || domain.width <= 0 || domain.height <= 0)
    throw std::invalid_argument("gen_gaussian_clouds: domain must be finite");
  LabeledDataset ds;
  RandomStream rng(seed, detail::kCloudStream);
  for (std::size_t c = 0; c < clouds.size(); ++c)
    for (int i = 0; i < clouds[c].count; ++i) {
      const double x = clouds[c].cx + spread * rng.normal();
      const double y = clouds[c].cy + spread * rng.normal();
      ds.push(FeaturePoint::m3(x, y, 0.0), static_cast<int>(c) + 1);
    }
  for (int i = 0; i < n_noise; ++i) {
    const double x = rng.uniform(0.0, domain.width);
    const double y = rng.uniform(0.0, domain.height);
    ds.push(FeaturePoint::m3(x, y, 0.0), 0);
  }
  nlohmann::json cj = nlohmann::json::array();
  for (const auto& c : clouds) cj.push_back({{"cx", c.cx}, {"cy", c.cy}, {"count", c.count}});
  ds.meta = {{"generator", "gaussian_clouds"}, {"clouds", cj},    {"spread", spread},
             {"n_noise", n_noise},             {"domain", to_json(domain)}, {"seed", seed}};
  return ds;
}

/// Three clouds on an equilateral triangle of side `distance` centred in the
/// domain.
inline std::vector<CloudSpec> triangle_clouds(Domain d, double distance, int count) {
  const double cx = d.width / 2, cy = d.height / 2, r = distance / std::sqrt(3.0);
  std::vector<CloudSpec> out;
  for (int k = 0; k < 3; ++k) {
    const double a = kPi / 2 + k * kTwoPi / 3;
    out.push_back({cx + r * std::cos(a), cy + r * std::sin(a), count});
  }
  return out;
}

// ---------------------------------------------------------------------------
// arcs and segment fields

/// Circle arc of signed curvature k and length L, placed by the position and
/// tangent angle of its midpoint. Samples are evenly spaced in arc length,
/// endpoints included.
struct ArcSpec {
  double curvature = 0.0;
  double length = 100.0;
  double cx = 100.0;
  double cy = 100.0;
  double theta_mid = 0.0;
  int samples = 20;

  void validate() const {
    if (samples < 2) throw std::invalid_argument("ArcSpec: samples must be >= 2");
    if (!(length > 0.0)) throw std::invalid_argument("ArcSpec: length must be > 0");
    if (std::abs(curvature) * length >= kTwoPi) throw std::invalid_argument("ArcSpec: arc overlaps itself");
  }

  double theta_at(double s) const { return theta_mid + curvature * (s - 0.5 * length); }

  /// Position at arc length s from the start.
  std::array<double, 2> point_at(double s) const {
    const double u = s - 0.5 * length;  // signed distance from the midpoint
    if (std::abs(curvature) < 1e-12) return {cx - u * std::sin(theta_mid), cy + u * std::cos(theta_mid)};
    const double k = curvature;
    return {cx + (std::cos(theta_mid + k * u) - std::cos(theta_mid)) / k,
            cy + (std::sin(theta_mid + k * u) - std::sin(theta_mid)) / k};
  }
};

inline nlohmann::json to_json(const ArcSpec& a) {
  return {{"curvature", a.curvature}, {"length", a.length},       {"cx", a.cx},
          {"cy", a.cy},               {"theta_mid", a.theta_mid}, {"samples", a.samples}};
}

inline ArcSpec arc_from_json(const nlohmann::json& j) {
  ArcSpec a;
  a.curvature = j.at("curvature").get<double>();
  a.length = j.at("length").get<double>();
  a.cx = j.at("cx").get<double>();
  a.cy = j.at("cy").get<double>();
  a.theta_mid = j.at("theta_mid").get<double>();
  a.samples = j.at("samples").get<int>();
  return a;
}

namespace detail {

// Adds r uniformly placed, uniformly oriented background elements that do not
// share a lattice cell with any existing point. Each element gets up to 100
// draws; the number of elements given up on is returned.
inline int add_background(LabeledDataset& ds, int r, Domain domain, const GridSpec& lattice, RandomStream& rng) {
  std::unordered_set<LatticeKey, LatticeKeyHash> used;
  for (const auto& p : ds.points) used.insert(lattice_key(FeaturePoint::m3(p.x(), p.y(), p.theta()), lattice));
  int dropped = 0;
  for (int i = 0; i < r; ++i) {
    bool placed = false;
    for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
      const FeaturePoint p = FeaturePoint::m3(rng.uniform(0.0, domain.width), rng.uniform(0.0, domain.height),
                                              rng.uniform(0.0, kTwoPi));
      if (used.insert(lattice_key(p, lattice)).second) {
        ds.push(p, 0);
        placed = true;
      }
    }
    if (!placed) ++dropped;
  }
  return dropped;
}

inline void add_arc(LabeledDataset& ds, const ArcSpec& a, int label, Domain domain) {
  a.validate();
  for (int i = 0; i < a.samples; ++i) {
    const double s = a.length * i / (a.samples - 1);
    const auto xy = a.point_at(s);
    if (!domain.contains(xy[0], xy[1])) throw std::invalid_argument("unit sample outside the domain");
    ds.push(FeaturePoint::m3(xy[0], xy[1], a.theta_at(s)), label, s, a.length);
  }
}

}  // namespace detail

/// Units along arcs (labels 1..U in order) among r random segments on M3.
inline LabeledDataset gen_segment_field(const std::vector<ArcSpec>& units, int r, Domain domain, std::uint64_t seed,
                                        const GridSpec& lattice = centred_lattice(Manifold::M3)) {
  if (r < 0) throw std::invalid_argument("gen_segment_field: r must be >= 0");
  LabeledDataset ds;
  for (std::size_t u = 0; u < units.size(); ++u) detail::add_arc(ds, units[u], static_cast<int>(u) + 1, domain);
  if (auto hit = find_collision(ds.points, lattice))
    throw std::invalid_argument("gen_segment_field: unit samples " + std::to_string(hit->first) + " and " +
                                std::to_string(hit->second) + " share a grid cell");
  RandomStream rng(seed, detail::kBackgroundStream);
  const int dropped = detail::add_background(ds, r, domain, lattice, rng);
  nlohmann::json uj = nlohmann::json::array();
  for (const auto& a : units) uj.push_back(to_json(a));
  ds.meta = {{"generator", "segment_field"}, {"units", uj},    {"r", r},
             {"domain", to_json(domain)},    {"seed", seed},   {"dropped_background", dropped},
             {"lattice", to_json(lattice)}};
  return ds;
}

/// Two arcs of curvature k and length L side by side in the domain, bending
/// in opposite directions.
inline std::vector<ArcSpec> sk_units(double k, double length, int samples, Domain d = {}) {
  ArcSpec a{k, length, 0.3 * d.width, 0.5 * d.height, 0.0, samples};
  ArcSpec b{k, length, 0.7 * d.width, 0.5 * d.height, kPi, samples};
  return {a, b};
}

/// A semicircle of curvature k (bulging up, top at `top`) above a horizontal
/// straight segment at height `line_y`.
inline std::vector<ArcSpec> semicircle_and_line(double k, int semi_samples, double line_length, int line_samples,
                                                double top, double line_y, Domain d = {}) {
  const double radius = 1.0 / k;
  ArcSpec semi{k, kPi * radius, 0.5 * d.width, top, kPi / 2, semi_samples};
  ArcSpec line{0.0, line_length, 0.5 * d.width, line_y, -kPi / 2, line_samples};
  return {semi, line};
}

// ---------------------------------------------------------------------------
// lemniscate

/// Lemniscate of Bernoulli with half-width `scale` centred in the domain,
/// sampled evenly in arc length; a single closed unit among r segments.
inline LabeledDataset gen_lemniscate(double scale, int samples, int r, Domain domain, std::uint64_t seed,
                                     const GridSpec& lattice = centred_lattice(Manifold::M3)) {
  if (samples < 4 || !(scale > 0.0)) throw std::invalid_argument("gen_lemniscate: bad parameters");
  const double cx = domain.width / 2, cy = domain.height / 2;
  auto pos = [&](double t) {
    const double s = std::sin(t), c = std::cos(t), d = 1.0 + s * s;
    return std::array<double, 2>{cx + scale * c / d, cy + scale * s * c / d};
  };
  // arc-length table
  const int fine = 20000;
  std::vector<double> ts(fine + 1), len(fine + 1, 0.0);
  for (int i = 0; i <= fine; ++i) {
    ts[i] = kTwoPi * i / fine;
    if (i) {
      const auto a = pos(ts[i - 1]), b = pos(ts[i]);
      len[i] = len[i - 1] + std::hypot(b[0] - a[0], b[1] - a[1]);
    }
  }
  const double total = len[fine];
  LabeledDataset ds;
  for (int k = 0; k < samples; ++k) {
    const double target = total * k / samples;
    const auto it = std::lower_bound(len.begin(), len.end(), target);
    const auto i = static_cast<std::size_t>(std::max<std::ptrdiff_t>(1, it - len.begin()));
    const double f = (target - len[i - 1]) / std::max(len[i] - len[i - 1], 1e-300);
    const double t = ts[i - 1] + f * (ts[i] - ts[i - 1]);
    const auto p = pos(t);
    const double h = 1e-6;
    const auto p1 = pos(t + h), p0 = pos(t - h);
    const double dx = p1[0] - p0[0], dy = p1[1] - p0[1];
    if (!domain.contains(p[0], p[1])) throw std::invalid_argument("gen_lemniscate: curve leaves the domain");
    ds.push(FeaturePoint::m3(p[0], p[1], std::atan2(-dx, dy)), 1, target, total);
  }
  if (auto hit = find_collision(ds.points, lattice))
    throw std::invalid_argument("gen_lemniscate: samples " + std::to_string(hit->first) + " and " +
                                std::to_string(hit->second) + " share a grid cell");
  RandomStream rng(seed, detail::kBackgroundStream);
  const int dropped = detail::add_background(ds, r, domain, lattice, rng);
  ds.meta = {{"generator", "lemniscate"}, {"scale", scale}, {"samples", samples}, {"r", r},
             {"domain", to_json(domain)}, {"seed", seed},   {"dropped_background", dropped},
             {"length", total}};
  return ds;
}

// ---------------------------------------------------------------------------
// velocities

/// Unit points get v = V sin(pi s / L) at arc position s; background points
/// a uniform speed in [0, V]. Returns points on M0.
inline LabeledDataset assign_velocity_sinusoidal(const LabeledDataset& in, double V, std::uint64_t seed) {
  if (!(V >= 0.0)) throw std::invalid_argument("assign_velocity_sinusoidal: V must be >= 0");
  LabeledDataset out = in;
  RandomStream rng(seed, detail::kVelocityStream);
  for (std::size_t i = 0; i < in.size(); ++i) {
    const auto& p = in.points[i];
    double v;
    if (in.truth[i] > 0) {
      if (!std::isfinite(in.arc_pos[i])) throw std::invalid_argument("assign_velocity_sinusoidal: unit point without arc position");
      v = V * std::sin(kPi * in.arc_pos[i] / in.arc_len[i]);
      v = std::clamp(v, 0.0, V);
    } else {
      v = rng.uniform() * V;
    }
    out.points[i] = FeaturePoint::m0(p.x(), p.y(), p.theta(), v);
  }
  out.meta["velocity"] = {{"profile", "sinusoidal"}, {"V", V}, {"seed", seed}};
  return out;
}

// ---------------------------------------------------------------------------
// moving scene

struct SceneParams {
  int frames = 32;
  Domain domain{400.0, 300.0};
  double circle_curvature = 0.02;
  int circle_samples = 40;
  double circle_speed = 7.5;   // along +x
  double circle_x0 = 80.0;
  double circle_y = 150.0;
  int bar_samples = 8;
  double bar_length = 35.0;
  double bar_speed = 3.75;     // along -x
  double bar_x0 = 330.0;
  double bar_y[2] = {50.0, 250.0};
  double v_max = 10.0;         // background speeds in [0, v_max)

  nlohmann::json to_json() const {
    return {{"frames", frames},
            {"domain", v1g::to_json(domain)},
            {"circle_curvature", circle_curvature},
            {"circle_samples", circle_samples},
            {"circle_speed", circle_speed},
            {"circle_x0", circle_x0},
            {"circle_y", circle_y},
            {"bar_samples", bar_samples},
            {"bar_length", bar_length},
            {"bar_speed", bar_speed},
            {"bar_x0", bar_x0},
            {"bar_y", {bar_y[0], bar_y[1]}},
            {"v_max", v_max}};
  }
};

namespace detail {

// Element moving rigidly with velocity (vx, vy): the local feature keeps the
// normal component as v, with theta turned by pi when it points backwards.
// v is the signed speed along the normal (cos theta, sin theta).
inline FeaturePoint moving_element(double x, double y, double t, double theta, double vx, double vy) {
  return FeaturePoint::mt(x, y, t, theta, vx * std::cos(theta) + vy * std::sin(theta));
}

inline double wrap_coord(double x, double w) {
  double r = std::fmod(x, w);
  if (r < 0) r += w;
  return r;
}

}  // namespace detail

/// Circle (label 1) and two vertical bars (labels 2, 3) translating in
/// opposite directions for `frames` frames, plus r background elements each
/// moving along its own normal at a constant random speed. Background
/// positions wrap around the domain.
inline LabeledDataset gen_moving_scene(int r, std::uint64_t seed, const SceneParams& sp = {},
                                       const GridSpec& lattice_in = {}) {
  if (r < 0 || sp.frames < 1) throw std::invalid_argument("gen_moving_scene: bad parameters");
  const GridSpec lattice =
      lattice_in.t ? lattice_in : centred_lattice(Manifold::MT, sp.domain.width, sp.domain.height, sp.frames, sp.v_max);
  LabeledDataset ds;
  const double radius = 1.0 / sp.circle_curvature;
  for (int f = 0; f < sp.frames; ++f) {
    const double t = f;
    const double ccx = sp.circle_x0 + sp.circle_speed * f;
    for (int i = 0; i < sp.circle_samples; ++i) {
      const double psi = kTwoPi * i / sp.circle_samples;
      const auto p = detail::moving_element(ccx + radius * std::cos(psi), sp.circle_y + radius * std::sin(psi), t, psi,
                                            sp.circle_speed, 0.0);
      ds.push(p, 1, radius * psi, kTwoPi * radius);
    }
    const double bx = sp.bar_x0 - sp.bar_speed * f;
    for (int b = 0; b < 2; ++b)
      for (int i = 0; i < sp.bar_samples; ++i) {
        const double s = sp.bar_length * i / (sp.bar_samples - 1);
        const double y = sp.bar_y[b] - 0.5 * sp.bar_length + s;
        ds.push(detail::moving_element(bx, y, t, kPi, -sp.bar_speed, 0.0), 2 + b, s, sp.bar_length);
      }
  }
  for (const auto& p : ds.points)
    if (!sp.domain.contains(p.x(), p.y())) throw std::invalid_argument("gen_moving_scene: unit leaves the domain");
  if (auto hit = find_collision(ds.points, lattice))
    throw std::invalid_argument("gen_moving_scene: unit elements share a grid cell");

  std::unordered_set<LatticeKey, LatticeKeyHash> used;
  for (const auto& p : ds.points) used.insert(lattice_key(p, lattice));
  RandomStream rng(seed, detail::kSceneStream);
  int dropped = 0;
  for (int e = 0; e < r; ++e) {
    bool placed = false;
    for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
      const double x0 = rng.uniform(0.0, sp.domain.width);
      const double y0 = rng.uniform(0.0, sp.domain.height);
      const double th = rng.uniform(0.0, kTwoPi);
      const double v = rng.uniform() * sp.v_max;
      std::vector<FeaturePoint> track;
      std::vector<LatticeKey> keys;
      for (int f = 0; f < sp.frames; ++f) {
        const double x = detail::wrap_coord(x0 + v * f * std::cos(th), sp.domain.width);
        const double y = detail::wrap_coord(y0 + v * f * std::sin(th), sp.domain.height);
        track.push_back(FeaturePoint::mt(x, y, f, th, v));
        keys.push_back(lattice_key(track.back(), lattice));
      }
      bool free = true;
      for (const auto& k : keys) free = free && !used.count(k);
      if (!free) continue;
      for (std::size_t f = 0; f < track.size(); ++f) {
        used.insert(keys[f]);
        ds.push(track[f], 0);
      }
      placed = true;
    }
    if (!placed) ++dropped;
  }
  ds.meta = {{"generator", "moving_scene"}, {"r", r}, {"seed", seed}, {"scene", sp.to_json()},
             {"dropped_background", dropped}};
  return ds;
}

// ---------------------------------------------------------------------------
// serialisation: CSV (x, y, t, theta, v, truth) plus a JSON sidecar

inline std::string dataset_csv(const LabeledDataset& ds) {
  std::ostringstream os;
  os << "x,y,t,theta,v,truth\n";
  char buf[256];
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& p = ds.points[i];
    char tb[40] = "", vb[40] = "";
    if (p.t()) std::snprintf(tb, sizeof tb, "%.17g", *p.t());
    if (p.v()) std::snprintf(vb, sizeof vb, "%.17g", *p.v());
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%s,%.17g,%s,%d\n", p.x(), p.y(), tb, p.theta(), vb, ds.truth[i]);
    os << buf;
  }
  return os.str();
}

inline std::string dataset_hash(const LabeledDataset& ds) { return hex64(fnv1a(dataset_csv(ds))); }

inline void write_dataset(const LabeledDataset& ds, const std::string& csv_path, const std::string& meta_path) {
  const std::string csv = dataset_csv(ds);
  {
    std::ofstream os(csv_path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + csv_path);
    os << csv;
  }
  nlohmann::json meta = ds.meta;
  meta["n"] = ds.size();
  meta["units"] = ds.units();
  meta["dataset_hash"] = hex64(fnv1a(csv));
  nlohmann::json arc = nlohmann::json::array();
  for (std::size_t i = 0; i < ds.size(); ++i)
    arc.push_back(std::isfinite(ds.arc_pos[i]) ? nlohmann::json::array({ds.arc_pos[i], ds.arc_len[i]}) : nlohmann::json());
  meta["arc"] = std::move(arc);
  std::ofstream os(meta_path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + meta_path);
  os << meta.dump(2) << '\n';
}

/// Reads a dataset back; throws when the CSV does not match the hash recorded
/// in the sidecar.
inline LabeledDataset read_dataset(const std::string& csv_path, const std::string& meta_path) {
  std::ifstream is(csv_path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + csv_path);
  std::stringstream buf;
  buf << is.rdbuf();
  const std::string csv = buf.str();
  std::ifstream ms(meta_path);
  if (!ms) throw std::runtime_error("cannot open " + meta_path);
  nlohmann::json meta = nlohmann::json::parse(ms);
  if (meta.contains("dataset_hash") && meta["dataset_hash"] != hex64(fnv1a(csv)))
    throw std::runtime_error("dataset hash mismatch: " + csv_path + " does not match " + meta_path);

  LabeledDataset ds;
  std::istringstream lines(csv);
  std::string line;
  std::getline(lines, line);
  if (line != "x,y,t,theta,v,truth") throw std::runtime_error("unexpected dataset header in " + csv_path);
  std::size_t row = 0;
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (f.size() == 5) f.push_back("");
    if (f.size() != 6) throw std::runtime_error("bad dataset row " + std::to_string(row));
    const double x = std::stod(f[0]), y = std::stod(f[1]), th = std::stod(f[3]);
    const int label = std::stoi(f[5]);
    FeaturePoint p = !f[2].empty() ? FeaturePoint::mt(x, y, std::stod(f[2]), th, std::stod(f[4]))
                     : !f[4].empty() ? FeaturePoint::m0(x, y, th, std::stod(f[4]))
                                     : FeaturePoint::m3(x, y, th);
    double pos = std::numeric_limits<double>::quiet_NaN(), len = pos;
    if (meta.contains("arc") && row < meta["arc"].size() && meta["arc"][row].is_array()) {
      pos = meta["arc"][row][0].get<double>();
      len = meta["arc"][row][1].get<double>();
    }
    ds.push(p, label, pos, len);
    ++row;
  }
  meta.erase("arc");
  ds.meta = std::move(meta);
  return ds;
}

}  // namespace v1g
