#pragma once

// Dataset -> affinity -> labels, with a content-addressed kernel store.

#include <filesystem>
#include <list>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "v1g/affinity.hpp"
#include "v1g/evaluation.hpp"
#include "v1g/kernels.hpp"
#include "v1g/spectral.hpp"
#include "v1g/stimuli.hpp"

namespace v1g {

class MissingKernelError : public std::runtime_error {
 public:
  explicit MissingKernelError(const std::string& path)
      : std::runtime_error("kernel cache entry missing: " + path), path(path) {}
  std::string path;
};

struct KernelConfig {
  ProcessSpec process{ProcessKind::SE2, 0.014, 0.0};
  int H = 40;
  std::int64_t N = 100000;
  std::uint64_t seed = 7;
  double v_max = 10.0;
  int n_theta = kThetaBins;

  KernelParams params() const {
    KernelParams p = KernelParams::make(process, H, N, seed, v_max);
    p.grid = kernel_grid(process, H, v_max, 1.0, n_theta);
    return p;
  }
};

/// Kernels by parameter hash, one table per base velocity bin. Tables are
/// looked up in memory, then on disk, then simulated (unless auto_build is
/// off). Assembled kernels are kept up to a memory budget. Thread safe.
class KernelStore {
 public:
  explicit KernelStore(std::optional<std::filesystem::path> dir = std::nullopt, bool auto_build = true, int jobs = 1)
      : dir_(std::move(dir)), auto_build_(auto_build), jobs_(jobs) {
    if (dir_) std::filesystem::create_directories(*dir_);
  }

  std::shared_ptr<const DiscreteKernel> get(const KernelConfig& cfg, std::vector<int> bins = {}) {
    const KernelParams params = cfg.params();
    if (!cfg.process.has_velocity()) {
      bins = {-1};
    } else {
      if (bins.empty())
        for (int b = 0; b < params.grid.v->count; ++b) bins.push_back(b);
      std::sort(bins.begin(), bins.end());
      bins.erase(std::unique(bins.begin(), bins.end()), bins.end());
    }
    const std::string whole = kernel_cache_key(cfg.process, params, bins);
    std::lock_guard lock(mutex_);
    for (auto it = kernels_.begin(); it != kernels_.end(); ++it)
      if (it->first == whole) {
        auto k = it->second;
        kernels_.splice(kernels_.end(), kernels_, it);  // most recent last
        return k;
      }
    std::vector<KernelSlice> slices;
    for (int b : bins) slices.push_back(slice(cfg, params, b));
    auto k = std::make_shared<const DiscreteKernel>(cfg.process, params, std::move(slices));
    if (keep_assembled_) {
      kernels_.emplace_back(whole, k);
      // drop the oldest kernels beyond the budget; the newest always stays
      while (kernels_.size() > 1 && assembled_bytes() > memory_budget_) kernels_.pop_front();
    }
    return k;
  }

  /// Path of the file holding one table.
  std::optional<std::filesystem::path> slice_path(const KernelConfig& cfg, int bin) const {
    if (!dir_) return std::nullopt;
    const auto params = cfg.params();
    const std::vector<int> one = bin >= 0 ? std::vector<int>{bin} : std::vector<int>{};
    return *dir_ / (kernel_cache_key(cfg.process, params, one) + ".v1gk");
  }

  void keep_assembled(bool on) { keep_assembled_ = on; }
  /// Soft limit on the memory held by assembled kernels.
  void memory_budget(std::size_t bytes) { memory_budget_ = bytes; }
  void clear_memory() {
    std::lock_guard lock(mutex_);
    kernels_.clear();
    slices_.clear();
  }
  std::size_t built() const { return built_; }

 private:
  KernelSlice slice(const KernelConfig& cfg, const KernelParams& params, int bin) {
    const std::vector<int> one = bin >= 0 ? std::vector<int>{bin} : std::vector<int>{};
    const std::string key = kernel_cache_key(cfg.process, params, one);
    // tables are kept in memory only without a disk cache to reread them from
    if (auto it = slices_.find(key); it != slices_.end()) return *it->second;
    std::shared_ptr<KernelSlice> s;
    const auto path = slice_path(cfg, bin);
    if (path && std::filesystem::exists(*path)) {
      DiscreteKernel k = load_kernel(path->string());
      if (kernel_cache_key(k.process(), k.params(), slice_bins(k)) != key)
        throw std::runtime_error("kernel cache entry does not match its name: " + path->string());
      s = std::make_shared<KernelSlice>(k.slices().front());
    } else {
      if (!auto_build_) throw MissingKernelError(path ? path->string() : key);
      DiscreteKernel k = estimate_kernel(cfg.process, params, one, jobs_);
      ++built_;
      if (path) {
        const auto tmp = path->string() + ".tmp";
        save_kernel(k, tmp);
        std::filesystem::rename(tmp, *path);
      }
      s = std::make_shared<KernelSlice>(k.slices().front());
    }
    if (!dir_) slices_[key] = s;
    return *s;
  }

  std::size_t assembled_bytes() const {
    std::size_t b = 0;
    for (const auto& [key, k] : kernels_)
      for (const auto& s : k->slices()) b += s.keys.size() * (sizeof(std::uint64_t) + sizeof(std::uint32_t));
    return b;
  }

  std::optional<std::filesystem::path> dir_;
  bool auto_build_;
  int jobs_;
  bool keep_assembled_ = true;
  std::size_t memory_budget_ = std::size_t{1} << 30;
  std::size_t built_ = 0;
  std::mutex mutex_;
  std::list<std::pair<std::string, std::shared_ptr<const DiscreteKernel>>> kernels_;
  std::map<std::string, std::shared_ptr<KernelSlice>> slices_;
};

// ---------------------------------------------------------------------------

enum class AffinityMode { gaussian, m3, m0, mt_combined };

inline std::string_view to_string(AffinityMode m) {
  switch (m) {
    case AffinityMode::gaussian: return "gaussian";
    case AffinityMode::m3: return "m3";
    case AffinityMode::m0: return "m0";
    case AffinityMode::mt_combined: return "mt_combined";
  }
  return "?";
}

inline AffinityMode affinity_mode_from_string(std::string_view s) {
  if (s == "gaussian") return AffinityMode::gaussian;
  if (s == "m3") return AffinityMode::m3;
  if (s == "m0") return AffinityMode::m0;
  if (s == "mt_combined") return AffinityMode::mt_combined;
  throw std::invalid_argument("unknown affinity mode '" + std::string(s) + "'");
}

struct PipelineConfig {
  AffinityMode mode = AffinityMode::m3;
  double sigma = 5.0;  // gaussian
  double kappa = 0.014;
  int H = 40;
  std::int64_t N = 100000;
  std::uint64_t kernel_seed = 7;
  double alpha = 0.5;   // m0
  double alpha0 = 0.5;  // mt_combined, same-frame part
  double alphaT = 1.0;  // mt_combined, trajectory part
  double v_max = 10.0;
  int n_theta = kThetaBins;  // angular bins of both the kernel grid and the dataset lattice
  bool quantize_theta = true;
  ClusterParams cluster;
  int jobs = 1;

  void validate() const {
    cluster.validate();
    if (mode == AffinityMode::gaussian) {
      if (!(sigma > 0.0)) throw std::invalid_argument("sigma must be > 0");
      return;
    }
    if (H < 1 || N < 1) throw std::invalid_argument("H and N must be >= 1");
    if (!(kappa >= 0.0) || !(alpha >= 0.0) || !(alpha0 >= 0.0) || !(alphaT >= 0.0))
      throw std::invalid_argument("diffusion coefficients must be >= 0");
    if (!(v_max > 0.0)) throw std::invalid_argument("v_max must be > 0");
    if (n_theta < 4) throw std::invalid_argument("n_theta must be >= 4");
  }

  bool directed() const { return mode == AffinityMode::mt_combined; }

  KernelConfig kernel(ProcessKind kind, double a) const {
    return {{kind, kappa, a}, H, N, kernel_seed, v_max, n_theta};
  }
};

inline nlohmann::json to_json(const PipelineConfig& c) {
  return {{"affinity", std::string(to_string(c.mode))},
          {"sigma", c.sigma},
          {"kappa", c.kappa},
          {"H", c.H},
          {"N", c.N},
          {"kernel_seed", c.kernel_seed},
          {"alpha", c.alpha},
          {"alpha0", c.alpha0},
          {"alphaT", c.alphaT},
          {"v_max", c.v_max},
          {"n_theta", c.n_theta},
          {"quantize_theta", c.quantize_theta},
          {"eps", c.cluster.epsilon},
          {"tau", c.cluster.tau},
          {"M", c.cluster.M}};
}

/// Overrides fields present in j.
inline void apply_json(PipelineConfig& c, const nlohmann::json& j) {
  if (j.contains("affinity")) c.mode = affinity_mode_from_string(j["affinity"].get<std::string>());
  c.sigma = j.value("sigma", c.sigma);
  c.kappa = j.value("kappa", c.kappa);
  c.H = j.value("H", c.H);
  c.N = j.value("N", c.N);
  c.kernel_seed = j.value("kernel_seed", c.kernel_seed);
  c.alpha = j.value("alpha", c.alpha);
  c.alpha0 = j.value("alpha0", c.alpha0);
  c.alphaT = j.value("alphaT", c.alphaT);
  c.v_max = j.value("v_max", c.v_max);
  c.n_theta = j.value("n_theta", c.n_theta);
  c.quantize_theta = j.value("quantize_theta", c.quantize_theta);
  c.cluster.epsilon = j.value("eps", c.cluster.epsilon);
  c.cluster.tau = j.value("tau", c.cluster.tau);
  c.cluster.M = j.value("M", c.cluster.M);
}

namespace detail {

inline std::vector<int> velocity_bins(const std::vector<FeaturePoint>& pts, const KernelConfig& cfg) {
  const auto g = cfg.params().grid;
  std::set<int> bins;
  for (const auto& p : pts) {
    if (!p.v()) throw std::invalid_argument("dataset point without velocity");
    if (!(std::abs(*p.v()) <= g.v->hi())) throw std::out_of_range("dataset velocity outside [-v_max, v_max]");
    bins.insert(std::min(static_cast<int>(std::floor((*p.v() - g.v->lo) / g.v->width)), g.v->count - 1));
  }
  return {bins.begin(), bins.end()};
}

inline CorticalOptions cortical_options(const PipelineConfig& c, Manifold m) {
  CorticalOptions o;
  o.lattice = centred_lattice(m, 200.0, 200.0, 1, c.v_max, c.n_theta);
  o.quantize_theta = c.quantize_theta;
  o.jobs = c.jobs;
  return o;
}

}  // namespace detail

/// Row-stochastic matrix for a dataset under the configured affinity.
inline NormalizedAffinity build_affinity(const std::vector<FeaturePoint>& pts, const PipelineConfig& c,
                                         KernelStore& store) {
  c.validate();
  switch (c.mode) {
    case AffinityMode::gaussian: return row_normalize(gaussian_affinity(pts, c.sigma));
    case AffinityMode::m3: {
      for (const auto& p : pts)
        if (p.manifold() != Manifold::M3) throw std::invalid_argument("m3 affinity needs points on M3");
      const auto k = store.get(c.kernel(ProcessKind::SE2, 0.0));
      return row_normalize(cortical_affinity_symmetric(pts, *k, detail::cortical_options(c, Manifold::M3)));
    }
    case AffinityMode::m0: {
      for (const auto& p : pts)
        if (p.manifold() != Manifold::M0) throw std::invalid_argument("m0 affinity needs points on M0");
      const auto kc = c.kernel(ProcessKind::Contour, c.alpha);
      const auto k = store.get(kc, detail::velocity_bins(pts, kc));
      return row_normalize(cortical_affinity_symmetric(pts, *k, detail::cortical_options(c, Manifold::M0)));
    }
    case AffinityMode::mt_combined: {
      for (const auto& p : pts)
        if (p.manifold() != Manifold::MT) throw std::invalid_argument("mt_combined affinity needs points on MT");
      const auto kc0 = c.kernel(ProcessKind::Contour, c.alpha0);
      NormalizedAffinity p0;
      {
        const auto k0 = store.get(kc0, detail::velocity_bins(pts, kc0));
        auto opt = detail::cortical_options(c, Manifold::MT);
        opt.same_frame_only = true;
        // the contour kernel ignores t; frames are kept apart here
        p0 = row_normalize(cortical_affinity_symmetric(pts, *k0, opt));
      }
      const auto kcT = c.kernel(ProcessKind::Trajectory, c.alphaT);
      const auto kT = store.get(kcT, detail::velocity_bins(pts, kcT));
      NormalizedAffinity pT = row_normalize(cortical_affinity_directed(pts, *kT, detail::cortical_options(c, Manifold::MT)));
      return combine(std::move(p0), pT);
    }
  }
  throw std::logic_error("unreachable");
}

struct PipelineRun {
  ClusterResult result;
  nlohmann::json affinity_meta;
};

inline PipelineRun run_pipeline(const LabeledDataset& ds, const PipelineConfig& c, KernelStore& store) {
  PipelineRun run;
  NormalizedAffinity p = build_affinity(ds.points, c, store);
  run.affinity_meta = p.meta;
  run.result = cluster_detailed(p.p, c.cluster, c.directed());
  return run;
}

inline ErrorBreakdown run_and_score(const LabeledDataset& ds, const PipelineConfig& c, KernelStore& store) {
  return score(run_pipeline(ds, c, store).result.labels.labels, ds.truth);
}

// ---------------------------------------------------------------------------
// named stimuli

namespace detail {
inline double num_param(const nlohmann::json& j, const char* key, double fallback) {
  if (!j.contains(key) || j[key].is_null()) return fallback;
  if (!j[key].is_number()) throw std::invalid_argument(std::string("stimulus parameter '") + key + "' must be a number");
  return j[key].get<double>();
}
inline int int_param(const nlohmann::json& j, const char* key, int fallback) {
  const double v = num_param(j, key, fallback);
  if (v != std::floor(v)) throw std::invalid_argument(std::string("stimulus parameter '") + key + "' must be an integer");
  return static_cast<int>(v);
}
}  // namespace detail

inline const std::vector<std::string>& stimulus_kinds() {
  static const std::vector<std::string> k{"clouds", "semicircle_line", "sk", "lemniscate", "scene"};
  return k;
}

/// Builds a stimulus by name. Missing parameters take the defaults below;
/// unknown keys are rejected. For "sk", a V entry assigns sinusoidal speeds
/// (points on M0) with alpha = pi V / length suggested in meta.
inline LabeledDataset generate_stimulus(const std::string& kind, const nlohmann::json& params, std::uint64_t seed) {
  using detail::int_param;
  using detail::num_param;
  static const std::map<std::string, std::set<std::string>> known{
      {"clouds", {"distance", "count", "spread", "noise", "width", "height"}},
      {"semicircle_line", {"k", "samples", "line_length", "line_samples", "top", "line_y", "r", "n_theta"}},
      {"sk", {"k", "length", "samples", "r", "V", "n_theta"}},
      {"lemniscate", {"scale", "samples", "r", "n_theta"}},
      {"scene", {"r", "frames", "circle_samples", "bar_samples", "n_theta"}}};
  const auto it = known.find(kind);
  if (it == known.end()) throw std::invalid_argument("unknown stimulus '" + kind + "'");
  if (!params.is_object() && !params.is_null()) throw std::invalid_argument("stimulus parameters must be an object");
  if (params.is_object())
    for (const auto& [key, value] : params.items())
      if (!it->second.count(key)) throw std::invalid_argument("stimulus '" + kind + "' has no parameter '" + key + "'");
  const nlohmann::json j = params.is_object() ? params : nlohmann::json::object();
  const int nt = int_param(j, "n_theta", kThetaBins);

  LabeledDataset ds;
  if (kind == "clouds") {
    const Domain d{num_param(j, "width", 200.0), num_param(j, "height", 200.0)};
    const double dist = num_param(j, "distance", 80.0);
    ds = gen_gaussian_clouds(triangle_clouds(d, dist, int_param(j, "count", 40)), num_param(j, "spread", dist / 5),
                             int_param(j, "noise", 60), d, seed);
  } else if (kind == "semicircle_line") {
    const auto units = semicircle_and_line(num_param(j, "k", 0.014), int_param(j, "samples", 60),
                                           num_param(j, "line_length", 140.0), int_param(j, "line_samples", 20),
                                           num_param(j, "top", 185.0), num_param(j, "line_y", 40.0));
    ds = gen_segment_field(units, int_param(j, "r", 120), {}, seed, centred_lattice(Manifold::M3, 200, 200, 1, 10.0, nt));
  } else if (kind == "sk") {
    const double length = num_param(j, "length", 60.0);
    ds = gen_segment_field(sk_units(num_param(j, "k", 0.056), length, int_param(j, "samples", 20)), int_param(j, "r", 120),
                           {}, seed, centred_lattice(Manifold::M3, 200, 200, 1, 10.0, nt));
    if (j.contains("V") && !j["V"].is_null()) {
      const double V = num_param(j, "V", 0.0);
      ds = assign_velocity_sinusoidal(ds, V, seed);
      ds.meta["velocity"]["alpha"] = kPi * V / length;
    }
  } else if (kind == "lemniscate") {
    ds = gen_lemniscate(num_param(j, "scale", 90.0), int_param(j, "samples", 80), int_param(j, "r", 80), {}, seed,
                        centred_lattice(Manifold::M3, 200, 200, 1, 10.0, nt));
  } else {
    SceneParams sp;
    sp.frames = int_param(j, "frames", sp.frames);
    sp.circle_samples = int_param(j, "circle_samples", sp.circle_samples);
    sp.bar_samples = int_param(j, "bar_samples", sp.bar_samples);
    ds = gen_moving_scene(int_param(j, "r", 50), seed, sp,
                          centred_lattice(Manifold::MT, sp.domain.width, sp.domain.height, sp.frames, sp.v_max, nt));
  }
  ds.meta["stimulus"] = {{"kind", kind}, {"params", j}};
  return ds;
}

}  // namespace v1g
