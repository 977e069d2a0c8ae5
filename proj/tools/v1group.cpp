// v1group: kernels, stimuli, clustering, scoring and sweeps from the shell.
//
// Every command writes its outputs plus manifest.json into --out. Flags can
// be overridden by --config FILE (a flat JSON object, or a manifest whose
// "config" entry is used), so a manifest re-runs its own command.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "v1g/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace v1g;

namespace {

constexpr const char* kVersion = "1.0.0";

class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + p.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& content) {
  const fs::path tmp = p.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + p.string());
    os << content;
    if (!os) throw std::runtime_error("write failed: " + p.string());
  }
  fs::rename(tmp, p);
}

std::string file_hash(const fs::path& p) { return hex64(fnv1a(slurp(p))); }

// sidecar of a dataset CSV: same stem, .json
fs::path sidecar(const fs::path& csv) {
  fs::path m = csv;
  m.replace_extension(".json");
  return m;
}

struct Globals {
  std::uint64_t seed = 0;
  int jobs = 1;
  std::string out = ".";
  std::string config;
  std::string kernel_dir = ".v1g-kernels";
  bool no_auto_kernel = false;
};

// Flag values collected as JSON, then patched by --config.
json apply_config(json cfg, const std::string& path) {
  if (path.empty()) return cfg;
  json file;
  try {
    file = json::parse(slurp(path));
  } catch (const json::parse_error& e) {
    throw UsageError("config " + path + ": " + e.what());
  }
  if (file.contains("config") && file["config"].is_object()) file = file["config"];
  if (!file.is_object()) throw UsageError("config " + path + " must be a JSON object");
  for (const auto& [k, v] : file.items()) {
    if (!cfg.contains(k)) throw UsageError("config key '" + k + "' is not an option of this command");
    cfg[k] = v;
  }
  return cfg;
}

void write_manifest(const fs::path& out, const std::string& command, const json& cfg, const json& inputs,
                    const std::vector<std::string>& outputs) {
  json files = json::object();
  for (const auto& f : outputs) files[f] = file_hash(out / f);
  json m = {{"tool", "v1group"}, {"version", kVersion}, {"command", command},
            {"config", cfg},     {"inputs", inputs},     {"outputs", files}};
  write_file(out / "manifest.json", m.dump(2) + "\n");
  // read back what was written
  for (const auto& f : outputs)
    if (file_hash(out / f) != files[f]) throw std::runtime_error("output changed while writing: " + f);
}

PipelineConfig pipeline_from(const json& cfg, int jobs) {
  PipelineConfig c;
  json j = cfg;
  apply_json(c, j);
  c.jobs = jobs;
  c.validate();
  return c;
}

json pipeline_flags(const PipelineConfig& c) { return to_json(c); }

// ---------------------------------------------------------------------------

struct KernelFlags {
  std::string process = "se2";
  double kappa = 0.014, alpha = 0.0;
  int H = 40;
  std::int64_t N = 100000;
  double v_max = 10.0;
  int n_theta = kThetaBins;
  std::vector<int> bins;
  std::vector<std::string> marginals;
  int marginal_bin = -1;
};

void cmd_kernel(const Globals& g, const KernelFlags& f) {
  json cfg = {{"process", f.process}, {"kappa", f.kappa},     {"alpha", f.alpha},     {"H", f.H},
              {"N", f.N},             {"seed", g.seed},       {"v_max", f.v_max},     {"n_theta", f.n_theta},
              {"bins", f.bins},       {"marginal", f.marginals}, {"marginal_bin", f.marginal_bin}};
  cfg = apply_config(cfg, g.config);

  KernelConfig kc;
  kc.process = {process_kind_from_string(cfg["process"].get<std::string>()), cfg["kappa"].get<double>(),
                cfg["alpha"].get<double>()};
  kc.process.validate();
  kc.H = cfg["H"];
  kc.N = cfg["N"];
  kc.seed = cfg["seed"];
  kc.v_max = cfg["v_max"];
  kc.n_theta = cfg["n_theta"];
  kc.params().validate();
  std::vector<Marginal> marginals;
  for (const auto& m : cfg["marginal"]) {
    const auto s = m.get<std::string>();
    if (s == "xy") marginals.push_back(Marginal::xy);
    else if (s == "xyt") marginals.push_back(Marginal::xyt);
    else if (s == "xytheta") marginals.push_back(Marginal::xytheta);
    else throw UsageError("--marginal must be xy, xyt or xytheta");
    if (s == "xyt" && kc.process.kind != ProcessKind::Trajectory) throw UsageError("xyt marginal needs --process trajectory");
  }

  const fs::path out = g.out;
  fs::create_directories(out);
  KernelStore store(fs::path(g.kernel_dir), !g.no_auto_kernel, g.jobs);
  const auto k = store.get(kc, cfg["bins"].get<std::vector<int>>());

  std::vector<std::string> outputs{"kernel.v1gk"};
  {
    std::ostringstream os;
    save_kernel(*k, os);
    write_file(out / "kernel.v1gk", os.str());
  }
  if (!marginals.empty()) {
    const KernelSlice* s = &k->slices().front();
    const int mb = cfg["marginal_bin"];
    if (mb >= 0) {
      s = k->slice_for_bin(mb);
      if (!s) throw UsageError("--marginal-bin " + std::to_string(mb) + " is not among the built bins");
    } else if (kc.process.has_velocity()) {
      s = &k->slice_for_velocity(0.0);  // v = 0 table unless asked otherwise
    }
    const GridSpec& gr = k->grid();
    for (std::size_t i = 0; i < marginals.size(); ++i) {
      const auto m = kernel_marginal(*k, *s, marginals[i]);
      const std::string name = "marginal_" + cfg["marginal"][i].get<std::string>() + ".csv";
      std::ostringstream os;
      char buf[128];
      if (marginals[i] == Marginal::xy) {
        // rows: y from bottom; columns: x; cell centres relative to the start
        os << "y\\x";
        for (int x = 0; x < gr.x.count; ++x) {
          std::snprintf(buf, sizeof buf, ",%.17g", gr.x.center(x));
          os << buf;
        }
        os << '\n';
        for (int y = 0; y < gr.y.count; ++y) {
          std::snprintf(buf, sizeof buf, "%.17g", gr.y.center(y));
          os << buf;
          for (double w : m.dense[static_cast<std::size_t>(y)]) {
            std::snprintf(buf, sizeof buf, ",%.17g", w);
            os << buf;
          }
          os << '\n';
        }
      } else {
        const bool t = marginals[i] == Marginal::xyt;
        os << (t ? "x,y,t,weight\n" : "x,y,theta,weight\n");
        for (const auto& [x, y, third, w] : m.sparse) {
          const double c3 = t ? gr.t->center(third) : gr.theta.center(third);
          std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g\n", gr.x.center(x), gr.y.center(y), c3, w);
          os << buf;
        }
      }
      write_file(out / name, os.str());
      outputs.push_back(name);
    }
  }
  json inputs = {{"kernel_key", kernel_cache_key(k->process(), k->params(), slice_bins(*k))}};
  write_manifest(out, "kernel", cfg, inputs, outputs);
}

// ---------------------------------------------------------------------------

struct GenerateFlags {
  std::string stimulus = "sk";
  std::string params = "{}";
  std::vector<std::string> set;  // key=value
};

void cmd_generate(const Globals& g, const GenerateFlags& f) {
  json params;
  try {
    params = json::parse(f.params);
  } catch (const json::parse_error& e) {
    throw UsageError(std::string("--params: ") + e.what());
  }
  for (const auto& kv : f.set) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) throw UsageError("--set expects key=value, got '" + kv + "'");
    try {
      params[kv.substr(0, eq)] = json::parse(kv.substr(eq + 1));
    } catch (const json::parse_error&) {
      throw UsageError("--set " + kv + ": value is not a number or JSON literal");
    }
  }
  json cfg = {{"stimulus", f.stimulus}, {"params", params}, {"seed", g.seed}};
  cfg = apply_config(cfg, g.config);
  const auto ds = generate_stimulus(cfg["stimulus"].get<std::string>(), cfg["params"], cfg["seed"].get<std::uint64_t>());
  const fs::path out = g.out;
  fs::create_directories(out);
  write_dataset(ds, (out / "dataset.csv").string(), (out / "dataset.json").string());
  write_manifest(out, "generate", cfg, json::object(), {"dataset.csv", "dataset.json"});
}

// ---------------------------------------------------------------------------

struct ClusterFlags {
  std::string data;
  PipelineConfig pc;
  bool extras = false;
};

void cmd_cluster(const Globals& g, const ClusterFlags& f) {
  json cfg = pipeline_flags(f.pc);
  cfg["data"] = f.data;
  cfg["spectrum"] = f.extras;
  cfg = apply_config(cfg, g.config);
  const PipelineConfig c = pipeline_from(cfg, g.jobs);
  const std::string data = cfg["data"];
  if (data.empty()) throw UsageError("cluster needs --data");

  const LabeledDataset ds = read_dataset(data, sidecar(data).string());
  const std::string hash = dataset_hash(ds);
  const fs::path out = g.out;
  fs::create_directories(out);
  KernelStore store(fs::path(g.kernel_dir), !g.no_auto_kernel, g.jobs);
  const PipelineRun run = run_pipeline(ds, c, store);

  std::vector<std::string> outputs{"labels.csv"};
  {
    std::ostringstream os;
    write_labels_csv(run.result.labels, os);
    write_file(out / "labels.csv", os.str());
  }
  if (cfg["spectrum"].get<bool>()) {
    std::ostringstream a, b;
    write_spectrum_csv(run.result.eigs, a);
    write_uplus_csv(run.result.eigs, run.result.q, b);
    write_file(out / "spectrum.csv", a.str());
    write_file(out / "uplus.csv", b.str());
    outputs.push_back("spectrum.csv");
    outputs.push_back("uplus.csv");
  }
  json summary = {{"q", run.result.q}, {"K", run.result.labels.K}, {"n", ds.size()}, {"affinity", run.affinity_meta}};
  write_file(out / "cluster.json", summary.dump(2) + "\n");
  outputs.push_back("cluster.json");
  write_manifest(out, "cluster", cfg, {{"data", data}, {"dataset_hash", hash}}, outputs);
}

// ---------------------------------------------------------------------------

std::vector<int> read_labels(const fs::path& p) {
  std::istringstream is(slurp(p));
  std::string line;
  std::getline(is, line);
  if (line != "index,label") throw std::runtime_error("unexpected labels header in " + p.string());
  std::vector<int> labels;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos || std::stoul(line.substr(0, comma)) != labels.size())
      throw std::runtime_error("bad labels row " + std::to_string(labels.size()) + " in " + p.string());
    labels.push_back(std::stoi(line.substr(comma + 1)));
  }
  return labels;
}

struct ScoreFlags {
  std::string data, labels;
};

void cmd_score(const Globals& g, const ScoreFlags& f) {
  json cfg = {{"data", f.data}, {"labels", f.labels}};
  cfg = apply_config(cfg, g.config);
  const std::string data = cfg["data"], labels_path = cfg["labels"];
  if (data.empty() || labels_path.empty()) throw UsageError("score needs --data and --labels");
  const LabeledDataset ds = read_dataset(data, sidecar(data).string());
  const std::string hash = dataset_hash(ds);
  // labels produced by cluster carry the hash of the dataset they came from
  const fs::path lm = fs::path(labels_path).parent_path() / "manifest.json";
  if (fs::exists(lm)) {
    const json m = json::parse(slurp(lm));
    if (m.contains("inputs") && m["inputs"].contains("dataset_hash") && m["inputs"]["dataset_hash"] != hash)
      throw std::runtime_error("dataset hash mismatch: labels were computed on " +
                               m["inputs"]["dataset_hash"].get<std::string>() + ", dataset is " + hash);
  }
  const auto labels = read_labels(labels_path);
  const ErrorBreakdown e = score(labels, ds.truth);
  const UnitMatch m = match_units(labels, ds.truth);
  json j = to_json(e);
  j["unit_to_cluster"] = m.unit_to_cluster;
  const fs::path out = g.out;
  fs::create_directories(out);
  write_file(out / "score.json", j.dump(2) + "\n");
  write_manifest(out, "score", cfg, {{"data", data}, {"dataset_hash", hash}, {"labels", labels_path}}, {"score.json"});
}

// ---------------------------------------------------------------------------

// Sweep config: {"grid": SweepGrid, "stimulus": {"kind", "params"}, "pipeline": {...}}.
// Axis names matching a pipeline key set that key; others set a stimulus parameter.
void cmd_sweep(const Globals& g) {
  if (g.config.empty()) throw UsageError("sweep needs --config");
  json file = json::parse(slurp(g.config));
  if (file.contains("config") && file["config"].is_object()) file = file["config"];
  for (const char* k : {"grid", "stimulus"})
    if (!file.contains(k)) throw UsageError(std::string("sweep config needs '") + k + "'");
  SweepGrid grid = sweep_grid_from_json(file["grid"]);
  if (!file["grid"].contains("base_seed")) grid.base_seed = g.seed;
  const std::string kind = file["stimulus"].at("kind");
  const json sparams = file["stimulus"].value("params", json::object());
  const json pbase = file.value("pipeline", json::object());
  const json pkeys = to_json(PipelineConfig{});
  for (const auto& [k, v] : pbase.items())
    if (!pkeys.contains(k)) throw UsageError("unknown pipeline key '" + k + "'");
  pipeline_from(pbase, 1);  // validate before any run
  generate_stimulus(kind, sparams, 0);

  KernelStore store(fs::path(g.kernel_dir), !g.no_auto_kernel, 1);
  auto fn = [&](const CellParams& p, std::uint64_t seed) {
    json pj = pbase, sj = sparams;
    for (const auto& [name, value] : p) {
      if (pkeys.contains(name)) pj[name] = pkeys[name].is_number_integer() ? json(std::llround(value)) : json(value);
      else sj[name] = value;
    }
    const PipelineConfig c = pipeline_from(pj, 1);
    return run_and_score(generate_stimulus(kind, sj, seed), c, store);
  };
  const SweepResult r = sweep(grid, fn, g.jobs);

  const fs::path out = g.out;
  fs::create_directories(out);
  std::ostringstream a, b;
  write_sweep_long_csv(grid, r, a);
  write_sweep_summary_csv(grid, r, b);
  write_file(out / "sweep_long.csv", a.str());
  write_file(out / "sweep_summary.csv", b.str());
  json cfg = {{"grid", to_json(grid)}, {"stimulus", {{"kind", kind}, {"params", sparams}}}, {"pipeline", pbase}};
  json best = nullptr;
  try {
    best = {{"cell", best_cell(r)}, {"params", grid.params(best_cell(r))}};
  } catch (const std::runtime_error&) {
  }
  write_file(out / "sweep.json", json({{"best", best}, {"cells", r.cells.size()}, {"runs", r.runs.size()}}).dump(2) + "\n");
  write_manifest(out, "sweep", cfg, json::object(), {"sweep_long.csv", "sweep_summary.csv", "sweep.json"});
}

void add_pipeline_flags(CLI::App* c, PipelineConfig& p, std::string& mode) {
  c->add_option("--affinity", mode, "gaussian | m3 | m0 | mt_combined")->capture_default_str();
  c->add_option("--sigma", p.sigma, "Gaussian affinity width")->capture_default_str();
  c->add_option("--kappa", p.kappa)->capture_default_str();
  c->add_option("--H", p.H, "kernel path length")->capture_default_str();
  c->add_option("--N", p.N, "kernel sample paths")->capture_default_str();
  c->add_option("--kernel-seed", p.kernel_seed)->capture_default_str();
  c->add_option("--alpha", p.alpha, "velocity diffusion for m0")->capture_default_str();
  c->add_option("--alpha0", p.alpha0, "same-frame part of mt_combined")->capture_default_str();
  c->add_option("--alphaT", p.alphaT, "trajectory part of mt_combined")->capture_default_str();
  c->add_option("--v-max", p.v_max)->capture_default_str();
  c->add_option("--n-theta", p.n_theta)->capture_default_str();
  c->add_option("--eps", p.cluster.epsilon)->capture_default_str();
  c->add_option("--tau", p.cluster.tau)->capture_default_str();
  c->add_option("--M", p.cluster.M, "minimum cluster size")->capture_default_str();
}

int fail(const std::string& command, const std::string& type, const std::string& message, const Globals& g, int code) {
  const json rec = {{"error", {{"command", command}, {"type", type}, {"message", message}}}};
  std::cerr << rec.dump() << '\n';
  std::error_code ec;
  if (!g.out.empty() && fs::is_directory(g.out, ec)) {
    std::ofstream os(fs::path(g.out) / "error.json");
    os << rec.dump(2) << '\n';
  }
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Grouping of oriented and moving features with cortical kernels"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "root seed")->capture_default_str();
  app.add_option("--jobs", g.jobs, "worker threads; results do not depend on it")->capture_default_str()->check(CLI::PositiveNumber);
  app.add_option("--out", g.out, "output directory")->capture_default_str();
  app.add_option("--config", g.config, "JSON file overriding flags");
  app.add_option("--kernel-dir", g.kernel_dir, "kernel cache directory")->capture_default_str();
  app.add_flag("--no-auto-kernel", g.no_auto_kernel, "fail instead of simulating missing kernels");
  app.set_version_flag("--version", kVersion);

  KernelFlags kf;
  auto* kernel = app.add_subcommand("kernel", "estimate a kernel and export marginals");
  kernel->add_option("--process", kf.process, "se2 | contour | trajectory")->capture_default_str();
  kernel->add_option("--kappa", kf.kappa)->capture_default_str();
  kernel->add_option("--alpha", kf.alpha)->capture_default_str();
  kernel->add_option("--H", kf.H)->capture_default_str();
  kernel->add_option("--N", kf.N)->capture_default_str();
  kernel->add_option("--v-max", kf.v_max)->capture_default_str();
  kernel->add_option("--n-theta", kf.n_theta)->capture_default_str();
  kernel->add_option("--bins", kf.bins, "velocity bins to build (default all)");
  kernel->add_option("--marginal", kf.marginals, "xy | xyt | xytheta (repeatable)");
  kernel->add_option("--marginal-bin", kf.marginal_bin, "velocity bin of the exported marginal");
  // kernel keeps its own --seed so `kernel --seed 7` reads naturally
  kernel->add_option("--seed", g.seed, "root seed");

  GenerateFlags gf;
  auto* generate = app.add_subcommand("generate", "write a labelled stimulus");
  generate->add_option("--stimulus", gf.stimulus, "clouds | semicircle_line | sk | lemniscate | scene")->capture_default_str();
  generate->add_option("--params", gf.params, "stimulus parameters as a JSON object")->capture_default_str();
  generate->add_option("--set", gf.set, "stimulus parameter key=value (repeatable)");
  generate->add_option("--seed", g.seed, "root seed");

  ClusterFlags cf;
  std::string mode = "m3";
  auto* cluster = app.add_subcommand("cluster", "cluster a dataset");
  cluster->add_option("--data", cf.data, "dataset CSV (sidecar JSON next to it)");
  add_pipeline_flags(cluster, cf.pc, mode);
  cluster->add_flag("--spectrum", cf.extras, "also write eigenvalues and u+ vectors");

  ScoreFlags sf;
  auto* scorec = app.add_subcommand("score", "score labels against the ground truth");
  scorec->add_option("--data", sf.data, "dataset CSV");
  scorec->add_option("--labels", sf.labels, "labels CSV");

  auto* sweepc = app.add_subcommand("sweep", "parameter sweep from a JSON config");
  sweepc->add_option("--seed", g.seed, "root seed when the grid has no base_seed");

  for (auto* sub : {kernel, generate, cluster, scorec, sweepc}) {
    sub->add_option("--out", g.out, "output directory");
    sub->add_option("--config", g.config, "JSON file overriding flags");
    sub->add_option("--jobs", g.jobs, "worker threads")->check(CLI::PositiveNumber);
    sub->add_option("--kernel-dir", g.kernel_dir, "kernel cache directory");
    sub->add_flag("--no-auto-kernel", g.no_auto_kernel, "fail instead of simulating missing kernels");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("parse", "usage", e.what(), g, 2);
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    if (command == "kernel") cmd_kernel(g, kf);
    else if (command == "generate") cmd_generate(g, gf);
    else if (command == "cluster") {
      cf.pc.mode = affinity_mode_from_string(mode);
      cmd_cluster(g, cf);
    } else if (command == "score") cmd_score(g, sf);
    else cmd_sweep(g);
  } catch (const UsageError& e) {
    return fail(command, "usage", e.what(), g, 2);
  } catch (const MissingKernelError& e) {
    return fail(command, "missing_kernel", e.what(), g, 3);
  } catch (const json::exception& e) {
    return fail(command, "config", e.what(), g, 2);
  } catch (const std::exception& e) {
    return fail(command, "error", e.what(), g, 1);
  }
  return 0;
}
