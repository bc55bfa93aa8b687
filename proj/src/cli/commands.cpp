#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <ostream>
#include <thread>

#include <fmt/format.h>

#include "CLI11.hpp"
#include "canard/errors.hpp"
#include "canard/model_io.hpp"
#include "io.hpp"

namespace canard::cli {

namespace {

struct Common {
  std::string model;
  double rel_tol = 1e-8;
  double abs_tol = 1e-10;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c, bool out_required) {
  cmd->add_option("--model", c.model, "model file (default: bundled reduced Purkinje model)");
  cmd->add_option("--rel-tol", c.rel_tol, "integrator relative tolerance")->capture_default_str();
  cmd->add_option("--abs-tol", c.abs_tol, "integrator absolute tolerance")->capture_default_str();
  auto* o = cmd->add_option("--out", c.out, "output directory");
  if (out_required) o->required();
}

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

Range parse_range(const std::string& text, const std::string& what) {
  // The separator is the first ':' that is not the leading character.
  const auto colon = text.find(':', 1);
  if (colon == std::string::npos) throw ConfigError(fmt::format("{} must look like a:b, got '{}'", what, text));
  Range r;
  try {
    std::size_t p1 = 0, p2 = 0;
    const std::string a = text.substr(0, colon), b = text.substr(colon + 1);
    r.lo = std::stod(a, &p1);
    r.hi = std::stod(b, &p2);
    if (p1 != a.size() || p2 != b.size()) throw std::invalid_argument(text);
  } catch (const std::exception&) {
    throw ConfigError(fmt::format("{} must look like a:b, got '{}'", what, text));
  }
  if (!std::isfinite(r.lo) || !std::isfinite(r.hi) || r.lo == r.hi)
    throw ConfigError(fmt::format("{} needs two distinct finite ends, got '{}'", what, text));
  return r;
}

void require_finite(double x, const std::string& what) {
  if (!std::isfinite(x)) throw ConfigError(fmt::format("{} must be finite", what));
}

/// Everything a command needs after option parsing.
class Run {
 public:
  Run(std::string command, const Common& c, std::ostream& err) : command_(std::move(command)), common_(c) {
    const std::string path = c.model.empty() ? bundled_model_path() : c.model;
    if (!fs::exists(path)) throw ConfigError("model", fmt::format("model file '{}' not found", path));
    spec_ = std::make_unique<ModelSpec>(load_model(path));
    model_path_ = path;
    const TimescaleAudit audit = spec_->timescale_audit();
    if (!audit.separated)
      err << json{{"warning", "timescale"},
                  {"message", fmt::format("slow gates are only {:.3g} times slower than the fast gates",
                                          audit.pointwise_ratio)}}
                 .dump()
          << "\n";
    if (c.rel_tol < 1e-13 || c.rel_tol > 1e-2 || c.abs_tol < 1e-13 || c.abs_tol > 1e-2)
      throw ConfigError("tolerances must lie in [1e-13, 1e-2]");
    options_["model"] = path;
    options_["rel_tol"] = c.rel_tol;
    options_["abs_tol"] = c.abs_tol;
    if (!c.out.empty()) {
      dir_ = c.out;
      fs::create_directories(dir_);
    }
  }

  const ModelSpec& spec() const { return *spec_; }
  const fs::path& dir() const { return dir_; }
  bool has_dir() const { return !dir_.empty(); }
  json& options() { return options_; }

  IntegratorOptions integrator() const {
    IntegratorOptions io;
    io.rel_tol = common_.rel_tol;
    io.abs_tol = common_.abs_tol;
    return io;
  }

  void incomplete(const std::string& file) { incomplete_.push_back(file); }

  /// Writes the resolved configuration next to the results.
  void echo() const {
    if (!has_dir()) return;
    json doc{{"command", command_}, {"options", options_}, {"model", json::parse(model_to_json(*spec_))}};
    doc["incomplete"] = incomplete_;
    write_text(dir_ / fmt::format("config_{}.json", command_), doc.dump(2) + "\n");
  }

 private:
  std::string command_;
  Common common_;
  std::unique_ptr<ModelSpec> spec_;
  std::string model_path_;
  fs::path dir_;
  json options_ = json::object();
  std::vector<std::string> incomplete_;
};

std::size_t index_or_throw(const ModelSpec& spec, const std::string& var) {
  const auto i = spec.index_of(var);
  if (!i) throw ConfigError(fmt::format("model has no state variable '{}'", var));
  return *i;
}

Trajectory spiking_run(const Run& run, double J, double t0, double t1) {
  return integrate(ModelSystem(run.spec(), J), run.spec().steady_state(-60.0), t0, t1, run.integrator(),
                   {EventSpec::apex(index_or_throw(run.spec(), "V"))});
}

std::string j_tag(double J) {
  std::string s = fmt::format("{}", J);
  std::replace(s.begin(), s.end(), '.', 'p');
  return s;
}

// ---------------------------------------------------------------------------

int cmd_simulate(const Common& c, double J, double t0, double t1, double dt, double v0, std::ostream& out,
                 std::ostream& err) {
  require_finite(J, "J");
  if (!(t1 > t0)) throw ConfigError("--t1 must exceed --t0");
  Run run("simulate", c, err);
  run.options()["J"] = J;
  run.options()["t0"] = t0;
  run.options()["t1"] = t1;
  run.options()["dt"] = dt;
  run.options()["v0"] = v0;
  const Trajectory traj = integrate(ModelSystem(run.spec(), J), run.spec().steady_state(v0), t0, t1,
                                    run.integrator(), {EventSpec::apex(index_or_throw(run.spec(), "V"))});
  write_trajectory(run.dir(), run.spec(), traj, dt);
  run.echo();
  out << json{{"samples", dt > 0 ? static_cast<std::size_t>(std::floor((t1 - t0) / dt + 1e-9)) + 1 : traj.size()},
              {"events", traj.events.size()},
              {"steps", traj.stats.steps}}
             .dump()
      << "\n";
  return 0;
}

FastDiagramOptions fast_options(const Range& m) {
  FastDiagramOptions o;
  o.m_lo = std::min(m.lo, m.hi);
  o.m_hi = std::max(m.lo, m.hi);
  return o;
}

json diagram_summary(const FastDiagram& d) {
  json bifs = json::array();
  for (const auto& br : d.equilibria)
    for (const auto& b : br.bifurcations) bifs.push_back({{"kind", b.kind}, {"param", b.param}, {"V", b.x[0]}});
  if (d.cycles)
    for (const auto& b : d.cycles->bifurcations)
      bifs.push_back({{"kind", b.kind}, {"param", b.param}, {"T", b.cycle.period}, {"suspected", b.suspected}});
  return {{"J", d.J},
          {"equilibrium_branches", d.equilibria.size()},
          {"cycles", d.cycles ? d.cycles->cycles.size() : 0},
          {"bifurcations", bifs},
          {"note", d.note}};
}

int cmd_fastbif(const Common& c, double J, const std::string& m_range, std::ostream& out, std::ostream& err) {
  require_finite(J, "J");
  const Range m = parse_range(m_range, "--m-range");
  Run run("fastbif", c, err);
  run.options()["J"] = J;
  run.options()["m_range"] = {m.lo, m.hi};
  const FastDiagram d = fast_bifurcation(run.spec(), J, fast_options(m));
  write_fast_diagram(run.dir(), d);
  run.echo();
  out << diagram_summary(d).dump() << "\n";
  return 0;
}

int cmd_poincare(const Common& c, double J, std::size_t n, std::size_t transient, double warmup, std::ostream& out,
                 std::ostream& err) {
  require_finite(J, "J");
  if (n < 1) throw ConfigError("--n must be positive");
  Run run("poincare", c, err);
  run.options()["J"] = J;
  run.options()["n"] = n;
  run.options()["transient"] = transient;
  run.options()["warmup"] = warmup;
  PoincareOptions po;
  po.integrator = run.integrator();
  const Trajectory warm =
      integrate(ModelSystem(run.spec(), J), run.spec().steady_state(-60.0), 0.0, std::max(warmup, 1e-3), run.integrator());
  const PoincareSeries s = poincare_series(run.spec(), J, warm.final_state(), n, transient, po);
  write_poincare(run.dir() / "poincare.csv", {s});
  json summary{{"J", J}, {"samples", s.size()}, {"complete", s.complete}};
  if (s.size() >= AttractorOptions{}.min_samples) summary["attractor"] = to_json(classify_map_attractor(s));
  if (!s.complete) {
    summary["note"] = s.note;
    run.incomplete("poincare.csv");
  }
  write_text(run.dir() / "poincare_summary.json", summary.dump(2) + "\n");
  run.echo();
  out << summary.dump() << "\n";
  if (!s.complete) throw IncompleteResult(s.note);
  return 0;
}

int cmd_torus(const Common& c, const std::string& bracket, double tol, double grid_step, bool criticality,
              std::ostream& out, std::ostream& err) {
  const Range r = parse_range(bracket, "--bracket");
  Run run("torus-locate", c, err);
  run.options()["bracket"] = {r.lo, r.hi};
  run.options()["tol"] = tol;
  run.options()["grid_step"] = grid_step;
  run.options()["criticality"] = criticality;
  TorusOptions to;
  to.tol = tol;
  to.grid_step = grid_step;
  const TorusLocation loc = locate_torus_bifurcation(run.spec(), r.lo, r.hi, to);
  json doc = to_json(loc);
  if (criticality) {
    CriticalityOptions co;
    co.poincare.integrator = run.integrator();
    doc["criticality"] = to_json(torus_criticality(run.spec(), loc, co));
  }
  if (run.has_dir()) write_text(run.dir() / "torus.json", doc.dump(2) + "\n");
  run.echo();
  out << doc.dump(2) << "\n";
  return 0;
}

const EquilibriumBranch& attracting_branch(const FastDiagram& d) {
  const EquilibriumBranch* best = &d.equilibria.front();
  std::size_t most = 0;
  for (const auto& br : d.equilibria) {
    const auto k = static_cast<std::size_t>(std::count_if(br.points.begin(), br.points.end(), [](const auto& p) {
      return p.stability == Stability::attracting;
    }));
    if (k > most) {
      most = k;
      best = &br;
    }
  }
  return *best;
}

int cmd_canard(const Common& c, double J, double t1, const std::string& cache, const std::string& m_range,
               std::ostream& out, std::ostream& err) {
  require_finite(J, "J");
  if (!(t1 > 0)) throw ConfigError("--t1 must be positive");
  Run run("canard", c, err);
  run.options()["J"] = J;
  run.options()["t1"] = t1;

  // Cached diagram: an explicit --fastbif directory, else fastbif output
  // already sitting in --out.
  fs::path source = cache.empty() ? run.dir() : fs::path(cache);
  const bool cached = fs::exists(source / "eq_branch_0.csv");
  FastDiagram d;
  if (cached) {
    const fs::path cfg = source / "config_fastbif.json";
    if (fs::exists(cfg)) {
      std::ifstream in(cfg);
      const json doc = json::parse(in);
      const double cj = doc["options"].value("J", J);
      if (std::abs(cj - J) > 1e-12)
        throw ConfigError(fmt::format("cached diagram in '{}' was computed at J = {}, not {}", source.string(), cj, J));
    }
    d = load_fast_diagram(source);
    d.J = J;
    run.options()["fastbif"] = source.string();
  } else {
    if (!cache.empty()) throw ConfigError(fmt::format("no fastbif output in '{}'", cache));
    const Range m = parse_range(m_range, "--m-range");
    d = fast_bifurcation(run.spec(), J, fast_options(m));
    write_fast_diagram(run.dir(), d);
    run.options()["fastbif"] = nullptr;
    run.options()["m_range"] = {m.lo, m.hi};
  }
  if (!d.cycles) throw NumericalError("no_cycles", "fast subsystem has no cycle branch: " + d.note);

  const Trajectory traj = spiking_run(run, J, 0.0, t1);
  CanardOptions co;
  const CanardMetrics m = canard_metrics(traj, *d.cycles, attracting_branch(d), index_or_throw(run.spec(), "V"),
                                         index_or_throw(run.spec(), co.slow), co);
  json doc = to_json(m);
  doc["J"] = J;
  doc["regime"] = to_json(classify_regime(traj));
  write_text(run.dir() / "canard.json", doc.dump(2) + "\n");
  run.echo();
  out << json{{"J", J}, {"dwell", m.dwell}, {"passages", m.passages.size()}, {"exits_fp", m.exits_fp},
              {"exits_lc", m.exits_lc}}
             .dump()
      << "\n";
  return 0;
}

int cmd_sweep(const Common& c, const std::vector<double>& js, double t1, unsigned jobs, std::ostream& out,
              std::ostream& err) {
  if (js.empty()) throw ConfigError("--J-list is empty");
  for (double J : js) require_finite(J, "J");
  const TraceOptions to;
  if (t1 < to.transient + to.min_duration)
    throw ConfigError(fmt::format("--t1 must be at least {} ms (transient plus classified window)",
                                  to.transient + to.min_duration));
  Run run("sweep", c, err);
  run.options()["J_list"] = js;
  run.options()["t1"] = t1;

  std::vector<RegimeReport> reports(js.size());
  std::vector<std::string> failures(js.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < js.size(); i = next++) {
      try {
        reports[i] = classify_regime(spiking_run(run, js[i], 0.0, t1));
        json doc = to_json(reports[i]);
        doc["J"] = js[i];
        write_text(run.dir() / fmt::format("regime_J{}.json", j_tag(js[i])), doc.dump(2) + "\n");
      } catch (const std::exception& e) {
        failures[i] = e.what();
      }
    }
  };
  const unsigned n = std::clamp<unsigned>(jobs ? jobs : std::thread::hardware_concurrency(), 1,
                                          static_cast<unsigned>(js.size()));
  std::vector<std::thread> pool;
  for (unsigned k = 0; k < n; ++k) pool.emplace_back(worker);
  for (auto& t : pool) t.join();

  std::vector<std::vector<std::string>> rows;
  json labels = json::array();
  for (std::size_t i = 0; i < js.size(); ++i) {
    if (!failures[i].empty()) {
      rows.push_back({num(js[i]), "failed", "", "", "", "", ""});
      labels.push_back(nullptr);
      continue;
    }
    const RegimeReport& r = reports[i];
    double ibi = 0.0;
    for (double x : r.interburst) ibi += x;
    if (!r.interburst.empty()) ibi /= static_cast<double>(r.interburst.size());
    rows.push_back({num(js[i]), to_string(r.label), std::to_string(r.bursts.size()), num(ibi),
                    std::to_string(r.am_count), num(r.am_period), num(r.am_depth)});
    labels.push_back(to_string(r.label));
  }
  write_csv(run.dir() / "sweep.csv", {"J", "label", "n_bursts", "mean_ibi", "am_count", "am_period", "am_depth"},
            rows);
  const auto failed = static_cast<std::size_t>(std::count_if(failures.begin(), failures.end(),
                                                              [](const auto& s) { return !s.empty(); }));
  if (failed) run.incomplete("sweep.csv");
  run.echo();
  out << json{{"J", js}, {"labels", labels}}.dump() << "\n";
  if (failed) {
    std::string what;
    for (std::size_t i = 0; i < js.size(); ++i)
      if (!failures[i].empty()) what += fmt::format("{}J = {}: {}", what.empty() ? "" : "; ", js[i], failures[i]);
    throw IncompleteResult(fmt::format("{} of {} sweep points failed ({})", failed, js.size(), what));
  }
  return 0;
}

int cmd_ablate(const Common& c, double J, const std::string& block, double at, double g, double t1,
               std::ostream& out, std::ostream& err) {
  require_finite(J, "J");
  if (!(at > 0)) throw ConfigError("--at must be positive");
  const TraceOptions to;
  if (t1 - at < to.transient + to.min_duration)
    throw ConfigError(fmt::format("--t1 must leave at least {} ms after the block", to.transient + to.min_duration));
  if (!(g >= 0)) throw ConfigError("--g must be non-negative");
  Run run("ablate", c, err);
  run.options()["J"] = J;
  run.options()["block"] = block;
  run.options()["at"] = at;
  run.options()["g"] = g;
  run.options()["t1"] = t1;
  const ModelSpec blocked = run.spec().with_conductance(block, g);
  const std::vector<EventSpec> ev{EventSpec::apex(index_or_throw(run.spec(), "V"))};

  const Trajectory before = integrate(ModelSystem(run.spec(), J), run.spec().steady_state(-60.0), 0.0, at,
                                      run.integrator(), ev);
  const Trajectory control = integrate(ModelSystem(run.spec(), J), before.final_state(), at, t1, run.integrator(), ev);
  const Trajectory after = integrate(ModelSystem(blocked, J), before.final_state(), at, t1, run.integrator(), ev);
  const RegimeReport pre = classify_regime(control), post = classify_regime(after);
  json doc{{"J", J},
           {"block", block},
           {"at", at},
           {"g", g},
           {"pre", {{"label", to_string(pre.label)}, {"report", to_json(pre)}}},
           {"post", {{"label", to_string(post.label)}, {"report", to_json(post)}}}};
  if (run.has_dir()) write_text(run.dir() / "ablate.json", doc.dump(2) + "\n");
  run.echo();
  out << doc.dump(2) << "\n";
  return 0;
}

int report(const Error& e, std::ostream& err) {
  err << json{{"error", e.kind()}, {"message", e.what()}, {"exit_code", static_cast<int>(e.code())}}.dump() << "\n";
  return static_cast<int>(e.code());
}

}  // namespace

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Slow-fast analysis of the reduced Purkinje cell model", "canard"};
  app.require_subcommand(1);
  Common c;
  double J = -32.93825, t0 = 0.0, t1 = 0.0, dt = 0.0, v0 = -60.0, tol = 1e-4, grid_step = 0.01, at = 2000.0, g = 0.0,
         warmup = 3000.0;
  std::size_t n = 500, transient = 200;
  std::string m_range = "0:1", bracket, cache, block;
  std::vector<double> js;
  unsigned jobs = 0;
  bool criticality = false;
  std::string manifest_dir;

  auto* sim = app.add_subcommand("simulate", "integrate the full model");
  add_common(sim, c, true);
  sim->add_option("--J", J, "applied drive")->required();
  sim->add_option("--t0", t0)->capture_default_str();
  sim->add_option("--t1", t1)->required();
  sim->add_option("--dt", dt, "resample on a uniform grid (0 keeps solver steps)")->capture_default_str();
  sim->add_option("--v0", v0, "initial V; gates start at steady state")->capture_default_str();

  auto* fb = app.add_subcommand("fastbif", "bifurcation diagram of the fast subsystem over M");
  add_common(fb, c, true);
  fb->add_option("--J", J)->required();
  fb->add_option("--m-range", m_range)->capture_default_str();

  auto* pc = app.add_subcommand("poincare", "spike-apex Poincare section");
  add_common(pc, c, true);
  pc->add_option("--J", J)->required();
  pc->add_option("--n", n)->capture_default_str();
  pc->add_option("--transient", transient, "apexes discarded before sampling")->capture_default_str();
  pc->add_option("--warmup", warmup, "simulated time before the first apex (ms)")->capture_default_str();

  auto* tl = app.add_subcommand("torus-locate", "locate the torus bifurcation of the spiking orbit");
  add_common(tl, c, false);
  tl->add_option("--bracket", bracket)->required();
  tl->add_option("--tol", tol)->capture_default_str();
  tl->add_option("--grid-step", grid_step)->capture_default_str();
  tl->add_flag("--criticality", criticality, "also fit the invariant-curve radius");

  auto* cn = app.add_subcommand("canard", "torus canard metrics");
  add_common(cn, c, true);
  cn->add_option("--J", J)->capture_default_str();
  cn->add_option("--fastbif", cache, "directory with fastbif output");
  cn->add_option("--m-range", m_range)->capture_default_str();
  auto* cn_t1 = cn->add_option("--t1", t1, "simulated time (ms), default 8000");

  auto* sw = app.add_subcommand("sweep", "classify the regime at several drives");
  add_common(sw, c, true);
  sw->add_option("--J-list", js)->required()->delimiter(',');
  auto* sw_t1 = sw->add_option("--t1", t1, "simulated time per drive (ms), default 8000");
  sw->add_option("--jobs", jobs, "worker threads (0: one per core)");

  auto* ab = app.add_subcommand("ablate", "block a current mid-run");
  add_common(ab, c, false);
  ab->add_option("--J", J)->required();
  ab->add_option("--block", block)->required();
  ab->add_option("--at", at)->capture_default_str();
  ab->add_option("--g", g, "conductance after the block")->capture_default_str();
  auto* ab_t1 = ab->add_option("--t1", t1, "end of the run (ms), default at + 4000");

  auto* mf = app.add_subcommand("manifest", "index a results directory");
  mf->add_option("dir", manifest_dir)->required();

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    return report(ConfigError("usage", e.what()), err);
  }

  try {
    if (sim->parsed()) return cmd_simulate(c, J, t0, t1, dt, v0, out, err);
    if (fb->parsed()) return cmd_fastbif(c, J, m_range, out, err);
    if (pc->parsed()) return cmd_poincare(c, J, n, transient, warmup, out, err);
    if (tl->parsed()) return cmd_torus(c, bracket, tol, grid_step, criticality, out, err);
    if (cn->parsed()) return cmd_canard(c, J, cn_t1->count() ? t1 : 8000.0, cache, m_range, out, err);
    if (sw->parsed()) return cmd_sweep(c, js, sw_t1->count() ? t1 : 8000.0, jobs, out, err);
    if (ab->parsed()) return cmd_ablate(c, J, block, at, g, ab_t1->count() ? t1 : at + 4000.0, out, err);
    if (mf->parsed()) {
      out << write_manifest(manifest_dir);
      return 0;
    }
  } catch (const Error& e) {
    return report(e, err);
  } catch (const fs::filesystem_error& e) {
    return report(ConfigError("io", e.what()), err);
  } catch (const std::exception& e) {
    return report(NumericalError("internal", e.what()), err);
  }
  return report(ConfigError("usage", "no command"), err);
}

}  // namespace canard::cli
