#include "io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "canard/errors.hpp"

namespace canard::cli {

std::string num(double x) { return fmt::format("{:.17g}", x); }

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ConfigError("io", fmt::format("cannot write '{}'", path.string()));
  f << text;
}

void write_csv(const fs::path& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows) {
  std::string text;
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) text += ',';
      text += cells[i];
    }
    text += '\n';
  };
  line(header);
  for (const auto& r : rows) line(r);
  write_text(path, text);
}

CsvTable read_csv(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("io", fmt::format("cannot read '{}'", path.string()));
  CsvTable t;
  std::string line;
  bool first = true;
  while (std::getline(f, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (line.back() == ',') cells.emplace_back();
    if (first) {
      t.header = std::move(cells);
      first = false;
      continue;
    }
    if (cells.size() != t.header.size()) ++t.ragged;
    t.rows.push_back(std::move(cells));
  }
  return t;
}

namespace {

std::string cell_at(const ComplexVec& v, std::size_t i, bool imag) {
  if (i >= v.size()) return "";
  return num(imag ? v[i].imag() : v[i].real());
}

Stability stability_from(const std::string& s) {
  for (Stability k : {Stability::attracting, Stability::repelling, Stability::saddle})
    if (to_string(k) == s) return k;
  throw ConfigError(fmt::format("unknown stability '{}'", s));
}

double to_double(const std::string& s, const fs::path& file) {
  try {
    std::size_t pos = 0;
    const double x = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return x;
  } catch (const std::exception&) {
    throw ConfigError(fmt::format("bad number '{}' in '{}'", s, file.string()));
  }
}

std::size_t column(const CsvTable& t, const std::string& name, const fs::path& file) {
  const auto it = std::find(t.header.begin(), t.header.end(), name);
  if (it == t.header.end()) throw ConfigError(fmt::format("column '{}' missing from '{}'", name, file.string()));
  return static_cast<std::size_t>(it - t.header.begin());
}

}  // namespace

void write_trajectory(const fs::path& dir, const ModelSpec& spec, const Trajectory& traj, double dt) {
  std::vector<std::string> header{"t"};
  for (const auto& s : spec.state_names()) header.push_back(s);
  std::vector<std::vector<std::string>> rows;
  auto push = [&](double t, const Vec& y) {
    std::vector<std::string> r{num(t)};
    for (Eigen::Index i = 0; i < y.size(); ++i) r.push_back(num(y[i]));
    rows.push_back(std::move(r));
  };
  if (dt > 0) {
    const auto n = static_cast<std::size_t>(std::floor((traj.t1() - traj.t0()) / dt + 1e-9));
    for (std::size_t k = 0; k <= n; ++k) {
      const double t = traj.t0() + static_cast<double>(k) * dt;
      push(t, traj.at(std::min(t, traj.t1())));
    }
  } else {
    for (std::size_t i = 0; i < traj.size(); ++i) push(traj.times()[i], traj.state(i));
  }
  write_csv(dir / "trajectory.csv", header, rows);

  const std::size_t v = spec.index_of("V").value_or(0);
  const auto m = spec.index_of(spec.slow().empty() ? "M" : spec.slow().front());
  std::vector<std::vector<std::string>> ev;
  for (const Event& e : traj.events)
    ev.push_back({e.kind == EventKind::apex ? "apex" : "crossing", num(e.t), num(e.y[static_cast<Eigen::Index>(v)]),
                  m ? num(e.y[static_cast<Eigen::Index>(*m)]) : ""});
  write_csv(dir / "events.csv", {"kind", "t", "V", "M"}, ev);
}

void write_fast_diagram(const fs::path& dir, const FastDiagram& d) {
  for (const auto& old : fs::directory_iterator(dir))
    if (old.path().filename().string().rfind("eq_branch_", 0) == 0) fs::remove(old.path());

  std::vector<std::string> eh{"param", "V", "n", "h", "c", "stability"};
  for (const char* part : {"eig_re_", "eig_im_"})
    for (int i = 1; i <= 5; ++i) eh.push_back(fmt::format("{}{}", part, i));
  std::vector<std::vector<std::string>> bif;
  for (std::size_t b = 0; b < d.equilibria.size(); ++b) {
    std::vector<std::vector<std::string>> rows;
    for (const auto& p : d.equilibria[b].points) {
      std::vector<std::string> r{num(p.param)};
      for (Eigen::Index i = 0; i < 4; ++i) r.push_back(i < p.x.size() ? num(p.x[i]) : "");
      r.push_back(to_string(p.stability));
      for (bool im : {false, true})
        for (std::size_t i = 0; i < 5; ++i) r.push_back(cell_at(p.eigenvalues, i, im));
      rows.push_back(std::move(r));
    }
    write_csv(dir / fmt::format("eq_branch_{}.csv", b), eh, rows);
    for (const auto& x : d.equilibria[b].bifurcations)
      bif.push_back({x.kind, num(x.param), num(x.x[0])});
  }
  write_csv(dir / "eq_bifurcations.csv", {"kind", "param", "V"}, bif);

  for (const char* name : {"cycle_branch.csv", "cycle_bifurcations.csv"}) fs::remove(dir / name);
  if (!d.cycles) return;
  std::vector<std::string> ch{"M", "T", "Vmin", "Vmax", "stability"};
  for (const char* part : {"mult_re_", "mult_im_"})
    for (int i = 1; i <= 4; ++i) ch.push_back(fmt::format("{}{}", part, i));
  std::vector<std::vector<std::string>> rows;
  for (const Cycle& c : d.cycles->cycles) {
    std::vector<std::string> r{num(c.param), num(c.period), num(c.v_min), num(c.v_max), to_string(c.stability)};
    for (bool im : {false, true})
      for (std::size_t i = 0; i < 4; ++i) r.push_back(cell_at(c.multipliers, i, im));
    rows.push_back(std::move(r));
  }
  write_csv(dir / "cycle_branch.csv", ch, rows);
  std::vector<std::vector<std::string>> cb;
  for (const auto& b : d.cycles->bifurcations) cb.push_back({b.kind, num(b.param), num(b.cycle.period)});
  write_csv(dir / "cycle_bifurcations.csv", {"kind", "M", "T"}, cb);
}

void write_poincare(const fs::path& path, const std::vector<PoincareSeries>& series) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& s : series)
    for (std::size_t k = 0; k < s.size(); ++k)
      rows.push_back({num(s.J), std::to_string(k), num(s.samples[k].t), num(s.v(k)), num(s.m(k))});
  write_csv(path, {"J", "k", "t", "V_apex", "M_apex"}, rows);
}

FastDiagram load_fast_diagram(const fs::path& dir) {
  FastDiagram d;
  d.slow = "M";
  std::vector<fs::path> branches;
  if (!fs::is_directory(dir)) throw ConfigError(fmt::format("'{}' is not a directory", dir.string()));
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (name.rfind("eq_branch_", 0) == 0 && e.path().extension() == ".csv") branches.push_back(e.path());
  }
  std::sort(branches.begin(), branches.end(), [](const fs::path& a, const fs::path& b) {
    auto idx = [](const fs::path& p) { return std::stoi(p.stem().string().substr(10)); };
    return idx(a) < idx(b);
  });
  for (const auto& f : branches) {
    const CsvTable t = read_csv(f);
    EquilibriumBranch br;
    br.param_name = "M";
    const std::size_t cp = column(t, "param", f), cs = column(t, "stability", f);
    std::vector<std::size_t> cx;
    for (const char* s : {"V", "n", "h", "c"}) cx.push_back(column(t, s, f));
    for (const auto& r : t.rows) {
      EquilibriumPoint p;
      p.param = to_double(r.at(cp), f);
      p.x.resize(4);
      for (Eigen::Index i = 0; i < 4; ++i) p.x[i] = to_double(r.at(cx[static_cast<std::size_t>(i)]), f);
      p.stability = stability_from(r.at(cs));
      br.points.push_back(std::move(p));
    }
    d.equilibria.push_back(std::move(br));
  }
  if (d.equilibria.empty()) throw ConfigError(fmt::format("no eq_branch_*.csv in '{}'", dir.string()));

  const fs::path cf = dir / "cycle_branch.csv", bf = dir / "cycle_bifurcations.csv";
  if (!fs::exists(cf)) {
    d.note = "no cycle branch in the cache";
    return d;
  }
  const CsvTable ct = read_csv(cf);
  CycleBranch br;
  br.param_name = "M";
  const std::size_t cm = column(ct, "M", cf), cT = column(ct, "T", cf), clo = column(ct, "Vmin", cf),
                    chi = column(ct, "Vmax", cf), cs = column(ct, "stability", cf);
  for (const auto& r : ct.rows) {
    Cycle c;
    c.param = to_double(r.at(cm), cf);
    c.period = to_double(r.at(cT), cf);
    c.v_min = to_double(r.at(clo), cf);
    c.v_max = to_double(r.at(chi), cf);
    c.stability = stability_from(r.at(cs));
    br.cycles.push_back(std::move(c));
  }
  if (fs::exists(bf)) {
    const CsvTable bt = read_csv(bf);
    const std::size_t bk = column(bt, "kind", bf), bm = column(bt, "M", bf), bT = column(bt, "T", bf);
    for (const auto& r : bt.rows) {
      CycleBifurcation b;
      b.kind = r.at(bk);
      b.param = to_double(r.at(bm), bf);
      b.cycle.param = b.param;
      b.cycle.period = to_double(r.at(bT), bf);
      // Extent at the bifurcation, interpolated in period between the
      // neighbouring branch points.
      const auto& cs_ = br.cycles;
      double best = INFINITY;
      for (std::size_t i = 0; i + 1 < cs_.size(); ++i) {
        const double t0 = cs_[i].period, t1 = cs_[i + 1].period;
        if ((b.cycle.period - t0) * (b.cycle.period - t1) > 0) continue;
        const double dist = std::abs(cs_[i].param - b.param) + std::abs(cs_[i + 1].param - b.param);
        if (dist >= best) continue;
        best = dist;
        const double f = t1 != t0 ? (b.cycle.period - t0) / (t1 - t0) : 0.0;
        b.cycle.v_min = cs_[i].v_min + f * (cs_[i + 1].v_min - cs_[i].v_min);
        b.cycle.v_max = cs_[i].v_max + f * (cs_[i + 1].v_max - cs_[i].v_max);
        b.segment = i;
      }
      br.bifurcations.push_back(std::move(b));
    }
  }
  d.cycles = std::move(br);
  return d;
}

// ---------------------------------------------------------------------------

json to_json(const Vec& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

json to_json(const ComplexVec& v) {
  json a = json::array();
  for (const Complex& c : v) a.push_back({{"re", c.real()}, {"im", c.imag()}, {"abs", std::abs(c)}});
  return a;
}

json to_json(const RegimeReport& r) {
  json bursts = json::array();
  for (const Burst& b : r.bursts) bursts.push_back({{"start", b.start}, {"end", b.end}, {"spikes", b.count}});
  double mean_ibi = 0.0;
  for (double x : r.interburst) mean_ibi += x;
  if (!r.interburst.empty()) mean_ibi /= static_cast<double>(r.interburst.size());
  return {{"label", to_string(r.label)},
          {"window", {r.t0, r.t1}},
          {"spikes", r.spikes},
          {"bursts", bursts},
          {"interburst", r.interburst},
          {"mean_interburst", mean_ibi},
          {"onset_intervals", r.onset_intervals},
          {"interburst_am", r.interburst_am},
          {"am_count", r.am_count},
          {"am_period", r.am_period},
          {"am_depth", r.am_depth},
          {"isi_range", {r.isi_first, r.isi_last}},
          {"amplitude_range", {r.amp_first, r.amp_last}},
          {"max_isi", r.max_isi}};
}

json to_json(const CanardMetrics& m) {
  json passages = json::array();
  for (const auto& p : m.passages)
    passages.push_back({{"fold_time", p.fold_time},
                        {"flip_time", p.has_flip ? json(p.flip_time) : json(nullptr)},
                        {"dwell", p.dwell},
                        {"dwell_spikes", p.dwell_spikes},
                        {"min_distance", p.min_distance},
                        {"exit", to_string(p.exit)},
                        {"exit_time", p.exit == CanardExit::none ? json(nullptr) : json(p.exit_time)}});
  return {{"fold_m", m.fold_m},
          {"fold_extent", m.fold_extent},
          {"spike_period", m.spike_period},
          {"dwell", m.dwell},
          {"dwell_spikes", m.dwell_spikes},
          {"min_distance", m.min_distance},
          {"exits", {{"to_attracting_fp", m.exits_fp}, {"to_attracting_lc", m.exits_lc}}},
          {"max_flip_offset_spikes", m.max_flip_offset},
          {"note", m.note},
          {"passages", passages}};
}

json to_json(const TorusLocation& loc) {
  return {{"J_TB", loc.J},
          {"modulus", loc.modulus},
          {"angle", loc.angle},
          {"rotation_number", loc.rotation_number},
          {"modulus_increases_with_J", loc.modulus_increases},
          {"monotone", loc.monotone},
          {"iterations", loc.iterations},
          {"grid", loc.grid},
          {"grid_moduli", loc.grid_moduli},
          {"fixed_point",
           {{"state", to_json(loc.fixed_point.state)},
            {"period", loc.fixed_point.period},
            {"residual", loc.fixed_point.residual},
            {"multipliers", to_json(loc.fixed_point.multipliers)}}}};
}

json to_json(const CriticalityFit& f) {
  return {{"distances", f.distances},
          {"radii", f.radii},
          {"coefficient", f.coefficient},
          {"r_squared", f.r_squared},
          {"supercritical", f.supercritical}};
}

json to_json(const AttractorReport& a) {
  return {{"kind", to_string(a.kind)},
          {"diameter", a.diameter},
          {"mean_radius", a.mean_radius},
          {"spread", a.spread},
          {"rotation_consistency", a.rotation_consistency}};
}

// ---------------------------------------------------------------------------

namespace {

struct DatasetKind {
  std::string kind;
  std::string x;
  std::string y;
};

DatasetKind classify_file(const std::string& name) {
  if (name == "trajectory.csv") return {"trajectory", "t", "V"};
  if (name == "events.csv") return {"events", "t", "V"};
  if (name.rfind("eq_branch_", 0) == 0) return {"equilibrium_branch", "param", "V"};
  if (name == "eq_bifurcations.csv") return {"equilibrium_bifurcations", "param", "V"};
  if (name == "cycle_branch.csv") return {"cycle_branch", "M", "Vmax"};
  if (name == "cycle_bifurcations.csv") return {"cycle_bifurcations", "M", "T"};
  if (name == "poincare.csv") return {"poincare", "M_apex", "V_apex"};
  if (name == "sweep.csv") return {"regime_summary", "J", "am_depth"};
  if (name.rfind("config_", 0) == 0) return {"config", "", ""};
  if (name.ends_with(".json")) return {"report", "", ""};
  return {"unknown", "", ""};
}

json axis(const std::string& col) {
  static const std::map<std::string, std::pair<std::string, std::string>> known{
      {"t", {"time", "ms"}},          {"V", {"membrane potential", "mV"}},
      {"Vmin", {"cycle minimum V", "mV"}}, {"Vmax", {"cycle maximum V", "mV"}},
      {"V_apex", {"apex V", "mV"}},   {"M", {"M-current gate", "1"}},
      {"M_apex", {"apex M", "1"}},     {"param", {"frozen M", "1"}},
      {"T", {"period", "ms"}},         {"J", {"applied drive", "uA/cm^2"}},
      {"am_depth", {"AM depth", "mV"}}, {"am_period", {"AM period", "ms"}},
      {"mean_ibi", {"mean interburst interval", "ms"}},
      {"n", {"K activation", "1"}},    {"h", {"Na inactivation", "1"}},
      {"c", {"Ca activation", "1"}}};
  const auto it = known.find(col);
  if (it == known.end()) return {{"name", col}};
  return {{"name", col}, {"label", it->second.first}, {"unit", it->second.second}};
}

std::vector<std::string> expected_for(const std::string& command) {
  if (command == "simulate") return {"trajectory.csv", "events.csv"};
  if (command == "fastbif") return {"eq_branch_0.csv", "eq_bifurcations.csv", "cycle_branch.csv", "cycle_bifurcations.csv"};
  if (command == "poincare") return {"poincare.csv"};
  if (command == "torus-locate") return {"torus.json"};
  if (command == "canard") return {"canard.json"};
  if (command == "sweep") return {"sweep.csv"};
  if (command == "ablate") return {"ablate.json"};
  return {};
}

}  // namespace

std::string write_manifest(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw ConfigError(fmt::format("'{}' is not a directory", dir.string()));
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().filename() != "manifest.json") files.push_back(e.path());
  std::sort(files.begin(), files.end());

  std::set<std::string> present, expected, incomplete;
  for (const auto& f : files) present.insert(f.filename().string());
  json datasets = json::array();
  json commands = json::array();
  for (const auto& f : files) {
    const std::string name = f.filename().string();
    const DatasetKind k = classify_file(name);
    json entry{{"file", name}, {"kind", k.kind}};
    if (f.extension() == ".csv") {
      try {
        const CsvTable t = read_csv(f);
        json axes = json::array();
        for (const auto& c : t.header) axes.push_back(axis(c));
        entry["columns"] = t.header;
        entry["axes"] = axes;
        entry["rows"] = t.rows.size();
        if (!k.x.empty()) entry["plot"] = {{"x", k.x}, {"y", k.y}};
        entry["status"] = t.ragged ? "partial" : (t.rows.empty() ? "empty" : "ok");
      } catch (const Error&) {
        entry["status"] = "unreadable";
      }
    } else if (f.extension() == ".json") {
      std::ifstream in(f);
      const json doc = json::parse(in, nullptr, false);
      entry["status"] = doc.is_discarded() ? "unreadable" : "ok";
      if (k.kind == "config" && !doc.is_discarded()) {
        const std::string cmd = doc.value("command", "");
        commands.push_back(cmd);
        for (const auto& e : expected_for(cmd)) expected.insert(e);
        if (doc.contains("incomplete"))
          for (const auto& e : doc["incomplete"]) incomplete.insert(e.get<std::string>());
      }
    } else {
      entry["status"] = "ok";
    }
    if (incomplete.count(name)) entry["status"] = "partial";
    datasets.push_back(std::move(entry));
  }
  // Incompleteness recorded by a config that sorts after its dataset.
  for (auto& e : datasets)
    if (incomplete.count(e["file"].get<std::string>())) e["status"] = "partial";

  json missing = json::array();
  for (const auto& e : expected)
    if (!present.count(e)) missing.push_back(e);
  const json manifest{{"directory", dir.filename().string()},
                      {"commands", commands},
                      {"datasets", datasets},
                      {"missing", missing}};
  const std::string text = manifest.dump(2) + "\n";
  write_text(dir / "manifest.json", text);
  return text;
}

}  // namespace canard::cli
