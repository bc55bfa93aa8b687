#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "canard/cli.hpp"
#include "canard/torus.hpp"
#include "canard/trace.hpp"
#include "json.hpp"

namespace canard::cli {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

void write_text(const fs::path& path, const std::string& text);

/// Header plus rows, comma separated, '\n' line ends.
void write_csv(const fs::path& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  /// Rows whose cell count differs from the header.
  std::size_t ragged = 0;
};
CsvTable read_csv(const fs::path& path);

void write_trajectory(const fs::path& dir, const ModelSpec& spec, const Trajectory& traj, double dt);
void write_fast_diagram(const fs::path& dir, const FastDiagram& d);
void write_poincare(const fs::path& path, const std::vector<PoincareSeries>& series);

json to_json(const RegimeReport& r);
json to_json(const CanardMetrics& m);
json to_json(const TorusLocation& loc);
json to_json(const CriticalityFit& f);
json to_json(const AttractorReport& a);
json to_json(const ComplexVec& v);
json to_json(const Vec& v);

}  // namespace canard::cli
