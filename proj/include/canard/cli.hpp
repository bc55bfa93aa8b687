#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "canard/fastbif.hpp"

namespace canard::cli {

/// Runs one command line (without the program name). Errors are reported as
/// JSON on `err`; the return value is the process exit code.
int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Scans a results directory and writes manifest.json; returns its text.
std::string write_manifest(const std::filesystem::path& dir);

/// Rebuilds the parts of a fast-subsystem diagram that canard analysis needs
/// from the CSV files written by `fastbif`.
FastDiagram load_fast_diagram(const std::filesystem::path& dir);

/// Fixed 17-significant-digit formatting used by every CSV.
std::string num(double x);

}  // namespace canard::cli
