#pragma once

#include <string>
#include <string_view>

#include "canard/model.hpp"

namespace canard {

/// Parses a model description (JSON, `//` comments allowed). Throws
/// ConfigError (or ParseError for malformed kinetics expressions).
ModelSpec parse_model(std::string_view text);

/// Reads and parses a model file.
ModelSpec load_model(const std::string& path);

/// Serialises a model back to the JSON schema accepted by parse_model.
std::string model_to_json(const ModelSpec& spec);

/// Location of the bundled reduced Purkinje model, resolved relative to the
/// source tree at build time. Overridable with CANARD_MODEL_DIR.
std::string bundled_model_path();

}  // namespace canard
