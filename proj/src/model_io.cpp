#include "canard/model_io.hpp"

#include <cstdlib>
#include <fmt/format.h>
#include <fstream>
#include <map>
#include <sstream>

#include "canard/errors.hpp"
#include "json.hpp"

#ifndef CANARD_SOURCE_MODEL_DIR
#define CANARD_SOURCE_MODEL_DIR "models"
#endif

namespace canard {

using ordered_json = nlohmann::ordered_json;

namespace {

Expr parse_field(const std::string& text, const std::string& context) {
  try {
    return parse(text);
  } catch (const ParseError& e) {
    throw ParseError(e.offset(), e.expected(), e.found(), context);
  }
}

template <typename T>
T required(const ordered_json& obj, const char* key, const std::string& where) {
  if (!obj.is_object() || !obj.contains(key))
    throw ConfigError("schema", fmt::format("{}: missing required key '{}'", where, key));
  try {
    return obj.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("schema", fmt::format("{}: key '{}' has the wrong type", where, key));
  }
}

}  // namespace

ModelSpec parse_model(std::string_view text) {
  ordered_json doc;
  try {
    doc = ordered_json::parse(text.begin(), text.end(), nullptr, true, true);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("schema", fmt::format("model file is not valid JSON: {}", e.what()));
  }
  if (!doc.is_object()) throw ConfigError("schema", "model file must contain a JSON object");

  const auto name = required<std::string>(doc, "name", "model");
  const double capacitance = doc.contains("capacitance") ? required<double>(doc, "capacitance", "model") : 1.0;
  const std::string drive = doc.contains("drive") ? required<std::string>(doc, "drive", "model") : "J";
  const auto slow = doc.contains("slow") ? required<std::vector<std::string>>(doc, "slow", "model")
                                         : std::vector<std::string>{"M"};

  if (!doc.contains("currents") || !doc["currents"].is_array())
    throw ConfigError("schema", "model: 'currents' must be an array");
  if (!doc.contains("gates") || !doc["gates"].is_object())
    throw ConfigError("schema", "model: 'gates' must be an object");

  std::map<std::string, bool> instantaneous_refs;
  std::vector<CurrentSpec> currents;
  for (const auto& jc : doc["currents"]) {
    CurrentSpec c;
    c.name = required<std::string>(jc, "name", "current");
    const std::string where = fmt::format("current '{}'", c.name);
    c.g = required<double>(jc, "g", where);
    c.reversal = required<double>(jc, "reversal", where);
    if (jc.contains("gates")) {
      if (!jc["gates"].is_array()) throw ConfigError("schema", where + ": 'gates' must be an array");
      for (const auto& jg : jc["gates"]) {
        GateFactor f;
        f.var = required<std::string>(jg, "var", where);
        f.exponent = jg.contains("exponent") ? required<int>(jg, "exponent", where) : 1;
        if (jg.contains("instantaneous") && required<bool>(jg, "instantaneous", where))
          instantaneous_refs[f.var] = true;
        c.gates.push_back(f);
      }
    }
    currents.push_back(std::move(c));
  }

  std::vector<GateSpec> gates;
  for (const auto& [gname, jg] : doc["gates"].items()) {
    const std::string where = fmt::format("gate '{}'", gname);
    if (!jg.is_object()) throw ConfigError("schema", where + " must be an object");
    GateSpec g;
    g.name = gname;
    g.instantaneous = instantaneous_refs.contains(gname) ||
                      (jg.contains("instantaneous") && required<bool>(jg, "instantaneous", where));
    g.xinf = parse_field(required<std::string>(jg, "xinf", where), where + " xinf");
    if (jg.contains("tau")) {
      if (g.instantaneous) throw ConfigError("schema", where + " is instantaneous but defines tau");
      g.tau = parse_field(required<std::string>(jg, "tau", where), where + " tau");
    } else if (!g.instantaneous) {
      throw ConfigError("schema", where + " is missing 'tau' (required for non-instantaneous gates)");
    }
    gates.push_back(std::move(g));
  }
  return ModelSpec(name, capacitance, std::move(currents), std::move(gates), slow, drive);
}

ModelSpec load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("io", fmt::format("cannot open model file '{}'", path));
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_model(buf.str());
}

std::string model_to_json(const ModelSpec& spec) {
  ordered_json doc;
  doc["name"] = spec.name();
  doc["capacitance"] = spec.capacitance();
  doc["drive"] = spec.drive_name();
  doc["slow"] = spec.slow();
  doc["currents"] = ordered_json::array();
  for (const auto& c : spec.currents()) {
    ordered_json jc;
    jc["name"] = c.name;
    jc["g"] = c.g;
    jc["reversal"] = c.reversal;
    jc["gates"] = ordered_json::array();
    for (const auto& f : c.gates) jc["gates"].push_back({{"var", f.var}, {"exponent", f.exponent}});
    doc["currents"].push_back(jc);
  }
  doc["gates"] = ordered_json::object();
  for (const auto& g : spec.gates()) {
    ordered_json jg;
    jg["xinf"] = g.xinf.str();
    if (g.instantaneous) jg["instantaneous"] = true;
    if (g.tau) jg["tau"] = g.tau->str();
    doc["gates"][g.name] = jg;
  }
  if (!spec.frozen().empty()) doc["frozen"] = spec.frozen();
  return doc.dump(2);
}

std::string bundled_model_path() {
  if (const char* dir = std::getenv("CANARD_MODEL_DIR")) return std::string(dir) + "/purkinje_reduced.model";
  return std::string(CANARD_SOURCE_MODEL_DIR) + "/purkinje_reduced.model";
}

}  // namespace canard
