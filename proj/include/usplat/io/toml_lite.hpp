#pragma once

#include <string>

#include <nlohmann/json.hpp>

namespace usplat {

/// Parses the TOML subset used by run/spec files into JSON: comments,
/// [dotted.section] headers, and `key = value` lines where value is a
/// quoted string, bool, number, or flat array of those. Throws
/// std::runtime_error with a line number on anything else.
nlohmann::json parse_toml_lite(const std::string& text);

/// Reads a config as TOML (default) or JSON (when the path ends .json).
nlohmann::json load_config_file(const std::string& path);

}  // namespace usplat
