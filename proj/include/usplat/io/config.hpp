#pragma once

#include <cstdint>
#include <string>

#include <nlohmann/json.hpp>

#include "usplat/opt/optimizer.hpp"

namespace usplat {

/// Typed view of a recovery run config. Sections: [optim], [loss],
/// [render], [init]; top-level `seed`. Unknown keys are rejected.
struct RunConfig {
  OptimConfig<double> optim;  // carries loss + render settings
  InitOptions<double> init;   // scalar defaults; depth/pose data set by callers
  std::uint64_t seed = 0;
};

RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);  // .toml or .json

}  // namespace usplat
