#pragma once

#include <optional>
#include <string>

#include "usplat/core/gaussian.hpp"

namespace usplat {

/// Binary little-endian gaussian PLY, one vertex per primitive:
///   x y z nx ny nz f_dc_0..2 [f_rest_*] opacity scale_0..2 rot_0..3
/// all float32. f_rest holds the non-DC coefficients channel-major
/// (all red coefficients, then green, then blue). opacity is the logit,
/// scale_* the log-scales, rot_* the (w,x,y,z) quaternion.
void save_ply(const std::string& path, const Scene<double>& scene);
Scene<double> load_ply(const std::string& path);

/// Scene plus the pixel-alignment sidecar (<path minus .ply>.align.json)
/// recording which block of primitives came from which context view.
void save_scene(const std::string& ply_path, const Scene<double>& scene,
                const SceneAlignment* alignment = nullptr);
Scene<double> load_scene(const std::string& ply_path,
                         std::optional<SceneAlignment>* alignment = nullptr);

std::string alignment_sidecar_path(const std::string& ply_path);

}  // namespace usplat
