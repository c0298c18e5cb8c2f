#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "usplat/core/gaussian.hpp"
#include "usplat/io/camera_json.hpp"

namespace usplat {

/// Synthetic scene recipe. Scenes are generated directly in the
/// canonical frame: the first context camera sits at the identity and
/// the content is centered in front of it.
struct SynthSpec {
  std::string kind = "gaussian-cloud";  // | textured-planes | box-room
  int n_context = 3;
  int n_target = 2;
  int width = 64;
  int height = 64;
  double fov_deg = 60.0;
  int n_splats = 300;    // gaussian-cloud count / per-face grid budget
  int sh_degree = 0;     // 0..2
  double camera_distance = 3.0;
  double arc_deg = 30.0;       // yaw spread of the camera ring
  double pitch_jitter_deg = 5.0;
  double min_visible_fraction = 0.5;
  int max_attempts = 100;
  std::uint64_t seed = 0;
};

SynthSpec parse_synth_spec(const nlohmann::json& j);

struct SynthResult {
  Scene<double> scene;
  std::vector<CameraView> views;  // contexts first, then targets; poses set
  int n_context = 0;
  int n_target = 0;
  double depth_midpoint = 0;  // typical camera-to-content distance
};

/// Generates a scene and camera set where every view sees at least
/// min_visible_fraction of the gaussians; resamples with fresh draws up
/// to max_attempts times, then throws.
SynthResult synthesize(const SynthSpec& spec);

/// Writes scene.ply, cams_gt.json, cams_intrinsics.json, meta.json and
/// rendered images/ + depth/ into out_dir.
void write_synth_outputs(const std::string& out_dir, const SynthResult& result,
                         int threads = 1);

}  // namespace usplat
