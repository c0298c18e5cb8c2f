#pragma once

#include <optional>
#include <string>
#include <vector>

#include "usplat/core/camera.hpp"
#include "usplat/core/se3.hpp"

namespace usplat {

/// One entry of a cameras file:
///   {"format_version": 1,
///    "views": [{"K": [fx, fy, cx, cy], "size": [width, height],
///               "pose_v_to_canonical": [16 row-major floats]}, ...]}
/// The pose field is optional; intrinsics-only files are how recovery
/// inputs are expressed, and loading them alongside poses is rejected
/// where ground truth must stay hidden.
struct CameraView {
  CameraIntrinsics<double> intr;
  std::optional<SE3Pose<double>> pose;  // view-to-canonical
};

std::vector<CameraView> load_cameras(const std::string& path);
void save_cameras(const std::string& path, const std::vector<CameraView>& views);

/// Throws if any view carries a pose; `context` names the caller in the
/// error message.
void require_no_poses(const std::vector<CameraView>& views,
                      const std::string& context);

std::vector<CameraIntrinsics<double>> intrinsics_of(
    const std::vector<CameraView>& views);
/// Throws if any view lacks a pose.
std::vector<SE3Pose<double>> poses_of(const std::vector<CameraView>& views);

}  // namespace usplat
