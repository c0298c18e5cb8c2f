#include "usplat/io/camera_json.hpp"

#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace usplat {

std::vector<CameraView> load_cameras(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_cameras: cannot open " + path);
  nlohmann::json j = nlohmann::json::parse(in);
  if (j.at("format_version").get<int>() != 1)
    throw std::runtime_error("load_cameras: unsupported format_version");

  std::vector<CameraView> views;
  for (const auto& v : j.at("views")) {
    CameraView view;
    const auto& k = v.at("K");
    if (k.size() != 4) throw std::runtime_error("load_cameras: K must have 4 entries");
    view.intr.fx = k[0].get<double>();
    view.intr.fy = k[1].get<double>();
    view.intr.cx = k[2].get<double>();
    view.intr.cy = k[3].get<double>();
    const auto& size = v.at("size");
    if (size.size() != 2)
      throw std::runtime_error("load_cameras: size must have 2 entries");
    view.intr.width = size[0].get<int>();
    view.intr.height = size[1].get<int>();
    if (!view.intr.is_valid())
      throw std::runtime_error("load_cameras: invalid intrinsics");
    if (v.contains("pose_v_to_canonical")) {
      const auto& p = v.at("pose_v_to_canonical");
      if (p.size() != 16)
        throw std::runtime_error("load_cameras: pose must have 16 entries");
      Mat4d m;
      for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) m(r, c) = p[std::size_t(4 * r + c)].get<double>();
      view.pose = SE3Pose<double>::from_matrix(m);
    }
    views.push_back(view);
  }
  return views;
}

void save_cameras(const std::string& path, const std::vector<CameraView>& views) {
  nlohmann::json j;
  j["format_version"] = 1;
  j["views"] = nlohmann::json::array();
  for (const auto& v : views) {
    nlohmann::json jv;
    jv["K"] = {v.intr.fx, v.intr.fy, v.intr.cx, v.intr.cy};
    jv["size"] = {v.intr.width, v.intr.height};
    if (v.pose) {
      const Mat4d m = v.pose->matrix();
      auto& p = jv["pose_v_to_canonical"] = nlohmann::json::array();
      for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) p.push_back(m(r, c));
    }
    j["views"].push_back(jv);
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_cameras: cannot open " + path);
  out << j.dump(2) << "\n";
}

void require_no_poses(const std::vector<CameraView>& views,
                      const std::string& context) {
  for (std::size_t i = 0; i < views.size(); ++i)
    if (views[i].pose)
      throw std::runtime_error(context + ": view " + std::to_string(i) +
                               " carries a pose; intrinsics-only input required");
}

std::vector<CameraIntrinsics<double>> intrinsics_of(
    const std::vector<CameraView>& views) {
  std::vector<CameraIntrinsics<double>> out;
  out.reserve(views.size());
  for (const auto& v : views) out.push_back(v.intr);
  return out;
}

std::vector<SE3Pose<double>> poses_of(const std::vector<CameraView>& views) {
  std::vector<SE3Pose<double>> out;
  out.reserve(views.size());
  for (std::size_t i = 0; i < views.size(); ++i) {
    if (!views[i].pose)
      throw std::runtime_error("poses_of: view " + std::to_string(i) +
                               " has no pose");
    out.push_back(*views[i].pose);
  }
  return out;
}

}  // namespace usplat
