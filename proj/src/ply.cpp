#include "usplat/io/ply.hpp"

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

#include <nlohmann/json.hpp>

namespace usplat {

namespace {

int rest_per_channel(const Scene<double>& scene) {
  return scene.sh_count() - 1;
}

void write_exact(std::ofstream& out, const void* data, std::size_t bytes) {
  out.write(static_cast<const char*>(data), std::streamsize(bytes));
}

}  // namespace

void save_ply(const std::string& path, const Scene<double>& scene) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_ply: cannot open " + path);

  const int rest = rest_per_channel(scene);
  std::ostringstream header;
  header << "ply\nformat binary_little_endian 1.0\n";
  header << "element vertex " << scene.size() << "\n";
  const char* base[] = {"x", "y", "z", "nx", "ny", "nz",
                        "f_dc_0", "f_dc_1", "f_dc_2"};
  for (const char* name : base) header << "property float " << name << "\n";
  for (int i = 0; i < 3 * rest; ++i)
    header << "property float f_rest_" << i << "\n";
  header << "property float opacity\n";
  for (int i = 0; i < 3; ++i) header << "property float scale_" << i << "\n";
  for (int i = 0; i < 4; ++i) header << "property float rot_" << i << "\n";
  header << "end_header\n";
  const std::string hs = header.str();
  write_exact(out, hs.data(), hs.size());

  std::vector<float> row(std::size_t(17 + 3 * rest));
  for (const auto& g : scene.gaussians) {
    std::size_t k = 0;
    for (int i = 0; i < 3; ++i) row[k++] = float(g.center[i]);
    for (int i = 0; i < 3; ++i) row[k++] = 0.0f;  // unused normals
    for (int c = 0; c < 3; ++c) row[k++] = float(g.sh.coeffs[0][c]);
    for (int c = 0; c < 3; ++c)
      for (int i = 1; i <= rest; ++i)
        row[k++] = i < g.sh.count ? float(g.sh.coeffs[std::size_t(i)][c]) : 0.0f;
    row[k++] = float(g.opacity_logit);
    for (int i = 0; i < 3; ++i) row[k++] = float(g.log_scale[i]);
    for (int i = 0; i < 4; ++i) row[k++] = float(g.rotation[i]);
    write_exact(out, row.data(), row.size() * sizeof(float));
  }
  if (!out) throw std::runtime_error("save_ply: write failed for " + path);
}

Scene<double> load_ply(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_ply: cannot open " + path);

  std::string line;
  std::getline(in, line);
  if (line != "ply") throw std::runtime_error("load_ply: not a ply file");
  std::getline(in, line);
  if (line != "format binary_little_endian 1.0")
    throw std::runtime_error("load_ply: unsupported format line: " + line);

  std::size_t count = 0;
  std::vector<std::string> props;
  while (std::getline(in, line)) {
    if (line == "end_header") break;
    std::istringstream ls(line);
    std::string word;
    ls >> word;
    if (word == "comment") continue;
    if (word == "element") {
      std::string kind;
      ls >> kind >> count;
      if (kind != "vertex")
        throw std::runtime_error("load_ply: unexpected element " + kind);
    } else if (word == "property") {
      std::string type, name;
      ls >> type >> name;
      if (type != "float")
        throw std::runtime_error("load_ply: unsupported property type " + type);
      props.push_back(name);
    }
  }

  int rest = 0;
  for (const auto& p : props)
    if (p.rfind("f_rest_", 0) == 0) ++rest;
  if (rest % 3 != 0)
    throw std::runtime_error("load_ply: f_rest count not divisible by 3");
  rest /= 3;
  const std::size_t expected = std::size_t(17 + 3 * rest);
  if (props.size() != expected)
    throw std::runtime_error("load_ply: unexpected property layout");
  const int sh_count = rest + 1;
  if (sh_count != 1 && sh_count != 4 && sh_count != 9)
    throw std::runtime_error("load_ply: unsupported sh coefficient count");

  Scene<double> scene;
  scene.gaussians.resize(count);
  std::vector<float> row(expected);
  for (auto& g : scene.gaussians) {
    in.read(reinterpret_cast<char*>(row.data()),
            std::streamsize(row.size() * sizeof(float)));
    if (!in) throw std::runtime_error("load_ply: truncated vertex data");
    std::size_t k = 0;
    for (int i = 0; i < 3; ++i) g.center[i] = row[k++];
    k += 3;  // normals
    g.sh.count = sh_count;
    for (int c = 0; c < 3; ++c) g.sh.coeffs[0][c] = row[k++];
    for (int c = 0; c < 3; ++c)
      for (int i = 1; i <= rest; ++i) g.sh.coeffs[std::size_t(i)][c] = row[k++];
    g.opacity_logit = row[k++];
    for (int i = 0; i < 3; ++i) g.log_scale[i] = row[k++];
    for (int i = 0; i < 4; ++i) g.rotation[i] = row[k++];
  }
  return scene;
}

std::string alignment_sidecar_path(const std::string& ply_path) {
  const std::string suffix = ".ply";
  if (ply_path.size() > suffix.size() &&
      ply_path.compare(ply_path.size() - suffix.size(), suffix.size(),
                       suffix) == 0)
    return ply_path.substr(0, ply_path.size() - suffix.size()) + ".align.json";
  return ply_path + ".align.json";
}

void save_scene(const std::string& ply_path, const Scene<double>& scene,
                const SceneAlignment* alignment) {
  save_ply(ply_path, scene);
  if (!alignment) return;
  nlohmann::json j;
  j["format_version"] = 1;
  j["blocks"] = nlohmann::json::array();
  for (const auto& b : alignment->blocks) {
    nlohmann::json jb = {{"view_index", b.view_index},
                         {"width", b.width},
                         {"height", b.height},
                         {"offset", b.offset}};
    if (b.intrinsics) jb["K"] = *b.intrinsics;
    j["blocks"].push_back(std::move(jb));
  }
  std::ofstream out(alignment_sidecar_path(ply_path));
  if (!out)
    throw std::runtime_error("save_scene: cannot write alignment sidecar");
  out << j.dump(2) << "\n";
}

Scene<double> load_scene(const std::string& ply_path,
                         std::optional<SceneAlignment>* alignment) {
  Scene<double> scene = load_ply(ply_path);
  if (alignment) {
    alignment->reset();
    std::ifstream in(alignment_sidecar_path(ply_path));
    if (in) {
      nlohmann::json j = nlohmann::json::parse(in);
      SceneAlignment a;
      for (const auto& b : j.at("blocks")) {
        SceneAlignment::ViewBlock vb{b.at("view_index").get<int>(),
                                     b.at("width").get<int>(),
                                     b.at("height").get<int>(),
                                     b.at("offset").get<std::size_t>(),
                                     std::nullopt};
        if (b.contains("K"))
          vb.intrinsics = b.at("K").get<std::array<double, 4>>();
        a.blocks.push_back(vb);
      }
      if (a.total() != scene.size())
        throw std::runtime_error("load_scene: sidecar does not match scene");
      *alignment = std::move(a);
    }
  }
  return scene;
}

}  // namespace usplat
