#include "usplat/io/config.hpp"

#include <set>
#include <stdexcept>

#include "usplat/io/toml_lite.hpp"

namespace usplat {

namespace {

/// Pulls known keys out of one section and complains about leftovers.
class Section {
 public:
  Section(const nlohmann::json& root, const std::string& name)
      : name_(name),
        obj_(root.contains(name) ? root.at(name)
                                 : nlohmann::json::object()) {
    if (!obj_.is_object())
      throw std::runtime_error("config: [" + name + "] must be a table");
  }

  template <typename T>
  void get(const char* key, T& out) {
    if (!obj_.contains(key)) return;
    out = obj_.at(key).get<T>();
    seen_.insert(key);
  }

  void get_enum(const char* key, const std::set<std::string>& allowed,
                std::string& out) {
    if (!obj_.contains(key)) return;
    out = obj_.at(key).get<std::string>();
    if (!allowed.count(out))
      throw std::runtime_error("config: bad value for " + name_ + "." + key +
                               ": " + out);
    seen_.insert(key);
  }

  void done() const {
    for (const auto& [key, value] : obj_.items()) {
      (void)value;
      if (!seen_.count(key))
        throw std::runtime_error("config: unknown key " + name_ + "." + key);
    }
  }

 private:
  std::string name_;
  nlohmann::json obj_;
  std::set<std::string> seen_;
};

}  // namespace

RunConfig parse_run_config(const nlohmann::json& j) {
  RunConfig cfg;
  std::set<std::string> known_sections = {"optim", "loss", "render", "init"};
  for (const auto& [key, value] : j.items()) {
    if (key == "seed") {
      cfg.seed = value.get<std::uint64_t>();
    } else if (!known_sections.count(key)) {
      throw std::runtime_error("config: unknown top-level key " + key);
    }
  }
  {
    Section s(j, "optim");
    s.get("lr_scene", cfg.optim.lr_scene);
    s.get("lr_pose", cfg.optim.lr_pose);
    s.get("beta1", cfg.optim.beta1);
    s.get("beta2", cfg.optim.beta2);
    s.get("eps", cfg.optim.eps);
    s.get("max_steps", cfg.optim.max_steps);
    s.get("patience", cfg.optim.patience);
    s.get("plateau_rel_tol", cfg.optim.plateau_rel_tol);
    s.get("supervise_poses", cfg.optim.supervise_poses);
    s.get("optimize_scene", cfg.optim.optimize_scene);
    s.get("optimize_context_poses", cfg.optim.optimize_context_poses);
    s.get("optimize_target_poses", cfg.optim.optimize_target_poses);
    s.get("verbose", cfg.optim.verbose);
    s.done();
  }
  {
    Section s(j, "loss");
    auto& loss = cfg.optim.loss;
    s.get("gamma_perceptual", loss.gamma_perceptual);
    s.get("lambda_reproj", loss.lambda_reproj);
    s.get("w_rot", loss.w_rot);
    s.get("w_trans", loss.w_trans);
    s.get("clamp_px", loss.clamp_px);
    s.get("render_context_views", loss.render_context_views);
    std::string norm = "l2", reduction = "mean", perceptual = "dssim";
    s.get_enum("reproj_norm", {"l2", "l1"}, norm);
    s.get_enum("reduction", {"mean", "sum"}, reduction);
    s.get_enum("perceptual", {"dssim", "none"}, perceptual);
    loss.reproj_norm = norm == "l1" ? ReprojNorm::kL1 : ReprojNorm::kL2;
    loss.reduction = reduction == "sum" ? Reduction::kSum : Reduction::kMean;
    loss.perceptual =
        perceptual == "none" ? Perceptual::kNone : Perceptual::kDssim;
    s.done();
  }
  {
    Section s(j, "render");
    std::vector<double> bg;
    s.get("background", bg);
    if (!bg.empty()) {
      if (bg.size() != 3)
        throw std::runtime_error("config: render.background needs 3 entries");
      cfg.optim.render.background = Vec3d(bg[0], bg[1], bg[2]);
    }
    s.get("use_tiles", cfg.optim.render.use_tiles);
    s.done();
  }
  {
    Section s(j, "init");
    s.get("default_depth", cfg.init.default_depth);
    s.get("opacity", cfg.init.opacity);
    s.get("scale_factor", cfg.init.scale_factor);
    s.done();
  }
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  return parse_run_config(load_config_file(path));
}

}  // namespace usplat
