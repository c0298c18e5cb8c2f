#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "usplat/core/rng.hpp"
#include "usplat/harness/synth.hpp"
#include "usplat/io/config.hpp"
#include "usplat/opt/optimizer.hpp"

namespace usplat {

/// Pose-init corruption applied to every non-reference view: a rotation
/// by a fixed angle about a uniformly random axis, plus a translation
/// offset expressed as a fraction of the mean camera baseline.
struct PerturbSpec {
  double rot_deg = 5.0;
  double trans_frac = 0.10;
};

struct ExperimentSetup {
  SynthSpec synth;
  RunConfig run;
  PerturbSpec perturb;
  bool init_at_truth = false;    // start from the generating scene + true poses
  bool collapse_demo = false;    // reproj off, context photometric on; labeled
  bool run_epa = true;           // second evaluation protocol
  bool compute_reference = true; // fixed-pose fit of the same representation
  int epa_max_steps = 500;
  int epa_patience = 20;
  int threads = 1;
};

struct ViewPoseError {
  int view = 0;  // index into the synthesized view list
  bool is_target = false;
  double rot_deg = 0;
  double trans_deg = 0;
  double error_deg = 0;  // max of the two
};

struct TargetEval {
  int view = 0;
  double psnr = 0;
  double ssim = 0;
  double psnr_epa = 0;
  double ssim_epa = 0;
  double epa_rot_deg = 0;    // pose error after refinement
  double epa_trans_deg = 0;
  double epa_error_deg = 0;
  double epa_initial_loss = 0;
  double epa_final_loss = 0;
};

struct ExperimentResult {
  OptimState<double> state;
  OptimResult<double> optim;
  std::vector<ViewPoseError> pose_errors;  // every non-reference view
  double auc5 = 0, auc10 = 0, auc20 = 0;
  std::vector<TargetEval> targets;
  std::vector<SE3Pose<double>> epa_poses;  // view-to-canonical, per target
  double reference_psnr = 0;  // known-pose fit of the same representation
  double ideal_psnr = 0;      // generating scene re-rendered at true poses
  nlohmann::json report;      // the full serialized record
};

double mean_camera_baseline(const std::vector<CameraView>& views);

SE3Pose<double> perturb_pose(const SE3Pose<double>& pose, double rot_deg,
                             double trans_dist, Rng& rng);

/// Full recovery trial: synthesize, render the observations, optimize
/// from perturbed pose inits with the true poses hidden, then score the
/// result under both evaluation protocols (estimated-pose rendering and
/// pose-refined rendering).
ExperimentResult run_recovery_experiment(const ExperimentSetup& setup);

/// Fans independent trials across `jobs` isolated workers; reports come
/// back in input order. Determinism only depends on each setup's seeds,
/// never on the fan-out.
std::vector<nlohmann::json> run_experiments(
    const std::vector<ExperimentSetup>& setups, int jobs);

/// Strips the wall-clock subtree so two reports from identical runs can
/// be compared byte-for-byte.
nlohmann::json report_without_timings(nlohmann::json report);

}  // namespace usplat
