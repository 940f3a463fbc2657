#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "uwbseq/dataset.hpp"
#include "uwbseq/geometry.hpp"
#include "uwbseq/sim.hpp"

namespace uwbseq::go {

enum class InitMode { Centroid, PreviousSolution };

struct GoConfig {
  std::size_t window_frames = 20;  // >= 2
  double huber_delta = 0.5;
  int max_iters = 100;
  double rel_tol = 1e-8;
  double lm_lambda0 = 1e-3;
  // Constant-velocity prior: (p[k+1] - 2 p[k] + p[k-1]) / motion_sigma.
  double motion_sigma = 0.05;
  // Rigid tag-separation residual weight is 1 / link_sigma.
  double link_sigma = 0.01;
  InitMode init_mode = InitMode::PreviousSolution;

  void validate() const;
};

// r = measured - (scale * |position - anchor| + bias)
double residual(const Vec3& position, double measured, const AnchorParams& anchor);

struct ResidualJacobian {
  Eigen::RowVector3d gradient = Eigen::RowVector3d::Zero();
  // True when the position is within 1e-6 m of the anchor; the gradient is then zero.
  bool singular = false;
};
ResidualJacobian residual_jacobian(const Vec3& position, const AnchorParams& anchor);

// IRLS weight of the Huber kernel: 1 inside |r| <= delta, delta/|r| outside.
double huber_weight(double r, double delta);
// 0.5 r^2 inside, delta (|r| - delta/2) outside.
double huber_rho(double r, double delta);

struct GoSolution {
  // positions[k][i]: tag i (layout order) at window frame k.
  std::vector<std::vector<Vec3>> positions;
  double cost = 0.0;
  int iterations = 0;
  bool converged = false;
  // Fewer than four distinct anchors were heard over the window.
  bool low_observability = false;
  std::vector<double> cost_trace;  // initial cost, then one entry per accepted step
};

struct WindowProblem {
  const std::vector<FrameVector>* frames = nullptr;
  std::size_t first = 0;
  std::size_t count = 0;
  ChannelLayout layout;
  std::vector<AnchorParams> anchors;    // matched to layout.anchor_ids
  std::vector<TagMount> mounts;         // matched to layout.tag_ids
};

// Levenberg-Marquardt over Huber-weighted range residuals, constant-velocity
// residuals and (with two or more tags) rigid tag-separation residuals.
// `init` holds one position per frame and tag. Throws std::invalid_argument
// when the window holds no range at all.
GoSolution solve_window(const WindowProblem& problem, const GoConfig& config,
                        const std::vector<std::vector<Vec3>>& init);

struct GoTrajectory {
  std::vector<double> stamps;
  std::vector<std::vector<Vec3>> positions;
  std::vector<bool> converged;
  std::vector<double> costs;
};

// Slides the window with stride window_frames / 2 (the last window is aligned
// to the final frame), warm-starting from the previous solution. A window
// without any range keeps the previous estimates and is marked not converged.
// Throws std::invalid_argument for an empty trial.
GoTrajectory run_go_pipeline(const std::vector<FrameVector>& frames, const ChannelLayout& layout,
                             const Environment& env, const std::vector<TagMount>& mounts, const GoConfig& config);

// stamp,x,y,z,converged,cost for tag 0, then x1,y1,z1... for further tags.
void write_go_csv(const GoTrajectory& traj, const std::filesystem::path& path, const std::string& provenance = {});

}  // namespace uwbseq::go
