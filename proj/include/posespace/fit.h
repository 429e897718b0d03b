#pragma once

#include "posespace/error.h"
#include "posespace/geometry.h"

#include <vector>

namespace posespace {

struct FitConfig {
  double lambda = 20.0;
  int max_iters = 500;
  double learning_rate = 1e-2;
  // Relative change of the combined loss over a 10-iteration window.
  double convergence_tol = 1e-6;
  // Final learning rate as a fraction of `learning_rate` (cosine decay).
  double final_lr_fraction = 1e-3;
  // Leading fraction of max_iters spent on the reconstruction term alone
  // before the edge term is switched on. Each phase restarts Adam.
  double warmup_fraction = 0.5;

  void validate() const;
};

struct FitResult {
  Pose pose;
  double final_recon_loss = 0.0;
  double final_edge_loss = 0.0;
  int iterations_used = 0;
  bool converged = false;
};

// Thrown when the combined loss turns non-finite; carries the last finite iterate.
class FitDivergence : public NumericalError {
 public:
  FitDivergence(const std::string& message, Pose last_finite)
      : NumericalError(message), last_finite_(std::move(last_finite)) {}

  const Pose& last_finite() const { return last_finite_; }

 private:
  Pose last_finite_;
};

// Mean squared distance between deform(asset, pose) and the target vertices.
double loss_recon(const Asset& asset, const Pose& pose, const Mesh& target);

// Mean absolute change of edge length relative to the rest skeleton.
double loss_edge(const Asset& asset, const Pose& pose);

struct LossAndGradient {
  double recon = 0.0;
  double edge = 0.0;
  double total = 0.0;
  Points gradient;
};

// loss_recon + lambda * loss_edge and its analytic gradient w.r.t. node positions.
LossAndGradient fit_objective(const Asset& asset, const Pose& pose, const Mesh& target, double lambda);

FitResult fit_pose(const Asset& asset, const Mesh& target, const Pose& init, const FitConfig& cfg);

// Frame k starts from frame k-1's result; frame 0 starts from the rest pose.
std::vector<FitResult> fit_sequence(const Asset& asset, const std::vector<Mesh>& targets, const FitConfig& cfg);

}  // namespace posespace
