#pragma once

#include "posespace/denoiser.h"
#include "posespace/features.h"
#include "posespace/geometry.h"
#include "posespace/rng.h"

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

namespace posespace {

class DiffusionSchedule {
 public:
  // Linear beta schedule over T steps.
  static DiffusionSchedule linear(int steps = 1000, double beta_start = 1e-4, double beta_end = 0.02);

  explicit DiffusionSchedule(Eigen::VectorXd betas);

  int num_steps() const { return static_cast<int>(betas_.size()); }
  // Timesteps are 1-based; beta(t) for t in [1, T].
  double beta(int t) const { return betas_[t - 1]; }
  // Cumulative product of (1 - beta); alpha_bar(0) = 1.
  double alpha_bar(int t) const { return t == 0 ? 1.0 : alpha_bars_[t - 1]; }

  // `count` uniformly spaced timesteps in [1, t_max], ascending, ending at t_max.
  std::vector<int> timesteps(int count, int t_max) const;
  std::vector<int> timesteps(int count) const { return timesteps(count, num_steps()); }

 private:
  Eigen::VectorXd betas_;
  Eigen::VectorXd alpha_bars_;
};

// sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) noise.
Eigen::VectorXd q_sample(const Eigen::VectorXd& x0, int t, const Eigen::VectorXd& noise,
                         const DiffusionSchedule& schedule);

struct Constraint {
  int node = 0;
  Vec3 target = Vec3::Zero();  // normalized pose space
  double weight = 1.0;
};

using ConstraintSet = std::vector<Constraint>;

enum class JacobianMode { exact, identity };

enum class SamplerKind { ddpm, ddim };

struct GuidanceConfig {
  double scale = 10.0;
  JacobianMode jacobian_mode = JacobianMode::exact;
  int steps = 100;
  // Gradient steps on P^t per sampling step.
  int inner_steps = 3;
};

// Trained-model view of one asset: the denoiser, its conditioning for this
// asset and the noise schedule. Holds references; the model and asset must
// outlive it.
class PoseSpace {
 public:
  PoseSpace(const DenoiserModel& model, const Asset& asset, const NodeFeatures& features,
            DiffusionSchedule schedule = DiffusionSchedule::linear());

  const DenoiserModel& model() const { return *model_; }
  const Asset& asset() const { return *asset_; }
  const SkeletonContext& context() const { return context_; }
  const DiffusionSchedule& schedule() const { return schedule_; }
  Eigen::Index dimension() const { return 3 * context_.num_nodes(); }

  Eigen::VectorXd normalize(const Pose& pose) const;
  Pose denormalize(const Eigen::VectorXd& x) const;

  // Denoiser prediction of the clean normalized pose.
  Eigen::VectorXd predict(const Eigen::VectorXd& x, int t) const;

  // Ancestral (ddpm) or deterministic (ddim) sampling from unit Gaussian
  // noise drawn from `seed`.
  Pose sample(int steps, uint64_t seed, SamplerKind kind = SamplerKind::ddpm) const;

  // Terminal latent of the deterministic sampler for `pose`.
  Eigen::VectorXd ddim_invert(const Pose& pose, int steps) const;
  Pose ddim_decode(const Eigen::VectorXd& latent, int steps) const;

  // Sampling nudged towards the constraints. Without `init_latent` the
  // trajectory starts from seeded noise with `kind`; with it, from the given
  // latent (typically a ddim_invert result).
  Pose guided_sample(const ConstraintSet& constraints, const GuidanceConfig& cfg, uint64_t seed,
                     SamplerKind kind = SamplerKind::ddpm,
                     const std::optional<Eigen::VectorXd>& init_latent = std::nullopt) const;

  // Noises `pose` to round(t_proj * T) and denoises it back (ancestral).
  Pose project(const Pose& pose, double t_proj, int steps, uint64_t seed) const;

  std::vector<Pose> interpolate(const Pose& a, const Pose& b, int frames, int steps) const;

  std::vector<Pose> walk(int length, double rho, int steps, uint64_t seed) const;

  std::vector<Pose> decode_latents(const std::vector<Eigen::VectorXd>& latents, int steps) const;

  // Converts an asset-space target position into a normalized-space constraint.
  Constraint constraint_from_asset_target(int node, const Vec3& target, double weight) const;

 private:
  Eigen::VectorXd run_sampler(Eigen::VectorXd x, const std::vector<int>& grid, SamplerKind kind, Rng* rng,
                              const ConstraintSet* constraints, const GuidanceConfig* guidance) const;

  const DenoiserModel* model_;
  const Asset* asset_;
  SkeletonContext context_;
  DiffusionSchedule schedule_;
};

// Spherical interpolation; falls back to a linear blend rescaled to the
// geometric-mean norm when the endpoints are (anti)parallel.
Eigen::VectorXd slerp(const Eigen::VectorXd& a, const Eigen::VectorXd& b, double u);

// Stationary unit-Gaussian AR(1) latent chain: z_0 ~ N(0, I),
// z_{k+1} = rho z_k + sqrt(1 - rho^2) eps_{k+1}, with eps_k drawn from
// derive_seed(seed, k) (z_0 = eps_0).
std::vector<Eigen::VectorXd> latent_walk(Eigen::Index dim, int length, double rho, uint64_t seed);

// ---------------------------------------------------------------------------
// Training.

struct TrainingSample {
  const Asset* asset;
  const NodeFeatures* features;
  Pose pose;
};

struct TrainConfig {
  int steps = 0;       // 0: derive from epochs
  int epochs = 1;
  int batch = 32;
  double lr = 1e-3;
  // Cosine decay to lr * final_lr_fraction over the run.
  double final_lr_fraction = 1.0;
  uint64_t seed = 0;
  // Held-out fraction evaluated every eval_interval steps.
  double validation_fraction = 0.0;
  int eval_interval = 500;
  // Return the parameters with the lowest validation loss instead of the final ones.
  bool keep_best = false;
  int log_interval = 0;  // 0: silent
};

struct TrainResult {
  DenoiserModel model;
  std::vector<double> loss_curve;        // per step
  std::vector<double> validation_curve;  // per evaluation
  int best_step = -1;
};

// Trains the denoiser with uniform timestep weighting on normalized poses.
// model.stats must already hold the dataset's sigma_p.
TrainResult train(const DenoiserModel& model, const std::vector<TrainingSample>& dataset,
                  const DiffusionSchedule& schedule, const TrainConfig& cfg);

}  // namespace posespace
