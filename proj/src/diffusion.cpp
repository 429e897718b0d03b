#include "posespace/diffusion.h"

#include "posespace/error.h"
#include "posespace/parallel.h"
#include "posespace/rng.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

namespace posespace {

using Eigen::VectorXd;

DiffusionSchedule DiffusionSchedule::linear(int steps, double beta_start, double beta_end) {
  POSESPACE_CHECK(steps >= 1, UsageError, "schedule needs at least one step");
  VectorXd betas(steps);
  for (int i = 0; i < steps; ++i) {
    betas[i] = steps == 1 ? beta_start : beta_start + (beta_end - beta_start) * i / (steps - 1);
  }
  return DiffusionSchedule(std::move(betas));
}

DiffusionSchedule::DiffusionSchedule(VectorXd betas) : betas_(std::move(betas)), alpha_bars_(betas_.size()) {
  POSESPACE_CHECK(betas_.size() >= 1, UsageError, "schedule needs at least one step");
  double running = 1.0;
  for (Eigen::Index i = 0; i < betas_.size(); ++i) {
    POSESPACE_CHECK(betas_[i] > 0.0 && betas_[i] < 1.0, UsageError, "betas must lie in (0, 1)");
    running *= 1.0 - betas_[i];
    alpha_bars_[i] = running;
  }
}

std::vector<int> DiffusionSchedule::timesteps(int count, int t_max) const {
  POSESPACE_CHECK(t_max >= 1 && t_max <= num_steps(), UsageError, "timestep out of range");
  POSESPACE_CHECK(count >= 1 && count <= t_max, UsageError,
                  "step count must be in [1, " + std::to_string(t_max) + "]");
  std::vector<int> grid(static_cast<size_t>(count));
  for (int k = 1; k <= count; ++k) {
    grid[static_cast<size_t>(k - 1)] =
        static_cast<int>(static_cast<int64_t>(k) * t_max / count);
  }
  return grid;
}

VectorXd q_sample(const VectorXd& x0, int t, const VectorXd& noise, const DiffusionSchedule& schedule) {
  POSESPACE_CHECK(t >= 1 && t <= schedule.num_steps(), UsageError, "timestep out of range");
  POSESPACE_CHECK(noise.size() == x0.size(), DataError, "noise shape does not match the pose");
  const double ab = schedule.alpha_bar(t);
  return std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * noise;
}

VectorXd slerp(const VectorXd& a, const VectorXd& b, double u) {
  const double na = a.norm();
  const double nb = b.norm();
  if (na > 0.0 && nb > 0.0) {
    const double cos_theta = std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
    const double theta = std::acos(cos_theta);
    const double sin_theta = std::sin(theta);
    if (sin_theta > 1e-6) {
      return (std::sin((1.0 - u) * theta) / sin_theta) * a + (std::sin(u * theta) / sin_theta) * b;
    }
  }
  VectorXd mix = (1.0 - u) * a + u * b;
  const double norm = mix.norm();
  if (norm > 1e-12) {
    mix *= std::sqrt(na * nb) / norm;
  }
  return mix;
}

std::vector<VectorXd> latent_walk(Eigen::Index dim, int length, double rho, uint64_t seed) {
  POSESPACE_CHECK(length >= 1, UsageError, "walk length must be at least 1");
  POSESPACE_CHECK(rho >= 0.0 && rho < 1.0, UsageError, "rho must be in [0, 1)");
  std::vector<VectorXd> latents;
  latents.reserve(static_cast<size_t>(length));
  const double fresh = std::sqrt(1.0 - rho * rho);
  for (int k = 0; k < length; ++k) {
    Rng rng(derive_seed(seed, static_cast<uint64_t>(k)));
    VectorXd eps = rng.normal_vector(dim);
    if (k == 0) {
      latents.push_back(std::move(eps));
    } else {
      latents.push_back(rho * latents.back() + fresh * eps);
    }
  }
  return latents;
}

// ---------------------------------------------------------------------------

PoseSpace::PoseSpace(const DenoiserModel& model, const Asset& asset, const NodeFeatures& features,
                     DiffusionSchedule schedule)
    : model_(&model),
      asset_(&asset),
      context_(make_context(model.config, asset.skeleton.nodes(), asset.skeleton.edges(), features.rows)),
      schedule_(std::move(schedule)) {}

VectorXd PoseSpace::normalize(const Pose& pose) const { return normalize_pose(*asset_, pose, model_->stats); }

Pose PoseSpace::denormalize(const VectorXd& x) const { return denormalize_pose(*asset_, x, model_->stats); }

VectorXd PoseSpace::predict(const VectorXd& x, int t) const { return forward(*model_, context_, x, t); }

Constraint PoseSpace::constraint_from_asset_target(int node, const Vec3& target, double weight) const {
  POSESPACE_CHECK(node >= 0 && node < context_.num_nodes(), DataError,
                  "constraint node " + std::to_string(node) + " out of range");
  const Vec3 rest = asset_->skeleton.nodes().row(node).transpose();
  return Constraint{node, (target - rest) / model_->stats.sigma_p, weight};
}

VectorXd PoseSpace::run_sampler(VectorXd x, const std::vector<int>& grid, SamplerKind kind, Rng* rng,
                                const ConstraintSet* constraints, const GuidanceConfig* guidance) const {
  const bool guided = constraints != nullptr && guidance != nullptr && !constraints->empty() && guidance->scale != 0.0;
  for (size_t k = grid.size(); k-- > 0;) {
    const int t = grid[k];
    const int prev = k > 0 ? grid[k - 1] : 0;
    const double ab_t = schedule_.alpha_bar(t);
    const double ab_p = schedule_.alpha_bar(prev);

    VectorXd x0;
    if (!guided) {
      x0 = predict(x, t);
    } else {
      // Energy sum_c w_c |x0_c - target_c|^2 on the prediction; descend on P^t itself.
      for (int r = 0; r < guidance->inner_steps; ++r) {
        const BatchForward pass(*model_, {BatchItem{&context_, x, t}});
        const VectorXd pred = pass.output(0);
        VectorXd energy_grad = VectorXd::Zero(pred.size());
        for (const Constraint& c : *constraints) {
          energy_grad.segment<3>(3 * c.node) += 2.0 * c.weight * (pred.segment<3>(3 * c.node) - c.target);
        }
        VectorXd grad_x;
        if (guidance->jacobian_mode == JacobianMode::exact) {
          DenoiserParams scratch = DenoiserParams::zeros_like(model_->params);
          std::vector<VectorXd> input_grads;
          pass.backward({energy_grad}, scratch, &input_grads);
          grad_x = std::move(input_grads.front());
        } else {
          grad_x = std::move(energy_grad);
        }
        POSESPACE_CHECK(grad_x.allFinite(), NumericalError,
                        "non-finite guidance gradient at t=" + std::to_string(t));
        x -= guidance->scale * (1.0 - ab_t) * grad_x;
      }
      x0 = predict(x, t);
    }

    if (prev == 0) {
      return x0;
    }
    if (kind == SamplerKind::ddpm) {
      const double beta = 1.0 - ab_t / ab_p;
      const double coef_x0 = std::sqrt(ab_p) * beta / (1.0 - ab_t);
      const double coef_xt = std::sqrt(ab_t / ab_p) * (1.0 - ab_p) / (1.0 - ab_t);
      const double var = beta * (1.0 - ab_p) / (1.0 - ab_t);
      x = coef_x0 * x0 + coef_xt * x + std::sqrt(var) * rng->normal_vector(x.size());
    } else {
      const VectorXd eps = (x - std::sqrt(ab_t) * x0) / std::sqrt(1.0 - ab_t);
      x = std::sqrt(ab_p) * x0 + std::sqrt(1.0 - ab_p) * eps;
    }
  }
  return x;
}

Pose PoseSpace::sample(int steps, uint64_t seed, SamplerKind kind) const {
  const std::vector<int> grid = schedule_.timesteps(steps);
  Rng rng(seed);
  VectorXd x = rng.normal_vector(dimension());
  return denormalize(run_sampler(std::move(x), grid, kind, &rng, nullptr, nullptr));
}

VectorXd PoseSpace::ddim_invert(const Pose& pose, int steps) const {
  const std::vector<int> grid = schedule_.timesteps(steps);
  VectorXd x = normalize(pose);
  int current = 0;
  for (int t : grid) {
    const double ab_c = schedule_.alpha_bar(current);
    const double ab_n = schedule_.alpha_bar(t);
    const VectorXd x0_model = predict(x, t);
    const VectorXd eps = (x - std::sqrt(ab_n) * x0_model) / std::sqrt(1.0 - ab_n);
    const VectorXd x0 = (x - std::sqrt(1.0 - ab_c) * eps) / std::sqrt(ab_c);
    x = std::sqrt(ab_n) * x0 + std::sqrt(1.0 - ab_n) * eps;
    current = t;
  }
  return x;
}

Pose PoseSpace::ddim_decode(const VectorXd& latent, int steps) const {
  POSESPACE_CHECK(latent.size() == dimension(), DataError, "latent has the wrong dimension");
  return denormalize(run_sampler(latent, schedule_.timesteps(steps), SamplerKind::ddim, nullptr, nullptr, nullptr));
}

Pose PoseSpace::guided_sample(const ConstraintSet& constraints, const GuidanceConfig& cfg, uint64_t seed,
                              SamplerKind kind, const std::optional<VectorXd>& init_latent) const {
  POSESPACE_CHECK(cfg.scale >= 0.0 && std::isfinite(cfg.scale), UsageError, "guidance scale must be non-negative");
  POSESPACE_CHECK(cfg.inner_steps >= 1, UsageError, "guidance needs at least one inner step");
  for (const Constraint& c : constraints) {
    POSESPACE_CHECK(c.node >= 0 && c.node < context_.num_nodes(), DataError,
                    "constraint node " + std::to_string(c.node) + " out of range");
    POSESPACE_CHECK(c.target.allFinite() && std::isfinite(c.weight) && c.weight >= 0.0, DataError,
                    "constraint target and weight must be finite, weight non-negative");
  }
  const std::vector<int> grid = schedule_.timesteps(cfg.steps);
  Rng rng(seed);
  VectorXd x;
  if (init_latent) {
    POSESPACE_CHECK(init_latent->size() == dimension(), DataError, "latent has the wrong dimension");
    x = *init_latent;
  } else {
    x = rng.normal_vector(dimension());
  }
  return denormalize(run_sampler(std::move(x), grid, kind, &rng, &constraints, &cfg));
}

Pose PoseSpace::project(const Pose& pose, double t_proj, int steps, uint64_t seed) const {
  POSESPACE_CHECK(t_proj > 0.0 && t_proj <= 1.0, UsageError, "t_proj must be in (0, 1]");
  const int total = schedule_.num_steps();
  const int t = std::clamp(static_cast<int>(std::lround(t_proj * total)), 1, total);
  const int sub_steps = std::clamp(static_cast<int>(std::lround(static_cast<double>(steps) * t / total)), 1, t);
  Rng rng(seed);
  const VectorXd noise = rng.normal_vector(dimension());
  VectorXd x = q_sample(normalize(pose), t, noise, schedule_);
  return denormalize(run_sampler(std::move(x), schedule_.timesteps(sub_steps, t), SamplerKind::ddpm, &rng, nullptr,
                                 nullptr));
}

std::vector<Pose> PoseSpace::decode_latents(const std::vector<VectorXd>& latents, int steps) const {
  std::vector<Pose> poses(latents.size());
  parallel_for(latents.size(), [&](size_t i) { poses[i] = ddim_decode(latents[i], steps); });
  return poses;
}

std::vector<Pose> PoseSpace::interpolate(const Pose& a, const Pose& b, int frames, int steps) const {
  POSESPACE_CHECK(frames >= 2, UsageError, "interpolation needs at least two frames");
  const VectorXd za = ddim_invert(a, steps);
  const VectorXd zb = ddim_invert(b, steps);
  std::vector<VectorXd> latents;
  for (int k = 0; k < frames; ++k) {
    latents.push_back(slerp(za, zb, static_cast<double>(k) / (frames - 1)));
  }
  return decode_latents(latents, steps);
}

std::vector<Pose> PoseSpace::walk(int length, double rho, int steps, uint64_t seed) const {
  return decode_latents(latent_walk(dimension(), length, rho, seed), steps);
}

// ---------------------------------------------------------------------------

namespace {

struct Adam {
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

  DenoiserParams m;
  DenoiserParams v;
  long step = 0;

  explicit Adam(const DenoiserParams& shape) : m(DenoiserParams::zeros_like(shape)), v(DenoiserParams::zeros_like(shape)) {}

  void update(DenoiserParams& params, DenoiserParams& grad, double lr) {
    ++step;
    const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(step));
    const auto p = params.tensors();
    const auto g = grad.tensors();
    const auto mt = m.tensors();
    const auto vt = v.tensors();
    for (size_t i = 0; i < p.size(); ++i) {
      Eigen::Map<VectorXd> pi(p[i].data, p[i].size());
      Eigen::Map<const VectorXd> gi(g[i].data, g[i].size());
      Eigen::Map<VectorXd> mi(mt[i].data, mt[i].size());
      Eigen::Map<VectorXd> vi(vt[i].data, vt[i].size());
      mi = kBeta1 * mi + (1.0 - kBeta1) * gi;
      vi = kBeta2 * vi + (1.0 - kBeta2) * gi.cwiseAbs2();
      if (lr != 0.0) {
        pi.array() -= lr * (mi.array() / bc1) / ((vi.array() / bc2).sqrt() + kEps);
      }
    }
  }
};

void zero(DenoiserParams& params) {
  for (const TensorView& t : params.tensors()) {
    Eigen::Map<VectorXd>(t.data, t.size()).setZero();
  }
}

}  // namespace

TrainResult train(const DenoiserModel& model, const std::vector<TrainingSample>& dataset,
                  const DiffusionSchedule& schedule, const TrainConfig& cfg) {
  POSESPACE_CHECK(!dataset.empty(), DataError, "training dataset is empty");
  POSESPACE_CHECK(cfg.batch >= 1, UsageError, "batch must be positive");
  POSESPACE_CHECK(cfg.lr >= 0.0, UsageError, "learning rate must be non-negative");
  POSESPACE_CHECK(cfg.validation_fraction >= 0.0 && cfg.validation_fraction < 1.0, UsageError,
                  "validation fraction must be in [0, 1)");
  POSESPACE_CHECK(model.stats.sigma_p > 0.0, DataError, "model stats must carry sigma_p");

  // One conditioning context per distinct (asset, features) pair.
  std::vector<SkeletonContext> contexts;
  std::vector<std::pair<const Asset*, const NodeFeatures*>> keys;
  std::vector<size_t> context_of(dataset.size());
  std::vector<VectorXd> targets(dataset.size());
  for (size_t i = 0; i < dataset.size(); ++i) {
    const TrainingSample& s = dataset[i];
    const auto key = std::make_pair(s.asset, s.features);
    auto it = std::find(keys.begin(), keys.end(), key);
    if (it == keys.end()) {
      keys.push_back(key);
      contexts.push_back(make_context(model.config, s.asset->skeleton.nodes(), s.asset->skeleton.edges(),
                                      s.features->rows));
      it = keys.end() - 1;
    }
    context_of[i] = static_cast<size_t>(it - keys.begin());
    targets[i] = normalize_pose(*s.asset, s.pose, model.stats);
  }

  Rng rng(cfg.seed);
  // Deterministic train/validation split.
  std::vector<size_t> order(dataset.size());
  for (size_t i = 0; i < order.size(); ++i) {
    order[i] = i;
  }
  const auto n_val = static_cast<size_t>(cfg.validation_fraction * static_cast<double>(dataset.size()));
  if (n_val > 0) {
    for (size_t i = order.size() - 1; i > 0; --i) {
      std::swap(order[i], order[rng.uniform_index(i + 1)]);
    }
  }
  const std::vector<size_t> val_idx(order.end() - static_cast<std::ptrdiff_t>(n_val), order.end());
  const std::vector<size_t> train_idx(order.begin(), order.end() - static_cast<std::ptrdiff_t>(n_val));
  POSESPACE_CHECK(!train_idx.empty(), DataError, "validation split leaves no training data");

  const int steps = cfg.steps > 0
                        ? cfg.steps
                        : cfg.epochs * static_cast<int>((train_idx.size() + static_cast<size_t>(cfg.batch) - 1) /
                                                        static_cast<size_t>(cfg.batch));
  POSESPACE_CHECK(steps >= 1, UsageError, "training needs at least one step");

  // Fixed validation noise so evaluations are comparable across steps.
  std::vector<BatchItem> val_items;
  std::vector<VectorXd> val_targets;
  {
    Rng val_rng(derive_seed(cfg.seed, 0x7a11dULL));
    for (size_t idx : val_idx) {
      const int t = 1 + static_cast<int>(val_rng.uniform_index(static_cast<uint64_t>(schedule.num_steps())));
      const VectorXd noise = val_rng.normal_vector(targets[idx].size());
      val_items.push_back(BatchItem{&contexts[context_of[idx]], q_sample(targets[idx], t, noise, schedule), t});
      val_targets.push_back(targets[idx]);
    }
  }

  TrainResult result;
  result.model = model;
  DenoiserModel& current = result.model;
  DenoiserModel best = model;
  double best_val = std::numeric_limits<double>::infinity();
  Adam adam(current.params);
  DenoiserParams grad = DenoiserParams::zeros_like(current.params);

  auto validation_loss = [&]() {
    double total = 0.0;
    const size_t chunk = 256;
    for (size_t start = 0; start < val_items.size(); start += chunk) {
      const size_t end = std::min(val_items.size(), start + chunk);
      const std::vector<BatchItem> part(val_items.begin() + static_cast<std::ptrdiff_t>(start),
                                        val_items.begin() + static_cast<std::ptrdiff_t>(end));
      const BatchForward pass(current, part);
      for (size_t i = 0; i < part.size(); ++i) {
        total += (pass.output(i) - val_targets[start + i]).squaredNorm();
      }
    }
    return total / static_cast<double>(val_items.size());
  };

  std::vector<BatchItem> items(static_cast<size_t>(cfg.batch));
  std::vector<size_t> picked(static_cast<size_t>(cfg.batch));
  std::vector<VectorXd> cotangents(static_cast<size_t>(cfg.batch));
  for (int step = 0; step < steps; ++step) {
    for (int b = 0; b < cfg.batch; ++b) {
      const size_t idx = train_idx[rng.uniform_index(train_idx.size())];
      const int t = 1 + static_cast<int>(rng.uniform_index(static_cast<uint64_t>(schedule.num_steps())));
      const VectorXd noise = rng.normal_vector(targets[idx].size());
      picked[static_cast<size_t>(b)] = idx;
      items[static_cast<size_t>(b)] = BatchItem{&contexts[context_of[idx]], q_sample(targets[idx], t, noise, schedule), t};
    }
    const BatchForward pass(current, items);
    double loss = 0.0;
    for (size_t b = 0; b < items.size(); ++b) {
      const VectorXd residual = pass.output(b) - targets[picked[b]];
      loss += residual.squaredNorm();
      cotangents[b] = (2.0 / cfg.batch) * residual;
    }
    loss /= cfg.batch;
    if (!std::isfinite(loss)) {
      throw NumericalError("training loss became non-finite at step " + std::to_string(step));
    }
    result.loss_curve.push_back(loss);

    zero(grad);
    pass.backward(cotangents, grad, nullptr);
    const double progress = static_cast<double>(step) / steps;
    const double lr = cfg.lr * (cfg.final_lr_fraction +
                                (1.0 - cfg.final_lr_fraction) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress)));
    adam.update(current.params, grad, lr);

    if (cfg.log_interval > 0 && (step + 1) % cfg.log_interval == 0) {
      std::fprintf(stderr, "train step %d loss %.6f\n", step + 1, loss);
    }
    const bool last = step + 1 == steps;
    if (!val_items.empty() && ((step + 1) % cfg.eval_interval == 0 || last)) {
      const double val = validation_loss();
      result.validation_curve.push_back(val);
      if (val < best_val) {
        best_val = val;
        best = current;
        result.best_step = step + 1;
      }
    }
  }
  if (!current.params.all_finite()) {
    throw NumericalError("training produced non-finite parameters");
  }
  if (cfg.keep_best && result.best_step > 0) {
    result.model = std::move(best);
  } else {
    result.best_step = steps;
  }
  return result;
}

}  // namespace posespace
