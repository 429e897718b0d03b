#include "posespace/fit.h"

#include <cmath>
#include <deque>
#include <limits>
#include <numbers>

namespace posespace {

namespace {

constexpr int kConvergenceWindow = 10;
constexpr double kMinEdgeLength = 1e-9;

void check_target(const Asset& asset, const Mesh& target) {
  POSESPACE_CHECK(target.num_vertices() == asset.mesh.num_vertices(), DataError,
                  "target has " + std::to_string(target.num_vertices()) + " vertices, asset has " +
                      std::to_string(asset.mesh.num_vertices()));
}

}  // namespace

void FitConfig::validate() const {
  POSESPACE_CHECK(lambda >= 0.0 && std::isfinite(lambda), UsageError, "lambda must be non-negative");
  POSESPACE_CHECK(max_iters > 0, UsageError, "max_iters must be positive");
  POSESPACE_CHECK(learning_rate > 0.0, UsageError, "learning_rate must be positive");
  POSESPACE_CHECK(convergence_tol > 0.0, UsageError, "convergence_tol must be positive");
  POSESPACE_CHECK(final_lr_fraction > 0.0 && final_lr_fraction <= 1.0, UsageError,
                  "final_lr_fraction must be in (0, 1]");
  POSESPACE_CHECK(warmup_fraction >= 0.0 && warmup_fraction < 1.0, UsageError, "warmup_fraction must be in [0, 1)");
}

double loss_recon(const Asset& asset, const Pose& pose, const Mesh& target) {
  check_target(asset, target);
  const Mesh deformed = deform(asset, pose);
  return (deformed.vertices - target.vertices).rowwise().squaredNorm().mean();
}

double loss_edge(const Asset& asset, const Pose& pose) {
  const Skeleton& skel = asset.skeleton;
  if (skel.num_edges() == 0) {
    return 0.0;
  }
  const Eigen::VectorXd rest = edge_lengths(skel, skel.nodes());
  const Eigen::VectorXd posed = edge_lengths(skel, pose.nodes);
  return (rest - posed).cwiseAbs().mean();
}

LossAndGradient fit_objective(const Asset& asset, const Pose& pose, const Mesh& target, double lambda) {
  check_target(asset, target);
  const Skeleton& skel = asset.skeleton;
  LossAndGradient out;

  const Mesh deformed = deform(asset, pose);
  const Points residual = deformed.vertices - target.vertices;
  const double nv = static_cast<double>(residual.rows());
  out.recon = residual.rowwise().squaredNorm().sum() / nv;
  out.gradient = deform_vjp(asset, pose, (2.0 / nv) * residual);

  if (skel.num_edges() > 0) {
    const double ne = static_cast<double>(skel.num_edges());
    double edge_sum = 0.0;
    for (const Edge& e : skel.edges()) {
      const double rest_len = (skel.nodes().row(e.parent) - skel.nodes().row(e.child)).norm();
      const Eigen::RowVector3d d = pose.nodes.row(e.parent) - pose.nodes.row(e.child);
      const double len = d.norm();
      const double diff = rest_len - len;
      edge_sum += std::abs(diff);
      // d|rest - len|/dlen = -sign(diff); sign(0) = 0 and degenerate edges get no gradient.
      if (diff == 0.0 || len < kMinEdgeLength) {
        continue;
      }
      const double coeff = lambda * (diff > 0.0 ? -1.0 : 1.0) / ne;
      out.gradient.row(e.parent) += coeff * d / len;
      out.gradient.row(e.child) -= coeff * d / len;
    }
    out.edge = edge_sum / ne;
  }
  out.total = out.recon + lambda * out.edge;
  return out;
}

FitResult fit_pose(const Asset& asset, const Mesh& target, const Pose& init, const FitConfig& cfg) {
  cfg.validate();
  check_target(asset, target);
  POSESPACE_CHECK(init.num_nodes() == asset.skeleton.num_nodes(), DataError,
                  "initial pose node count does not match the skeleton");

  constexpr double kBeta1 = 0.9;
  constexpr double kBeta2 = 0.999;
  constexpr double kEps = 1e-8;

  // Phase 0 optimizes the reconstruction alone, phase 1 the full objective.
  // The |.| edge term's constant-magnitude subgradient otherwise dominates
  // Adam's second moment and stalls the fit near the initial pose.
  const int warmup = cfg.lambda > 0.0 ? static_cast<int>(std::lround(cfg.warmup_fraction * cfg.max_iters)) : 0;
  const int phase_iters[2] = {warmup, cfg.max_iters - warmup};

  Pose current = init;
  FitResult best;
  best.pose = current;
  double best_total = std::numeric_limits<double>::infinity();
  auto score = [&](const LossAndGradient& eval) {
    const double total = eval.recon + cfg.lambda * eval.edge;
    if (std::isfinite(total) && total < best_total) {
      best_total = total;
      best.pose = current;
      best.final_recon_loss = eval.recon;
      best.final_edge_loss = eval.edge;
    }
    return total;
  };

  int used = 0;
  for (int phase = 0; phase < 2; ++phase) {
    const int iters = phase_iters[phase];
    if (iters == 0) {
      continue;
    }
    const double lambda = phase == 0 ? 0.0 : cfg.lambda;
    Points m = Points::Zero(current.num_nodes(), 3);
    Points v = Points::Zero(current.num_nodes(), 3);
    std::deque<double> history;
    bool stop = false;
    int iter = 0;
    for (; iter < iters; ++iter, ++used) {
      const LossAndGradient eval = fit_objective(asset, current, target, lambda);
      if (!std::isfinite(eval.total) || !eval.gradient.allFinite()) {
        throw FitDivergence("pose fit diverged at iteration " + std::to_string(used), best.pose);
      }
      const double total = score(eval);
      if (total == 0.0) {
        best.converged = true;
        stop = true;
        break;
      }
      history.push_back(eval.total);
      if (static_cast<int>(history.size()) > kConvergenceWindow) {
        const double old = history.front();
        history.pop_front();
        if (std::abs(old - eval.total) <= cfg.convergence_tol * old) {
          best.converged = phase == 1;
          break;
        }
      }

      const double progress = static_cast<double>(iter) / static_cast<double>(iters);
      const double lr = cfg.learning_rate * (cfg.final_lr_fraction + (1.0 - cfg.final_lr_fraction) * 0.5 *
                                                                            (1.0 + std::cos(std::numbers::pi * progress)));
      m = kBeta1 * m + (1.0 - kBeta1) * eval.gradient;
      v = kBeta2 * v + (1.0 - kBeta2) * eval.gradient.cwiseProduct(eval.gradient);
      const double bc1 = 1.0 - std::pow(kBeta1, iter + 1);
      const double bc2 = 1.0 - std::pow(kBeta2, iter + 1);
      current.nodes -= (lr * (m / bc1).array() / ((v / bc2).array().sqrt() + kEps)).matrix();
    }
    if (stop) {
      break;
    }
    if (iter == iters) {
      // Score the iterate produced by the last update.
      const LossAndGradient eval = fit_objective(asset, current, target, lambda);
      if (std::isfinite(eval.total)) {
        score(eval);
      }
    }
  }
  best.iterations_used = used;
  return best;
}

std::vector<FitResult> fit_sequence(const Asset& asset, const std::vector<Mesh>& targets, const FitConfig& cfg) {
  std::vector<FitResult> results;
  results.reserve(targets.size());
  Pose init = rest_pose(asset);
  for (const Mesh& target : targets) {
    results.push_back(fit_pose(asset, target, init, cfg));
    init = results.back().pose;
  }
  return results;
}

}  // namespace posespace
