#include "helpers.h"

#include "posespace/datagen.h"
#include "posespace/error.h"
#include "posespace/fit.h"

#include <doctest.h>

using namespace posespace;
using namespace posespace::testing;

namespace {

double total_loss(const Asset& asset, const Pose& pose, const Mesh& target, double lambda) {
  return loss_recon(asset, pose, target) + lambda * loss_edge(asset, pose);
}

}  // namespace

TEST_CASE("objective gradient matches central differences") {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const Asset asset = random_asset(rng, 4 + trial % 5, 30);
    const Pose truth = perturbed(asset, rng, 0.2);
    const Mesh target = deform(asset, truth);
    const Pose pose = perturbed(asset, rng, 0.2);
    const auto lg = fit_objective(asset, pose, target, 20.0);
    CHECK(lg.total == doctest::Approx(total_loss(asset, pose, target, 20.0)));
    Points fd(pose.nodes.rows(), 3);
    const double h = 1e-6;
    for (Eigen::Index i = 0; i < fd.rows(); ++i) {
      for (int j = 0; j < 3; ++j) {
        Pose plus = pose, minus = pose;
        plus.nodes(i, j) += h;
        minus.nodes(i, j) -= h;
        fd(i, j) = (total_loss(asset, plus, target, 20.0) - total_loss(asset, minus, target, 20.0)) / (2 * h);
      }
    }
    const double rel = (lg.gradient - fd).norm() / std::max(fd.norm(), 1e-12);
    CHECK(rel < 1e-5);
  }
}

TEST_CASE("losses vanish at the rest pose") {
  Rng rng(12);
  const Asset asset = random_asset(rng, 5, 20);
  const Pose rest = rest_pose(asset);
  CHECK(loss_recon(asset, rest, asset.mesh) == doctest::Approx(0.0).epsilon(1e-24));
  CHECK(loss_edge(asset, rest) == 0.0);
  const auto lg = fit_objective(asset, rest, asset.mesh, 20.0);
  CHECK(lg.gradient.cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("edge loss is the mean absolute length change") {
  const Asset asset = chain_asset(2);
  Pose p = rest_pose(asset);
  p.nodes(2, 0) = 2.5;  // second bone 1.0 -> 1.5
  CHECK(loss_edge(asset, p) == doctest::Approx(0.25));
}

TEST_CASE("fit recovers a length-preserving pose") {
  CreatureSpec spec = default_spec(CreatureTemplate::chain, 3);
  Creature creature = gen_creature(spec, 7);
  normalize_creature(creature);
  Rng rng(3);
  Eigen::VectorXd angles = sample_angles(creature, rng);
  Pose truth = pose_from_angles(creature, angles);
  // Scale the angles so no node moves more than 0.05.
  angles *= 0.05 / (truth.nodes - creature.asset.skeleton.nodes()).rowwise().norm().maxCoeff();
  truth = pose_from_angles(creature, angles);
  const Mesh target = deform(creature.asset, truth);
  const FitResult r = fit_pose(creature.asset, target, rest_pose(creature.asset), FitConfig{});
  CHECK(r.final_recon_loss < 1e-6);
  CHECK((r.pose.nodes - truth.nodes).rowwise().norm().mean() < 1e-2);
  CHECK(r.iterations_used <= 500);

  FitConfig no_warmup;
  no_warmup.warmup_fraction = 0.0;
  CHECK(fit_pose(creature.asset, target, rest_pose(creature.asset), no_warmup).iterations_used <= 500);
}

TEST_CASE("fit from the optimum keeps it") {
  Rng rng(13);
  const Asset asset = random_asset(rng, 4, 20);
  const FitResult r = fit_pose(asset, asset.mesh, rest_pose(asset), FitConfig{});
  CHECK(r.final_recon_loss == doctest::Approx(0.0).epsilon(1e-20));
  CHECK((r.pose.nodes - asset.skeleton.nodes()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("fit sequence warm starts") {
  const Asset asset = chain_asset(2);
  Pose a = rest_pose(asset);
  a.nodes.row(2) = (a.nodes.row(1).transpose() + rot_z(0.2) * Vec3::UnitX()).transpose();
  Pose b = rest_pose(asset);
  b.nodes.row(2) = (b.nodes.row(1).transpose() + rot_z(0.25) * Vec3::UnitX()).transpose();
  const auto results = fit_sequence(asset, {deform(asset, a), deform(asset, b)}, FitConfig{});
  REQUIRE(results.size() == 2);
  CHECK(results[1].final_recon_loss < 1e-6);
}

TEST_CASE("fit configuration and shape errors") {
  const Asset asset = chain_asset(2);
  FitConfig bad;
  bad.lambda = -1.0;
  CHECK_THROWS_AS(bad.validate(), UsageError);
  bad = FitConfig{};
  bad.warmup_fraction = 1.0;
  CHECK_THROWS_AS(bad.validate(), UsageError);
  bad = FitConfig{};
  bad.max_iters = 0;
  CHECK_THROWS_AS(bad.validate(), UsageError);
  Mesh wrong{Points::Zero(3, 3), {}};
  CHECK_THROWS_AS(fit_pose(asset, wrong, rest_pose(asset), FitConfig{}), DataError);
}

TEST_CASE("diverging fit reports the last finite pose") {
  const Asset asset = chain_asset(2);
  Mesh target = asset.mesh;
  target.vertices(0, 0) = 1e300;
  FitConfig cfg;
  cfg.learning_rate = 1e200;
  try {
    fit_pose(asset, target, rest_pose(asset), cfg);
    FAIL("expected divergence");
  } catch (const FitDivergence& e) {
    CHECK(e.last_finite().nodes.allFinite());
    CHECK(e.kind() == ErrorKind::Numerical);
  }
}
