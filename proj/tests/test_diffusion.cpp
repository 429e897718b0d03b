#include "helpers.h"

#include "posespace/diffusion.h"
#include "posespace/error.h"
#include "posespace/parallel.h"

#include <doctest.h>

using namespace posespace;
using namespace posespace::testing;

namespace {

DenoiserConfig tiny_config() {
  DenoiserConfig cfg;
  cfg.d_model = 16;
  cfg.n_heads = 2;
  cfg.n_layers = 1;
  cfg.d_ff = 32;
  cfg.n_f = 4;
  cfg.max_graph_dist = 4;
  return cfg;
}

DenoiserModel random_model(uint64_t seed) {
  DenoiserModel m = init_params(tiny_config(), seed);
  Rng rng(seed);
  m.params.decode.weight = Eigen::MatrixXd::NullaryExpr(3, 16, [&]() { return 0.3 * rng.normal(); });
  m.params.decode.bias = Eigen::Vector3d(0.1, -0.2, 0.05);
  m.stats.sigma_p = 0.5;
  return m;
}

struct Fixture {
  Asset asset = chain_asset(3);
  NodeFeatures features = aggregate_node_features(asset, synth_features(asset, 4, 1));
};

}  // namespace

TEST_CASE("linear schedule invariants") {
  const DiffusionSchedule s = DiffusionSchedule::linear();
  CHECK(s.num_steps() == 1000);
  CHECK(s.alpha_bar(0) == 1.0);
  CHECK(s.alpha_bar(1) > 0.999);
  CHECK(s.alpha_bar(1000) < 0.01);
  for (int t = 1; t <= 1000; ++t) CHECK(s.alpha_bar(t) < s.alpha_bar(t - 1));
  CHECK(s.beta(1) == doctest::Approx(1e-4));
  CHECK(s.beta(1000) == doctest::Approx(0.02));
  CHECK(s.timesteps(4) == std::vector<int>{250, 500, 750, 1000});
  CHECK(s.timesteps(3, 400) == std::vector<int>{133, 266, 400});
  CHECK(s.timesteps(1).back() == 1000);
  CHECK_THROWS_AS(s.timesteps(1001), UsageError);
  CHECK_THROWS_AS(s.timesteps(0), UsageError);
}

TEST_CASE("forward noising") {
  const DiffusionSchedule s = DiffusionSchedule::linear();
  const Eigen::VectorXd x0 = Eigen::VectorXd::Constant(6, 2.0);
  const Eigen::VectorXd noise = Eigen::VectorXd::LinSpaced(6, -1.0, 1.0);
  const Eigen::VectorXd xt = q_sample(x0, 300, noise, s);
  const double ab = s.alpha_bar(300);
  CHECK((xt - (std::sqrt(ab) * x0 + std::sqrt(1 - ab) * noise)).norm() < 1e-15);
  CHECK_THROWS_AS(q_sample(x0, 0, noise, s), UsageError);
}

TEST_CASE("untrained model samples the rest pose") {
  Fixture f;
  DenoiserModel m = init_params(tiny_config(), 2);
  m.stats.sigma_p = 0.3;
  const PoseSpace space(m, f.asset, f.features);
  for (SamplerKind kind : {SamplerKind::ddpm, SamplerKind::ddim}) {
    const Pose p = space.sample(20, 5, kind);
    CHECK((p.nodes - f.asset.skeleton.nodes()).cwiseAbs().maxCoeff() == 0.0);
  }
  CHECK((space.project(rest_pose(f.asset), 0.4, 50, 1).nodes - f.asset.skeleton.nodes()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("constant predictor is a fixed point of every sampler") {
  Fixture f;
  DenoiserModel m = init_params(tiny_config(), 2);
  m.params.decode.bias = Eigen::Vector3d(0.3, -0.1, 0.2);
  m.stats.sigma_p = 0.5;
  const PoseSpace space(m, f.asset, f.features);
  Eigen::VectorXd c(12);
  for (int i = 0; i < 4; ++i) c.segment<3>(3 * i) = m.params.decode.bias;
  const Pose expected = space.denormalize(c);
  CHECK((space.sample(10, 1).nodes - expected.nodes).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((space.sample(10, 2, SamplerKind::ddim).nodes - expected.nodes).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((space.project(rest_pose(f.asset), 0.4, 100, 3).nodes - expected.nodes).cwiseAbs().maxCoeff() < 1e-12);
  // Inverting and decoding the fixed point returns it.
  const Eigen::VectorXd z = space.ddim_invert(expected, 25);
  CHECK((space.ddim_decode(z, 25).nodes - expected.nodes).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("single-step inversion with a zero model") {
  Fixture f;
  DenoiserModel m = init_params(tiny_config(), 2);
  m.stats.sigma_p = 0.5;
  const PoseSpace space(m, f.asset, f.features);
  Rng rng(4);
  const Pose pose = perturbed(f.asset, rng, 0.1);
  const Eigen::VectorXd x = space.normalize(pose);
  const double ab = space.schedule().alpha_bar(1000);
  // eps = x / sqrt(1 - ab) and x0 = x, so z = sqrt(ab) x + x.
  CHECK((space.ddim_invert(pose, 1) - (std::sqrt(ab) + 1.0) * x).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("sampling is deterministic in the seed") {
  Fixture f;
  const DenoiserModel m = random_model(3);
  const PoseSpace space(m, f.asset, f.features);
  const Pose a = space.sample(20, 11);
  const Pose b = space.sample(20, 11);
  const Pose c = space.sample(20, 12);
  CHECK(a.nodes == b.nodes);
  CHECK(a.nodes != c.nodes);
  CHECK(a.nodes.allFinite());
}

TEST_CASE("guidance without effect matches unguided sampling bit for bit") {
  Fixture f;
  const DenoiserModel m = random_model(4);
  const PoseSpace space(m, f.asset, f.features);
  GuidanceConfig cfg;
  cfg.steps = 20;
  const Pose plain = space.sample(20, 9);
  CHECK(space.guided_sample({}, cfg, 9).nodes == plain.nodes);
  cfg.scale = 0.0;
  const ConstraintSet cs{space.constraint_from_asset_target(3, Vec3(3.0, 1.0, 0.0), 1.0)};
  CHECK(space.guided_sample(cs, cfg, 9).nodes == plain.nodes);
  CHECK(space.guided_sample(cs, cfg, 9, SamplerKind::ddim).nodes == space.sample(20, 9, SamplerKind::ddim).nodes);
}

TEST_CASE("guidance pulls the constrained node towards its target") {
  Fixture f;
  const DenoiserModel m = random_model(5);
  const PoseSpace space(m, f.asset, f.features);
  const Vec3 target(3.2, 0.4, 0.0);
  const ConstraintSet cs{space.constraint_from_asset_target(3, target, 1.0)};
  GuidanceConfig cfg;
  cfg.steps = 20;
  // A mild scale: steps on P^t overshoot through this untrained model.
  cfg.scale = 0.03;
  const Pose plain = space.sample(20, 1, SamplerKind::ddim);
  for (JacobianMode mode : {JacobianMode::exact, JacobianMode::identity}) {
    cfg.jacobian_mode = mode;
    const Pose guided = space.guided_sample(cs, cfg, 1, SamplerKind::ddim);
    CHECK((guided.nodes.row(3).transpose() - target).norm() < (plain.nodes.row(3).transpose() - target).norm());
  }
  cfg.scale = -1.0;
  CHECK_THROWS_AS(space.guided_sample(cs, cfg, 1), UsageError);
  CHECK_THROWS_AS(space.constraint_from_asset_target(7, target, 1.0), DataError);
}

TEST_CASE("uncorrelated walk decodes like independent samples") {
  Fixture f;
  const DenoiserModel m = random_model(6);
  const PoseSpace space(m, f.asset, f.features);
  const std::vector<Pose> walk = space.walk(4, 0.0, 10, 77);
  for (int k = 0; k < 4; ++k) {
    CHECK(walk[k].nodes == space.sample(10, derive_seed(77, static_cast<uint64_t>(k)), SamplerKind::ddim).nodes);
  }
  set_max_threads(4);
  const std::vector<Pose> threaded = space.walk(4, 0.0, 10, 77);
  set_max_threads(1);
  for (int k = 0; k < 4; ++k) CHECK(threaded[k].nodes == walk[k].nodes);
}

TEST_CASE("latent walk statistics") {
  const double rho = 0.7;
  const auto z = latent_walk(1, 20000, rho, 3);
  double mean = 0.0, var = 0.0, lag = 0.0;
  for (const auto& v : z) mean += v[0];
  mean /= static_cast<double>(z.size());
  for (size_t k = 0; k < z.size(); ++k) {
    var += (z[k][0] - mean) * (z[k][0] - mean);
    if (k > 0) lag += (z[k][0] - mean) * (z[k - 1][0] - mean);
  }
  CHECK(std::abs(mean) < 0.1);
  CHECK(var / static_cast<double>(z.size()) == doctest::Approx(1.0).epsilon(0.1));
  CHECK(std::abs(lag / var - rho) < 0.05);
  CHECK_THROWS_AS(latent_walk(1, 3, 1.0, 0), UsageError);
}

TEST_CASE("slerp endpoints and degenerate fallback") {
  const Eigen::Vector3d a(1, 0, 0), b(0, 2, 0);
  CHECK((slerp(a, b, 0.0) - a).norm() < 1e-15);
  CHECK((slerp(a, b, 1.0) - b).norm() < 1e-15);
  const Eigen::VectorXd mid = slerp(a, b, 0.5);
  CHECK(mid[0] == doctest::Approx(mid[1] / 2.0));
  const Eigen::Vector3d c(3, 0, 0);
  const Eigen::VectorXd par = slerp(a, c, 0.5);
  CHECK(par[0] == doctest::Approx(std::sqrt(3.0)));
  CHECK(slerp(a, -a, 0.5).norm() == 0.0);
}

TEST_CASE("interpolation endpoints decode the inverted poses") {
  Fixture f;
  const DenoiserModel m = random_model(7);
  const PoseSpace space(m, f.asset, f.features);
  const Pose a = space.sample(10, 1, SamplerKind::ddim);
  const Pose b = space.sample(10, 2, SamplerKind::ddim);
  const auto frames = space.interpolate(a, b, 5, 10);
  REQUIRE(frames.size() == 5);
  CHECK(frames.front().nodes == space.ddim_decode(space.ddim_invert(a, 10), 10).nodes);
  CHECK(frames.back().nodes == space.ddim_decode(space.ddim_invert(b, 10), 10).nodes);
  CHECK_THROWS_AS(space.interpolate(a, b, 1, 10), UsageError);
}

TEST_CASE("training with zero learning rate keeps a constant loss") {
  Fixture f;
  DenoiserModel m = init_params(tiny_config(), 8);
  m.stats.sigma_p = 1.0;
  Rng rng(1);
  const Pose pose = perturbed(f.asset, rng, 0.3);
  TrainConfig cfg;
  cfg.steps = 5;
  cfg.batch = 4;
  cfg.lr = 0.0;
  const TrainResult r = train(m, {{&f.asset, &f.features, pose}}, DiffusionSchedule::linear(), cfg);
  const double expected = (pose.nodes - f.asset.skeleton.nodes()).squaredNorm();
  REQUIRE(r.loss_curve.size() == 5);
  for (double l : r.loss_curve) CHECK(l == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("training fits a single pose") {
  Fixture f;
  DenoiserModel m = init_params(tiny_config(), 9);
  m.stats.sigma_p = 0.3;
  Rng rng(2);
  const Pose pose = perturbed(f.asset, rng, 0.3);
  TrainConfig cfg;
  cfg.steps = 2000;
  cfg.batch = 8;
  cfg.lr = 1e-2;
  cfg.final_lr_fraction = 0.01;
  const std::vector<TrainingSample> data{{&f.asset, &f.features, pose}};
  const TrainResult r = train(m, data, DiffusionSchedule::linear(), cfg);
  double tail = 0.0;
  for (size_t i = r.loss_curve.size() - 50; i < r.loss_curve.size(); ++i) tail += r.loss_curve[i];
  CHECK(tail / 50.0 < 1e-3);
  CHECK(r.loss_curve.front() > 1.0);
  const TrainResult again = train(m, data, DiffusionSchedule::linear(), cfg);
  CHECK(again.loss_curve == r.loss_curve);
  const PoseSpace space(r.model, f.asset, f.features);
  CHECK((space.sample(20, 1, SamplerKind::ddim).nodes - pose.nodes).cwiseAbs().maxCoeff() < 0.05);
}

TEST_CASE("validation split and best checkpoint selection") {
  Fixture f;
  DenoiserModel m = init_params(tiny_config(), 10);
  m.stats.sigma_p = 0.3;
  Rng rng(3);
  std::vector<TrainingSample> data;
  for (int i = 0; i < 20; ++i) data.push_back({&f.asset, &f.features, perturbed(f.asset, rng, 0.1)});
  TrainConfig cfg;
  cfg.steps = 40;
  cfg.batch = 4;
  cfg.lr = 1e-3;
  cfg.validation_fraction = 0.25;
  cfg.eval_interval = 10;
  cfg.keep_best = true;
  const TrainResult r = train(m, data, DiffusionSchedule::linear(), cfg);
  CHECK(r.validation_curve.size() == 4);
  CHECK(r.best_step > 0);
  CHECK(r.best_step % 10 == 0);
}

TEST_CASE("non-finite training data is a numerical failure") {
  Fixture f;
  DenoiserModel m = init_params(tiny_config(), 11);
  m.stats.sigma_p = 1.0;
  Pose bad = rest_pose(f.asset);
  bad.nodes(1, 1) = std::nan("");
  TrainConfig cfg;
  cfg.steps = 2;
  CHECK_THROWS_AS(train(m, {{&f.asset, &f.features, bad}}, DiffusionSchedule::linear(), cfg), NumericalError);
  CHECK_THROWS_AS(train(m, {}, DiffusionSchedule::linear(), cfg), DataError);
}
