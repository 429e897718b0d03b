#include "helpers.h"

#include "posespace/asset_io.h"
#include "posespace/error.h"
#include "posespace/geometry.h"
#include "posespace/json_io.h"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace posespace;
using namespace posespace::testing;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Json two_node_doc() {
  return Json::parse(R"({
    "mesh": {"vertices": [[0,0,0],[2,0,0],[0,2,0],[2,2,2]], "faces": [[0,1,2],[1,2,3]]},
    "skeleton": {"nodes": [[0,0,0],[2,2,2]], "edges": [[0,1]],
                 "weights": [[0,0,1.0],[1,1,2.0],[0,2,1.0],[1,2,1.0]]}
  })");
}

}  // namespace

TEST_CASE("identity pose reproduces the rest mesh") {
  Rng rng(1);
  for (int trial = 0; trial < 5; ++trial) {
    const Asset asset = random_asset(rng, 6, 40);
    const Mesh out = deform(asset, rest_pose(asset));
    CHECK((out.vertices - asset.mesh.vertices).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("deform is translation equivariant") {
  Rng rng(2);
  const Asset asset = random_asset(rng, 7, 50);
  Pose pose = perturbed(asset, rng, 0.2);
  const Mesh base = deform(asset, pose);
  const Eigen::RowVector3d shift(0.3, -1.7, 2.5);
  pose.nodes.rowwise() += shift;
  const Mesh moved = deform(asset, pose);
  CHECK(((moved.vertices.rowwise() - shift) - base.vertices).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("two-bone rotation matches the closed form") {
  const Asset asset = chain_asset(2);
  for (double theta : {0.3, 1.0, 2.5, -0.7}) {
    Pose pose = rest_pose(asset);
    const Vec3 elbow = pose.nodes.row(1).transpose();
    pose.nodes.row(2) = (elbow + rot_z(theta) * Vec3(1, 0, 0)).transpose();
    const Mesh out = deform(asset, pose);
    // Node 0 and 1 keep their orientation; node 2 turns by theta about z.
    for (Eigen::Index v = 0; v < asset.mesh.num_vertices(); ++v) {
      const Vec3 x = asset.mesh.vertices.row(v).transpose();
      Vec3 expected = Vec3::Zero();
      for (Skeleton::Weights::InnerIterator it(asset.skeleton.weights(), static_cast<int>(v)); it; ++it) {
        const int i = static_cast<int>(it.row());
        const Vec3 rest = asset.skeleton.nodes().row(i).transpose();
        const Vec3 posed = pose.nodes.row(i).transpose();
        const Mat3 r = i == 2 ? rot_z(theta) : Mat3::Identity();
        expected += it.value() * (r * (x - rest) + posed);
      }
      CHECK((out.vertices.row(v).transpose() - expected).norm() <= 1e-9);
    }
  }
}

TEST_CASE("minimal rotation maps from onto to") {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const Vec3 a = rng.normal_vector(3).normalized();
    const Vec3 b = rng.normal_vector(3).normalized();
    const Mat3 r = minimal_rotation(a, b);
    CHECK((r * a - b).norm() < 1e-12);
    CHECK((r.transpose() * r - Mat3::Identity()).norm() < 1e-12);
    CHECK(r.determinant() == doctest::Approx(1.0).epsilon(1e-12));
    // Axis of the minimal rotation is a x b: vectors along it are fixed.
    const Vec3 axis = a.cross(b);
    if (axis.norm() > 1e-6) CHECK((r * axis - axis).norm() < 1e-10);
  }
  SUBCASE("antiparallel") {
    const Vec3 a = Vec3(1, 2, 3).normalized();
    const Mat3 r = minimal_rotation(a, -a);
    CHECK((r * a + a).norm() < 1e-12);
    CHECK(r.determinant() == doctest::Approx(1.0));
  }
  SUBCASE("identity") { CHECK((minimal_rotation(Vec3::UnitY(), Vec3::UnitY()) - Mat3::Identity()).norm() == 0.0); }
}

TEST_CASE("deform vjp matches finite differences") {
  Rng rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    const Asset asset = random_asset(rng, 5, 30);
    const Pose pose = perturbed(asset, rng, 0.3);
    Points cot(asset.mesh.num_vertices(), 3);
    for (Eigen::Index i = 0; i < cot.rows(); ++i)
      for (int j = 0; j < 3; ++j) cot(i, j) = rng.normal();
    const Points grad = deform_vjp(asset, pose, cot);
    const double h = 1e-6;
    for (Eigen::Index i = 0; i < pose.nodes.rows(); ++i) {
      for (int j = 0; j < 3; ++j) {
        Pose plus = pose, minus = pose;
        plus.nodes(i, j) += h;
        minus.nodes(i, j) -= h;
        const double fd =
            ((deform(asset, plus).vertices - deform(asset, minus).vertices).cwiseProduct(cot).sum()) / (2 * h);
        CHECK(grad(i, j) == doctest::Approx(fd).epsilon(1e-6).scale(1.0));
      }
    }
  }
}

TEST_CASE("node direction conventions") {
  const Asset asset = chain_asset(2);
  Vec3 d;
  REQUIRE(node_direction(asset.skeleton, asset.skeleton.nodes(), 2, d));
  CHECK((d - Vec3(-1, 0, 0)).norm() < 1e-15);
  REQUIRE(node_direction(asset.skeleton, asset.skeleton.nodes(), 0, d));
  CHECK((d - Vec3(1, 0, 0)).norm() < 1e-15);

  // A node without parent or children keeps the identity rotation.
  Points nodes(3, 3);
  nodes << 0, 0, 0, 1, 0, 0, 5, 5, 5;
  Skeleton::Weights w(3, 3);
  w.insert(0, 0) = 1;
  w.insert(1, 1) = 1;
  w.insert(2, 2) = 1;
  const Skeleton skel(nodes, {{0, 1}}, w);
  CHECK_FALSE(node_direction(skel, nodes, 2, d));
  Points moved = nodes;
  moved.row(2) << 7, 7, 7;
  CHECK((node_rotations(skel, moved)[2] - Mat3::Identity()).norm() == 0.0);
}

TEST_CASE("normalization round trip") {
  Rng rng(5);
  const Asset asset = random_asset(rng, 6, 20);
  const Pose pose = perturbed(asset, rng, 0.1);
  const NormalizationStats stats{0.37};
  const Eigen::VectorXd x = normalize_pose(asset, pose, stats);
  CHECK(x.size() == 18);
  CHECK(x[3 * 2 + 1] == doctest::Approx((pose.nodes(2, 1) - asset.skeleton.nodes()(2, 1)) / 0.37));
  const Pose back = denormalize_pose(asset, x, stats);
  CHECK((back.nodes - pose.nodes).cwiseAbs().maxCoeff() < 1e-14);
  CHECK_THROWS_AS(normalize_pose(asset, pose, NormalizationStats{0.0}), DataError);
}

TEST_CASE("sigma_p is the mean node displacement") {
  const Asset asset = chain_asset(1);
  Pose a = rest_pose(asset);
  a.nodes(0, 0) += 3.0;
  Pose b = rest_pose(asset);
  b.nodes(1, 2) += 1.0;
  const auto stats = compute_sigma_p({{&asset, &a}, {&asset, &b}});
  CHECK(stats.sigma_p == doctest::Approx(1.0));
  const Pose r = rest_pose(asset);
  CHECK(compute_sigma_p({{&asset, &r}}).sigma_p == doctest::Approx(1e-9));
}

TEST_CASE("forest validation") {
  CHECK(is_forest(3, {{0, 1}, {1, 2}}));
  CHECK(is_forest(4, {{0, 1}, {2, 3}}));
  CHECK_FALSE(is_forest(3, {{0, 1}, {1, 2}, {2, 0}}));
  CHECK_FALSE(is_forest(3, {{0, 2}, {1, 2}}));
  CHECK_FALSE(is_forest(2, {{0, 0}}));
  CHECK_THROWS_AS(validate_forest(2, {{0, 5}}), DataError);
}

TEST_CASE("weight renormalization") {
  Points verts(3, 3);
  verts << 0, 0, 0, 1, 0, 0, 0.9, 0, 0;
  Points nodes(2, 3);
  nodes << 0, 0, 0, 1, 0, 0;
  Skeleton::Weights w(2, 3);
  w.insert(0, 0) = 2.0;
  w.insert(1, 0) = 2.0;
  w.insert(0, 1) = 0.25;
  w.insert(1, 1) = 0.75;
  const auto out = renormalize_weights(w, verts, nodes);
  CHECK(out.coeff(0, 0) == 0.5);
  CHECK(out.coeff(1, 1) == 0.75);  // already normalized: untouched
  CHECK(out.coeff(1, 2) == 1.0);   // empty column goes to the nearest node
  CHECK(out.coeff(0, 2) == 0.0);
}

TEST_CASE("asset loading normalizes and validates") {
  const Asset asset = asset_from_json(two_node_doc(), "two");
  CHECK(bbox_diagonal(asset.mesh.vertices) == doctest::Approx(1.0).epsilon(1e-14));
  const Eigen::RowVector3d center =
      0.5 * (asset.mesh.vertices.colwise().maxCoeff() + asset.mesh.vertices.colwise().minCoeff());
  CHECK(center.norm() < 1e-15);
  // Skeleton follows the mesh transform.
  CHECK((asset.skeleton.nodes().row(1) - asset.mesh.vertices.row(3)).norm() < 1e-15);
  for (int v = 0; v < 4; ++v) {
    double s = 0.0;
    for (Skeleton::Weights::InnerIterator it(asset.skeleton.weights(), v); it; ++it) s += it.value();
    CHECK(s == doctest::Approx(1.0));
  }

  Json bad = two_node_doc();
  bad["skeleton"]["edges"] = Json::parse("[[0,1],[1,0]]");
  CHECK_THROWS_AS(asset_from_json(bad), DataError);
  bad = two_node_doc();
  bad["mesh"]["faces"] = Json::parse("[[0,1,9]]");
  CHECK_THROWS_AS(asset_from_json(bad), DataError);
  bad = two_node_doc();
  bad["skeleton"]["weights"] = Json::parse("[[0,0,-1.0]]");
  CHECK_THROWS_AS(asset_from_json(bad), DataError);
  bad = two_node_doc();
  bad["mesh"]["vertices"] = Json::parse("[[1,1,1],[1,1,1],[1,1,1],[1,1,1]]");
  CHECK_THROWS_AS(asset_from_json(bad), DataError);
  bad = two_node_doc();
  bad.erase("skeleton");
  CHECK_THROWS_AS(asset_from_json(bad), DataError);
}

TEST_CASE("asset and pose files round trip byte for byte") {
  const auto dir = std::filesystem::temp_directory_path() / "posespace_geometry_test";
  std::filesystem::create_directories(dir);
  const Asset asset = asset_from_json(two_node_doc(), "two");
  save_asset(dir / "two.asset.json", asset);
  const Asset loaded = load_asset(dir / "two.asset.json");
  CHECK(loaded.name == "two");
  save_asset(dir / "two_again.asset.json", loaded);
  CHECK(slurp(dir / "two.asset.json") == slurp(dir / "two_again.asset.json"));
  CHECK((loaded.mesh.vertices - asset.mesh.vertices).cwiseAbs().maxCoeff() == 0.0);

  PoseSet set{"two", {rest_pose(asset), rest_pose(asset)}, {"a", "b"}};
  set.poses[1].nodes(0, 0) = 0.1 + 1e-17;
  save_pose_set(dir / "p.json", set);
  const PoseSet back = load_pose_set(dir / "p.json");
  CHECK(back.asset == "two");
  CHECK(back.tags == set.tags);
  CHECK(back.poses[1].nodes(0, 0) == set.poses[1].nodes(0, 0));
  save_pose_set(dir / "p2.json", back);
  CHECK(slurp(dir / "p.json") == slurp(dir / "p2.json"));

  CHECK_THROWS_AS(load_asset(dir / "missing.json"), DataError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("pose validation") {
  const Asset asset = chain_asset(2);
  Pose p{Points::Zero(2, 3)};
  CHECK_THROWS_AS(validate_pose(asset, p), DataError);
  Pose q = rest_pose(asset);
  q.nodes(1, 1) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(validate_pose(asset, q), DataError);
}

TEST_CASE("json writer uses full precision and sorted keys") {
  const Json doc{{"b", 0.1}, {"a", 1}, {"c", std::numeric_limits<double>::infinity()}};
  const std::string text = dump_json(doc, -1);
  CHECK(text == "{\"a\":1,\"b\":1.0000000000000001e-01,\"c\":null}\n");
  CHECK(Json::parse(text)["b"].get<double>() == 0.1);
}

TEST_CASE("asset names from file names") {
  CHECK(asset_name_from_path("dir/dog.asset.json") == "dog");
  CHECK(asset_name_from_path("cat.json") == "cat");
}
