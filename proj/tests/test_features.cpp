#include "helpers.h"

#include "posespace/error.h"
#include "posespace/features.h"

#include <doctest.h>

#include <set>

using namespace posespace;
using namespace posespace::testing;

TEST_CASE("node features are weight-averaged vertex features") {
  const Asset asset = chain_asset(2);
  Rng rng(5);
  VertexFeatures fv{Eigen::MatrixXd(asset.mesh.num_vertices(), 4)};
  for (Eigen::Index i = 0; i < fv.rows.size(); ++i) fv.rows.data()[i] = rng.normal();
  const NodeFeatures nf = aggregate_node_features(asset, fv);
  const Eigen::MatrixXd w = Eigen::MatrixXd(asset.skeleton.weights());
  for (Eigen::Index n = 0; n < 3; ++n) {
    const Eigen::RowVectorXd expected = (w.row(n) * fv.rows) / w.row(n).sum();
    CHECK((nf.rows.row(n) - expected).norm() < 1e-12);
  }
}

TEST_CASE("unweighted nodes receive the global mean feature") {
  Asset base = chain_asset(1);
  Points nodes(3, 3);
  nodes << 0, 0, 0, 1, 0, 0, 5, 5, 5;
  Skeleton::Weights w(3, base.mesh.num_vertices());
  std::vector<Eigen::Triplet<double>> trip;
  const Eigen::MatrixXd old = Eigen::MatrixXd(base.skeleton.weights());
  for (int v = 0; v < old.cols(); ++v)
    for (int n = 0; n < 2; ++n)
      if (old(n, v) != 0.0) trip.emplace_back(n, v, old(n, v));
  w.setFromTriplets(trip.begin(), trip.end());
  const Asset asset{"x", base.mesh, Skeleton(nodes, {{0, 1}, {1, 2}}, w)};
  VertexFeatures fv{Eigen::MatrixXd::Random(asset.mesh.num_vertices(), 4)};
  const NodeFeatures nf = aggregate_node_features(asset, fv);
  CHECK((nf.rows.row(2) - fv.rows.colwise().mean()).norm() < 1e-12);
}

TEST_CASE("feature row count must match the mesh") {
  const Asset asset = chain_asset(2);
  VertexFeatures fv{Eigen::MatrixXd::Zero(3, 4)};
  CHECK_THROWS_AS(aggregate_node_features(asset, fv), DataError);
}

TEST_CASE("synthesized features are deterministic and one-hot coded") {
  const Asset asset = chain_asset(3);
  const VertexFeatures a = synth_features(asset, 16, 9);
  const VertexFeatures b = synth_features(asset, 16, 9);
  CHECK(a.rows == b.rows);
  CHECK(a.rows.cols() == 16);
  for (Eigen::Index v = 0; v < a.rows.rows(); ++v) {
    CHECK(a.rows.row(v).head(8).sum() == 1.0);
    CHECK(a.rows.row(v).tail(8).cwiseAbs().maxCoeff() <= 1.0);
  }
  std::set<int> slots;
  for (int n = 0; n < 4; ++n) slots.insert(feature_slot(n, 4, 8, 9));
  CHECK(slots.size() == 4);
  CHECK_THROWS_AS(synth_features(asset, 2, 0), UsageError);
}

TEST_CASE("vertex features survive a JSON round trip") {
  const Asset asset = chain_asset(2);
  const VertexFeatures a = synth_features(asset, 8, 1);
  const VertexFeatures b = vertex_features_from_json(vertex_features_to_json(a));
  CHECK(a.rows == b.rows);
}
