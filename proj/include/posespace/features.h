#pragma once

#include "posespace/geometry.h"
#include "posespace/json_io.h"

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>

namespace posespace {

// N_V x N_F per-vertex semantic features.
struct VertexFeatures {
  Eigen::MatrixXd rows;
};

// N_P x N_F per-node features.
struct NodeFeatures {
  Eigen::MatrixXd rows;
};

constexpr int kDefaultFeatureDim = 32;

// Skinning-weight-weighted mean of vertex features per node. Nodes with no
// weight mass receive the global mean feature.
NodeFeatures aggregate_node_features(const Asset& asset, const VertexFeatures& fv);

// Deterministic stand-in for learned vertex features: the first half of the
// columns is a one-hot code of the vertex's dominant node (a seeded
// permutation when the nodes fit, a seeded hash otherwise); the second half is
// a sinusoidal encoding of the rest position.
VertexFeatures synth_features(const Asset& asset, int n_f, uint64_t seed);

// Slot of `node` in the one-hot half of synth_features for a skeleton with
// `num_nodes` nodes and `half` slots.
int feature_slot(int node, int num_nodes, int half, uint64_t seed);

Json vertex_features_to_json(const VertexFeatures& fv);
VertexFeatures vertex_features_from_json(const Json& doc);
VertexFeatures load_vertex_features(const std::filesystem::path& path);
void save_vertex_features(const std::filesystem::path& path, const VertexFeatures& fv);

}  // namespace posespace
