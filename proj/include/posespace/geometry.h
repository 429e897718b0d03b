#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <Eigen/SparseCore>

#include <array>
#include <string>
#include <utility>
#include <vector>

namespace posespace {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
// One 3D point per row.
using Points = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;
using Face = std::array<int, 3>;

struct Mesh {
  Points vertices;
  std::vector<Face> faces;

  Eigen::Index num_vertices() const { return vertices.rows(); }
};

struct Edge {
  int parent = 0;
  int child = 0;

  bool operator==(const Edge&) const = default;
};

// Rest skeleton with skinning weights. The weight matrix is N_P x N_V; each
// column holds the influences of one vertex. Construction validates the
// topology (forest, in-range indices) and caches parent/child lists.
class Skeleton {
 public:
  using Weights = Eigen::SparseMatrix<double>;  // column-major: one column per vertex

  Skeleton() = default;
  Skeleton(Points nodes, std::vector<Edge> edges, Weights weights);

  const Points& nodes() const { return nodes_; }
  const std::vector<Edge>& edges() const { return edges_; }
  const Weights& weights() const { return weights_; }

  Eigen::Index num_nodes() const { return nodes_.rows(); }
  Eigen::Index num_edges() const { return static_cast<Eigen::Index>(edges_.size()); }

  // -1 for roots.
  int parent(int node) const { return parents_[static_cast<size_t>(node)]; }
  const std::vector<int>& children(int node) const { return children_[static_cast<size_t>(node)]; }

 private:
  Points nodes_;
  std::vector<Edge> edges_;
  Weights weights_;
  std::vector<int> parents_;
  std::vector<std::vector<int>> children_;
};

struct Asset {
  std::string name;
  Mesh mesh;
  Skeleton skeleton;
};

struct Pose {
  Points nodes;

  Eigen::Index num_nodes() const { return nodes.rows(); }
};

struct NormalizationStats {
  double sigma_p = 1.0;
};

// Throws DataError unless the edge list forms a forest over n nodes
// (in-range indices, no self loops, at most one parent per node, acyclic).
void validate_forest(Eigen::Index num_nodes, const std::vector<Edge>& edges);

bool is_forest(Eigen::Index num_nodes, const std::vector<Edge>& edges);

// Returns weights with every vertex column summing to one. Columns with no
// weight are assigned entirely to the nearest rest node (lowest index on ties).
Skeleton::Weights renormalize_weights(const Skeleton::Weights& weights, const Points& vertices,
                                      const Points& nodes);

Pose rest_pose(const Asset& asset);

// Minimal rotation taking unit vector `from` onto unit vector `to`.
Mat3 minimal_rotation(const Vec3& from, const Vec3& to);

// Direction used to orient node `node`: towards its parent, or for a root the
// normalized mean of the unit directions to its children. Returns false when
// the node is isolated or the direction is degenerate.
bool node_direction(const Skeleton& skeleton, const Points& positions, int node, Vec3& direction);

// Per-node rigid rotations induced by moving the nodes from rest to `pose`.
std::vector<Mat3> node_rotations(const Skeleton& skeleton, const Points& pose);

// Linear blend skinning driven by node positions:
//   v' = sum_i W[i,v] * (R_i (v - P_i) + P'_i)
Mesh deform(const Asset& asset, const Pose& pose);

// Vector-Jacobian product of deform(): gradient of <cotangent, deform(pose)>
// with respect to the node positions.
Points deform_vjp(const Asset& asset, const Pose& pose, const Points& vertex_cotangent);

Eigen::VectorXd normalize_pose(const Asset& asset, const Pose& pose, const NormalizationStats& stats);
Pose denormalize_pose(const Asset& asset, const Eigen::VectorXd& normalized, const NormalizationStats& stats);

NormalizationStats compute_sigma_p(const std::vector<std::pair<const Asset*, const Pose*>>& dataset);

Eigen::VectorXd edge_lengths(const Skeleton& skeleton, const Points& positions);

// Bounding box diagonal of a point set.
double bbox_diagonal(const Points& points);

}  // namespace posespace
