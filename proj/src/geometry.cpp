#include "posespace/geometry.h"

#include "posespace/error.h"

#include <cmath>
#include <limits>

namespace posespace {

namespace {

constexpr double kDegenerateLength = 1e-12;
constexpr double kAntiparallelDot = -1.0 + 1e-8;

Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return m;
}

// Rotation by pi about a fixed axis orthogonal to `u`: the first canonical
// axis that is not parallel to u, with its u-component removed.
Mat3 half_turn_orthogonal_to(const Vec3& u) {
  Vec3 axis = Vec3::Zero();
  for (int k = 0; k < 3; ++k) {
    const Vec3 e = Vec3::Unit(k);
    if (std::abs(e.dot(u)) < 1.0 - 1e-6) {
      axis = (e - e.dot(u) * u).normalized();
      break;
    }
  }
  return 2.0 * axis * axis.transpose() - Mat3::Identity();
}

struct NodeFrame {
  bool rotates = false;     // false: R = I
  bool antiparallel = false;
  Vec3 rest_dir = Vec3::Zero();
  Vec3 posed_dir = Vec3::Zero();
  Mat3 rotation = Mat3::Identity();
};

NodeFrame make_frame(const Skeleton& skeleton, const Points& pose, int node) {
  NodeFrame frame;
  if (!node_direction(skeleton, skeleton.nodes(), node, frame.rest_dir) ||
      !node_direction(skeleton, pose, node, frame.posed_dir)) {
    return frame;
  }
  frame.rotates = true;
  frame.antiparallel = frame.rest_dir.dot(frame.posed_dir) < kAntiparallelDot;
  frame.rotation = minimal_rotation(frame.rest_dir, frame.posed_dir);
  return frame;
}

// d<R(u, u'), A>_F / du' for the minimal rotation R = I + K + K^2 / (1 + c),
// K = [u x u']_x, c = u . u'. The closed form has no arccos, so it stays
// smooth as u' -> u.
Vec3 rotation_grad_wrt_target(const Vec3& u, const Vec3& u_posed, const Mat3& a) {
  const Vec3 v = u.cross(u_posed);
  const double k = 1.0 / (1.0 + u.dot(u_posed));
  const Mat3 kv = skew(v);
  Vec3 grad_v;
  for (int m = 0; m < 3; ++m) {
    const Mat3 em = skew(Vec3::Unit(m));
    const Mat3 dr = em + k * (em * kv + kv * em);
    grad_v[m] = dr.cwiseProduct(a).sum();
  }
  const double grad_c = -k * k * (kv * kv).cwiseProduct(a).sum();
  return skew(u).transpose() * grad_v + grad_c * u;
}

// Gradient of normalize(a) pulled back to a.
Vec3 normalize_vjp(const Vec3& a, const Vec3& grad_unit) {
  const double len = a.norm();
  const Vec3 unit = a / len;
  return (grad_unit - unit * unit.dot(grad_unit)) / len;
}

// Pulls a gradient on node_direction(node) back onto node positions.
void direction_vjp(const Skeleton& skeleton, const Points& pose, int node, const Vec3& grad_dir,
                   Points& grad_pose) {
  const Vec3 p = pose.row(node).transpose();
  const int parent = skeleton.parent(node);
  if (parent >= 0) {
    const Vec3 a = pose.row(parent).transpose() - p;
    const Vec3 g = normalize_vjp(a, grad_dir);
    grad_pose.row(parent) += g.transpose();
    grad_pose.row(node) -= g.transpose();
    return;
  }
  const auto& children = skeleton.children(node);
  Vec3 mean = Vec3::Zero();
  for (int c : children) {
    mean += (pose.row(c).transpose() - p).normalized();
  }
  mean /= static_cast<double>(children.size());
  const Vec3 grad_mean = normalize_vjp(mean, grad_dir) / static_cast<double>(children.size());
  for (int c : children) {
    const Vec3 offset = pose.row(c).transpose() - p;
    const Vec3 g = normalize_vjp(offset, grad_mean);
    grad_pose.row(c) += g.transpose();
    grad_pose.row(node) -= g.transpose();
  }
}

}  // namespace

bool is_forest(Eigen::Index num_nodes, const std::vector<Edge>& edges) {
  std::vector<int> parent(static_cast<size_t>(num_nodes), -1);
  for (const Edge& e : edges) {
    if (e.parent < 0 || e.child < 0 || e.parent >= num_nodes || e.child >= num_nodes ||
        e.parent == e.child || parent[static_cast<size_t>(e.child)] >= 0) {
      return false;
    }
    parent[static_cast<size_t>(e.child)] = e.parent;
  }
  // Walking up from any node must terminate within num_nodes hops.
  for (Eigen::Index start = 0; start < num_nodes; ++start) {
    int node = static_cast<int>(start);
    for (Eigen::Index hops = 0; node >= 0; ++hops) {
      if (hops > num_nodes) {
        return false;
      }
      node = parent[static_cast<size_t>(node)];
    }
  }
  return true;
}

void validate_forest(Eigen::Index num_nodes, const std::vector<Edge>& edges) {
  for (const Edge& e : edges) {
    POSESPACE_CHECK(e.parent >= 0 && e.child >= 0 && e.parent < num_nodes && e.child < num_nodes,
                    DataError, "skeleton edge index out of range");
  }
  POSESPACE_CHECK(is_forest(num_nodes, edges), DataError,
                  "skeleton edges do not form a forest (cycle or multiple parents)");
}

Skeleton::Skeleton(Points nodes, std::vector<Edge> edges, Weights weights)
    : nodes_(std::move(nodes)), edges_(std::move(edges)), weights_(std::move(weights)) {
  POSESPACE_CHECK(nodes_.rows() >= 2, DataError, "skeleton needs at least two nodes");
  POSESPACE_CHECK(weights_.rows() == nodes_.rows(), DataError,
                  "weight matrix row count must equal the node count");
  validate_forest(nodes_.rows(), edges_);
  for (int k = 0; k < weights_.outerSize(); ++k) {
    for (Weights::InnerIterator it(weights_, k); it; ++it) {
      POSESPACE_CHECK(std::isfinite(it.value()) && it.value() >= 0.0, DataError,
                      "skinning weights must be finite and non-negative");
    }
  }
  parents_.assign(static_cast<size_t>(nodes_.rows()), -1);
  children_.assign(static_cast<size_t>(nodes_.rows()), {});
  for (const Edge& e : edges_) {
    parents_[static_cast<size_t>(e.child)] = e.parent;
    children_[static_cast<size_t>(e.parent)].push_back(e.child);
  }
}

Skeleton::Weights renormalize_weights(const Skeleton::Weights& weights, const Points& vertices,
                                      const Points& nodes) {
  POSESPACE_CHECK(weights.cols() == vertices.rows(), DataError,
                  "weight matrix column count must equal the vertex count");
  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(static_cast<size_t>(weights.nonZeros() + vertices.rows()));
  for (int v = 0; v < weights.outerSize(); ++v) {
    double sum = 0.0;
    for (Skeleton::Weights::InnerIterator it(weights, v); it; ++it) {
      sum += it.value();
    }
    if (sum <= 0.0) {
      int best = 0;
      double best_dist = std::numeric_limits<double>::infinity();
      for (Eigen::Index i = 0; i < nodes.rows(); ++i) {
        const double d = (nodes.row(i) - vertices.row(v)).squaredNorm();
        if (d < best_dist) {
          best_dist = d;
          best = static_cast<int>(i);
        }
      }
      triplets.emplace_back(best, v, 1.0);
      continue;
    }
    // Already-normalized columns are left bit-for-bit untouched.
    const double scale = std::abs(sum - 1.0) <= 1e-12 ? 1.0 : 1.0 / sum;
    for (Skeleton::Weights::InnerIterator it(weights, v); it; ++it) {
      if (it.value() > 0.0) {
        triplets.emplace_back(static_cast<int>(it.row()), v, it.value() * scale);
      }
    }
  }
  Skeleton::Weights out(weights.rows(), weights.cols());
  out.setFromTriplets(triplets.begin(), triplets.end());
  return out;
}

Pose rest_pose(const Asset& asset) { return Pose{asset.skeleton.nodes()}; }

Mat3 minimal_rotation(const Vec3& from, const Vec3& to) {
  const double c = from.dot(to);
  if (c < kAntiparallelDot) {
    return half_turn_orthogonal_to(from);
  }
  const Mat3 k = skew(from.cross(to));
  return Mat3::Identity() + k + k * k / (1.0 + c);
}

bool node_direction(const Skeleton& skeleton, const Points& positions, int node, Vec3& direction) {
  const Vec3 p = positions.row(node).transpose();
  const int parent = skeleton.parent(node);
  if (parent >= 0) {
    const Vec3 a = positions.row(parent).transpose() - p;
    if (a.norm() < kDegenerateLength) {
      return false;
    }
    direction = a.normalized();
    return true;
  }
  const auto& children = skeleton.children(node);
  if (children.empty()) {
    return false;
  }
  Vec3 mean = Vec3::Zero();
  for (int c : children) {
    const Vec3 offset = positions.row(c).transpose() - p;
    if (offset.norm() < kDegenerateLength) {
      return false;
    }
    mean += offset.normalized();
  }
  mean /= static_cast<double>(children.size());
  if (mean.norm() < kDegenerateLength) {
    return false;
  }
  direction = mean.normalized();
  return true;
}

std::vector<Mat3> node_rotations(const Skeleton& skeleton, const Points& pose) {
  std::vector<Mat3> rotations;
  rotations.reserve(static_cast<size_t>(skeleton.num_nodes()));
  for (int i = 0; i < skeleton.num_nodes(); ++i) {
    rotations.push_back(make_frame(skeleton, pose, i).rotation);
  }
  return rotations;
}

Mesh deform(const Asset& asset, const Pose& pose) {
  const Skeleton& skel = asset.skeleton;
  POSESPACE_CHECK(pose.num_nodes() == skel.num_nodes(), DataError,
                  "pose node count does not match the skeleton");
  const std::vector<Mat3> rotations = node_rotations(skel, pose.nodes);
  const Points& rest = asset.mesh.vertices;
  Mesh out{Points::Zero(rest.rows(), 3), asset.mesh.faces};
  const auto& weights = skel.weights();
  for (int v = 0; v < weights.outerSize(); ++v) {
    const Vec3 x = rest.row(v).transpose();
    Vec3 acc = Vec3::Zero();
    for (Skeleton::Weights::InnerIterator it(weights, v); it; ++it) {
      const auto i = it.row();
      const Vec3 local = x - skel.nodes().row(i).transpose();
      acc += it.value() * (rotations[static_cast<size_t>(i)] * local + pose.nodes.row(i).transpose());
    }
    out.vertices.row(v) = acc.transpose();
  }
  return out;
}

Points deform_vjp(const Asset& asset, const Pose& pose, const Points& vertex_cotangent) {
  const Skeleton& skel = asset.skeleton;
  POSESPACE_CHECK(pose.num_nodes() == skel.num_nodes(), DataError,
                  "pose node count does not match the skeleton");
  POSESPACE_CHECK(vertex_cotangent.rows() == asset.mesh.num_vertices(), DataError,
                  "cotangent vertex count does not match the mesh");
  const Eigen::Index n = skel.num_nodes();
  // Per node: A_i = sum_v w g_v (v - P_i)^T and s_i = sum_v w g_v.
  std::vector<Mat3> outer(static_cast<size_t>(n), Mat3::Zero());
  Points grad = Points::Zero(n, 3);
  const auto& weights = skel.weights();
  for (int v = 0; v < weights.outerSize(); ++v) {
    const Vec3 g = vertex_cotangent.row(v).transpose();
    const Vec3 x = asset.mesh.vertices.row(v).transpose();
    for (Skeleton::Weights::InnerIterator it(weights, v); it; ++it) {
      const auto i = it.row();
      const Vec3 local = x - skel.nodes().row(i).transpose();
      outer[static_cast<size_t>(i)] += it.value() * g * local.transpose();
      grad.row(i) += it.value() * g.transpose();
    }
  }
  for (int i = 0; i < n; ++i) {
    const NodeFrame frame = make_frame(skel, pose.nodes, i);
    if (!frame.rotates || frame.antiparallel) {
      continue;
    }
    const Vec3 grad_dir =
        rotation_grad_wrt_target(frame.rest_dir, frame.posed_dir, outer[static_cast<size_t>(i)]);
    direction_vjp(skel, pose.nodes, i, grad_dir, grad);
  }
  return grad;
}

Eigen::VectorXd normalize_pose(const Asset& asset, const Pose& pose, const NormalizationStats& stats) {
  POSESPACE_CHECK(stats.sigma_p > 0.0, DataError, "sigma_p must be positive");
  POSESPACE_CHECK(pose.num_nodes() == asset.skeleton.num_nodes(), DataError,
                  "pose node count does not match the skeleton");
  const Points offset = (pose.nodes - asset.skeleton.nodes()) / stats.sigma_p;
  return Eigen::Map<const Eigen::VectorXd>(offset.data(), offset.size());
}

Pose denormalize_pose(const Asset& asset, const Eigen::VectorXd& normalized, const NormalizationStats& stats) {
  POSESPACE_CHECK(normalized.size() == 3 * asset.skeleton.num_nodes(), DataError,
                  "normalized pose has the wrong length");
  const Eigen::Map<const Points> offset(normalized.data(), asset.skeleton.num_nodes(), 3);
  return Pose{asset.skeleton.nodes() + offset * stats.sigma_p};
}

NormalizationStats compute_sigma_p(const std::vector<std::pair<const Asset*, const Pose*>>& dataset) {
  POSESPACE_CHECK(!dataset.empty(), DataError, "cannot compute sigma_p of an empty dataset");
  double total = 0.0;
  long count = 0;
  for (const auto& [asset, pose] : dataset) {
    POSESPACE_CHECK(pose->num_nodes() == asset->skeleton.num_nodes(), DataError,
                    "pose node count does not match the skeleton");
    total += (pose->nodes - asset->skeleton.nodes()).rowwise().norm().sum();
    count += pose->num_nodes();
  }
  return NormalizationStats{std::max(total / static_cast<double>(count), 1e-9)};
}

Eigen::VectorXd edge_lengths(const Skeleton& skeleton, const Points& positions) {
  Eigen::VectorXd out(skeleton.num_edges());
  for (Eigen::Index e = 0; e < skeleton.num_edges(); ++e) {
    const Edge& edge = skeleton.edges()[static_cast<size_t>(e)];
    out[e] = (positions.row(edge.parent) - positions.row(edge.child)).norm();
  }
  return out;
}

double bbox_diagonal(const Points& points) {
  if (points.rows() == 0) {
    return 0.0;
  }
  return (points.colwise().maxCoeff() - points.colwise().minCoeff()).norm();
}

}  // namespace posespace
