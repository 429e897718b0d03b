#pragma once

#include "posespace/geometry.h"
#include "posespace/rng.h"

#include <Eigen/SparseCore>

#include <vector>

namespace posespace::testing {

// Straight chain along +x with `bones` unit bones and one vertex ring per
// bone midpoint and node.
inline Asset chain_asset(int bones = 2) {
  const int n = bones + 1;
  Points nodes = Points::Zero(n, 3);
  std::vector<Edge> edges;
  for (int i = 0; i < n; ++i) nodes(i, 0) = i;
  for (int i = 0; i + 1 < n; ++i) edges.push_back({i, i + 1});
  std::vector<Vec3> verts;
  std::vector<Eigen::Triplet<double>> trip;
  for (int b = 0; b < bones; ++b) {
    for (double s : {0.0, 0.25, 0.5, 0.75}) {
      for (int k = 0; k < 4; ++k) {
        const double a = k * 1.5707963267948966 + 0.3;
        const int idx = static_cast<int>(verts.size());
        verts.emplace_back(b + s, 0.2 * std::cos(a), 0.2 * std::sin(a));
        trip.emplace_back(b, idx, 1.0 - s);
        if (s > 0.0) trip.emplace_back(b + 1, idx, s);
      }
    }
  }
  Points v(static_cast<Eigen::Index>(verts.size()), 3);
  for (size_t i = 0; i < verts.size(); ++i) v.row(static_cast<Eigen::Index>(i)) = verts[i].transpose();
  Skeleton::Weights w(n, v.rows());
  w.setFromTriplets(trip.begin(), trip.end());
  std::vector<Face> faces;
  for (int i = 0; i + 2 < v.rows(); i += 3) faces.push_back({i, i + 1, i + 2});
  return Asset{"chain", Mesh{v, faces}, Skeleton(nodes, edges, w)};
}

// Random tree with random node positions and 1-3 weighted influences per vertex.
inline Asset random_asset(Rng& rng, int num_nodes, int num_vertices) {
  Points nodes(num_nodes, 3);
  for (int i = 0; i < num_nodes; ++i)
    for (int j = 0; j < 3; ++j) nodes(i, j) = rng.uniform(-1.0, 1.0);
  std::vector<Edge> edges;
  for (int i = 1; i < num_nodes; ++i) edges.push_back({static_cast<int>(rng.uniform_index(static_cast<uint64_t>(i))), i});
  Points v(num_vertices, 3);
  std::vector<Eigen::Triplet<double>> trip;
  for (int k = 0; k < num_vertices; ++k) {
    for (int j = 0; j < 3; ++j) v(k, j) = rng.uniform(-1.0, 1.0);
    const int influences = 1 + static_cast<int>(rng.uniform_index(3));
    std::vector<int> used;
    std::vector<double> ws;
    double total = 0.0;
    for (int m = 0; m < influences; ++m) {
      const int node = static_cast<int>(rng.uniform_index(static_cast<uint64_t>(num_nodes)));
      if (std::find(used.begin(), used.end(), node) != used.end()) continue;
      used.push_back(node);
      ws.push_back(rng.uniform(0.1, 1.0));
      total += ws.back();
    }
    for (size_t m = 0; m < used.size(); ++m) trip.emplace_back(used[m], k, ws[m] / total);
  }
  Skeleton::Weights w(num_nodes, num_vertices);
  w.setFromTriplets(trip.begin(), trip.end());
  std::vector<Face> faces;
  for (int i = 0; i + 2 < num_vertices; i += 3) faces.push_back({i, i + 1, i + 2});
  return Asset{"random", Mesh{v, faces}, Skeleton(nodes, edges, w)};
}

inline Pose perturbed(const Asset& asset, Rng& rng, double scale) {
  Pose p{asset.skeleton.nodes()};
  for (Eigen::Index i = 0; i < p.nodes.rows(); ++i)
    for (int j = 0; j < 3; ++j) p.nodes(i, j) += scale * rng.normal();
  return p;
}

inline Mat3 rot_z(double a) {
  Mat3 r;
  r << std::cos(a), -std::sin(a), 0, std::sin(a), std::cos(a), 0, 0, 0, 1;
  return r;
}

}  // namespace posespace::testing
