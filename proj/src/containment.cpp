#include "posespace/containment.h"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <utility>

namespace posespace {

namespace {

constexpr double kEps = 1e-9;

int find_root(std::vector<int>& parent, int x) {
  while (parent[static_cast<size_t>(x)] != x) {
    parent[static_cast<size_t>(x)] = parent[static_cast<size_t>(parent[static_cast<size_t>(x)])];
    x = parent[static_cast<size_t>(x)];
  }
  return x;
}

const Vec3& ray_direction() {
  static const Vec3 dir = Vec3(1.0, 1e-3, 2e-3).normalized();
  return dir;
}

}  // namespace

MeshContainment::MeshContainment(const Mesh& mesh) : mesh_(&mesh) {
  const auto nv = static_cast<int>(mesh.num_vertices());
  std::vector<int> parent(static_cast<size_t>(nv));
  std::iota(parent.begin(), parent.end(), 0);
  std::map<std::pair<int, int>, int> edge_uses;
  for (const Face& f : mesh.faces) {
    for (int k = 0; k < 3; ++k) {
      const int a = f[static_cast<size_t>(k)];
      const int b = f[static_cast<size_t>((k + 1) % 3)];
      const int ra = find_root(parent, a);
      const int rb = find_root(parent, b);
      if (ra != rb) {
        parent[static_cast<size_t>(std::max(ra, rb))] = std::min(ra, rb);
      }
      ++edge_uses[{std::min(a, b), std::max(a, b)}];
    }
  }
  for (const auto& [edge, uses] : edge_uses) {
    if (uses != 2) {
      open_ = true;
      break;
    }
  }
  std::map<int, size_t> index_of;
  for (size_t fi = 0; fi < mesh.faces.size(); ++fi) {
    const int root = find_root(parent, mesh.faces[fi][0]);
    auto [it, inserted] = index_of.emplace(root, components_.size());
    if (inserted) {
      components_.emplace_back();
    }
    components_[it->second].push_back(static_cast<int>(fi));
  }
}

bool MeshContainment::parity_inside(const Vec3& origin, const std::vector<int>& faces, bool& degenerate) const {
  const Vec3& dir = ray_direction();
  int crossings = 0;
  degenerate = false;
  for (int fi : faces) {
    const Face& f = mesh_->faces[static_cast<size_t>(fi)];
    const Vec3 a = mesh_->vertices.row(f[0]).transpose();
    const Vec3 b = mesh_->vertices.row(f[1]).transpose();
    const Vec3 c = mesh_->vertices.row(f[2]).transpose();
    const Vec3 e1 = b - a;
    const Vec3 e2 = c - a;
    const Vec3 p = dir.cross(e2);
    const double det = e1.dot(p);
    if (std::abs(det) <= 1e-15 * e1.norm() * e2.norm()) {
      continue;  // ray parallel to the triangle plane
    }
    const Vec3 s = origin - a;
    const double u = s.dot(p) / det;
    const Vec3 q = s.cross(e1);
    const double v = dir.dot(q) / det;
    const double t = e2.dot(q) / det;
    if (u < -kEps || v < -kEps || u + v > 1.0 + kEps || t < -kEps) {
      continue;
    }
    if (u < kEps || v < kEps || u + v > 1.0 - kEps || t < kEps) {
      degenerate = true;
      return false;
    }
    ++crossings;
  }
  return crossings % 2 == 1;
}

bool MeshContainment::contains(const Vec3& point) const {
  static const Vec3 nudges[] = {Vec3(0, 0, 0),   Vec3(0, 1, 0),    Vec3(0, 0, 1),  Vec3(0, -1, 0),
                                Vec3(0, 0, -1),  Vec3(0, 0.6, 0.8), Vec3(0, -0.8, 0.6)};
  for (const auto& faces : components_) {
    bool inside = false;
    for (const Vec3& nudge : nudges) {
      bool degenerate = false;
      inside = parity_inside(point + kEps * nudge, faces, degenerate);
      if (!degenerate) {
        break;
      }
    }
    if (inside) {
      return true;
    }
  }
  return false;
}

double point_triangle_distance(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  // Closest point by Voronoi region of the triangle.
  const Vec3 ab = b - a;
  const Vec3 ac = c - a;
  const Vec3 ap = p - a;
  const double d1 = ab.dot(ap);
  const double d2 = ac.dot(ap);
  if (d1 <= 0.0 && d2 <= 0.0) {
    return ap.norm();
  }
  const Vec3 bp = p - b;
  const double d3 = ab.dot(bp);
  const double d4 = ac.dot(bp);
  if (d3 >= 0.0 && d4 <= d3) {
    return bp.norm();
  }
  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) {
    const double v = d1 / (d1 - d3);
    return (p - (a + v * ab)).norm();
  }
  const Vec3 cp = p - c;
  const double d5 = ab.dot(cp);
  const double d6 = ac.dot(cp);
  if (d6 >= 0.0 && d5 <= d6) {
    return cp.norm();
  }
  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) {
    const double w = d2 / (d2 - d6);
    return (p - (a + w * ac)).norm();
  }
  const double va = d3 * d6 - d5 * d4;
  if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0) {
    const double w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
    return (p - (b + w * (c - b))).norm();
  }
  const double denom = 1.0 / (va + vb + vc);
  const double v = vb * denom;
  const double w = vc * denom;
  return (p - (a + ab * v + ac * w)).norm();
}

double MeshContainment::surface_distance(const Vec3& point) const {
  double best = std::numeric_limits<double>::infinity();
  for (const Face& f : mesh_->faces) {
    best = std::min(best, point_triangle_distance(point, mesh_->vertices.row(f[0]).transpose(),
                                                  mesh_->vertices.row(f[1]).transpose(),
                                                  mesh_->vertices.row(f[2]).transpose()));
  }
  return best;
}

}  // namespace posespace
