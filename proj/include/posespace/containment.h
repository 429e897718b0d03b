#pragma once

#include "posespace/geometry.h"

#include <vector>

namespace posespace {

// Point-in-mesh queries on triangle soups made of closed pieces. Each
// connected component is tested with ray parity along a fixed direction and
// a point counts as inside when it is inside any component.
class MeshContainment {
 public:
  explicit MeshContainment(const Mesh& mesh);

  bool contains(const Vec3& point) const;
  // Exact minimum distance to any triangle.
  double surface_distance(const Vec3& point) const;
  // True when some edge is not shared by exactly two faces.
  bool open() const { return open_; }

 private:
  bool parity_inside(const Vec3& origin, const std::vector<int>& faces, bool& degenerate) const;

  const Mesh* mesh_;
  std::vector<std::vector<int>> components_;
  bool open_ = false;
};

// Closest-point distance from p to triangle (a, b, c).
double point_triangle_distance(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c);

}  // namespace posespace
