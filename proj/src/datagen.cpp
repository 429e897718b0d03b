#include "posespace/datagen.h"

#include "posespace/containment.h"
#include "posespace/error.h"
#include "posespace/parallel.h"

#include <Eigen/Geometry>
#include <Eigen/SparseCore>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>

namespace posespace {

using Eigen::VectorXd;

namespace {

struct TemplateBone {
  int parent;
  Vec3 direction;
  double length;
  double limit;  // symmetric bound for both DOFs
};

std::vector<TemplateBone> template_bones(CreatureTemplate kind, int chain_bones) {
  switch (kind) {
    case CreatureTemplate::chain: {
      std::vector<TemplateBone> bones;
      for (int b = 0; b < chain_bones; ++b) {
        bones.push_back({b, Vec3::UnitX(), 1.0, 0.6});
      }
      return bones;
    }
    case CreatureTemplate::quadruped:
      return {
          {0, Vec3(1, 0, 0), 0.5, 0.25},        // 1 spine
          {1, Vec3(1, 0, 0), 0.5, 0.25},        // 2 chest
          {2, Vec3(1, 0, 1), 0.35, 0.5},        // 3 neck
          {3, Vec3(1, 0, 0), 0.3, 0.5},         // 4 head
          {0, Vec3(-1, 0, 0.3), 0.35, 0.7},     // 5 tail
          {5, Vec3(-1, 0, 0), 0.3, 0.7},        // 6 tail tip
          {2, Vec3(0.1, 0.3, -1), 0.45, 0.6},   // 7 front left knee
          {7, Vec3(0, 0, -1), 0.4, 0.6},        // 8 front left foot
          {2, Vec3(0.1, -0.3, -1), 0.45, 0.6},  // 9 front right knee
          {9, Vec3(0, 0, -1), 0.4, 0.6},        // 10 front right foot
          {0, Vec3(-0.1, 0.3, -1), 0.45, 0.6},  // 11 back left knee
          {11, Vec3(0, 0, -1), 0.4, 0.6},       // 12 back left foot
          {0, Vec3(-0.1, -0.3, -1), 0.45, 0.6}, // 13 back right knee
          {13, Vec3(0, 0, -1), 0.4, 0.6},       // 14 back right foot
      };
    case CreatureTemplate::biped:
      return {
          {0, Vec3(0, 0, 1), 0.4, 0.25},      // 1 spine
          {1, Vec3(0, 0, 1), 0.35, 0.25},     // 2 chest
          {2, Vec3(0, 0, 1), 0.3, 0.4},       // 3 head
          {2, Vec3(0, 1, -0.2), 0.35, 0.8},   // 4 left elbow
          {4, Vec3(0, 1, -0.5), 0.3, 0.8},    // 5 left hand
          {2, Vec3(0, -1, -0.2), 0.35, 0.8},  // 6 right elbow
          {6, Vec3(0, -1, -0.5), 0.3, 0.8},   // 7 right hand
          {0, Vec3(0, 0.3, -1), 0.5, 0.5},    // 8 left knee
          {8, Vec3(0, 0, -1), 0.45, 0.5},     // 9 left foot
          {0, Vec3(0, -0.3, -1), 0.5, 0.5},   // 10 right knee
          {10, Vec3(0, 0, -1), 0.45, 0.5},    // 11 right foot
      };
  }
  throw UsageError("unknown creature template");
}

Mat3 rot_z(double a) {
  Mat3 r;
  r << std::cos(a), -std::sin(a), 0, std::sin(a), std::cos(a), 0, 0, 0, 1;
  return r;
}

Mat3 rot_y(double a) {
  Mat3 r;
  r << std::cos(a), 0, std::sin(a), 0, 1, 0, -std::sin(a), 0, std::cos(a);
  return r;
}

Vec3 any_perpendicular(const Vec3& d) {
  const Vec3 axis = std::abs(d.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
  return (axis - axis.dot(d) * d).normalized();
}

// Bone index whose child is `node`; -1 for the root.
int bone_of(int node) { return node - 1; }

void angle_moments(const AngleLimits& lim, double& mean, double& sd) {
  mean = 0.5 * (lim.lo + lim.hi);
  sd = 0.25 * (lim.hi - lim.lo);
}

}  // namespace

std::string template_name(CreatureTemplate kind) {
  switch (kind) {
    case CreatureTemplate::chain:
      return "chain";
    case CreatureTemplate::quadruped:
      return "quadruped";
    case CreatureTemplate::biped:
      return "biped";
  }
  return "unknown";
}

CreatureTemplate parse_template(const std::string& name) {
  if (name == "chain") return CreatureTemplate::chain;
  if (name == "quadruped") return CreatureTemplate::quadruped;
  if (name == "biped") return CreatureTemplate::biped;
  throw UsageError("unknown template '" + name + "' (expected chain, quadruped or biped)");
}

void CreatureSpec::validate() const {
  POSESPACE_CHECK(!bone_lengths.empty(), UsageError, "creature needs at least one bone");
  POSESPACE_CHECK(limits.size() == bone_lengths.size() && correlations.size() == bone_lengths.size(), UsageError,
                  "limits and correlations need one entry per bone");
  const auto expected = template_bones(kind, static_cast<int>(bone_lengths.size()));
  POSESPACE_CHECK(expected.size() == bone_lengths.size(), UsageError,
                  "template " + template_name(kind) + " has " + std::to_string(expected.size()) + " bones");
  for (size_t b = 0; b < bone_lengths.size(); ++b) {
    POSESPACE_CHECK(std::isfinite(bone_lengths[b]) && bone_lengths[b] > 0.0, UsageError,
                    "bone lengths must be positive");
    for (int j = 0; j < 2; ++j) {
      const AngleLimits& lim = limits[b][static_cast<size_t>(j)];
      POSESPACE_CHECK(std::isfinite(lim.lo) && std::isfinite(lim.hi) && lim.lo <= lim.hi, UsageError,
                      "angle limits must be finite with lo <= hi");
      const double c = correlations[b][static_cast<size_t>(j)];
      POSESPACE_CHECK(c >= -1.0 && c <= 1.0, UsageError, "correlations must lie in [-1, 1]");
    }
  }
  POSESPACE_CHECK(std::isfinite(radius) && radius > 0.0, UsageError, "tube radius must be positive");
  POSESPACE_CHECK(length_jitter >= 0.0 && length_jitter < 1.0, UsageError, "length jitter must be in [0, 1)");
}

CreatureSpec default_spec(CreatureTemplate kind, int chain_bones) {
  POSESPACE_CHECK(chain_bones >= 1, UsageError, "chain needs at least one bone");
  CreatureSpec spec;
  spec.kind = kind;
  for (const TemplateBone& tb : template_bones(kind, chain_bones)) {
    spec.bone_lengths.push_back(tb.length);
    spec.limits.push_back({AngleLimits{-tb.limit, tb.limit}, AngleLimits{-tb.limit, tb.limit}});
    spec.correlations.push_back({0.4, 0.4});
  }
  spec.radius = kind == CreatureTemplate::chain ? 0.1 : 0.06;
  return spec;
}

Creature gen_creature(const CreatureSpec& spec, uint64_t seed, int ring_segments) {
  spec.validate();
  POSESPACE_CHECK(ring_segments >= 3, UsageError, "tubes need at least 3 segments");
  const auto layout = template_bones(spec.kind, static_cast<int>(spec.num_bones()));
  const int num_bones = static_cast<int>(layout.size());
  const int num_nodes = num_bones + 1;
  Rng rng(seed);

  Creature creature;
  creature.spec = spec;
  Points nodes = Points::Zero(num_nodes, 3);
  std::vector<Mat3> world(static_cast<size_t>(num_bones));
  std::vector<Edge> edges;
  for (int b = 0; b < num_bones; ++b) {
    const TemplateBone& tb = layout[static_cast<size_t>(b)];
    const double length = spec.bone_lengths[static_cast<size_t>(b)] * (1.0 + spec.length_jitter * rng.uniform(-1.0, 1.0));
    const Vec3 dir = tb.direction.normalized();
    nodes.row(b + 1) = nodes.row(tb.parent) + length * dir.transpose();
    world[static_cast<size_t>(b)] = minimal_rotation(Vec3::UnitX(), dir);
    const int parent_bone = bone_of(tb.parent);
    const Mat3 parent_frame = parent_bone < 0 ? Mat3::Identity() : world[static_cast<size_t>(parent_bone)];
    creature.bones.push_back(Bone{tb.parent, b + 1, length, parent_frame.transpose() * world[static_cast<size_t>(b)]});
    edges.push_back(Edge{tb.parent, b + 1});
  }

  // Capped tube per bone; ring vertices are split between the bone's two
  // nodes by their axial parameter.
  constexpr int kRings = 4;
  const int per_bone = kRings * ring_segments + 2;
  const int num_vertices = num_bones * per_bone;
  Points vertices(num_vertices, 3);
  std::vector<Face> faces;
  std::vector<Eigen::Triplet<double>> triplets;
  for (int b = 0; b < num_bones; ++b) {
    const Bone& bone = creature.bones[static_cast<size_t>(b)];
    const Vec3 a = nodes.row(bone.parent).transpose();
    const Vec3 c = nodes.row(bone.child).transpose();
    const Vec3 d = (c - a).normalized();
    const Vec3 u = any_perpendicular(d);
    const Vec3 v = d.cross(u);
    const int base = b * per_bone;
    for (int r = 0; r < kRings; ++r) {
      const double s = static_cast<double>(r) / (kRings - 1);
      for (int k = 0; k < ring_segments; ++k) {
        const double phi = 2.0 * std::numbers::pi * k / ring_segments;
        const int idx = base + r * ring_segments + k;
        vertices.row(idx) = (a + s * (c - a) + spec.radius * (std::cos(phi) * u + std::sin(phi) * v)).transpose();
        if (s < 1.0) triplets.emplace_back(bone.parent, idx, 1.0 - s);
        if (s > 0.0) triplets.emplace_back(bone.child, idx, s);
      }
    }
    const int cap_a = base + kRings * ring_segments;
    const int cap_c = cap_a + 1;
    vertices.row(cap_a) = a.transpose();
    vertices.row(cap_c) = c.transpose();
    triplets.emplace_back(bone.parent, cap_a, 1.0);
    triplets.emplace_back(bone.child, cap_c, 1.0);
    auto ring = [&](int r, int k) { return base + r * ring_segments + (k % ring_segments); };
    for (int k = 0; k < ring_segments; ++k) {
      for (int r = 0; r + 1 < kRings; ++r) {
        faces.push_back({ring(r, k), ring(r, k + 1), ring(r + 1, k + 1)});
        faces.push_back({ring(r, k), ring(r + 1, k + 1), ring(r + 1, k)});
      }
      faces.push_back({cap_a, ring(0, k + 1), ring(0, k)});
      faces.push_back({cap_c, ring(kRings - 1, k), ring(kRings - 1, k + 1)});
    }
  }
  Skeleton::Weights weights(num_nodes, num_vertices);
  weights.setFromTriplets(triplets.begin(), triplets.end());

  creature.asset.name = template_name(spec.kind);
  creature.asset.mesh = Mesh{std::move(vertices), std::move(faces)};
  creature.asset.skeleton = Skeleton(std::move(nodes), std::move(edges), std::move(weights));
  creature.root = Vec3::Zero();
  return creature;
}

void normalize_creature(Creature& creature) {
  Asset& asset = creature.asset;
  const Points& v = asset.mesh.vertices;
  const Vec3 center = 0.5 * (v.colwise().minCoeff() + v.colwise().maxCoeff()).transpose();
  const double diag = bbox_diagonal(v);
  POSESPACE_CHECK(diag > 0.0, DataError, "creature mesh has zero extent");
  Points vertices = (v.rowwise() - center.transpose()) / diag;
  Points nodes = (asset.skeleton.nodes().rowwise() - center.transpose()) / diag;
  asset.mesh.vertices = std::move(vertices);
  asset.skeleton = Skeleton(std::move(nodes), asset.skeleton.edges(), asset.skeleton.weights());
  for (Bone& bone : creature.bones) {
    bone.length /= diag;
  }
  creature.root = (creature.root - center) / diag;
}

Pose pose_from_angles(const Creature& creature, const VectorXd& angles) {
  const auto num_bones = creature.bones.size();
  POSESPACE_CHECK(angles.size() == static_cast<Eigen::Index>(2 * num_bones), DataError,
                  "expected two angles per bone");
  Pose pose{Points::Zero(static_cast<Eigen::Index>(num_bones + 1), 3)};
  pose.nodes.row(0) = creature.root.transpose();
  std::vector<Mat3> world(num_bones);
  for (size_t b = 0; b < num_bones; ++b) {
    const Bone& bone = creature.bones[b];
    const int parent_bone = bone_of(bone.parent);
    const Mat3 parent_frame = parent_bone < 0 ? Mat3::Identity() : world[static_cast<size_t>(parent_bone)];
    world[b] = parent_frame * bone.rest_relative * rot_z(angles[static_cast<Eigen::Index>(2 * b)]) *
               rot_y(angles[static_cast<Eigen::Index>(2 * b + 1)]);
    pose.nodes.row(bone.child) = pose.nodes.row(bone.parent) + bone.length * world[b].col(0).transpose();
  }
  return pose;
}

VectorXd sample_angles(const Creature& creature, Rng& rng) {
  const auto num_bones = creature.bones.size();
  VectorXd z = VectorXd::Zero(static_cast<Eigen::Index>(2 * num_bones));
  VectorXd angles(z.size());
  for (size_t b = 0; b < num_bones; ++b) {
    const int parent_bone = bone_of(creature.bones[b].parent);
    for (size_t j = 0; j < 2; ++j) {
      const auto idx = static_cast<Eigen::Index>(2 * b + j);
      const AngleLimits& lim = creature.spec.limits[b][j];
      double mean = 0.0;
      double sd = 0.0;
      angle_moments(lim, mean, sd);
      if (sd == 0.0) {
        angles[idx] = mean;
        continue;
      }
      const double c = parent_bone < 0 ? 0.0 : creature.spec.correlations[b][j];
      const double anchor = parent_bone < 0 ? 0.0 : c * z[static_cast<Eigen::Index>(2 * parent_bone) + static_cast<Eigen::Index>(j)];
      const double fresh = std::sqrt(1.0 - c * c);
      // Truncation by rejection of the conditional draw.
      double value = anchor;
      bool accepted = false;
      for (int attempt = 0; attempt < 1000 && !accepted; ++attempt) {
        value = anchor + fresh * rng.normal();
        const double a = mean + sd * value;
        accepted = a >= lim.lo && a <= lim.hi;
      }
      z[idx] = value;
      angles[idx] = std::clamp(mean + sd * value, lim.lo, lim.hi);
    }
  }
  return angles;
}

PoseSet sample_gt_poses(const Creature& creature, int n, uint64_t seed) {
  POSESPACE_CHECK(n >= 1, UsageError, "need at least one pose");
  Rng rng(seed);
  PoseSet set;
  set.asset = creature.asset.name;
  for (int i = 0; i < n; ++i) {
    set.poses.push_back(pose_from_angles(creature, sample_angles(creature, rng)));
    set.tags.push_back("gt");
  }
  return set;
}

PoseSet sample_clip(const Creature& creature, int frames, double rho, uint64_t seed) {
  POSESPACE_CHECK(frames >= 1, UsageError, "clip needs at least one frame");
  POSESPACE_CHECK(rho >= 0.0 && rho <= 1.0, UsageError, "rho must be in [0, 1]");
  Rng rng(seed);
  const auto dim = static_cast<Eigen::Index>(2 * creature.bones.size());
  VectorXd z = rng.normal_vector(dim);
  const double fresh = std::sqrt(1.0 - rho * rho);
  PoseSet set;
  set.asset = creature.asset.name;
  for (int f = 0; f < frames; ++f) {
    if (f > 0) {
      z = rho * z + fresh * rng.normal_vector(dim);
    }
    VectorXd angles(dim);
    for (Eigen::Index i = 0; i < dim; ++i) {
      const AngleLimits& lim = creature.spec.limits[static_cast<size_t>(i / 2)][static_cast<size_t>(i % 2)];
      double mean = 0.0;
      double sd = 0.0;
      angle_moments(lim, mean, sd);
      angles[i] = std::clamp(mean + sd * z[i], lim.lo, lim.hi);
    }
    set.poses.push_back(pose_from_angles(creature, angles));
    set.tags.push_back("clip");
  }
  return set;
}

// ---------------------------------------------------------------------------

StaticFilterResult filter_static(const std::vector<Pose>& clip, const Asset& asset, const StaticFilterConfig& cfg) {
  POSESPACE_CHECK(!clip.empty(), DataError, "clip is empty");
  POSESPACE_CHECK(cfg.threshold >= 0.0 && cfg.frame_fraction >= 0.0 && cfg.frame_fraction <= 1.0, UsageError,
                  "invalid static filter thresholds");
  const double diag = bbox_diagonal(asset.mesh.vertices);
  POSESPACE_CHECK(diag > 0.0, DataError, "asset mesh has zero extent");
  StaticFilterResult result;
  const Pose& first = clip.front();
  size_t below = 0;
  for (const Pose& frame : clip) {
    POSESPACE_CHECK(frame.nodes.rows() == first.nodes.rows(), DataError, "clip frames differ in node count");
    const double rms = std::sqrt((frame.nodes - first.nodes).rowwise().squaredNorm().mean()) / diag;
    result.stats.displacement.push_back(rms);
    if (rms < cfg.threshold) {
      ++below;
    }
  }
  const auto n = static_cast<double>(clip.size());
  result.stats.fraction_below_threshold = static_cast<double>(below) / n;
  // "At least" frame_fraction of the frames, counted exactly.
  const auto needed = static_cast<size_t>(std::ceil(cfg.frame_fraction * n - 1e-9));
  result.keep = below < needed;
  return result;
}

// ---------------------------------------------------------------------------

int RigReport::valid_bones() const {
  return static_cast<int>(std::count_if(bones.begin(), bones.end(), [](const BoneReport& b) { return b.valid; }));
}

double RigReport::mean_outside_fraction() const {
  if (bones.empty()) return 0.0;
  double total = 0.0;
  for (const BoneReport& b : bones) total += b.fraction_outside;
  return total / static_cast<double>(bones.size());
}

std::vector<Vec3> bone_samples(const Vec3& a, const Vec3& b, int samples) {
  POSESPACE_CHECK(samples >= 1, UsageError, "need at least one sample per bone");
  if ((b - a).norm() == 0.0) {
    return {a};
  }
  std::vector<Vec3> points;
  points.reserve(static_cast<size_t>(samples));
  for (int k = 0; k < samples; ++k) {
    const double s = (k + 0.5) / samples;
    points.push_back(a + s * (b - a));
  }
  return points;
}

RigReport filter_rig(const Mesh& mesh, const Points& nodes, const std::vector<Edge>& edges,
                     const RigFilterConfig& cfg) {
  POSESPACE_CHECK(cfg.samples_per_bone >= 1 && cfg.n_seeds >= 1, UsageError, "invalid rig filter configuration");
  for (const Edge& e : edges) {
    POSESPACE_CHECK(e.parent >= 0 && e.parent < nodes.rows() && e.child >= 0 && e.child < nodes.rows(), DataError,
                    "edge references a missing node");
  }
  const MeshContainment containment(mesh);
  RigReport report;
  report.acyclic = is_forest(nodes.rows(), edges);
  report.open_mesh = containment.open();
  report.bones.resize(edges.size());
  parallel_for(edges.size(), [&](size_t i) {
    const Edge& e = edges[i];
    const auto samples =
        bone_samples(nodes.row(e.parent).transpose(), nodes.row(e.child).transpose(), cfg.samples_per_bone);
    int outside = 0;
    double max_distance = 0.0;
    for (const Vec3& p : samples) {
      if (!containment.contains(p)) ++outside;
      max_distance = std::max(max_distance, containment.surface_distance(p));
    }
    BoneReport& bone = report.bones[i];
    bone.parent = e.parent;
    bone.child = e.child;
    bone.fraction_outside = static_cast<double>(outside) / static_cast<double>(samples.size());
    bone.max_surface_distance = max_distance;
    bone.valid = bone.fraction_outside < cfg.outside_fraction_max && max_distance <= cfg.surface_dist_max;
  });
  report.accepted = report.acyclic && report.valid_bones() == static_cast<int>(report.bones.size());
  return report;
}

RigReport filter_rig(const Asset& asset, const RigFilterConfig& cfg) {
  return filter_rig(asset.mesh, asset.skeleton.nodes(), asset.skeleton.edges(), cfg);
}

RigSelection select_rig(const std::function<Asset(int seed_index)>& candidate, const RigFilterConfig& cfg) {
  POSESPACE_CHECK(cfg.n_seeds >= 1, UsageError, "need at least one rig candidate");
  std::optional<RigSelection> best;
  for (int k = 0; k < cfg.n_seeds; ++k) {
    RigSelection current{candidate(k), {}};
    current.report = filter_rig(current.asset, cfg);
    current.report.seed_index = k;
    if (current.report.accepted) {
      return current;
    }
    const bool better = !best || current.report.valid_bones() > best->report.valid_bones() ||
                        (current.report.valid_bones() == best->report.valid_bones() &&
                         current.report.mean_outside_fraction() < best->report.mean_outside_fraction());
    if (better) {
      best = std::move(current);
    }
  }
  best->report.fallback = true;
  best->report.accepted = true;
  return std::move(*best);
}

Asset jittered_rig(const Asset& asset, int seed_index, double sigma, uint64_t seed) {
  if (seed_index == 0) {
    return asset;
  }
  Rng rng(derive_seed(seed, static_cast<uint64_t>(seed_index)));
  Points nodes = asset.skeleton.nodes();
  for (Eigen::Index i = 0; i < nodes.rows(); ++i) {
    for (Eigen::Index j = 0; j < 3; ++j) {
      nodes(i, j) += sigma * rng.normal();
    }
  }
  Asset out = asset;
  out.skeleton = Skeleton(std::move(nodes), asset.skeleton.edges(), asset.skeleton.weights());
  return out;
}

Json clip_stats_to_json(const StaticFilterResult& result) {
  return Json{{"keep", result.keep},
              {"displacement", result.stats.displacement},
              {"fraction_below_threshold", result.stats.fraction_below_threshold}};
}

Json rig_report_to_json(const RigReport& report) {
  Json bones = Json::array();
  for (const BoneReport& b : report.bones) {
    bones.push_back(Json{{"parent", b.parent},
                         {"child", b.child},
                         {"fraction_outside", b.fraction_outside},
                         {"max_surface_distance", b.max_surface_distance},
                         {"valid", b.valid}});
  }
  return Json{{"bones", bones},
              {"acyclic", report.acyclic},
              {"open_mesh", report.open_mesh},
              {"accepted", report.accepted},
              {"fallback", report.fallback},
              {"seed_index", report.seed_index}};
}

}  // namespace posespace
