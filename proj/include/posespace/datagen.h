#pragma once

#include "posespace/asset_io.h"
#include "posespace/geometry.h"
#include "posespace/rng.h"

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace posespace {

enum class CreatureTemplate { chain, quadruped, biped };

std::string template_name(CreatureTemplate kind);
CreatureTemplate parse_template(const std::string& name);

struct AngleLimits {
  double lo = 0.0;
  double hi = 0.0;
};

// Procedural creature description. Node 0 is the root; bone b connects its
// parent node to node b + 1. Every bone has two angular degrees of freedom
// (bend about the local z axis, then about the local y axis).
struct CreatureSpec {
  CreatureTemplate kind = CreatureTemplate::chain;
  std::vector<double> bone_lengths;
  std::vector<std::array<AngleLimits, 2>> limits;
  // Correlation of each DOF with the same DOF of the parent bone.
  std::vector<std::array<double, 2>> correlations;
  double radius = 0.1;
  // Relative per-bone length perturbation drawn from the creature seed.
  double length_jitter = 0.0;

  size_t num_bones() const { return bone_lengths.size(); }
  void validate() const;
};

// Template defaults. `chain_bones` only applies to the chain template.
CreatureSpec default_spec(CreatureTemplate kind, int chain_bones = 3);

struct Bone {
  int parent = 0;
  int child = 0;
  double length = 0.0;
  // Rest rotation relative to the parent bone's frame (world frame for bones
  // leaving the root). The bone points along its frame's +x axis.
  Mat3 rest_relative = Mat3::Identity();
};

// Generated asset plus everything needed to sample its ground-truth poses.
struct Creature {
  CreatureSpec spec;
  Asset asset;
  std::vector<Bone> bones;  // parents before children
  Vec3 root = Vec3::Zero();
};

Creature gen_creature(const CreatureSpec& spec, uint64_t seed, int ring_segments = 8);

// Recenters and rescales the creature (mesh, skeleton and pose sampler) to
// unit bounding-box diagonal.
void normalize_creature(Creature& creature);

// Forward kinematics; `angles` holds 2 entries per bone.
Pose pose_from_angles(const Creature& creature, const Eigen::VectorXd& angles);

// Angles from truncated correlated Gaussians (mean at the interval midpoint,
// standard deviation a quarter of its width).
Eigen::VectorXd sample_angles(const Creature& creature, Rng& rng);

PoseSet sample_gt_poses(const Creature& creature, int n, uint64_t seed);

// Temporally coherent clip: angle latents follow an AR(1) chain with
// coefficient rho. rho = 1 freezes the clip at its first frame.
PoseSet sample_clip(const Creature& creature, int frames, double rho, uint64_t seed);

// ---------------------------------------------------------------------------
// Clip filter.

struct ClipStats {
  std::vector<double> displacement;  // per frame, normalized RMS vs frame 0
  double fraction_below_threshold = 0.0;
};

struct StaticFilterConfig {
  double threshold = 0.0015;
  double frame_fraction = 0.9;
};

struct StaticFilterResult {
  bool keep = true;
  ClipStats stats;
};

StaticFilterResult filter_static(const std::vector<Pose>& clip, const Asset& asset,
                                 const StaticFilterConfig& cfg = {});

// ---------------------------------------------------------------------------
// Rig filter.

struct RigFilterConfig {
  double outside_fraction_max = 0.5;
  double surface_dist_max = 0.1;
  int samples_per_bone = 32;
  int n_seeds = 10;
};

struct BoneReport {
  int parent = 0;
  int child = 0;
  double fraction_outside = 0.0;
  double max_surface_distance = 0.0;
  bool valid = true;
};

struct RigReport {
  std::vector<BoneReport> bones;
  bool acyclic = true;
  bool open_mesh = false;
  bool accepted = false;
  // Set by select_rig when no candidate passed and the best one was kept.
  bool fallback = false;
  int seed_index = 0;

  int valid_bones() const;
  double mean_outside_fraction() const;
};

// Sample positions along a bone: midpoints of `samples` equal segments, or
// the node itself for a zero-length bone.
std::vector<Vec3> bone_samples(const Vec3& a, const Vec3& b, int samples);

RigReport filter_rig(const Asset& asset, const RigFilterConfig& cfg = {});
// Same test for an arbitrary node/edge set against the asset's mesh.
RigReport filter_rig(const Mesh& mesh, const Points& nodes, const std::vector<Edge>& edges,
                     const RigFilterConfig& cfg = {});

struct RigSelection {
  Asset asset;
  RigReport report;
};

// Evaluates candidates 0, 1, ... up to cfg.n_seeds and keeps the first
// accepted one; otherwise the candidate with the most valid bones (ties: the
// lowest mean outside fraction), flagged as a fallback.
RigSelection select_rig(const std::function<Asset(int seed_index)>& candidate, const RigFilterConfig& cfg = {});

// Candidate generator for existing assets: index 0 is the asset's own rig,
// later indices jitter the node positions by `sigma` (seeded).
Asset jittered_rig(const Asset& asset, int seed_index, double sigma, uint64_t seed);

Json clip_stats_to_json(const StaticFilterResult& result);
Json rig_report_to_json(const RigReport& report);

}  // namespace posespace
