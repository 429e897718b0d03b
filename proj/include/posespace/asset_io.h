#pragma once

#include "posespace/geometry.h"
#include "posespace/json_io.h"

#include <filesystem>
#include <string>
#include <vector>

namespace posespace {

// Ordered poses of one asset; `tags` records provenance, one entry per pose
// or empty.
struct PoseSet {
  std::string asset;
  std::vector<Pose> poses;
  std::vector<std::string> tags;
};

// Parses the asset document, validates it, recenters the mesh at the origin,
// scales it to unit bounding-box diagonal (skeleton transformed identically)
// and renormalizes skinning weights per vertex.
Asset asset_from_json(const Json& doc, std::string name = {});
Json asset_to_json(const Asset& asset);

Asset load_asset(const std::filesystem::path& path);
void save_asset(const std::filesystem::path& path, const Asset& asset);

Json pose_set_to_json(const PoseSet& set);
PoseSet pose_set_from_json(const Json& doc);
PoseSet load_pose_set(const std::filesystem::path& path);
void save_pose_set(const std::filesystem::path& path, const PoseSet& set);

// Throws DataError unless every pose has the asset's node count and finite coordinates.
void validate_pose(const Asset& asset, const Pose& pose);

Json points_to_json(const Points& points);
Points points_from_json(const Json& doc, const char* what);

// Wavefront OBJ with the mesh's indexed triangles.
void write_obj(const std::filesystem::path& path, const Mesh& mesh);

// Asset name from a file name: "dog.asset.json" -> "dog".
std::string asset_name_from_path(const std::filesystem::path& path);

}  // namespace posespace
