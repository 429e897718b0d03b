#include "posespace/asset_io.h"

#include "posespace/error.h"

#include <cmath>
#include <cstdio>

namespace posespace {

namespace {

double finite_number(const Json& value, const char* what) {
  POSESPACE_CHECK(value.is_number(), DataError, std::string(what) + ": expected a number");
  const double x = value.get<double>();
  POSESPACE_CHECK(std::isfinite(x), DataError, std::string(what) + ": non-finite value");
  return x;
}

int index_value(const Json& value, const char* what) {
  POSESPACE_CHECK(value.is_number_integer(), DataError, std::string(what) + ": expected an integer");
  return value.get<int>();
}

const Json& member(const Json& doc, const char* key) {
  POSESPACE_CHECK(doc.is_object() && doc.contains(key), DataError,
                  std::string("missing field '") + key + "'");
  return doc.at(key);
}

}  // namespace

Json points_to_json(const Points& points) {
  Json out = Json::array();
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    out.push_back({points(i, 0), points(i, 1), points(i, 2)});
  }
  return out;
}

Points points_from_json(const Json& doc, const char* what) {
  POSESPACE_CHECK(doc.is_array(), DataError, std::string(what) + ": expected an array of points");
  Points out(static_cast<Eigen::Index>(doc.size()), 3);
  for (size_t i = 0; i < doc.size(); ++i) {
    const Json& row = doc[i];
    POSESPACE_CHECK(row.is_array() && row.size() == 3, DataError,
                    std::string(what) + ": each point needs three coordinates");
    for (int k = 0; k < 3; ++k) {
      out(static_cast<Eigen::Index>(i), k) = finite_number(row[static_cast<size_t>(k)], what);
    }
  }
  return out;
}

Asset asset_from_json(const Json& doc, std::string name) {
  const Json& mesh_doc = member(doc, "mesh");
  const Json& skel_doc = member(doc, "skeleton");

  Mesh mesh;
  mesh.vertices = points_from_json(member(mesh_doc, "vertices"), "mesh.vertices");
  const Eigen::Index nv = mesh.vertices.rows();
  POSESPACE_CHECK(nv >= 3, DataError, "mesh needs at least three vertices");
  const Json& faces = member(mesh_doc, "faces");
  POSESPACE_CHECK(faces.is_array(), DataError, "mesh.faces: expected an array");
  for (const Json& f : faces) {
    POSESPACE_CHECK(f.is_array() && f.size() == 3, DataError, "mesh.faces: each face needs three indices");
    Face face{};
    for (int k = 0; k < 3; ++k) {
      face[static_cast<size_t>(k)] = index_value(f[static_cast<size_t>(k)], "mesh.faces");
      POSESPACE_CHECK(face[static_cast<size_t>(k)] >= 0 && face[static_cast<size_t>(k)] < nv, DataError,
                      "mesh.faces: vertex index out of range");
    }
    mesh.faces.push_back(face);
  }

  Points nodes = points_from_json(member(skel_doc, "nodes"), "skeleton.nodes");
  const Eigen::Index np = nodes.rows();
  std::vector<Edge> edges;
  const Json& edges_doc = member(skel_doc, "edges");
  POSESPACE_CHECK(edges_doc.is_array(), DataError, "skeleton.edges: expected an array");
  for (const Json& e : edges_doc) {
    POSESPACE_CHECK(e.is_array() && e.size() == 2, DataError, "skeleton.edges: each edge needs two indices");
    edges.push_back({index_value(e[0], "skeleton.edges"), index_value(e[1], "skeleton.edges")});
  }
  validate_forest(np, edges);

  std::vector<Eigen::Triplet<double>> triplets;
  const Json& weights_doc = member(skel_doc, "weights");
  POSESPACE_CHECK(weights_doc.is_array(), DataError, "skeleton.weights: expected an array");
  for (const Json& w : weights_doc) {
    POSESPACE_CHECK(w.is_array() && w.size() == 3, DataError,
                    "skeleton.weights: each entry is [node, vertex, weight]");
    const int node = index_value(w[0], "skeleton.weights");
    const int vert = index_value(w[1], "skeleton.weights");
    const double value = finite_number(w[2], "skeleton.weights");
    POSESPACE_CHECK(node >= 0 && node < np, DataError, "skeleton.weights: node index out of range");
    POSESPACE_CHECK(vert >= 0 && vert < nv, DataError, "skeleton.weights: vertex index out of range");
    POSESPACE_CHECK(value >= 0.0, DataError, "skeleton.weights: negative weight");
    triplets.emplace_back(node, vert, value);
  }
  Skeleton::Weights weights(np, nv);
  weights.setFromTriplets(triplets.begin(), triplets.end());

  // Normalize to a unit bounding-box diagonal centred at the origin. An
  // already-normalized asset is left untouched so save/load round trips
  // are byte-stable.
  const double diag = bbox_diagonal(mesh.vertices);
  POSESPACE_CHECK(diag > 0.0 && std::isfinite(diag), DataError, "mesh has zero extent");
  const Eigen::RowVector3d center =
      0.5 * (mesh.vertices.colwise().maxCoeff() + mesh.vertices.colwise().minCoeff());
  if (std::abs(diag - 1.0) > 1e-12 || center.norm() > 1e-12) {
    mesh.vertices = (mesh.vertices.rowwise() - center) / diag;
    nodes = (nodes.rowwise() - center) / diag;
  }

  weights = renormalize_weights(weights, mesh.vertices, nodes);
  return Asset{std::move(name), std::move(mesh), Skeleton(std::move(nodes), std::move(edges), std::move(weights))};
}

Json asset_to_json(const Asset& asset) {
  Json faces = Json::array();
  for (const Face& f : asset.mesh.faces) {
    faces.push_back({f[0], f[1], f[2]});
  }
  Json edges = Json::array();
  for (const Edge& e : asset.skeleton.edges()) {
    edges.push_back({e.parent, e.child});
  }
  Json weights = Json::array();
  const auto& w = asset.skeleton.weights();
  for (int v = 0; v < w.outerSize(); ++v) {
    for (Skeleton::Weights::InnerIterator it(w, v); it; ++it) {
      weights.push_back({static_cast<int>(it.row()), v, it.value()});
    }
  }
  return Json{{"mesh", {{"vertices", points_to_json(asset.mesh.vertices)}, {"faces", faces}}},
              {"skeleton",
               {{"nodes", points_to_json(asset.skeleton.nodes())}, {"edges", edges}, {"weights", weights}}}};
}

std::string asset_name_from_path(const std::filesystem::path& path) {
  std::string name = path.filename().string();
  for (const char* suffix : {".asset.json", ".json"}) {
    const std::string s(suffix);
    if (name.size() > s.size() && name.compare(name.size() - s.size(), s.size(), s) == 0) {
      return name.substr(0, name.size() - s.size());
    }
  }
  return name;
}

Asset load_asset(const std::filesystem::path& path) {
  return asset_from_json(read_json_file(path), asset_name_from_path(path));
}

void save_asset(const std::filesystem::path& path, const Asset& asset) {
  write_json_file(path, asset_to_json(asset));
}

void validate_pose(const Asset& asset, const Pose& pose) {
  POSESPACE_CHECK(pose.num_nodes() == asset.skeleton.num_nodes(), DataError,
                  "pose has " + std::to_string(pose.num_nodes()) + " nodes, asset has " +
                      std::to_string(asset.skeleton.num_nodes()));
  POSESPACE_CHECK(pose.nodes.allFinite(), DataError, "pose has non-finite coordinates");
}

Json pose_set_to_json(const PoseSet& set) {
  Json poses = Json::array();
  for (const Pose& p : set.poses) {
    poses.push_back(points_to_json(p.nodes));
  }
  return Json{{"asset", set.asset}, {"poses", poses}, {"tags", set.tags}};
}

PoseSet pose_set_from_json(const Json& doc) {
  PoseSet set;
  if (doc.contains("asset") && doc.at("asset").is_string()) {
    set.asset = doc.at("asset").get<std::string>();
  }
  const Json& poses = member(doc, "poses");
  POSESPACE_CHECK(poses.is_array(), DataError, "poses: expected an array");
  for (const Json& p : poses) {
    set.poses.push_back(Pose{points_from_json(p, "poses")});
  }
  if (doc.contains("tags")) {
    POSESPACE_CHECK(doc.at("tags").is_array(), DataError, "tags: expected an array of strings");
    for (const Json& t : doc.at("tags")) {
      POSESPACE_CHECK(t.is_string(), DataError, "tags: expected an array of strings");
      set.tags.push_back(t.get<std::string>());
    }
  }
  return set;
}

PoseSet load_pose_set(const std::filesystem::path& path) { return pose_set_from_json(read_json_file(path)); }

void save_pose_set(const std::filesystem::path& path, const PoseSet& set) {
  write_json_file(path, pose_set_to_json(set));
}

void write_obj(const std::filesystem::path& path, const Mesh& mesh) {
  std::string out;
  char line[128];
  for (Eigen::Index i = 0; i < mesh.vertices.rows(); ++i) {
    std::snprintf(line, sizeof(line), "v %.17g %.17g %.17g\n", mesh.vertices(i, 0), mesh.vertices(i, 1),
                  mesh.vertices(i, 2));
    out += line;
  }
  for (const Face& f : mesh.faces) {
    std::snprintf(line, sizeof(line), "f %d %d %d\n", f[0] + 1, f[1] + 1, f[2] + 1);
    out += line;
  }
  write_file_atomic(path, out);
}

}  // namespace posespace
