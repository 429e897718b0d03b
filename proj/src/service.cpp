#include "posespace/service.h"

#include "posespace/asset_io.h"
#include "posespace/error.h"
#include "posespace/geometry.h"

#include <httplib.h>

#include <cstdio>

namespace posespace {

namespace {

// Unknown asset or pose id.
class NotFound : public DataError {
 public:
  using DataError::DataError;
};

const Json& field(const Json& req, const char* key) {
  if (!req.contains(key)) {
    throw UsageError(std::string("missing field '") + key + "'");
  }
  return req.at(key);
}

template <typename T>
T get_or(const Json& req, const char* key, T fallback) {
  if (!req.contains(key) || req.at(key).is_null()) {
    return fallback;
  }
  try {
    return req.at(key).get<T>();
  } catch (const Json::exception&) {
    throw UsageError(std::string("field '") + key + "' has the wrong type");
  }
}

template <typename T>
T get_required(const Json& req, const char* key) {
  const Json& v = field(req, key);
  try {
    return v.get<T>();
  } catch (const Json::exception&) {
    throw UsageError(std::string("field '") + key + "' has the wrong type");
  }
}

Vec3 vec3_from_json(const Json& v, const char* what) {
  POSESPACE_CHECK(v.is_array() && v.size() == 3, UsageError, std::string(what) + ": expected [x, y, z]");
  Vec3 out;
  for (size_t k = 0; k < 3; ++k) {
    POSESPACE_CHECK(v[k].is_number(), UsageError, std::string(what) + ": expected numbers");
    out[static_cast<Eigen::Index>(k)] = v[k].get<double>();
  }
  return out;
}

}  // namespace

struct Service::AssetEntry {
  Asset asset;
  NodeFeatures features;
  std::unique_ptr<PoseSpace> space;
};

Service::Service(DenoiserModel model, ServiceConfig config) : model_(std::move(model)), config_(config) {
  model_.config.validate();
}

Service::~Service() { stop(); }

int Service::add_asset(Asset asset, std::optional<VertexFeatures> features) {
  auto entry = std::make_shared<AssetEntry>();
  entry->asset = std::move(asset);
  const VertexFeatures fv =
      features ? std::move(*features) : synth_features(entry->asset, model_.config.n_f, config_.feature_seed);
  POSESPACE_CHECK(fv.rows.cols() == model_.config.n_f, DataError,
                  "vertex features have " + std::to_string(fv.rows.cols()) + " columns, model expects " +
                      std::to_string(model_.config.n_f));
  entry->features = aggregate_node_features(entry->asset, fv);
  entry->space = std::make_unique<PoseSpace>(model_, entry->asset, entry->features);
  std::unique_lock lock(assets_mutex_);
  const int id = next_asset_id_++;
  assets_.emplace(id, std::move(entry));
  return id;
}

std::shared_ptr<const Service::AssetEntry> Service::asset_entry(const Json& req) const {
  const int id = get_required<int>(req, "asset_id");
  std::shared_lock lock(assets_mutex_);
  const auto it = assets_.find(id);
  if (it == assets_.end()) {
    throw NotFound("unknown asset_id " + std::to_string(id));
  }
  return it->second;
}

int Service::register_pose(int asset_id, const Pose& pose) {
  std::lock_guard lock(poses_mutex_);
  const int id = next_pose_id_++;
  poses_.emplace(id, std::make_pair(asset_id, pose));
  return id;
}

Pose Service::lookup_pose(int pose_id, int asset_id) const {
  std::lock_guard lock(poses_mutex_);
  const auto it = poses_.find(pose_id);
  if (it == poses_.end()) {
    throw NotFound("unknown pose_id " + std::to_string(pose_id));
  }
  POSESPACE_CHECK(it->second.first == asset_id, UsageError,
                  "pose_id " + std::to_string(pose_id) + " belongs to a different asset");
  return it->second.second;
}

Json Service::on_asset(const Json& req) {
  const Json& doc = req.contains("asset") ? req.at("asset") : req;
  Asset asset = asset_from_json(doc);
  std::optional<VertexFeatures> features;
  if (doc.contains("vertex_features")) {
    features = vertex_features_from_json(doc.at("vertex_features"));
  }
  const int n_nodes = static_cast<int>(asset.skeleton.num_nodes());
  const int n_vertices = static_cast<int>(asset.mesh.num_vertices());
  Json edges = Json::array();
  for (const Edge& e : asset.skeleton.edges()) {
    edges.push_back(Json::array({e.parent, e.child}));
  }
  Json faces = Json::array();
  for (const Face& f : asset.mesh.faces) {
    faces.push_back(Json::array({f[0], f[1], f[2]}));
  }
  Json rest_nodes = points_to_json(asset.skeleton.nodes());
  Json rest_vertices = points_to_json(asset.mesh.vertices);
  const int id = add_asset(std::move(asset), std::move(features));
  return Json{{"asset_id", id},          {"n_nodes", n_nodes}, {"n_vertices", n_vertices},
              {"edges", edges},          {"faces", faces},     {"rest_nodes", rest_nodes},
              {"rest_vertices", rest_vertices}};
}

Json Service::on_sample(const Json& req) {
  const auto entry = asset_entry(req);
  const auto seed = get_or<uint64_t>(req, "seed", 0);
  const int steps = get_or<int>(req, "steps", config_.default_steps);
  const Pose pose = entry->space->sample(steps, seed);
  const int id = register_pose(get_required<int>(req, "asset_id"), pose);
  return Json{{"pose_id", id}, {"nodes", points_to_json(pose.nodes)}};
}

Json Service::on_project(const Json& req) {
  const auto entry = asset_entry(req);
  const int asset_id = get_required<int>(req, "asset_id");
  const PoseSpace& space = *entry->space;

  Pose base;
  if (req.contains("base_pose")) {
    base.nodes = points_from_json(req.at("base_pose"), "base_pose");
  } else if (req.contains("pose_id")) {
    base = lookup_pose(get_required<int>(req, "pose_id"), asset_id);
  } else {
    throw UsageError("missing field 'base_pose'");
  }
  validate_pose(entry->asset, base);

  ConstraintSet constraints;
  std::vector<Vec3> targets;
  if (req.contains("constraints")) {
    const Json& list = req.at("constraints");
    POSESPACE_CHECK(list.is_array(), UsageError, "constraints: expected an array");
    for (const Json& c : list) {
      POSESPACE_CHECK(c.is_object(), UsageError, "constraints: expected objects");
      const int node = get_required<int>(c, "node");
      const Vec3 target = vec3_from_json(field(c, "target"), "constraints.target");
      const double weight = get_or<double>(c, "weight", 1.0);
      constraints.push_back(space.constraint_from_asset_target(node, target, weight));
      targets.push_back(target);
    }
  }

  GuidanceConfig cfg;
  cfg.scale = get_or<double>(req, "scale", config_.default_scale);
  cfg.steps = get_or<int>(req, "steps", config_.default_steps);
  cfg.jacobian_mode = config_.jacobian_mode;
  if (req.contains("jacobian_mode")) {
    const auto mode = get_required<std::string>(req, "jacobian_mode");
    POSESPACE_CHECK(mode == "exact" || mode == "identity", UsageError, "jacobian_mode must be exact or identity");
    cfg.jacobian_mode = mode == "exact" ? JacobianMode::exact : JacobianMode::identity;
  }
  const auto seed = get_or<uint64_t>(req, "seed", 0);

  const Eigen::VectorXd latent = space.ddim_invert(base, cfg.steps);
  const Pose result = space.guided_sample(constraints, cfg, seed, SamplerKind::ddim, latent);
  Json residuals = Json::array();
  for (size_t i = 0; i < constraints.size(); ++i) {
    residuals.push_back((result.nodes.row(constraints[i].node).transpose() - targets[i]).norm());
  }
  const int id = register_pose(asset_id, result);
  return Json{{"pose_id", id}, {"nodes", points_to_json(result.nodes)}, {"constraint_residuals", residuals}};
}

Json Service::on_interpolate(const Json& req) {
  const auto entry = asset_entry(req);
  const int asset_id = get_required<int>(req, "asset_id");
  const Pose a = lookup_pose(get_required<int>(req, "pose_id_a"), asset_id);
  const Pose b = lookup_pose(get_required<int>(req, "pose_id_b"), asset_id);
  const int frames = get_or<int>(req, "frames", 10);
  const int steps = get_or<int>(req, "steps", config_.default_steps);
  Json poses = Json::array();
  for (const Pose& p : entry->space->interpolate(a, b, frames, steps)) {
    poses.push_back(points_to_json(p.nodes));
  }
  return Json{{"poses", poses}};
}

Json Service::on_deform(const Json& req) {
  const auto entry = asset_entry(req);
  Pose pose{points_from_json(field(req, "nodes"), "nodes")};
  validate_pose(entry->asset, pose);
  return Json{{"vertices", points_to_json(deform(entry->asset, pose).vertices)}};
}

Service::Response Service::handle(const std::string& endpoint, const Json& request) {
  Json request_id;
  if (request.is_object() && request.contains("request_id")) {
    request_id = request.at("request_id");
  } else {
    request_id = "req-" + std::to_string(++request_counter_);
  }
  Response response;
  try {
    POSESPACE_CHECK(request.is_object(), UsageError, "request body must be a JSON object");
    if (endpoint == "/asset") {
      response.body = on_asset(request);
    } else if (endpoint == "/sample") {
      response.body = on_sample(request);
    } else if (endpoint == "/project") {
      response.body = on_project(request);
    } else if (endpoint == "/interpolate") {
      response.body = on_interpolate(request);
    } else if (endpoint == "/deform") {
      response.body = on_deform(request);
    } else {
      response.status = 404;
      response.body = Json{{"code", "not_found"}, {"message", "unknown endpoint " + endpoint}};
    }
  } catch (const NotFound& e) {
    response.status = 404;
    response.body = Json{{"code", "not_found"}, {"message", e.what()}};
  } catch (const UsageError& e) {
    response.status = 400;
    response.body = Json{{"code", "bad_request"}, {"message", e.what()}};
  } catch (const DataError& e) {
    response.status = 422;
    response.body = Json{{"code", "invalid_data"}, {"message", e.what()}};
  } catch (const NumericalError& e) {
    response.status = 500;
    response.body = Json{{"code", "numerical_failure"}, {"message", e.what()}};
  } catch (const std::exception& e) {
    response.status = 500;
    response.body = Json{{"code", "internal"}, {"message", e.what()}};
  }
  response.body["request_id"] = request_id;
  return response;
}

int Service::bind(const std::string& host, int port) {
  server_ = std::make_unique<httplib::Server>();
  // SO_REUSEADDR only: the library default also sets SO_REUSEPORT, which
  // would let a second server silently share a port already in use.
  server_->set_socket_options([](socket_t sock) {
    int yes = 1;
    setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof(yes));
  });
  for (const char* endpoint : {"/asset", "/sample", "/project", "/interpolate", "/deform"}) {
    server_->Post(endpoint, [this, endpoint](const httplib::Request& http_req, httplib::Response& http_res) {
      Json body = Json::parse(http_req.body, nullptr, false);
      Response res;
      if (body.is_discarded()) {
        res.status = 400;
        res.body = Json{{"code", "bad_request"}, {"message", "request body is not valid JSON"}};
        res.body["request_id"] = http_req.get_header_value("X-Request-Id");
      } else {
        if (body.is_object() && !body.contains("request_id") && http_req.has_header("X-Request-Id")) {
          body["request_id"] = http_req.get_header_value("X-Request-Id");
        }
        res = handle(endpoint, body);
      }
      http_res.status = res.status;
      http_res.set_content(dump_json(res.body, -1), "application/json");
    });
  }
  server_->Get("/health", [](const httplib::Request&, httplib::Response& res) {
    res.set_content("{\"status\":\"ok\"}\n", "application/json");
  });
  int bound = port;
  if (port == 0) {
    bound = server_->bind_to_any_port(host);
  } else if (!server_->bind_to_port(host, port)) {
    bound = -1;
  }
  POSESPACE_CHECK(bound > 0, UsageError, "cannot listen on " + host + ":" + std::to_string(port) + " (port in use?)");
  return bound;
}

void Service::listen() {
  POSESPACE_CHECK(server_ != nullptr, UsageError, "bind() must be called before listen()");
  server_->listen_after_bind();
}

void Service::stop() {
  if (server_) {
    server_->stop();
  }
}

}  // namespace posespace
