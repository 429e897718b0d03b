#pragma once

#include "posespace/denoiser.h"
#include "posespace/diffusion.h"
#include "posespace/features.h"
#include "posespace/json_io.h"

#include <atomic>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>

namespace httplib {
class Server;
}

namespace posespace {

struct ServiceConfig {
  int default_steps = 100;
  double default_scale = 10.0;
  JacobianMode jacobian_mode = JacobianMode::exact;
  // Seed for synthesized vertex features when an uploaded asset has none.
  uint64_t feature_seed = 0;
};

// JSON request handling for the pose editor. The model is fixed at
// construction; assets and poses are registered per session under
// increasing integer ids. handle() is safe to call concurrently.
class Service {
 public:
  Service(DenoiserModel model, ServiceConfig config = {});
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  struct Response {
    int status = 200;
    Json body;
  };

  // Dispatches "/asset", "/sample", "/project", "/interpolate", "/deform".
  // Every response body carries the request's request_id (or a generated one).
  Response handle(const std::string& endpoint, const Json& request);

  // Registers an asset directly (same as POST /asset); returns its id.
  int add_asset(Asset asset, std::optional<VertexFeatures> features = std::nullopt);

  // Binds the HTTP server; port 0 picks a free port. Returns the bound port.
  int bind(const std::string& host, int port);
  // Serves until stop() is called.
  void listen();
  void stop();

 private:
  struct AssetEntry;

  Json on_asset(const Json& req);
  Json on_sample(const Json& req);
  Json on_project(const Json& req);
  Json on_interpolate(const Json& req);
  Json on_deform(const Json& req);

  std::shared_ptr<const AssetEntry> asset_entry(const Json& req) const;
  int register_pose(int asset_id, const Pose& pose);
  Pose lookup_pose(int pose_id, int asset_id) const;

  const DenoiserModel model_;
  const ServiceConfig config_;

  mutable std::shared_mutex assets_mutex_;
  std::map<int, std::shared_ptr<const AssetEntry>> assets_;
  int next_asset_id_ = 1;

  mutable std::mutex poses_mutex_;
  std::map<int, std::pair<int, Pose>> poses_;  // pose id -> (asset id, pose)
  int next_pose_id_ = 1;

  std::atomic<uint64_t> request_counter_{0};
  std::unique_ptr<httplib::Server> server_;
};

}  // namespace posespace
