#include "posespace/cli.h"

#include "posespace/asset_io.h"
#include "posespace/checkpoint.h"
#include "posespace/datagen.h"
#include "posespace/diffusion.h"
#include "posespace/error.h"
#include "posespace/features.h"
#include "posespace/fit.h"
#include "posespace/json_io.h"
#include "posespace/metrics.h"
#include "posespace/parallel.h"
#include "posespace/rng.h"
#include "posespace/service.h"

#include <CLI11.hpp>

#include <chrono>
#include <csignal>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <sstream>

namespace fs = std::filesystem;

namespace posespace {

namespace {

void log(const std::string& message) { std::fprintf(stderr, "posespace: %s\n", message.c_str()); }

// Every option of a subcommand with its resolved value, for the manifest.
Json resolved_options(const CLI::App& app) {
  Json cfg = Json::object();
  for (const CLI::Option* opt : app.get_options()) {
    const std::string name = opt->get_single_name();
    if (name == "help" || name.empty()) {
      continue;
    }
    if (opt->get_expected_min() == 0) {
      cfg[name] = opt->count() > 0;
      continue;
    }
    const auto& results = opt->results();
    if (results.empty()) {
      cfg[name] = opt->get_default_str().empty() ? Json() : Json(opt->get_default_str());
    } else if (results.size() == 1) {
      cfg[name] = results.front();
    } else {
      cfg[name] = results;
    }
  }
  return cfg;
}

struct RunContext {
  std::vector<std::string> argv;
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  int threads = 1;
};

void write_manifest(const RunContext& run, const CLI::App& sub, const fs::path& manifest_path, const Json& inputs,
                    const Json& outputs, const Json& seeds, const Json& extra = Json::object()) {
  const double elapsed =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - run.start).count();
  Json manifest{{"command", sub.get_name()},
                {"argv", run.argv},
                {"config", resolved_options(sub)},
                {"seeds", seeds},
                {"inputs", inputs},
                {"outputs", outputs},
                {"threads", run.threads},
                {"tool_version", kToolVersion},
                {"wall_clock_seconds", elapsed}};
  for (const auto& [key, value] : extra.items()) {
    manifest[key] = value;
  }
  write_json_file(manifest_path, manifest);
}

fs::path manifest_for(const fs::path& out) {
  if (fs::is_directory(out)) {
    return out / "manifest.json";
  }
  return fs::path(out.string() + ".manifest.json");
}

void ensure_parent(const fs::path& out) {
  if (out.has_parent_path()) {
    fs::create_directories(out.parent_path());
  }
}

// ---------------------------------------------------------------------------
// Model loading shared by the sampling commands.

DiffusionSchedule schedule_from_meta(const Json& meta) {
  if (meta.contains("schedule")) {
    const Json& s = meta.at("schedule");
    return DiffusionSchedule::linear(s.value("T", 1000), s.value("beta_start", 1e-4), s.value("beta_end", 0.02));
  }
  return DiffusionSchedule::linear();
}

struct LoadedModel {
  Checkpoint ckpt;
  Asset asset;
  NodeFeatures features;
  std::unique_ptr<PoseSpace> space;
};

struct ModelOptions {
  std::string model;
  std::string asset;
  std::string features;
  std::optional<uint64_t> feature_seed;

  void add(CLI::App* sub) {
    sub->add_option("--model", model, "Checkpoint file")->required();
    sub->add_option("--asset", asset, "Asset JSON file")->required();
    sub->add_option("--features", features, "Per-vertex features JSON (default: synthesized)");
    sub->add_option("--feature-seed", feature_seed, "Seed for synthesized features (default: from checkpoint)");
  }

  std::unique_ptr<LoadedModel> load() const {
    auto loaded = std::make_unique<LoadedModel>();
    loaded->ckpt = load_checkpoint(model);
    loaded->asset = load_asset(asset);
    VertexFeatures fv;
    if (!features.empty()) {
      fv = load_vertex_features(features);
    } else {
      const uint64_t seed = feature_seed ? *feature_seed : loaded->ckpt.meta.value("feature_seed", uint64_t{0});
      fv = synth_features(loaded->asset, loaded->ckpt.model.config.n_f, seed);
    }
    POSESPACE_CHECK(fv.rows.cols() == loaded->ckpt.model.config.n_f, DataError,
                    "feature dimension does not match the model");
    loaded->features = aggregate_node_features(loaded->asset, fv);
    loaded->space = std::make_unique<PoseSpace>(loaded->ckpt.model, loaded->asset, loaded->features,
                                                schedule_from_meta(loaded->ckpt.meta));
    return loaded;
  }
};

SamplerKind parse_sampler(const std::string& name) {
  if (name == "ddpm") return SamplerKind::ddpm;
  if (name == "ddim") return SamplerKind::ddim;
  throw UsageError("--sampler must be ddpm or ddim");
}

Pose pick_pose(const std::string& path, int index, const Asset& asset) {
  const PoseSet set = load_pose_set(path);
  POSESPACE_CHECK(index >= 0 && index < static_cast<int>(set.poses.size()), UsageError,
                  "pose index " + std::to_string(index) + " out of range for " + path);
  const Pose& pose = set.poses[static_cast<size_t>(index)];
  validate_pose(asset, pose);
  return pose;
}

PoseSet make_set(const Asset& asset, std::vector<Pose> poses, const std::string& tag) {
  PoseSet set;
  set.asset = asset.name;
  set.tags.assign(poses.size(), tag);
  set.poses = std::move(poses);
  return set;
}

Json latents_to_json(const std::vector<Eigen::VectorXd>& latents, int steps) {
  Json rows = Json::array();
  for (const auto& z : latents) {
    rows.push_back(std::vector<double>(z.data(), z.data() + z.size()));
  }
  return Json{{"latents", rows}, {"steps", steps}};
}

// Locates "<name>.asset.json" next to `near`, then one directory up.
fs::path find_asset_file(const std::string& name, const fs::path& near) {
  for (const fs::path& dir : {near, near.parent_path()}) {
    const fs::path candidate = dir / (name + ".asset.json");
    if (fs::exists(candidate)) {
      return candidate;
    }
  }
  throw DataError("cannot find asset '" + name + "' near " + near.string());
}

std::vector<fs::path> files_with_suffix(const fs::path& dir, const std::string& suffix) {
  POSESPACE_CHECK(fs::is_directory(dir), DataError, dir.string() + " is not a directory");
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (entry.is_regular_file() && name.size() > suffix.size() &&
        name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0) {
      out.push_back(entry.path());
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<Mesh> load_targets(const fs::path& path, const Asset& asset) {
  const Json doc = read_json_file(path);
  std::vector<Mesh> targets;
  auto add = [&](const Json& vertices) {
    Mesh m{points_from_json(vertices, "target vertices"), asset.mesh.faces};
    POSESPACE_CHECK(m.vertices.rows() == asset.mesh.num_vertices(), DataError,
                    "target has " + std::to_string(m.vertices.rows()) + " vertices, asset has " +
                        std::to_string(asset.mesh.num_vertices()));
    targets.push_back(std::move(m));
  };
  if (doc.contains("frames")) {
    for (const Json& frame : doc.at("frames")) {
      add(frame.is_object() ? frame.at("vertices") : frame);
    }
  } else if (doc.contains("vertices")) {
    add(doc.at("vertices"));
  } else if (doc.contains("mesh")) {
    add(doc.at("mesh").at("vertices"));
  } else {
    throw DataError(path.string() + ": expected 'vertices' or 'frames'");
  }
  POSESPACE_CHECK(!targets.empty(), DataError, "no target frames in " + path.string());
  return targets;
}

Constraint parse_constraint(const std::string& text, const PoseSpace& space) {
  // node:x,y,z[:w]
  std::vector<std::string> parts;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ':')) parts.push_back(part);
  POSESPACE_CHECK(parts.size() == 2 || parts.size() == 3, UsageError,
                  "--constraint expects node:x,y,z[:w], got '" + text + "'");
  try {
    const int node = std::stoi(parts[0]);
    std::vector<double> xyz;
    std::stringstream cs(parts[1]);
    while (std::getline(cs, part, ',')) xyz.push_back(std::stod(part));
    POSESPACE_CHECK(xyz.size() == 3, UsageError, "--constraint target needs three coordinates: '" + text + "'");
    const double w = parts.size() == 3 ? std::stod(parts[2]) : 1.0;
    return space.constraint_from_asset_target(node, Vec3(xyz[0], xyz[1], xyz[2]), w);
  } catch (const std::invalid_argument&) {
    throw UsageError("--constraint expects numbers: '" + text + "'");
  } catch (const std::out_of_range&) {
    throw UsageError("--constraint value out of range: '" + text + "'");
  }
}

// FNV-1a; stable across platforms unlike std::hash.
uint64_t name_hash(const std::string& name) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : name) {
    h = (h ^ c) * 0x100000001b3ULL;
  }
  return h;
}

std::atomic<Service*> g_service{nullptr};

void handle_signal(int) {
  if (Service* s = g_service.load()) {
    s->stop();
  }
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Pose-space engine for rigged meshes", "posespace"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);
  app.option_defaults()->always_capture_default();

  RunContext run;
  for (int i = 0; i < argc; ++i) run.argv.emplace_back(argv[i]);
  std::function<void()> action;

  auto add_threads = [&](CLI::App* sub) {
    sub->add_option("--threads", run.threads, "Worker threads (1 is the determinism reference)")
        ->check(CLI::Range(1, 1024));
  };

  // fit ---------------------------------------------------------------------
  struct {
    std::string asset, target, out;
    FitConfig cfg;
  } fit;
  {
    CLI::App* sub = app.add_subcommand("fit", "Fit skeleton poses to deformed target meshes");
    sub->add_option("--asset", fit.asset, "Asset JSON file")->required();
    sub->add_option("--target,--targets", fit.target, "Target vertices JSON ('vertices' or 'frames')")->required();
    sub->add_option("--out", fit.out, "Output pose set")->required();
    sub->add_option("--lambda", fit.cfg.lambda, "Edge-length regularization weight");
    sub->add_option("--iters", fit.cfg.max_iters, "Maximum iterations per frame");
    sub->add_option("--lr", fit.cfg.learning_rate, "Adam learning rate");
    sub->add_option("--tol", fit.cfg.convergence_tol, "Relative loss change for convergence");
    sub->add_option("--final-lr-fraction", fit.cfg.final_lr_fraction, "Cosine decay floor");
    sub->add_option("--warmup", fit.cfg.warmup_fraction, "Fraction of iterations fitting the reconstruction alone");
    add_threads(sub);
    sub->callback([&, sub] {
      action = [&, sub] {
        fit.cfg.validate();
        const Asset asset = load_asset(fit.asset);
        const auto targets = load_targets(fit.target, asset);
        const auto results = fit_sequence(asset, targets, fit.cfg);
        std::vector<Pose> poses;
        Json frames = Json::array();
        for (const FitResult& r : results) {
          poses.push_back(r.pose);
          frames.push_back(Json{{"recon_loss", r.final_recon_loss},
                                {"edge_loss", r.final_edge_loss},
                                {"iterations", r.iterations_used},
                                {"converged", r.converged}});
        }
        ensure_parent(fit.out);
        save_pose_set(fit.out, make_set(asset, std::move(poses), "fit"));
        write_manifest(run, *sub, manifest_for(fit.out), {fit.asset, fit.target}, {fit.out}, Json::object(),
                       Json{{"frames", frames}});
      };
    });
  }

  // train -------------------------------------------------------------------
  struct {
    std::string data, out, init;
    DenoiserConfig model;
    TrainConfig cfg;
    int T = 1000;
    uint64_t init_seed = 0;
    uint64_t feature_seed = 0;
  } train_opts;
  {
    auto& o = train_opts;
    CLI::App* sub = app.add_subcommand("train", "Train the pose denoiser");
    sub->add_option("--data", o.data, "Directory with <name>.asset.json and <name>.poses.json pairs")->required();
    sub->add_option("--out", o.out, "Output checkpoint")->required();
    sub->add_option("--init", o.init, "Resume from this checkpoint instead of a fresh model");
    sub->add_option("--d-model", o.model.d_model, "Token width");
    sub->add_option("--heads", o.model.n_heads, "Attention heads");
    sub->add_option("--layers", o.model.n_layers, "Transformer blocks");
    sub->add_option("--d-ff", o.model.d_ff, "Feed-forward width");
    sub->add_option("--n-f", o.model.n_f, "Feature dimension");
    sub->add_option("--max-graph-dist", o.model.max_graph_dist, "Largest hop distance with its own bias");
    sub->add_option("--T", o.T, "Diffusion steps");
    sub->add_option("--steps", o.cfg.steps, "Optimizer steps (0: derive from --epochs)");
    sub->add_option("--epochs", o.cfg.epochs, "Epochs when --steps is 0");
    sub->add_option("--batch", o.cfg.batch, "Batch size");
    sub->add_option("--lr", o.cfg.lr, "Adam learning rate");
    sub->add_option("--final-lr-fraction", o.cfg.final_lr_fraction, "Cosine decay floor (1: constant)");
    sub->add_option("--seed", o.cfg.seed, "Training seed");
    sub->add_option("--init-seed", o.init_seed, "Parameter initialization seed");
    sub->add_option("--feature-seed", o.feature_seed, "Seed for synthesized features");
    sub->add_option("--val-fraction", o.cfg.validation_fraction, "Held-out fraction");
    sub->add_option("--eval-interval", o.cfg.eval_interval, "Steps between validation passes");
    sub->add_flag("--keep-best", o.cfg.keep_best, "Return the best-validation parameters");
    sub->add_option("--log-interval", o.cfg.log_interval, "Steps between progress lines (0: silent)");
    add_threads(sub);
    sub->callback([&, sub] {
      action = [&, sub] {
        std::deque<Asset> assets;
        std::deque<NodeFeatures> features;
        std::vector<TrainingSample> dataset;
        Json inputs = Json::array();
        DenoiserModel model;
        if (!o.init.empty()) {
          model = load_checkpoint(o.init).model;
          inputs.push_back(o.init);
        } else {
          o.model.validate();
          model = init_params(o.model, o.init_seed);
        }
        for (const fs::path& poses_path : files_with_suffix(o.data, ".poses.json")) {
          const PoseSet set = load_pose_set(poses_path);
          const fs::path asset_path = find_asset_file(set.asset, poses_path.parent_path());
          assets.push_back(load_asset(asset_path));
          const Asset& asset = assets.back();
          const fs::path feat_path = poses_path.parent_path() / (set.asset + ".features.json");
          const VertexFeatures fv = fs::exists(feat_path) ? load_vertex_features(feat_path)
                                                          : synth_features(asset, model.config.n_f, o.feature_seed);
          features.push_back(aggregate_node_features(asset, fv));
          for (const Pose& p : set.poses) {
            validate_pose(asset, p);
            dataset.push_back(TrainingSample{&asset, &features.back(), p});
          }
          inputs.push_back(poses_path.string());
          inputs.push_back(asset_path.string());
        }
        POSESPACE_CHECK(!dataset.empty(), DataError, "no poses found in " + o.data);
        std::vector<std::pair<const Asset*, const Pose*>> pairs;
        for (const auto& s : dataset) pairs.emplace_back(s.asset, &s.pose);
        model.stats = compute_sigma_p(pairs);
        log("training on " + std::to_string(dataset.size()) + " poses, sigma_p " + std::to_string(model.stats.sigma_p));
        const auto schedule = DiffusionSchedule::linear(o.T);
        const TrainResult result = train(model, dataset, schedule, o.cfg);
        Checkpoint ckpt{result.model, Json::object()};
        ckpt.meta["schedule"] = Json{{"T", o.T}, {"beta_start", 1e-4}, {"beta_end", 0.02}};
        ckpt.meta["feature_seed"] = o.feature_seed;
        ckpt.meta["loss_curve"] = result.loss_curve;
        ckpt.meta["validation_curve"] = result.validation_curve;
        ckpt.meta["best_step"] = result.best_step;
        ensure_parent(o.out);
        save_checkpoint(o.out, ckpt);
        write_manifest(run, *sub, manifest_for(o.out), inputs, {o.out},
                       Json{{"seed", o.cfg.seed}, {"init_seed", o.init_seed}, {"feature_seed", o.feature_seed}},
                       Json{{"final_loss", result.loss_curve.empty() ? 0.0 : result.loss_curve.back()}});
      };
    });
  }

  // sample ------------------------------------------------------------------
  struct {
    ModelOptions m;
    std::string out, sampler = "ddpm";
    int n = 1, steps = 100;
    uint64_t seed = 0;
  } sample_opts;
  {
    auto& o = sample_opts;
    CLI::App* sub = app.add_subcommand("sample", "Draw poses from the learned pose space");
    o.m.add(sub);
    sub->add_option("--out", o.out, "Output pose set")->required();
    sub->add_option("--n", o.n, "Number of poses")->check(CLI::PositiveNumber);
    sub->add_option("--steps", o.steps, "Sampling steps");
    sub->add_option("--seed", o.seed, "Seed (pose i uses an independent stream derived from it)");
    sub->add_option("--sampler", o.sampler, "ddpm or ddim");
    add_threads(sub);
    sub->callback([&, sub] {
      action = [&, sub] {
        const SamplerKind kind = parse_sampler(o.sampler);
        const auto loaded = o.m.load();
        std::vector<Pose> poses(static_cast<size_t>(o.n));
        parallel_for(poses.size(), [&](size_t i) {
          poses[i] = loaded->space->sample(o.steps, derive_seed(o.seed, i), kind);
        });
        ensure_parent(o.out);
        save_pose_set(o.out, make_set(loaded->asset, std::move(poses), "sample"));
        write_manifest(run, *sub, manifest_for(o.out), {o.m.model, o.m.asset}, {o.out}, Json{{"seed", o.seed}});
      };
    });
  }

  // invert ------------------------------------------------------------------
  struct {
    ModelOptions m;
    std::string poses, out;
    int steps = 100;
  } invert_opts;
  {
    auto& o = invert_opts;
    CLI::App* sub = app.add_subcommand("invert", "DDIM-invert poses to terminal latents");
    o.m.add(sub);
    sub->add_option("--poses", o.poses, "Input pose set")->required();
    sub->add_option("--out", o.out, "Output latents JSON")->required();
    sub->add_option("--steps", o.steps, "Inversion steps");
    add_threads(sub);
    sub->callback([&, sub] {
      action = [&, sub] {
        const auto loaded = o.m.load();
        const PoseSet set = load_pose_set(o.poses);
        std::vector<Eigen::VectorXd> latents(set.poses.size());
        parallel_for(latents.size(), [&](size_t i) {
          validate_pose(loaded->asset, set.poses[i]);
          latents[i] = loaded->space->ddim_invert(set.poses[i], o.steps);
        });
        ensure_parent(o.out);
        write_json_file(o.out, latents_to_json(latents, o.steps));
        write_manifest(run, *sub, manifest_for(o.out), {o.m.model, o.m.asset, o.poses}, {o.out}, Json::object());
      };
    });
  }

  // edit --------------------------------------------------------------------
  struct {
    ModelOptions m;
    std::string pose, out, mode = "guided", jacobian = "exact", sampler = "ddim";
    std::vector<std::string> constraints;
    int index = 0, steps = 100, inner_steps = 3;
    double scale = 10.0, t_proj = 0.4;
    uint64_t seed = 0;
    bool from_noise = false;
  } edit_opts;
  {
    auto& o = edit_opts;
    CLI::App* sub = app.add_subcommand("edit", "Constrained editing and manifold projection");
    o.m.add(sub);
    sub->add_option("--pose", o.pose, "Pose set holding the base pose");
    sub->add_option("--index", o.index, "Index of the base pose in --pose");
    sub->add_option("--constraint", o.constraints, "node:x,y,z[:w] in asset coordinates (repeatable)");
    sub->add_option("--mode", o.mode, "guided or project");
    sub->add_option("--scale", o.scale, "Guidance scale");
    sub->add_option("--steps", o.steps, "Sampling steps");
    sub->add_option("--jacobian", o.jacobian, "exact or identity");
    sub->add_option("--guidance-iters", o.inner_steps, "Gradient steps on P^t per sampling step");
    sub->add_option("--sampler", o.sampler, "Sampler for guided mode (ddpm or ddim)");
    sub->add_flag("--from-noise", o.from_noise, "Start guided sampling from seeded noise, not the inverted base pose");
    sub->add_option("--t-proj", o.t_proj, "Projection depth as a fraction of T");
    sub->add_option("--seed", o.seed, "Seed");
    sub->add_option("--out", o.out, "Output pose set")->required();
    add_threads(sub);
    sub->callback([&, sub] {
      action = [&, sub] {
        const auto loaded = o.m.load();
        const PoseSpace& space = *loaded->space;
        Json extra = Json::object();
        Pose result;
        if (o.mode == "project") {
          POSESPACE_CHECK(!o.pose.empty(), UsageError, "--pose is required with --mode project");
          result = space.project(pick_pose(o.pose, o.index, loaded->asset), o.t_proj, o.steps, o.seed);
        } else if (o.mode == "guided") {
          ConstraintSet constraints;
          for (const auto& text : o.constraints) constraints.push_back(parse_constraint(text, space));
          POSESPACE_CHECK(o.jacobian == "exact" || o.jacobian == "identity", UsageError,
                          "--jacobian must be exact or identity");
          GuidanceConfig cfg{o.scale, o.jacobian == "exact" ? JacobianMode::exact : JacobianMode::identity, o.steps,
                             o.inner_steps};
          std::optional<Eigen::VectorXd> latent;
          if (!o.from_noise) {
            POSESPACE_CHECK(!o.pose.empty(), UsageError, "--pose is required unless --from-noise is given");
            latent = space.ddim_invert(pick_pose(o.pose, o.index, loaded->asset), o.steps);
          }
          result = space.guided_sample(constraints, cfg, o.seed, parse_sampler(o.sampler), latent);
          Json residuals = Json::array();
          for (const Constraint& c : constraints) {
            const Vec3 target = loaded->asset.skeleton.nodes().row(c.node).transpose() +
                                c.target * loaded->ckpt.model.stats.sigma_p;
            residuals.push_back((result.nodes.row(c.node).transpose() - target).norm());
          }
          extra["constraint_residuals"] = residuals;
        } else {
          throw UsageError("--mode must be guided or project");
        }
        ensure_parent(o.out);
        save_pose_set(o.out, make_set(loaded->asset, {result}, o.mode));
        Json inputs{o.m.model, o.m.asset};
        if (!o.pose.empty()) inputs.push_back(o.pose);
        write_manifest(run, *sub, manifest_for(o.out), inputs, {o.out}, Json{{"seed", o.seed}}, extra);
      };
    });
  }

  // interp ------------------------------------------------------------------
  struct {
    ModelOptions m;
    std::string a, b, out;
    int a_index = 0, b_index = 0, frames = 10, steps = 100;
  } interp_opts;
  {
    auto& o = interp_opts;
    CLI::App* sub = app.add_subcommand("interp", "Interpolate between two poses in latent space");
    o.m.add(sub);
    sub->add_option("--a", o.a, "Pose set holding pose A")->required();
    sub->add_option("--b", o.b, "Pose set holding pose B")->required();
    sub->add_option("--a-index", o.a_index, "Index of pose A");
    sub->add_option("--b-index", o.b_index, "Index of pose B");
    sub->add_option("--frames", o.frames, "Number of frames including both endpoints");
    sub->add_option("--steps", o.steps, "DDIM steps");
    sub->add_option("--out", o.out, "Output pose set")->required();
    add_threads(sub);
    sub->callback([&, sub] {
      action = [&, sub] {
        const auto loaded = o.m.load();
        const Pose a = pick_pose(o.a, o.a_index, loaded->asset);
        const Pose b = pick_pose(o.b, o.b_index, loaded->asset);
        auto frames = loaded->space->interpolate(a, b, o.frames, o.steps);
        ensure_parent(o.out);
        save_pose_set(o.out, make_set(loaded->asset, std::move(frames), "interp"));
        write_manifest(run, *sub, manifest_for(o.out), {o.m.model, o.m.asset, o.a, o.b}, {o.out}, Json::object());
      };
    });
  }

  // walk --------------------------------------------------------------------
  struct {
    ModelOptions m;
    std::string out;
    int length = 10, steps = 100;
    double rho = 0.9;
    uint64_t seed = 0;
  } walk_opts;
  {
    auto& o = walk_opts;
    CLI::App* sub = app.add_subcommand("walk", "Correlated latent walk decoded into a pose trajectory");
    o.m.add(sub);
    sub->add_option("--len", o.length, "Number of frames");
    sub->add_option("--rho", o.rho, "Lag-one latent correlation in [0, 1)");
    sub->add_option("--steps", o.steps, "DDIM steps");
    sub->add_option("--seed", o.seed, "Seed");
    sub->add_option("--out", o.out, "Output pose set")->required();
    add_threads(sub);
    sub->callback([&, sub] {
      action = [&, sub] {
        const auto loaded = o.m.load();
        auto frames = loaded->space->walk(o.length, o.rho, o.steps, o.seed);
        ensure_parent(o.out);
        save_pose_set(o.out, make_set(loaded->asset, std::move(frames), "walk"));
        write_manifest(run, *sub, manifest_for(o.out), {o.m.model, o.m.asset}, {o.out}, Json{{"seed", o.seed}});
      };
    });
  }

  // datagen -----------------------------------------------------------------
  struct {
    std::string kind = "quadruped", out;
    int creatures = 20, poses = 500, chain_bones = 3, clips = 2, clip_frames = 60, static_clips = 1, segments = 8;
    double jitter = 0.15, clip_rho = 0.95;
    uint64_t seed = 0;
  } gen_opts;
  {
    auto& o = gen_opts;
    CLI::App* sub = app.add_subcommand("datagen", "Generate synthetic creatures and ground-truth poses");
    sub->add_option("--template", o.kind, "chain, quadruped or biped");
    sub->add_option("--n-creatures", o.creatures, "Number of creatures")->check(CLI::PositiveNumber);
    sub->add_option("--poses", o.poses, "Ground-truth poses per creature")->check(CLI::PositiveNumber);
    sub->add_option("--chain-bones", o.chain_bones, "Bones of the chain template");
    sub->add_option("--length-jitter", o.jitter, "Relative bone length variation between creatures");
    sub->add_option("--segments", o.segments, "Tube segments around each bone");
    sub->add_option("--clips", o.clips, "Moving clips per creature");
    sub->add_option("--static-clips", o.static_clips, "Frozen clips per creature");
    sub->add_option("--clip-frames", o.clip_frames, "Frames per clip");
    sub->add_option("--clip-rho", o.clip_rho, "Frame-to-frame latent correlation of moving clips");
    sub->add_option("--seed", o.seed, "Seed");
    sub->add_option("--out", o.out, "Output directory")->required();
    add_threads(sub);
    sub->callback([&, sub] {
      action = [&, sub] {
        CreatureSpec spec = default_spec(parse_template(o.kind), o.chain_bones);
        spec.length_jitter = o.jitter;
        const fs::path out(o.out);
        fs::create_directories(out / "clips");
        Json outputs = Json::array();
        std::vector<Json> outputs_per(static_cast<size_t>(o.creatures));
        parallel_for(static_cast<size_t>(o.creatures), [&](size_t k) {
          const uint64_t creature_seed = derive_seed(o.seed, 3 * k);
          Creature creature = gen_creature(spec, creature_seed, o.segments);
          normalize_creature(creature);
          char name[64];
          std::snprintf(name, sizeof(name), "%s_%03zu", o.kind.c_str(), k);
          creature.asset.name = name;
          Json files = Json::array();
          const fs::path asset_path = out / (std::string(name) + ".asset.json");
          save_asset(asset_path, creature.asset);
          files.push_back(asset_path.string());
          PoseSet gt = sample_gt_poses(creature, o.poses, derive_seed(o.seed, 3 * k + 1));
          const fs::path poses_path = out / (std::string(name) + ".poses.json");
          save_pose_set(poses_path, gt);
          files.push_back(poses_path.string());
          for (int c = 0; c < o.clips + o.static_clips; ++c) {
            const bool frozen = c >= o.clips;
            PoseSet clip = sample_clip(creature, o.clip_frames, frozen ? 1.0 : o.clip_rho,
                                       derive_seed(derive_seed(o.seed, 3 * k + 2), static_cast<uint64_t>(c)));
            char clip_name[96];
            std::snprintf(clip_name, sizeof(clip_name), "%s_clip%02d.poses.json", name, c);
            const fs::path clip_path = out / "clips" / clip_name;
            save_pose_set(clip_path, clip);
            files.push_back(clip_path.string());
          }
          outputs_per[k] = files;
        });
        for (const Json& files : outputs_per)
          for (const Json& f : files) outputs.push_back(f);
        write_manifest(run, *sub, out / "manifest.json", Json::array(), outputs, Json{{"seed", o.seed}});
      };
    });
  }

  // filter ------------------------------------------------------------------
  struct {
    std::string clips, report;
    StaticFilterConfig stat;
    RigFilterConfig rig;
    double jitter = 0.02;
    uint64_t seed = 0;
  } filter_opts;
  {
    auto& o = filter_opts;
    CLI::App* sub = app.add_subcommand("filter", "Static-clip and rig-validity filters");
    sub->add_option("--clips", o.clips, "Directory of clip pose sets")->required();
    sub->add_option("--report", o.report, "Output report JSON")->required();
    sub->add_option("--threshold", o.stat.threshold, "Normalized RMS displacement threshold");
    sub->add_option("--frame-fraction", o.stat.frame_fraction, "Fraction of still frames that excludes a clip");
    sub->add_option("--outside-max", o.rig.outside_fraction_max, "Outside fraction that invalidates a bone");
    sub->add_option("--dist-max", o.rig.surface_dist_max, "Surface distance that invalidates a bone");
    sub->add_option("--samples", o.rig.samples_per_bone, "Samples per bone");
    sub->add_option("--seeds", o.rig.n_seeds, "Rig candidates to try");
    sub->add_option("--rig-jitter", o.jitter, "Node jitter of retried rig candidates");
    sub->add_option("--seed", o.seed, "Seed for rig candidates");
    add_threads(sub);
    sub->callback([&, sub] {
      action = [&, sub] {
        Json clips = Json::array();
        Json rigs = Json::object();
        std::map<std::string, Asset> assets;
        Json inputs = Json::array();
        int kept = 0;
        for (const fs::path& path : files_with_suffix(o.clips, ".poses.json")) {
          const PoseSet set = load_pose_set(path);
          if (!assets.count(set.asset)) {
            const fs::path asset_path = find_asset_file(set.asset, path.parent_path());
            assets.emplace(set.asset, load_asset(asset_path));
            inputs.push_back(asset_path.string());
          }
          const Asset& asset = assets.at(set.asset);
          for (const Pose& p : set.poses) validate_pose(asset, p);
          const StaticFilterResult r = filter_static(set.poses, asset, o.stat);
          kept += r.keep ? 1 : 0;
          Json entry = clip_stats_to_json(r);
          entry["file"] = path.filename().string();
          entry["asset"] = set.asset;
          clips.push_back(entry);
          inputs.push_back(path.string());
        }
        for (const auto& [name, asset] : assets) {
          const RigSelection sel = select_rig(
              [&](int k) { return jittered_rig(asset, k, o.jitter, derive_seed(o.seed, name_hash(name))); },
              o.rig);
          rigs[name] = rig_report_to_json(sel.report);
        }
        Json report{{"clips", clips},
                    {"rigs", rigs},
                    {"kept_clips", kept},
                    {"total_clips", clips.size()},
                    {"thresholds",
                     {{"static_threshold", o.stat.threshold},
                      {"frame_fraction", o.stat.frame_fraction},
                      {"outside_fraction_max", o.rig.outside_fraction_max},
                      {"surface_dist_max", o.rig.surface_dist_max},
                      {"samples_per_bone", o.rig.samples_per_bone}}}};
        ensure_parent(o.report);
        write_json_file(o.report, report);
        write_manifest(run, *sub, manifest_for(o.report), inputs, {o.report}, Json{{"seed", o.seed}});
      };
    });
  }

  // eval --------------------------------------------------------------------
  struct {
    std::string gen, ref, asset, metrics = "fsd,onn", out;
  } eval_opts;
  {
    auto& o = eval_opts;
    CLI::App* sub = app.add_subcommand("eval", "Distribution metrics between generated and reference poses");
    sub->add_option("--gen", o.gen, "Generated pose set")->required();
    sub->add_option("--ref", o.ref, "Reference pose set")->required();
    sub->add_option("--asset", o.asset, "Asset JSON (default: located from the reference set)");
    sub->add_option("--metrics", o.metrics, "Comma-separated subset of fsd,onn");
    sub->add_option("--out", o.out, "Output report JSON")->required();
    add_threads(sub);
    sub->callback([&, sub] {
      action = [&, sub] {
        const PoseSet gen = load_pose_set(o.gen);
        const PoseSet ref = load_pose_set(o.ref);
        const fs::path asset_path = o.asset.empty() ? find_asset_file(ref.asset, fs::path(o.ref).parent_path())
                                                    : fs::path(o.asset);
        const Asset asset = load_asset(asset_path);
        std::vector<std::pair<const Asset*, const Pose*>> pairs;
        for (const Pose& p : ref.poses) {
          validate_pose(asset, p);
          pairs.emplace_back(&asset, &p);
        }
        POSESPACE_CHECK(!pairs.empty(), DataError, "reference set is empty");
        const NormalizationStats stats = compute_sigma_p(pairs);
        Json metrics = Json::object();
        std::stringstream ss(o.metrics);
        std::string name;
        while (std::getline(ss, name, ',')) {
          if (name == "fsd") {
            metrics["fsd"] = fsd(gen.poses, ref.poses, asset, stats);
          } else if (name == "onn") {
            const double v = o_nn(gen.poses, ref.poses, asset, stats);
            metrics["onn"] = Json{{"value", std::isinf(v) ? Json() : Json(v)}, {"infinite", std::isinf(v)}};
          } else {
            throw UsageError("unknown metric '" + name + "' (expected fsd or onn)");
          }
        }
        Json report{{"metrics", metrics},
                    {"n_generated", gen.poses.size()},
                    {"n_reference", ref.poses.size()},
                    {"normalization", {{"source", "reference"}, {"sigma_p", stats.sigma_p}}},
                    {"covariance_shrinkage", kCovarianceShrinkage}};
        ensure_parent(o.out);
        write_json_file(o.out, report);
        write_manifest(run, *sub, manifest_for(o.out), {o.gen, o.ref, asset_path.string()}, {o.out},
                       Json::object());
      };
    });
  }

  // lsr ---------------------------------------------------------------------
  struct {
    std::string counts, out;
  } lsr_opts;
  {
    auto& o = lsr_opts;
    CLI::App* sub = app.add_subcommand("lsr", "Luce spectral ranking from pairwise win counts");
    sub->add_option("--counts", o.counts, "JSON with a square 'counts' matrix (row beat column)")->required();
    sub->add_option("--out", o.out, "Output report JSON (default: standard output)");
    add_threads(sub);
    sub->callback([&, sub] {
      action = [&, sub] {
        const PairwiseCounts counts = pairwise_counts_from_json(read_json_file(o.counts));
        const LsrResult r = lsr(counts);
        Json report{{"scores", std::vector<double>(r.scores.data(), r.scores.data() + r.scores.size())},
                    {"regularized", r.regularized},
                    {"alpha", r.alpha}};
        if (!counts.items.empty()) report["items"] = counts.items;
        if (o.out.empty()) {
          std::fputs(dump_json(report).c_str(), stdout);
        } else {
          ensure_parent(o.out);
          write_json_file(o.out, report);
          write_manifest(run, *sub, manifest_for(o.out), {o.counts}, {o.out}, Json::object());
        }
      };
    });
  }

  // export ------------------------------------------------------------------
  struct {
    std::string asset, poses, out;
  } export_opts;
  {
    auto& o = export_opts;
    CLI::App* sub = app.add_subcommand("export", "Write deformed meshes of a pose set as OBJ keyframes");
    sub->add_option("--asset", o.asset, "Asset JSON file")->required();
    sub->add_option("--poses", o.poses, "Pose set")->required();
    sub->add_option("--out", o.out, "Output directory")->required();
    add_threads(sub);
    sub->callback([&, sub] {
      action = [&, sub] {
        const Asset asset = load_asset(o.asset);
        const PoseSet set = load_pose_set(o.poses);
        const fs::path out(o.out);
        fs::create_directories(out);
        std::vector<std::string> files(set.poses.size());
        parallel_for(set.poses.size(), [&](size_t i) {
          validate_pose(asset, set.poses[i]);
          char name[32];
          std::snprintf(name, sizeof(name), "frame_%04zu.obj", i);
          write_obj(out / name, deform(asset, set.poses[i]));
          files[i] = (out / name).string();
        });
        save_pose_set(out / "poses.json", set);
        Json outputs(files);
        outputs.push_back((out / "poses.json").string());
        write_manifest(run, *sub, out / "manifest.json", {o.asset, o.poses}, outputs, Json::object());
      };
    });
  }

  // serve -------------------------------------------------------------------
  struct {
    std::string model, asset, host = "127.0.0.1", jacobian = "exact";
    int port = 8080, steps = 100;
    double scale = 10.0;
    std::optional<uint64_t> feature_seed;
  } serve_opts;
  {
    auto& o = serve_opts;
    CLI::App* sub = app.add_subcommand("serve", "JSON-over-HTTP service for the pose editor");
    sub->add_option("--model", o.model, "Checkpoint file")->required();
    sub->add_option("--asset", o.asset, "Asset to preload (asset_id 1)");
    sub->add_option("--host", o.host, "Bind address");
    sub->add_option("--port", o.port, "Port (0: any free port)");
    sub->add_option("--steps", o.steps, "Default sampling steps");
    sub->add_option("--scale", o.scale, "Default guidance scale");
    sub->add_option("--jacobian", o.jacobian, "exact or identity");
    sub->add_option("--feature-seed", o.feature_seed, "Seed for synthesized features (default: from checkpoint)");
    add_threads(sub);
    sub->callback([&] {
      action = [&] {
        Checkpoint ckpt = load_checkpoint(o.model);
        ServiceConfig cfg;
        cfg.default_steps = o.steps;
        cfg.default_scale = o.scale;
        POSESPACE_CHECK(o.jacobian == "exact" || o.jacobian == "identity", UsageError,
                        "--jacobian must be exact or identity");
        cfg.jacobian_mode = o.jacobian == "exact" ? JacobianMode::exact : JacobianMode::identity;
        cfg.feature_seed = o.feature_seed ? *o.feature_seed : ckpt.meta.value("feature_seed", uint64_t{0});
        Service service(std::move(ckpt.model), cfg);
        if (!o.asset.empty()) {
          service.add_asset(load_asset(o.asset));
        }
        const int port = service.bind(o.host, o.port);
        log("listening on http://" + o.host + ":" + std::to_string(port));
        g_service = &service;
        std::signal(SIGINT, handle_signal);
        std::signal(SIGTERM, handle_signal);
        service.listen();
        g_service = nullptr;
      };
    });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(ErrorKind::Usage);
  }

  try {
    set_max_threads(run.threads);
    if (action) {
      action();
    }
  } catch (const Error& e) {
    log(std::string("error: ") + e.what());
    return static_cast<int>(e.kind());
  } catch (const fs::filesystem_error& e) {
    log(std::string("error: ") + e.what());
    return static_cast<int>(ErrorKind::Data);
  } catch (const Json::exception& e) {
    log(std::string("error: malformed JSON input: ") + e.what());
    return static_cast<int>(ErrorKind::Data);
  }
  return 0;
}

int run_cli(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  argv.push_back("posespace");
  for (const auto& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

}  // namespace posespace
