#pragma once

#include "posespace/geometry.h"

#include <Eigen/Core>

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace posespace {

struct DenoiserConfig {
  int d_model = 128;
  int n_heads = 4;
  int n_layers = 4;
  int d_ff = 512;
  int n_f = 32;
  int max_graph_dist = 8;

  static constexpr int kTimeEmbedDim = 64;

  // Distance buckets 0..max_graph_dist plus one for disconnected pairs.
  int num_buckets() const { return max_graph_dist + 2; }
  int head_dim() const { return d_model / n_heads; }

  void validate() const;
};

// Affine map y = W x + b with W stored out x in.
struct Linear {
  Eigen::MatrixXd weight;
  Eigen::VectorXd bias;
};

struct LayerNorm {
  Eigen::VectorXd gamma;
  Eigen::VectorXd beta;
};

struct BlockParams {
  LayerNorm ln_attn;
  Linear query;
  Linear key;
  Linear value;
  Linear out;
  // n_heads x num_buckets additive attention-logit bias.
  Eigen::MatrixXd distance_bias;
  LayerNorm ln_ff;
  Linear ff_in;
  Linear ff_out;
};

struct TensorView {
  std::string name;
  double* data;
  Eigen::Index rows;
  Eigen::Index cols;

  Eigen::Index size() const { return rows * cols; }
};

struct DenoiserParams {
  Linear embed_noisy;   // 3 -> d/2
  Linear embed_rest;    // 3 -> d/2
  Linear embed_feat;    // n_f -> d
  Linear time_fc1;      // 64 -> d
  Linear time_fc2;      // d -> d
  std::vector<BlockParams> blocks;
  Linear decode;        // d -> 3

  // All tensors in a fixed order with stable names (checkpoint layout).
  std::vector<TensorView> tensors();

  // Same shapes as `shape_of`, every entry zero.
  static DenoiserParams zeros_like(const DenoiserParams& shape_of);

  Eigen::Index parameter_count();
  bool all_finite();
};

struct DenoiserModel {
  DenoiserConfig config;
  DenoiserParams params;
  NormalizationStats stats;
};

// Bucketed undirected hop distance: min(hops, max_graph_dist), and
// max_graph_dist + 1 for nodes in different components.
Eigen::MatrixXi graph_distance_buckets(Eigen::Index num_nodes, const std::vector<Edge>& edges, int max_graph_dist);

// Per-asset conditioning shared by every denoiser call on that asset.
struct SkeletonContext {
  Points rest;
  Eigen::MatrixXd features;  // N_P x n_f
  std::vector<Edge> edges;
  Eigen::MatrixXi buckets;

  Eigen::Index num_nodes() const { return rest.rows(); }
};

SkeletonContext make_context(const DenoiserConfig& config, const Points& rest, const std::vector<Edge>& edges,
                             const Eigen::MatrixXd& features);

DenoiserModel init_params(const DenoiserConfig& config, uint64_t seed);

Eigen::VectorXd timestep_embedding(double t);

// Per-node input tokens: (e_x(noisy) | e_P(rest)) + e_F(features) + e_t(t).
Eigen::MatrixXd encode_tokens(const DenoiserModel& model, const Eigen::VectorXd& noisy, const Points& rest,
                              const Eigen::MatrixXd& features, int t);

// Prediction of the clean normalized pose (3 * N_P entries).
Eigen::VectorXd forward(const DenoiserModel& model, const SkeletonContext& ctx, const Eigen::VectorXd& noisy, int t);

struct DenoiserGradients {
  DenoiserParams params;
  Eigen::VectorXd noisy;
};

// Reverse-mode gradients of <cotangent, forward(...)>.
DenoiserGradients backward(const DenoiserModel& model, const SkeletonContext& ctx, const Eigen::VectorXd& noisy,
                           int t, const Eigen::VectorXd& output_cotangent);

// Batched evaluation. Items may belong to different skeletons; rows of all
// items are stacked so the dense layers run as single matrix products.
struct BatchItem {
  const SkeletonContext* context;
  Eigen::VectorXd noisy;
  int t;
};

class BatchForward {
 public:
  BatchForward(const DenoiserModel& model, const std::vector<BatchItem>& items);
  ~BatchForward();
  BatchForward(const BatchForward&) = delete;
  BatchForward& operator=(const BatchForward&) = delete;

  size_t size() const;
  // Prediction for item i (3 * N_P entries).
  Eigen::VectorXd output(size_t i) const;

  // Accumulates parameter gradients into `grad` (same shapes as the model)
  // and, when requested, writes per-item input gradients.
  void backward(const std::vector<Eigen::VectorXd>& output_cotangents, DenoiserParams& grad,
                std::vector<Eigen::VectorXd>* input_grads) const;

 private:
  struct State;
  std::unique_ptr<State> state_;
};

}  // namespace posespace
