#include "posespace/denoiser.h"

#include "posespace/error.h"
#include "posespace/rng.h"

#include <cmath>
#include <deque>
#include <numbers>

namespace posespace {

namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

constexpr double kLayerNormEps = 1e-5;

Linear make_linear(Index in, Index out, Rng& rng) {
  // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero bias.
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  Linear lin{MatrixXd(out, in), VectorXd::Zero(out)};
  for (Index c = 0; c < in; ++c) {
    for (Index r = 0; r < out; ++r) {
      lin.weight(r, c) = rng.uniform(-bound, bound);
    }
  }
  return lin;
}

Linear zero_linear(Index in, Index out) { return Linear{MatrixXd::Zero(out, in), VectorXd::Zero(out)}; }

LayerNorm make_layer_norm(Index d) { return LayerNorm{VectorXd::Ones(d), VectorXd::Zero(d)}; }

Linear zeros_like(const Linear& l) {
  return Linear{MatrixXd::Zero(l.weight.rows(), l.weight.cols()), VectorXd::Zero(l.bias.size())};
}

LayerNorm zeros_like(const LayerNorm& l) { return LayerNorm{VectorXd::Zero(l.gamma.size()), VectorXd::Zero(l.beta.size())}; }

MatrixXd apply(const Linear& lin, const MatrixXd& x) {
  MatrixXd y = x * lin.weight.transpose();
  y.rowwise() += lin.bias.transpose();
  return y;
}

// dY -> accumulates dW, db; returns dX.
MatrixXd apply_backward(const Linear& lin, Linear& grad, const MatrixXd& x, const MatrixXd& dy) {
  grad.weight.noalias() += dy.transpose() * x;
  grad.bias += dy.colwise().sum().transpose();
  return dy * lin.weight;
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)); }

double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

struct LayerNormCache {
  MatrixXd normalized;  // (x - mean) * rstd
  VectorXd rstd;
};

MatrixXd layer_norm(const LayerNorm& ln, const MatrixXd& x, LayerNormCache& cache) {
  const Index d = x.cols();
  const VectorXd mean = x.rowwise().mean();
  cache.normalized = x.colwise() - mean;
  const VectorXd var = cache.normalized.rowwise().squaredNorm() / static_cast<double>(d);
  cache.rstd = (var.array() + kLayerNormEps).rsqrt();
  cache.normalized = cache.rstd.asDiagonal() * cache.normalized;
  MatrixXd y = cache.normalized * ln.gamma.asDiagonal();
  y.rowwise() += ln.beta.transpose();
  return y;
}

MatrixXd layer_norm_backward(const LayerNorm& ln, LayerNorm& grad, const LayerNormCache& cache, const MatrixXd& dy) {
  const double d = static_cast<double>(dy.cols());
  grad.gamma += dy.cwiseProduct(cache.normalized).colwise().sum().transpose();
  grad.beta += dy.colwise().sum().transpose();
  const MatrixXd dxhat = dy * ln.gamma.asDiagonal();
  const VectorXd mean_dxhat = dxhat.rowwise().sum() / d;
  const VectorXd mean_dxhat_xhat = dxhat.cwiseProduct(cache.normalized).rowwise().sum() / d;
  MatrixXd dx = dxhat.colwise() - mean_dxhat;
  dx -= mean_dxhat_xhat.asDiagonal() * cache.normalized;
  return cache.rstd.asDiagonal() * dx;
}

void push_linear(std::vector<TensorView>& out, const std::string& name, Linear& lin) {
  out.push_back({name + ".weight", lin.weight.data(), lin.weight.rows(), lin.weight.cols()});
  out.push_back({name + ".bias", lin.bias.data(), lin.bias.size(), 1});
}

void push_layer_norm(std::vector<TensorView>& out, const std::string& name, LayerNorm& ln) {
  out.push_back({name + ".gamma", ln.gamma.data(), ln.gamma.size(), 1});
  out.push_back({name + ".beta", ln.beta.data(), ln.beta.size(), 1});
}

}  // namespace

void DenoiserConfig::validate() const {
  POSESPACE_CHECK(d_model > 0 && d_model % 2 == 0, UsageError, "d_model must be a positive even integer");
  POSESPACE_CHECK(n_heads > 0 && d_model % n_heads == 0, UsageError, "n_heads must divide d_model");
  POSESPACE_CHECK(n_layers > 0, UsageError, "n_layers must be positive");
  POSESPACE_CHECK(d_ff > 0, UsageError, "d_ff must be positive");
  POSESPACE_CHECK(n_f > 0, UsageError, "n_f must be positive");
  POSESPACE_CHECK(max_graph_dist >= 0, UsageError, "max_graph_dist must be non-negative");
}

std::vector<TensorView> DenoiserParams::tensors() {
  std::vector<TensorView> out;
  push_linear(out, "e_x", embed_noisy);
  push_linear(out, "e_p", embed_rest);
  push_linear(out, "e_f", embed_feat);
  push_linear(out, "e_t.fc1", time_fc1);
  push_linear(out, "e_t.fc2", time_fc2);
  for (size_t l = 0; l < blocks.size(); ++l) {
    BlockParams& b = blocks[l];
    const std::string prefix = "blocks." + std::to_string(l) + ".";
    push_layer_norm(out, prefix + "ln_attn", b.ln_attn);
    push_linear(out, prefix + "attn.query", b.query);
    push_linear(out, prefix + "attn.key", b.key);
    push_linear(out, prefix + "attn.value", b.value);
    push_linear(out, prefix + "attn.out", b.out);
    out.push_back({prefix + "attn.distance_bias", b.distance_bias.data(), b.distance_bias.rows(),
                   b.distance_bias.cols()});
    push_layer_norm(out, prefix + "ln_ff", b.ln_ff);
    push_linear(out, prefix + "ff.in", b.ff_in);
    push_linear(out, prefix + "ff.out", b.ff_out);
  }
  push_linear(out, "d_x", decode);
  return out;
}

DenoiserParams DenoiserParams::zeros_like(const DenoiserParams& p) {
  DenoiserParams z;
  z.embed_noisy = posespace::zeros_like(p.embed_noisy);
  z.embed_rest = posespace::zeros_like(p.embed_rest);
  z.embed_feat = posespace::zeros_like(p.embed_feat);
  z.time_fc1 = posespace::zeros_like(p.time_fc1);
  z.time_fc2 = posespace::zeros_like(p.time_fc2);
  for (const BlockParams& b : p.blocks) {
    BlockParams zb;
    zb.ln_attn = posespace::zeros_like(b.ln_attn);
    zb.query = posespace::zeros_like(b.query);
    zb.key = posespace::zeros_like(b.key);
    zb.value = posespace::zeros_like(b.value);
    zb.out = posespace::zeros_like(b.out);
    zb.distance_bias = MatrixXd::Zero(b.distance_bias.rows(), b.distance_bias.cols());
    zb.ln_ff = posespace::zeros_like(b.ln_ff);
    zb.ff_in = posespace::zeros_like(b.ff_in);
    zb.ff_out = posespace::zeros_like(b.ff_out);
    z.blocks.push_back(std::move(zb));
  }
  z.decode = posespace::zeros_like(p.decode);
  return z;
}

Index DenoiserParams::parameter_count() {
  Index total = 0;
  for (const TensorView& t : tensors()) {
    total += t.size();
  }
  return total;
}

bool DenoiserParams::all_finite() {
  for (const TensorView& t : tensors()) {
    if (!Eigen::Map<const VectorXd>(t.data, t.size()).allFinite()) {
      return false;
    }
  }
  return true;
}

Eigen::MatrixXi graph_distance_buckets(Index num_nodes, const std::vector<Edge>& edges, int max_graph_dist) {
  std::vector<std::vector<int>> adjacency(static_cast<size_t>(num_nodes));
  for (const Edge& e : edges) {
    POSESPACE_CHECK(e.parent >= 0 && e.child >= 0 && e.parent < num_nodes && e.child < num_nodes, DataError,
                    "edge index out of range");
    adjacency[static_cast<size_t>(e.parent)].push_back(e.child);
    adjacency[static_cast<size_t>(e.child)].push_back(e.parent);
  }
  Eigen::MatrixXi buckets = Eigen::MatrixXi::Constant(num_nodes, num_nodes, max_graph_dist + 1);
  std::vector<int> hops(static_cast<size_t>(num_nodes));
  std::deque<int> queue;
  for (Index start = 0; start < num_nodes; ++start) {
    std::fill(hops.begin(), hops.end(), -1);
    hops[static_cast<size_t>(start)] = 0;
    queue.assign(1, static_cast<int>(start));
    while (!queue.empty()) {
      const int node = queue.front();
      queue.pop_front();
      buckets(start, node) = std::min(hops[static_cast<size_t>(node)], max_graph_dist);
      for (int next : adjacency[static_cast<size_t>(node)]) {
        if (hops[static_cast<size_t>(next)] < 0) {
          hops[static_cast<size_t>(next)] = hops[static_cast<size_t>(node)] + 1;
          queue.push_back(next);
        }
      }
    }
  }
  return buckets;
}

SkeletonContext make_context(const DenoiserConfig& config, const Points& rest, const std::vector<Edge>& edges,
                             const Eigen::MatrixXd& features) {
  POSESPACE_CHECK(features.rows() == rest.rows(), DataError, "node feature rows must equal the node count");
  POSESPACE_CHECK(features.cols() == config.n_f, DataError,
                  "node features have " + std::to_string(features.cols()) + " columns, model expects " +
                      std::to_string(config.n_f));
  return SkeletonContext{rest, features, edges, graph_distance_buckets(rest.rows(), edges, config.max_graph_dist)};
}

DenoiserModel init_params(const DenoiserConfig& config, uint64_t seed) {
  config.validate();
  Rng rng(seed);
  const Index d = config.d_model;
  DenoiserModel model;
  model.config = config;
  DenoiserParams& p = model.params;
  p.embed_noisy = make_linear(3, d / 2, rng);
  p.embed_rest = make_linear(3, d / 2, rng);
  p.embed_feat = make_linear(config.n_f, d, rng);
  p.time_fc1 = make_linear(DenoiserConfig::kTimeEmbedDim, d, rng);
  p.time_fc2 = make_linear(d, d, rng);
  for (int l = 0; l < config.n_layers; ++l) {
    BlockParams b;
    b.ln_attn = make_layer_norm(d);
    b.query = make_linear(d, d, rng);
    b.key = make_linear(d, d, rng);
    b.value = make_linear(d, d, rng);
    b.out = make_linear(d, d, rng);
    b.distance_bias = MatrixXd::Zero(config.n_heads, config.num_buckets());
    b.ln_ff = make_layer_norm(d);
    b.ff_in = make_linear(d, config.d_ff, rng);
    b.ff_out = make_linear(config.d_ff, d, rng);
    p.blocks.push_back(std::move(b));
  }
  // Zero decoder: the untrained model predicts the rest pose.
  p.decode = zero_linear(d, 3);
  return model;
}

VectorXd timestep_embedding(double t) {
  constexpr int half = DenoiserConfig::kTimeEmbedDim / 2;
  VectorXd emb(DenoiserConfig::kTimeEmbedDim);
  for (int k = 0; k < half; ++k) {
    const double freq = std::exp(-std::log(10000.0) * static_cast<double>(k) / half);
    emb[k] = std::sin(t * freq);
    emb[half + k] = std::cos(t * freq);
  }
  return emb;
}

// ---------------------------------------------------------------------------
// Batched forward / backward.

struct BatchForward::State {
  struct TimeCache {
    VectorXd embedding;  // sinusoidal
    VectorXd hidden;     // fc1 pre-activation
    VectorXd activated;  // gelu(hidden)
  };
  struct BlockCache {
    MatrixXd input;
    LayerNormCache ln_attn;
    MatrixXd normed;
    MatrixXd q, k, v;
    // attention[item * n_heads + head] is N x N.
    std::vector<MatrixXd> attention;
    MatrixXd heads;  // concatenated head outputs, R x d
    MatrixXd mid;
    LayerNormCache ln_ff;
    MatrixXd normed_ff;
    MatrixXd pre_act;
    MatrixXd act;
  };

  const DenoiserModel* model = nullptr;
  std::vector<const SkeletonContext*> contexts;
  std::vector<Index> offsets;  // row offset of each item, plus total at the end
  MatrixXd noisy;              // R x 3
  MatrixXd rest;               // R x 3
  MatrixXd features;           // R x n_f
  std::vector<TimeCache> time;
  std::vector<BlockCache> blocks;
  MatrixXd final_tokens;
  MatrixXd output;  // R x 3
};

BatchForward::BatchForward(const DenoiserModel& model, const std::vector<BatchItem>& items)
    : state_(std::make_unique<State>()) {
  State& s = *state_;
  const DenoiserConfig& cfg = model.config;
  const DenoiserParams& p = model.params;
  const Index d = cfg.d_model;
  const Index dh = cfg.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  s.model = &model;

  Index rows = 0;
  for (const BatchItem& item : items) {
    const SkeletonContext& ctx = *item.context;
    POSESPACE_CHECK(item.noisy.size() == 3 * ctx.num_nodes(), DataError,
                    "noisy pose length does not match the skeleton");
    POSESPACE_CHECK(ctx.features.cols() == cfg.n_f, DataError, "node feature width does not match the model");
    POSESPACE_CHECK(ctx.buckets.rows() == ctx.num_nodes(), DataError, "graph distances do not match the skeleton");
    s.offsets.push_back(rows);
    s.contexts.push_back(&ctx);
    rows += ctx.num_nodes();
  }
  s.offsets.push_back(rows);

  s.noisy.resize(rows, 3);
  s.rest.resize(rows, 3);
  s.features.resize(rows, cfg.n_f);
  for (size_t i = 0; i < items.size(); ++i) {
    const Index n = s.contexts[i]->num_nodes();
    s.noisy.middleRows(s.offsets[i], n) = Eigen::Map<const Points>(items[i].noisy.data(), n, 3);
    s.rest.middleRows(s.offsets[i], n) = s.contexts[i]->rest;
    s.features.middleRows(s.offsets[i], n) = s.contexts[i]->features;
  }

  // Token encoding.
  MatrixXd x(rows, d);
  x.leftCols(d / 2) = apply(p.embed_noisy, s.noisy);
  x.rightCols(d / 2) = apply(p.embed_rest, s.rest);
  x += apply(p.embed_feat, s.features);
  s.time.resize(items.size());
  for (size_t i = 0; i < items.size(); ++i) {
    State::TimeCache& tc = s.time[i];
    tc.embedding = timestep_embedding(static_cast<double>(items[i].t));
    tc.hidden = p.time_fc1.weight * tc.embedding + p.time_fc1.bias;
    tc.activated = tc.hidden.unaryExpr([](double v) { return gelu(v); });
    const VectorXd temb = p.time_fc2.weight * tc.activated + p.time_fc2.bias;
    x.middleRows(s.offsets[i], s.contexts[i]->num_nodes()).rowwise() += temb.transpose();
  }

  s.blocks.resize(p.blocks.size());
  for (size_t l = 0; l < p.blocks.size(); ++l) {
    const BlockParams& b = p.blocks[l];
    State::BlockCache& c = s.blocks[l];
    c.input = x;
    c.normed = layer_norm(b.ln_attn, x, c.ln_attn);
    c.q = apply(b.query, c.normed);
    c.k = apply(b.key, c.normed);
    c.v = apply(b.value, c.normed);
    c.heads.resize(rows, d);
    c.attention.resize(items.size() * static_cast<size_t>(cfg.n_heads));
    for (size_t i = 0; i < items.size(); ++i) {
      const Index off = s.offsets[i];
      const Index n = s.contexts[i]->num_nodes();
      const Eigen::MatrixXi& buckets = s.contexts[i]->buckets;
      for (int h = 0; h < cfg.n_heads; ++h) {
        const auto qh = c.q.block(off, h * dh, n, dh);
        const auto kh = c.k.block(off, h * dh, n, dh);
        const auto vh = c.v.block(off, h * dh, n, dh);
        MatrixXd logits = scale * (qh * kh.transpose());
        for (Index a = 0; a < n; ++a) {
          for (Index bcol = 0; bcol < n; ++bcol) {
            logits(a, bcol) += b.distance_bias(h, buckets(a, bcol));
          }
        }
        // Stable softmax over each row.
        const VectorXd row_max = logits.rowwise().maxCoeff();
        logits = (logits.colwise() - row_max).array().exp().matrix();
        const VectorXd row_sum = logits.rowwise().sum();
        logits = row_sum.cwiseInverse().asDiagonal() * logits;
        c.heads.block(off, h * dh, n, dh) = logits * vh;
        c.attention[i * static_cast<size_t>(cfg.n_heads) + static_cast<size_t>(h)] = std::move(logits);
      }
    }
    c.mid = x + apply(b.out, c.heads);
    c.normed_ff = layer_norm(b.ln_ff, c.mid, c.ln_ff);
    c.pre_act = apply(b.ff_in, c.normed_ff);
    c.act = c.pre_act.unaryExpr([](double v) { return gelu(v); });
    x = c.mid + apply(b.ff_out, c.act);
  }
  s.final_tokens = std::move(x);
  s.output = apply(p.decode, s.final_tokens);
  POSESPACE_CHECK(s.output.allFinite(), NumericalError, "denoiser produced a non-finite activation");
}

BatchForward::~BatchForward() = default;

size_t BatchForward::size() const { return state_->contexts.size(); }

VectorXd BatchForward::output(size_t i) const {
  const State& s = *state_;
  const Index n = s.contexts[i]->num_nodes();
  const Points rows = s.output.middleRows(s.offsets[i], n);
  return Eigen::Map<const VectorXd>(rows.data(), 3 * n);
}

void BatchForward::backward(const std::vector<VectorXd>& output_cotangents, DenoiserParams& grad,
                            std::vector<VectorXd>* input_grads) const {
  const State& s = *state_;
  const DenoiserModel& model = *s.model;
  const DenoiserConfig& cfg = model.config;
  const DenoiserParams& p = model.params;
  const Index d = cfg.d_model;
  const Index dh = cfg.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const size_t count = s.contexts.size();
  POSESPACE_CHECK(output_cotangents.size() == count, DataError, "one cotangent per batch item is required");

  MatrixXd dy(s.output.rows(), 3);
  for (size_t i = 0; i < count; ++i) {
    const Index n = s.contexts[i]->num_nodes();
    POSESPACE_CHECK(output_cotangents[i].size() == 3 * n, DataError, "cotangent length does not match the skeleton");
    dy.middleRows(s.offsets[i], n) = Eigen::Map<const Points>(output_cotangents[i].data(), n, 3);
  }

  MatrixXd dx = apply_backward(p.decode, grad.decode, s.final_tokens, dy);

  for (size_t li = p.blocks.size(); li-- > 0;) {
    const BlockParams& b = p.blocks[li];
    BlockParams& gb = grad.blocks[li];
    const State::BlockCache& c = s.blocks[li];

    // Feed-forward branch.
    MatrixXd dact = apply_backward(b.ff_out, gb.ff_out, c.act, dx);
    const MatrixXd dpre = dact.cwiseProduct(c.pre_act.unaryExpr([](double v) { return gelu_grad(v); }));
    const MatrixXd dnormed_ff = apply_backward(b.ff_in, gb.ff_in, c.normed_ff, dpre);
    MatrixXd dmid = dx + layer_norm_backward(b.ln_ff, gb.ln_ff, c.ln_ff, dnormed_ff);

    // Attention branch.
    const MatrixXd dheads = apply_backward(b.out, gb.out, c.heads, dmid);
    MatrixXd dq = MatrixXd::Zero(c.q.rows(), d);
    MatrixXd dk = MatrixXd::Zero(c.k.rows(), d);
    MatrixXd dv = MatrixXd::Zero(c.v.rows(), d);
    for (size_t i = 0; i < count; ++i) {
      const Index off = s.offsets[i];
      const Index n = s.contexts[i]->num_nodes();
      const Eigen::MatrixXi& buckets = s.contexts[i]->buckets;
      for (int h = 0; h < cfg.n_heads; ++h) {
        const MatrixXd& attn = c.attention[i * static_cast<size_t>(cfg.n_heads) + static_cast<size_t>(h)];
        const auto qh = c.q.block(off, h * dh, n, dh);
        const auto kh = c.k.block(off, h * dh, n, dh);
        const auto vh = c.v.block(off, h * dh, n, dh);
        const auto dout = dheads.block(off, h * dh, n, dh);
        const MatrixXd dattn = dout * vh.transpose();
        dv.block(off, h * dh, n, dh) = attn.transpose() * dout;
        const VectorXd inner = attn.cwiseProduct(dattn).rowwise().sum();
        const MatrixXd dlogits = attn.cwiseProduct(dattn.colwise() - inner);
        for (Index a = 0; a < n; ++a) {
          for (Index bcol = 0; bcol < n; ++bcol) {
            gb.distance_bias(h, buckets(a, bcol)) += dlogits(a, bcol);
          }
        }
        dq.block(off, h * dh, n, dh) = scale * (dlogits * kh);
        dk.block(off, h * dh, n, dh) = scale * (dlogits.transpose() * qh);
      }
    }
    MatrixXd dnormed = apply_backward(b.query, gb.query, c.normed, dq);
    dnormed += apply_backward(b.key, gb.key, c.normed, dk);
    dnormed += apply_backward(b.value, gb.value, c.normed, dv);
    dx = dmid + layer_norm_backward(b.ln_attn, gb.ln_attn, c.ln_attn, dnormed);
  }

  // Token encoding.
  const MatrixXd dnoisy = apply_backward(p.embed_noisy, grad.embed_noisy, s.noisy, dx.leftCols(d / 2));
  apply_backward(p.embed_rest, grad.embed_rest, s.rest, dx.rightCols(d / 2));
  apply_backward(p.embed_feat, grad.embed_feat, s.features, dx);
  for (size_t i = 0; i < count; ++i) {
    const State::TimeCache& tc = s.time[i];
    const VectorXd dtemb = dx.middleRows(s.offsets[i], s.contexts[i]->num_nodes()).colwise().sum().transpose();
    grad.time_fc2.weight.noalias() += dtemb * tc.activated.transpose();
    grad.time_fc2.bias += dtemb;
    const VectorXd dact = p.time_fc2.weight.transpose() * dtemb;
    const VectorXd dhidden = dact.cwiseProduct(tc.hidden.unaryExpr([](double v) { return gelu_grad(v); }));
    grad.time_fc1.weight.noalias() += dhidden * tc.embedding.transpose();
    grad.time_fc1.bias += dhidden;
  }

  if (input_grads != nullptr) {
    input_grads->resize(count);
    for (size_t i = 0; i < count; ++i) {
      const Index n = s.contexts[i]->num_nodes();
      const Points rows = dnoisy.middleRows(s.offsets[i], n);
      (*input_grads)[i] = Eigen::Map<const VectorXd>(rows.data(), 3 * n);
    }
  }
}

// ---------------------------------------------------------------------------

MatrixXd encode_tokens(const DenoiserModel& model, const VectorXd& noisy, const Points& rest,
                       const MatrixXd& features, int t) {
  const DenoiserParams& p = model.params;
  const Index n = rest.rows();
  const Index d = model.config.d_model;
  POSESPACE_CHECK(noisy.size() == 3 * n, DataError, "noisy pose length does not match the rest pose");
  POSESPACE_CHECK(features.rows() == n && features.cols() == model.config.n_f, DataError,
                  "node features have the wrong shape");
  const MatrixXd noisy_rows = Eigen::Map<const Points>(noisy.data(), n, 3);
  MatrixXd x(n, d);
  x.leftCols(d / 2) = apply(p.embed_noisy, noisy_rows);
  x.rightCols(d / 2) = apply(p.embed_rest, MatrixXd(rest));
  x += apply(p.embed_feat, features);
  const VectorXd hidden = p.time_fc1.weight * timestep_embedding(static_cast<double>(t)) + p.time_fc1.bias;
  const VectorXd temb = p.time_fc2.weight * hidden.unaryExpr([](double v) { return gelu(v); }) + p.time_fc2.bias;
  x.rowwise() += temb.transpose();
  return x;
}

VectorXd forward(const DenoiserModel& model, const SkeletonContext& ctx, const VectorXd& noisy, int t) {
  const BatchForward batch(model, {BatchItem{&ctx, noisy, t}});
  return batch.output(0);
}

DenoiserGradients backward(const DenoiserModel& model, const SkeletonContext& ctx, const VectorXd& noisy, int t,
                           const VectorXd& output_cotangent) {
  const BatchForward batch(model, {BatchItem{&ctx, noisy, t}});
  DenoiserGradients out{DenoiserParams::zeros_like(model.params), {}};
  std::vector<VectorXd> input_grads;
  batch.backward({output_cotangent}, out.params, &input_grads);
  out.noisy = std::move(input_grads.front());
  return out;
}

}  // namespace posespace
