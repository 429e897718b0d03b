#include "posespace/denoiser.h"
#include "posespace/error.h"
#include "posespace/rng.h"

#include <doctest.h>

#include <cmath>

using namespace posespace;

namespace {

DenoiserConfig small_config() {
  DenoiserConfig cfg;
  cfg.d_model = 8;
  cfg.n_heads = 2;
  cfg.n_layers = 1;
  cfg.d_ff = 32;
  cfg.n_f = 4;
  cfg.max_graph_dist = 8;
  return cfg;
}

// Every parameter drawn at random so no path through the network is dead.
DenoiserModel random_model(const DenoiserConfig& cfg, uint64_t seed) {
  DenoiserModel m = init_params(cfg, seed);
  Rng rng(seed + 100);
  for (TensorView& t : m.params.tensors()) {
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data[i] = 0.5 * rng.normal();
  }
  return m;
}

SkeletonContext tree_context(const DenoiserConfig& cfg, Rng& rng) {
  Points rest(5, 3);
  Eigen::MatrixXd feats(5, cfg.n_f);
  for (Eigen::Index i = 0; i < rest.size(); ++i) rest.data()[i] = rng.normal();
  for (Eigen::Index i = 0; i < feats.size(); ++i) feats.data()[i] = rng.normal();
  return make_context(cfg, rest, {{0, 1}, {1, 2}, {1, 3}, {3, 4}}, feats);
}

Eigen::VectorXd random_vector(Eigen::Index n, Rng& rng) {
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = rng.normal();
  return v;
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

Eigen::MatrixXd layer_norm(const LayerNorm& ln, const Eigen::MatrixXd& x) {
  Eigen::MatrixXd out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    double mean = 0.0;
    for (Eigen::Index c = 0; c < x.cols(); ++c) mean += x(r, c);
    mean /= static_cast<double>(x.cols());
    double var = 0.0;
    for (Eigen::Index c = 0; c < x.cols(); ++c) var += (x(r, c) - mean) * (x(r, c) - mean);
    var /= static_cast<double>(x.cols());
    for (Eigen::Index c = 0; c < x.cols(); ++c)
      out(r, c) = (x(r, c) - mean) / std::sqrt(var + 1e-5) * ln.gamma[c] + ln.beta[c];
  }
  return out;
}

Eigen::MatrixXd linear(const Linear& l, const Eigen::MatrixXd& x) {
  Eigen::MatrixXd out(x.rows(), l.weight.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r)
    for (Eigen::Index o = 0; o < l.weight.rows(); ++o) {
      double acc = l.bias[o];
      for (Eigen::Index i = 0; i < l.weight.cols(); ++i) acc += l.weight(o, i) * x(r, i);
      out(r, o) = acc;
    }
  return out;
}

// Element-by-element transcription of the architecture.
Eigen::VectorXd reference_forward(const DenoiserModel& m, const SkeletonContext& ctx, const Eigen::VectorXd& noisy,
                                  int t) {
  const auto& p = m.params;
  const Eigen::Index n = ctx.num_nodes();
  const int d = m.config.d_model;
  const int dh = m.config.head_dim();
  Eigen::MatrixXd xin(n, 3);
  for (Eigen::Index i = 0; i < n; ++i)
    for (int j = 0; j < 3; ++j) xin(i, j) = noisy[3 * i + j];
  const Eigen::MatrixXd ex = linear(p.embed_noisy, xin);
  const Eigen::MatrixXd ep = linear(p.embed_rest, ctx.rest);
  const Eigen::MatrixXd ef = linear(p.embed_feat, ctx.features);
  Eigen::MatrixXd temb(1, 64);
  for (int k = 0; k < 32; ++k) {
    const double f = std::pow(10000.0, -k / 32.0);
    temb(0, k) = std::sin(t * f);
    temb(0, 32 + k) = std::cos(t * f);
  }
  Eigen::MatrixXd h1 = linear(p.time_fc1, temb);
  for (Eigen::Index k = 0; k < h1.size(); ++k) h1.data()[k] = gelu(h1.data()[k]);
  const Eigen::MatrixXd et = linear(p.time_fc2, h1);
  Eigen::MatrixXd x(n, d);
  for (Eigen::Index i = 0; i < n; ++i)
    for (int c = 0; c < d; ++c) x(i, c) = (c < d / 2 ? ex(i, c) : ep(i, c - d / 2)) + ef(i, c) + et(0, c);
  for (const BlockParams& b : p.blocks) {
    const Eigen::MatrixXd a = layer_norm(b.ln_attn, x);
    const Eigen::MatrixXd q = linear(b.query, a), k = linear(b.key, a), v = linear(b.value, a);
    Eigen::MatrixXd heads = Eigen::MatrixXd::Zero(n, d);
    for (int h = 0; h < m.config.n_heads; ++h) {
      for (Eigen::Index i = 0; i < n; ++i) {
        std::vector<double> s(static_cast<size_t>(n));
        double mx = -1e300;
        for (Eigen::Index j = 0; j < n; ++j) {
          double dot = 0.0;
          for (int c = 0; c < dh; ++c) dot += q(i, h * dh + c) * k(j, h * dh + c);
          s[j] = dot / std::sqrt(static_cast<double>(dh)) + b.distance_bias(h, ctx.buckets(i, j));
          mx = std::max(mx, s[j]);
        }
        double z = 0.0;
        for (auto& e : s) z += (e = std::exp(e - mx));
        for (Eigen::Index j = 0; j < n; ++j)
          for (int c = 0; c < dh; ++c) heads(i, h * dh + c) += s[j] / z * v(j, h * dh + c);
      }
    }
    x += linear(b.out, heads);
    Eigen::MatrixXd f = linear(b.ff_in, layer_norm(b.ln_ff, x));
    for (Eigen::Index k2 = 0; k2 < f.size(); ++k2) f.data()[k2] = gelu(f.data()[k2]);
    x += linear(b.ff_out, f);
  }
  const Eigen::MatrixXd out = linear(p.decode, x);
  Eigen::VectorXd flat(3 * n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (int j = 0; j < 3; ++j) flat[3 * i + j] = out(i, j);
  return flat;
}

}  // namespace

TEST_CASE("parameter count of the small configuration") {
  DenoiserModel m = init_params(small_config(), 1);
  CHECK(m.params.parameter_count() == 1583);
}

TEST_CASE("untrained model predicts zero") {
  Rng rng(2);
  const DenoiserConfig cfg = small_config();
  const DenoiserModel m = init_params(cfg, 3);
  const SkeletonContext ctx = tree_context(cfg, rng);
  CHECK(forward(m, ctx, random_vector(15, rng), 500).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("forward matches a loop reference") {
  Rng rng(4);
  DenoiserConfig cfg = small_config();
  cfg.n_layers = 2;
  const DenoiserModel m = random_model(cfg, 5);
  const SkeletonContext ctx = tree_context(cfg, rng);
  for (int t : {1, 37, 1000}) {
    const Eigen::VectorXd x = random_vector(15, rng);
    CHECK((forward(m, ctx, x, t) - reference_forward(m, ctx, x, t)).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("graph distance buckets") {
  const Eigen::MatrixXi b = graph_distance_buckets(6, {{0, 1}, {1, 2}, {2, 3}, {3, 4}}, 2);
  CHECK(b(0, 0) == 0);
  CHECK(b(0, 1) == 1);
  CHECK(b(1, 0) == 1);
  CHECK(b(0, 2) == 2);
  CHECK(b(0, 4) == 2);
  CHECK(b(0, 5) == 3);
  CHECK(b(5, 5) == 0);
}

TEST_CASE("denoiser is equivariant to node relabeling") {
  Rng rng(6);
  const DenoiserConfig cfg = small_config();
  const DenoiserModel m = random_model(cfg, 7);
  const SkeletonContext ctx = tree_context(cfg, rng);
  const std::vector<int> perm{3, 0, 4, 1, 2};  // new index -> old index
  std::vector<int> inv(5);
  for (int i = 0; i < 5; ++i) inv[perm[i]] = i;
  Points rest(5, 3);
  Eigen::MatrixXd feats(5, cfg.n_f);
  for (int i = 0; i < 5; ++i) {
    rest.row(i) = ctx.rest.row(perm[i]);
    feats.row(i) = ctx.features.row(perm[i]);
  }
  std::vector<Edge> edges;
  for (const Edge& e : ctx.edges) edges.push_back({inv[e.parent], inv[e.child]});
  const SkeletonContext permuted = make_context(cfg, rest, edges, feats);
  const Eigen::VectorXd x = random_vector(15, rng);
  Eigen::VectorXd xp(15);
  for (int i = 0; i < 5; ++i) xp.segment<3>(3 * i) = x.segment<3>(3 * perm[i]);
  const Eigen::VectorXd y = forward(m, ctx, x, 200);
  const Eigen::VectorXd yp = forward(m, permuted, xp, 200);
  for (int i = 0; i < 5; ++i) CHECK((yp.segment<3>(3 * i) - y.segment<3>(3 * perm[i])).norm() < 1e-12);
}

TEST_CASE("gradients match central differences") {
  Rng rng(8);
  const DenoiserConfig cfg = small_config();
  DenoiserModel m = random_model(cfg, 9);
  const SkeletonContext ctx = tree_context(cfg, rng);
  const Eigen::VectorXd x = random_vector(15, rng);
  const Eigen::VectorXd cot = random_vector(15, rng);
  const int t = 123;
  DenoiserGradients g = backward(m, ctx, x, t, cot);
  auto objective = [&]() { return cot.dot(forward(m, ctx, x, t)); };

  const double h = 1e-6;
  auto params = m.params.tensors();
  auto grads = g.params.tensors();
  REQUIRE(params.size() == grads.size());
  Eigen::Index n = 0;
  for (const auto& tv : params) n += tv.size();
  Eigen::VectorXd analytic(n), numeric(n);
  Eigen::Index k = 0;
  for (size_t ti = 0; ti < params.size(); ++ti) {
    for (Eigen::Index i = 0; i < params[ti].size(); ++i, ++k) {
      double& w = params[ti].data[i];
      const double saved = w;
      w = saved + h;
      const double fp = objective();
      w = saved - h;
      const double fm = objective();
      w = saved;
      numeric[k] = (fp - fm) / (2 * h);
      analytic[k] = grads[ti].data[i];
    }
  }
  CHECK((analytic - numeric).norm() / numeric.norm() < 1e-6);

  Eigen::VectorXd num_in(15);
  for (int i = 0; i < 15; ++i) {
    Eigen::VectorXd xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    num_in[i] = (cot.dot(forward(m, ctx, xp, t)) - cot.dot(forward(m, ctx, xm, t))) / (2 * h);
  }
  CHECK((g.noisy - num_in).norm() / num_in.norm() < 1e-6);
}

TEST_CASE("batched evaluation equals single evaluation") {
  Rng rng(10);
  const DenoiserConfig cfg = small_config();
  const DenoiserModel m = random_model(cfg, 11);
  const SkeletonContext a = tree_context(cfg, rng);
  Points rest(3, 3);
  rest << 0, 0, 0, 1, 0, 0, 2, 0, 0;
  const SkeletonContext b = make_context(cfg, rest, {{0, 1}, {1, 2}}, Eigen::MatrixXd::Ones(3, cfg.n_f));
  const std::vector<BatchItem> items{{&a, random_vector(15, rng), 5}, {&b, random_vector(9, rng), 900},
                                     {&a, random_vector(15, rng), 77}};
  BatchForward batch(m, items);
  REQUIRE(batch.size() == 3);
  std::vector<Eigen::VectorXd> cots;
  DenoiserParams acc = DenoiserParams::zeros_like(m.params);
  DenoiserParams sum = DenoiserParams::zeros_like(m.params);
  std::vector<Eigen::VectorXd> input_grads;
  for (size_t i = 0; i < items.size(); ++i) {
    CHECK((batch.output(i) - forward(m, *items[i].context, items[i].noisy, items[i].t)).cwiseAbs().maxCoeff() <
          1e-12);
    cots.push_back(random_vector(items[i].noisy.size(), rng));
  }
  batch.backward(cots, acc, &input_grads);
  auto sum_t = sum.tensors();
  for (size_t i = 0; i < items.size(); ++i) {
    DenoiserGradients g = backward(m, *items[i].context, items[i].noisy, items[i].t, cots[i]);
    CHECK((g.noisy - input_grads[i]).cwiseAbs().maxCoeff() < 1e-12);
    auto gt = g.params.tensors();
    for (size_t ti = 0; ti < gt.size(); ++ti)
      for (Eigen::Index j = 0; j < gt[ti].size(); ++j) sum_t[ti].data[j] += gt[ti].data[j];
  }
  auto acc_t = acc.tensors();
  for (size_t ti = 0; ti < acc_t.size(); ++ti)
    for (Eigen::Index j = 0; j < acc_t[ti].size(); ++j) CHECK(acc_t[ti].data[j] == doctest::Approx(sum_t[ti].data[j]).epsilon(1e-9));
}

TEST_CASE("invalid configurations and shapes") {
  DenoiserConfig cfg = small_config();
  cfg.n_heads = 3;
  CHECK_THROWS_AS(cfg.validate(), UsageError);
  cfg = small_config();
  Rng rng(1);
  CHECK_THROWS_AS(make_context(cfg, Points::Zero(2, 3), {{0, 1}}, Eigen::MatrixXd::Zero(2, 5)), DataError);
  const DenoiserModel m = init_params(cfg, 1);
  const SkeletonContext ctx = tree_context(cfg, rng);
  CHECK_THROWS_AS(forward(m, ctx, Eigen::VectorXd::Zero(4), 1), DataError);
}
