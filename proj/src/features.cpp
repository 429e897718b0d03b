#include "posespace/features.h"

#include "posespace/error.h"
#include "posespace/rng.h"

#include <cmath>
#include <numbers>
#include <numeric>

namespace posespace {

NodeFeatures aggregate_node_features(const Asset& asset, const VertexFeatures& fv) {
  const auto& weights = asset.skeleton.weights();
  POSESPACE_CHECK(fv.rows.rows() == weights.cols(), DataError,
                  "feature rows (" + std::to_string(fv.rows.rows()) + ") must equal the vertex count (" +
                      std::to_string(weights.cols()) + ")");
  Eigen::MatrixXd sums = weights * fv.rows;
  Eigen::VectorXd mass = Eigen::VectorXd::Zero(weights.rows());
  for (int v = 0; v < weights.outerSize(); ++v) {
    for (Skeleton::Weights::InnerIterator it(weights, v); it; ++it) {
      mass[it.row()] += it.value();
    }
  }
  const Eigen::RowVectorXd global_mean = fv.rows.colwise().mean();
  for (Eigen::Index i = 0; i < sums.rows(); ++i) {
    if (mass[i] < 1e-12) {
      sums.row(i) = global_mean;
    } else {
      sums.row(i) /= mass[i];
    }
  }
  return NodeFeatures{std::move(sums)};
}

int feature_slot(int node, int num_nodes, int half, uint64_t seed) {
  if (num_nodes <= half) {
    // Seeded Fisher-Yates permutation of the slots; node i takes slot perm[i].
    std::vector<int> perm(static_cast<size_t>(half));
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng(seed);
    for (int i = half - 1; i > 0; --i) {
      const auto j = static_cast<int>(rng.uniform_index(static_cast<uint64_t>(i) + 1));
      std::swap(perm[static_cast<size_t>(i)], perm[static_cast<size_t>(j)]);
    }
    return perm[static_cast<size_t>(node)];
  }
  return static_cast<int>(splitmix64(static_cast<uint64_t>(node) ^ splitmix64(seed)) % static_cast<uint64_t>(half));
}

VertexFeatures synth_features(const Asset& asset, int n_f, uint64_t seed) {
  POSESPACE_CHECK(n_f >= 4, UsageError, "feature dimension must be at least 4");
  const int half = n_f / 2;
  const int n_pos = n_f - half;
  const Eigen::Index nv = asset.mesh.num_vertices();
  const int np = static_cast<int>(asset.skeleton.num_nodes());
  const auto& weights = asset.skeleton.weights();

  std::vector<int> slots(static_cast<size_t>(np));
  for (int i = 0; i < np; ++i) {
    slots[static_cast<size_t>(i)] = feature_slot(i, np, half, seed);
  }

  Eigen::MatrixXd rows = Eigen::MatrixXd::Zero(nv, n_f);
  for (int v = 0; v < nv; ++v) {
    int owner = -1;
    double best = -1.0;
    for (Skeleton::Weights::InnerIterator it(weights, v); it; ++it) {
      if (it.value() > best) {
        best = it.value();
        owner = static_cast<int>(it.row());
      }
    }
    if (owner >= 0) {
      rows(v, slots[static_cast<size_t>(owner)]) = 1.0;
    }
    // Column j of the positional half: coordinate (j / 2) % 3 at octave
    // (j / 2) / 3, sine for even j and cosine for odd j.
    for (int j = 0; j < n_pos; ++j) {
      const int pair = j / 2;
      const double x = asset.mesh.vertices(v, pair % 3);
      const double freq = std::numbers::pi * std::ldexp(1.0, pair / 3);
      rows(v, half + j) = (j % 2 == 0) ? std::sin(freq * x) : std::cos(freq * x);
    }
  }
  return VertexFeatures{std::move(rows)};
}

Json vertex_features_to_json(const VertexFeatures& fv) {
  Json rows = Json::array();
  for (Eigen::Index i = 0; i < fv.rows.rows(); ++i) {
    Json row = Json::array();
    for (Eigen::Index j = 0; j < fv.rows.cols(); ++j) {
      row.push_back(fv.rows(i, j));
    }
    rows.push_back(std::move(row));
  }
  return Json{{"n_v", fv.rows.rows()}, {"n_f", fv.rows.cols()}, {"rows", rows}};
}

VertexFeatures vertex_features_from_json(const Json& doc) {
  POSESPACE_CHECK(doc.is_object() && doc.contains("n_v") && doc.contains("n_f") && doc.contains("rows"), DataError,
                  "feature file needs n_v, n_f and rows");
  const auto n_v = doc.at("n_v").get<Eigen::Index>();
  const auto n_f = doc.at("n_f").get<Eigen::Index>();
  const Json& rows = doc.at("rows");
  POSESPACE_CHECK(rows.is_array() && static_cast<Eigen::Index>(rows.size()) == n_v, DataError,
                  "feature file: row count does not match n_v");
  VertexFeatures fv{Eigen::MatrixXd(n_v, n_f)};
  for (Eigen::Index i = 0; i < n_v; ++i) {
    const Json& row = rows[static_cast<size_t>(i)];
    POSESPACE_CHECK(row.is_array() && static_cast<Eigen::Index>(row.size()) == n_f, DataError,
                    "feature file: row length does not match n_f");
    for (Eigen::Index j = 0; j < n_f; ++j) {
      POSESPACE_CHECK(row[static_cast<size_t>(j)].is_number(), DataError, "feature file: non-numeric entry");
      fv.rows(i, j) = row[static_cast<size_t>(j)].get<double>();
    }
  }
  POSESPACE_CHECK(fv.rows.allFinite(), DataError, "feature file: non-finite entry");
  return fv;
}

VertexFeatures load_vertex_features(const std::filesystem::path& path) {
  return vertex_features_from_json(read_json_file(path));
}

void save_vertex_features(const std::filesystem::path& path, const VertexFeatures& fv) {
  write_json_file(path, vertex_features_to_json(fv));
}

}  // namespace posespace
