#include "posespace/metrics.h"

#include "posespace/error.h"
#include "posespace/parallel.h"

#include <Eigen/Dense>

#include <cmath>
#include <limits>

namespace posespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

GaussianFit fit_gaussian(const std::vector<VectorXd>& samples) {
  POSESPACE_CHECK(samples.size() >= 2, DataError, "a Gaussian fit needs at least two samples");
  const Eigen::Index dim = samples.front().size();
  MatrixXd data(static_cast<Eigen::Index>(samples.size()), dim);
  for (size_t i = 0; i < samples.size(); ++i) {
    POSESPACE_CHECK(samples[i].size() == dim, DataError, "feature vectors differ in length");
    data.row(static_cast<Eigen::Index>(i)) = samples[i].transpose();
  }
  GaussianFit fit;
  fit.mean = data.colwise().mean().transpose();
  const MatrixXd centered = data.rowwise() - fit.mean.transpose();
  fit.covariance = centered.transpose() * centered / static_cast<double>(samples.size() - 1);
  fit.covariance = 0.5 * (fit.covariance + fit.covariance.transpose());
  fit.covariance.diagonal().array() += kCovarianceShrinkage;
  return fit;
}

MatrixXd psd_sqrt(const MatrixXd& m) {
  const Eigen::SelfAdjointEigenSolver<MatrixXd> eig(0.5 * (m + m.transpose()));
  POSESPACE_CHECK(eig.info() == Eigen::Success, NumericalError,
                  "eigendecomposition failed (covariance shrinkage already applied)");
  const VectorXd roots = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * roots.asDiagonal() * eig.eigenvectors().transpose();
}

double frechet_distance(const GaussianFit& a, const GaussianFit& b) {
  POSESPACE_CHECK(a.mean.size() == b.mean.size() && a.covariance.rows() == a.mean.size() &&
                      b.covariance.rows() == b.mean.size(),
                  DataError, "Gaussian fits have mismatched dimensions");
  const MatrixXd root_a = psd_sqrt(a.covariance);
  const MatrixXd cross = psd_sqrt(root_a * b.covariance * root_a);
  const double value = (a.mean - b.mean).squaredNorm() + a.covariance.trace() + b.covariance.trace() -
                       2.0 * cross.trace();
  POSESPACE_CHECK(std::isfinite(value), NumericalError, "Frechet distance is not finite");
  return std::max(0.0, value);
}

double fsd_vectors(const std::vector<VectorXd>& a, const std::vector<VectorXd>& b) {
  return frechet_distance(fit_gaussian(a), fit_gaussian(b));
}

std::vector<VectorXd> pose_vectors(const std::vector<Pose>& poses, const Asset& asset,
                                   const NormalizationStats& stats) {
  std::vector<VectorXd> out;
  out.reserve(poses.size());
  for (const Pose& p : poses) {
    validate_pose(asset, p);
    out.push_back(normalize_pose(asset, p, stats));
  }
  return out;
}

double fsd(const std::vector<Pose>& a, const std::vector<Pose>& b, const Asset& asset,
           const NormalizationStats& stats) {
  POSESPACE_CHECK(a.size() >= 2 && b.size() >= 2, DataError, "FSD needs at least two poses per set");
  return fsd_vectors(pose_vectors(a, asset, stats), pose_vectors(b, asset, stats));
}

double o_nn_vectors(const std::vector<VectorXd>& generated, const std::vector<VectorXd>& groundtruth) {
  POSESPACE_CHECK(groundtruth.size() >= 2, DataError, "O_NN needs at least two ground-truth poses");
  POSESPACE_CHECK(!generated.empty(), DataError, "O_NN needs at least one generated pose");
  auto nearest = [&](const VectorXd& q, size_t skip) {
    double best = std::numeric_limits<double>::infinity();
    for (size_t j = 0; j < groundtruth.size(); ++j) {
      if (j != skip) {
        best = std::min(best, (groundtruth[j] - q).norm());
      }
    }
    return best;
  };
  std::vector<double> intra(groundtruth.size());
  parallel_for(groundtruth.size(), [&](size_t i) { intra[i] = nearest(groundtruth[i], i); });
  std::vector<double> inter(generated.size());
  parallel_for(generated.size(), [&](size_t i) { inter[i] = nearest(generated[i], groundtruth.size()); });
  double numerator = 0.0;
  for (double d : intra) numerator += d;
  numerator /= static_cast<double>(intra.size());
  double denominator = 0.0;
  for (double d : inter) denominator += d;
  denominator /= static_cast<double>(inter.size());
  if (denominator < 1e-12) {
    return std::numeric_limits<double>::infinity();
  }
  return numerator / denominator;
}

double o_nn(const std::vector<Pose>& generated, const std::vector<Pose>& groundtruth, const Asset& asset,
            const NormalizationStats& stats) {
  return o_nn_vectors(pose_vectors(generated, asset, stats), pose_vectors(groundtruth, asset, stats));
}

PairwiseCounts pairwise_counts_from_json(const Json& doc) {
  POSESPACE_CHECK(doc.is_object() && doc.contains("counts") && doc["counts"].is_array(), DataError,
                  "counts document needs a 'counts' matrix");
  const Json& rows = doc["counts"];
  const auto n = static_cast<Eigen::Index>(rows.size());
  PairwiseCounts counts;
  counts.wins = MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Json& row = rows[static_cast<size_t>(i)];
    POSESPACE_CHECK(row.is_array() && static_cast<Eigen::Index>(row.size()) == n, DataError,
                    "counts must be a square matrix");
    for (Eigen::Index j = 0; j < n; ++j) {
      const Json& v = row[static_cast<size_t>(j)];
      POSESPACE_CHECK(v.is_number(), DataError, "counts must be numbers");
      counts.wins(i, j) = v.get<double>();
    }
  }
  if (doc.contains("items")) {
    counts.items = doc["items"].get<std::vector<std::string>>();
    POSESPACE_CHECK(static_cast<Eigen::Index>(counts.items.size()) == n, DataError,
                    "'items' must have one label per row");
  }
  return counts;
}

Json pairwise_counts_to_json(const PairwiseCounts& counts) {
  Json rows = Json::array();
  for (Eigen::Index i = 0; i < counts.wins.rows(); ++i) {
    Json row = Json::array();
    for (Eigen::Index j = 0; j < counts.wins.cols(); ++j) {
      row.push_back(counts.wins(i, j));
    }
    rows.push_back(row);
  }
  Json doc{{"counts", rows}};
  if (!counts.items.empty()) {
    doc["items"] = counts.items;
  }
  return doc;
}

LsrResult lsr(const PairwiseCounts& counts) {
  const MatrixXd& raw = counts.wins;
  const Eigen::Index n = raw.rows();
  POSESPACE_CHECK(n >= 2 && raw.cols() == n, DataError, "LSR needs a square matrix over at least two items");
  POSESPACE_CHECK(raw.allFinite() && (raw.array() >= 0.0).all(), DataError, "counts must be finite and non-negative");
  POSESPACE_CHECK(raw.diagonal().isZero(0.0), DataError, "counts must have a zero diagonal");

  // Connectivity of the symmetrized comparison graph.
  std::vector<char> seen(static_cast<size_t>(n), 0);
  std::vector<Eigen::Index> stack{0};
  seen[0] = 1;
  while (!stack.empty()) {
    const Eigen::Index i = stack.back();
    stack.pop_back();
    for (Eigen::Index j = 0; j < n; ++j) {
      if (!seen[static_cast<size_t>(j)] && raw(i, j) + raw(j, i) > 0.0) {
        seen[static_cast<size_t>(j)] = 1;
        stack.push_back(j);
      }
    }
  }
  for (char s : seen) {
    POSESPACE_CHECK(s, DataError, "comparison graph is disconnected");
  }

  LsrResult result;
  MatrixXd wins = raw;
  for (Eigen::Index i = 0; i < n && !result.regularized; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i != j && wins(i, j) == 0.0) {
        result.regularized = true;
        break;
      }
    }
  }
  if (result.regularized) {
    result.alpha = kLsrRegularization;
    wins.array() += kLsrRegularization;
    wins.diagonal().setZero();
  }

  // rate(i -> j) = wins(j, i); uniformized to a stochastic matrix.
  MatrixXd rate = wins.transpose();
  const VectorXd out_rate = rate.rowwise().sum();
  const double d_max = out_rate.maxCoeff();
  MatrixXd transition = rate / d_max;
  transition.diagonal() = VectorXd::Ones(n) - out_rate / d_max;

  // pi^T (P - I) = 0 with the last equation replaced by sum(pi) = 1.
  MatrixXd system = (transition - MatrixXd::Identity(n, n)).transpose();
  system.row(n - 1).setOnes();
  VectorXd rhs = VectorXd::Zero(n);
  rhs[n - 1] = 1.0;
  const VectorXd pi = system.fullPivLu().solve(rhs);
  POSESPACE_CHECK(pi.allFinite() && (pi.array() > 0.0).all(), NumericalError,
                  "stationary distribution is not strictly positive");
  result.scores = pi.array().log().matrix();
  result.scores.array() -= result.scores.mean();
  return result;
}

}  // namespace posespace
