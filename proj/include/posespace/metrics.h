#pragma once

#include "posespace/asset_io.h"
#include "posespace/geometry.h"

#include <Eigen/Core>

#include <vector>

namespace posespace {

constexpr double kCovarianceShrinkage = 1e-6;

struct GaussianFit {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;
};

// Sample mean and unbiased covariance plus kCovarianceShrinkage * I.
GaussianFit fit_gaussian(const std::vector<Eigen::VectorXd>& samples);

// Symmetric PSD square root; negative eigenvalues are clamped to zero.
Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m);

// |mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2), parameters used as given.
double frechet_distance(const GaussianFit& a, const GaussianFit& b);

// Frechet distance between Gaussian fits of two sets of feature vectors.
double fsd_vectors(const std::vector<Eigen::VectorXd>& a, const std::vector<Eigen::VectorXd>& b);

// Frechet Skeleton Distance over normalized pose vectors.
double fsd(const std::vector<Pose>& a, const std::vector<Pose>& b, const Asset& asset,
           const NormalizationStats& stats);

// Mean nearest-other-neighbour distance within the ground truth divided by
// the mean distance from each generated vector to its nearest ground-truth
// vector. +infinity when the denominator is below 1e-12.
double o_nn_vectors(const std::vector<Eigen::VectorXd>& generated, const std::vector<Eigen::VectorXd>& groundtruth);

double o_nn(const std::vector<Pose>& generated, const std::vector<Pose>& groundtruth, const Asset& asset,
            const NormalizationStats& stats);

std::vector<Eigen::VectorXd> pose_vectors(const std::vector<Pose>& poses, const Asset& asset,
                                          const NormalizationStats& stats);

// Entry (i, j): number of times item i beat item j.
struct PairwiseCounts {
  Eigen::MatrixXd wins;
  std::vector<std::string> items;  // optional labels
};

PairwiseCounts pairwise_counts_from_json(const Json& doc);
Json pairwise_counts_to_json(const PairwiseCounts& counts);

constexpr double kLsrRegularization = 0.1;

struct LsrResult {
  Eigen::VectorXd scores;  // mean-centered log stationary probabilities
  bool regularized = false;
  double alpha = 0.0;
};

// Spectral ranking: Markov chain with rate i -> j proportional to the wins of
// j over i. Adds kLsrRegularization to every off-diagonal count when some
// pair has no wins in one direction. Throws DataError when the comparison
// graph is disconnected.
LsrResult lsr(const PairwiseCounts& counts);

}  // namespace posespace
