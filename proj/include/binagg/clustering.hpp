#pragma once

// Visual vocabularies over binary descriptors. Three learning methods:
//   kmeans    — Lloyd iterations on the descriptors unpacked to reals,
//               k-means++ seeding, real-valued centroids;
//   kmajority — Hamming assignment + per-bit majority vote, binary centroids;
//   kmedoids  — Hamming assignment + medoid update (Voronoi iteration),
//               binary centroids drawn from the sample.
// All three are deterministic functions of (sample, k, max_iters, seed) and
// assignment always breaks distance ties toward the lowest centroid index.

#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "binagg/descriptors.hpp"

namespace binagg {

enum class LearningMethod : std::uint8_t { kmeans = 0, kmajority = 1, kmedoids = 2 };

/** A trained vocabulary. kmeans stores real centroids; the binary methods
 *  store packed rows. Exactly one of the two containers is populated. */
struct Vocabulary {
  LearningMethod method = LearningMethod::kmeans;
  Eigen::MatrixXd real_centroids;        // k x dim, kmeans only
  PackedDescriptorSet binary_centroids;  // k rows, kmajority/kmedoids only

  bool binary() const noexcept { return method != LearningMethod::kmeans; }
  Eigen::Index k() const noexcept {
    return binary() ? static_cast<Eigen::Index>(binary_centroids.count())
                    : real_centroids.rows();
  }
  int dim() const noexcept {
    return binary() ? binary_centroids.dim_bits()
                    : static_cast<int>(real_centroids.cols());
  }
};

/** Fit output: the vocabulary plus the per-iteration clustering objective
 *  (SSE for kmeans, total Hamming cost for the binary methods), recorded
 *  after each assignment step. The trace never increases. */
struct ClusterResult {
  Vocabulary vocabulary;
  std::vector<double> objective_trace;
  int iterations = 0;
};

ClusterResult kmeans_fit(const Eigen::MatrixXd& sample, int k, int max_iters,
                         std::uint64_t seed);
ClusterResult kmajority_fit(const PackedDescriptorSet& sample, int k,
                            int max_iters, std::uint64_t seed);
ClusterResult kmedoids_fit(const PackedDescriptorSet& sample, int k,
                           int max_iters, std::uint64_t seed);

inline constexpr int kDefaultClusterIters = 100;

/** Index of the nearest centroid for descriptor t (Hamming for binary
 *  vocabularies, Euclidean on the unpacked descriptor for kmeans; ties go to
 *  the lowest index). */
Eigen::Index assign(const Vocabulary& v, const PackedDescriptorSet& s,
                    std::size_t t);

/** Nearest real centroid for an already-unpacked vector (kmeans only). */
Eigen::Index assign_real(const Vocabulary& v,
                         const Eigen::Ref<const Eigen::VectorXd>& x);

}  // namespace binagg
