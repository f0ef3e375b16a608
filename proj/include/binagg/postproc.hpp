#pragma once

// Signature post-processing: signed power-law flattening, L2 normalization,
// seeded PCA, and the standard pipeline power -> L2 -> [PCA -> L2] (or, when
// requested, PCA -> L2 -> power -> L2). Zero vectors pass through every stage
// unchanged, with a warning, so one empty image cannot abort a corpus run.

#include <cstdint>

#include <Eigen/Core>

#include "binagg/encoders.hpp"

namespace binagg {

/** sign(x) |x|^beta applied per coefficient; beta must lie in (0, 1]. */
Eigen::VectorXd power_law(const Eigen::Ref<const Eigen::VectorXd>& v,
                          double beta);

/** v / ||v||2; the zero vector is returned unchanged with a warning. */
Eigen::VectorXd l2_normalize(const Eigen::Ref<const Eigen::VectorXd>& v);

/** Affine PCA projection y = P (x - mean). Rows of P are orthonormal
 *  principal directions with descending explained variance; each row is
 *  sign-fixed so its largest-magnitude entry is positive. */
struct PcaModel {
  Eigen::VectorXd mean;                // input_dim
  Eigen::MatrixXd projection;          // output_dim x input_dim
  Eigen::VectorXd explained_variance;  // output_dim, descending, >= 0

  Eigen::Index input_dim() const noexcept { return mean.size(); }
  Eigen::Index output_dim() const noexcept { return projection.rows(); }
};

struct PcaOptions {
  Eigen::Index dense_path_limit = 4096;  // covariance eigensolve up to here
  int power_iters = 8;                   // randomized path refinement
  Eigen::Index oversample = 8;           // randomized path sketch padding
};

/** Trains a PCA on sample rows (n x input_dim). Requires
 *  out_dim <= input_dim and out_dim < n. Inputs up to
 *  dense_path_limit use an exact covariance eigendecomposition; larger
 *  inputs use seeded randomized subspace iteration. Deterministic for a
 *  fixed (sample, out_dim, seed, options). */
PcaModel pca_train(const Eigen::MatrixXd& sample, Eigen::Index out_dim,
                   std::uint64_t seed, const PcaOptions& opt = {});

Eigen::VectorXd pca_apply(const PcaModel& m,
                          const Eigen::Ref<const Eigen::VectorXd>& x);

struct PipelineOptions {
  double beta = 0.5;
  bool pca_first = false;       // PCA -> L2 -> power -> L2
  const PcaModel* pca = nullptr;
};

/** Applies the standard pipeline to one signature. When PCA participates the
 *  output kind becomes pca_reduced; otherwise the kind is preserved. A zero
 *  input yields a zero output of the pipeline's output dimension. */
GlobalVector standard_pipeline(const GlobalVector& in,
                               const PipelineOptions& opt);

}  // namespace binagg
