#pragma once

// Mixture models over binary descriptors: a Bernoulli mixture fit directly on
// the packed bits, and a diagonal-covariance Gaussian mixture fit on the bits
// unpacked to reals. Both are trained with EM in the log domain, stopping when
// the Frobenius norm of the change in the full mean matrix drops below eps.
// Fits are deterministic functions of (sample, k, seed, options) regardless of
// the worker count: the E-step reduces fixed-size chunks whose partial
// sufficient statistics are merged in chunk order.

#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "binagg/common.hpp"
#include "binagg/descriptors.hpp"

namespace binagg {

// ------------------------------------------------------------- Bernoulli ----

/** Mixture of multivariate Bernoullis: weights w (K, positive, summing to 1)
 *  and per-component bit probabilities mu (K x D). Means are clamped into
 *  [1e-4, 1 - 1e-4] on construction so log(mu) and log(1-mu) stay finite. */
class BernoulliMixture {
 public:
  static constexpr double kMeanFloor = 1e-4;
  static constexpr double kWeightFloor = 1e-8;

  BernoulliMixture(Eigen::VectorXd weights, Eigen::MatrixXd means);

  Eigen::Index k() const noexcept { return weights_.size(); }
  Eigen::Index dim() const noexcept { return means_.cols(); }
  const Eigen::VectorXd& weights() const noexcept { return weights_; }
  const Eigen::MatrixXd& means() const noexcept { return means_; }

 private:
  Eigen::VectorXd weights_;
  Eigen::MatrixXd means_;
};

/** log p(x_t | component k): sum over bits of log mu or log(1-mu). */
double bmm_component_logprob(const BernoulliMixture& m, Eigen::Index k,
                             const PackedDescriptorSet& s, std::size_t t);

/** Posterior over components for descriptor t (gamma row; sums to 1). */
Eigen::VectorXd bmm_occupancy(const BernoulliMixture& m,
                              const PackedDescriptorSet& s, std::size_t t);

/** Total log-likelihood of a descriptor set under the mixture. */
double bmm_loglik(const BernoulliMixture& m, const PackedDescriptorSet& s);

/** Reusable posterior evaluator. Precomputes the log tables once so callers
 *  that score many descriptors (EM, encoders) pay O(K * popcount) per row
 *  instead of O(K * D). Immutable and safe to share across threads. */
class BmmEvaluator {
 public:
  explicit BmmEvaluator(const BernoulliMixture& m);

  Eigen::Index k() const noexcept { return logw_base_.size(); }
  Eigen::Index dim() const noexcept { return delta_.cols(); }

  /** Posterior gamma for one packed row; optionally reports the row's log
   *  evidence log sum_k w_k p_k(x). */
  Eigen::VectorXd occupancy(std::span<const std::uint64_t> row,
                            double* log_evidence = nullptr) const;

 private:
  Eigen::VectorXd logw_base_;  // log w_k + sum_d log(1-mu_kd)
  Eigen::MatrixXd delta_;      // log mu - log(1-mu), K x D column-major
};

/** Zeroth/first-order posterior-weighted sufficient statistics:
 *  s0_k = sum_t gamma_t(k), s1_kd = sum_t gamma_t(k) x_td, plus the sample
 *  log-likelihood picked up along the way. */
struct BmmSuffStats {
  Eigen::VectorXd s0;
  Eigen::MatrixXd s1;
  double loglik = 0.0;
};
BmmSuffStats bmm_suffstats(const BernoulliMixture& m,
                           const PackedDescriptorSet& s);

/** Unnormalized score of the sample w.r.t. component log-odds alpha_k
 *  (soft-max weight parametrization): sum_t (gamma_t(k) - w_k). */
Eigen::VectorXd bmm_score_alpha(const BernoulliMixture& m,
                                const PackedDescriptorSet& s);

/** Unnormalized score w.r.t. the means:
 *  sum_t gamma_t(k) (x_td - mu_kd) / (mu_kd (1 - mu_kd)). */
Eigen::MatrixXd bmm_score_mu(const BernoulliMixture& m,
                             const PackedDescriptorSet& s);

/** Draws `count` descriptors: component by weight, then independent bits
 *  from that component's mean vector. */
PackedDescriptorSet sample_bmm(const BernoulliMixture& m, std::size_t count,
                               Rng& rng, std::string image_id = "");

// -------------------------------------------------------------- Gaussian ----

/** Diagonal-covariance Gaussian mixture; variances floored at 1e-6. */
class GaussianMixture {
 public:
  static constexpr double kVarianceFloor = 1e-6;
  static constexpr double kWeightFloor = 1e-8;

  GaussianMixture(Eigen::VectorXd weights, Eigen::MatrixXd means,
                  Eigen::MatrixXd variances);

  Eigen::Index k() const noexcept { return weights_.size(); }
  Eigen::Index dim() const noexcept { return means_.cols(); }
  const Eigen::VectorXd& weights() const noexcept { return weights_; }
  const Eigen::MatrixXd& means() const noexcept { return means_; }
  const Eigen::MatrixXd& variances() const noexcept { return variances_; }

 private:
  Eigen::VectorXd weights_;
  Eigen::MatrixXd means_;
  Eigen::MatrixXd variances_;
};

double gmm_component_logprob(const GaussianMixture& m, Eigen::Index k,
                             const Eigen::Ref<const Eigen::VectorXd>& x);
Eigen::VectorXd gmm_occupancy(const GaussianMixture& m,
                              const Eigen::Ref<const Eigen::VectorXd>& x);
double gmm_loglik(const GaussianMixture& m, const Eigen::MatrixXd& sample);

/** Gaussian counterpart of BmmEvaluator: caches the per-component constants
 *  and inverse variances. */
class GmmEvaluator {
 public:
  explicit GmmEvaluator(const GaussianMixture& m);

  Eigen::Index k() const noexcept { return ck_.size(); }
  Eigen::Index dim() const noexcept { return mu_.cols(); }

  Eigen::VectorXd occupancy(const Eigen::Ref<const Eigen::VectorXd>& x,
                            double* log_evidence = nullptr) const;

 private:
  Eigen::VectorXd ck_;  // log w_k - 0.5 sum_d log(2 pi var_kd)
  Eigen::MatrixXd mu_, inv_var_;
};

// ------------------------------------------------------------ EM fitting ----

struct EmOptions {
  double eps = 0.05;   // stop when ||mu_new - mu_old||_F < eps
  int max_iters = 200;
};

struct BmmFitResult {
  BernoulliMixture model;
  std::vector<double> loglik_trace;  // loglik before each M-step
  int iterations = 0;
  bool converged = false;
  bool degenerate = false;  // some component starved (posterior mass ~ 0)
};

struct GmmFitResult {
  GaussianMixture model;
  std::vector<double> loglik_trace;
  int iterations = 0;
  bool converged = false;
  bool degenerate = false;
};

/** EM fit of a K-component Bernoulli mixture. Init: uniform weights, means
 *  drawn uniformly from [0.25, 0.75). */
BmmFitResult bmm_fit_em(const PackedDescriptorSet& sample, int k,
                        std::uint64_t seed, const EmOptions& opt = {});

/** EM fit of a K-component diagonal GMM on real rows. Init: k-means
 *  centroids as means, uniform weights, shared spherical variance equal to
 *  the mean within-cluster scatter. */
GmmFitResult gmm_fit_em(const Eigen::MatrixXd& sample, int k,
                        std::uint64_t seed, const EmOptions& opt = {});

}  // namespace binagg
