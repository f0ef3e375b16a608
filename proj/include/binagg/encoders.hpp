#pragma once

// Global image signatures aggregated from local binary descriptors.
//
//   bow      — K-bin hard-assignment histogram of raw counts
//   vlad     — concatenated residual sums against the vocabulary (K*D dims)
//   fv-bmm   — Fisher vector under a Bernoulli mixture
//   fv-gmm   — Fisher vector under a diagonal Gaussian mixture
//
// Fisher vectors are normalized by the closed-form diagonal approximation of
// the Fisher information, so each block is
//   weights:  (1 / (T sqrt(w_k)))  sum_t (gamma_t(k) - w_k)
//   means     (BMM): (1 / (T sqrt(w_k))) sum_t gamma_t(k) (x - mu_k) / sqrt(mu_k (1 - mu_k))
//   means     (GMM): (1 / (T sqrt(w_k))) sum_t gamma_t(k) (x - mu_k) / sigma_k
//   variances (GMM): (1 / (T sqrt(2 w_k))) sum_t gamma_t(k) ((x - mu_k)^2 / sigma_k^2 - 1)
// laid out [weights? | means | variances?] with the component index major.
// Every encoder has a direct per-descriptor form and an algebraically
// equivalent form computed from posterior-weighted sufficient statistics.

#include <cstdint>

#include <Eigen/Core>

#include "binagg/clustering.hpp"
#include "binagg/descriptors.hpp"
#include "binagg/mixtures.hpp"

namespace binagg {

enum class SignatureKind : std::uint8_t {
  bow = 0,
  vlad = 1,
  fv_bmm = 2,
  fv_gmm = 3,
  cnn = 4,
  pca_reduced = 5,
};

const char* signature_kind_name(SignatureKind k);

/** One image's global signature plus a hash of the encoder configuration
 *  that produced it (model shape + weights), for pipeline sanity checks. */
struct GlobalVector {
  SignatureKind kind = SignatureKind::bow;
  Eigen::VectorXd values;
  std::uint64_t provenance = 0;
};

struct BmmFvOptions {
  bool include_weights = false;
  double gamma_skip = 1e-9;  // occupancies below this are skipped
};

struct GmmFvOptions {
  bool include_weights = false;
  bool include_variances = false;
  double gamma_skip = 1e-9;
};

/** Raw-count histogram over the vocabulary. An empty image yields the zero
 *  histogram (with a warning). */
GlobalVector encode_bow(const Vocabulary& v, const PackedDescriptorSet& img);

/** Residual aggregate: block k sums (x - c_k) over descriptors assigned to
 *  centroid k; binary centroids are unpacked to reals. Empty image yields
 *  the zero vector (with a warning). */
GlobalVector encode_vlad(const Vocabulary& v, const PackedDescriptorSet& img);

/** Bernoulli-mixture Fisher vector, direct per-descriptor accumulation.
 *  Throws NumericError on an empty image (the 1/T normalization). */
GlobalVector encode_fv_bmm(const BernoulliMixture& m,
                           const PackedDescriptorSet& img,
                           const BmmFvOptions& opt = {});

/** Same signature computed from sufficient statistics (s0, s1) only. */
GlobalVector encode_fv_bmm_stats(const BernoulliMixture& m,
                                 const PackedDescriptorSet& img,
                                 const BmmFvOptions& opt = {});

/** Gaussian-mixture Fisher vector over the unpacked descriptors. */
GlobalVector encode_fv_gmm(const GaussianMixture& m,
                           const PackedDescriptorSet& img,
                           const GmmFvOptions& opt = {});

/** Same signature computed from sufficient statistics (s0, s1, s2) only. */
GlobalVector encode_fv_gmm_stats(const GaussianMixture& m,
                                 const PackedDescriptorSet& img,
                                 const GmmFvOptions& opt = {});

}  // namespace binagg
