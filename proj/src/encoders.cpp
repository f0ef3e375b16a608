#include "binagg/encoders.hpp"

#include <cmath>
#include <numbers>

namespace binagg {
namespace {

std::uint64_t vocab_hash(SignatureKind kind, const Vocabulary& v) {
  Fnv1a h;
  h.update_value(static_cast<std::uint8_t>(kind));
  h.update_value(static_cast<std::uint8_t>(v.method));
  h.update_value(static_cast<std::uint32_t>(v.k()));
  h.update_value(static_cast<std::uint32_t>(v.dim()));
  if (v.binary())
    h.update(v.binary_centroids.payload().data(),
             v.binary_centroids.payload().size() * sizeof(std::uint64_t));
  else
    h.update(v.real_centroids.data(),
             static_cast<std::size_t>(v.real_centroids.size()) * sizeof(double));
  return h.digest();
}

std::uint64_t model_hash(SignatureKind kind, Eigen::Index k, Eigen::Index d,
                         bool include_weights, bool include_variances,
                         const Eigen::VectorXd& w) {
  Fnv1a h;
  h.update_value(static_cast<std::uint8_t>(kind));
  h.update_value(static_cast<std::uint32_t>(k));
  h.update_value(static_cast<std::uint32_t>(d));
  h.update_value(static_cast<std::uint8_t>(include_weights));
  h.update_value(static_cast<std::uint8_t>(include_variances));
  h.update(w.data(), static_cast<std::size_t>(w.size()) * sizeof(double));
  return h.digest();
}

// [weights? | means | variances?], component index major inside each block.
Eigen::VectorXd pack_blocks(const Eigen::VectorXd* alpha,
                            const Eigen::MatrixXd& mu_block,
                            const Eigen::MatrixXd* var_block) {
  const Eigen::Index K = mu_block.rows(), D = mu_block.cols();
  const Eigen::Index total = K * D + (alpha ? K : 0) + (var_block ? K * D : 0);
  Eigen::VectorXd out(total);
  Eigen::Index off = 0;
  if (alpha) {
    out.segment(0, K) = *alpha;
    off = K;
  }
  for (Eigen::Index k = 0; k < K; ++k, off += D)
    out.segment(off, D) = mu_block.row(k);
  if (var_block)
    for (Eigen::Index k = 0; k < K; ++k, off += D)
      out.segment(off, D) = var_block->row(k);
  return out;
}

void unpack_row(const PackedDescriptorSet& img, std::size_t t,
                Eigen::VectorXd& x) {
  for (int d = 0; d < img.dim_bits(); ++d) x[d] = img.bit(t, d) ? 1.0 : 0.0;
}

void warn_empty(const char* what, const PackedDescriptorSet& img) {
  warn(std::string(what) + ": image '" + img.image_id() +
       "' has no descriptors; emitting zeros");
}

}  // namespace

const char* signature_kind_name(SignatureKind k) {
  switch (k) {
    case SignatureKind::bow: return "bow";
    case SignatureKind::vlad: return "vlad";
    case SignatureKind::fv_bmm: return "fv-bmm";
    case SignatureKind::fv_gmm: return "fv-gmm";
    case SignatureKind::cnn: return "cnn";
    case SignatureKind::pca_reduced: return "pca-reduced";
  }
  return "unknown";
}

// ---- bow / vlad --------------------------------------------------------------

GlobalVector encode_bow(const Vocabulary& v, const PackedDescriptorSet& img) {
  if (v.k() == 0) throw std::invalid_argument("encode_bow: empty vocabulary");
  if (v.dim() != img.dim_bits())
    throw std::invalid_argument("encode_bow: descriptor dim mismatch");
  GlobalVector gv;
  gv.kind = SignatureKind::bow;
  gv.provenance = vocab_hash(SignatureKind::bow, v);
  gv.values = Eigen::VectorXd::Zero(v.k());
  if (img.count() == 0) {
    warn_empty("encode_bow", img);
    return gv;
  }
  for (std::size_t t = 0; t < img.count(); ++t)
    gv.values[assign(v, img, t)] += 1.0;
  return gv;
}

GlobalVector encode_vlad(const Vocabulary& v, const PackedDescriptorSet& img) {
  if (v.k() == 0) throw std::invalid_argument("encode_vlad: empty vocabulary");
  if (v.dim() != img.dim_bits())
    throw std::invalid_argument("encode_vlad: descriptor dim mismatch");
  const Eigen::Index K = v.k(), D = v.dim();
  GlobalVector gv;
  gv.kind = SignatureKind::vlad;
  gv.provenance = vocab_hash(SignatureKind::vlad, v);
  gv.values = Eigen::VectorXd::Zero(K * D);
  if (img.count() == 0) {
    warn_empty("encode_vlad", img);
    return gv;
  }
  const Eigen::MatrixXd C =
      v.binary() ? unpack_all(v.binary_centroids) : v.real_centroids;
  Eigen::VectorXd x(D);
  for (std::size_t t = 0; t < img.count(); ++t) {
    const Eigen::Index j = assign(v, img, t);
    unpack_row(img, t, x);
    gv.values.segment(j * D, D) += x - C.row(j).transpose();
  }
  return gv;
}

// ---- fv over a Bernoulli mixture ----------------------------------------------

GlobalVector encode_fv_bmm(const BernoulliMixture& m,
                           const PackedDescriptorSet& img,
                           const BmmFvOptions& opt) {
  if (m.dim() != img.dim_bits())
    throw std::invalid_argument("encode_fv_bmm: descriptor dim mismatch");
  if (img.count() == 0)
    throw NumericError("encode_fv_bmm: empty descriptor set");
  const Eigen::Index K = m.k(), D = m.dim();
  const double T = static_cast<double>(img.count());
  const auto& mu = m.means();
  const Eigen::ArrayXXd inv_sd = (mu.array() * (1.0 - mu.array())).rsqrt();
  const BmmEvaluator ev(m);

  Eigen::MatrixXd g_mu = Eigen::MatrixXd::Zero(K, D);
  Eigen::VectorXd sgamma = Eigen::VectorXd::Zero(K);
  Eigen::VectorXd x(D);
  for (std::size_t t = 0; t < img.count(); ++t) {
    const Eigen::VectorXd g = ev.occupancy(img.descriptor(t));
    unpack_row(img, t, x);
    for (Eigen::Index k = 0; k < K; ++k) {
      if (g[k] < opt.gamma_skip) continue;
      sgamma[k] += g[k];
      g_mu.row(k).array() +=
          g[k] * (x.transpose().array() - mu.row(k).array()) * inv_sd.row(k);
    }
  }

  const Eigen::ArrayXd tsw = T * m.weights().array().sqrt();
  g_mu.array().colwise() /= tsw;

  GlobalVector gv;
  gv.kind = SignatureKind::fv_bmm;
  gv.provenance = model_hash(SignatureKind::fv_bmm, K, D, opt.include_weights,
                             false, m.weights());
  if (opt.include_weights) {
    const Eigen::VectorXd alpha =
        ((sgamma - T * m.weights()).array() / tsw).matrix();
    gv.values = pack_blocks(&alpha, g_mu, nullptr);
  } else {
    gv.values = pack_blocks(nullptr, g_mu, nullptr);
  }
  return gv;
}

GlobalVector encode_fv_bmm_stats(const BernoulliMixture& m,
                                 const PackedDescriptorSet& img,
                                 const BmmFvOptions& opt) {
  if (m.dim() != img.dim_bits())
    throw std::invalid_argument("encode_fv_bmm_stats: descriptor dim mismatch");
  if (img.count() == 0)
    throw NumericError("encode_fv_bmm_stats: empty descriptor set");
  const Eigen::Index K = m.k(), D = m.dim();
  const double T = static_cast<double>(img.count());
  const auto& mu = m.means();
  const BmmEvaluator ev(m);

  // Only the masked sufficient statistics are accumulated; the signature is
  // a closed form of (s0, s1).
  Eigen::VectorXd s0 = Eigen::VectorXd::Zero(K);
  Eigen::MatrixXd s1 = Eigen::MatrixXd::Zero(K, D);
  Eigen::VectorXd gm(K);
  for (std::size_t t = 0; t < img.count(); ++t) {
    const Eigen::VectorXd g = ev.occupancy(img.descriptor(t));
    gm = (g.array() < opt.gamma_skip).select(0.0, g.array()).matrix();
    s0 += gm;
    const auto row = img.descriptor(t);
    for (std::size_t wi = 0; wi < row.size(); ++wi) {
      std::uint64_t w = row[wi];
      while (w) {
        s1.col(static_cast<Eigen::Index>(wi * kWordBits +
                                         std::countr_zero(w))) += gm;
        w &= w - 1;
      }
    }
  }

  const Eigen::ArrayXd tsw = T * m.weights().array().sqrt();
  Eigen::MatrixXd g_mu = ((s1 - s0.asDiagonal() * mu).array() *
                          (mu.array() * (1.0 - mu.array())).rsqrt())
                             .matrix();
  g_mu.array().colwise() /= tsw;

  GlobalVector gv;
  gv.kind = SignatureKind::fv_bmm;
  gv.provenance = model_hash(SignatureKind::fv_bmm, K, D, opt.include_weights,
                             false, m.weights());
  if (opt.include_weights) {
    const Eigen::VectorXd alpha =
        ((s0 - T * m.weights()).array() / tsw).matrix();
    gv.values = pack_blocks(&alpha, g_mu, nullptr);
  } else {
    gv.values = pack_blocks(nullptr, g_mu, nullptr);
  }
  return gv;
}

// ---- fv over a Gaussian mixture -----------------------------------------------

GlobalVector encode_fv_gmm(const GaussianMixture& m,
                           const PackedDescriptorSet& img,
                           const GmmFvOptions& opt) {
  if (m.dim() != img.dim_bits())
    throw std::invalid_argument("encode_fv_gmm: descriptor dim mismatch");
  if (img.count() == 0)
    throw NumericError("encode_fv_gmm: empty descriptor set");
  const Eigen::Index K = m.k(), D = m.dim();
  const double T = static_cast<double>(img.count());
  const auto& mu = m.means();
  const Eigen::ArrayXXd var = m.variances().array();
  const Eigen::ArrayXXd inv_sd = var.rsqrt();
  constexpr double inv_sqrt2 = 1.0 / std::numbers::sqrt2;
  const GmmEvaluator ev(m);

  Eigen::MatrixXd g_mu = Eigen::MatrixXd::Zero(K, D);
  Eigen::MatrixXd g_sig = Eigen::MatrixXd::Zero(K, D);
  Eigen::VectorXd sgamma = Eigen::VectorXd::Zero(K);
  Eigen::VectorXd x(D);
  for (std::size_t t = 0; t < img.count(); ++t) {
    unpack_row(img, t, x);
    const Eigen::VectorXd g = ev.occupancy(x);
    for (Eigen::Index k = 0; k < K; ++k) {
      if (g[k] < opt.gamma_skip) continue;
      sgamma[k] += g[k];
      const auto diff = x.transpose().array() - mu.row(k).array();  // 1 x D
      g_mu.row(k).array() += g[k] * diff * inv_sd.row(k);
      g_sig.row(k).array() +=
          g[k] * inv_sqrt2 * (diff.square() / var.row(k) - 1.0);
    }
  }

  const Eigen::ArrayXd tsw = T * m.weights().array().sqrt();
  g_mu.array().colwise() /= tsw;
  g_sig.array().colwise() /= tsw;

  GlobalVector gv;
  gv.kind = SignatureKind::fv_gmm;
  gv.provenance = model_hash(SignatureKind::fv_gmm, K, D, opt.include_weights,
                             opt.include_variances, m.weights());
  const Eigen::VectorXd alpha =
      ((sgamma - T * m.weights()).array() / tsw).matrix();
  gv.values = pack_blocks(opt.include_weights ? &alpha : nullptr, g_mu,
                          opt.include_variances ? &g_sig : nullptr);
  return gv;
}

GlobalVector encode_fv_gmm_stats(const GaussianMixture& m,
                                 const PackedDescriptorSet& img,
                                 const GmmFvOptions& opt) {
  if (m.dim() != img.dim_bits())
    throw std::invalid_argument("encode_fv_gmm_stats: descriptor dim mismatch");
  if (img.count() == 0)
    throw NumericError("encode_fv_gmm_stats: empty descriptor set");
  const Eigen::Index K = m.k(), D = m.dim();
  const double T = static_cast<double>(img.count());
  const auto& mu = m.means();
  const Eigen::ArrayXXd var = m.variances().array();
  const GmmEvaluator ev(m);

  Eigen::VectorXd s0 = Eigen::VectorXd::Zero(K);
  Eigen::MatrixXd s1 = Eigen::MatrixXd::Zero(K, D);
  Eigen::MatrixXd s2 = Eigen::MatrixXd::Zero(K, D);
  Eigen::VectorXd x(D), gm(K);
  for (std::size_t t = 0; t < img.count(); ++t) {
    unpack_row(img, t, x);
    const Eigen::VectorXd g = ev.occupancy(x);
    gm = (g.array() < opt.gamma_skip).select(0.0, g.array()).matrix();
    s0 += gm;
    s1 += gm * x.transpose();
    // x is 0/1 here so x^2 = x, but keep the general form.
    s2 += gm * x.cwiseAbs2().transpose();
  }

  const Eigen::ArrayXd tsw = T * m.weights().array().sqrt();
  Eigen::MatrixXd g_mu =
      ((s1 - s0.asDiagonal() * mu).array() * var.rsqrt()).matrix();
  g_mu.array().colwise() /= tsw;

  // sum_t gamma ((x-mu)^2/var - 1) = (s2 - 2 mu.*s1 + mu.^2.*s0_k)/var - s0_k
  Eigen::MatrixXd g_sig =
      ((s2 - 2.0 * mu.cwiseProduct(s1) + s0.asDiagonal() * mu.cwiseAbs2())
           .array() /
       var)
          .matrix();
  g_sig.array().colwise() -= s0.array();
  g_sig.array().colwise() /= (std::numbers::sqrt2 * tsw);

  GlobalVector gv;
  gv.kind = SignatureKind::fv_gmm;
  gv.provenance = model_hash(SignatureKind::fv_gmm, K, D, opt.include_weights,
                             opt.include_variances, m.weights());
  const Eigen::VectorXd alpha = ((s0 - T * m.weights()).array() / tsw).matrix();
  gv.values = pack_blocks(opt.include_weights ? &alpha : nullptr, g_mu,
                          opt.include_variances ? &g_sig : nullptr);
  return gv;
}

}  // namespace binagg
