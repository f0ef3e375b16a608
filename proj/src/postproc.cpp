#include "binagg/postproc.hpp"

#include <cmath>

#include <Eigen/Dense>

#include "binagg/common.hpp"

namespace binagg {
namespace {

// Make the largest-magnitude entry of each projection row positive (lowest
// index wins magnitude ties) so eigenvector sign ambiguity cannot leak into
// serialized models.
void fix_signs(Eigen::MatrixXd& projection) {
  for (Eigen::Index r = 0; r < projection.rows(); ++r) {
    Eigen::Index arg = 0;
    double best = std::abs(projection(r, 0));
    for (Eigen::Index c = 1; c < projection.cols(); ++c) {
      const double a = std::abs(projection(r, c));
      if (a > best) {
        best = a;
        arg = c;
      }
    }
    if (projection(r, arg) < 0.0) projection.row(r) = -projection.row(r);
  }
}

// Orthonormal basis of the column span via Householder QR.
Eigen::MatrixXd orthonormalize(const Eigen::MatrixXd& v) {
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(v);
  return qr.householderQ() * Eigen::MatrixXd::Identity(v.rows(), v.cols());
}

}  // namespace

Eigen::VectorXd power_law(const Eigen::Ref<const Eigen::VectorXd>& v,
                          double beta) {
  if (!(beta > 0.0) || beta > 1.0)
    throw std::invalid_argument("power_law: beta must lie in (0, 1]");
  return (v.array().sign() * v.array().abs().pow(beta)).matrix();
}

Eigen::VectorXd l2_normalize(const Eigen::Ref<const Eigen::VectorXd>& v) {
  const double n = v.norm();
  if (n == 0.0) {
    warn("l2_normalize: zero vector passes through unnormalized");
    return v;
  }
  return v / n;
}

PcaModel pca_train(const Eigen::MatrixXd& sample, Eigen::Index out_dim,
                   std::uint64_t seed, const PcaOptions& opt) {
  const Eigen::Index n = sample.rows(), d = sample.cols();
  if (out_dim < 1) throw std::invalid_argument("pca_train: out_dim must be >= 1");
  if (out_dim > d)
    throw std::invalid_argument("pca_train: out_dim " + std::to_string(out_dim) +
                                " exceeds input dim " + std::to_string(d));
  if (n <= out_dim)
    throw std::invalid_argument("pca_train: need more than out_dim (" +
                                std::to_string(out_dim) + ") sample rows, got " +
                                std::to_string(n));

  PcaModel m;
  m.mean = sample.colwise().mean();
  const Eigen::MatrixXd xc = sample.rowwise() - m.mean.transpose();
  const double denom = static_cast<double>(n - 1);

  if (d <= opt.dense_path_limit) {
    const Eigen::MatrixXd cov = xc.adjoint() * xc / denom;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    if (es.info() != Eigen::Success)
      throw NumericError("pca_train: eigendecomposition failed");
    // Eigenvalues come out ascending; take the top out_dim in reverse.
    m.projection.resize(out_dim, d);
    m.explained_variance.resize(out_dim);
    for (Eigen::Index i = 0; i < out_dim; ++i) {
      m.projection.row(i) = es.eigenvectors().col(d - 1 - i).transpose();
      m.explained_variance[i] = std::max(0.0, es.eigenvalues()[d - 1 - i]);
    }
  } else {
    // Randomized subspace iteration against the covariance operator,
    // applied implicitly through the centered data.
    const Eigen::Index l = std::min(d, out_dim + opt.oversample);
    Rng rng(seed);
    Eigen::MatrixXd sketch(d, l);
    for (Eigen::Index c = 0; c < l; ++c)
      for (Eigen::Index r = 0; r < d; ++r) sketch(r, c) = rng.next_gaussian();
    Eigen::MatrixXd q = orthonormalize(sketch);
    for (int it = 0; it < opt.power_iters; ++it)
      q = orthonormalize(xc.adjoint() * (xc * q) / denom);
    const Eigen::MatrixXd y = xc * q;          // n x l
    const Eigen::MatrixXd b = y.adjoint() * y / denom;  // q^T cov q
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(b);
    if (es.info() != Eigen::Success)
      throw NumericError("pca_train: eigendecomposition failed");
    m.projection.resize(out_dim, d);
    m.explained_variance.resize(out_dim);
    for (Eigen::Index i = 0; i < out_dim; ++i) {
      m.projection.row(i) = (q * es.eigenvectors().col(l - 1 - i)).transpose();
      m.explained_variance[i] = std::max(0.0, es.eigenvalues()[l - 1 - i]);
    }
  }
  fix_signs(m.projection);
  return m;
}

Eigen::VectorXd pca_apply(const PcaModel& m,
                          const Eigen::Ref<const Eigen::VectorXd>& x) {
  if (x.size() != m.input_dim())
    throw std::invalid_argument("pca_apply: input dim " +
                                std::to_string(x.size()) + " does not match " +
                                std::to_string(m.input_dim()));
  return m.projection * (x - m.mean);
}

GlobalVector standard_pipeline(const GlobalVector& in,
                               const PipelineOptions& opt) {
  if (!(opt.beta > 0.0) || opt.beta > 1.0)
    throw std::invalid_argument("standard_pipeline: beta must lie in (0, 1]");
  GlobalVector out;
  out.kind = opt.pca ? SignatureKind::pca_reduced : in.kind;

  Fnv1a h;
  h.update_value(in.provenance);
  h.update_value(opt.beta);
  h.update_value(static_cast<std::uint8_t>(opt.pca_first));
  h.update_value(static_cast<std::uint32_t>(opt.pca ? opt.pca->output_dim() : 0));
  out.provenance = h.digest();

  if (in.values.size() == 0)
    throw std::invalid_argument("standard_pipeline: empty signature");
  if (in.values.isZero(0.0)) {
    warn("standard_pipeline: zero signature passes through");
    out.values = Eigen::VectorXd::Zero(opt.pca ? opt.pca->output_dim()
                                               : in.values.size());
    return out;
  }

  Eigen::VectorXd v = in.values;
  if (opt.pca_first && opt.pca) {
    v = l2_normalize(pca_apply(*opt.pca, v));
    v = l2_normalize(power_law(v, opt.beta));
  } else {
    v = l2_normalize(power_law(v, opt.beta));
    if (opt.pca) v = l2_normalize(pca_apply(*opt.pca, v));
  }
  out.values = std::move(v);
  return out;
}

}  // namespace binagg
