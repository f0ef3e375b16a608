#include "binagg/mixtures.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <numbers>
#include <thread>

#include "binagg/clustering.hpp"

namespace binagg {
namespace {

constexpr double kTinyMass = 1e-12;

// ---- ordered chunk reduction -----------------------------------------------

// Runs body(slot, b, e) over fixed-size chunks of [0, n), at most
// thread_budget() chunks in flight, and calls merge(slot) for every chunk in
// ascending chunk order. body must fully overwrite the slot. Because the
// chunk grid and the merge order depend only on n and chunk_size, the reduced
// result is bit-identical for every worker count.
template <typename Slot, typename Body, typename Merge>
void reduce_chunks_ordered(std::size_t n, std::size_t chunk_size,
                           std::vector<Slot>& slots, Body&& body,
                           Merge&& merge) {
  if (n == 0) return;
  const std::size_t nchunks = (n + chunk_size - 1) / chunk_size;
  const std::size_t workers = std::min(slots.size(), nchunks);
  auto chunk_bounds = [&](std::size_t ci) {
    return std::pair{ci * chunk_size, std::min(n, (ci + 1) * chunk_size)};
  };

  if (workers <= 1) {
    for (std::size_t ci = 0; ci < nchunks; ++ci) {
      const auto [b, e] = chunk_bounds(ci);
      body(slots[0], b, e);
      merge(slots[0]);
    }
    return;
  }

  for (std::size_t wave = 0; wave < nchunks; wave += workers) {
    const std::size_t m = std::min(workers, nchunks - wave);
    std::vector<std::thread> pool;
    pool.reserve(m - 1);
    std::exception_ptr error;
    std::mutex error_mutex;
    auto run = [&](std::size_t p) {
      try {
        const auto [b, e] = chunk_bounds(wave + p);
        body(slots[p], b, e);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    };
    for (std::size_t p = 1; p < m; ++p) pool.emplace_back(run, p);
    run(0);
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
    for (std::size_t p = 0; p < m; ++p) merge(slots[p]);
  }
}

std::size_t reduce_workers(std::size_t n, std::size_t chunk_size) {
  const std::size_t nchunks = (n + chunk_size - 1) / chunk_size;
  return std::max<std::size_t>(1, std::min(thread_budget(), nchunks));
}

// ---- Bernoulli internals -----------------------------------------------------

// Per-model tables that turn a component log-probability into (constant +
// sum over set bits): log p_k(x) = base_k + sum_{d: x_d=1} delta_kd with
// base_k = sum_d log(1-mu_kd) and delta_kd = log mu_kd - log(1-mu_kd).
// delta is column-major, so accumulating delta.col(d) over set bits is a
// contiguous K-vector add.
struct BmmTables {
  Eigen::VectorXd logw_base;  // log w_k + base_k
  Eigen::MatrixXd delta;      // K x D
};

BmmTables make_tables(const Eigen::VectorXd& w, const Eigen::MatrixXd& mu) {
  BmmTables t;
  const Eigen::MatrixXd log_mu = mu.array().log();
  const Eigen::MatrixXd log_1m = (1.0 - mu.array()).log();
  t.delta = log_mu - log_1m;
  t.logw_base = w.array().log().matrix() + log_1m.rowwise().sum();
  return t;
}

// log(w_k p_k(x_t)) for all k at once.
inline void posterior_terms(const BmmTables& t,
                            std::span<const std::uint64_t> row,
                            Eigen::VectorXd& l) {
  l = t.logw_base;
  for (std::size_t wi = 0; wi < row.size(); ++wi) {
    std::uint64_t w = row[wi];
    while (w) {
      l += t.delta.col(static_cast<Eigen::Index>(wi * kWordBits +
                                                 std::countr_zero(w)));
      w &= w - 1;
    }
  }
}

inline double logsumexp(const Eigen::VectorXd& l) {
  const double m = l.maxCoeff();
  return m + std::log((l.array() - m).exp().sum());
}

struct BmmStatsSlot {
  Eigen::VectorXd s0;
  Eigen::MatrixXd s1;
  double ll = 0.0;
  Eigen::VectorXd l, g;  // scratch
};

// Chunk-reduced sufficient statistics given precomputed tables.
BmmSuffStats bmm_suffstats_impl(const BmmTables& tables, Eigen::Index k,
                                Eigen::Index d,
                                const PackedDescriptorSet& s) {
  BmmSuffStats out;
  out.s0 = Eigen::VectorXd::Zero(k);
  out.s1 = Eigen::MatrixXd::Zero(k, d);

  std::vector<BmmStatsSlot> slots(reduce_workers(s.count(), kDefaultChunk));
  reduce_chunks_ordered(
      s.count(), kDefaultChunk, slots,
      [&](BmmStatsSlot& slot, std::size_t b, std::size_t e) {
        slot.s0 = Eigen::VectorXd::Zero(k);
        slot.s1 = Eigen::MatrixXd::Zero(k, d);
        slot.ll = 0.0;
        for (std::size_t t = b; t < e; ++t) {
          const auto row = s.descriptor(t);
          posterior_terms(tables, row, slot.l);
          const double lse = logsumexp(slot.l);
          slot.g = (slot.l.array() - lse).exp();
          slot.s0 += slot.g;
          for (std::size_t wi = 0; wi < row.size(); ++wi) {
            std::uint64_t w = row[wi];
            while (w) {
              slot.s1.col(static_cast<Eigen::Index>(
                  wi * kWordBits + std::countr_zero(w))) += slot.g;
              w &= w - 1;
            }
          }
          slot.ll += lse;
        }
      },
      [&](BmmStatsSlot& slot) {
        out.s0 += slot.s0;
        out.s1 += slot.s1;
        out.loglik += slot.ll;
      });
  return out;
}

void check_same_dim(const BernoulliMixture& m, const PackedDescriptorSet& s) {
  if (m.dim() != s.dim_bits())
    throw std::invalid_argument("bernoulli mixture: descriptor dim " +
                                std::to_string(s.dim_bits()) +
                                " does not match model dim " +
                                std::to_string(m.dim()));
}

}  // namespace

// ---- BernoulliMixture ------------------------------------------------------

BernoulliMixture::BernoulliMixture(Eigen::VectorXd weights,
                                   Eigen::MatrixXd means)
    : weights_(std::move(weights)), means_(std::move(means)) {
  if (weights_.size() == 0 || means_.rows() != weights_.size() ||
      means_.cols() == 0)
    throw std::invalid_argument("BernoulliMixture: inconsistent shapes");
  if ((weights_.array() <= 0.0).any())
    throw std::invalid_argument("BernoulliMixture: weights must be positive");
  if (std::abs(weights_.sum() - 1.0) > 1e-6)
    throw std::invalid_argument("BernoulliMixture: weights must sum to 1");
  means_ = means_.array().max(kMeanFloor).min(1.0 - kMeanFloor).matrix();
}

double bmm_component_logprob(const BernoulliMixture& m, Eigen::Index k,
                             const PackedDescriptorSet& s, std::size_t t) {
  check_same_dim(m, s);
  if (k < 0 || k >= m.k())
    throw std::invalid_argument("bmm_component_logprob: component out of range");
  double acc = 0.0;
  for (int d = 0; d < s.dim_bits(); ++d)
    acc += s.bit(t, d) ? std::log(m.means()(k, d))
                       : std::log(1.0 - m.means()(k, d));
  return acc;
}

Eigen::VectorXd bmm_occupancy(const BernoulliMixture& m,
                              const PackedDescriptorSet& s, std::size_t t) {
  check_same_dim(m, s);
  return BmmEvaluator(m).occupancy(s.descriptor(t));
}

BmmEvaluator::BmmEvaluator(const BernoulliMixture& m) {
  BmmTables t = make_tables(m.weights(), m.means());
  logw_base_ = std::move(t.logw_base);
  delta_ = std::move(t.delta);
}

Eigen::VectorXd BmmEvaluator::occupancy(std::span<const std::uint64_t> row,
                                        double* log_evidence) const {
  Eigen::VectorXd l = logw_base_;
  for (std::size_t wi = 0; wi < row.size(); ++wi) {
    std::uint64_t w = row[wi];
    while (w) {
      l += delta_.col(static_cast<Eigen::Index>(wi * kWordBits +
                                                std::countr_zero(w)));
      w &= w - 1;
    }
  }
  const double lse = logsumexp(l);
  if (log_evidence) *log_evidence = lse;
  return (l.array() - lse).exp();
}

double bmm_loglik(const BernoulliMixture& m, const PackedDescriptorSet& s) {
  check_same_dim(m, s);
  const BmmTables tables = make_tables(m.weights(), m.means());
  double total = 0.0;
  struct Slot {
    double ll = 0.0;
    Eigen::VectorXd l;
  };
  std::vector<Slot> slots(reduce_workers(s.count(), kDefaultChunk));
  reduce_chunks_ordered(
      s.count(), kDefaultChunk, slots,
      [&](Slot& slot, std::size_t b, std::size_t e) {
        slot.ll = 0.0;
        for (std::size_t t = b; t < e; ++t) {
          posterior_terms(tables, s.descriptor(t), slot.l);
          slot.ll += logsumexp(slot.l);
        }
      },
      [&](Slot& slot) { total += slot.ll; });
  return total;
}

BmmSuffStats bmm_suffstats(const BernoulliMixture& m,
                           const PackedDescriptorSet& s) {
  check_same_dim(m, s);
  return bmm_suffstats_impl(make_tables(m.weights(), m.means()), m.k(),
                            m.dim(), s);
}

Eigen::VectorXd bmm_score_alpha(const BernoulliMixture& m,
                                const PackedDescriptorSet& s) {
  const BmmSuffStats st = bmm_suffstats(m, s);
  return st.s0 - static_cast<double>(s.count()) * m.weights();
}

Eigen::MatrixXd bmm_score_mu(const BernoulliMixture& m,
                             const PackedDescriptorSet& s) {
  const BmmSuffStats st = bmm_suffstats(m, s);
  const auto& mu = m.means();
  const Eigen::ArrayXXd denom = mu.array() * (1.0 - mu.array());
  return ((st.s1 - st.s0.asDiagonal() * mu).array() / denom).matrix();
}

PackedDescriptorSet sample_bmm(const BernoulliMixture& m, std::size_t count,
                               Rng& rng, std::string image_id) {
  PackedDescriptorSet out(static_cast<int>(m.dim()), std::move(image_id));
  out.reserve(count);
  Eigen::VectorXd cumw(m.k());
  double acc = 0.0;
  for (Eigen::Index j = 0; j < m.k(); ++j) cumw[j] = (acc += m.weights()[j]);
  std::vector<std::uint8_t> bits(m.dim());
  for (std::size_t i = 0; i < count; ++i) {
    const double r = rng.next_double() * cumw[m.k() - 1];
    Eigen::Index j = 0;
    while (j + 1 < m.k() && cumw[j] <= r) ++j;
    for (Eigen::Index d = 0; d < m.dim(); ++d)
      bits[d] = rng.next_bernoulli(m.means()(j, d)) ? 1 : 0;
    out.append_bits(bits);
  }
  return out;
}

// ---- GaussianMixture -------------------------------------------------------

GaussianMixture::GaussianMixture(Eigen::VectorXd weights, Eigen::MatrixXd means,
                                 Eigen::MatrixXd variances)
    : weights_(std::move(weights)),
      means_(std::move(means)),
      variances_(std::move(variances)) {
  if (weights_.size() == 0 || means_.rows() != weights_.size() ||
      means_.cols() == 0 || variances_.rows() != means_.rows() ||
      variances_.cols() != means_.cols())
    throw std::invalid_argument("GaussianMixture: inconsistent shapes");
  if ((weights_.array() <= 0.0).any())
    throw std::invalid_argument("GaussianMixture: weights must be positive");
  if (std::abs(weights_.sum() - 1.0) > 1e-6)
    throw std::invalid_argument("GaussianMixture: weights must sum to 1");
  variances_ = variances_.array().max(kVarianceFloor).matrix();
}

double gmm_component_logprob(const GaussianMixture& m, Eigen::Index k,
                             const Eigen::Ref<const Eigen::VectorXd>& x) {
  if (x.size() != m.dim())
    throw std::invalid_argument("gmm_component_logprob: dimension mismatch");
  if (k < 0 || k >= m.k())
    throw std::invalid_argument("gmm_component_logprob: component out of range");
  const auto mu = m.means().row(k).transpose().array();
  const auto var = m.variances().row(k).transpose().array();
  return -0.5 * ((2.0 * std::numbers::pi * var).log() +
                 (x.array() - mu).square() / var)
                    .sum();
}

Eigen::VectorXd gmm_occupancy(const GaussianMixture& m,
                              const Eigen::Ref<const Eigen::VectorXd>& x) {
  return GmmEvaluator(m).occupancy(x);
}

GmmEvaluator::GmmEvaluator(const GaussianMixture& m)
    : ck_((m.weights().array().log() -
           0.5 * (2.0 * std::numbers::pi * m.variances().array())
                     .log()
                     .rowwise()
                     .sum())
              .matrix()),
      mu_(m.means()),
      inv_var_(m.variances().cwiseInverse()) {}

Eigen::VectorXd GmmEvaluator::occupancy(
    const Eigen::Ref<const Eigen::VectorXd>& x, double* log_evidence) const {
  if (x.size() != mu_.cols())
    throw std::invalid_argument("GmmEvaluator: dimension mismatch");
  Eigen::VectorXd l(ck_.size());
  for (Eigen::Index k = 0; k < ck_.size(); ++k) {
    const Eigen::ArrayXd diff = x.transpose().array() - mu_.row(k).array();
    l[k] = ck_[k] - 0.5 * (diff.square() * inv_var_.row(k).transpose().array()).sum();
  }
  const double lse = logsumexp(l);
  if (log_evidence) *log_evidence = lse;
  return (l.array() - lse).exp();
}

namespace {

struct GmmStatsSlot {
  Eigen::VectorXd s0;
  Eigen::MatrixXd s1, s2;
  double ll = 0.0;
};

struct GmmSuffStats {
  Eigen::VectorXd s0;
  Eigen::MatrixXd s1, s2;
  double loglik = 0.0;
};

// E-step sufficient statistics over row chunks; GEMM-based within a chunk.
GmmSuffStats gmm_suffstats(const Eigen::VectorXd& w, const Eigen::MatrixXd& mu,
                           const Eigen::MatrixXd& var,
                           const Eigen::MatrixXd& X) {
  const Eigen::Index K = w.size(), D = mu.cols();
  const Eigen::MatrixXd inv_var = var.cwiseInverse();
  const Eigen::VectorXd ck =
      (w.array().log() -
       0.5 * (2.0 * std::numbers::pi * var.array()).log().rowwise().sum())
          .matrix();

  GmmSuffStats out;
  out.s0 = Eigen::VectorXd::Zero(K);
  out.s1 = Eigen::MatrixXd::Zero(K, D);
  out.s2 = Eigen::MatrixXd::Zero(K, D);

  const std::size_t n = static_cast<std::size_t>(X.rows());
  std::vector<GmmStatsSlot> slots(reduce_workers(n, kDefaultChunk));
  reduce_chunks_ordered(
      n, kDefaultChunk, slots,
      [&](GmmStatsSlot& slot, std::size_t b, std::size_t e) {
        const Eigen::Index rows = static_cast<Eigen::Index>(e - b);
        const auto Xc = X.middleRows(static_cast<Eigen::Index>(b), rows);
        const Eigen::MatrixXd Xc2 = Xc.array().square();
        Eigen::MatrixXd lp(rows, K);
        for (Eigen::Index k = 0; k < K; ++k) {
          const Eigen::MatrixXd diff = Xc.rowwise() - mu.row(k);
          lp.col(k) = (ck[k] -
                       0.5 * (diff.array().square().matrix() *
                              inv_var.row(k).transpose())
                                 .array())
                          .matrix();
        }
        Eigen::MatrixXd g(rows, K);
        slot.ll = 0.0;
        for (Eigen::Index r = 0; r < rows; ++r) {
          const double mx = lp.row(r).maxCoeff();
          const double lse =
              mx + std::log((lp.row(r).array() - mx).exp().sum());
          g.row(r) = (lp.row(r).array() - lse).exp();
          slot.ll += lse;
        }
        slot.s0 = g.colwise().sum().transpose();
        slot.s1 = g.transpose() * Xc;
        slot.s2 = g.transpose() * Xc2;
      },
      [&](GmmStatsSlot& slot) {
        out.s0 += slot.s0;
        out.s1 += slot.s1;
        out.s2 += slot.s2;
        out.loglik += slot.ll;
      });
  return out;
}

}  // namespace

double gmm_loglik(const GaussianMixture& m, const Eigen::MatrixXd& sample) {
  if (sample.cols() != m.dim())
    throw std::invalid_argument("gmm_loglik: dimension mismatch");
  return gmm_suffstats(m.weights(), m.means(), m.variances(), sample).loglik;
}

// ---- EM ---------------------------------------------------------------------

BmmFitResult bmm_fit_em(const PackedDescriptorSet& sample, int k,
                        std::uint64_t seed, const EmOptions& opt) {
  const std::size_t n = sample.count();
  if (k <= 0) throw std::invalid_argument("bmm_fit_em: k must be > 0");
  if (opt.max_iters < 1 || opt.eps <= 0.0)
    throw std::invalid_argument("bmm_fit_em: bad EM options");
  if (n < static_cast<std::size_t>(k))
    throw std::invalid_argument("bmm_fit_em: sample smaller than k (" +
                                std::to_string(n) + " < " + std::to_string(k) +
                                ")");
  const Eigen::Index D = sample.dim_bits();
  const double T = static_cast<double>(n);

  Rng rng(seed);
  Eigen::VectorXd w = Eigen::VectorXd::Constant(k, 1.0 / k);
  Eigen::MatrixXd mu(k, D);
  for (int j = 0; j < k; ++j)
    for (Eigen::Index d = 0; d < D; ++d)
      mu(j, d) = 0.25 + 0.5 * rng.next_double();

  BmmFitResult res{BernoulliMixture(w, mu), {}, 0, false, false};
  for (int iter = 1; iter <= opt.max_iters; ++iter) {
    const auto& model = res.model;
    const BmmSuffStats st = bmm_suffstats_impl(
        make_tables(model.weights(), model.means()), k, D, sample);
    res.loglik_trace.push_back(st.loglik);
    res.iterations = iter;

    Eigen::VectorXd w_new = (st.s0 / T).cwiseMax(BernoulliMixture::kWeightFloor);
    if ((st.s0.array() / T <= BernoulliMixture::kWeightFloor).any())
      res.degenerate = true;
    w_new /= w_new.sum();

    Eigen::MatrixXd mu_new = model.means();
    for (int j = 0; j < k; ++j) {
      if (st.s0[j] > kTinyMass)
        mu_new.row(j) = st.s1.row(j) / st.s0[j];
      else
        res.degenerate = true;
    }
    mu_new = mu_new.array()
                 .max(BernoulliMixture::kMeanFloor)
                 .min(1.0 - BernoulliMixture::kMeanFloor)
                 .matrix();

    const double change = (mu_new - model.means()).norm();
    res.model = BernoulliMixture(std::move(w_new), std::move(mu_new));
    if (change < opt.eps) {
      res.converged = true;
      break;
    }
  }
  return res;
}

GmmFitResult gmm_fit_em(const Eigen::MatrixXd& sample, int k,
                        std::uint64_t seed, const EmOptions& opt) {
  const std::size_t n = static_cast<std::size_t>(sample.rows());
  if (k <= 0) throw std::invalid_argument("gmm_fit_em: k must be > 0");
  if (opt.max_iters < 1 || opt.eps <= 0.0)
    throw std::invalid_argument("gmm_fit_em: bad EM options");
  if (n < static_cast<std::size_t>(k))
    throw std::invalid_argument("gmm_fit_em: sample smaller than k (" +
                                std::to_string(n) + " < " + std::to_string(k) +
                                ")");
  const Eigen::Index D = sample.cols();
  const double T = static_cast<double>(n);

  // Init from k-means: centroids as means, shared spherical variance from
  // the mean within-cluster scatter per dimension.
  const ClusterResult km = kmeans_fit(sample, k, kDefaultClusterIters, seed);
  const Eigen::MatrixXd& C = km.vocabulary.real_centroids;
  Eigen::VectorXd scatter = Eigen::VectorXd::Zero(k);
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(k);
  for (std::size_t i = 0; i < n; ++i) {
    const auto x = sample.row(static_cast<Eigen::Index>(i));
    Eigen::Index best = 0;
    double bestv = (C.row(0) - x).squaredNorm();
    for (int j = 1; j < k; ++j) {
      const double v = (C.row(j) - x).squaredNorm();
      if (v < bestv) {
        bestv = v;
        best = j;
      }
    }
    scatter[best] += bestv;
    counts[best] += 1.0;
  }
  double mean_scatter = 0.0;
  int nonempty = 0;
  for (int j = 0; j < k; ++j) {
    if (counts[j] > 0.0) {
      mean_scatter += scatter[j] / (counts[j] * static_cast<double>(D));
      ++nonempty;
    }
  }
  mean_scatter = nonempty > 0 ? mean_scatter / nonempty : 1.0;

  Eigen::VectorXd w = Eigen::VectorXd::Constant(k, 1.0 / k);
  Eigen::MatrixXd var = Eigen::MatrixXd::Constant(
      k, D, std::max(mean_scatter, GaussianMixture::kVarianceFloor));

  GmmFitResult res{GaussianMixture(w, C, var), {}, 0, false, false};
  for (int iter = 1; iter <= opt.max_iters; ++iter) {
    const auto& model = res.model;
    const GmmSuffStats st =
        gmm_suffstats(model.weights(), model.means(), model.variances(), sample);
    res.loglik_trace.push_back(st.loglik);
    res.iterations = iter;

    Eigen::VectorXd w_new = (st.s0 / T).cwiseMax(GaussianMixture::kWeightFloor);
    if ((st.s0.array() / T <= GaussianMixture::kWeightFloor).any())
      res.degenerate = true;
    w_new /= w_new.sum();

    Eigen::MatrixXd mu_new = model.means();
    Eigen::MatrixXd var_new = model.variances();
    for (int j = 0; j < k; ++j) {
      if (st.s0[j] > kTinyMass) {
        mu_new.row(j) = st.s1.row(j) / st.s0[j];
        var_new.row(j) =
            st.s2.row(j) / st.s0[j] - mu_new.row(j).cwiseAbs2();
      } else {
        res.degenerate = true;
      }
    }
    var_new = var_new.array().max(GaussianMixture::kVarianceFloor).matrix();

    const double change = (mu_new - model.means()).norm();
    res.model = GaussianMixture(std::move(w_new), std::move(mu_new),
                                std::move(var_new));
    if (change < opt.eps) {
      res.converged = true;
      break;
    }
  }
  return res;
}

}  // namespace binagg
