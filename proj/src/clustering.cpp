#include "binagg/clustering.hpp"

#include <algorithm>
#include <numeric>

#include "binagg/common.hpp"

namespace binagg {
namespace {

// ---- seeding -----------------------------------------------------------

// k-means++: first centroid uniform, then proportional to squared distance
// from the nearest centroid chosen so far.
Eigen::MatrixXd seed_kmeanspp(const Eigen::MatrixXd& X, int k, Rng& rng) {
  const Eigen::Index n = X.rows();
  Eigen::MatrixXd C(k, X.cols());
  C.row(0) = X.row(static_cast<Eigen::Index>(rng.next_index(n)));
  Eigen::VectorXd d2 = (X.rowwise() - C.row(0)).rowwise().squaredNorm();
  for (int j = 1; j < k; ++j) {
    const double total = d2.sum();
    Eigen::Index pick;
    if (total > 0.0) {
      const double r = rng.next_double() * total;
      double acc = 0.0;
      pick = n - 1;
      for (Eigen::Index i = 0; i < n; ++i) {
        acc += d2[i];
        if (acc > r) {
          pick = i;
          break;
        }
      }
    } else {
      pick = static_cast<Eigen::Index>(rng.next_index(n));
    }
    C.row(j) = X.row(pick);
    d2 = d2.cwiseMin((X.rowwise() - C.row(j)).rowwise().squaredNorm());
  }
  return C;
}

// k distinct sample indices, uniform without replacement (partial
// Fisher-Yates so only the first k slots are materialized).
std::vector<std::size_t> seed_distinct(std::size_t n, int k, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (int i = 0; i < k; ++i)
    std::swap(idx[i], idx[i + rng.next_index(n - i)]);
  idx.resize(k);
  return idx;
}

// Farthest-point repair: every empty cluster (ascending index) grabs the
// point farthest from its current centroid, each point at most once.
// `handle(cluster, point)` installs the point as the new centroid.
void repair_empty(const std::vector<std::size_t>& counts,
                  const std::vector<double>& mind,
                  const std::function<void(int, std::size_t)>& handle) {
  std::vector<char> claimed(mind.size(), 0);
  for (int j = 0; j < static_cast<int>(counts.size()); ++j) {
    if (counts[j] != 0) continue;
    std::size_t pick = mind.size();
    double best = -1.0;
    for (std::size_t i = 0; i < mind.size(); ++i) {
      if (!claimed[i] && mind[i] > best) {
        best = mind[i];
        pick = i;
      }
    }
    if (pick == mind.size()) break;  // fewer points than empty clusters
    claimed[pick] = 1;
    handle(j, pick);
  }
}

// Nearest binary centroid by Hamming distance, ties to the lowest index.
Eigen::Index nearest_binary(const PackedDescriptorSet& centroids,
                            std::span<const std::uint64_t> row,
                            std::size_t* dist_out) {
  const std::size_t w = centroids.words_per_descriptor();
  Eigen::Index best = 0;
  std::size_t bestd = hamming_words(centroids.descriptor(0).data(), row.data(), w);
  for (std::size_t j = 1; j < centroids.count(); ++j) {
    const std::size_t dj =
        hamming_words(centroids.descriptor(j).data(), row.data(), w);
    if (dj < bestd) {
      bestd = dj;
      best = static_cast<Eigen::Index>(j);
    }
  }
  if (dist_out) *dist_out = bestd;
  return best;
}

void validate_fit_args(std::size_t n, int k, int max_iters, const char* name) {
  if (k <= 0) throw std::invalid_argument(std::string(name) + ": k must be > 0");
  if (max_iters < 1)
    throw std::invalid_argument(std::string(name) + ": max_iters must be >= 1");
  if (n < static_cast<std::size_t>(k))
    throw std::invalid_argument(std::string(name) +
                                ": sample smaller than k (" +
                                std::to_string(n) + " < " + std::to_string(k) +
                                ")");
}

}  // namespace

// ---- kmeans --------------------------------------------------------------

ClusterResult kmeans_fit(const Eigen::MatrixXd& sample, int k, int max_iters,
                         std::uint64_t seed) {
  const std::size_t n = static_cast<std::size_t>(sample.rows());
  validate_fit_args(n, k, max_iters, "kmeans_fit");

  Rng rng(seed);
  Eigen::MatrixXd C = seed_kmeanspp(sample, k, rng);
  std::vector<Eigen::Index> cur(n, -1), prev;
  std::vector<double> mind(n, 0.0);

  ClusterResult res;
  for (int iter = 0; iter < max_iters; ++iter) {
    prev = cur;
    const Eigen::VectorXd cn = C.rowwise().squaredNorm();
    // Assignment: disjoint per-point writes, safe and deterministic under
    // any worker count.
    parallel_chunks(n, kDefaultChunk, [&](std::size_t, std::size_t b,
                                          std::size_t e) {
      for (std::size_t i = b; i < e; ++i) {
        const auto row = sample.row(static_cast<Eigen::Index>(i));
        const Eigen::VectorXd dots = C * row.transpose();
        Eigen::Index best = 0;
        double bestv = cn[0] - 2.0 * dots[0];
        for (int j = 1; j < k; ++j) {
          const double v = cn[j] - 2.0 * dots[j];
          if (v < bestv) {
            bestv = v;
            best = j;
          }
        }
        cur[i] = best;
        mind[i] = std::max(0.0, row.squaredNorm() + bestv);
      }
    });

    double sse = 0.0;  // serial sum in point order: reproducible
    for (std::size_t i = 0; i < n; ++i) sse += mind[i];
    res.objective_trace.push_back(sse);
    res.iterations = iter + 1;
    if (cur == prev) break;

    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, sample.cols());
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      sums.row(cur[i]) += sample.row(static_cast<Eigen::Index>(i));
      ++counts[cur[i]];
    }
    for (int j = 0; j < k; ++j)
      if (counts[j] > 0) C.row(j) = sums.row(j) / static_cast<double>(counts[j]);
    repair_empty(counts, mind, [&](int j, std::size_t i) {
      C.row(j) = sample.row(static_cast<Eigen::Index>(i));
    });
  }

  res.vocabulary.method = LearningMethod::kmeans;
  res.vocabulary.real_centroids = std::move(C);
  return res;
}

// ---- kmajority -------------------------------------------------------------

ClusterResult kmajority_fit(const PackedDescriptorSet& sample, int k,
                            int max_iters, std::uint64_t seed) {
  const std::size_t n = sample.count();
  validate_fit_args(n, k, max_iters, "kmajority_fit");
  const int D = sample.dim_bits();
  const std::size_t W = sample.words_per_descriptor();

  Rng rng(seed);
  PackedDescriptorSet C(D);
  for (std::size_t idx : seed_distinct(n, k, rng))
    C.append_words(sample.descriptor(idx));

  std::vector<Eigen::Index> cur(n, -1), prev;
  std::vector<double> mind(n, 0.0);

  ClusterResult res;
  for (int iter = 0; iter < max_iters; ++iter) {
    prev = cur;
    parallel_chunks(n, kDefaultChunk, [&](std::size_t, std::size_t b,
                                          std::size_t e) {
      for (std::size_t i = b; i < e; ++i) {
        std::size_t d;
        cur[i] = nearest_binary(C, sample.descriptor(i), &d);
        mind[i] = static_cast<double>(d);
      }
    });

    double cost = 0.0;
    for (std::size_t i = 0; i < n; ++i) cost += mind[i];
    res.objective_trace.push_back(cost);
    res.iterations = iter + 1;
    if (cur == prev) break;

    // Per-bit majority vote. A bit is set iff strictly more than half the
    // members have it, so an exact tie yields 0.
    std::vector<std::uint64_t> votes(static_cast<std::size_t>(k) * D, 0);
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto row = sample.descriptor(i);
      const std::size_t base = static_cast<std::size_t>(cur[i]) * D;
      ++counts[cur[i]];
      for (std::size_t wi = 0; wi < W; ++wi) {
        std::uint64_t w = row[wi];
        while (w) {
          votes[base + wi * kWordBits + std::countr_zero(w)]++;
          w &= w - 1;
        }
      }
    }
    PackedDescriptorSet next(D);
    std::vector<std::uint8_t> bits(D);
    for (int j = 0; j < k; ++j) {
      for (int d = 0; d < D; ++d)
        bits[d] = counts[j] > 0 &&
                  2 * votes[static_cast<std::size_t>(j) * D + d] > counts[j];
      if (counts[j] > 0)
        next.append_bits(bits);
      else
        next.append_words(C.descriptor(j));  // placeholder until repair
    }
    C = std::move(next);
    repair_empty(counts, mind, [&](int j, std::size_t i) {
      PackedDescriptorSet patched(D);
      for (int jj = 0; jj < k; ++jj)
        patched.append_words(jj == j ? sample.descriptor(i) : C.descriptor(jj));
      C = std::move(patched);
    });
  }

  res.vocabulary.method = LearningMethod::kmajority;
  res.vocabulary.binary_centroids = std::move(C);
  return res;
}

// ---- kmedoids ------------------------------------------------------------

ClusterResult kmedoids_fit(const PackedDescriptorSet& sample, int k,
                           int max_iters, std::uint64_t seed) {
  const std::size_t n = sample.count();
  validate_fit_args(n, k, max_iters, "kmedoids_fit");
  const int D = sample.dim_bits();
  const std::size_t W = sample.words_per_descriptor();

  Rng rng(seed);
  std::vector<std::size_t> medoid = seed_distinct(n, k, rng);

  auto build_centroids = [&] {
    PackedDescriptorSet C(D);
    for (std::size_t m : medoid) C.append_words(sample.descriptor(m));
    return C;
  };
  PackedDescriptorSet C = build_centroids();

  std::vector<Eigen::Index> cur(n, -1), prev;
  std::vector<double> mind(n, 0.0);

  ClusterResult res;
  for (int iter = 0; iter < max_iters; ++iter) {
    prev = cur;
    parallel_chunks(n, kDefaultChunk, [&](std::size_t, std::size_t b,
                                          std::size_t e) {
      for (std::size_t i = b; i < e; ++i) {
        std::size_t d;
        cur[i] = nearest_binary(C, sample.descriptor(i), &d);
        mind[i] = static_cast<double>(d);
      }
    });

    double cost = 0.0;
    for (std::size_t i = 0; i < n; ++i) cost += mind[i];
    res.objective_trace.push_back(cost);
    res.iterations = iter + 1;
    if (cur == prev) break;

    std::vector<std::vector<std::size_t>> members(k);
    for (std::size_t i = 0; i < n; ++i) members[cur[i]].push_back(i);

    // Medoid update: the member (or sitting medoid, which keeps the cost
    // monotone even if assignment ties pulled it into another cluster)
    // minimizing the total Hamming distance to the cluster. Candidates are
    // scanned in ascending sample index so ties resolve deterministically.
    std::vector<std::size_t> next_medoid = medoid;
    std::vector<std::size_t> counts(k, 0);
    parallel_chunks(static_cast<std::size_t>(k), 1,
                    [&](std::size_t, std::size_t b, std::size_t e) {
      for (std::size_t j = b; j < e; ++j) {
        counts[j] = members[j].size();
        if (members[j].empty()) continue;
        std::vector<std::size_t> cand = members[j];
        if (!std::binary_search(cand.begin(), cand.end(), medoid[j])) {
          cand.push_back(medoid[j]);
          std::sort(cand.begin(), cand.end());
        }
        std::size_t best = cand.front();
        std::uint64_t bestc = UINT64_MAX;
        for (std::size_t c : cand) {
          std::uint64_t total = 0;
          for (std::size_t m : members[j])
            total += hamming_words(sample.descriptor(c).data(),
                                   sample.descriptor(m).data(), W);
          if (total < bestc) {
            bestc = total;
            best = c;
          }
        }
        next_medoid[j] = best;
      }
    });
    medoid = std::move(next_medoid);
    repair_empty(counts, mind, [&](int j, std::size_t i) { medoid[j] = i; });
    C = build_centroids();
  }

  res.vocabulary.method = LearningMethod::kmedoids;
  res.vocabulary.binary_centroids = std::move(C);
  return res;
}

// ---- assignment ------------------------------------------------------------

Eigen::Index assign(const Vocabulary& v, const PackedDescriptorSet& s,
                    std::size_t t) {
  if (v.k() == 0) throw std::invalid_argument("assign: empty vocabulary");
  if (v.binary()) {
    if (v.binary_centroids.dim_bits() != s.dim_bits())
      throw std::invalid_argument("assign: dim_bits mismatch");
    return nearest_binary(v.binary_centroids, s.descriptor(t), nullptr);
  }
  return assign_real(v, unpack_to_real(s, t));
}

Eigen::Index assign_real(const Vocabulary& v,
                         const Eigen::Ref<const Eigen::VectorXd>& x) {
  if (v.binary())
    throw std::invalid_argument("assign_real: vocabulary is binary");
  if (v.real_centroids.cols() != x.size())
    throw std::invalid_argument("assign_real: dimension mismatch");
  Eigen::Index best = 0;
  double bestv = (v.real_centroids.row(0).transpose() - x).squaredNorm();
  for (Eigen::Index j = 1; j < v.real_centroids.rows(); ++j) {
    const double d = (v.real_centroids.row(j).transpose() - x).squaredNorm();
    if (d < bestv) {
      bestv = d;
      best = j;
    }
  }
  return best;
}

}  // namespace binagg
