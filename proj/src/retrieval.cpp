#include "binagg/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "binagg/common.hpp"

namespace binagg {

RankedList rank_items(std::vector<RankedItem> items,
                      MetricDirection direction) {
  const bool asc = direction == MetricDirection::ascending;
  std::sort(items.begin(), items.end(),
            [asc](const RankedItem& a, const RankedItem& b) {
              if (a.score != b.score)
                return asc ? a.score < b.score : a.score > b.score;
              return a.id < b.id;
            });
  return RankedList{direction, std::move(items)};
}

Eigen::VectorXd tfidf_weights(const Eigen::MatrixXd& corpus) {
  const Eigen::Index n = corpus.rows(), k = corpus.cols();
  if (n == 0) throw std::invalid_argument("tfidf_weights: empty corpus");
  Eigen::VectorXd idf(k);
  for (Eigen::Index j = 0; j < k; ++j) {
    Eigen::Index df = 0;
    for (Eigen::Index i = 0; i < n; ++i)
      if (corpus(i, j) > 0.0) ++df;
    idf[j] = df == 0 ? 0.0
                     : std::log(static_cast<double>(n) /
                                static_cast<double>(df));
  }
  return idf;
}

double bow_similarity(const Eigen::Ref<const Eigen::VectorXd>& q,
                      const Eigen::Ref<const Eigen::VectorXd>& d,
                      const Eigen::Ref<const Eigen::VectorXd>& idf) {
  if (q.size() != d.size() || q.size() != idf.size())
    throw std::invalid_argument("bow_similarity: dimension mismatch");
  const Eigen::VectorXd wq = q.cwiseProduct(idf);
  const Eigen::VectorXd wd = d.cwiseProduct(idf);
  const double nq = wq.norm(), nd = wd.norm();
  if (nq == 0.0 || nd == 0.0) return 0.0;
  return wq.dot(wd) / (nq * nd);
}

double fused_distance(const Eigen::Ref<const Eigen::VectorXd>& c1,
                      const Eigen::Ref<const Eigen::VectorXd>& f1,
                      const Eigen::Ref<const Eigen::VectorXd>& c2,
                      const Eigen::Ref<const Eigen::VectorXd>& f2,
                      double alpha) {
  if (alpha < 0.0 || alpha > 1.0)
    throw std::invalid_argument("fused_distance: alpha must lie in [0, 1]");
  if (c1.size() != c2.size() || f1.size() != f2.size())
    throw std::invalid_argument("fused_distance: dimension mismatch");
  constexpr double tol = 1e-6;
  for (const auto* v : {&c1, &f1, &c2, &f2}) {
    if (std::abs(v->norm() - 1.0) > tol)
      throw NumericError(
          "fused_distance: inputs must be L2-normalized within 1e-6; "
          "re-normalize them or rescale distances (e.g. --rescale max)");
  }
  return alpha * (c1 - c2).norm() + (1.0 - alpha) * (f1 - f2).norm();
}

double direct_match_similarity(const PackedDescriptorSet& query,
                               const PackedDescriptorSet& db, double ratio) {
  if (query.dim_bits() != db.dim_bits())
    throw std::invalid_argument("direct_match_similarity: dim_bits mismatch");
  if (!(ratio > 0.0) || ratio > 1.0)
    throw std::invalid_argument(
        "direct_match_similarity: ratio must lie in (0, 1]");
  if (query.count() == 0) return 0.0;
  if (db.count() < 2) return 0.0;  // ratio test needs two neighbors

  const std::size_t w = query.words_per_descriptor();
  const std::size_t nq = query.count();
  const std::size_t nchunks = (nq + kDefaultChunk - 1) / kDefaultChunk;
  std::vector<std::size_t> matches(nchunks, 0);
  parallel_chunks(nq, kDefaultChunk, [&](std::size_t ci, std::size_t b,
                                         std::size_t e) {
    std::size_t local = 0;
    for (std::size_t qi = b; qi < e; ++qi) {
      const std::uint64_t* qrow = query.descriptor(qi).data();
      std::size_t d1 = SIZE_MAX, d2 = SIZE_MAX;
      for (std::size_t di = 0; di < db.count(); ++di) {
        const std::size_t h =
            hamming_words(qrow, db.descriptor(di).data(), w);
        if (h < d1) {
          d2 = d1;
          d1 = h;
        } else if (h < d2) {
          d2 = h;
        }
      }
      // d1 = d2 = 0 (duplicates) counts as a match; otherwise Lowe's test.
      if (d2 == 0 ? d1 == 0
                  : static_cast<double>(d1) / static_cast<double>(d2) <= ratio)
        ++local;
    }
    matches[ci] = local;
  });
  std::size_t total = 0;
  for (std::size_t m : matches) total += m;
  return static_cast<double>(total) / static_cast<double>(nq);
}

double average_precision(const RankedList& ranked,
                         const QueryGroundTruth& gt) {
  if (gt.positives.empty())
    throw std::invalid_argument("average_precision: query '" + gt.query_id +
                                "' has no positives");
  std::size_t rank = 0, hits = 0;
  double sum = 0.0;
  for (const RankedItem& item : ranked.items) {
    if (gt.junk.count(item.id)) continue;
    if (gt.exclude_query && item.id == gt.query_id) continue;
    ++rank;
    if (gt.positives.count(item.id)) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(rank);
    }
  }
  return sum / static_cast<double>(gt.positives.size());
}

double mean_average_precision(const RetrievalRun& run,
                              const GroundTruth& gt) {
  if (gt.queries.empty())
    throw std::invalid_argument("mean_average_precision: empty ground truth");
  std::unordered_map<std::string, const RankedList*> by_id;
  for (const auto& e : run.entries) {
    if (!by_id.emplace(e.query_id, &e.ranked).second)
      throw std::invalid_argument(
          "mean_average_precision: duplicate ranked list for query '" +
          e.query_id + "'");
  }
  double sum = 0.0;
  for (const auto& q : gt.queries) {
    const auto it = by_id.find(q.query_id);
    if (it == by_id.end())
      throw std::invalid_argument(
          "mean_average_precision: no ranked list for query '" + q.query_id +
          "'");
    sum += average_precision(*it->second, q);
  }
  return sum / static_cast<double>(gt.queries.size());
}

}  // namespace binagg
