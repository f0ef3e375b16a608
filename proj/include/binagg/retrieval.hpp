#pragma once

// Retrieval and evaluation: tf-idf BoW similarity, late fusion of two
// distance spaces, direct descriptor matching with a ratio test, a
// deterministic ranker, and average precision over ground truth with junk
// removal.

#include <set>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "binagg/descriptors.hpp"

namespace binagg {

// ---------------------------------------------------------- ground truth ----

struct QueryGroundTruth {
  std::string query_id;
  std::set<std::string> positives;  // relevant images
  std::set<std::string> junk;       // neither right nor wrong: dropped
  bool exclude_query = false;       // drop the query itself from its ranking
};

struct GroundTruth {
  std::vector<QueryGroundTruth> queries;
};

// ---------------------------------------------------------------- ranking ----

struct RankedItem {
  std::string id;
  double score;
};

enum class MetricDirection { ascending, descending };

struct RankedList {
  MetricDirection direction = MetricDirection::ascending;
  std::vector<RankedItem> items;
};

/** Sorts items by score in the metric direction; exact score ties break by
 *  lexicographic id, so a permuted input yields the identical ranking. */
RankedList rank_items(std::vector<RankedItem> items, MetricDirection direction);

/** Per-query ranked lists, aligned with a GroundTruth by query_id. */
struct RetrievalRun {
  struct Entry {
    std::string query_id;
    RankedList ranked;
  };
  std::vector<Entry> entries;
};

// ------------------------------------------------------------ similarity ----

/** idf_k = ln(N / n_k) over corpus histogram rows (N x K); bins that occur
 *  nowhere get weight 0. */
Eigen::VectorXd tfidf_weights(const Eigen::MatrixXd& corpus);

/** Cosine similarity of idf-weighted raw-count histograms; 0 when either
 *  weighted vector vanishes. */
double bow_similarity(const Eigen::Ref<const Eigen::VectorXd>& q,
                      const Eigen::Ref<const Eigen::VectorXd>& d,
                      const Eigen::Ref<const Eigen::VectorXd>& idf);

/** alpha ||c1 - c2|| + (1 - alpha) ||f1 - f2||. All four inputs must be
 *  L2-normalized within 1e-6 — an unnormalized input throws NumericError
 *  with a hint to rescale — so both terms live on comparable scales. */
double fused_distance(const Eigen::Ref<const Eigen::VectorXd>& c1,
                      const Eigen::Ref<const Eigen::VectorXd>& f1,
                      const Eigen::Ref<const Eigen::VectorXd>& c2,
                      const Eigen::Ref<const Eigen::VectorXd>& f2,
                      double alpha);

/** Fraction of query descriptors whose two nearest database descriptors pass
 *  the ratio test d1/d2 <= ratio (d1 = d2 = 0 counts as a match). A database
 *  image with fewer than two descriptors yields 0; so does an empty query. */
double direct_match_similarity(const PackedDescriptorSet& query,
                               const PackedDescriptorSet& db,
                               double ratio = 0.8);

// ------------------------------------------------------------- evaluation ----

/** Average precision of one ranked list: junk ids are removed (and the query
 *  itself when exclude_query), then precision is accumulated at each
 *  relevant rank and divided by the number of positives. */
double average_precision(const RankedList& ranked, const QueryGroundTruth& gt);

/** Unweighted mean of per-query APs; every ground-truth query must have a
 *  ranked list in the run. */
double mean_average_precision(const RetrievalRun& run, const GroundTruth& gt);

}  // namespace binagg
