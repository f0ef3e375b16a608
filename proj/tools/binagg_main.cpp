// binagg: train visual vocabularies and mixture models over bit-packed
// binary descriptors, encode global image signatures (BoW, VLAD, Fisher
// vectors), post-process them, and evaluate retrieval quality.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <unistd.h>

#include <CLI11.hpp>

#include "binagg/clustering.hpp"
#include "binagg/common.hpp"
#include "binagg/descriptors.hpp"
#include "binagg/encoders.hpp"
#include "binagg/io.hpp"
#include "binagg/mixtures.hpp"
#include "binagg/postproc.hpp"
#include "binagg/retrieval.hpp"

namespace {

using namespace binagg;

[[noreturn]] void usage_error(const std::string& msg) {
  throw CLI::ValidationError(msg);
}

/** Whole-buffer atomic text write (temp file + rename), same policy as the
 *  binary writers. */
void write_text_atomic(const std::filesystem::path& path,
                       const std::string& text) {
  const std::filesystem::path tmp =
      path.string() + ".tmp" + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out)
      throw std::runtime_error("cannot open '" + tmp.string() +
                               "' for writing");
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    out.flush();
    if (!out) {
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      throw std::runtime_error("write failed for '" + path.string() + "'");
    }
  }
  std::filesystem::rename(tmp, path);
}

/** Index of every id in a global-vector set; ids must be unique. */
std::unordered_map<std::string, Eigen::Index> id_index(
    const io::GlobalVectorSet& s, const char* role) {
  std::unordered_map<std::string, Eigen::Index> m;
  m.reserve(s.ids.size());
  for (Eigen::Index i = 0; i < s.count(); ++i)
    if (!m.emplace(s.ids[static_cast<std::size_t>(i)], i).second)
      throw std::invalid_argument(std::string(role) + ": duplicate id '" +
                                  s.ids[static_cast<std::size_t>(i)] + "'");
  return m;
}

/** CNN rows arrive from external pipelines; re-normalize them defensively so
 *  the Euclidean/cosine equivalence they rely on actually holds. */
Eigen::MatrixXd rows_as_double(const io::GlobalVectorSet& s) {
  Eigen::MatrixXd out = s.rows.cast<double>();
  if (s.kind == SignatureKind::cnn)
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
      const double n = out.row(i).norm();
      if (n > 0.0) out.row(i) /= n;
    }
  return out;
}

// ------------------------------------------------------------------ train ----

struct TrainVocabArgs {
  std::string method, sample, output;
  int k = 0;
  int iters = kDefaultClusterIters;
  std::uint64_t seed = 0;
};

void run_train_vocab(const TrainVocabArgs& a) {
  const PackedDescriptorSet pooled = pool(io::read_dsc(a.sample));
  ClusterResult res;
  if (a.method == "kmeans")
    res = kmeans_fit(unpack_all(pooled), a.k, a.iters, a.seed);
  else if (a.method == "kmajority")
    res = kmajority_fit(pooled, a.k, a.iters, a.seed);
  else
    res = kmedoids_fit(pooled, a.k, a.iters, a.seed);
  io::write_voc(a.output, res.vocabulary);
  std::printf("trained %s vocabulary: k=%d dim=%d iterations=%d objective=%.10g\n",
              a.method.c_str(), static_cast<int>(res.vocabulary.k()),
              res.vocabulary.dim(), res.iterations,
              res.objective_trace.empty() ? 0.0 : res.objective_trace.back());
}

struct TrainMixtureArgs {
  std::string sample, output;
  int k = 0;
  int iters = 200;
  double eps = 0.05;
  std::uint64_t seed = 0;
};

void run_train_bmm(const TrainMixtureArgs& a) {
  const PackedDescriptorSet pooled = pool(io::read_dsc(a.sample));
  EmOptions opt;
  opt.eps = a.eps;
  opt.max_iters = a.iters;
  const BmmFitResult res = bmm_fit_em(pooled, a.k, a.seed, opt);
  if (res.degenerate)
    warn("EM left a component with near-zero posterior mass; "
         "its parameters kept their previous values");
  io::write_bmm(a.output, res.model);
  std::printf("trained bmm: k=%d dim=%d iterations=%d converged=%d loglik=%.10g\n",
              static_cast<int>(res.model.k()), static_cast<int>(res.model.dim()),
              res.iterations, res.converged ? 1 : 0,
              res.loglik_trace.empty() ? 0.0 : res.loglik_trace.back());
}

void run_train_gmm(const TrainMixtureArgs& a) {
  const PackedDescriptorSet pooled = pool(io::read_dsc(a.sample));
  EmOptions opt;
  opt.eps = a.eps;
  opt.max_iters = a.iters;
  const GmmFitResult res = gmm_fit_em(unpack_all(pooled), a.k, a.seed, opt);
  if (res.degenerate)
    warn("EM left a component with near-zero posterior mass; "
         "its parameters kept their previous values");
  io::write_gmm(a.output, res.model);
  std::printf("trained gmm: k=%d dim=%d iterations=%d converged=%d loglik=%.10g\n",
              static_cast<int>(res.model.k()), static_cast<int>(res.model.dim()),
              res.iterations, res.converged ? 1 : 0,
              res.loglik_trace.empty() ? 0.0 : res.loglik_trace.back());
}

// ----------------------------------------------------------------- encode ----

struct EncodeArgs {
  std::string method, model, input, output;
  bool include_weights = false;
  bool include_variances = false;
  bool stats_form = false;
};

void run_encode(const EncodeArgs& a) {
  const bool is_fv = a.method == "fv-bmm" || a.method == "fv-gmm";
  if (a.include_weights && !is_fv)
    usage_error("--include-weights applies to fv-bmm/fv-gmm only");
  if (a.include_variances && a.method != "fv-gmm")
    usage_error("--include-variances applies to fv-gmm only");
  if (a.stats_form && !is_fv)
    usage_error("--stats-form applies to fv-bmm/fv-gmm only");

  const io::FileFormat fmt = io::detect_format(a.model);
  const io::FileFormat want = a.method == "fv-bmm"   ? io::FileFormat::bmm
                              : a.method == "fv-gmm" ? io::FileFormat::gmm
                                                     : io::FileFormat::voc;
  // A recognizable file of the wrong type is a usage mistake; anything
  // unrecognizable falls through to the parser, which reports the bad magic.
  if (fmt != want && fmt != io::FileFormat::unknown)
    usage_error("--method " + a.method + " needs a " +
                std::string(io::file_format_name(want)) + " model, but '" +
                a.model + "' is " + io::file_format_name(fmt));

  // Load whichever model the method needs and fix the output geometry.
  Vocabulary voc;
  BernoulliMixture bmm(Eigen::VectorXd::Ones(1), Eigen::MatrixXd::Ones(1, 1));
  GaussianMixture gmm(Eigen::VectorXd::Ones(1), Eigen::MatrixXd::Zero(1, 1),
                      Eigen::MatrixXd::Ones(1, 1));
  SignatureKind kind;
  Eigen::Index out_dim;
  int desc_dim;
  if (a.method == "bow" || a.method == "vlad") {
    voc = io::read_voc(a.model);
    kind = a.method == "bow" ? SignatureKind::bow : SignatureKind::vlad;
    out_dim = a.method == "bow" ? voc.k() : voc.k() * voc.dim();
    desc_dim = voc.dim();
  } else if (a.method == "fv-bmm") {
    bmm = io::read_bmm(a.model);
    kind = SignatureKind::fv_bmm;
    out_dim = bmm.k() * bmm.dim() + (a.include_weights ? bmm.k() : 0);
    desc_dim = static_cast<int>(bmm.dim());
  } else {
    gmm = io::read_gmm(a.model);
    kind = SignatureKind::fv_gmm;
    out_dim = gmm.k() * gmm.dim() + (a.include_weights ? gmm.k() : 0) +
              (a.include_variances ? gmm.k() * gmm.dim() : 0);
    desc_dim = static_cast<int>(gmm.dim());
  }

  const std::vector<PackedDescriptorSet> images = io::read_dsc(a.input);
  for (const auto& img : images)
    if (img.dim_bits() != desc_dim)
      throw std::invalid_argument(
          "encode: descriptor dim " + std::to_string(img.dim_bits()) +
          " does not match model dim " + std::to_string(desc_dim));

  io::GlobalVectorSet out;
  out.kind = kind;
  out.dim = out_dim;
  out.ids.reserve(images.size());
  for (const auto& img : images) out.ids.push_back(img.image_id());
  out.rows.resize(static_cast<Eigen::Index>(images.size()), out_dim);

  BmmFvOptions bopt;
  bopt.include_weights = a.include_weights;
  GmmFvOptions gopt;
  gopt.include_weights = a.include_weights;
  gopt.include_variances = a.include_variances;

  parallel_chunks(images.size(), 1, [&](std::size_t, std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) {
      const PackedDescriptorSet& img = images[i];
      const Eigen::Index row = static_cast<Eigen::Index>(i);
      if (img.count() == 0) {
        warn("image '" + img.image_id() +
             "' has no descriptors; writing a zero signature");
        out.rows.row(row).setZero();
        continue;
      }
      GlobalVector gv;
      if (a.method == "bow") gv = encode_bow(voc, img);
      else if (a.method == "vlad") gv = encode_vlad(voc, img);
      else if (a.method == "fv-bmm")
        gv = a.stats_form ? encode_fv_bmm_stats(bmm, img, bopt)
                          : encode_fv_bmm(bmm, img, bopt);
      else
        gv = a.stats_form ? encode_fv_gmm_stats(gmm, img, gopt)
                          : encode_fv_gmm(gmm, img, gopt);
      out.rows.row(row) = gv.values.cast<float>().transpose();
    }
  });

  io::write_gvec(a.output, out);
  std::printf("encoded %d images: kind=%s dim=%d\n",
              static_cast<int>(images.size()), signature_kind_name(kind),
              static_cast<int>(out_dim));
}

// --------------------------------------------------------------- postproc ----

struct PostprocArgs {
  std::string input, output, pca_path;
  double beta = 0.5;
  bool pca_first = false;
  bool renorm = false;
};

void run_postproc(const PostprocArgs& a) {
  const io::GlobalVectorSet in = io::read_gvec(a.input);

  PcaModel pca;
  const bool has_pca = !a.pca_path.empty();
  if (has_pca) {
    pca = io::read_pca(a.pca_path);
    if (pca.input_dim() != in.dim)
      throw std::invalid_argument(
          "postproc: projection input dim " + std::to_string(pca.input_dim()) +
          " does not match vectors of dim " + std::to_string(in.dim));
  }

  // beta = 1 with no projection is the identity; only --renorm makes that
  // combination run the (then purely L2) pipeline.
  if (a.beta == 1.0 && !has_pca && !a.renorm) {
    io::write_gvec(a.output, in);
    std::printf("postproc: pass-through (beta=1, no projection); %d vectors\n",
                static_cast<int>(in.count()));
    return;
  }

  PipelineOptions opt;
  opt.beta = a.beta;
  opt.pca_first = a.pca_first;
  opt.pca = has_pca ? &pca : nullptr;

  io::GlobalVectorSet out;
  out.kind = has_pca ? SignatureKind::pca_reduced : in.kind;
  out.dim = has_pca ? pca.output_dim() : in.dim;
  out.ids = in.ids;
  out.rows.resize(in.count(), out.dim);

  parallel_chunks(static_cast<std::size_t>(in.count()), kDefaultChunk,
                  [&](std::size_t, std::size_t b, std::size_t e) {
                    for (std::size_t i = b; i < e; ++i) {
                      const Eigen::Index row = static_cast<Eigen::Index>(i);
                      GlobalVector gv{in.kind, in.row_as_double(row), 0};
                      const GlobalVector done = standard_pipeline(gv, opt);
                      out.rows.row(row) = done.values.cast<float>().transpose();
                    }
                  });

  io::write_gvec(a.output, out);
  std::printf("postproc: %d vectors, beta=%g%s%s -> dim=%d\n",
              static_cast<int>(out.count()), a.beta,
              has_pca ? ", projected" : "",
              a.pca_first ? " (projection first)" : "",
              static_cast<int>(out.dim));
}

// -------------------------------------------------------------- pca train ----

struct PcaTrainArgs {
  std::string sample, output;
  int dim = 0;
  std::uint64_t seed = 0;
};

void run_pca_train(const PcaTrainArgs& a) {
  const io::GlobalVectorSet in = io::read_gvec(a.sample);
  const Eigen::MatrixXd rows = in.rows.cast<double>();
  const PcaModel m = pca_train(rows, a.dim, a.seed);
  io::write_pca(a.output, m);
  std::printf("trained pca: %d -> %d dims over %d samples, top variance=%.10g\n",
              static_cast<int>(m.input_dim()), static_cast<int>(m.output_dim()),
              static_cast<int>(in.count()),
              m.explained_variance.size() ? m.explained_variance[0] : 0.0);
}

// ------------------------------------------------------------------- fuse ----

struct FuseArgs {
  std::string left, right, output, rescale;
  double alpha = 0.5;
};

void run_fuse(const FuseArgs& a) {
  if (!a.rescale.empty() && a.rescale != "max")
    usage_error("--rescale supports only 'max'");
  const io::GlobalVectorSet left = io::read_gvec(a.left);
  const io::GlobalVectorSet right = io::read_gvec(a.right);

  const auto lidx = id_index(left, "fuse --left");
  const auto ridx = id_index(right, "fuse --right");
  if (lidx.size() != ridx.size())
    throw std::invalid_argument("fuse: the two files carry different id sets");
  std::vector<std::string> ids = left.ids;
  std::sort(ids.begin(), ids.end());
  for (const auto& id : ids)
    if (!ridx.count(id))
      throw std::invalid_argument("fuse: id '" + id +
                                  "' missing from --right file");

  const Eigen::MatrixXd lrows = rows_as_double(left);
  const Eigen::MatrixXd rrows = rows_as_double(right);
  const std::size_t n = ids.size();

  // With --rescale max each side's distances are divided by their observed
  // maximum before blending, instead of requiring unit-norm inputs.
  std::string text;
  if (a.rescale == "max") {
    Eigen::MatrixXd dl(n, n), dr(n, n);
    double lmax = 0.0, rmax = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) {
        dl(i, j) = euclidean(lrows.row(lidx.at(ids[i])), lrows.row(lidx.at(ids[j])));
        dr(i, j) = euclidean(rrows.row(ridx.at(ids[i])), rrows.row(ridx.at(ids[j])));
        lmax = std::max(lmax, dl(i, j));
        rmax = std::max(rmax, dr(i, j));
      }
    if (lmax <= 0.0) lmax = 1.0;
    if (rmax <= 0.0) rmax = 1.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) {
        const double d = a.alpha * dl(i, j) / lmax + (1.0 - a.alpha) * dr(i, j) / rmax;
        char buf[64];
        std::snprintf(buf, sizeof buf, "\t%.10g\n", d);
        text += ids[i] + "\t" + ids[j] + buf;
      }
  } else {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) {
        const double d = fused_distance(
            lrows.row(lidx.at(ids[i])).transpose(),
            rrows.row(ridx.at(ids[i])).transpose(),
            lrows.row(lidx.at(ids[j])).transpose(),
            rrows.row(ridx.at(ids[j])).transpose(), a.alpha);
        char buf[64];
        std::snprintf(buf, sizeof buf, "\t%.10g\n", d);
        text += ids[i] + "\t" + ids[j] + buf;
      }
  }

  if (a.output.empty())
    std::fwrite(text.data(), 1, text.size(), stdout);
  else
    write_text_atomic(a.output, text);
}

// --------------------------------------------------------------- evaluate ----

struct EvaluateArgs {
  std::string db, queries, gt, rescale;
  std::vector<std::string> fuse;  // two GVEC paths: db side, query side
  double alpha = 0.5;
  bool machine = false;
};

void print_ap_report(const GroundTruth& gt, const RetrievalRun& run,
                     bool machine) {
  std::printf("%-32s %12s\n", "query", "AP");
  std::vector<double> aps;
  aps.reserve(gt.queries.size());
  for (std::size_t q = 0; q < gt.queries.size(); ++q) {
    const double ap = average_precision(run.entries[q].ranked, gt.queries[q]);
    aps.push_back(ap);
    std::printf("%-32s %12.6f\n", gt.queries[q].query_id.c_str(), ap);
  }
  const double map = mean_average_precision(run, gt);
  std::printf("%-32s %12.6f\n", "mAP", map);
  if (machine) {
    for (std::size_t q = 0; q < gt.queries.size(); ++q)
      std::printf("ap[%s]=%.10g\n", gt.queries[q].query_id.c_str(), aps[q]);
    std::printf("map=%.10g\n", map);
  }
}

void run_evaluate(const EvaluateArgs& a) {
  if (!a.fuse.empty() && a.fuse.size() != 2)
    usage_error("--fuse needs exactly two files: DBFILE,QUERYFILE");
  if (!a.rescale.empty() && a.rescale != "max")
    usage_error("--rescale supports only 'max'");
  const bool fused = !a.fuse.empty();

  const io::GlobalVectorSet db = io::read_gvec(a.db);
  const io::GlobalVectorSet queries = io::read_gvec(a.queries);
  const GroundTruth gt = io::read_gt(a.gt);

  if (db.kind != queries.kind)
    throw std::invalid_argument(
        std::string("evaluate: database vectors are kind=") +
        signature_kind_name(db.kind) + " but queries are kind=" +
        signature_kind_name(queries.kind));
  if (db.dim != queries.dim)
    throw std::invalid_argument(
        "evaluate: database dim " + std::to_string(db.dim) +
        " does not match query dim " + std::to_string(queries.dim));
  if (db.count() == 0)
    throw std::invalid_argument("evaluate: database is empty");

  id_index(db, "evaluate --db");  // uniqueness check
  const auto qidx = id_index(queries, "evaluate --queries");

  const Eigen::MatrixXd dbv = rows_as_double(db);
  const Eigen::MatrixXd qv = rows_as_double(queries);

  // Resolve each ground-truth query to its vector row up front.
  std::vector<Eigen::Index> qrow(gt.queries.size());
  for (std::size_t q = 0; q < gt.queries.size(); ++q) {
    const auto it = qidx.find(gt.queries[q].query_id);
    if (it == qidx.end())
      throw std::invalid_argument("evaluate: query '" + gt.queries[q].query_id +
                                  "' has no vector in the queries file");
    qrow[q] = it->second;
  }

  io::GlobalVectorSet fdb, fq;
  Eigen::MatrixXd fdbv, fqv;
  std::vector<Eigen::Index> fqrow(gt.queries.size());
  std::vector<Eigen::Index> fdbrow;
  if (fused) {
    fdb = io::read_gvec(a.fuse[0]);
    fq = io::read_gvec(a.fuse[1]);
    if (fdb.kind != fq.kind)
      throw std::invalid_argument(
          std::string("evaluate --fuse: database side is kind=") +
          signature_kind_name(fdb.kind) + " but query side is kind=" +
          signature_kind_name(fq.kind));
    if (fdb.dim != fq.dim)
      throw std::invalid_argument(
          "evaluate --fuse: database-side dim " + std::to_string(fdb.dim) +
          " does not match query-side dim " + std::to_string(fq.dim));
    const auto fdbidx = id_index(fdb, "evaluate --fuse db side");
    const auto fqidx = id_index(fq, "evaluate --fuse query side");
    fdbrow.resize(static_cast<std::size_t>(db.count()));
    for (Eigen::Index i = 0; i < db.count(); ++i) {
      const auto it = fdbidx.find(db.ids[static_cast<std::size_t>(i)]);
      if (it == fdbidx.end())
        throw std::invalid_argument(
            "evaluate --fuse: database id '" +
            db.ids[static_cast<std::size_t>(i)] + "' missing from fused side");
      fdbrow[static_cast<std::size_t>(i)] = it->second;
    }
    for (std::size_t q = 0; q < gt.queries.size(); ++q) {
      const auto it = fqidx.find(gt.queries[q].query_id);
      if (it == fqidx.end())
        throw std::invalid_argument("evaluate --fuse: query '" +
                                    gt.queries[q].query_id +
                                    "' missing from fused side");
      fqrow[q] = it->second;
    }
    fdbv = rows_as_double(fdb);
    fqv = rows_as_double(fq);
  }

  // BoW ranks by idf-weighted cosine (descending); everything else by
  // Euclidean distance (ascending).
  const bool use_bow = db.kind == SignatureKind::bow && !fused;
  Eigen::VectorXd idf;
  if (use_bow) idf = tfidf_weights(dbv);

  // With --rescale max, each side's distance is divided by the maximum
  // observed over the whole run, so both live on comparable scales.
  double dbmax = 1.0, fmax = 1.0;
  if (fused && a.rescale == "max") {
    double m1 = 0.0, m2 = 0.0;
    for (std::size_t q = 0; q < gt.queries.size(); ++q)
      for (Eigen::Index i = 0; i < db.count(); ++i) {
        m1 = std::max(m1, euclidean(qv.row(qrow[q]), dbv.row(i)));
        m2 = std::max(m2, euclidean(fqv.row(fqrow[q]),
                                    fdbv.row(fdbrow[static_cast<std::size_t>(i)])));
      }
    dbmax = m1 > 0.0 ? m1 : 1.0;
    fmax = m2 > 0.0 ? m2 : 1.0;
  }

  RetrievalRun run;
  run.entries.resize(gt.queries.size());
  parallel_chunks(gt.queries.size(), 1, [&](std::size_t, std::size_t b,
                                            std::size_t e) {
    for (std::size_t q = b; q < e; ++q) {
      std::vector<RankedItem> items;
      items.reserve(static_cast<std::size_t>(db.count()));
      for (Eigen::Index i = 0; i < db.count(); ++i) {
        double score;
        if (use_bow) {
          score = bow_similarity(qv.row(qrow[q]).transpose(),
                                 dbv.row(i).transpose(), idf);
        } else if (!fused) {
          score = euclidean(qv.row(qrow[q]), dbv.row(i));
        } else if (a.rescale == "max") {
          score = a.alpha * euclidean(qv.row(qrow[q]), dbv.row(i)) / dbmax +
                  (1.0 - a.alpha) *
                      euclidean(fqv.row(fqrow[q]),
                                fdbv.row(fdbrow[static_cast<std::size_t>(i)])) /
                      fmax;
        } else {
          score = fused_distance(
              qv.row(qrow[q]).transpose(),
              fqv.row(fqrow[q]).transpose(), dbv.row(i).transpose(),
              fdbv.row(fdbrow[static_cast<std::size_t>(i)]).transpose(),
              a.alpha);
        }
        items.push_back({db.ids[static_cast<std::size_t>(i)], score});
      }
      run.entries[q].query_id = gt.queries[q].query_id;
      run.entries[q].ranked = rank_items(
          std::move(items), use_bow ? MetricDirection::descending
                                    : MetricDirection::ascending);
    }
  });

  print_ap_report(gt, run, a.machine);
}

// ------------------------------------------------------------------ match ----

struct MatchArgs {
  std::string db, queries, gt;
  double ratio = 0.8;
  bool machine = false;
};

void run_match(const MatchArgs& a) {
  const std::vector<PackedDescriptorSet> db = io::read_dsc(a.db);
  const std::vector<PackedDescriptorSet> queries = io::read_dsc(a.queries);
  const GroundTruth gt = io::read_gt(a.gt);
  if (db.empty()) throw std::invalid_argument("match: database is empty");
  if (!queries.empty() && db.front().dim_bits() != queries.front().dim_bits())
    throw std::invalid_argument(
        "match: database dim_bits " + std::to_string(db.front().dim_bits()) +
        " does not match query dim_bits " +
        std::to_string(queries.front().dim_bits()));

  std::unordered_set<std::string> db_ids;
  for (const auto& img : db)
    if (!db_ids.insert(img.image_id()).second)
      throw std::invalid_argument("match --db: duplicate id '" +
                                  img.image_id() + "'");
  std::unordered_map<std::string, std::size_t> qidx;
  for (std::size_t i = 0; i < queries.size(); ++i)
    if (!qidx.emplace(queries[i].image_id(), i).second)
      throw std::invalid_argument("match --queries: duplicate id '" +
                                  queries[i].image_id() + "'");

  RetrievalRun run;
  run.entries.resize(gt.queries.size());
  for (std::size_t q = 0; q < gt.queries.size(); ++q) {
    const auto it = qidx.find(gt.queries[q].query_id);
    if (it == qidx.end())
      throw std::invalid_argument("match: query '" + gt.queries[q].query_id +
                                  "' has no descriptors in the queries file");
    const PackedDescriptorSet& qimg = queries[it->second];
    std::vector<RankedItem> items;
    items.reserve(db.size());
    for (const auto& dimg : db)
      items.push_back(
          {dimg.image_id(), direct_match_similarity(qimg, dimg, a.ratio)});
    run.entries[q].query_id = gt.queries[q].query_id;
    run.entries[q].ranked =
        rank_items(std::move(items), MetricDirection::descending);
  }

  print_ap_report(gt, run, a.machine);
}

// ------------------------------------------------------------------ synth ----

struct SynthArgs {
  std::string model, output, prefix = "img";
  int images = 0;
  int per_image = 0;
  std::uint64_t seed = 0;
};

void run_synth(const SynthArgs& a) {
  const BernoulliMixture m = io::read_bmm(a.model);
  Rng rng(a.seed);
  std::vector<PackedDescriptorSet> images;
  images.reserve(static_cast<std::size_t>(a.images));
  for (int i = 0; i < a.images; ++i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%06d", i);
    images.push_back(sample_bmm(m, static_cast<std::size_t>(a.per_image), rng,
                                a.prefix + buf));
  }
  io::write_dsc(a.output, images);
  std::printf("synthesized %d images x %d descriptors (dim %d)\n", a.images,
              a.per_image, static_cast<int>(m.dim()));
}

}  // namespace

int main(int argc, char** argv) try {
  CLI::App app{"aggregate binary local descriptors into global image "
               "signatures and evaluate retrieval quality"};
  app.require_subcommand(1);

  // train
  auto* train = app.add_subcommand("train", "fit a vocabulary or mixture model");
  train->require_subcommand(1);

  TrainVocabArgs tv;
  auto* vocab = train->add_subcommand("vocab", "cluster a visual vocabulary");
  vocab->add_option("--method", tv.method, "clustering method")
      ->required()
      ->check(CLI::IsMember({"kmeans", "kmajority", "kmedoids"}));
  vocab->add_option("--k", tv.k, "number of visual words")
      ->required()
      ->check(CLI::PositiveNumber);
  vocab->add_option("--sample", tv.sample, "training descriptors (DSC1)")
      ->required();
  vocab->add_option("--iters", tv.iters, "max iterations")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  vocab->add_option("--seed", tv.seed, "rng seed")->capture_default_str();
  vocab->add_option("-o,--output", tv.output, "output model (VOC1)")->required();
  vocab->callback([&tv] { run_train_vocab(tv); });

  TrainMixtureArgs tb, tg;
  auto add_mixture_train = [&train](const char* name, TrainMixtureArgs& args,
                                    const char* out_desc) {
    auto* c = train->add_subcommand(
        name, std::string("EM-fit a ") + name + " to descriptors");
    c->add_option("--k", args.k, "number of components")
        ->required()
        ->check(CLI::PositiveNumber);
    c->add_option("--sample", args.sample, "training descriptors (DSC1)")
        ->required();
    c->add_option("--eps", args.eps,
                  "stop when the mean matrix moves less than this")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    c->add_option("--iters", args.iters, "max EM iterations")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    c->add_option("--seed", args.seed, "rng seed")->capture_default_str();
    c->add_option("-o,--output", args.output, out_desc)->required();
    return c;
  };
  add_mixture_train("bmm", tb, "output model (BMM1)")
      ->callback([&tb] { run_train_bmm(tb); });
  add_mixture_train("gmm", tg, "output model (GMM1)")
      ->callback([&tg] { run_train_gmm(tg); });

  // encode
  EncodeArgs en;
  auto* encode = app.add_subcommand("encode", "aggregate descriptors into "
                                              "global signatures");
  encode->add_option("--method", en.method, "signature type")
      ->required()
      ->check(CLI::IsMember({"bow", "vlad", "fv-bmm", "fv-gmm"}));
  encode->add_option("--model", en.model, "VOC1/BMM1/GMM1 model file")
      ->required();
  encode->add_option("--input", en.input, "descriptors to encode (DSC1)")
      ->required();
  encode->add_option("-o,--output", en.output, "output signatures (GVEC1)")
      ->required();
  encode->add_flag("--include-weights", en.include_weights,
                   "append the weight-score block (fisher vectors)");
  encode->add_flag("--include-variances", en.include_variances,
                   "append the variance-score block (fv-gmm)");
  encode->add_flag("--stats-form", en.stats_form,
                   "compute from sufficient statistics instead of "
                   "per-descriptor accumulation");
  encode->callback([&en] { run_encode(en); });

  // postproc
  PostprocArgs pp;
  auto* postproc = app.add_subcommand(
      "postproc", "power-law + L2 normalization and optional projection");
  postproc->add_option("-i,--input", pp.input, "signatures (GVEC1)")->required();
  postproc->add_option("-o,--output", pp.output, "output signatures (GVEC1)")
      ->required();
  postproc->add_option("--beta", pp.beta, "power-law exponent in (0, 1]")
      ->check(CLI::Range(1e-9, 1.0))
      ->capture_default_str();
  postproc->add_option("--pca", pp.pca_path, "projection model (PCA1)");
  postproc->add_flag("--pca-first", pp.pca_first,
                     "project before the power law instead of after");
  postproc->add_flag("--renorm", pp.renorm,
                     "normalize even when beta=1 and no projection is given");
  postproc->callback([&pp] { run_postproc(pp); });

  // pca train
  auto* pca = app.add_subcommand("pca", "dimensionality reduction models");
  pca->require_subcommand(1);
  PcaTrainArgs pt;
  auto* pcatrain = pca->add_subcommand("train", "fit a projection to vectors");
  pcatrain->add_option("--dim", pt.dim, "output dimensionality")
      ->required()
      ->check(CLI::PositiveNumber);
  pcatrain->add_option("--sample", pt.sample, "training vectors (GVEC1)")
      ->required();
  pcatrain->add_option("--seed", pt.seed, "rng seed")->capture_default_str();
  pcatrain->add_option("-o,--output", pt.output, "output model (PCA1)")
      ->required();
  pcatrain->callback([&pt] { run_pca_train(pt); });

  // fuse
  FuseArgs fu;
  auto* fuse = app.add_subcommand(
      "fuse", "blend two signature spaces into pairwise distances");
  fuse->add_option("--alpha", fu.alpha,
                   "weight of the --left side, in [0, 1]")
      ->required()
      ->check(CLI::Range(0.0, 1.0));
  fuse->add_option("--left", fu.left, "alpha-weighted signatures (GVEC1)")
      ->required();
  fuse->add_option("--right", fu.right,
                   "(1-alpha)-weighted signatures (GVEC1)")
      ->required();
  fuse->add_option("--rescale", fu.rescale,
                   "'max': divide each side by its largest distance instead "
                   "of requiring unit-norm inputs");
  fuse->add_option("-o,--output", fu.output,
                   "write id<TAB>id<TAB>distance lines here instead of stdout");
  fuse->callback([&fu] { run_fuse(fu); });

  // evaluate
  EvaluateArgs ev;
  auto* evaluate = app.add_subcommand("evaluate", "rank the database for each "
                                                  "query and report AP/mAP");
  evaluate->add_option("--db", ev.db, "database signatures (GVEC1)")->required();
  evaluate->add_option("--queries", ev.queries, "query signatures (GVEC1)")
      ->required();
  evaluate->add_option("--gt", ev.gt, "ground truth (GT1)")->required();
  auto* fuse_opt = evaluate->add_option(
      "--fuse", ev.fuse,
      "second signature space as DBFILE,QUERYFILE; blended with the primary "
      "space by --alpha");
  fuse_opt->delimiter(',');
  auto* alpha_opt =
      evaluate->add_option("--alpha", ev.alpha, "weight of the primary space")
          ->check(CLI::Range(0.0, 1.0));
  fuse_opt->needs(alpha_opt);
  alpha_opt->needs(fuse_opt);
  evaluate->add_option("--rescale", ev.rescale,
                       "'max': rescale each space by its largest distance")
      ->needs(fuse_opt);
  evaluate->add_flag("--machine", ev.machine,
                     "append machine-readable ap[id]=... and map=... lines");
  evaluate->callback([&ev] { run_evaluate(ev); });

  // match
  MatchArgs ma;
  auto* match = app.add_subcommand(
      "match", "direct descriptor matching baseline with a ratio test");
  match->add_option("--db", ma.db, "database descriptors (DSC1)")->required();
  match->add_option("--queries", ma.queries, "query descriptors (DSC1)")
      ->required();
  match->add_option("--gt", ma.gt, "ground truth (GT1)")->required();
  match->add_option("--ratio", ma.ratio, "nearest/second-nearest acceptance "
                                         "threshold in (0, 1]")
      ->check(CLI::Range(1e-9, 1.0))
      ->capture_default_str();
  match->add_flag("--machine", ma.machine,
                  "append machine-readable ap[id]=... and map=... lines");
  match->callback([&ma] { run_match(ma); });

  // synth
  SynthArgs sy;
  auto* synth = app.add_subcommand(
      "synth", "sample synthetic descriptors from a mixture model");
  synth->add_option("--model", sy.model, "generator model (BMM1)")->required();
  synth->add_option("--images", sy.images, "number of images")
      ->required()
      ->check(CLI::PositiveNumber);
  synth->add_option("--per-image", sy.per_image, "descriptors per image")
      ->required()
      ->check(CLI::NonNegativeNumber);
  synth->add_option("--seed", sy.seed, "rng seed")->capture_default_str();
  synth->add_option("--id-prefix", sy.prefix, "image id prefix")
      ->capture_default_str();
  synth->add_option("-o,--output", sy.output, "output descriptors (DSC1)")
      ->required();
  synth->callback([&sy] { run_synth(sy); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  return 0;
} catch (const binagg::ParseError& e) {
  std::cerr << "binagg: error: " << e.what() << "\n";
  return 3;
} catch (const binagg::NumericError& e) {
  std::cerr << "binagg: error: " << e.what() << "\n";
  return 4;
} catch (const std::invalid_argument& e) {
  std::cerr << "binagg: error: " << e.what() << "\n";
  return 4;
} catch (const std::exception& e) {
  std::cerr << "binagg: internal error: " << e.what() << "\n";
  return 1;
}
