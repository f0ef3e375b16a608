#pragma once

// On-disk formats. Binary containers are magic-tagged ("DSC1", "GVEC1",
// "VOC1", "BMM1", "GMM1", "PCA1") with little-endian integers and floats;
// ground truth ("GT1") is line-oriented text. Malformed input raises
// ParseError carrying the file, the byte offset, and what was expected.
// Writes go to a temporary file in the target directory and are renamed into
// place, so readers never observe partial files.

#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "binagg/clustering.hpp"
#include "binagg/descriptors.hpp"
#include "binagg/encoders.hpp"
#include "binagg/mixtures.hpp"
#include "binagg/postproc.hpp"
#include "binagg/retrieval.hpp"

namespace binagg::io {

// ---- DSC1: per-image packed descriptor sets --------------------------------

void write_dsc(const std::filesystem::path& path,
               const std::vector<PackedDescriptorSet>& images);
std::vector<PackedDescriptorSet> read_dsc(const std::filesystem::path& path);

// ---- GVEC1: global-vector container (f32 rows) ------------------------------

/** Global vectors for a corpus: one id + one f32 row per image. Rows are
 *  stored in float to halve the footprint; convert per row for math. */
struct GlobalVectorSet {
  SignatureKind kind = SignatureKind::bow;
  Eigen::Index dim = 0;
  std::vector<std::string> ids;
  Eigen::MatrixXf rows;  // count x dim

  Eigen::Index count() const noexcept { return rows.rows(); }
  Eigen::VectorXd row_as_double(Eigen::Index i) const {
    return rows.row(i).cast<double>().transpose();
  }
};

void write_gvec(const std::filesystem::path& path, const GlobalVectorSet& s);
GlobalVectorSet read_gvec(const std::filesystem::path& path);

// ---- VOC1 / BMM1 / GMM1 / PCA1: models (f64 parameters) ----------------------

void write_voc(const std::filesystem::path& path, const Vocabulary& v);
Vocabulary read_voc(const std::filesystem::path& path);

void write_bmm(const std::filesystem::path& path, const BernoulliMixture& m);
BernoulliMixture read_bmm(const std::filesystem::path& path);

void write_gmm(const std::filesystem::path& path, const GaussianMixture& m);
GaussianMixture read_gmm(const std::filesystem::path& path);

void write_pca(const std::filesystem::path& path, const PcaModel& m);
PcaModel read_pca(const std::filesystem::path& path);

// ---- GT1: retrieval ground truth (text) --------------------------------------
//
//   GT1
//   # comment
//   query <id>
//   exclude_query            (optional, inside a query block)
//   positive <id>            (one or more per query)
//   junk <id>                (zero or more per query)

GroundTruth read_gt(const std::filesystem::path& path);
void write_gt(const std::filesystem::path& path, const GroundTruth& gt);

// ---- helpers ------------------------------------------------------------------

enum class FileFormat { dsc, gvec, voc, bmm, gmm, pca, gt, unknown };

/** Peeks at the magic bytes without parsing the body. */
FileFormat detect_format(const std::filesystem::path& path);
const char* file_format_name(FileFormat f);

}  // namespace binagg::io
