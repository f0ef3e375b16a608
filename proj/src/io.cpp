#include "binagg/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <unistd.h>

namespace binagg::io {
namespace {

// ---- little-endian primitives ------------------------------------------------

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path)
      : path_(path.string()), in_(path, std::ios::binary) {
    if (!in_) throw ParseError(path_, 0, "a readable file");
  }

  const std::string& path() const noexcept { return path_; }
  std::uint64_t offset() const noexcept { return off_; }

  void bytes(void* dst, std::size_t n, const char* what) {
    const std::uint64_t start = off_;
    in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (in_.gcount() != static_cast<std::streamsize>(n))
      throw ParseError(path_, start, what);
    off_ += n;
  }

  std::uint8_t u8(const char* what) {
    std::uint8_t b;
    bytes(&b, 1, what);
    return b;
  }
  std::uint32_t u32(const char* what) {
    unsigned char b[4];
    bytes(b, 4, what);
    return static_cast<std::uint32_t>(b[0]) |
           static_cast<std::uint32_t>(b[1]) << 8 |
           static_cast<std::uint32_t>(b[2]) << 16 |
           static_cast<std::uint32_t>(b[3]) << 24;
  }
  std::uint64_t u64(const char* what) {
    unsigned char b[8];
    bytes(b, 8, what);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = v << 8 | b[i];
    return v;
  }
  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
  double f64(const char* what) { return std::bit_cast<double>(u64(what)); }

  std::string str(const char* what) {
    const std::uint64_t start = off_;
    const std::uint32_t len = u32(what);
    if (len > (1u << 24)) throw ParseError(path_, start, what);
    std::string s(len, '\0');
    if (len) bytes(s.data(), len, what);
    return s;
  }

  void magic(const char* tag) {
    const std::size_t n = std::strlen(tag);
    std::string buf(n, '\0');
    const std::uint64_t start = off_;
    in_.read(buf.data(), static_cast<std::streamsize>(n));
    if (in_.gcount() != static_cast<std::streamsize>(n) ||
        std::memcmp(buf.data(), tag, n) != 0)
      throw ParseError(path_, start, std::string("magic \"") + tag + "\"");
    off_ += n;
  }

  void expect_eof() {
    if (in_.peek() != std::char_traits<char>::eof())
      throw ParseError(path_, off_, "end of file");
  }

  [[noreturn]] void fail(std::uint64_t at, const std::string& what) const {
    throw ParseError(path_, at, what);
  }

 private:
  std::string path_;
  std::ifstream in_;
  std::uint64_t off_ = 0;
};

// Writes to "<target>.tmp<pid>" and renames into place on commit, so a
// crashed run never leaves a half-written container behind.
class AtomicWriter {
 public:
  explicit AtomicWriter(const std::filesystem::path& path)
      : target_(path),
        temp_(path.string() + ".tmp" + std::to_string(::getpid())) {
    out_.open(temp_, std::ios::binary | std::ios::trunc);
    if (!out_)
      throw std::runtime_error("cannot open '" + temp_.string() +
                               "' for writing");
  }
  ~AtomicWriter() {
    if (!committed_) {
      out_.close();
      std::error_code ec;
      std::filesystem::remove(temp_, ec);
    }
  }

  void bytes(const void* p, std::size_t n) {
    out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
  }
  void u8(std::uint8_t v) { bytes(&v, 1); }
  void u32(std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v),
                          static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    bytes(b, 4);
  }
  void u64(std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    bytes(b, 8);
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void magic(const char* tag) { bytes(tag, std::strlen(tag)); }

  void commit() {
    out_.flush();
    if (!out_)
      throw std::runtime_error("write failed for '" + target_.string() + "'");
    out_.close();
    std::filesystem::rename(temp_, target_);
    committed_ = true;
  }

 private:
  std::filesystem::path target_, temp_;
  std::ofstream out_;
  bool committed_ = false;
};

}  // namespace

// ---- DSC1 ---------------------------------------------------------------------

void write_dsc(const std::filesystem::path& path,
               const std::vector<PackedDescriptorSet>& images) {
  if (images.empty())
    throw std::invalid_argument("write_dsc: at least one image required");
  const int dim = images.front().dim_bits();
  for (const auto& img : images)
    if (img.dim_bits() != dim)
      throw std::invalid_argument("write_dsc: mixed dim_bits across images");

  AtomicWriter w(path);
  w.magic("DSC1");
  w.u32(static_cast<std::uint32_t>(dim));
  w.u32(static_cast<std::uint32_t>(images.size()));
  for (const auto& img : images) {
    w.str(img.image_id());
    w.u32(static_cast<std::uint32_t>(img.count()));
    for (std::uint64_t word : img.payload()) w.u64(word);
  }
  w.commit();
}

std::vector<PackedDescriptorSet> read_dsc(const std::filesystem::path& path) {
  Reader r(path);
  r.magic("DSC1");
  const std::uint64_t dim_at = r.offset();
  const std::uint32_t dim = r.u32("dim_bits");
  if (dim == 0) r.fail(dim_at, "positive dim_bits");
  const std::uint32_t n_images = r.u32("image count");
  const std::size_t wpd = (dim + kWordBits - 1) / kWordBits;
  const std::uint64_t pad_mask = PackedDescriptorSet::padding_mask(
      static_cast<int>(dim));

  std::vector<PackedDescriptorSet> images;
  images.reserve(n_images);
  std::vector<std::uint64_t> row(wpd);
  for (std::uint32_t i = 0; i < n_images; ++i) {
    PackedDescriptorSet img(static_cast<int>(dim), r.str("image id"));
    const std::uint32_t n_desc = r.u32("descriptor count");
    img.reserve(n_desc);
    for (std::uint32_t t = 0; t < n_desc; ++t) {
      const std::uint64_t row_at = r.offset();
      for (std::size_t wi = 0; wi < wpd; ++wi) row[wi] = r.u64("descriptor words");
      if ((row[wpd - 1] & ~pad_mask) != 0)
        r.fail(row_at + (wpd - 1) * 8,
               "zero padding bits past bit " + std::to_string(dim - 1));
      img.append_words(row);
    }
    images.push_back(std::move(img));
  }
  r.expect_eof();
  return images;
}

// ---- GVEC1 ----------------------------------------------------------------------

void write_gvec(const std::filesystem::path& path, const GlobalVectorSet& s) {
  if (s.dim < 1 || s.rows.cols() != s.dim ||
      s.ids.size() != static_cast<std::size_t>(s.rows.rows()))
    throw std::invalid_argument("write_gvec: inconsistent container");
  AtomicWriter w(path);
  w.magic("GVEC1");
  w.u32(static_cast<std::uint32_t>(s.dim));
  w.u8(static_cast<std::uint8_t>(s.kind));
  w.u32(static_cast<std::uint32_t>(s.rows.rows()));
  for (const auto& id : s.ids) w.str(id);
  for (Eigen::Index i = 0; i < s.rows.rows(); ++i)
    for (Eigen::Index j = 0; j < s.dim; ++j) w.f32(s.rows(i, j));
  w.commit();
}

GlobalVectorSet read_gvec(const std::filesystem::path& path) {
  Reader r(path);
  r.magic("GVEC1");
  GlobalVectorSet s;
  const std::uint64_t dim_at = r.offset();
  s.dim = r.u32("dim");
  if (s.dim < 1) r.fail(dim_at, "positive dim");
  const std::uint64_t kind_at = r.offset();
  const std::uint8_t kind = r.u8("signature kind tag");
  if (kind > static_cast<std::uint8_t>(SignatureKind::pca_reduced))
    r.fail(kind_at, "known signature kind tag (0..5)");
  s.kind = static_cast<SignatureKind>(kind);
  const std::uint32_t count = r.u32("vector count");
  s.ids.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) s.ids.push_back(r.str("image id"));
  s.rows.resize(count, s.dim);
  for (std::uint32_t i = 0; i < count; ++i)
    for (Eigen::Index j = 0; j < s.dim; ++j)
      s.rows(static_cast<Eigen::Index>(i), j) = r.f32("vector coefficients");
  r.expect_eof();
  return s;
}

// ---- VOC1 ----------------------------------------------------------------------

void write_voc(const std::filesystem::path& path, const Vocabulary& v) {
  if (v.k() < 1) throw std::invalid_argument("write_voc: empty vocabulary");
  AtomicWriter w(path);
  w.magic("VOC1");
  w.u8(static_cast<std::uint8_t>(v.method));
  w.u32(static_cast<std::uint32_t>(v.k()));
  w.u32(static_cast<std::uint32_t>(v.dim()));
  if (v.binary()) {
    for (std::uint64_t word : v.binary_centroids.payload()) w.u64(word);
  } else {
    for (Eigen::Index i = 0; i < v.real_centroids.rows(); ++i)
      for (Eigen::Index j = 0; j < v.real_centroids.cols(); ++j)
        w.f64(v.real_centroids(i, j));
  }
  w.commit();
}

Vocabulary read_voc(const std::filesystem::path& path) {
  Reader r(path);
  r.magic("VOC1");
  const std::uint64_t method_at = r.offset();
  const std::uint8_t method = r.u8("learning method tag");
  if (method > static_cast<std::uint8_t>(LearningMethod::kmedoids))
    r.fail(method_at, "known learning method tag (0..2)");
  const std::uint64_t k_at = r.offset();
  const std::uint32_t k = r.u32("centroid count");
  const std::uint32_t dim = r.u32("centroid dim");
  if (k < 1 || dim < 1) r.fail(k_at, "positive centroid count and dim");

  Vocabulary v;
  v.method = static_cast<LearningMethod>(method);
  if (v.method == LearningMethod::kmeans) {
    v.real_centroids.resize(k, dim);
    for (std::uint32_t i = 0; i < k; ++i)
      for (std::uint32_t j = 0; j < dim; ++j)
        v.real_centroids(static_cast<Eigen::Index>(i),
                         static_cast<Eigen::Index>(j)) =
            r.f64("centroid coefficients");
  } else {
    const std::size_t wpd = (dim + kWordBits - 1) / kWordBits;
    const std::uint64_t mask =
        PackedDescriptorSet::padding_mask(static_cast<int>(dim));
    PackedDescriptorSet c(static_cast<int>(dim));
    std::vector<std::uint64_t> row(wpd);
    for (std::uint32_t i = 0; i < k; ++i) {
      const std::uint64_t row_at = r.offset();
      for (std::size_t wi = 0; wi < wpd; ++wi) row[wi] = r.u64("centroid words");
      if ((row[wpd - 1] & ~mask) != 0)
        r.fail(row_at + (wpd - 1) * 8, "zero padding bits in centroid");
      c.append_words(row);
    }
    v.binary_centroids = std::move(c);
  }
  r.expect_eof();
  return v;
}

// ---- BMM1 / GMM1 ------------------------------------------------------------------

namespace {

void write_matrix(AtomicWriter& w, const Eigen::MatrixXd& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) w.f64(m(i, j));
}

Eigen::MatrixXd read_matrix(Reader& r, Eigen::Index rows, Eigen::Index cols,
                            const char* what) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = r.f64(what);
  return m;
}

std::pair<std::uint32_t, std::uint32_t> read_k_dim(Reader& r) {
  const std::uint64_t at = r.offset();
  const std::uint32_t k = r.u32("component count");
  const std::uint32_t dim = r.u32("component dim");
  if (k < 1 || dim < 1) r.fail(at, "positive component count and dim");
  return {k, dim};
}

}  // namespace

void write_bmm(const std::filesystem::path& path, const BernoulliMixture& m) {
  AtomicWriter w(path);
  w.magic("BMM1");
  w.u32(static_cast<std::uint32_t>(m.k()));
  w.u32(static_cast<std::uint32_t>(m.dim()));
  for (Eigen::Index i = 0; i < m.k(); ++i) w.f64(m.weights()[i]);
  write_matrix(w, m.means());
  w.commit();
}

BernoulliMixture read_bmm(const std::filesystem::path& path) {
  Reader r(path);
  r.magic("BMM1");
  const auto [k, dim] = read_k_dim(r);
  const std::uint64_t params_at = r.offset();
  Eigen::VectorXd weights(k);
  for (std::uint32_t i = 0; i < k; ++i) weights[i] = r.f64("mixture weights");
  Eigen::MatrixXd means = read_matrix(r, k, dim, "component means");
  if ((means.array() < 0.0).any() || (means.array() > 1.0).any())
    r.fail(params_at, "component means within [0, 1]");
  r.expect_eof();
  try {
    return BernoulliMixture(std::move(weights), std::move(means));
  } catch (const std::invalid_argument& e) {
    r.fail(params_at, std::string("valid mixture parameters (") + e.what() + ")");
  }
}

void write_gmm(const std::filesystem::path& path, const GaussianMixture& m) {
  AtomicWriter w(path);
  w.magic("GMM1");
  w.u32(static_cast<std::uint32_t>(m.k()));
  w.u32(static_cast<std::uint32_t>(m.dim()));
  for (Eigen::Index i = 0; i < m.k(); ++i) w.f64(m.weights()[i]);
  write_matrix(w, m.means());
  write_matrix(w, m.variances());
  w.commit();
}

GaussianMixture read_gmm(const std::filesystem::path& path) {
  Reader r(path);
  r.magic("GMM1");
  const auto [k, dim] = read_k_dim(r);
  const std::uint64_t params_at = r.offset();
  Eigen::VectorXd weights(k);
  for (std::uint32_t i = 0; i < k; ++i) weights[i] = r.f64("mixture weights");
  Eigen::MatrixXd means = read_matrix(r, k, dim, "component means");
  Eigen::MatrixXd variances = read_matrix(r, k, dim, "component variances");
  if ((variances.array() <= 0.0).any())
    r.fail(params_at, "positive component variances");
  r.expect_eof();
  try {
    return GaussianMixture(std::move(weights), std::move(means),
                           std::move(variances));
  } catch (const std::invalid_argument& e) {
    r.fail(params_at, std::string("valid mixture parameters (") + e.what() + ")");
  }
}

// ---- PCA1 -------------------------------------------------------------------------

void write_pca(const std::filesystem::path& path, const PcaModel& m) {
  AtomicWriter w(path);
  w.magic("PCA1");
  w.u32(static_cast<std::uint32_t>(m.input_dim()));
  w.u32(static_cast<std::uint32_t>(m.output_dim()));
  for (Eigen::Index i = 0; i < m.input_dim(); ++i) w.f64(m.mean[i]);
  write_matrix(w, m.projection);
  for (Eigen::Index i = 0; i < m.output_dim(); ++i)
    w.f64(m.explained_variance[i]);
  w.commit();
}

PcaModel read_pca(const std::filesystem::path& path) {
  Reader r(path);
  r.magic("PCA1");
  const std::uint64_t dims_at = r.offset();
  const std::uint32_t in_dim = r.u32("input dim");
  const std::uint32_t out_dim = r.u32("output dim");
  if (in_dim < 1 || out_dim < 1) r.fail(dims_at, "positive dims");
  if (out_dim > in_dim) r.fail(dims_at, "output_dim <= input_dim");
  PcaModel m;
  m.mean.resize(in_dim);
  for (std::uint32_t i = 0; i < in_dim; ++i) m.mean[i] = r.f64("mean vector");
  m.projection = read_matrix(r, out_dim, in_dim, "projection rows");
  m.explained_variance.resize(out_dim);
  for (std::uint32_t i = 0; i < out_dim; ++i)
    m.explained_variance[i] = r.f64("explained variance");
  r.expect_eof();
  return m;
}

// ---- GT1 ---------------------------------------------------------------------------

GroundTruth read_gt(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path.string(), 0, "a readable file");
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  const std::string fname = path.string();

  GroundTruth gt;
  std::set<std::string> seen_queries;
  std::uint64_t query_at = 0;  // offset of the current query line
  bool saw_magic = false;

  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::uint64_t line_at = pos;
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string::npos) eol = text.size();
    std::string line = text.substr(pos, eol - pos);
    pos = eol + 1;
    if (!line.empty() && line.back() == '\r') line.pop_back();

    if (!saw_magic) {
      if (line != "GT1") throw ParseError(fname, line_at, "magic line \"GT1\"");
      saw_magic = true;
      continue;
    }

    // Tokenize on blanks.
    std::vector<std::string> tok;
    std::size_t i = 0;
    while (i < line.size()) {
      while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
      std::size_t j = i;
      while (j < line.size() && line[j] != ' ' && line[j] != '\t') ++j;
      if (j > i) tok.push_back(line.substr(i, j - i));
      i = j;
    }
    if (tok.empty()) {
      if (pos > text.size()) break;
      continue;
    }
    if (tok[0][0] == '#') continue;

    auto finish_query = [&] {
      if (!gt.queries.empty() && gt.queries.back().positives.empty())
        throw ParseError(fname, query_at,
                         "at least one 'positive' for query '" +
                             gt.queries.back().query_id + "'");
    };

    if (tok[0] == "query") {
      if (tok.size() != 2)
        throw ParseError(fname, line_at, "'query <id>'");
      finish_query();
      if (!seen_queries.insert(tok[1]).second)
        throw ParseError(fname, line_at,
                         "unique query id (duplicate '" + tok[1] + "')");
      query_at = line_at;
      gt.queries.push_back(QueryGroundTruth{tok[1], {}, {}, false});
    } else if (tok[0] == "positive" || tok[0] == "junk") {
      if (tok.size() != 2)
        throw ParseError(fname, line_at, "'" + tok[0] + " <id>'");
      if (gt.queries.empty())
        throw ParseError(fname, line_at, "'query <id>' before '" + tok[0] + "'");
      auto& q = gt.queries.back();
      const bool is_pos = tok[0] == "positive";
      if ((is_pos ? q.junk : q.positives).count(tok[1]))
        throw ParseError(fname, line_at,
                         "id '" + tok[1] + "' not both positive and junk");
      (is_pos ? q.positives : q.junk).insert(tok[1]);
    } else if (tok[0] == "exclude_query") {
      if (tok.size() != 1)
        throw ParseError(fname, line_at, "bare 'exclude_query'");
      if (gt.queries.empty())
        throw ParseError(fname, line_at,
                         "'query <id>' before 'exclude_query'");
      gt.queries.back().exclude_query = true;
    } else {
      throw ParseError(fname, line_at,
                       "directive 'query', 'positive', 'junk', "
                       "'exclude_query', comment, or blank line");
    }
    if (pos > text.size()) break;
  }

  if (!saw_magic) throw ParseError(fname, 0, "magic line \"GT1\"");
  if (gt.queries.empty())
    throw ParseError(fname, text.size(), "at least one query block");
  if (gt.queries.back().positives.empty())
    throw ParseError(fname, query_at,
                     "at least one 'positive' for query '" +
                         gt.queries.back().query_id + "'");
  return gt;
}

void write_gt(const std::filesystem::path& path, const GroundTruth& gt) {
  AtomicWriter w(path);
  std::string out = "GT1\n";
  for (const auto& q : gt.queries) {
    out += "query " + q.query_id + "\n";
    if (q.exclude_query) out += "exclude_query\n";
    for (const auto& id : q.positives) out += "positive " + id + "\n";
    for (const auto& id : q.junk) out += "junk " + id + "\n";
  }
  w.bytes(out.data(), out.size());
  w.commit();
}

// ---- format sniffing -------------------------------------------------------------

FileFormat detect_format(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path.string(), 0, "a readable file");
  char buf[5] = {};
  in.read(buf, 5);
  const std::string head(buf, static_cast<std::size_t>(in.gcount()));
  if (head.rfind("GVEC1", 0) == 0) return FileFormat::gvec;
  if (head.rfind("DSC1", 0) == 0) return FileFormat::dsc;
  if (head.rfind("VOC1", 0) == 0) return FileFormat::voc;
  if (head.rfind("BMM1", 0) == 0) return FileFormat::bmm;
  if (head.rfind("GMM1", 0) == 0) return FileFormat::gmm;
  if (head.rfind("PCA1", 0) == 0) return FileFormat::pca;
  if (head.rfind("GT1", 0) == 0 &&
      (head.size() == 3 || head[3] == '\n' || head[3] == '\r'))
    return FileFormat::gt;
  return FileFormat::unknown;
}

const char* file_format_name(FileFormat f) {
  switch (f) {
    case FileFormat::dsc: return "DSC1";
    case FileFormat::gvec: return "GVEC1";
    case FileFormat::voc: return "VOC1";
    case FileFormat::bmm: return "BMM1";
    case FileFormat::gmm: return "GMM1";
    case FileFormat::pca: return "PCA1";
    case FileFormat::gt: return "GT1";
    case FileFormat::unknown: break;
  }
  return "unknown";
}

}  // namespace binagg::io
