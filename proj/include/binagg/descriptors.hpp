#pragma once

// Bit-packed binary local descriptors and the distance primitives built on
// them. A descriptor of D bits occupies ceil(D/64) little-endian words; bit d
// lives at word d/64, position d%64, and every bit past D-1 in the last word
// is zero by construction (validated on ingest, relied on by the Hamming
// kernel so padding never contributes to a distance).

#include <bit>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "binagg/common.hpp"

namespace binagg {

inline constexpr std::size_t kWordBits = 64;

/** All descriptors extracted from one image, packed contiguously. Rows are
 *  appended during construction and the set is immutable afterwards, so
 *  concurrent readers need no locking. */
class PackedDescriptorSet {
 public:
  PackedDescriptorSet() = default;
  explicit PackedDescriptorSet(int dim_bits, std::string image_id = "");

  int dim_bits() const noexcept { return dim_bits_; }
  std::size_t count() const noexcept { return count_; }
  std::size_t words_per_descriptor() const noexcept { return wpd_; }
  const std::string& image_id() const noexcept { return image_id_; }
  void set_image_id(std::string id) { image_id_ = std::move(id); }

  std::span<const std::uint64_t> descriptor(std::size_t t) const {
    return {words_.data() + t * wpd_, wpd_};
  }
  bool bit(std::size_t t, int d) const {
    return (words_[t * wpd_ + static_cast<std::size_t>(d) / kWordBits] >>
            (static_cast<std::size_t>(d) % kWordBits)) &
           1u;
  }

  /** Appends one packed row; throws if the row length is wrong or any
   *  padding bit beyond dim_bits is set. */
  void append_words(std::span<const std::uint64_t> row);
  /** Appends one row given as dim_bits 0/1 bytes. */
  void append_bits(std::span<const std::uint8_t> bits);
  void reserve(std::size_t rows) { words_.reserve(rows * wpd_); }

  const std::vector<std::uint64_t>& payload() const noexcept { return words_; }

  /** Mask of the valid bits in the final word (all-ones when D % 64 == 0). */
  static std::uint64_t padding_mask(int dim_bits);

 private:
  int dim_bits_ = 0;
  std::size_t wpd_ = 0;
  std::size_t count_ = 0;
  std::string image_id_;
  std::vector<std::uint64_t> words_;
};

// --------------------------------------------------------------- hamming ----

/** Hot kernel: Hamming distance between two packed rows of n words. */
inline std::size_t hamming_words(const std::uint64_t* a, const std::uint64_t* b,
                                 std::size_t n) {
  std::size_t acc = 0;
  for (std::size_t i = 0; i < n; ++i)
    acc += static_cast<std::size_t>(std::popcount(a[i] ^ b[i]));
  return acc;
}

/** Hamming distance between descriptor i of a and descriptor j of b.
 *  The two sets must share dim_bits. */
std::size_t hamming(const PackedDescriptorSet& a, std::size_t i,
                    const PackedDescriptorSet& b, std::size_t j);

// ------------------------------------------------------------- unpacking ----

/** Descriptor t as a real vector of 0.0/1.0 entries. */
Eigen::VectorXd unpack_to_real(const PackedDescriptorSet& s, std::size_t t);

/** Whole set as a count() x dim_bits() matrix of 0.0/1.0 entries. */
Eigen::MatrixXd unpack_all(const PackedDescriptorSet& s);

/** Concatenates the rows of several sets into one pooled set (image ids are
 *  dropped; all sets must share dim_bits). */
PackedDescriptorSet pool(const std::vector<PackedDescriptorSet>& sets);

// -------------------------------------------------------- real distances ----

template <typename DA, typename DB>
double euclidean(const Eigen::MatrixBase<DA>& a, const Eigen::MatrixBase<DB>& b) {
  if (a.size() != b.size())
    throw std::invalid_argument("euclidean: dimension mismatch (" +
                                std::to_string(a.size()) + " vs " +
                                std::to_string(b.size()) + ")");
  return (a.derived().template cast<double>() -
          b.derived().template cast<double>())
      .norm();
}

template <typename DA, typename DB>
double cosine(const Eigen::MatrixBase<DA>& a, const Eigen::MatrixBase<DB>& b) {
  if (a.size() != b.size())
    throw std::invalid_argument("cosine: dimension mismatch (" +
                                std::to_string(a.size()) + " vs " +
                                std::to_string(b.size()) + ")");
  const auto ad = a.derived().template cast<double>().eval();
  const auto bd = b.derived().template cast<double>().eval();
  const double na = ad.norm(), nb = bd.norm();
  if (na == 0.0 || nb == 0.0)
    throw NumericError("cosine: undefined for a zero vector");
  return ad.dot(bd) / (na * nb);
}

}  // namespace binagg
