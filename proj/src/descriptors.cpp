#include "binagg/descriptors.hpp"

namespace binagg {

PackedDescriptorSet::PackedDescriptorSet(int dim_bits, std::string image_id)
    : dim_bits_(dim_bits),
      wpd_((static_cast<std::size_t>(dim_bits) + kWordBits - 1) / kWordBits),
      image_id_(std::move(image_id)) {
  if (dim_bits <= 0)
    throw std::invalid_argument("PackedDescriptorSet: dim_bits must be > 0");
}

std::uint64_t PackedDescriptorSet::padding_mask(int dim_bits) {
  const std::size_t rem = static_cast<std::size_t>(dim_bits) % kWordBits;
  return rem == 0 ? ~0ull : (1ull << rem) - 1ull;
}

void PackedDescriptorSet::append_words(std::span<const std::uint64_t> row) {
  if (row.size() != wpd_)
    throw std::invalid_argument(
        "append_words: row has " + std::to_string(row.size()) +
        " words, expected " + std::to_string(wpd_));
  if ((row.back() & ~padding_mask(dim_bits_)) != 0)
    throw std::invalid_argument(
        "append_words: nonzero padding bits past bit " +
        std::to_string(dim_bits_ - 1));
  words_.insert(words_.end(), row.begin(), row.end());
  ++count_;
}

void PackedDescriptorSet::append_bits(std::span<const std::uint8_t> bits) {
  if (bits.size() != static_cast<std::size_t>(dim_bits_))
    throw std::invalid_argument(
        "append_bits: got " + std::to_string(bits.size()) + " bits, expected " +
        std::to_string(dim_bits_));
  std::vector<std::uint64_t> row(wpd_, 0);
  for (std::size_t d = 0; d < bits.size(); ++d)
    if (bits[d]) row[d / kWordBits] |= 1ull << (d % kWordBits);
  append_words(row);
}

std::size_t hamming(const PackedDescriptorSet& a, std::size_t i,
                    const PackedDescriptorSet& b, std::size_t j) {
  if (a.dim_bits() != b.dim_bits())
    throw std::invalid_argument("hamming: dim_bits mismatch (" +
                                std::to_string(a.dim_bits()) + " vs " +
                                std::to_string(b.dim_bits()) + ")");
  return hamming_words(a.descriptor(i).data(), b.descriptor(j).data(),
                       a.words_per_descriptor());
}

Eigen::VectorXd unpack_to_real(const PackedDescriptorSet& s, std::size_t t) {
  Eigen::VectorXd x(s.dim_bits());
  for (int d = 0; d < s.dim_bits(); ++d) x[d] = s.bit(t, d) ? 1.0 : 0.0;
  return x;
}

Eigen::MatrixXd unpack_all(const PackedDescriptorSet& s) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(s.count()), s.dim_bits());
  for (std::size_t t = 0; t < s.count(); ++t)
    for (int d = 0; d < s.dim_bits(); ++d)
      m(static_cast<Eigen::Index>(t), d) = s.bit(t, d) ? 1.0 : 0.0;
  return m;
}

PackedDescriptorSet pool(const std::vector<PackedDescriptorSet>& sets) {
  if (sets.empty()) throw std::invalid_argument("pool: no descriptor sets");
  PackedDescriptorSet out(sets.front().dim_bits());
  std::size_t total = 0;
  for (const auto& s : sets) total += s.count();
  out.reserve(total);
  for (const auto& s : sets) {
    if (s.dim_bits() != out.dim_bits())
      throw std::invalid_argument("pool: dim_bits mismatch across sets");
    for (std::size_t t = 0; t < s.count(); ++t) out.append_words(s.descriptor(t));
  }
  return out;
}

}  // namespace binagg
