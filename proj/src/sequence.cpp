#include "bapc/sequence.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace bapc {

SequenceLayout::SequenceLayout(std::vector<std::size_t> lens) : batch(lens.size()), lengths(std::move(lens)) {
  if (lengths.empty()) throw std::invalid_argument("sequence layout needs at least one sequence");
  for (std::size_t len : lengths) {
    if (len == 0) throw std::invalid_argument("sequence layout: zero-length sequence");
  }
  max_len = *std::max_element(lengths.begin(), lengths.end());
}

std::size_t SequenceLayout::total_frames() const {
  return std::accumulate(lengths.begin(), lengths.end(), std::size_t{0});
}

std::vector<std::uint8_t> SequenceLayout::valid_rows() const {
  std::vector<std::uint8_t> mask(rows(), 0);
  for (std::size_t t = 0; t < max_len; ++t) {
    for (std::size_t b = 0; b < batch; ++b) mask[row(t, b)] = valid(t, b) ? 1 : 0;
  }
  return mask;
}

std::vector<std::size_t> SequenceLayout::reverse_permutation() const {
  std::vector<std::size_t> perm(rows());
  for (std::size_t t = 0; t < max_len; ++t) {
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t src_t = valid(t, b) ? lengths[b] - 1 - t : t;
      perm[row(t, b)] = row(src_t, b);
    }
  }
  return perm;
}

}  // namespace bapc
