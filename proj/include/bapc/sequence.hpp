#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace bapc {

// Time-major layout of a padded minibatch: frame t of sequence b lives in
// row t * batch + b. Rows at t >= lengths[b] are padding.
struct SequenceLayout {
  std::size_t batch = 0;
  std::size_t max_len = 0;
  std::vector<std::size_t> lengths;

  SequenceLayout() = default;
  explicit SequenceLayout(std::vector<std::size_t> lens);

  static SequenceLayout single(std::size_t length) { return SequenceLayout({length}); }

  std::size_t rows() const { return batch * max_len; }
  std::size_t row(std::size_t t, std::size_t b) const { return t * batch + b; }
  bool valid(std::size_t t, std::size_t b) const { return t < lengths[b]; }
  std::size_t total_frames() const;

  // 1 for real frames, 0 for padding; one entry per row.
  std::vector<std::uint8_t> valid_rows() const;

  // Row permutation that reverses every sequence within its own length and
  // leaves padding rows in place. It is its own inverse.
  std::vector<std::size_t> reverse_permutation() const;
};

}  // namespace bapc
