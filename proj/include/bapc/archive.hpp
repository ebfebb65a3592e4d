#pragma once

// Feature archives (magic FARC) and label archives (magic LARC).
//
// Layout, all integers u32 little-endian:
//   magic, version, then one record per utterance until end of file:
//   id length, UTF-8 id, T, D, T*D payload values (row-major).
// Feature payloads are float32; label payloads are int32 with D = 1.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "bapc/featurizer.hpp"
#include "bapc/objectives.hpp"

namespace bapc {

inline constexpr std::uint32_t kArchiveVersion = 1;

std::vector<unsigned char> encode_feature_archive(std::span<const FeatureSequence> records);
std::vector<FeatureSequence> decode_feature_archive(std::span<const unsigned char> bytes);
void write_feature_archive(const std::filesystem::path& path, std::span<const FeatureSequence> records);
std::vector<FeatureSequence> read_feature_archive(const std::filesystem::path& path);

std::vector<unsigned char> encode_label_archive(std::span<const AlignmentLabels> records);
std::vector<AlignmentLabels> decode_label_archive(std::span<const unsigned char> bytes);
void write_label_archive(const std::filesystem::path& path, std::span<const AlignmentLabels> records);
std::vector<AlignmentLabels> read_label_archive(const std::filesystem::path& path);

// Pairs each feature sequence with its labels by id. Throws if an id is
// missing or the lengths differ.
std::vector<AlignmentLabels> match_labels(std::span<const FeatureSequence> features,
                                          std::span<const AlignmentLabels> labels);

}  // namespace bapc
