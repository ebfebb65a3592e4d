#pragma once

// 16-bit PCM mono RIFF/WAVE reading and writing.

#include <filesystem>
#include <span>
#include <vector>

#include "bapc/featurizer.hpp"

namespace bapc {

// Throws std::runtime_error describing the first problem found.
AudioBuffer decode_wav(std::span<const unsigned char> bytes);
AudioBuffer read_wav(const std::filesystem::path& path);

// Samples are clipped to [-1, 1] and quantized to 16 bits.
std::vector<unsigned char> encode_wav(const AudioBuffer& audio);
void write_wav(const std::filesystem::path& path, const AudioBuffer& audio);

}  // namespace bapc
