#pragma once

// Checkpoint file layout, integers u32 little-endian:
//   magic "BAPC", version,
//   metadata block: byte length, then "key=value\n" lines (model spec under
//   "spec.*", epoch, and free-form training metadata),
//   tensor count, then per tensor: name length, UTF-8 name, rank, dims,
//   float32 values.

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "bapc/model.hpp"

namespace bapc {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelSpec spec;
  TensorMap tensors;  // parameters and batch-norm running moments
  int epoch = 0;
  std::map<std::string, std::string> metadata;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

std::vector<unsigned char> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const unsigned char> bytes);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

template <typename T>
Checkpoint make_checkpoint(const AcousticModel<T>& model, int epoch, std::map<std::string, std::string> metadata = {});

// Builds a model of the checkpoint's spec and loads every tensor.
template <typename T>
AcousticModel<T> model_from_checkpoint(const Checkpoint& ckpt);

// FNV-1a over the shape and the little-endian float32 payload.
std::uint64_t tensor_hash(const Tensor<float>& tensor);
std::string hash_hex(std::uint64_t hash);

}  // namespace bapc
