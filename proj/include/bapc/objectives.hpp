#pragma once

// Training objectives: frame-level cross entropy, autoregressive prediction
// (APC), its bidirectional form (Bi-APC) and masked reconstruction (MPC).
// Every loss is a sum over the frames that carry a target; callers divide by
// contributing_frames() when they want a per-frame mean.

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bapc/autodiff.hpp"
#include "bapc/rng.hpp"
#include "bapc/sequence.hpp"
#include "bapc/tensor.hpp"

namespace bapc {

struct AlignmentLabels {
  std::string utterance_id;
  std::vector<std::int32_t> labels;  // one class index per frame
};

enum class ObjectiveKind { kCrossEntropy, kApc, kBiApc, kMpc };

std::string_view to_string(ObjectiveKind kind);
ObjectiveKind parse_objective(std::string_view text);

struct ObjectiveConfig {
  ObjectiveKind kind = ObjectiveKind::kApc;
  int shift = 2;
  double mask_ratio = 0.15;
  std::array<double, 2> direction_weights{0.5, 0.5};

  void validate() const;
};

template <typename T>
Var<T> ce_loss(Var<T> logits, std::span<const std::int32_t> labels);

// sum_b sum_{t=1}^{T_b - n} |x_{t+n} - y_t|
template <typename T>
Var<T> apc_loss(Var<T> pred, Var<T> features, const SequenceLayout& layout, int shift);

// w0 * sum_{t=1}^{T-n} |x_{t+n} - y^fwd_t| + w1 * sum_{t=n+1}^{T} |x_{t-n} - y^rev_t|
template <typename T>
Var<T> biapc_loss(Var<T> pred_fwd, Var<T> pred_rev, Var<T> features, const SequenceLayout& layout, int shift,
                  std::array<double, 2> weights = {0.5, 0.5});

// sum over masked frames of |x_t - y_t|
template <typename T>
Var<T> mpc_loss(Var<T> pred, Var<T> features, std::span<const std::uint8_t> mask);

template <typename T>
struct MpcMask {
  Tensor<T> masked;                 // features with masked frames zeroed
  std::vector<std::uint8_t> mask;   // one entry per row
};

// Masks each real frame independently with probability ratio. Every
// sequence gets at least one masked frame.
template <typename T>
MpcMask<T> mpc_mask(const Tensor<T>& features, const SequenceLayout& layout, double ratio, Rng& rng);

// Number of frames that contribute a target under the objective.
std::size_t contributing_frames(const ObjectiveConfig& config, const SequenceLayout& layout,
                                std::span<const std::uint8_t> mpc_mask = {},
                                std::span<const std::int32_t> labels = {});

// Single-sequence conveniences on T x D matrices, for direct evaluation.
double ce_loss(const Tensor<double>& logits, const AlignmentLabels& labels);
double apc_loss(const Tensor<double>& pred, const Tensor<double>& features, int shift);
double biapc_loss(const Tensor<double>& pred_fwd, const Tensor<double>& pred_rev, const Tensor<double>& features,
                  int shift, std::array<double, 2> weights = {0.5, 0.5});
double mpc_loss(const Tensor<double>& pred, const Tensor<double>& features, std::span<const std::uint8_t> mask);

}  // namespace bapc
