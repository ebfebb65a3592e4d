#include "bapc/objectives.hpp"

#include <stdexcept>

namespace bapc {

std::string_view to_string(ObjectiveKind kind) {
  switch (kind) {
    case ObjectiveKind::kCrossEntropy:
      return "ce";
    case ObjectiveKind::kApc:
      return "apc";
    case ObjectiveKind::kBiApc:
      return "biapc";
    case ObjectiveKind::kMpc:
      return "mpc";
  }
  return "unknown";
}

ObjectiveKind parse_objective(std::string_view text) {
  if (text == "ce") return ObjectiveKind::kCrossEntropy;
  if (text == "apc") return ObjectiveKind::kApc;
  if (text == "biapc") return ObjectiveKind::kBiApc;
  if (text == "mpc") return ObjectiveKind::kMpc;
  throw std::invalid_argument("unknown objective '" + std::string(text) + "' (expected ce, apc, biapc or mpc)");
}

void ObjectiveConfig::validate() const {
  if (shift < 1) throw std::invalid_argument("objective: shift must be >= 1");
  if (!(mask_ratio > 0.0 && mask_ratio < 1.0)) throw std::invalid_argument("objective: mask_ratio must be in (0, 1)");
  if (direction_weights[0] < 0.0 || direction_weights[1] < 0.0) {
    throw std::invalid_argument("objective: direction weights must be non-negative");
  }
}

template <typename T>
Var<T> ce_loss(Var<T> logits, std::span<const std::int32_t> labels) {
  return ops::softmax_cross_entropy(logits, labels);
}

template <typename T>
Var<T> apc_loss(Var<T> pred, Var<T> features, const SequenceLayout& layout, int shift) {
  if (shift < 1) throw std::invalid_argument("apc loss: shift must be >= 1");
  return ops::shifted_l1(pred, features, layout, shift);
}

template <typename T>
Var<T> biapc_loss(Var<T> pred_fwd, Var<T> pred_rev, Var<T> features, const SequenceLayout& layout, int shift,
                  std::array<double, 2> weights) {
  if (shift < 1) throw std::invalid_argument("bi-apc loss: shift must be >= 1");
  Var<T> fwd = ops::shifted_l1(pred_fwd, features, layout, shift);
  Var<T> rev = ops::shifted_l1(pred_rev, features, layout, -shift);
  return ops::add(ops::scale(fwd, static_cast<T>(weights[0])), ops::scale(rev, static_cast<T>(weights[1])));
}

template <typename T>
Var<T> mpc_loss(Var<T> pred, Var<T> features, std::span<const std::uint8_t> mask) {
  bool any = false;
  for (auto m : mask) any = any || m != 0;
  if (!any) throw std::invalid_argument("mpc loss: empty mask");
  return ops::masked_l1(pred, features, mask);
}

template <typename T>
MpcMask<T> mpc_mask(const Tensor<T>& features, const SequenceLayout& layout, double ratio, Rng& rng) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw std::invalid_argument("mpc mask: ratio must be in (0, 1)");
  if (features.rows() != layout.rows()) throw std::invalid_argument("mpc mask: features do not match layout");
  MpcMask<T> out{features, std::vector<std::uint8_t>(layout.rows(), 0)};
  for (std::size_t b = 0; b < layout.batch; ++b) {
    bool any = false;
    for (std::size_t t = 0; t < layout.lengths[b]; ++t) {
      if (uniform01(rng) < ratio) {
        out.mask[layout.row(t, b)] = 1;
        any = true;
      }
    }
    if (!any) {
      const auto t = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(layout.lengths[b]));
      out.mask[layout.row(std::min(t, layout.lengths[b] - 1), b)] = 1;
    }
  }
  for (std::size_t r = 0; r < out.mask.size(); ++r) {
    if (out.mask[r] != 0) {
      for (T& v : out.masked.row(r)) v = T(0);
    }
  }
  return out;
}

std::size_t contributing_frames(const ObjectiveConfig& config, const SequenceLayout& layout,
                                std::span<const std::uint8_t> mpc_mask, std::span<const std::int32_t> labels) {
  std::size_t count = 0;
  switch (config.kind) {
    case ObjectiveKind::kApc:
    case ObjectiveKind::kBiApc:
      for (std::size_t len : layout.lengths) {
        if (len > static_cast<std::size_t>(config.shift)) count += len - static_cast<std::size_t>(config.shift);
      }
      break;
    case ObjectiveKind::kMpc:
      for (auto m : mpc_mask) count += m != 0 ? 1 : 0;
      break;
    case ObjectiveKind::kCrossEntropy:
      for (auto l : labels) count += l >= 0 ? 1 : 0;
      break;
  }
  return count;
}

namespace {

void check_same(const Tensor<double>& a, const Tensor<double>& b, const char* what) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument(std::string(what) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                                shape_string(b.shape()));
  }
}

}  // namespace

double ce_loss(const Tensor<double>& logits, const AlignmentLabels& labels) {
  Tape<double> tape(false);
  return tape.value(ce_loss(tape.constant(logits), std::span<const std::int32_t>(labels.labels)))[0];
}

double apc_loss(const Tensor<double>& pred, const Tensor<double>& features, int shift) {
  check_same(pred, features, "apc loss");
  if (features.rows() <= static_cast<std::size_t>(std::max(shift, 0))) {
    throw std::invalid_argument("sequence shorter than shift");
  }
  Tape<double> tape(false);
  const auto layout = SequenceLayout::single(features.rows());
  return tape.value(apc_loss(tape.constant(pred), tape.constant(features), layout, shift))[0];
}

double biapc_loss(const Tensor<double>& pred_fwd, const Tensor<double>& pred_rev, const Tensor<double>& features,
                  int shift, std::array<double, 2> weights) {
  check_same(pred_fwd, features, "bi-apc loss");
  check_same(pred_rev, features, "bi-apc loss");
  if (features.rows() <= static_cast<std::size_t>(std::max(shift, 0))) {
    throw std::invalid_argument("sequence shorter than shift");
  }
  Tape<double> tape(false);
  const auto layout = SequenceLayout::single(features.rows());
  return tape.value(biapc_loss(tape.constant(pred_fwd), tape.constant(pred_rev), tape.constant(features), layout,
                               shift, weights))[0];
}

double mpc_loss(const Tensor<double>& pred, const Tensor<double>& features, std::span<const std::uint8_t> mask) {
  check_same(pred, features, "mpc loss");
  Tape<double> tape(false);
  return tape.value(mpc_loss(tape.constant(pred), tape.constant(features), mask))[0];
}

#define BAPC_INSTANTIATE_OBJECTIVES(T)                                                                    \
  template Var<T> ce_loss(Var<T>, std::span<const std::int32_t>);                                         \
  template Var<T> apc_loss(Var<T>, Var<T>, const SequenceLayout&, int);                                   \
  template Var<T> biapc_loss(Var<T>, Var<T>, Var<T>, const SequenceLayout&, int, std::array<double, 2>); \
  template Var<T> mpc_loss(Var<T>, Var<T>, std::span<const std::uint8_t>);                                \
  template MpcMask<T> mpc_mask(const Tensor<T>&, const SequenceLayout&, double, Rng&);

BAPC_INSTANTIATE_OBJECTIVES(float)
BAPC_INSTANTIATE_OBJECTIVES(double)

#undef BAPC_INSTANTIATE_OBJECTIVES

}  // namespace bapc
