#pragma once

// Reverse-mode differentiation over a tape of tensor-level primitives.
//
// Each op computes its value eagerly, pushes a node onto the active tape and,
// when any input needs a gradient, records an adjoint closure. backward()
// replays the closures in exact reverse order of recording and finally adds
// leaf gradients into the bound Parameter::grad buffers.

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <unordered_map>
#include <vector>

#include "bapc/rng.hpp"
#include "bapc/sequence.hpp"
#include "bapc/tensor.hpp"

namespace bapc {

template <typename T>
class Tape;

template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  bool valid() const { return tape != nullptr; }
  const Tensor<T>& value() const;
};

template <typename T>
class Tape {
 public:
  // A non-recording tape evaluates ops without keeping adjoints (inference).
  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Tensor<T> value);
  // Leaf bound to a parameter. Repeated calls with the same parameter return
  // the same leaf, so multiple uses accumulate into one gradient.
  Var<T> parameter(Parameter<T>& param);

  const Tensor<T>& value(Var<T> v) const { return nodes_.at(v.id).value; }
  // Empty tensor when no gradient reached the node.
  const Tensor<T>& grad(Var<T> v) const { return nodes_.at(v.id).grad; }

  void backward(Var<T> loss);

  bool recording() const { return recording_; }
  std::size_t num_nodes() const { return nodes_.size(); }
  std::size_t num_records() const { return records_.size(); }
  // Record indices in the order backward() visited them.
  const std::vector<std::size_t>& replay_log() const { return replay_log_; }

  // Op-author interface.
  Var<T> push(Tensor<T> value, bool requires_grad);
  bool requires_grad(Var<T> v) const { return nodes_.at(v.id).requires_grad; }
  void record(std::function<void()> adjoint) { records_.push_back(std::move(adjoint)); }
  const Tensor<T>* incoming_grad(Var<T> v) const {
    const Tensor<T>& g = nodes_.at(v.id).grad;
    return g.empty() ? nullptr : &g;
  }
  Tensor<T>& grad_buffer(Var<T> v);

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
  };

  bool recording_;
  bool backward_done_ = false;
  std::deque<Node> nodes_;
  std::vector<std::function<void()>> records_;
  std::vector<std::pair<Parameter<T>*, std::size_t>> bound_params_;
  std::unordered_map<const Parameter<T>*, std::size_t> param_nodes_;
  std::vector<std::size_t> replay_log_;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return tape->value(*this);
}

template <typename T>
struct BatchNormStats {
  Tensor<T> running_mean;
  Tensor<T> running_var;

  BatchNormStats() = default;
  explicit BatchNormStats(std::size_t features)
      : running_mean(Tensor<T>::vector(features)), running_var(Shape{features}, std::vector<T>(features, T(1))) {}
};

struct BatchNormOptions {
  // Retention of the running moments: running = momentum * running + (1 - momentum) * batch.
  double momentum = 0.9;
  double variance_floor = 1e-5;
};

template <typename T>
struct LstmCellOutput {
  Var<T> h;
  Var<T> c;
};

namespace ops {

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b);
template <typename T>
Var<T> transpose(Var<T> a);
template <typename T>
Var<T> add(Var<T> a, Var<T> b);
// x (n x m) plus a bias row (m values) broadcast over rows.
template <typename T>
Var<T> add_row(Var<T> x, Var<T> bias);
template <typename T>
Var<T> mul(Var<T> a, Var<T> b);
template <typename T>
Var<T> scale(Var<T> x, T factor);
template <typename T>
Var<T> sigmoid(Var<T> x);
template <typename T>
Var<T> tanh(Var<T> x);
template <typename T>
Var<T> concat_cols(Var<T> a, Var<T> b);
template <typename T>
Var<T> slice_cols(Var<T> x, std::size_t begin, std::size_t end);
template <typename T>
Var<T> slice_rows(Var<T> x, std::size_t begin, std::size_t end);
template <typename T>
Var<T> stack_rows(std::span<const Var<T>> parts);
// out.row(i) = x.row(perm[i])
template <typename T>
Var<T> permute_rows(Var<T> x, std::span<const std::size_t> perm);
template <typename T>
Var<T> softmax_rows(Var<T> x);
template <typename T>
Var<T> sum(Var<T> x);

// Fused LSTM cell. gates is B x 4H in (input, forget, cell, output) order.
template <typename T>
LstmCellOutput<T> lstm_cell(Var<T> gates, Var<T> c_prev);

// Per-feature normalization over the valid rows. Invalid rows produce zeros.
template <typename T>
Var<T> batch_norm(Var<T> x, Var<T> gamma, Var<T> beta, std::span<const std::uint8_t> valid_rows,
                  BatchNormStats<T>& stats, bool train, const BatchNormOptions& options = {});

// Inverted dropout; identity when rate == 0.
template <typename T>
Var<T> dropout(Var<T> x, double rate, Rng& rng);

// sum over rows with labels[r] >= 0 of -log softmax(logits_r)[labels[r]].
template <typename T>
Var<T> softmax_cross_entropy(Var<T> logits, std::span<const std::int32_t> labels);

// shift > 0: sum_b sum_{t < len_b - shift} |target(t + shift, b) - pred(t, b)|
// shift < 0: sum_b sum_{t >= -shift}       |target(t + shift, b) - pred(t, b)|
template <typename T>
Var<T> shifted_l1(Var<T> pred, Var<T> target, const SequenceLayout& layout, int shift);

// sum over rows with mask[r] != 0 of |target_r - pred_r|
template <typename T>
Var<T> masked_l1(Var<T> pred, Var<T> target, std::span<const std::uint8_t> mask);

}  // namespace ops

}  // namespace bapc
