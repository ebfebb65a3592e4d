#pragma once

// Uni-directional LSTM stacks and the direction-partitioned BLSTM.
//
// A BLSTM layer above the first keeps four weight groups:
//   fwd_same   previous forward stream + forward recurrence -> forward cell
//   rev_same   previous reverse stream + reverse recurrence -> reverse cell
//   fwd_cross  previous reverse stream -> forward cell
//   rev_cross  previous forward stream -> reverse cell
// In pretrain mode the cross inputs are zeroed and the cross weights must be
// frozen, so each output stream depends on one temporal direction only. In
// full mode the layer is an ordinary BLSTM over the concatenated streams.
// The first layer has no cross weights; both directions read the features.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "bapc/autodiff.hpp"
#include "bapc/rng.hpp"
#include "bapc/sequence.hpp"
#include "bapc/tensor.hpp"

namespace bapc {

enum class ModelKind { kUni, kBi };
enum class HeadKind {
  kPrediction,      // shared per-direction map from hidden state to feature space
  kReconstruction,  // map from the concatenated streams to feature space (masked reconstruction)
  kClassifier,      // per-frame class logits
};
enum class RunMode { kPretrain, kFull };

std::string_view to_string(ModelKind kind);
std::string_view to_string(HeadKind head);
std::string_view to_string(RunMode mode);
ModelKind parse_model_kind(std::string_view text);
HeadKind parse_head_kind(std::string_view text);
RunMode parse_run_mode(std::string_view text);

using TensorMap = std::map<std::string, Tensor<float>>;

struct ModelSpec {
  ModelKind kind = ModelKind::kBi;
  int num_layers = 4;
  int hidden = 512;  // per direction
  int input_dim = 80;
  double dropout = 0.2;
  bool batchnorm = true;
  HeadKind head = HeadKind::kPrediction;
  int num_classes = 0;  // classifier head only

  static ModelSpec full_scale_uni();
  static ModelSpec full_scale_bi();

  void validate() const;
  // Width of the concatenated top-layer output.
  int top_width() const { return kind == ModelKind::kBi ? 2 * hidden : hidden; }
  int head_input_dim() const;
  int output_dim() const;

  std::map<std::string, std::string> to_fields() const;
  static ModelSpec from_fields(const std::map<std::string, std::string>& fields);

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

template <typename T>
struct LstmLayerParams {
  Parameter<T> w_in;   // 4H x D_in
  Parameter<T> w_rec;  // 4H x H
  Parameter<T> bias;   // 4H, gate order (input, forget, cell, output)

  std::size_t hidden() const { return w_rec.value.cols(); }
  std::size_t input_dim() const { return w_in.value.cols(); }
};

template <typename T>
struct BlstmLayerParams {
  LstmLayerParams<T> fwd_same;
  LstmLayerParams<T> rev_same;
  std::optional<Parameter<T>> fwd_cross;  // 4H x H, absent on the first layer
  std::optional<Parameter<T>> rev_cross;

  bool has_cross() const { return fwd_cross.has_value(); }
  bool cross_frozen() const {
    return !has_cross() || (!fwd_cross->trainable && !rev_cross->trainable);
  }
};

template <typename T>
struct BatchNormLayer {
  Parameter<T> gamma;
  Parameter<T> beta;
  BatchNormStats<T> stats;
};

template <typename T>
struct LinearHead {
  Parameter<T> weight;  // out x in
  Parameter<T> bias;    // out
};

template <typename T>
struct LstmInitialState {
  Tensor<T> h;  // B x H
  Tensor<T> c;  // B x H
};

// Runs one LSTM direction over a padded minibatch (rows in SequenceLayout
// order) and returns the hidden sequence in the same order. With
// reversed = true every sequence is processed from its last real frame
// backwards. The optional cross term adds cross_weight * cross_input to the
// input projection.
template <typename T>
Var<T> lstm_layer_forward(LstmLayerParams<T>& params, Var<T> inputs, const SequenceLayout& layout,
                          bool reversed = false, const LstmInitialState<T>* initial = nullptr,
                          Parameter<T>* cross_weight = nullptr, Var<T> cross_input = {});

// Returns (forward stream, reverse stream). In pretrain mode the forward
// cell sees fwd_in only and the reverse cell sees rev_in only; it throws
// "illegal information exchange" if the cross weights are trainable.
template <typename T>
std::pair<Var<T>, Var<T>> blstm_layer_forward(BlstmLayerParams<T>& params, Var<T> fwd_in, Var<T> rev_in,
                                              const SequenceLayout& layout, RunMode mode);

template <typename T>
struct ModelOutputs {
  // Classifier logits or reconstruction (bi full mode), or the uni model's
  // prediction. Unset for the bi model in pretrain mode.
  Var<T> output;
  // Prediction head applied to the top forward / reverse stream. For a uni
  // model fwd_output aliases output.
  Var<T> fwd_output;
  Var<T> rev_output;
  // Raw LSTM outputs per layer, before normalization and dropout.
  std::vector<Var<T>> fwd_hidden;
  std::vector<Var<T>> rev_hidden;
};

template <typename T>
class AcousticModel {
 public:
  AcousticModel(ModelSpec spec, std::uint64_t seed);

  const ModelSpec& spec() const { return spec_; }

  // Applies every recurrent layer followed by batch normalization and
  // dropout, then the head. dropout_rng is required when train is true and
  // dropout > 0.
  ModelOutputs<T> forward(Tape<T>& tape, Var<T> features, const SequenceLayout& layout, RunMode mode,
                          bool train, Rng* dropout_rng = nullptr);

  std::vector<Parameter<T>*> parameters();
  std::vector<const Parameter<T>*> parameters() const;
  std::vector<Parameter<T>*> trainable_parameters();
  std::vector<Parameter<T>*> cross_parameters();
  void set_cross_trainable(bool trainable);
  void zero_grad();

  std::vector<LstmLayerParams<T>>& uni_layers() { return uni_layers_; }
  std::vector<BlstmLayerParams<T>>& bi_layers() { return bi_layers_; }
  std::vector<BatchNormLayer<T>>& norms() { return norms_; }
  LinearHead<T>& head() { return head_; }

  // Named tensors including batch-norm running moments.
  TensorMap export_state() const;
  // Requires exactly the model's tensor names with matching shapes.
  void import_state(const TensorMap& state);
  // Copies every tensor whose name is present in both, ignoring the rest.
  // Throws naming the tensor on a shape mismatch.
  std::vector<std::string> import_matching(const TensorMap& state, bool (*keep)(const std::string&) = nullptr);

  template <typename U>
  AcousticModel<U> converted() const {
    AcousticModel<U> out(spec_, 0);
    out.import_state(export_state());
    auto src = parameters();
    auto dst = out.parameters();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i]->trainable = src[i]->trainable;
    return out;
  }

 private:
  void visit_tensors(const std::function<void(const std::string&, Tensor<T>&)>& fn);

  ModelSpec spec_;
  std::vector<LstmLayerParams<T>> uni_layers_;
  std::vector<BlstmLayerParams<T>> bi_layers_;
  // Uni: one per layer. Bi: forward and reverse stream per layer, interleaved.
  std::vector<BatchNormLayer<T>> norms_;
  LinearHead<T> head_;
};

bool is_head_tensor(const std::string& name);
bool is_cross_tensor(const std::string& name);

}  // namespace bapc
