#include "bapc/model.hpp"

#include <cmath>
#include <cstdio>
#include <set>
#include <stdexcept>

namespace bapc {

std::string_view to_string(ModelKind kind) { return kind == ModelKind::kUni ? "uni" : "bi"; }

std::string_view to_string(HeadKind head) {
  switch (head) {
    case HeadKind::kPrediction:
      return "prediction";
    case HeadKind::kReconstruction:
      return "reconstruction";
    case HeadKind::kClassifier:
      return "classifier";
  }
  return "unknown";
}

std::string_view to_string(RunMode mode) { return mode == RunMode::kPretrain ? "pretrain" : "full"; }

ModelKind parse_model_kind(std::string_view text) {
  if (text == "uni") return ModelKind::kUni;
  if (text == "bi") return ModelKind::kBi;
  throw std::invalid_argument("unknown model kind '" + std::string(text) + "' (expected uni or bi)");
}

HeadKind parse_head_kind(std::string_view text) {
  if (text == "prediction") return HeadKind::kPrediction;
  if (text == "reconstruction") return HeadKind::kReconstruction;
  if (text == "classifier") return HeadKind::kClassifier;
  throw std::invalid_argument("unknown head kind '" + std::string(text) + "'");
}

RunMode parse_run_mode(std::string_view text) {
  if (text == "pretrain") return RunMode::kPretrain;
  if (text == "full") return RunMode::kFull;
  throw std::invalid_argument("unknown run mode '" + std::string(text) + "'");
}

// ---------------------------------------------------------------------------
// ModelSpec

ModelSpec ModelSpec::full_scale_uni() {
  ModelSpec spec;
  spec.kind = ModelKind::kUni;
  spec.num_layers = 4;
  spec.hidden = 800;
  return spec;
}

ModelSpec ModelSpec::full_scale_bi() {
  ModelSpec spec;
  spec.kind = ModelKind::kBi;
  spec.num_layers = 4;
  spec.hidden = 512;
  return spec;
}

void ModelSpec::validate() const {
  if (num_layers < 1) throw std::invalid_argument("model spec: num_layers must be >= 1");
  if (hidden < 1) throw std::invalid_argument("model spec: hidden must be >= 1");
  if (input_dim < 1) throw std::invalid_argument("model spec: input_dim must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("model spec: dropout must be in [0, 1)");
  if (head == HeadKind::kClassifier && num_classes < 2) {
    throw std::invalid_argument("model spec: classifier head needs num_classes >= 2");
  }
}

int ModelSpec::head_input_dim() const { return head == HeadKind::kPrediction ? hidden : top_width(); }

int ModelSpec::output_dim() const { return head == HeadKind::kClassifier ? num_classes : input_dim; }

std::map<std::string, std::string> ModelSpec::to_fields() const {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", dropout);
  return {
      {"kind", std::string(to_string(kind))},
      {"num_layers", std::to_string(num_layers)},
      {"hidden", std::to_string(hidden)},
      {"input_dim", std::to_string(input_dim)},
      {"dropout", buf},
      {"batchnorm", batchnorm ? "true" : "false"},
      {"head", std::string(to_string(head))},
      {"num_classes", std::to_string(num_classes)},
  };
}

ModelSpec ModelSpec::from_fields(const std::map<std::string, std::string>& fields) {
  auto get = [&](const std::string& key) -> const std::string& {
    auto it = fields.find(key);
    if (it == fields.end()) throw std::invalid_argument("model spec: missing field '" + key + "'");
    return it->second;
  };
  ModelSpec spec;
  spec.kind = parse_model_kind(get("kind"));
  spec.num_layers = std::stoi(get("num_layers"));
  spec.hidden = std::stoi(get("hidden"));
  spec.input_dim = std::stoi(get("input_dim"));
  spec.dropout = std::stod(get("dropout"));
  spec.batchnorm = get("batchnorm") == "true";
  spec.head = parse_head_kind(get("head"));
  spec.num_classes = std::stoi(get("num_classes"));
  spec.validate();
  return spec;
}

bool is_head_tensor(const std::string& name) { return name.rfind("head.", 0) == 0; }

bool is_cross_tensor(const std::string& name) { return name.find("_cross.") != std::string::npos; }

// ---------------------------------------------------------------------------
// Layers

template <typename T>
Var<T> lstm_layer_forward(LstmLayerParams<T>& params, Var<T> inputs, const SequenceLayout& layout, bool reversed,
                          const LstmInitialState<T>* initial, Parameter<T>* cross_weight, Var<T> cross_input) {
  Tape<T>& tape = *inputs.tape;
  const std::size_t hidden = params.hidden();
  const std::size_t batch = layout.batch;
  const Tensor<T>& X = inputs.value();
  if (X.rows() != layout.rows() || X.cols() != params.input_dim()) {
    throw std::invalid_argument("lstm layer: input " + shape_string(X.shape()) + " does not match " +
                                std::to_string(layout.rows()) + " rows x " + std::to_string(params.input_dim()) +
                                " features");
  }
  if (cross_weight != nullptr && (!cross_input.valid() || cross_input.value().rows() != layout.rows())) {
    throw std::invalid_argument("lstm layer: cross weight given without a matching cross input");
  }

  std::vector<std::size_t> perm;
  if (reversed) {
    perm = layout.reverse_permutation();
    inputs = ops::permute_rows(inputs, std::span<const std::size_t>(perm));
    if (cross_weight != nullptr) cross_input = ops::permute_rows(cross_input, std::span<const std::size_t>(perm));
  }

  Var<T> proj =
      ops::add_row(ops::matmul(inputs, ops::transpose(tape.parameter(params.w_in))), tape.parameter(params.bias));
  if (cross_weight != nullptr) {
    proj = ops::add(proj, ops::matmul(cross_input, ops::transpose(tape.parameter(*cross_weight))));
  }
  Var<T> w_rec_t = ops::transpose(tape.parameter(params.w_rec));

  Var<T> h;
  Var<T> c;
  if (initial != nullptr) {
    if (initial->h.rows() != batch || initial->h.cols() != hidden || !initial->c.same_shape(initial->h)) {
      throw std::invalid_argument("lstm layer: initial state shape mismatch");
    }
    h = tape.constant(initial->h);
    c = tape.constant(initial->c);
  } else {
    c = tape.constant(Tensor<T>::matrix(batch, hidden));
  }

  std::vector<Var<T>> steps;
  steps.reserve(layout.max_len);
  for (std::size_t t = 0; t < layout.max_len; ++t) {
    Var<T> gates = ops::slice_rows(proj, t * batch, (t + 1) * batch);
    if (h.valid()) gates = ops::add(gates, ops::matmul(h, w_rec_t));
    LstmCellOutput<T> cell = ops::lstm_cell(gates, c);
    h = cell.h;
    c = cell.c;
    steps.push_back(h);
  }
  Var<T> out = ops::stack_rows(std::span<const Var<T>>(steps));
  if (reversed) out = ops::permute_rows(out, std::span<const std::size_t>(perm));
  return out;
}

template <typename T>
std::pair<Var<T>, Var<T>> blstm_layer_forward(BlstmLayerParams<T>& params, Var<T> fwd_in, Var<T> rev_in,
                                              const SequenceLayout& layout, RunMode mode) {
  if (mode == RunMode::kPretrain || !params.has_cross()) {
    if (mode == RunMode::kPretrain && !params.cross_frozen()) {
      throw std::logic_error(
          "illegal information exchange: cross-direction weights must be frozen in pretrain mode");
    }
    Var<T> fh = lstm_layer_forward(params.fwd_same, fwd_in, layout, false);
    Var<T> rh = lstm_layer_forward(params.rev_same, rev_in, layout, true);
    return {fh, rh};
  }
  Var<T> fh = lstm_layer_forward<T>(params.fwd_same, fwd_in, layout, false, nullptr, &*params.fwd_cross, rev_in);
  Var<T> rh = lstm_layer_forward<T>(params.rev_same, rev_in, layout, true, nullptr, &*params.rev_cross, fwd_in);
  return {fh, rh};
}

// ---------------------------------------------------------------------------
// AcousticModel

namespace {

template <typename T>
Parameter<T> uniform_param(std::string name, Shape shape, double bound, Rng& rng) {
  Tensor<T> value(std::move(shape));
  for (T& v : value.values()) v = static_cast<T>(uniform(rng, -bound, bound));
  return Parameter<T>(std::move(name), std::move(value));
}

template <typename T>
LstmLayerParams<T> make_lstm(const std::string& prefix, std::size_t input_dim, std::size_t hidden, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
  LstmLayerParams<T> p;
  p.w_in = uniform_param<T>(prefix + "W_in", {4 * hidden, input_dim}, bound, rng);
  p.w_rec = uniform_param<T>(prefix + "W_rec", {4 * hidden, hidden}, bound, rng);
  Tensor<T> bias = Tensor<T>::vector(4 * hidden);
  for (std::size_t j = hidden; j < 2 * hidden; ++j) bias[j] = T(1);
  p.bias = Parameter<T>(prefix + "bias", std::move(bias));
  return p;
}

template <typename T>
BatchNormLayer<T> make_norm(const std::string& prefix, std::size_t features) {
  BatchNormLayer<T> bn;
  bn.gamma = Parameter<T>(prefix + "gamma", Tensor<T>(Shape{features}, std::vector<T>(features, T(1))));
  bn.beta = Parameter<T>(prefix + "beta", Tensor<T>::vector(features));
  bn.stats = BatchNormStats<T>(features);
  return bn;
}

template <typename T>
Var<T> apply_head(Tape<T>& tape, LinearHead<T>& head, Var<T> x) {
  return ops::add_row(ops::matmul(x, ops::transpose(tape.parameter(head.weight))), tape.parameter(head.bias));
}

}  // namespace

template <typename T>
AcousticModel<T>::AcousticModel(ModelSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
  spec_.validate();
  Rng rng = make_rng(seed, "init");
  const auto hidden = static_cast<std::size_t>(spec_.hidden);
  for (int l = 0; l < spec_.num_layers; ++l) {
    const std::string prefix = "layer" + std::to_string(l + 1) + ".";
    const std::size_t in_dim = l == 0 ? static_cast<std::size_t>(spec_.input_dim) : hidden;
    if (spec_.kind == ModelKind::kUni) {
      uni_layers_.push_back(make_lstm<T>(prefix, in_dim, hidden, rng));
      if (spec_.batchnorm) norms_.push_back(make_norm<T>(prefix + "bn.", hidden));
    } else {
      BlstmLayerParams<T> layer;
      layer.fwd_same = make_lstm<T>(prefix + "fwd_same.", in_dim, hidden, rng);
      layer.rev_same = make_lstm<T>(prefix + "rev_same.", in_dim, hidden, rng);
      if (l > 0) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
        layer.fwd_cross = uniform_param<T>(prefix + "fwd_cross.W_in", {4 * hidden, hidden}, bound, rng);
        layer.rev_cross = uniform_param<T>(prefix + "rev_cross.W_in", {4 * hidden, hidden}, bound, rng);
      }
      bi_layers_.push_back(std::move(layer));
      if (spec_.batchnorm) {
        norms_.push_back(make_norm<T>(prefix + "fwd_bn.", hidden));
        norms_.push_back(make_norm<T>(prefix + "rev_bn.", hidden));
      }
    }
  }
  const auto head_in = static_cast<std::size_t>(spec_.head_input_dim());
  const auto head_out = static_cast<std::size_t>(spec_.output_dim());
  head_.weight = uniform_param<T>("head.W", {head_out, head_in}, 1.0 / std::sqrt(static_cast<double>(head_in)), rng);
  head_.bias = Parameter<T>("head.bias", Tensor<T>::vector(head_out));
}

template <typename T>
ModelOutputs<T> AcousticModel<T>::forward(Tape<T>& tape, Var<T> features, const SequenceLayout& layout,
                                          RunMode mode, bool train, Rng* dropout_rng) {
  if (features.tape != &tape) throw std::invalid_argument("model forward: features belong to another tape");
  const Tensor<T>& X = features.value();
  if (X.cols() != static_cast<std::size_t>(spec_.input_dim) || X.rows() != layout.rows()) {
    throw std::invalid_argument("model forward: features " + shape_string(X.shape()) + " do not match " +
                                std::to_string(layout.rows()) + " rows x " + std::to_string(spec_.input_dim));
  }
  if (mode == RunMode::kPretrain && spec_.head != HeadKind::kPrediction) {
    throw std::invalid_argument("pretrain mode requires the prediction head");
  }
  if (spec_.kind == ModelKind::kBi && spec_.head == HeadKind::kPrediction && mode != RunMode::kPretrain) {
    throw std::invalid_argument("the shared prediction head on a bidirectional model requires pretrain mode");
  }
  const bool use_dropout = train && spec_.dropout > 0.0;
  if (use_dropout && dropout_rng == nullptr) throw std::invalid_argument("model forward: dropout needs an rng");

  const std::vector<std::uint8_t> valid = layout.valid_rows();
  auto post = [&](Var<T> h, std::size_t norm_index) {
    if (spec_.batchnorm) {
      BatchNormLayer<T>& bn = norms_[norm_index];
      h = ops::batch_norm(h, tape.parameter(bn.gamma), tape.parameter(bn.beta),
                          std::span<const std::uint8_t>(valid), bn.stats, train);
    }
    if (use_dropout) h = ops::dropout(h, spec_.dropout, *dropout_rng);
    return h;
  };

  ModelOutputs<T> out;
  if (spec_.kind == ModelKind::kUni) {
    Var<T> h = features;
    for (std::size_t l = 0; l < uni_layers_.size(); ++l) {
      Var<T> raw = lstm_layer_forward(uni_layers_[l], h, layout);
      out.fwd_hidden.push_back(raw);
      h = post(raw, l);
    }
    out.output = apply_head(tape, head_, h);
    if (spec_.head == HeadKind::kPrediction) out.fwd_output = out.output;
    return out;
  }

  Var<T> f = features;
  Var<T> r = features;
  for (std::size_t l = 0; l < bi_layers_.size(); ++l) {
    auto [fh, rh] = blstm_layer_forward(bi_layers_[l], f, r, layout, mode);
    out.fwd_hidden.push_back(fh);
    out.rev_hidden.push_back(rh);
    f = post(fh, 2 * l);
    r = post(rh, 2 * l + 1);
  }
  if (spec_.head == HeadKind::kPrediction) {
    out.fwd_output = apply_head(tape, head_, f);
    out.rev_output = apply_head(tape, head_, r);
  } else {
    out.output = apply_head(tape, head_, ops::concat_cols(f, r));
  }
  return out;
}

template <typename T>
std::vector<Parameter<T>*> AcousticModel<T>::parameters() {
  std::vector<Parameter<T>*> out;
  auto add_lstm = [&](LstmLayerParams<T>& p) {
    out.push_back(&p.w_in);
    out.push_back(&p.w_rec);
    out.push_back(&p.bias);
  };
  for (auto& layer : uni_layers_) add_lstm(layer);
  for (auto& layer : bi_layers_) {
    add_lstm(layer.fwd_same);
    add_lstm(layer.rev_same);
    if (layer.has_cross()) {
      out.push_back(&*layer.fwd_cross);
      out.push_back(&*layer.rev_cross);
    }
  }
  for (auto& bn : norms_) {
    out.push_back(&bn.gamma);
    out.push_back(&bn.beta);
  }
  out.push_back(&head_.weight);
  out.push_back(&head_.bias);
  return out;
}

template <typename T>
std::vector<const Parameter<T>*> AcousticModel<T>::parameters() const {
  auto mutable_params = const_cast<AcousticModel*>(this)->parameters();
  return {mutable_params.begin(), mutable_params.end()};
}

template <typename T>
std::vector<Parameter<T>*> AcousticModel<T>::trainable_parameters() {
  std::vector<Parameter<T>*> out;
  for (Parameter<T>* p : parameters()) {
    if (p->trainable) out.push_back(p);
  }
  return out;
}

template <typename T>
std::vector<Parameter<T>*> AcousticModel<T>::cross_parameters() {
  std::vector<Parameter<T>*> out;
  for (auto& layer : bi_layers_) {
    if (!layer.has_cross()) continue;
    out.push_back(&*layer.fwd_cross);
    out.push_back(&*layer.rev_cross);
  }
  return out;
}

template <typename T>
void AcousticModel<T>::set_cross_trainable(bool trainable) {
  for (Parameter<T>* p : cross_parameters()) p->trainable = trainable;
}

template <typename T>
void AcousticModel<T>::zero_grad() {
  for (Parameter<T>* p : parameters()) p->zero_grad();
}

template <typename T>
void AcousticModel<T>::visit_tensors(const std::function<void(const std::string&, Tensor<T>&)>& fn) {
  for (Parameter<T>* p : parameters()) fn(p->name, p->value);
  for (BatchNormLayer<T>& bn : norms_) {
    const std::string prefix = bn.gamma.name.substr(0, bn.gamma.name.size() - std::string("gamma").size());
    fn(prefix + "running_mean", bn.stats.running_mean);
    fn(prefix + "running_var", bn.stats.running_var);
  }
}

template <typename T>
TensorMap AcousticModel<T>::export_state() const {
  TensorMap out;
  const_cast<AcousticModel*>(this)->visit_tensors(
      [&](const std::string& name, Tensor<T>& value) { out.emplace(name, value.template cast<float>()); });
  return out;
}

template <typename T>
void AcousticModel<T>::import_state(const TensorMap& state) {
  std::set<std::string> seen;
  visit_tensors([&](const std::string& name, Tensor<T>& value) {
    auto it = state.find(name);
    if (it == state.end()) throw std::invalid_argument("checkpoint is missing tensor '" + name + "'");
    if (it->second.shape() != value.shape()) {
      throw std::invalid_argument("tensor '" + name + "' has shape " + shape_string(it->second.shape()) +
                                  ", model expects " + shape_string(value.shape()));
    }
    value = it->second.template cast<T>();
    seen.insert(name);
  });
  for (const auto& [name, tensor] : state) {
    if (seen.count(name) == 0) throw std::invalid_argument("checkpoint has unexpected tensor '" + name + "'");
  }
}

template <typename T>
std::vector<std::string> AcousticModel<T>::import_matching(const TensorMap& state,
                                                           bool (*keep)(const std::string&)) {
  std::vector<std::string> copied;
  visit_tensors([&](const std::string& name, Tensor<T>& value) {
    if (keep != nullptr && !keep(name)) return;
    auto it = state.find(name);
    if (it == state.end()) return;
    if (it->second.shape() != value.shape()) {
      throw std::invalid_argument("tensor '" + name + "' has shape " + shape_string(it->second.shape()) +
                                  ", model expects " + shape_string(value.shape()));
    }
    value = it->second.template cast<T>();
    copied.push_back(name);
  });
  return copied;
}

template Var<float> lstm_layer_forward(LstmLayerParams<float>&, Var<float>, const SequenceLayout&, bool,
                                       const LstmInitialState<float>*, Parameter<float>*, Var<float>);
template Var<double> lstm_layer_forward(LstmLayerParams<double>&, Var<double>, const SequenceLayout&, bool,
                                        const LstmInitialState<double>*, Parameter<double>*, Var<double>);
template std::pair<Var<float>, Var<float>> blstm_layer_forward(BlstmLayerParams<float>&, Var<float>, Var<float>,
                                                               const SequenceLayout&, RunMode);
template std::pair<Var<double>, Var<double>> blstm_layer_forward(BlstmLayerParams<double>&, Var<double>,
                                                                 Var<double>, const SequenceLayout&, RunMode);
template class AcousticModel<float>;
template class AcousticModel<double>;

}  // namespace bapc
