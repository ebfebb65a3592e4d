#include "bapc/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace bapc {

TrainConfig TrainConfig::pretrain_defaults() {
  TrainConfig c;
  c.objective.kind = ObjectiveKind::kBiApc;
  c.epochs = 8;
  c.lr0 = 1e-3;
  c.hold_epochs = 2;
  c.lambda = 0.1;
  return c;
}

TrainConfig TrainConfig::finetune_defaults() {
  TrainConfig c;
  c.objective.kind = ObjectiveKind::kCrossEntropy;
  c.epochs = 15;
  c.lr0 = 2e-4;
  c.hold_epochs = 2;
  c.lambda = 0.01;
  return c;
}

void TrainConfig::validate() const {
  objective.validate();
  if (epochs < 1) throw std::invalid_argument("train config: epochs must be >= 1");
  if (hold_epochs < 0 || hold_epochs >= epochs) {
    throw std::invalid_argument("train config: hold_epochs must be in [0, epochs)");
  }
  if (!(lambda > 0.0 && lambda <= 1.0)) throw std::invalid_argument("train config: lambda must be in (0, 1]");
  if (!(lr0 > 0.0)) throw std::invalid_argument("train config: lr0 must be positive");
  if (batch_size < 1) throw std::invalid_argument("train config: batch_size must be >= 1");
  if (avg_last_k < 1 || avg_last_k > epochs) throw std::invalid_argument("train config: avg_last_k must be in [1, epochs]");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0) || !(adam_eps > 0.0)) {
    throw std::invalid_argument("train config: invalid Adam hyperparameters");
  }
}

double lr_at_epoch(const TrainConfig& config, int epoch) {
  if (epoch < 1 || epoch > config.epochs) {
    throw std::out_of_range("lr_at_epoch: epoch " + std::to_string(epoch) + " outside [1, " +
                            std::to_string(config.epochs) + "]");
  }
  if (epoch <= config.hold_epochs) return config.lr0;
  const double frac = static_cast<double>(epoch - config.hold_epochs) / (config.epochs - config.hold_epochs);
  return config.lr0 * std::pow(config.lambda, frac);
}

// ---------------------------------------------------------------------------
// Adam

AdamOptimizer::AdamOptimizer(double beta1, double beta2, double eps) : beta1_(beta1), beta2_(beta2), eps_(eps) {}

double AdamOptimizer::step(std::span<Parameter<float>* const> params, double rate, double clip_norm) {
  double sq = 0.0;
  for (const Parameter<float>* p : params) {
    if (p->grad.size() != p->value.size()) {
      throw std::invalid_argument("adam: gradient of '" + p->name + "' does not match its parameter");
    }
    for (float g : p->grad.values()) {
      if (!std::isfinite(g)) throw std::runtime_error("non-finite gradient in tensor '" + p->name + "'");
      sq += static_cast<double>(g) * g;
    }
  }
  const double norm = std::sqrt(sq);
  const double clip_scale = clip_norm > 0.0 && norm > clip_norm ? clip_norm / norm : 1.0;

  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (Parameter<float>* p : params) {
    Moments& mom = moments_[p->name];
    if (mom.m.size() != p->value.size()) {
      mom.m.assign(p->value.size(), 0.0f);
      mom.v.assign(p->value.size(), 0.0f);
    }
    auto values = p->value.values();
    auto grads = p->grad.values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double g = grads[i] * clip_scale;
      const double m = beta1_ * mom.m[i] + (1.0 - beta1_) * g;
      const double v = beta2_ * mom.v[i] + (1.0 - beta2_) * g * g;
      mom.m[i] = static_cast<float>(m);
      mom.v[i] = static_cast<float>(v);
      const double update = rate * (m / bc1) / (std::sqrt(v / bc2) + eps_);
      values[i] = static_cast<float>(values[i] - update);
    }
  }
  return norm;
}

// ---------------------------------------------------------------------------
// Batching

template <typename T>
Batch<T> make_batch(std::span<const FeatureSequence> corpus, std::span<const AlignmentLabels> labels,
                    std::span<const std::size_t> indices) {
  if (indices.empty()) throw std::invalid_argument("make_batch: empty batch");
  std::vector<std::size_t> lengths;
  lengths.reserve(indices.size());
  const std::size_t dim = corpus[indices[0]].dim();
  for (std::size_t i : indices) {
    if (i >= corpus.size()) throw std::out_of_range("make_batch: index out of range");
    if (corpus[i].dim() != dim) throw std::invalid_argument("make_batch: feature dimension differs across corpus");
    lengths.push_back(corpus[i].num_frames());
  }
  Batch<T> batch;
  batch.layout = SequenceLayout(lengths);
  batch.indices.assign(indices.begin(), indices.end());
  batch.features = Tensor<T>::matrix(batch.layout.rows(), dim);
  const bool with_labels = !labels.empty();
  if (with_labels) batch.labels.assign(batch.layout.rows(), -1);
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const FeatureSequence& seq = corpus[indices[b]];
    if (with_labels && labels[indices[b]].labels.size() != seq.num_frames()) {
      throw std::invalid_argument("utterance '" + seq.utterance_id + "': label count differs from frame count");
    }
    for (std::size_t t = 0; t < seq.num_frames(); ++t) {
      const std::size_t r = batch.layout.row(t, b);
      auto src = seq.frames.row(t);
      auto dst = batch.features.row(r);
      for (std::size_t d = 0; d < dim; ++d) dst[d] = static_cast<T>(src[d]);
      if (with_labels) batch.labels[r] = labels[indices[b]].labels[t];
    }
  }
  return batch;
}

std::vector<std::vector<std::size_t>> make_batches(std::span<const FeatureSequence> corpus, int batch_size, Rng& rng) {
  if (batch_size < 1) throw std::invalid_argument("make_batches: batch_size must be >= 1");
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  // Fisher-Yates on our own uniform draws keeps the order independent of
  // the standard library's shuffle implementation.
  for (std::size_t i = order.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i));
    std::swap(order[i - 1], order[std::min(j, i - 1)]);
  }
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return corpus[a].num_frames() < corpus[b].num_frames();
  });
  std::vector<std::vector<std::size_t>> batches;
  const auto bs = static_cast<std::size_t>(batch_size);
  for (std::size_t i = 0; i < order.size(); i += bs) {
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), i + bs)));
  }
  for (std::size_t i = batches.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i));
    std::swap(batches[i - 1], batches[std::min(j, i - 1)]);
  }
  return batches;
}

// ---------------------------------------------------------------------------
// Objectives on models

RunMode run_mode_for(ObjectiveKind kind) {
  return kind == ObjectiveKind::kApc || kind == ObjectiveKind::kBiApc ? RunMode::kPretrain : RunMode::kFull;
}

HeadKind head_for(ObjectiveKind kind) {
  switch (kind) {
    case ObjectiveKind::kCrossEntropy:
      return HeadKind::kClassifier;
    case ObjectiveKind::kMpc:
      return HeadKind::kReconstruction;
    case ObjectiveKind::kApc:
    case ObjectiveKind::kBiApc:
      break;
  }
  return HeadKind::kPrediction;
}

void check_objective(const ModelSpec& spec, ObjectiveKind kind) {
  const std::string name(to_string(kind));
  if (kind == ObjectiveKind::kApc && spec.kind != ModelKind::kUni) {
    throw std::invalid_argument("objective apc trains a uni model; use biapc for a bi model");
  }
  if (kind == ObjectiveKind::kBiApc && spec.kind != ModelKind::kBi) {
    throw std::invalid_argument("objective biapc requires a bi model, got kind=uni");
  }
  if (kind == ObjectiveKind::kMpc && spec.kind != ModelKind::kBi) {
    throw std::invalid_argument("objective mpc requires a bi model, got kind=uni");
  }
  if (spec.head != head_for(kind)) {
    throw std::invalid_argument("objective " + name + " requires the " + std::string(to_string(head_for(kind))) +
                                " head, model has " + std::string(to_string(spec.head)));
  }
}

template <typename T>
ObjectiveResult<T> objective_loss(AcousticModel<T>& model, Tape<T>& tape, const Batch<T>& batch,
                                  const ObjectiveConfig& objective, bool train, Rng* dropout_rng, Rng* mask_rng) {
  check_objective(model.spec(), objective.kind);
  const RunMode mode = run_mode_for(objective.kind);
  ObjectiveResult<T> result;
  switch (objective.kind) {
    case ObjectiveKind::kApc: {
      Var<T> x = tape.constant(batch.features);
      ModelOutputs<T> out = model.forward(tape, x, batch.layout, mode, train, dropout_rng);
      result.loss = apc_loss(out.fwd_output, x, batch.layout, objective.shift);
      result.frames = contributing_frames(objective, batch.layout);
      break;
    }
    case ObjectiveKind::kBiApc: {
      Var<T> x = tape.constant(batch.features);
      ModelOutputs<T> out = model.forward(tape, x, batch.layout, mode, train, dropout_rng);
      result.loss =
          biapc_loss(out.fwd_output, out.rev_output, x, batch.layout, objective.shift, objective.direction_weights);
      result.frames = contributing_frames(objective, batch.layout);
      break;
    }
    case ObjectiveKind::kMpc: {
      if (mask_rng == nullptr) throw std::invalid_argument("mpc objective needs a mask rng");
      MpcMask<T> masked = mpc_mask(batch.features, batch.layout, objective.mask_ratio, *mask_rng);
      Var<T> x_in = tape.constant(std::move(masked.masked));
      Var<T> target = tape.constant(batch.features);
      ModelOutputs<T> out = model.forward(tape, x_in, batch.layout, mode, train, dropout_rng);
      result.loss = mpc_loss(out.output, target, std::span<const std::uint8_t>(masked.mask));
      result.frames = contributing_frames(objective, batch.layout, masked.mask);
      break;
    }
    case ObjectiveKind::kCrossEntropy: {
      if (batch.labels.size() != batch.layout.rows()) throw std::invalid_argument("ce objective needs labels");
      Var<T> x = tape.constant(batch.features);
      ModelOutputs<T> out = model.forward(tape, x, batch.layout, mode, train, dropout_rng);
      result.loss = ce_loss(out.output, std::span<const std::int32_t>(batch.labels));
      result.frames = contributing_frames(objective, batch.layout, {}, batch.labels);
      break;
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Training loop

namespace {

void check_corpus(std::span<const FeatureSequence> corpus, const ModelSpec& spec) {
  if (corpus.empty()) throw std::invalid_argument("empty corpus");
  for (const FeatureSequence& seq : corpus) {
    if (seq.num_frames() == 0) throw std::invalid_argument("utterance '" + seq.utterance_id + "' has no frames");
    if (seq.dim() != static_cast<std::size_t>(spec.input_dim)) {
      throw std::invalid_argument("utterance '" + seq.utterance_id + "' has " + std::to_string(seq.dim()) +
                                  " feature dims, model expects " + std::to_string(spec.input_dim));
    }
  }
}

TrainResult run_training(AcousticModel<float>& model, std::span<const FeatureSequence> corpus,
                         std::span<const AlignmentLabels> labels, const TrainConfig& config,
                         const std::map<std::string, std::string>& metadata, const EpochCallback& on_epoch) {
  AdamOptimizer adam(config.adam_beta1, config.adam_beta2, config.adam_eps);
  TrainResult result;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    const double lr = lr_at_epoch(config, epoch);
    const auto e = static_cast<std::uint64_t>(epoch);
    Rng shuffle_rng = make_rng(config.seed, "shuffle", e);
    Rng dropout_rng = make_rng(config.seed, "dropout", e);
    Rng mask_rng = make_rng(config.seed, "mask", e);

    double loss_sum = 0.0;
    std::size_t frame_sum = 0;
    for (const auto& indices : make_batches(corpus, config.batch_size, shuffle_rng)) {
      const Batch<float> batch = make_batch<float>(corpus, labels, indices);
      Tape<float> tape;
      ObjectiveResult<float> obj = objective_loss(model, tape, batch, config.objective, true, &dropout_rng, &mask_rng);
      if (obj.frames == 0) continue;
      const double batch_loss = tape.value(obj.loss)[0];
      if (!std::isfinite(batch_loss)) {
        throw std::runtime_error("non-finite loss at epoch " + std::to_string(epoch));
      }
      loss_sum += batch_loss;
      frame_sum += obj.frames;
      Var<float> target = config.per_frame_mean
                              ? ops::scale(obj.loss, static_cast<float>(1.0 / static_cast<double>(obj.frames)))
                              : obj.loss;
      model.zero_grad();
      tape.backward(target);
      auto params = model.trainable_parameters();
      adam.step(params, lr, config.clip_norm);
    }
    if (frame_sum == 0) throw std::invalid_argument("no frame in the corpus contributes to the objective");

    EpochRecord rec;
    rec.epoch = epoch;
    rec.mean_loss = loss_sum / static_cast<double>(frame_sum);
    rec.lr = lr;
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    std::map<std::string, std::string> meta = metadata;
    meta["objective"] = std::string(to_string(config.objective.kind));
    meta["seed"] = std::to_string(config.seed);
    if (config.objective.kind == ObjectiveKind::kApc || config.objective.kind == ObjectiveKind::kBiApc) {
      meta["shift"] = std::to_string(config.objective.shift);
    }
    result.checkpoints.push_back(make_checkpoint(model, epoch, std::move(meta)));
    result.log.push_back(rec);
    if (on_epoch) on_epoch(rec, result.checkpoints.back());
  }
  return result;
}

std::string first_tensor_mismatch(const AcousticModel<float>& model, const Checkpoint& init) {
  for (const auto& [name, tensor] : model.export_state()) {
    if (is_head_tensor(name)) continue;
    auto it = init.tensors.find(name);
    if (it == init.tensors.end()) return "; checkpoint has no tensor '" + name + "'";
    if (it->second.shape() != tensor.shape()) {
      return "; tensor '" + name + "' has shape " + shape_string(it->second.shape()) + ", model expects " +
             shape_string(tensor.shape());
    }
  }
  return "";
}

bool keep_non_head(const std::string& name) { return !is_head_tensor(name); }

bool keep_non_head_non_moment(const std::string& name) {
  return !is_head_tensor(name) && name.find(".running_") == std::string::npos;
}

}  // namespace

std::map<std::string, std::string> cross_init_hashes(const AcousticModel<float>& model) {
  std::map<std::string, std::string> out;
  for (const auto& [name, tensor] : model.export_state()) {
    if (is_cross_tensor(name)) out["init_hash." + name] = hash_hex(tensor_hash(tensor));
  }
  return out;
}

TrainResult pretrain(AcousticModel<float>& model, std::span<const FeatureSequence> corpus, const TrainConfig& config,
                     const EpochCallback& on_epoch) {
  config.validate();
  if (config.objective.kind == ObjectiveKind::kCrossEntropy) {
    throw std::invalid_argument("pretraining objective must be apc, biapc or mpc");
  }
  check_objective(model.spec(), config.objective.kind);
  check_corpus(corpus, model.spec());
  std::map<std::string, std::string> metadata;
  if (config.objective.kind == ObjectiveKind::kBiApc) {
    model.set_cross_trainable(false);
    metadata = cross_init_hashes(model);
  } else {
    model.set_cross_trainable(true);
  }
  return run_training(model, corpus, {}, config, metadata, on_epoch);
}

AcousticModel<float> init_for_finetune(const ModelSpec& classifier_spec, const Checkpoint* init, std::uint64_t seed,
                                       bool reset_moments) {
  if (classifier_spec.head != HeadKind::kClassifier) {
    throw std::invalid_argument("fine-tuning needs a classifier head spec");
  }
  AcousticModel<float> model(classifier_spec, derive_seed(seed, "finetune"));
  if (init != nullptr) {
    const ModelSpec& s = init->spec;
    if (s.kind != classifier_spec.kind || s.num_layers != classifier_spec.num_layers ||
        s.hidden != classifier_spec.hidden || s.input_dim != classifier_spec.input_dim) {
      throw std::invalid_argument("checkpoint spec (kind=" + std::string(to_string(s.kind)) +
                                  ", layers=" + std::to_string(s.num_layers) + ", hidden=" + std::to_string(s.hidden) +
                                  ", input_dim=" + std::to_string(s.input_dim) +
                                  ") does not match the fine-tuning spec (kind=" +
                                  std::string(to_string(classifier_spec.kind)) + ", layers=" +
                                  std::to_string(classifier_spec.num_layers) + ", hidden=" +
                                  std::to_string(classifier_spec.hidden) + ", input_dim=" +
                                  std::to_string(classifier_spec.input_dim) + ")" + first_tensor_mismatch(model, *init));
    }
    if (s.batchnorm != classifier_spec.batchnorm) {
      throw std::invalid_argument("checkpoint and fine-tuning spec disagree on batchnorm");
    }
    model.import_matching(init->tensors, reset_moments ? keep_non_head_non_moment : keep_non_head);
  }
  model.set_cross_trainable(true);
  return model;
}

TrainResult finetune(const ModelSpec& classifier_spec, const Checkpoint* init,
                     std::span<const FeatureSequence> corpus, std::span<const AlignmentLabels> labels,
                     const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  if (config.objective.kind != ObjectiveKind::kCrossEntropy) {
    throw std::invalid_argument("fine-tuning uses the ce objective");
  }
  check_corpus(corpus, classifier_spec);
  if (labels.size() != corpus.size()) throw std::invalid_argument("fine-tuning needs one label record per utterance");
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (labels[i].labels.size() != corpus[i].num_frames()) {
      throw std::invalid_argument("utterance '" + corpus[i].utterance_id + "': label count differs from frame count");
    }
    for (std::int32_t l : labels[i].labels) {
      if (l < 0 || l >= classifier_spec.num_classes) {
        throw std::out_of_range("utterance '" + corpus[i].utterance_id + "': label " + std::to_string(l) +
                                " outside [0, " + std::to_string(classifier_spec.num_classes) + ")");
      }
    }
  }
  AcousticModel<float> model = init_for_finetune(classifier_spec, init, config.seed, config.reset_bn_moments);
  std::map<std::string, std::string> metadata;
  metadata["init"] = init != nullptr ? "checkpoint" : "random";
  if (init != nullptr) {
    auto it = init->metadata.find("objective");
    if (it != init->metadata.end()) metadata["init_objective"] = it->second;
  }
  return run_training(model, corpus, labels, config, metadata, on_epoch);
}

Checkpoint transfer_uni_to_bi(const Checkpoint& uni, const ModelSpec& bi_spec, std::uint64_t seed) {
  if (uni.spec.kind != ModelKind::kUni) throw std::invalid_argument("transfer_uni_to_bi: source is not a uni model");
  if (bi_spec.kind != ModelKind::kBi) throw std::invalid_argument("transfer_uni_to_bi: target is not a bi model");
  if (uni.spec.num_layers != bi_spec.num_layers || uni.spec.hidden != bi_spec.hidden ||
      uni.spec.input_dim != bi_spec.input_dim || uni.spec.batchnorm != bi_spec.batchnorm) {
    throw std::invalid_argument("transfer_uni_to_bi: dimension mismatch (uni " + std::to_string(uni.spec.num_layers) +
                                "x" + std::to_string(uni.spec.hidden) + ", bi " +
                                std::to_string(bi_spec.num_layers) + "x" + std::to_string(bi_spec.hidden) +
                                " per direction; input dims and batchnorm must also agree)");
  }
  AcousticModel<float> bi(bi_spec, seed);
  TensorMap state = bi.export_state();
  auto copy = [&](const std::string& from, const std::string& to) {
    auto src = uni.tensors.find(from);
    if (src == uni.tensors.end()) throw std::invalid_argument("transfer_uni_to_bi: source lacks '" + from + "'");
    auto dst = state.find(to);
    if (dst == state.end()) throw std::logic_error("transfer_uni_to_bi: target lacks '" + to + "'");
    if (src->second.shape() != dst->second.shape()) {
      throw std::invalid_argument("transfer_uni_to_bi: '" + from + "' has shape " + shape_string(src->second.shape()) +
                                  ", '" + to + "' needs " + shape_string(dst->second.shape()));
    }
    dst->second = src->second;
  };
  for (int l = 1; l <= bi_spec.num_layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    for (const char* w : {"W_in", "W_rec", "bias"}) copy(p + w, p + "fwd_same." + w);
    if (bi_spec.batchnorm) {
      for (const char* b : {"gamma", "beta", "running_mean", "running_var"}) copy(p + "bn." + b, p + "fwd_bn." + b);
    }
  }
  if (bi_spec.head == uni.spec.head && bi_spec.head == HeadKind::kPrediction) {
    copy("head.W", "head.W");
    copy("head.bias", "head.bias");
  }
  Checkpoint out;
  out.spec = bi_spec;
  out.tensors = std::move(state);
  out.epoch = 0;
  out.metadata["objective"] = "apc";
  out.metadata["transfer"] = "uni_to_bi";
  return out;
}

Checkpoint average_checkpoints(std::span<const Checkpoint> checkpoints, int k) {
  if (k < 1) throw std::invalid_argument("average_checkpoints: k must be >= 1");
  if (checkpoints.size() < static_cast<std::size_t>(k)) {
    throw std::invalid_argument("average_checkpoints: need " + std::to_string(k) + " checkpoints, have " +
                                std::to_string(checkpoints.size()));
  }
  const auto selected = checkpoints.subspan(checkpoints.size() - static_cast<std::size_t>(k));
  const Checkpoint& last = selected.back();
  for (const Checkpoint& c : selected) {
    if (!(c.spec == last.spec)) throw std::invalid_argument("average_checkpoints: model specs differ");
    if (c.tensors.size() != last.tensors.size()) throw std::invalid_argument("average_checkpoints: tensor sets differ");
    for (const auto& [name, t] : last.tensors) {
      auto it = c.tensors.find(name);
      if (it == c.tensors.end()) throw std::invalid_argument("average_checkpoints: tensor '" + name + "' missing");
      if (it->second.shape() != t.shape()) {
        throw std::invalid_argument("average_checkpoints: tensor '" + name + "' shapes differ");
      }
    }
  }
  Checkpoint out;
  out.spec = last.spec;
  out.epoch = last.epoch;
  out.metadata = last.metadata;
  out.metadata["averaged_last_k"] = std::to_string(k);
  for (const auto& [name, t] : last.tensors) {
    std::vector<double> acc(t.size(), 0.0);
    for (const Checkpoint& c : selected) {
      const Tensor<float>& src = c.tensors.at(name);
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += src[i];
    }
    Tensor<float> mean(t.shape());
    for (std::size_t i = 0; i < acc.size(); ++i) mean[i] = static_cast<float>(acc[i] / k);
    out.tensors.emplace(name, std::move(mean));
  }
  return out;
}

std::vector<Tensor<float>> predict(AcousticModel<float>& model, std::span<const FeatureSequence> corpus,
                                   int batch_size) {
  check_corpus(corpus, model.spec());
  const ModelSpec& spec = model.spec();
  const RunMode mode =
      spec.kind == ModelKind::kBi && spec.head == HeadKind::kPrediction ? RunMode::kPretrain : RunMode::kFull;
  std::vector<Tensor<float>> out(corpus.size());
  const auto bs = static_cast<std::size_t>(std::max(1, batch_size));
  for (std::size_t start = 0; start < corpus.size(); start += bs) {
    std::vector<std::size_t> indices(std::min(bs, corpus.size() - start));
    std::iota(indices.begin(), indices.end(), start);
    const Batch<float> batch = make_batch<float>(corpus, {}, indices);
    Tape<float> tape(false);
    ModelOutputs<float> res = model.forward(tape, tape.constant(batch.features), batch.layout, mode, false);
    const Tensor<float>& y = res.output.valid() ? res.output.value() : res.fwd_output.value();
    for (std::size_t b = 0; b < indices.size(); ++b) {
      const std::size_t len = batch.layout.lengths[b];
      Tensor<float> seq = Tensor<float>::matrix(len, y.cols());
      for (std::size_t t = 0; t < len; ++t) {
        auto src = y.row(batch.layout.row(t, b));
        std::copy(src.begin(), src.end(), seq.row(t).begin());
      }
      out[indices[b]] = std::move(seq);
    }
  }
  return out;
}

template Batch<float> make_batch(std::span<const FeatureSequence>, std::span<const AlignmentLabels>,
                                 std::span<const std::size_t>);
template Batch<double> make_batch(std::span<const FeatureSequence>, std::span<const AlignmentLabels>,
                                  std::span<const std::size_t>);
template ObjectiveResult<float> objective_loss(AcousticModel<float>&, Tape<float>&, const Batch<float>&,
                                               const ObjectiveConfig&, bool, Rng*, Rng*);
template ObjectiveResult<double> objective_loss(AcousticModel<double>&, Tape<double>&, const Batch<double>&,
                                                const ObjectiveConfig&, bool, Rng*, Rng*);

}  // namespace bapc
