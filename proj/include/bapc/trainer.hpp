#pragma once

// Optimization loop, learning-rate schedule, checkpoint averaging and the
// transfer paths between pre-training and fine-tuning.

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "bapc/autodiff.hpp"
#include "bapc/checkpoint.hpp"
#include "bapc/featurizer.hpp"
#include "bapc/model.hpp"
#include "bapc/objectives.hpp"
#include "bapc/sequence.hpp"

namespace bapc {

struct TrainConfig {
  ObjectiveConfig objective;
  int epochs = 8;
  double lr0 = 1e-3;
  int hold_epochs = 2;
  double lambda = 0.1;  // final-to-initial learning-rate ratio
  int batch_size = 16;
  std::uint64_t seed = 1;
  double clip_norm = 5.0;  // <= 0 disables clipping
  int avg_last_k = 3;
  // Divide each minibatch loss by its contributing frames; otherwise the
  // plain frame sum is optimized.
  bool per_frame_mean = true;
  // Fine-tuning only: start batch-norm running moments from (0, 1) instead
  // of copying them from the initialization checkpoint.
  bool reset_bn_moments = false;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  static TrainConfig pretrain_defaults();
  static TrainConfig finetune_defaults();
  void validate() const;
};

// e is 1-based. Held at lr0 through hold_epochs, then decays
// exponentially so that epoch == epochs gets exactly lr0 * lambda.
double lr_at_epoch(const TrainConfig& config, int epoch);

class AdamOptimizer {
 public:
  AdamOptimizer(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  // Clips the global gradient norm of params to clip_norm (when > 0), then
  // applies one Adam update. Returns the pre-clip norm. Throws naming the
  // tensor if any gradient is not finite; no parameter is modified then.
  double step(std::span<Parameter<float>* const> params, double rate, double clip_norm);

  long steps() const { return t_; }

 private:
  struct Moments {
    std::vector<float> m;
    std::vector<float> v;
  };
  double beta1_;
  double beta2_;
  double eps_;
  long t_ = 0;
  std::map<std::string, Moments> moments_;
};

template <typename T>
struct Batch {
  SequenceLayout layout;
  Tensor<T> features;                // layout.rows() x D, padding rows zero
  std::vector<std::int32_t> labels;  // one per row, -1 on padding; empty without labels
  std::vector<std::size_t> indices;  // corpus positions, in batch order
};

template <typename T>
Batch<T> make_batch(std::span<const FeatureSequence> corpus, std::span<const AlignmentLabels> labels,
                    std::span<const std::size_t> indices);

// Groups utterances of similar length: a shuffled order is stably sorted by
// length, cut into batches, and the batch order is shuffled again.
std::vector<std::vector<std::size_t>> make_batches(std::span<const FeatureSequence> corpus, int batch_size, Rng& rng);

// The run mode and head an objective needs.
RunMode run_mode_for(ObjectiveKind kind);
HeadKind head_for(ObjectiveKind kind);
// Throws if the objective cannot train a model of this spec.
void check_objective(const ModelSpec& spec, ObjectiveKind kind);

template <typename T>
struct ObjectiveResult {
  Var<T> loss;  // frame sum
  std::size_t frames = 0;
};

// Forward pass plus objective. mask_rng is required for mpc.
template <typename T>
ObjectiveResult<T> objective_loss(AcousticModel<T>& model, Tape<T>& tape, const Batch<T>& batch,
                                  const ObjectiveConfig& objective, bool train, Rng* dropout_rng, Rng* mask_rng);

struct EpochRecord {
  int epoch = 0;
  double mean_loss = 0.0;  // per contributing frame, over the whole epoch
  double lr = 0.0;
  double wall_seconds = 0.0;
};

struct TrainResult {
  std::vector<Checkpoint> checkpoints;  // one per epoch
  std::vector<EpochRecord> log;
};

using EpochCallback = std::function<void(const EpochRecord&, const Checkpoint&)>;

// Self-supervised pre-training. The corpus carries no labels. For biapc the
// cross-direction blocks are frozen for the whole run and their initial
// hashes are recorded in every checkpoint's metadata as "init_hash.<name>".
TrainResult pretrain(AcousticModel<float>& model, std::span<const FeatureSequence> corpus, const TrainConfig& config,
                     const EpochCallback& on_epoch = {});

// Classifier model initialized from a checkpoint: every tensor except the
// head is copied (batch-norm moments unless reset_moments), the classifier
// head is fresh and every block is trainable. Without a checkpoint the
// model is randomly initialized.
AcousticModel<float> init_for_finetune(const ModelSpec& classifier_spec, const Checkpoint* init, std::uint64_t seed,
                                       bool reset_moments = false);

TrainResult finetune(const ModelSpec& classifier_spec, const Checkpoint* init,
                     std::span<const FeatureSequence> corpus, std::span<const AlignmentLabels> labels,
                     const TrainConfig& config, const EpochCallback& on_epoch = {});

// Copies a uni model's layers into the forward-same blocks (and batch-norm
// into the forward-stream norms) of a fresh bi model; reverse and cross
// blocks keep their fresh initialization. The prediction head is copied
// when bi_spec has one.
Checkpoint transfer_uni_to_bi(const Checkpoint& uni, const ModelSpec& bi_spec, std::uint64_t seed);

// Elementwise mean of each tensor over the last k checkpoints, accumulated
// in double.
Checkpoint average_checkpoints(std::span<const Checkpoint> checkpoints, int k);

// Eval-mode outputs for each utterance: logits for classifier models,
// reconstructions or predictions otherwise (for a bi prediction model, the
// forward-stream prediction).
std::vector<Tensor<float>> predict(AcousticModel<float>& model, std::span<const FeatureSequence> corpus,
                                   int batch_size = 16);

// Metadata keys recording the initial hash of each cross-direction block.
std::map<std::string, std::string> cross_init_hashes(const AcousticModel<float>& model);

}  // namespace bapc
