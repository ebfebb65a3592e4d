#pragma once

// Synthetic frame-classification corpora. Each utterance is a run of
// latent-class segments with geometric dwell times; within a segment every
// feature dimension follows that class's AR(p) process. At a class change
// the recent history is whitened under the old process's stationary
// autocorrelation and recolored under the new one, so the most recent sample
// carries over unchanged and the stationary scale is preserved. The labels are the latent classes, so frame
// classification needs temporal context and next-frame prediction is a
// useful auxiliary task.

#include <cstdint>
#include <span>
#include <vector>

#include "bapc/featurizer.hpp"
#include "bapc/objectives.hpp"
#include "bapc/tensor.hpp"

namespace bapc {

// coefficients[c][d] holds (a_1, ..., a_p) for class c, dimension d:
//   x_t = a_1 x_{t-1} + ... + a_p x_{t-p} + sigma * e_t
using ArCoefficients = std::vector<std::vector<std::vector<double>>>;

struct SyntheticSpec {
  int num_utterances = 250;
  int min_len = 100;
  int max_len = 300;
  int dim = 4;
  int num_classes = 5;
  int ar_order = 2;
  double mean_dwell = 40.0;
  // Stationary standard deviation of each process; 0 makes the sequence a
  // deterministic continuation of its N(0, 1) initial history.
  double noise = 1.0;
  // Drawn pole radii for the default AR(2) processes.
  double min_radius = 0.98;
  double max_radius = 0.999;
  std::uint64_t seed = 1;
  // Explicit processes; drawn from the seed when empty.
  ArCoefficients coefficients;

  void validate() const;
};

struct SyntheticCorpus {
  std::vector<FeatureSequence> features;
  std::vector<AlignmentLabels> labels;
  ArCoefficients coefficients;
};

// True when every root of 1 - a_1 z - ... - a_p z^p lies outside the unit
// circle (Schur-Cohn step-down test).
bool ar_is_stable(std::span<const double> coeffs);

// Innovation scale giving a stationary standard deviation of 1.
double ar_unit_innovation(std::span<const double> coeffs);

ArCoefficients draw_coefficients(const SyntheticSpec& spec);

SyntheticCorpus generate_corpus(const SyntheticSpec& spec);

// First n utterances and the rest.
std::pair<SyntheticCorpus, SyntheticCorpus> split_corpus(const SyntheticCorpus& corpus, std::size_t n);

// Seeded random subset holding max(1, round(fraction * size)) utterances, in
// corpus order.
SyntheticCorpus labeled_subset(const SyntheticCorpus& corpus, double fraction, std::uint64_t seed);

// Micro-averaged fraction of frames where argmax(logits_t) == label_t.
// Ties resolve to the lowest class index.
double frame_accuracy(std::span<const Tensor<float>> logits, std::span<const AlignmentLabels> labels);

}  // namespace bapc
