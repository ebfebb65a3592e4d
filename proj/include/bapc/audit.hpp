#pragma once

// Machine checks of the pre-training constraints on a checkpoint:
//   leakage      perturbing future (past) frames leaves every forward
//                (reverse) activation at earlier (later) times bit-identical
//   frozen       cross-direction blocks still hash to their recorded values
//   gradients    analytic gradients of the checkpoint's objective agree with
//                central differences at sampled coordinates

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "bapc/checkpoint.hpp"
#include "bapc/featurizer.hpp"
#include "bapc/gradcheck.hpp"
#include "bapc/objectives.hpp"

namespace bapc {

enum class AuditStatus { kPass, kFail, kNotApplicable };

std::string_view to_string(AuditStatus status);

struct AuditCheck {
  std::string name;
  AuditStatus status = AuditStatus::kPass;
  std::string detail;
};

struct AuditReport {
  std::vector<AuditCheck> checks;

  bool passed() const;
  std::string format() const;
};

struct AuditOptions {
  int leakage_trials = 100;
  int gradient_coordinates = 24;
  double gradient_tolerance = 1e-4;
  double gradient_step = 1e-6;
  // Utterances are truncated to this many frames for the gradient check.
  int gradient_frames = 12;
  std::uint64_t seed = 1;
};

struct LeakageResult {
  int trials = 0;
  int failures = 0;
  std::string first_failure;
};

// Perturbation test on an eval-mode model in pretrain mode. Uni prediction
// models check the forward direction only.
LeakageResult leakage_test(AcousticModel<float>& model, std::span<const FeatureSequence> sample, int trials,
                           std::uint64_t seed);

// Compares each "init_hash.<name>" metadata entry against the tensor.
AuditCheck frozen_block_check(const Checkpoint& ckpt);

AuditReport audit_checkpoint(const Checkpoint& ckpt, std::span<const FeatureSequence> sample,
                             const AuditOptions& options = {});

// Full central-difference check of every trainable parameter of a fresh
// 64-bit model of this spec under the objective, on random utterances of
// the given lengths (random labels for ce). Dropout, when the spec has it,
// runs with a fixed mask.
GradComparison model_gradient_check(const ModelSpec& spec, const ObjectiveConfig& objective,
                                    std::span<const std::size_t> lengths, std::uint64_t seed, double h = 1e-6);

}  // namespace bapc
