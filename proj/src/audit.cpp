#include "bapc/audit.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "bapc/gradcheck.hpp"
#include "bapc/trainer.hpp"

namespace bapc {

std::string_view to_string(AuditStatus status) {
  switch (status) {
    case AuditStatus::kPass:
      return "PASS";
    case AuditStatus::kFail:
      return "FAIL";
    case AuditStatus::kNotApplicable:
      return "N/A";
  }
  return "?";
}

bool AuditReport::passed() const {
  return std::none_of(checks.begin(), checks.end(), [](const AuditCheck& c) { return c.status == AuditStatus::kFail; });
}

std::string AuditReport::format() const {
  std::ostringstream out;
  for (const AuditCheck& c : checks) out << to_string(c.status) << "  " << c.name << ": " << c.detail << "\n";
  out << (passed() ? "audit passed" : "audit FAILED") << "\n";
  return out.str();
}

namespace {

struct Activations {
  std::vector<Tensor<float>> fwd;  // hidden per layer, then the head output
  std::vector<Tensor<float>> rev;
};

Activations run_single(AcousticModel<float>& model, const Tensor<float>& x) {
  Tape<float> tape(false);
  const SequenceLayout layout = SequenceLayout::single(x.rows());
  ModelOutputs<float> out = model.forward(tape, tape.constant(x), layout, RunMode::kPretrain, false);
  Activations acts;
  for (const auto& h : out.fwd_hidden) acts.fwd.push_back(h.value());
  for (const auto& h : out.rev_hidden) acts.rev.push_back(h.value());
  acts.fwd.push_back(out.fwd_output.value());
  if (out.rev_output.valid()) acts.rev.push_back(out.rev_output.value());
  return acts;
}

// Index of the first stream whose rows [begin, end) differ bitwise, or -1.
int first_difference(const std::vector<Tensor<float>>& a, const std::vector<Tensor<float>>& b, std::size_t begin,
                     std::size_t end) {
  for (std::size_t s = 0; s < a.size(); ++s) {
    for (std::size_t r = begin; r < end; ++r) {
      auto ra = a[s].row(r);
      auto rb = b[s].row(r);
      if (!std::equal(ra.begin(), ra.end(), rb.begin(), [](float x, float y) {
            return std::bit_cast<std::uint32_t>(x) == std::bit_cast<std::uint32_t>(y);
          })) {
        return static_cast<int>(s);
      }
    }
  }
  return -1;
}

ObjectiveKind objective_of(const Checkpoint& ckpt) {
  switch (ckpt.spec.head) {
    case HeadKind::kClassifier:
      return ObjectiveKind::kCrossEntropy;
    case HeadKind::kReconstruction:
      return ObjectiveKind::kMpc;
    case HeadKind::kPrediction:
      break;
  }
  return ckpt.spec.kind == ModelKind::kUni ? ObjectiveKind::kApc : ObjectiveKind::kBiApc;
}

}  // namespace

LeakageResult leakage_test(AcousticModel<float>& model, std::span<const FeatureSequence> sample, int trials,
                           std::uint64_t seed) {
  if (model.spec().head != HeadKind::kPrediction) {
    throw std::invalid_argument("leakage test needs a pretrain-mode model with the prediction head");
  }
  std::vector<const FeatureSequence*> usable;
  for (const auto& seq : sample) {
    if (seq.num_frames() >= 2) usable.push_back(&seq);
  }
  if (usable.empty()) throw std::invalid_argument("leakage test needs an utterance with at least 2 frames");

  const bool bi = model.spec().kind == ModelKind::kBi;
  Rng rng = make_rng(seed, "leakage");
  LeakageResult result;
  for (int trial = 0; trial < trials; ++trial) {
    const FeatureSequence& seq = *usable[std::min(usable.size() - 1,
                                                  static_cast<std::size_t>(uniform01(rng) * usable.size()))];
    const std::size_t T = seq.num_frames();
    const Activations base = run_single(model, seq.frames);
    // Cut point t in [0, T - 2]: frames after t are future for the
    // forward stream; frames before t + 1 are future for the reverse one.
    const auto t = std::min(T - 2, static_cast<std::size_t>(uniform01(rng) * static_cast<double>(T - 1)));

    Tensor<float> future = seq.frames;
    for (std::size_t r = t + 1; r < T; ++r) {
      for (float& v : future.row(r)) v += static_cast<float>(standard_normal(rng));
    }
    const Activations pf = run_single(model, future);
    ++result.trials;
    const int fwd_diff = first_difference(base.fwd, pf.fwd, 0, t + 1);
    if (fwd_diff >= 0) {
      ++result.failures;
      if (result.first_failure.empty()) {
        result.first_failure = "utterance '" + seq.utterance_id + "', t=" + std::to_string(t) +
                               ": forward stream " + std::to_string(fwd_diff) + " changed";
      }
    }
    if (!bi) continue;

    Tensor<float> past = seq.frames;
    for (std::size_t r = 0; r <= t; ++r) {
      for (float& v : past.row(r)) v += static_cast<float>(standard_normal(rng));
    }
    const Activations pr = run_single(model, past);
    ++result.trials;
    const int rev_diff = first_difference(base.rev, pr.rev, t + 1, T);
    if (rev_diff >= 0) {
      ++result.failures;
      if (result.first_failure.empty()) {
        result.first_failure = "utterance '" + seq.utterance_id + "', t=" + std::to_string(t + 1) +
                               ": reverse stream " + std::to_string(rev_diff) + " changed";
      }
    }
  }
  return result;
}

AuditCheck frozen_block_check(const Checkpoint& ckpt) {
  AuditCheck check{"frozen cross blocks", AuditStatus::kPass, ""};
  const std::string prefix = "init_hash.";
  std::vector<std::string> changed;
  std::size_t compared = 0;
  for (const auto& [key, value] : ckpt.metadata) {
    if (key.rfind(prefix, 0) != 0) continue;
    const std::string name = key.substr(prefix.size());
    auto it = ckpt.tensors.find(name);
    ++compared;
    if (it == ckpt.tensors.end()) {
      changed.push_back(name + " (missing)");
    } else if (hash_hex(tensor_hash(it->second)) != value) {
      changed.push_back(name);
    }
  }
  const auto objective = ckpt.metadata.find("objective");
  const bool biapc = objective != ckpt.metadata.end() && objective->second == "biapc";
  if (compared == 0) {
    if (biapc && ckpt.spec.num_layers > 1) {
      check.status = AuditStatus::kFail;
      check.detail = "bi-apc checkpoint carries no recorded init hashes";
    } else {
      check.status = AuditStatus::kNotApplicable;
      check.detail = "no frozen blocks recorded";
    }
    return check;
  }
  if (!changed.empty()) {
    check.status = AuditStatus::kFail;
    check.detail = "changed since initialization:";
    for (const auto& n : changed) check.detail += " " + n;
    return check;
  }
  check.detail = std::to_string(compared) + " blocks match their initial hashes";
  return check;
}

AuditReport audit_checkpoint(const Checkpoint& ckpt, std::span<const FeatureSequence> sample,
                             const AuditOptions& options) {
  if (sample.empty()) throw std::invalid_argument("audit needs at least one utterance");
  AuditReport report;
  const ObjectiveKind objective = objective_of(ckpt);

  // Leakage.
  {
    AuditCheck check{"leakage", AuditStatus::kNotApplicable, ""};
    if (ckpt.spec.head == HeadKind::kPrediction) {
      AcousticModel<float> model = model_from_checkpoint<float>(ckpt);
      model.set_cross_trainable(false);
      const LeakageResult res = leakage_test(model, sample, options.leakage_trials, options.seed);
      check.status = res.failures == 0 ? AuditStatus::kPass : AuditStatus::kFail;
      check.detail = std::to_string(res.trials) + " perturbations, " + std::to_string(res.failures) + " failures";
      if (!res.first_failure.empty()) check.detail += "; first: " + res.first_failure;
    } else {
      check.detail = "full-mode model (" + std::string(to_string(ckpt.spec.head)) + " head) mixes both directions";
    }
    report.checks.push_back(check);
  }

  report.checks.push_back(frozen_block_check(ckpt));

  // Gradient spot-checks at 64-bit.
  {
    AuditCheck check{"gradients", AuditStatus::kPass, ""};
    AcousticModel<double> model = model_from_checkpoint<double>(ckpt);
    if (objective == ObjectiveKind::kBiApc) model.set_cross_trainable(false);
    ObjectiveConfig obj;
    obj.kind = objective;
    if (auto it = ckpt.metadata.find("shift"); it != ckpt.metadata.end()) obj.shift = std::stoi(it->second);

    const FeatureSequence* pick = nullptr;
    for (const auto& seq : sample) {
      if (seq.num_frames() > static_cast<std::size_t>(obj.shift)) {
        pick = &seq;
        break;
      }
    }
    if (pick == nullptr) throw std::invalid_argument("audit: every utterance is shorter than the shift");
    FeatureSequence cut = *pick;
    const std::size_t T = std::min<std::size_t>(cut.num_frames(), std::max(options.gradient_frames, obj.shift + 1));
    cut.frames = Tensor<float>::matrix(T, pick->dim());
    std::copy_n(pick->frames.values().begin(), T * pick->dim(), cut.frames.values().begin());
    std::vector<FeatureSequence> corpus{cut};
    std::vector<AlignmentLabels> labels;
    Rng rng = make_rng(options.seed, "audit_gradients");
    if (objective == ObjectiveKind::kCrossEntropy) {
      AlignmentLabels lab{cut.utterance_id, std::vector<std::int32_t>(T)};
      for (auto& l : lab.labels) {
        l = static_cast<std::int32_t>(uniform01(rng) * ckpt.spec.num_classes) % ckpt.spec.num_classes;
      }
      labels.push_back(std::move(lab));
    }
    const std::size_t index = 0;
    const Batch<double> batch = make_batch<double>(corpus, labels, std::span<const std::size_t>(&index, 1));

    auto loss_value = [&](bool record) {
      Tape<double> tape(record);
      Rng mask_rng = make_rng(options.seed, "audit_mask");
      ObjectiveResult<double> res = objective_loss(model, tape, batch, obj, false, nullptr, &mask_rng);
      if (record) {
        model.zero_grad();
        tape.backward(res.loss);
      }
      return tape.value(res.loss)[0];
    };
    loss_value(true);

    std::vector<Parameter<double>*> params = model.parameters();
    std::size_t total = 0;
    for (auto* p : params) total += p->value.size();
    double worst = 0.0;
    std::string worst_name;
    for (int k = 0; k < options.gradient_coordinates; ++k) {
      std::size_t flat = std::min(total - 1, static_cast<std::size_t>(uniform01(rng) * static_cast<double>(total)));
      Parameter<double>* p = nullptr;
      for (auto* q : params) {
        if (flat < q->value.size()) {
          p = q;
          break;
        }
        flat -= q->value.size();
      }
      const double analytic = p->trainable ? p->grad[flat] : 0.0;
      const double saved = p->value[flat];
      p->value[flat] = saved + options.gradient_step;
      const double up = loss_value(false);
      p->value[flat] = saved - options.gradient_step;
      const double down = loss_value(false);
      p->value[flat] = saved;
      const double err = relative_error(analytic, (up - down) / (2.0 * options.gradient_step));
      if (err > worst) {
        worst = err;
        worst_name = p->name + "[" + std::to_string(flat) + "]";
      }
    }
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.3g", worst);
    check.detail = std::to_string(options.gradient_coordinates) + " coordinates of the " +
                   std::string(to_string(objective)) + " loss, max relative error " + buf;
    if (!worst_name.empty()) check.detail += " at " + worst_name;
    if (!(worst < options.gradient_tolerance)) check.status = AuditStatus::kFail;
    report.checks.push_back(check);
  }
  return report;
}

GradComparison model_gradient_check(const ModelSpec& spec, const ObjectiveConfig& objective,
                                    std::span<const std::size_t> lengths, std::uint64_t seed, double h) {
  check_objective(spec, objective.kind);
  if (lengths.empty()) throw std::invalid_argument("gradient check needs at least one utterance");
  AcousticModel<double> model(spec, derive_seed(seed, "gradcheck_init"));
  if (objective.kind == ObjectiveKind::kBiApc) model.set_cross_trainable(false);

  Rng rng = make_rng(seed, "gradcheck_data");
  std::vector<FeatureSequence> corpus(lengths.size());
  std::vector<AlignmentLabels> labels;
  std::vector<std::size_t> indices(lengths.size());
  for (std::size_t u = 0; u < lengths.size(); ++u) {
    corpus[u].utterance_id = "g" + std::to_string(u);
    corpus[u].frames = Tensor<float>::matrix(lengths[u], static_cast<std::size_t>(spec.input_dim));
    for (float& v : corpus[u].frames.values()) v = static_cast<float>(standard_normal(rng));
    if (spec.head == HeadKind::kClassifier) {
      AlignmentLabels lab{corpus[u].utterance_id, std::vector<std::int32_t>(lengths[u])};
      for (auto& l : lab.labels) {
        l = std::min(spec.num_classes - 1, static_cast<std::int32_t>(uniform01(rng) * spec.num_classes));
      }
      labels.push_back(std::move(lab));
    }
    indices[u] = u;
  }
  const Batch<double> batch = make_batch<double>(corpus, labels, indices);

  auto loss_value = [&](Tape<double>& tape) {
    Rng drop = make_rng(seed, "gradcheck_dropout");
    Rng mask = make_rng(seed, "gradcheck_mask");
    return objective_loss(model, tape, batch, objective, true, &drop, &mask).loss;
  };
  std::vector<Parameter<double>*> params = model.trainable_parameters();
  model.zero_grad();
  {
    Tape<double> tape;
    tape.backward(loss_value(tape));
  }
  auto f = [&] {
    Tape<double> tape(false);
    return tape.value(loss_value(tape))[0];
  };
  const std::vector<Tensor<double>> numeric = finite_diff_grad(f, params, h);
  return compare_gradients(params, numeric);
}

}  // namespace bapc
