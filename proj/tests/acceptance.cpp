// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// fails. The desk-scale benchmark runs once and feeds criteria 3, 7, 8 and 9.

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>
#include <unistd.h>

#include "bapc/audit.hpp"
#include "bapc/checkpoint.hpp"
#include "bapc/datagen.hpp"
#include "bapc/featurizer.hpp"
#include "bapc/kernels.hpp"
#include "bapc/objectives.hpp"
#include "bapc/trainer.hpp"

namespace fs = std::filesystem;

namespace bapc {
namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int id, const char* title, const std::function<Outcome()>& run) {
  Outcome o;
  const auto start = std::chrono::steady_clock::now();
  try {
    o = run();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (!o.pass) ++failures;
  std::printf("%s  %2d  %s: %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", id, title, o.detail.c_str(), secs);
  std::fflush(stdout);
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
}

bool bit_equal(const Tensor<float>& a, const Tensor<float>& b) {
  if (a.shape() != b.shape()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::bit_cast<std::uint32_t>(a[i]) != std::bit_cast<std::uint32_t>(b[i])) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Desk-scale benchmark

constexpr int kSeeds = 5;

struct BenchmarkConfig {
  SyntheticSpec corpus;  // defaults: 250 utterances, D=4, 5 classes, AR(2)
  std::size_t train_utterances = 200;
  double labeled_fraction = 0.1;
  int layers = 2;
  int hidden = 64;
  TrainConfig pre;
  TrainConfig fine;

  BenchmarkConfig() {
    pre.epochs = 12;
    pre.hold_epochs = 2;
    pre.lr0 = 1e-2;
    pre.lambda = 0.1;
    pre.batch_size = 4;
    fine.objective.kind = ObjectiveKind::kCrossEntropy;
    fine.epochs = 15;
    fine.hold_epochs = 2;
    fine.lr0 = 3e-3;
    fine.lambda = 0.01;
    fine.batch_size = 4;
  }

  ModelSpec spec(ModelKind kind) const {
    ModelSpec s;
    s.kind = kind;
    s.num_layers = layers;
    s.hidden = hidden;
    s.input_dim = corpus.dim;
    s.dropout = 0.0;
    return s;
  }
};

struct PretrainArm {
  std::vector<double> losses;
  double wall = 0.0;
  Checkpoint final_model;
  std::vector<Checkpoint> epochs;
  TensorMap initial_state;
};

struct SeedRun {
  PretrainArm apc;
  PretrainArm biapc;
  // Test frame accuracy after fine-tuning on the labeled subset.
  double uni_random = 0, uni_apc = 0, bi_random = 0, bi_biapc = 0, bi_fwd_only = 0, uni_matched = 0;
  SyntheticCorpus test;
};

struct Benchmark {
  BenchmarkConfig config;
  std::vector<SeedRun> seeds;
  int matched_hidden = 0;
  bool ok = false;
  std::string error;
};

std::size_t parameter_count(const ModelSpec& spec) {
  AcousticModel<float> m(spec, 1);
  std::size_t n = 0;
  for (auto* p : m.parameters()) n += p->value.size();
  return n;
}

PretrainArm run_pretrain(const ModelSpec& spec, ObjectiveKind kind, const SyntheticCorpus& train,
                         TrainConfig config, std::uint64_t seed) {
  config.objective.kind = kind;
  config.seed = seed;
  AcousticModel<float> model(spec, seed);
  PretrainArm arm;
  arm.initial_state = model.export_state();
  const TrainResult r = pretrain(model, train.features, config);
  for (const auto& rec : r.log) {
    arm.losses.push_back(rec.mean_loss);
    arm.wall += rec.wall_seconds;
  }
  arm.epochs = r.checkpoints;
  arm.final_model = average_checkpoints(r.checkpoints, config.avg_last_k);
  return arm;
}

double finetune_accuracy(const ModelSpec& base, const Checkpoint* init, const SyntheticCorpus& labeled,
                         const SyntheticCorpus& test, TrainConfig config, std::uint64_t seed) {
  ModelSpec spec = base;
  spec.head = HeadKind::kClassifier;
  spec.num_classes = 5;
  config.seed = seed;
  const TrainResult r = finetune(spec, init, labeled.features, labeled.labels, config);
  AcousticModel<float> model = model_from_checkpoint<float>(average_checkpoints(r.checkpoints, config.avg_last_k));
  return frame_accuracy(predict(model, test.features), test.labels);
}

Benchmark run_benchmark() {
  Benchmark b;
  const BenchmarkConfig& c = b.config;
  const ModelSpec uni = c.spec(ModelKind::kUni);
  const ModelSpec bi = c.spec(ModelKind::kBi);
  // Smallest uni width with at least the bi classifier's parameter count.
  ModelSpec bi_cls = bi, uni_cls = uni;
  bi_cls.head = uni_cls.head = HeadKind::kClassifier;
  bi_cls.num_classes = uni_cls.num_classes = 5;
  const std::size_t target = parameter_count(bi_cls);
  for (uni_cls.hidden = c.hidden; parameter_count(uni_cls) < target; ++uni_cls.hidden) {
  }
  b.matched_hidden = uni_cls.hidden;
  ModelSpec uni_matched = uni;
  uni_matched.hidden = b.matched_hidden;

  try {
    for (int seed = 1; seed <= kSeeds; ++seed) {
      const auto s = static_cast<std::uint64_t>(seed);
      SyntheticSpec cs = c.corpus;
      cs.seed = s;
      const SyntheticCorpus corpus = generate_corpus(cs);
      auto [train, test] = split_corpus(corpus, c.train_utterances);
      const SyntheticCorpus labeled = labeled_subset(train, c.labeled_fraction, s);

      SeedRun run;
      run.apc = run_pretrain(uni, ObjectiveKind::kApc, train, c.pre, s);
      run.biapc = run_pretrain(bi, ObjectiveKind::kBiApc, train, c.pre, s);
      const Checkpoint fwd_only = transfer_uni_to_bi(run.apc.final_model, bi, s);

      run.uni_random = finetune_accuracy(uni, nullptr, labeled, test, c.fine, s);
      run.uni_apc = finetune_accuracy(uni, &run.apc.final_model, labeled, test, c.fine, s);
      run.bi_random = finetune_accuracy(bi, nullptr, labeled, test, c.fine, s);
      run.bi_biapc = finetune_accuracy(bi, &run.biapc.final_model, labeled, test, c.fine, s);
      run.bi_fwd_only = finetune_accuracy(bi, &fwd_only, labeled, test, c.fine, s);
      run.uni_matched = finetune_accuracy(uni_matched, nullptr, labeled, test, c.fine, s);
      run.test = std::move(test);
      std::printf("      seed %d: apc %.3f->%.3f, biapc %.3f->%.3f | uni rand %.3f apc %.3f | bi rand %.3f "
                  "biapc %.3f fwd-only %.3f | uni(H=%d) rand %.3f\n",
                  seed, run.apc.losses.front(), run.apc.losses.back(), run.biapc.losses.front(),
                  run.biapc.losses.back(), run.uni_random, run.uni_apc, run.bi_random, run.bi_biapc,
                  run.bi_fwd_only, b.matched_hidden, run.uni_matched);
      std::fflush(stdout);
      b.seeds.push_back(std::move(run));
    }
    b.ok = true;
  } catch (const std::exception& e) {
    b.error = e.what();
  }
  return b;
}

double mean_of(const Benchmark& b, double SeedRun::*field) {
  double s = 0;
  for (const auto& r : b.seeds) s += r.*field;
  return s / static_cast<double>(b.seeds.size());
}

// ---------------------------------------------------------------------------
// Criteria

Outcome gradient_correctness() {
  const auto start = std::chrono::steady_clock::now();
  struct Case {
    ModelKind kind;
    ObjectiveKind objective;
  };
  const Case cases[] = {{ModelKind::kUni, ObjectiveKind::kCrossEntropy},
                        {ModelKind::kBi, ObjectiveKind::kCrossEntropy},
                        {ModelKind::kUni, ObjectiveKind::kApc},
                        {ModelKind::kBi, ObjectiveKind::kBiApc},
                        {ModelKind::kBi, ObjectiveKind::kMpc}};
  int checks = 0;
  std::size_t coords = 0;
  double worst = 0;
  std::string where;
  std::uint64_t seed = 100;
  for (int layers : {1, 2}) {
    for (int hidden : {4, 8}) {
      for (std::size_t T : {5, 12}) {
        for (int dim : {3, 16}) {
          for (const Case& c : cases) {
            ModelSpec spec;
            spec.kind = c.kind;
            spec.num_layers = layers;
            spec.hidden = hidden;
            spec.input_dim = dim;
            spec.dropout = 0.2;
            spec.head = head_for(c.objective);
            spec.num_classes = spec.head == HeadKind::kClassifier ? 4 : 0;
            ObjectiveConfig obj;
            obj.kind = c.objective;
            const std::vector<std::size_t> lengths{T, T - 2};
            const GradComparison r = model_gradient_check(spec, obj, lengths, ++seed);
            ++checks;
            coords += r.coordinates;
            if (r.max_rel_error >= worst) {
              worst = r.max_rel_error;
              where = std::string(to_string(c.objective)) + " L=" + std::to_string(layers) + " H=" +
                      std::to_string(hidden) + " T=" + std::to_string(T) + " D=" + std::to_string(dim) + " " +
                      r.worst_param;
            }
          }
        }
      }
    }
  }
  const double secs = seconds_since(start);
  return {worst < 1e-4 && secs < 60.0,
          std::to_string(checks) + " models, " + std::to_string(coords) + " coordinates, max relative error " +
              fmt("%.2e", worst) + " (" + where + "), " + fmt("%.1f", secs) + " s (limits 1e-4, 60 s)"};
}

Outcome leakage_invariance() {
  Rng rng = make_rng(7, "acceptance_leakage");
  int triples = 0, fails = 0;
  std::string first;
  for (int m = 0; m < 20; ++m) {
    ModelSpec spec;
    spec.kind = m % 4 == 0 ? ModelKind::kUni : ModelKind::kBi;
    spec.num_layers = 1 + m % 3;
    spec.hidden = 3 + m % 5;
    spec.input_dim = 2 + m % 4;
    spec.dropout = 0.3;  // inactive in eval mode
    AcousticModel<float> model(spec, derive_seed(7, "leak_model", static_cast<std::uint64_t>(m)));
    model.set_cross_trainable(false);
    std::vector<FeatureSequence> sample(3);
    for (auto& seq : sample) {
      const auto T = 4 + static_cast<std::size_t>(uniform01(rng) * 20);
      seq.utterance_id = "m" + std::to_string(m);
      seq.frames = Tensor<float>::matrix(T, static_cast<std::size_t>(spec.input_dim));
      for (float& v : seq.frames.values()) v = static_cast<float>(standard_normal(rng));
    }
    const LeakageResult r = leakage_test(model, sample, 6, derive_seed(7, "leak_trials", static_cast<std::uint64_t>(m)));
    triples += r.trials;
    fails += r.failures;
    if (first.empty()) first = r.first_failure;
  }
  std::string detail = std::to_string(triples) + " (model, input, t) perturbation checks over 20 random models, " +
                       std::to_string(fails) + " failures";
  if (!first.empty()) detail += "; first: " + first;
  return {triples >= 100 && fails == 0, detail};
}

Outcome frozen_blocks(const Benchmark& b) {
  if (!b.ok) return {false, "benchmark failed: " + b.error};
  int compared = 0;
  std::string bad;
  for (std::size_t s = 0; s < b.seeds.size(); ++s) {
    const PretrainArm& arm = b.seeds[s].biapc;
    std::vector<const Checkpoint*> all;
    for (const auto& c : arm.epochs) all.push_back(&c);
    all.push_back(&arm.final_model);
    for (const Checkpoint* c : all) {
      for (const auto& [name, init] : arm.initial_state) {
        if (name.find("_cross.") == std::string::npos) continue;
        ++compared;
        if (!bit_equal(c->tensors.at(name), init) && bad.empty()) {
          bad = "seed " + std::to_string(s + 1) + " epoch " + std::to_string(c->epoch) + " " + name;
        }
      }
    }
    AuditOptions opts;
    opts.seed = s + 1;
    const AuditReport report = audit_checkpoint(arm.final_model, b.seeds[s].test.features, opts);
    if (!report.passed() && bad.empty()) bad = "audit of seed " + std::to_string(s + 1) + ":\n" + report.format();
  }
  std::string detail = std::to_string(b.config.pre.epochs) + "-epoch biapc runs x " + std::to_string(b.seeds.size()) +
                       " seeds: " + std::to_string(compared) +
                       " cross-block comparisons against initialization, audit run on each averaged model";
  if (!bad.empty()) detail += "; mismatch at " + bad;
  return {bad.empty() && compared > 0 && b.config.pre.epochs >= 8, detail};
}

Outcome loss_oracles() {
  const Tensor<double> x(Shape{4, 1}, {1, 2, 3, 4});
  const Tensor<double> zero = Tensor<double>::matrix(4, 1);
  const double apc = apc_loss(zero, x, 2);
  const double bi = biapc_loss(zero, zero, x, 2);
  const Tensor<double> uniform = Tensor<double>::matrix(10, 4);
  const double ce = ce_loss(uniform, AlignmentLabels{"u", {0, 1, 2, 3, 0, 1, 2, 3, 0, 1}});
  // Degeneracy with a perfect reverse predictor: y_rev_t = x_{t-n}.
  Rng rng(11);
  double degeneracy = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const auto T = 4 + static_cast<std::size_t>(trial % 9);
    Tensor<double> xs = Tensor<double>::matrix(T, 3), yf = xs, yr = xs;
    for (double& v : xs.values()) v = standard_normal(rng);
    for (double& v : yf.values()) v = standard_normal(rng);
    for (std::size_t t = 2; t < T; ++t) {
      for (std::size_t d = 0; d < 3; ++d) yr(t, d) = xs(t - 2, d);
    }
    degeneracy = std::max(degeneracy, std::abs(biapc_loss(yf, yr, xs, 2, {1.0, 0.0}) - apc_loss(yf, xs, 2)));
    degeneracy = std::max(degeneracy, std::abs(biapc_loss(yf, yr, xs, 2, {1.0, 1.0}) - apc_loss(yf, xs, 2)));
  }
  const double ce_err = std::abs(ce - 10.0 * std::log(4.0));
  return {apc == 7.0 && bi == 5.0 && degeneracy == 0.0 && ce_err < 1e-12,
          "apc([1,2,3,4], 0, n=2) = " + fmt("%.17g", apc) + " (hand 7), biapc = " + fmt("%.17g", bi) +
              " (hand 5), ce uniform C=4 T=10 off 10 log 4 by " + fmt("%.1e", ce_err) +
              ", degeneracy max |difference| " + fmt("%.1e", degeneracy) + " over 50 random cases"};
}

Outcome schedule_fidelity() {
  auto rel = [](double a, double b) { return std::abs(a - b) / std::abs(b); };
  const TrainConfig p = TrainConfig::pretrain_defaults();
  const TrainConfig f = TrainConfig::finetune_defaults();
  const double errs[] = {rel(lr_at_epoch(p, 1), 1e-3), rel(lr_at_epoch(p, 2), 1e-3), rel(lr_at_epoch(p, 8), 1e-4),
                         rel(lr_at_epoch(f, 1), 2e-4), rel(lr_at_epoch(f, 2), 2e-4), rel(lr_at_epoch(f, 15), 2e-6)};
  const double worst = *std::max_element(std::begin(errs), std::end(errs));
  bool monotone = true;
  for (int e = 3; e <= 8; ++e) monotone = monotone && lr_at_epoch(p, e) < lr_at_epoch(p, e - 1);
  return {worst <= 1e-12 && monotone && p.epochs == 8 && f.epochs == 15,
          "pretrain 1e-3 x2 -> 1e-4 at epoch 8, finetune 2e-4 -> 2e-6 at epoch 15; max relative error " +
              fmt("%.1e", worst)};
}

Outcome averaging() {
  ModelSpec spec;
  spec.kind = ModelKind::kBi;
  spec.num_layers = 2;
  spec.hidden = 5;
  spec.input_dim = 3;
  std::vector<Checkpoint> ckpts;
  for (int i = 0; i < 4; ++i) {
    ckpts.push_back(make_checkpoint(AcousticModel<float>(spec, derive_seed(3, "avg", static_cast<std::uint64_t>(i))), i + 1));
  }
  const Checkpoint avg = average_checkpoints(ckpts, 3);
  std::size_t n = 0;
  double worst_ulps = 0;
  for (const auto& [name, t] : avg.tensors) {
    for (std::size_t i = 0; i < t.size(); ++i) {
      long double sum = 0;
      for (int k = 1; k <= 3; ++k) sum += ckpts[static_cast<std::size_t>(k)].tensors.at(name)[i];
      const auto expect = static_cast<float>(sum / 3.0L);
      const float ulp = std::nextafter(std::abs(expect), INFINITY) - std::abs(expect);
      worst_ulps = std::max(worst_ulps, static_cast<double>(std::abs(t[i] - expect) / ulp));
      ++n;
    }
  }
  const bool identity = average_checkpoints(ckpts, 1).tensors == ckpts.back().tensors;
  return {worst_ulps <= 0.5 && identity,
          std::to_string(n) + " values: mean of last 3 within " + fmt("%.2g", worst_ulps) +
              " ulp of the exact mean; k=1 identity " + (identity ? "holds" : "broken")};
}

Outcome equivalence(const Benchmark& b) {
  // Full mode with zeroed cross blocks against pretrain mode, bitwise.
  ModelSpec rec;
  rec.kind = ModelKind::kBi;
  rec.num_layers = 3;
  rec.hidden = 6;
  rec.input_dim = 4;
  rec.head = HeadKind::kReconstruction;
  AcousticModel<float> full(rec, 21);
  for (auto* p : full.cross_parameters()) p->value.fill(0.0f);
  ModelSpec pre_spec = rec;
  pre_spec.head = HeadKind::kPrediction;
  AcousticModel<float> pre(pre_spec, 22);
  pre.import_matching(full.export_state(), [](const std::string& n) { return !is_head_tensor(n); });
  pre.set_cross_trainable(false);

  Rng rng(21);
  std::vector<FeatureSequence> seqs(3);
  for (std::size_t u = 0; u < seqs.size(); ++u) {
    seqs[u].frames = Tensor<float>::matrix(7 + 4 * u, 4);
    for (float& v : seqs[u].frames.values()) v = static_cast<float>(standard_normal(rng));
  }
  const std::vector<std::size_t> idx{0, 1, 2};
  const Batch<float> batch = make_batch<float>(seqs, {}, idx);
  Tape<float> tape(false);
  const auto x = tape.constant(batch.features);
  const auto of = full.forward(tape, x, batch.layout, RunMode::kFull, false);
  const auto op = pre.forward(tape, x, batch.layout, RunMode::kPretrain, false);
  int streams = 0;
  bool exact = true;
  for (std::size_t l = 0; l < 3; ++l) {
    exact = exact && bit_equal(tape.value(of.fwd_hidden[l]), tape.value(op.fwd_hidden[l]));
    exact = exact && bit_equal(tape.value(of.rev_hidden[l]), tape.value(op.rev_hidden[l]));
    streams += 2;
  }

  // Uni -> bi transfer of the trained APC models.
  if (!b.ok) return {false, "benchmark failed: " + b.error};
  double max_diff = 0;
  for (const auto& run : b.seeds) {
    AcousticModel<float> uni = model_from_checkpoint<float>(run.apc.final_model);
    ModelSpec bi_spec = run.apc.final_model.spec;
    bi_spec.kind = ModelKind::kBi;
    AcousticModel<float> bi = model_from_checkpoint<float>(transfer_uni_to_bi(run.apc.final_model, bi_spec, 5));
    bi.set_cross_trainable(false);
    const std::vector<std::size_t> some{0, 1, 2, 3};
    const Batch<float> tb = make_batch<float>(run.test.features, {}, some);
    Tape<float> t2(false);
    const auto xi = t2.constant(tb.features);
    const auto ou = uni.forward(t2, xi, tb.layout, RunMode::kPretrain, false);
    const auto ob = bi.forward(t2, xi, tb.layout, RunMode::kPretrain, false);
    const auto valid = tb.layout.valid_rows();
    std::vector<std::pair<Tensor<float>, Tensor<float>>> pairs;
    for (std::size_t l = 0; l < ou.fwd_hidden.size(); ++l) {
      pairs.emplace_back(t2.value(ou.fwd_hidden[l]), t2.value(ob.fwd_hidden[l]));
    }
    pairs.emplace_back(t2.value(ou.fwd_output), t2.value(ob.fwd_output));
    for (const auto& [u, v] : pairs) {
      for (std::size_t r = 0; r < u.rows(); ++r) {
        if (valid[r] == 0) continue;
        for (std::size_t j = 0; j < u.cols(); ++j) max_diff = std::max<double>(max_diff, std::abs(u(r, j) - v(r, j)));
      }
    }
  }
  return {exact && max_diff < 1e-5,
          std::to_string(streams) + " hidden streams bit-identical between zero-cross full mode and pretrain mode: " +
              (exact ? "yes" : "NO") + "; uni->bi forward stream max |diff| " + fmt("%.2e", max_diff) +
              " over the 5 trained APC models (limit 1e-5)"};
}

Outcome featurizer_contract() {
  Rng rng(31);
  int count_ok = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto L = 1 + static_cast<std::size_t>(uniform01(rng) * 800);
    const auto S = 1 + static_cast<std::size_t>(uniform01(rng) * 400);
    const auto N = L + static_cast<std::size_t>(uniform01(rng) * 8000);
    std::size_t enumerated = 0;
    for (std::size_t start = 0; start + L <= N; start += S) ++enumerated;
    if (frame_count(N, L, S) == enumerated) ++count_ok;
  }

  FeaturizerConfig cfg;
  AudioBuffer silence;
  silence.samples.assign(16000, 0.0);
  const Tensor<double> ms = logmel_matrix(silence, cfg);
  const bool floor_ok = std::all_of(ms.values().begin(), ms.values().end(),
                                    [&](double v) { return v == std::log(cfg.log_floor); });

  AudioBuffer a;
  for (int n = 0; n < 12000; ++n) a.samples.push_back(0.1 * standard_normal(rng) + 0.2 * std::sin(0.07 * n));
  AudioBuffer b2 = a;
  for (double& s : b2.samples) s *= 2.0;
  const Tensor<double> la = logmel_matrix(a, cfg);
  const Tensor<double> lb = logmel_matrix(b2, cfg);
  double worst = 0;
  std::size_t above = 0;
  for (std::size_t i = 0; i < la.size(); ++i) {
    if (la[i] <= std::log(cfg.log_floor)) continue;
    worst = std::max(worst, std::abs(lb[i] - la[i] - std::log(4.0)));
    ++above;
  }
  return {count_ok == 1000 && floor_ok && above > 0 && worst < 1e-6,
          "frame count exact on " + std::to_string(count_ok) + "/1000 random (N, L, S); silence at log floor: " +
              (floor_ok ? "yes" : "NO") + "; doubling shift off log 4 by at most " + fmt("%.2e", worst) + " on " +
              std::to_string(above) + " values above the floor"};
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(BAPC_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int raw = std::system(cmd.c_str());
  return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Outcome reproducibility() {
  const fs::path root = fs::temp_directory_path() / ("bapc_accept_" + std::to_string(::getpid()));
  fs::remove_all(root);
  fs::create_directories(root);
  {
    std::ofstream pre(root / "pretrain.ini");
    pre << "kind=bi\nobjective=biapc\nlayers=2\nhidden=32\ndropout=0.2\nepochs=3\nhold_epochs=1\n"
           "avg_last_k=3\nlr0=1e-2\nbatch_size=8\n";
    std::ofstream fine(root / "finetune.ini");
    fine << "kind=bi\nlayers=2\nhidden=32\ndropout=0.2\nepochs=3\nhold_epochs=1\navg_last_k=3\nlr0=3e-3\n"
            "batch_size=4\n";
  }
  for (const char* run : {"a", "b"}) {
    const fs::path d = root / run;
    const std::string data = (d / "data").string();
    const int rc[] = {
        run_cli("gen --out_dir " + data + " --seed 11"),
        run_cli("pretrain --config " + (root / "pretrain.ini").string() + " --features " + data +
                "/train.farc --out_dir " + (d / "pre").string() + " --seed 11"),
        run_cli("finetune --config " + (root / "finetune.ini").string() + " --features " + data +
                "/labeled.farc --labels " + data + "/labeled.larc --init " + (d / "pre" / "final.ckpt").string() +
                " --out_dir " + (d / "ft").string() + " --seed 11"),
        run_cli("eval --checkpoint " + (d / "ft" / "final.ckpt").string() + " --features " + data +
                "/test.farc --labels " + data + "/test.larc --out " + (d / "eval.json").string() + " --seed 11")};
    for (int r : rc) {
      if (r != 0) return {false, std::string("pipeline run ") + run + " exited with status " + std::to_string(r)};
    }
  }
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(root / "a")) {
    const auto ext = e.path().extension();
    if (ext == ".ckpt" || ext == ".farc" || ext == ".larc" || e.path().filename() == "metrics.json" ||
        e.path().filename() == "eval.json") {
      files.push_back(fs::relative(e.path(), root / "a"));
    }
  }
  std::sort(files.begin(), files.end());
  std::string differ;
  std::size_t ckpts = 0;
  for (const auto& f : files) {
    if (f.extension() == ".ckpt") ++ckpts;
    if (slurp(root / "a" / f) != slurp(root / "b" / f) && differ.empty()) differ = f.string();
  }
  const double acc = nlohmann::json::parse(slurp(root / "a" / "eval.json"))["frame_accuracy"];
  fs::remove_all(root);
  std::string detail = "two gen -> pretrain -> finetune -> eval runs (seed 11): " + std::to_string(files.size()) +
                       " files compared (" + std::to_string(ckpts) + " checkpoints), test accuracy " +
                       fmt("%.3f", acc);
  if (!differ.empty()) detail += "; differs: " + differ;
  return {differ.empty() && ckpts >= 8, detail};
}

}  // namespace
}  // namespace bapc

int main() {
  using namespace bapc;
  std::printf("acceptance suite, SIMD backend: %s\n", std::string(kernels::backend_name(kernels::active_backend())).c_str());
  report(1, "gradient correctness", gradient_correctness);
  report(2, "leakage invariance", leakage_invariance);

  std::printf("      running the desk-scale benchmark (%d seeds)\n", kSeeds);
  std::fflush(stdout);
  const Benchmark bench = run_benchmark();

  report(3, "frozen cross blocks", [&] { return frozen_blocks(bench); });
  report(4, "loss-value oracles", loss_oracles);
  report(5, "schedule fidelity", schedule_fidelity);
  report(6, "checkpoint averaging", averaging);
  report(7, "pre-training learns", [&]() -> Outcome {
    if (!bench.ok) return {false, "benchmark failed: " + bench.error};
    double worst = 0, wall = 0;
    for (const auto& r : bench.seeds) {
      for (const PretrainArm* arm : {&r.apc, &r.biapc}) {
        worst = std::max(worst, arm->losses.back() / arm->losses.front());
        wall = std::max(wall, arm->wall);
      }
    }
    return {worst < 0.5 && wall < 300.0,
            "final/first epoch loss, worst over 5 seeds x {apc, biapc}: " + fmt("%.3f", worst) +
                " (limit 0.5); slowest arm " + fmt("%.1f", wall) + " s (limit 300 s)"};
  });
  report(8, "transfer helps", [&]() -> Outcome {
    if (!bench.ok) return {false, "benchmark failed: " + bench.error};
    const double ur = mean_of(bench, &SeedRun::uni_random), ua = mean_of(bench, &SeedRun::uni_apc);
    const double br = mean_of(bench, &SeedRun::bi_random), bb = mean_of(bench, &SeedRun::bi_biapc);
    const double bf = mean_of(bench, &SeedRun::bi_fwd_only), um = mean_of(bench, &SeedRun::uni_matched);
    std::printf("      mean test frame accuracy: uni random %.4f, uni apc %.4f, bi random %.4f, bi biapc %.4f, "
                "bi apc-forward-only %.4f; uni H=%d (parameters matched to bi) random %.4f\n",
                ur, ua, br, bb, bf, bench.matched_hidden, um);
    return {bb > br && ua > ur && bb >= bf,
            "bi: biapc " + fmt("%.4f", bb) + " > random " + fmt("%.4f", br) + "; uni: apc " + fmt("%.4f", ua) +
                " > random " + fmt("%.4f", ur) + "; bi biapc " + fmt("%.4f", bb) + " >= apc-forward-only " +
                fmt("%.4f", bf)};
  });
  report(9, "equivalence oracles", [&] { return equivalence(bench); });
  report(10, "featurizer contract", featurizer_contract);
  report(11, "reproducibility", reproducibility);
  std::printf("%d of 11 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
