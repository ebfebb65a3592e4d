// bapc: featurize, gen, pretrain, finetune, eval, audit, gradcheck.
//
// Every subcommand takes --config FILE, a flat key=value file whose keys are
// that subcommand's long option names. Config values are applied first and
// command-line flags override them; an unknown key is an error. Commands
// with outputs write the effective config (defaults resolved) next to them.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "bapc/archive.hpp"
#include "bapc/audit.hpp"
#include "bapc/checkpoint.hpp"
#include "bapc/datagen.hpp"
#include "bapc/featurizer.hpp"
#include "bapc/trainer.hpp"
#include "bapc/wav.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace bapc {
namespace {

struct ModelFlags {
  std::string kind = "bi";
  int layers = 4;
  int hidden = 512;
  double dropout = 0.2;
  bool batchnorm = true;
};

struct TrainFlags {
  TrainConfig config;
  std::string objective;
};

struct Options {
  std::string config;

  // featurize
  std::string wav_dir;
  std::string feat_out;
  FeaturizerConfig feat;
  std::string window = "hamming";

  // gen
  SyntheticSpec synth;
  std::string gen_out;
  int train_utterances = 200;
  double labeled_fraction = 0.1;

  // pretrain / finetune
  std::string features;
  std::string labels;
  std::string init;
  std::string out_dir;
  ModelFlags model;
  TrainFlags pre{TrainConfig::pretrain_defaults(), "biapc"};
  TrainFlags fine{TrainConfig::finetune_defaults(), "ce"};
  double fwd_weight = 0.5;
  double rev_weight = 0.5;
  int classes = 0;

  // eval / audit / gradcheck
  std::string checkpoint;
  std::string metrics_out;
  int batch_size = 16;
  int trials = 100;
  int coordinates = 24;
  int frames = 12;
  double tolerance = 1e-4;
  int gc_layers = 2;
  int gc_hidden = 4;
  int gc_dim = 3;
  double gc_dropout = 0.2;
  int gc_batch = 2;

  std::uint64_t seed = 1;
};

void add_model_flags(CLI::App* sub, ModelFlags& m) {
  sub->add_option("--kind", m.kind, "uni or bi")->check(CLI::IsMember({"uni", "bi"}));
  sub->add_option("--layers", m.layers, "recurrent layers");
  sub->add_option("--hidden", m.hidden, "cells per direction");
  sub->add_option("--dropout", m.dropout, "dropout after each layer's batch norm");
  sub->add_option("--batchnorm", m.batchnorm, "batch norm after each layer");
}

void add_train_flags(CLI::App* sub, TrainFlags& t) {
  sub->add_option("--epochs", t.config.epochs);
  sub->add_option("--lr0", t.config.lr0, "initial learning rate");
  sub->add_option("--hold_epochs", t.config.hold_epochs, "epochs at lr0 before the decay");
  sub->add_option("--lambda", t.config.lambda, "final-to-initial learning-rate ratio");
  sub->add_option("--batch_size", t.config.batch_size, "utterances per minibatch");
  sub->add_option("--clip_norm", t.config.clip_norm, "global gradient-norm clip, <= 0 disables");
  sub->add_option("--avg_last_k", t.config.avg_last_k, "checkpoints averaged into the final model");
  sub->add_option("--per_frame_mean", t.config.per_frame_mean, "divide each minibatch loss by its frames");
}

void add_seed(CLI::App* sub, Options& o) {
  sub->add_option("--seed", o.seed, "root of every random stream");
  sub->add_option("--config", o.config, "flat key=value file of this command's options")->configurable(false);
}

void build(CLI::App& app, Options& o) {
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast)->always_capture_default();

  auto* feat = app.add_subcommand("featurize", "log-mel features for a directory of WAV files");
  feat->add_option("--wav_dir", o.wav_dir)->required();
  feat->add_option("--out", o.feat_out, "feature archive")->required();
  feat->add_option("--num_filters", o.feat.num_filters);
  feat->add_option("--frame_length_ms", o.feat.frame_length_ms);
  feat->add_option("--frame_shift_ms", o.feat.frame_shift_ms);
  feat->add_option("--f_low", o.feat.f_low);
  feat->add_option("--f_high", o.feat.f_high, "0 means Nyquist");
  feat->add_option("--window", o.window)->check(CLI::IsMember({"hamming", "hann", "rectangular"}));
  feat->add_option("--preemphasis", o.feat.preemphasis);
  feat->add_option("--preemphasis_coeff", o.feat.preemphasis_coeff);
  feat->add_option("--normalize", o.feat.normalize, "per-utterance mean/variance normalization");
  feat->add_option("--log_floor", o.feat.log_floor);
  add_seed(feat, o);

  auto* gen = app.add_subcommand("gen", "synthetic corpus: train, labeled subset and test archives");
  gen->add_option("--out_dir", o.gen_out)->required();
  gen->add_option("--num_utterances", o.synth.num_utterances);
  gen->add_option("--train_utterances", o.train_utterances, "the rest form the test split");
  gen->add_option("--labeled_fraction", o.labeled_fraction, "share of the train split given labels");
  gen->add_option("--min_len", o.synth.min_len);
  gen->add_option("--max_len", o.synth.max_len);
  gen->add_option("--dim", o.synth.dim);
  gen->add_option("--classes", o.synth.num_classes);
  gen->add_option("--ar_order", o.synth.ar_order);
  gen->add_option("--dwell", o.synth.mean_dwell, "mean segment length in frames");
  gen->add_option("--noise", o.synth.noise);
  gen->add_option("--min_radius", o.synth.min_radius, "smallest AR pole radius");
  gen->add_option("--max_radius", o.synth.max_radius, "largest AR pole radius");
  add_seed(gen, o);

  auto* pre = app.add_subcommand("pretrain", "self-supervised pre-training");
  pre->add_option("--features", o.features)->required();
  pre->add_option("--out_dir", o.out_dir)->required();
  add_model_flags(pre, o.model);
  pre->add_option("--objective", o.pre.objective)->check(CLI::IsMember({"apc", "biapc", "mpc"}));
  pre->add_option("--shift", o.pre.config.objective.shift, "prediction shift n");
  pre->add_option("--mask_ratio", o.pre.config.objective.mask_ratio, "mpc only");
  pre->add_option("--fwd_weight", o.fwd_weight, "biapc forward-task weight");
  pre->add_option("--rev_weight", o.rev_weight, "biapc reverse-task weight");
  add_train_flags(pre, o.pre);
  add_seed(pre, o);

  auto* fine = app.add_subcommand("finetune", "frame classification, optionally from a checkpoint");
  fine->add_option("--features", o.features)->required();
  fine->add_option("--labels", o.labels)->required();
  fine->add_option("--init", o.init, "checkpoint; a uni one is transferred when kind=bi");
  fine->add_option("--out_dir", o.out_dir)->required();
  add_model_flags(fine, o.model);
  fine->add_option("--classes", o.classes, "0 infers max label + 1");
  fine->add_option("--reset_bn_moments", o.fine.config.reset_bn_moments);
  add_train_flags(fine, o.fine);
  add_seed(fine, o);

  auto* ev = app.add_subcommand("eval", "frame accuracy, or objective loss for pre-trained models");
  ev->add_option("--checkpoint", o.checkpoint)->required();
  ev->add_option("--features", o.features)->required();
  ev->add_option("--labels", o.labels, "required for classifiers");
  ev->add_option("--out", o.metrics_out, "metrics json");
  ev->add_option("--batch_size", o.batch_size);
  ev->add_option("--mask_ratio", o.pre.config.objective.mask_ratio, "mpc only");
  add_seed(ev, o);

  auto* au = app.add_subcommand("audit", "leakage, frozen-block and gradient checks on a checkpoint");
  au->add_option("--checkpoint", o.checkpoint)->required();
  au->add_option("--features", o.features)->required();
  au->add_option("--trials", o.trials, "leakage perturbations");
  au->add_option("--coordinates", o.coordinates, "gradient spot-checks");
  au->add_option("--frames", o.frames, "utterance cut for the gradient check");
  au->add_option("--tolerance", o.tolerance, "max relative gradient error");
  add_seed(au, o);

  auto* gc = app.add_subcommand("gradcheck", "full central-difference check of every objective");
  gc->add_option("--layers", o.gc_layers);
  gc->add_option("--hidden", o.gc_hidden);
  gc->add_option("--dim", o.gc_dim);
  gc->add_option("--frames", o.frames, "longest utterance");
  gc->add_option("--batch", o.gc_batch, "utterances");
  gc->add_option("--dropout", o.gc_dropout);
  gc->add_option("--tolerance", o.tolerance);
  add_seed(gc, o);
}

CLI::App* selected(CLI::App& app) {
  auto subs = app.get_subcommands();
  return subs.empty() ? nullptr : subs.front();
}

// Flags reconstructed from a flat config file, validated against sub.
std::vector<std::string> config_args(CLI::App* sub, const std::string& path) {
  if (!fs::is_regular_file(path)) throw std::runtime_error("config file not found: " + path);
  std::vector<std::string> args;
  for (const CLI::ConfigItem& item : CLI::ConfigINI().from_file(path)) {
    if (item.name == "++" || item.name == "--") continue;  // section markers
    if (!item.parents.empty()) {
      throw std::runtime_error("config " + path + ": sections are not supported ('" + item.fullname() + "')");
    }
    const CLI::Option* opt = sub->get_option_no_throw("--" + item.name);
    if (opt == nullptr || !opt->get_configurable()) {
      throw std::runtime_error("config " + path + ": unknown key '" + item.name + "' for " + sub->get_name());
    }
    if (item.inputs.size() != 1) {
      throw std::runtime_error("config " + path + ": key '" + item.name + "' needs exactly one value");
    }
    args.push_back("--" + item.name + "=" + item.inputs.front());
  }
  return args;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

void write_effective_config(CLI::App* sub, const fs::path& path) {
  write_text(path, "# bapc " + sub->get_name() + "\n" + sub->config_to_str(true, false));
}

ModelSpec model_spec(const ModelFlags& m, int input_dim) {
  ModelSpec spec;
  spec.kind = parse_model_kind(m.kind);
  spec.num_layers = m.layers;
  spec.hidden = m.hidden;
  spec.input_dim = input_dim;
  spec.dropout = m.dropout;
  spec.batchnorm = m.batchnorm;
  return spec;
}

std::vector<FeatureSequence> load_features(const std::string& path) {
  auto features = read_feature_archive(path);
  if (features.empty()) throw std::runtime_error("feature archive " + path + " holds no utterances");
  return features;
}

std::string epoch_name(int epoch) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "epoch_%02d.ckpt", epoch);
  return buf;
}

// Writes per-epoch checkpoints and the JSON-lines log as training runs, then
// the averaged final model.
struct RunWriter {
  fs::path dir;
  std::ofstream log;

  explicit RunWriter(fs::path d) : dir(std::move(d)) {
    fs::create_directories(dir);
    log.open(dir / "train_log.jsonl", std::ios::binary);
    if (!log) throw std::runtime_error("cannot write " + (dir / "train_log.jsonl").string());
  }

  EpochCallback callback() {
    return [this](const EpochRecord& rec, const Checkpoint& ckpt) {
      save_checkpoint(dir / epoch_name(rec.epoch), ckpt);
      json line{{"epoch", rec.epoch}, {"mean_loss", rec.mean_loss}, {"lr", rec.lr}, {"wall_seconds", rec.wall_seconds}};
      log << line.dump() << "\n" << std::flush;
      std::cout << "epoch " << rec.epoch << "  loss " << rec.mean_loss << "  lr " << rec.lr << "  "
                << rec.wall_seconds << " s\n";
    };
  }
};

json losses_of(const TrainResult& r) {
  json out = json::array();
  for (const auto& rec : r.log) out.push_back(rec.mean_loss);
  return out;
}

int cmd_featurize(CLI::App* sub, Options& o) {
  o.feat.window = parse_window(o.window);
  o.feat.validate();
  if (!fs::is_directory(o.wav_dir)) throw std::runtime_error("not a directory: " + o.wav_dir);
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(o.wav_dir)) {
    if (!entry.is_regular_file()) continue;
    std::string ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".wav") files.push_back(entry.path());
  }
  if (files.empty()) throw std::runtime_error("no .wav files in " + o.wav_dir);
  std::sort(files.begin(), files.end());

  std::vector<FeatureSequence> records;
  for (const auto& file : files) {
    try {
      records.push_back(extract_logmel(read_wav(file), o.feat, file.stem().string()));
    } catch (const std::exception& e) {
      std::cerr << "warning: skipped: " << e.what() << "\n";
    }
  }
  if (records.empty()) {
    std::cerr << "error: none of the " << files.size() << " WAV files could be featurized\n";
    return 1;
  }
  write_feature_archive(o.feat_out, records);
  write_effective_config(sub, o.feat_out + ".config.ini");
  std::cout << "wrote " << records.size() << " of " << files.size() << " utterances to " << o.feat_out << "\n";
  return 0;
}

int cmd_gen(CLI::App* sub, Options& o) {
  o.synth.seed = o.seed;
  o.synth.validate();
  if (o.train_utterances < 1 || o.train_utterances > o.synth.num_utterances) {
    throw std::invalid_argument("train_utterances must be in [1, num_utterances]");
  }
  if (!(o.labeled_fraction > 0.0 && o.labeled_fraction <= 1.0)) {
    throw std::invalid_argument("labeled_fraction must be in (0, 1]");
  }
  const SyntheticCorpus corpus = generate_corpus(o.synth);
  auto [train, test] = split_corpus(corpus, static_cast<std::size_t>(o.train_utterances));
  const SyntheticCorpus labeled = labeled_subset(train, o.labeled_fraction, derive_seed(o.seed, "labeled_subset"));

  const fs::path dir(o.gen_out);
  fs::create_directories(dir);
  write_feature_archive(dir / "train.farc", train.features);
  write_label_archive(dir / "train.larc", train.labels);
  write_feature_archive(dir / "labeled.farc", labeled.features);
  write_label_archive(dir / "labeled.larc", labeled.labels);
  write_feature_archive(dir / "test.farc", test.features);
  write_label_archive(dir / "test.larc", test.labels);
  write_effective_config(sub, dir / "config.ini");

  json meta{{"command", "gen"},
            {"seed", o.seed},
            {"train_utterances", train.features.size()},
            {"labeled_utterances", labeled.features.size()},
            {"test_utterances", test.features.size()},
            {"dim", o.synth.dim},
            {"classes", o.synth.num_classes}};
  write_text(dir / "metrics.json", meta.dump(2) + "\n");
  std::cout << "train " << train.features.size() << ", labeled " << labeled.features.size() << ", test "
            << test.features.size() << " utterances in " << dir.string() << "\n";
  return 0;
}

int cmd_pretrain(CLI::App* sub, Options& o) {
  const auto features = load_features(o.features);
  TrainConfig config = o.pre.config;
  config.objective.kind = parse_objective(o.pre.objective);
  config.objective.direction_weights = {o.fwd_weight, o.rev_weight};
  config.seed = o.seed;
  ModelSpec spec = model_spec(o.model, static_cast<int>(features.front().dim()));
  spec.head = head_for(config.objective.kind);
  spec.validate();
  check_objective(spec, config.objective.kind);
  config.validate();

  RunWriter writer(o.out_dir);
  write_effective_config(sub, writer.dir / "config.ini");
  AcousticModel<float> model(spec, derive_seed(o.seed, "init"));
  const TrainResult result = pretrain(model, features, config, writer.callback());
  save_checkpoint(writer.dir / "final.ckpt", average_checkpoints(result.checkpoints, config.avg_last_k));

  json metrics{{"command", "pretrain"},
               {"seed", o.seed},
               {"objective", o.pre.objective},
               {"final_loss", result.log.back().mean_loss},
               {"epoch_losses", losses_of(result)}};
  write_text(writer.dir / "metrics.json", metrics.dump(2) + "\n");
  return 0;
}

int cmd_finetune(CLI::App* sub, Options& o) {
  const auto features = load_features(o.features);
  const auto labels = match_labels(features, read_label_archive(o.labels));
  int classes = o.classes;
  if (classes == 0) {
    for (const auto& l : labels) {
      for (std::int32_t v : l.labels) classes = std::max(classes, v + 1);
    }
  }
  TrainConfig config = o.fine.config;
  config.seed = o.seed;
  ModelSpec spec = model_spec(o.model, static_cast<int>(features.front().dim()));
  spec.head = HeadKind::kClassifier;
  spec.num_classes = classes;
  spec.validate();
  config.validate();

  Checkpoint init;
  const bool has_init = !o.init.empty();
  if (has_init) {
    init = load_checkpoint(o.init);
    if (init.spec.kind == ModelKind::kUni && spec.kind == ModelKind::kBi) {
      std::cout << "transferring uni checkpoint into the forward blocks of a bi model\n";
      init = transfer_uni_to_bi(init, spec, derive_seed(o.seed, "transfer"));
    }
  }

  RunWriter writer(o.out_dir);
  write_effective_config(sub, writer.dir / "config.ini");
  const TrainResult result =
      finetune(spec, has_init ? &init : nullptr, features, labels, config, writer.callback());
  const Checkpoint final_model = average_checkpoints(result.checkpoints, config.avg_last_k);
  save_checkpoint(writer.dir / "final.ckpt", final_model);

  AcousticModel<float> model = model_from_checkpoint<float>(final_model);
  const double acc = frame_accuracy(predict(model, features), labels);
  json metrics{{"command", "finetune"},
               {"seed", o.seed},
               {"init", has_init ? "checkpoint" : "random"},
               {"classes", classes},
               {"final_loss", result.log.back().mean_loss},
               {"train_frame_accuracy", acc},
               {"epoch_losses", losses_of(result)}};
  write_text(writer.dir / "metrics.json", metrics.dump(2) + "\n");
  return 0;
}

int cmd_eval(CLI::App* sub, Options& o) {
  const Checkpoint ckpt = load_checkpoint(o.checkpoint);
  const auto features = load_features(o.features);
  AcousticModel<float> model = model_from_checkpoint<float>(ckpt);
  json metrics{{"command", "eval"}, {"seed", o.seed}, {"utterances", features.size()}};

  if (ckpt.spec.head == HeadKind::kClassifier) {
    if (o.labels.empty()) throw std::invalid_argument("eval of a classifier needs --labels");
    const auto labels = match_labels(features, read_label_archive(o.labels));
    const double acc = frame_accuracy(predict(model, features, o.batch_size), labels);
    metrics["frame_accuracy"] = acc;
    std::cout << "frame accuracy " << acc << "\n";
  } else {
    ObjectiveConfig obj;
    obj.kind = ckpt.spec.head == HeadKind::kReconstruction
                   ? ObjectiveKind::kMpc
                   : (ckpt.spec.kind == ModelKind::kBi ? ObjectiveKind::kBiApc : ObjectiveKind::kApc);
    if (auto it = ckpt.metadata.find("shift"); it != ckpt.metadata.end()) obj.shift = std::stoi(it->second);
    obj.mask_ratio = o.pre.config.objective.mask_ratio;
    if (obj.kind == ObjectiveKind::kBiApc) model.set_cross_trainable(false);
    Rng rng = make_rng(o.seed, "eval");
    Rng mask_rng = make_rng(o.seed, "eval_mask");
    double loss = 0.0;
    std::size_t frames = 0;
    for (const auto& indices : make_batches(features, o.batch_size, rng)) {
      const Batch<float> batch = make_batch<float>(features, {}, indices);
      Tape<float> tape(false);
      const auto res = objective_loss(model, tape, batch, obj, false, nullptr, &mask_rng);
      loss += tape.value(res.loss)[0];
      frames += res.frames;
    }
    if (frames == 0) throw std::invalid_argument("no frame contributes to the objective");
    metrics["objective"] = std::string(to_string(obj.kind));
    metrics["mean_loss"] = loss / static_cast<double>(frames);
    std::cout << to_string(obj.kind) << " loss per frame " << loss / static_cast<double>(frames) << "\n";
  }
  if (!o.metrics_out.empty()) {
    write_text(o.metrics_out, metrics.dump(2) + "\n");
    write_effective_config(sub, o.metrics_out + ".config.ini");
  }
  return 0;
}

int cmd_audit(CLI::App*, Options& o) {
  const Checkpoint ckpt = load_checkpoint(o.checkpoint);
  const auto features = load_features(o.features);
  AuditOptions options;
  options.leakage_trials = o.trials;
  options.gradient_coordinates = o.coordinates;
  options.gradient_frames = o.frames;
  options.gradient_tolerance = o.tolerance;
  options.seed = o.seed;
  const AuditReport report = audit_checkpoint(ckpt, features, options);
  std::cout << report.format();
  return report.passed() ? 0 : 1;
}

int cmd_gradcheck(CLI::App*, Options& o) {
  struct Case {
    ModelKind kind;
    ObjectiveKind objective;
  };
  const Case cases[] = {{ModelKind::kUni, ObjectiveKind::kApc},
                        {ModelKind::kBi, ObjectiveKind::kBiApc},
                        {ModelKind::kBi, ObjectiveKind::kMpc},
                        {ModelKind::kUni, ObjectiveKind::kCrossEntropy},
                        {ModelKind::kBi, ObjectiveKind::kCrossEntropy}};
  if (o.gc_batch < 1 || o.frames < 3) throw std::invalid_argument("gradcheck needs batch >= 1 and frames >= 3");
  std::vector<std::size_t> lengths;
  for (int b = 0; b < o.gc_batch; ++b) lengths.push_back(static_cast<std::size_t>(std::max(3, o.frames - 2 * b)));

  bool ok = true;
  for (const Case& c : cases) {
    ModelSpec spec;
    spec.kind = c.kind;
    spec.num_layers = o.gc_layers;
    spec.hidden = o.gc_hidden;
    spec.input_dim = o.gc_dim;
    spec.dropout = o.gc_dropout;
    spec.head = head_for(c.objective);
    spec.num_classes = spec.head == HeadKind::kClassifier ? 3 : 0;
    ObjectiveConfig obj;
    obj.kind = c.objective;
    const GradComparison r = model_gradient_check(spec, obj, lengths, o.seed);
    const bool pass = r.max_rel_error < o.tolerance;
    ok = ok && pass;
    std::printf("%s  %-3s %-6s %6zu coordinates, max relative error %.3g (%s[%zu])\n", pass ? "PASS" : "FAIL",
                std::string(to_string(c.kind)).c_str(), std::string(to_string(c.objective)).c_str(), r.coordinates,
                r.max_rel_error, r.worst_param.c_str(), r.worst_index);
  }
  return ok ? 0 : 1;
}

int dispatch(CLI::App* sub, Options& o) {
  const std::string& name = sub->get_name();
  if (name == "featurize") return cmd_featurize(sub, o);
  if (name == "gen") return cmd_gen(sub, o);
  if (name == "pretrain") return cmd_pretrain(sub, o);
  if (name == "finetune") return cmd_finetune(sub, o);
  if (name == "eval") return cmd_eval(sub, o);
  if (name == "audit") return cmd_audit(sub, o);
  return cmd_gradcheck(sub, o);
}

}  // namespace
}  // namespace bapc

int main(int argc, char** argv) {
  using namespace bapc;
  Options opts;
  CLI::App app("Bidirectional APC pre-training and frame classification", "bapc");
  build(app, opts);

  // Config entries go in front of the command-line flags so the latter win;
  // the file is located before parsing so it can satisfy required options.
  std::vector<std::string> args(argv, argv + argc);
  try {
    std::size_t sub_at = 1;
    while (sub_at < args.size() && args[sub_at].rfind("-", 0) == 0) ++sub_at;
    CLI::App* sub = sub_at < args.size() ? app.get_subcommand_no_throw(args[sub_at]) : nullptr;
    std::string config;
    for (std::size_t i = sub_at + 1; sub != nullptr && i < args.size(); ++i) {
      if (args[i] == "--config" && i + 1 < args.size()) config = args[i + 1];
      if (args[i].rfind("--config=", 0) == 0) config = args[i].substr(9);
    }
    if (!config.empty()) {
      const std::vector<std::string> extra = config_args(sub, config);
      args.insert(args.begin() + static_cast<std::ptrdiff_t>(sub_at) + 1, extra.begin(), extra.end());
    }
  } catch (const std::exception& e) {
    std::cerr << "bapc: error: " << e.what() << "\n";
    return 2;
  }
  std::vector<char*> ptrs;
  for (auto& a : args) ptrs.push_back(a.data());
  try {
    app.parse(static_cast<int>(ptrs.size()), ptrs.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    return dispatch(selected(app), opts);
  } catch (const std::exception& e) {
    std::cerr << "bapc: error: " << e.what() << "\n";
    return 2;
  }
}
