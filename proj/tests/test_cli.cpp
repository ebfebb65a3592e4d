#include <gtest/gtest.h>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <sys/wait.h>
#include <unistd.h>

#include "bapc/archive.hpp"
#include "bapc/checkpoint.hpp"
#include "bapc/wav.hpp"

namespace fs = std::filesystem;

namespace bapc {
namespace {

struct CliRun {
  int status = -1;
  std::string out;  // stdout and stderr
};

CliRun bapc_cli(const std::string& args) {
  const std::string cmd = std::string(BAPC_CLI_PATH) + " " + args + " 2>&1";
  CliRun r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (pipe == nullptr) return r;
  char buf[4096];
  while (std::fgets(buf, sizeof(buf), pipe) != nullptr) r.out += buf;
  const int raw = pclose(pipe);
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = fs::temp_directory_path() / ("bapc_cli_" + std::to_string(::getpid()));
    fs::remove_all(root_);
    fs::create_directories(root_);
    const CliRun gen = bapc_cli("gen --out_dir " + (root_ / "data").string() +
                                " --num_utterances 30 --train_utterances 24 --labeled_fraction 0.25"
                                " --min_len 30 --max_len 50 --seed 3");
    ASSERT_EQ(gen.status, 0) << gen.out;
  }
  static void TearDownTestSuite() { fs::remove_all(root_); }

  static std::string data(const std::string& name) { return (root_ / "data" / name).string(); }
  static std::string dir(const std::string& name) { return (root_ / name).string(); }

  static std::string small_pretrain(const std::string& out, const std::string& extra = "") {
    return "pretrain --features " + data("train.farc") + " --out_dir " + dir(out) +
           " --layers 2 --hidden 8 --epochs 2 --hold_epochs 0 --avg_last_k 2 --batch_size 4 --lr0 1e-2 " + extra;
  }
  static std::string small_finetune(const std::string& out, const std::string& extra = "") {
    return "finetune --features " + data("labeled.farc") + " --labels " + data("labeled.larc") + " --out_dir " +
           dir(out) + " --layers 2 --hidden 8 --epochs 2 --hold_epochs 0 --avg_last_k 2 --batch_size 2 --lr0 3e-3 " +
           extra;
  }

  static fs::path root_;
};

fs::path Cli::root_;

TEST_F(Cli, GenWritesSplitsAndEchoesSeed) {
  EXPECT_EQ(read_feature_archive(data("train.farc")).size(), 24u);
  EXPECT_EQ(read_feature_archive(data("test.farc")).size(), 6u);
  EXPECT_EQ(read_label_archive(data("labeled.larc")).size(), 6u);
  const auto meta = nlohmann::json::parse(slurp(data("metrics.json")));
  EXPECT_EQ(meta["seed"], 3);
  EXPECT_NE(slurp(data("config.ini")).find("seed=3"), std::string::npos);
}

TEST_F(Cli, PipelineProducesCheckpointsLogAndAccuracy) {
  const CliRun pre = bapc_cli(small_pretrain("pre"));
  ASSERT_EQ(pre.status, 0) << pre.out;
  for (const char* f : {"epoch_01.ckpt", "epoch_02.ckpt", "final.ckpt", "metrics.json", "config.ini"}) {
    EXPECT_TRUE(fs::exists(fs::path(dir("pre")) / f)) << f;
  }
  std::istringstream log(slurp(fs::path(dir("pre")) / "train_log.jsonl"));
  std::string line;
  int lines = 0;
  while (std::getline(log, line)) {
    const auto rec = nlohmann::json::parse(line);
    EXPECT_EQ(rec["epoch"], ++lines);
    EXPECT_TRUE(rec.contains("mean_loss") && rec.contains("lr") && rec.contains("wall_seconds"));
  }
  EXPECT_EQ(lines, 2);
  const Checkpoint final_pre = load_checkpoint(fs::path(dir("pre")) / "final.ckpt");
  EXPECT_EQ(final_pre.metadata.at("seed"), "1");
  EXPECT_EQ(final_pre.metadata.at("averaged_last_k"), "2");

  const CliRun ft = bapc_cli(small_finetune("ft", "--init " + dir("pre") + "/final.ckpt"));
  ASSERT_EQ(ft.status, 0) << ft.out;
  const std::string metrics = dir("eval.json");
  const CliRun ev = bapc_cli("eval --checkpoint " + dir("ft") + "/final.ckpt --features " + data("test.farc") +
                             " --labels " + data("test.larc") + " --out " + metrics);
  ASSERT_EQ(ev.status, 0) << ev.out;
  EXPECT_NE(ev.out.find("frame accuracy"), std::string::npos);
  const double acc = nlohmann::json::parse(slurp(metrics))["frame_accuracy"];
  EXPECT_GE(acc, 0.0);
  EXPECT_LE(acc, 1.0);
}

TEST_F(Cli, EffectiveConfigReproducesRunBitExactly) {
  ASSERT_EQ(bapc_cli(small_pretrain("rt_a", "--objective mpc --seed 7")).status, 0);
  const CliRun again = bapc_cli("pretrain --config " + dir("rt_a") + "/config.ini --out_dir " + dir("rt_b"));
  ASSERT_EQ(again.status, 0) << again.out;
  for (const char* f : {"epoch_01.ckpt", "epoch_02.ckpt", "final.ckpt", "metrics.json"}) {
    EXPECT_EQ(slurp(fs::path(dir("rt_a")) / f), slurp(fs::path(dir("rt_b")) / f)) << f;
  }
}

TEST_F(Cli, CommandLineOverridesConfig) {
  std::ofstream(dir("over.ini")) << "layers=2\nhidden=8\nepochs=3\nhold_epochs=0\navg_last_k=2\n";
  const CliRun r = bapc_cli("pretrain --config " + dir("over.ini") + " --features " + data("train.farc") +
                            " --out_dir " + dir("over") + " --epochs 2");
  ASSERT_EQ(r.status, 0) << r.out;
  EXPECT_TRUE(fs::exists(fs::path(dir("over")) / "epoch_02.ckpt"));
  EXPECT_FALSE(fs::exists(fs::path(dir("over")) / "epoch_03.ckpt"));
}

TEST_F(Cli, UnknownConfigKeyIsRejected) {
  std::ofstream(dir("bad.ini")) << "epochs=2\nepoch_count=3\n";
  const CliRun r = bapc_cli("pretrain --config " + dir("bad.ini") + " --features " + data("train.farc") +
                            " --out_dir " + dir("bad"));
  EXPECT_NE(r.status, 0);
  EXPECT_NE(r.out.find("unknown key 'epoch_count'"), std::string::npos) << r.out;
  EXPECT_FALSE(fs::exists(dir("bad")));
}

TEST_F(Cli, BiApcOnUniModelFailsBeforeTraining) {
  const CliRun r = bapc_cli(small_pretrain("uni_biapc", "--kind uni --objective biapc"));
  EXPECT_NE(r.status, 0);
  EXPECT_NE(r.out.find("requires a bi model"), std::string::npos) << r.out;
  EXPECT_FALSE(fs::exists(dir("uni_biapc")));
}

TEST_F(Cli, FinetuneMismatchNamesTensor) {
  ASSERT_EQ(bapc_cli(small_pretrain("mm_pre")).status, 0);
  const CliRun r = bapc_cli(small_finetune("mm_ft", "--init " + dir("mm_pre") + "/final.ckpt --hidden 6"));
  EXPECT_NE(r.status, 0);
  EXPECT_NE(r.out.find("tensor 'layer1."), std::string::npos) << r.out;
}

TEST_F(Cli, UniCheckpointTransfersIntoBiFinetune) {
  ASSERT_EQ(bapc_cli(small_pretrain("apc", "--kind uni --objective apc")).status, 0);
  const CliRun r = bapc_cli(small_finetune("apc_ft", "--init " + dir("apc") + "/final.ckpt --kind bi"));
  ASSERT_EQ(r.status, 0) << r.out;
  EXPECT_NE(r.out.find("transferring uni checkpoint"), std::string::npos);
  EXPECT_EQ(load_checkpoint(fs::path(dir("apc_ft")) / "final.ckpt").spec.kind, ModelKind::kBi);
}

TEST_F(Cli, AuditExitCodeReflectsResult) {
  ASSERT_EQ(bapc_cli(small_pretrain("au")).status, 0);
  const std::string ckpt = dir("au") + "/final.ckpt";
  const CliRun ok = bapc_cli("audit --checkpoint " + ckpt + " --features " + data("test.farc"));
  EXPECT_EQ(ok.status, 0) << ok.out;
  EXPECT_NE(ok.out.find("audit passed"), std::string::npos);

  Checkpoint bad = load_checkpoint(ckpt);
  bad.tensors.at("layer2.fwd_cross.W_in").values()[0] += 1.0f;
  save_checkpoint(dir("au_bad.ckpt"), bad);
  const CliRun fail = bapc_cli("audit --checkpoint " + dir("au_bad.ckpt") + " --features " + data("test.farc"));
  EXPECT_EQ(fail.status, 1) << fail.out;
  EXPECT_NE(fail.out.find("layer2.fwd_cross.W_in"), std::string::npos) << fail.out;

  ASSERT_EQ(bapc_cli(small_finetune("au_ft", "--init " + ckpt)).status, 0);
  const CliRun cls = bapc_cli("audit --checkpoint " + dir("au_ft") + "/final.ckpt --features " + data("test.farc"));
  EXPECT_EQ(cls.status, 0) << cls.out;
  EXPECT_NE(cls.out.find("N/A  leakage"), std::string::npos) << cls.out;
}

TEST_F(Cli, EvalOnFullScaleBiSpec) {
  ModelSpec spec = ModelSpec::full_scale_bi();
  spec.input_dim = static_cast<int>(read_feature_archive(data("test.farc")).front().dim());
  spec.head = HeadKind::kClassifier;
  spec.num_classes = 5;
  save_checkpoint(dir("full_scale_bi.ckpt"), make_checkpoint(AcousticModel<float>(spec, 1), 0));
  const CliRun r = bapc_cli("eval --checkpoint " + dir("full_scale_bi.ckpt") + " --features " + data("test.farc") +
                            " --labels " + data("test.larc"));
  ASSERT_EQ(r.status, 0) << r.out;
  const auto at = r.out.find("frame accuracy ");
  ASSERT_NE(at, std::string::npos) << r.out;
  const double acc = std::stod(r.out.substr(at + 15));
  EXPECT_GE(acc, 0.0);
  EXPECT_LE(acc, 1.0);
}

TEST_F(Cli, FeaturizeSkipsCorruptFiles) {
  const fs::path wavs = root_ / "wav";
  fs::create_directories(wavs);
  for (int i = 0; i < 3; ++i) {
    AudioBuffer a;
    a.sample_rate = 16000;
    for (int n = 0; n < 8000; ++n) a.samples.push_back(0.3 * std::sin(0.05 * (i + 1) * n));
    write_wav(wavs / ("u" + std::to_string(i) + ".wav"), a);
  }
  std::ofstream(wavs / "broken.wav") << "RIFFnonsense";
  const std::string out = dir("feats.farc");
  const CliRun r = bapc_cli("featurize --wav_dir " + wavs.string() + " --out " + out);
  ASSERT_EQ(r.status, 0) << r.out;
  EXPECT_NE(r.out.find("warning"), std::string::npos);
  const auto records = read_feature_archive(out);
  ASSERT_EQ(records.size(), 3u);
  EXPECT_EQ(records[0].dim(), 80u);
  EXPECT_EQ(records[0].num_frames(), 48u);  // 0.5 s at 25 ms / 10 ms

  ASSERT_EQ(bapc_cli("featurize --wav_dir " + wavs.string() + " --out " + dir("feats2.farc")).status, 0);
  EXPECT_EQ(slurp(out), slurp(dir("feats2.farc")));

  fs::create_directories(root_ / "nowav");
  EXPECT_NE(bapc_cli("featurize --wav_dir " + (root_ / "nowav").string() + " --out " + dir("x.farc")).status, 0);
  fs::create_directories(root_ / "allbad");
  fs::copy_file(wavs / "broken.wav", root_ / "allbad" / "broken.wav");
  EXPECT_NE(bapc_cli("featurize --wav_dir " + (root_ / "allbad").string() + " --out " + dir("y.farc")).status, 0);
}

TEST_F(Cli, GradcheckPasses) {
  const CliRun r = bapc_cli("gradcheck --hidden 3 --layers 2 --frames 6");
  EXPECT_EQ(r.status, 0) << r.out;
  EXPECT_EQ(r.out.find("FAIL"), std::string::npos) << r.out;
}

}  // namespace
}  // namespace bapc
