#include <gtest/gtest.h>

#include <filesystem>

#include "bapc/archive.hpp"
#include "bapc/binary_io.hpp"
#include "bapc/checkpoint.hpp"
#include "bapc/wav.hpp"
#include "test_util.hpp"

namespace bapc {
namespace {

namespace fs = std::filesystem;

fs::path temp_path(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "bapc_test_io";
  fs::create_directories(dir);
  return dir / name;
}

TEST(Wav, RoundTripQuantizes) {
  Rng rng(1);
  AudioBuffer a;
  a.sample_rate = 8000;
  for (int i = 0; i < 500; ++i) a.samples.push_back(uniform(rng, -1.0, 1.0));
  a.samples.push_back(1.5);  // clipped
  const auto path = temp_path("a.wav");
  write_wav(path, a);
  const AudioBuffer b = read_wav(path);
  EXPECT_EQ(b.sample_rate, 8000);
  ASSERT_EQ(b.samples.size(), a.samples.size());
  for (std::size_t i = 0; i + 1 < a.samples.size(); ++i) EXPECT_NEAR(b.samples[i], a.samples[i], 1.0 / 32768.0);
  EXPECT_NEAR(b.samples.back(), 1.0, 1.0 / 32768.0);
}

TEST(Wav, RejectsMalformedInput) {
  EXPECT_THROW(decode_wav(std::vector<unsigned char>{'R', 'I', 'F', 'F'}), std::runtime_error);
  AudioBuffer a;
  a.samples.assign(10, 0.1);
  auto bytes = encode_wav(a);
  bytes[22] = 2;  // stereo
  EXPECT_THROW(decode_wav(bytes), std::runtime_error);
}

TEST(FeatureArchive, RoundTripIsExact) {
  Rng rng(2);
  std::vector<FeatureSequence> recs(3);
  for (std::size_t i = 0; i < recs.size(); ++i) {
    recs[i].utterance_id = "utt" + std::to_string(i);
    recs[i].frames = testing::random_tensor_f({5 + i, 4}, rng);
  }
  const auto path = temp_path("f.farc");
  write_feature_archive(path, recs);
  const auto back = read_feature_archive(path);
  ASSERT_EQ(back.size(), recs.size());
  for (std::size_t i = 0; i < recs.size(); ++i) {
    EXPECT_EQ(back[i].utterance_id, recs[i].utterance_id);
    EXPECT_EQ(back[i].frames, recs[i].frames);
  }
}

TEST(FeatureArchive, DetectsCorruption) {
  std::vector<FeatureSequence> recs(1);
  recs[0].utterance_id = "a";
  recs[0].frames = Tensor<float>::matrix(2, 2);
  auto bytes = encode_feature_archive(recs);
  auto truncated = bytes;
  truncated.pop_back();
  EXPECT_THROW(decode_feature_archive(truncated), std::runtime_error);
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_feature_archive(bad_magic), std::runtime_error);
  recs.push_back(recs[0]);
  EXPECT_THROW(encode_feature_archive(recs), std::invalid_argument);
}

TEST(LabelArchive, RoundTripAndMatching) {
  std::vector<AlignmentLabels> labs{{"b", {1, 2, 3}}, {"a", {0, 0}}};
  const auto path = temp_path("l.larc");
  write_label_archive(path, labs);
  const auto back = read_label_archive(path);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].labels, labs[0].labels);
  std::vector<FeatureSequence> feats(2);
  feats[0].utterance_id = "a";
  feats[0].frames = Tensor<float>::matrix(2, 1);
  feats[1].utterance_id = "b";
  feats[1].frames = Tensor<float>::matrix(3, 1);
  const auto matched = match_labels(feats, back);
  EXPECT_EQ(matched[0].utterance_id, "a");
  EXPECT_EQ(matched[1].labels, (std::vector<std::int32_t>{1, 2, 3}));
  feats[1].frames = Tensor<float>::matrix(4, 1);
  EXPECT_THROW(match_labels(feats, back), std::invalid_argument);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  ModelSpec spec;
  spec.kind = ModelKind::kBi;
  spec.num_layers = 2;
  spec.hidden = 3;
  spec.input_dim = 2;
  AcousticModel<float> model(spec, 3);
  const Checkpoint ckpt = make_checkpoint(model, 4, {{"objective", "biapc"}, {"note", "a b c"}});
  const auto path = temp_path("m.ckpt");
  save_checkpoint(path, ckpt);
  const Checkpoint back = load_checkpoint(path);
  EXPECT_EQ(back, ckpt);
  EXPECT_EQ(encode_checkpoint(back), encode_checkpoint(ckpt));
  auto rebuilt = model_from_checkpoint<float>(back);
  EXPECT_EQ(rebuilt.export_state(), model.export_state());
}

TEST(Checkpoint, RejectsBadMetadataAndTrailingBytes) {
  Checkpoint c;
  c.spec.num_layers = 1;
  c.spec.hidden = 2;
  c.spec.input_dim = 2;
  c.metadata["bad=key"] = "x";
  EXPECT_THROW(encode_checkpoint(c), std::invalid_argument);
  c.metadata.clear();
  c.metadata["epoch"] = "3";
  EXPECT_THROW(encode_checkpoint(c), std::invalid_argument);
  c.metadata.clear();
  auto bytes = encode_checkpoint(c);
  bytes.push_back(0);
  EXPECT_THROW(decode_checkpoint(bytes), std::runtime_error);
}

TEST(Checkpoint, TensorHashSeesShapeAndValues) {
  Tensor<float> a(Shape{2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor<float> b(Shape{3, 2}, {1, 2, 3, 4, 5, 6});
  Tensor<float> c = a;
  c[5] = std::nextafter(6.0f, 7.0f);
  EXPECT_NE(tensor_hash(a), tensor_hash(b));
  EXPECT_NE(tensor_hash(a), tensor_hash(c));
  EXPECT_EQ(tensor_hash(a), tensor_hash(Tensor<float>(a)));
  EXPECT_EQ(hash_hex(0xabcULL), "0000000000000abc");
}

}  // namespace
}  // namespace bapc
