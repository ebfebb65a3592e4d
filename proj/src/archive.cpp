#include "bapc/archive.hpp"

#include <map>
#include <set>
#include <stdexcept>
#include <string>

#include "bapc/binary_io.hpp"

namespace bapc {

namespace {

void check_unique(const std::string& id, std::set<std::string>& seen) {
  if (!seen.insert(id).second) throw std::invalid_argument("duplicate utterance id '" + id + "' in archive");
}

}  // namespace

std::vector<unsigned char> encode_feature_archive(std::span<const FeatureSequence> records) {
  io::ByteWriter w;
  w.tag("FARC");
  w.u32(kArchiveVersion);
  std::set<std::string> seen;
  for (const FeatureSequence& rec : records) {
    check_unique(rec.utterance_id, seen);
    if (rec.frames.rank() != 2) throw std::invalid_argument("feature record '" + rec.utterance_id + "' is not T x D");
    w.str(rec.utterance_id);
    w.u32(io::ByteWriter::checked_u32(rec.frames.rows(), "T"));
    w.u32(io::ByteWriter::checked_u32(rec.frames.cols(), "D"));
    w.f32s(rec.frames.values());
  }
  return w.take();
}

std::vector<FeatureSequence> decode_feature_archive(std::span<const unsigned char> bytes) {
  io::ByteReader r(bytes, "feature archive");
  r.expect_tag("FARC");
  const std::uint32_t version = r.u32("version");
  if (version != kArchiveVersion) r.fail("unsupported version " + std::to_string(version));
  std::vector<FeatureSequence> out;
  std::set<std::string> seen;
  while (!r.at_end()) {
    FeatureSequence rec;
    rec.utterance_id = r.str("utterance id");
    check_unique(rec.utterance_id, seen);
    const std::uint32_t T = r.u32("T");
    const std::uint32_t D = r.u32("D");
    if (static_cast<std::uint64_t>(T) * D * 4 > r.remaining()) r.fail("truncated record '" + rec.utterance_id + "'");
    rec.frames = Tensor<float>::matrix(T, D);
    r.f32s(rec.frames.values());
    out.push_back(std::move(rec));
  }
  return out;
}

void write_feature_archive(const std::filesystem::path& path, std::span<const FeatureSequence> records) {
  io::write_file(path, encode_feature_archive(records));
}

std::vector<FeatureSequence> read_feature_archive(const std::filesystem::path& path) {
  try {
    return decode_feature_archive(io::read_file(path));
  } catch (const std::runtime_error& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

std::vector<unsigned char> encode_label_archive(std::span<const AlignmentLabels> records) {
  io::ByteWriter w;
  w.tag("LARC");
  w.u32(kArchiveVersion);
  std::set<std::string> seen;
  for (const AlignmentLabels& rec : records) {
    check_unique(rec.utterance_id, seen);
    w.str(rec.utterance_id);
    w.u32(io::ByteWriter::checked_u32(rec.labels.size(), "T"));
    w.u32(1);
    for (std::int32_t v : rec.labels) w.i32(v);
  }
  return w.take();
}

std::vector<AlignmentLabels> decode_label_archive(std::span<const unsigned char> bytes) {
  io::ByteReader r(bytes, "label archive");
  r.expect_tag("LARC");
  const std::uint32_t version = r.u32("version");
  if (version != kArchiveVersion) r.fail("unsupported version " + std::to_string(version));
  std::vector<AlignmentLabels> out;
  std::set<std::string> seen;
  while (!r.at_end()) {
    AlignmentLabels rec;
    rec.utterance_id = r.str("utterance id");
    check_unique(rec.utterance_id, seen);
    const std::uint32_t T = r.u32("T");
    const std::uint32_t D = r.u32("D");
    if (D != 1) r.fail("label record '" + rec.utterance_id + "' has D=" + std::to_string(D) + ", expected 1");
    if (static_cast<std::uint64_t>(T) * 4 > r.remaining()) r.fail("truncated record '" + rec.utterance_id + "'");
    rec.labels.resize(T);
    for (auto& v : rec.labels) v = r.i32("label");
    out.push_back(std::move(rec));
  }
  return out;
}

void write_label_archive(const std::filesystem::path& path, std::span<const AlignmentLabels> records) {
  io::write_file(path, encode_label_archive(records));
}

std::vector<AlignmentLabels> read_label_archive(const std::filesystem::path& path) {
  try {
    return decode_label_archive(io::read_file(path));
  } catch (const std::runtime_error& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

std::vector<AlignmentLabels> match_labels(std::span<const FeatureSequence> features,
                                          std::span<const AlignmentLabels> labels) {
  std::map<std::string, const AlignmentLabels*> by_id;
  for (const auto& l : labels) by_id[l.utterance_id] = &l;
  std::vector<AlignmentLabels> out;
  out.reserve(features.size());
  for (const auto& f : features) {
    auto it = by_id.find(f.utterance_id);
    if (it == by_id.end()) throw std::invalid_argument("no labels for utterance '" + f.utterance_id + "'");
    if (it->second->labels.size() != f.num_frames()) {
      throw std::invalid_argument("utterance '" + f.utterance_id + "': " + std::to_string(f.num_frames()) +
                                  " frames but " + std::to_string(it->second->labels.size()) + " labels");
    }
    out.push_back(*it->second);
  }
  return out;
}

}  // namespace bapc
