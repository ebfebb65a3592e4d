#include "bapc/checkpoint.hpp"

#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "bapc/binary_io.hpp"
#include "bapc/rng.hpp"

namespace bapc {

namespace {

void check_metadata(const std::string& key, const std::string& value) {
  if (key.empty() || key.find_first_of("=\n") != std::string::npos || value.find('\n') != std::string::npos) {
    throw std::invalid_argument("checkpoint metadata entry '" + key + "' contains a reserved character");
  }
}

}  // namespace

std::vector<unsigned char> encode_checkpoint(const Checkpoint& ckpt) {
  std::string meta;
  for (const auto& [key, value] : ckpt.spec.to_fields()) meta += "spec." + key + "=" + value + "\n";
  meta += "epoch=" + std::to_string(ckpt.epoch) + "\n";
  for (const auto& [key, value] : ckpt.metadata) {
    if (key.rfind("spec.", 0) == 0 || key == "epoch") {
      throw std::invalid_argument("checkpoint metadata key '" + key + "' is reserved");
    }
    check_metadata(key, value);
    meta += key + "=" + value + "\n";
  }

  io::ByteWriter w;
  w.tag("BAPC");
  w.u32(kCheckpointVersion);
  w.str(meta);
  w.u32(io::ByteWriter::checked_u32(ckpt.tensors.size(), "tensor count"));
  for (const auto& [name, tensor] : ckpt.tensors) {
    w.str(name);
    w.u32(io::ByteWriter::checked_u32(tensor.rank(), "rank"));
    for (std::size_t d : tensor.shape()) w.u32(io::ByteWriter::checked_u32(d, "dimension"));
    w.f32s(tensor.values());
  }
  return w.take();
}

Checkpoint decode_checkpoint(std::span<const unsigned char> bytes) {
  io::ByteReader r(bytes, "checkpoint");
  r.expect_tag("BAPC");
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion) r.fail("unsupported version " + std::to_string(version));

  Checkpoint ckpt;
  std::map<std::string, std::string> spec_fields;
  bool have_epoch = false;
  std::istringstream meta(r.str("metadata"));
  std::string line;
  while (std::getline(meta, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) r.fail("malformed metadata line '" + line + "'");
    std::string key = line.substr(0, eq);
    std::string value = line.substr(eq + 1);
    if (key.rfind("spec.", 0) == 0) {
      spec_fields[key.substr(5)] = value;
    } else if (key == "epoch") {
      ckpt.epoch = std::stoi(value);
      have_epoch = true;
    } else {
      ckpt.metadata[key] = value;
    }
  }
  if (!have_epoch) r.fail("metadata has no epoch");
  ckpt.spec = ModelSpec::from_fields(spec_fields);

  const std::uint32_t count = r.u32("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str("tensor name");
    const std::uint32_t rank = r.u32("rank");
    if (rank > 8) r.fail("tensor '" + name + "' has implausible rank " + std::to_string(rank));
    Shape shape(rank);
    std::uint64_t total = 1;
    for (auto& d : shape) {
      d = r.u32("dimension");
      total *= d;
    }
    if (total * 4 > r.remaining()) r.fail("truncated tensor '" + name + "'");
    Tensor<float> t(shape);
    r.f32s(t.values());
    if (!ckpt.tensors.emplace(name, std::move(t)).second) r.fail("duplicate tensor '" + name + "'");
  }
  if (!r.at_end()) r.fail("trailing bytes");
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  io::write_file(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  try {
    return decode_checkpoint(io::read_file(path));
  } catch (const std::runtime_error& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

template <typename T>
Checkpoint make_checkpoint(const AcousticModel<T>& model, int epoch, std::map<std::string, std::string> metadata) {
  Checkpoint ckpt;
  ckpt.spec = model.spec();
  ckpt.tensors = model.export_state();
  ckpt.epoch = epoch;
  ckpt.metadata = std::move(metadata);
  return ckpt;
}

template <typename T>
AcousticModel<T> model_from_checkpoint(const Checkpoint& ckpt) {
  AcousticModel<T> model(ckpt.spec, 0);
  model.import_state(ckpt.tensors);
  return model;
}

std::uint64_t tensor_hash(const Tensor<float>& tensor) {
  io::ByteWriter w;
  w.u32(io::ByteWriter::checked_u32(tensor.rank(), "rank"));
  for (std::size_t d : tensor.shape()) w.u32(io::ByteWriter::checked_u32(d, "dimension"));
  w.f32s(tensor.values());
  return fnv1a64(w.bytes());
}

std::string hash_hex(std::uint64_t hash) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(hash));
  return buf;
}

template Checkpoint make_checkpoint(const AcousticModel<float>&, int, std::map<std::string, std::string>);
template Checkpoint make_checkpoint(const AcousticModel<double>&, int, std::map<std::string, std::string>);
template AcousticModel<float> model_from_checkpoint(const Checkpoint&);
template AcousticModel<double> model_from_checkpoint(const Checkpoint&);

}  // namespace bapc
