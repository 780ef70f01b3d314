#include "dsmil/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "dsmil/error.hpp"

namespace dsmil {

namespace {

constexpr char kMagic[8] = {'D', 'S', 'M', 'I', 'L', 'C', 'K', '1'};
constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 32;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <typename T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof value);
}

void put_string(std::ostream& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

template <typename T>
T get(std::istream& in, const char* what) {
  T value{};
  if (!in.read(reinterpret_cast<char*>(&value), sizeof value)) {
    throw ParseError(std::string("checkpoint: truncated while reading ") + what);
  }
  return value;
}

std::string get_string(std::istream& in, const char* what) {
  const auto len = get<std::uint32_t>(in, what);
  if (len > (1u << 26)) throw ParseError(std::string("checkpoint: implausible length for ") + what);
  std::string s(len, '\0');
  if (!in.read(s.data(), len)) throw ParseError(std::string("checkpoint: truncated while reading ") + what);
  return s;
}

// The output directory is where the checkpoint lives, not part of what was
// trained, so it is left out and the bytes do not depend on it.
TrainConfig resolved(TrainConfig config, const ModelConfig& model) {
  config.classes = model.classes;
  config.feature_dim = model.feature_dim;
  config.out.clear();
  return config;
}

}  // namespace

DsMilModel Checkpoint::to_model() const { return DsMilModel::from_parameters(model, parameters); }

void write_checkpoint(const TrainConfig& config, const DsMilModel& model, std::ostream& out) {
  const TrainConfig stored = resolved(config, model.config());
  out.write(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, kCheckpointVersion);
  put_string(out, stored.to_json().dump());
  put_string(out, stored.hash());
  put<std::uint32_t>(out, static_cast<std::uint32_t>(model.parameters().size()));
  for (const auto& [name, tensor] : model.parameters()) {
    put_string(out, name);
    put<std::uint64_t>(out, tensor.rows());
    put<std::uint64_t>(out, tensor.cols());
    const auto& v = tensor.values();
    out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
  }
  if (!out) throw IoError("checkpoint: write failed");
}

void write_checkpoint(const TrainConfig& config, const DsMilModel& model,
                      const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write_checkpoint(config, model, out);
  out.flush();
  if (!out) throw IoError("write failed: " + path.string());
}

Checkpoint read_checkpoint(std::istream& in) {
  char magic[sizeof kMagic];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw ParseError("checkpoint: bad magic");
  }
  const auto version = get<std::uint32_t>(in, "version");
  if (version != kCheckpointVersion) {
    throw CompatibilityError("checkpoint: unsupported version " + std::to_string(version));
  }
  Checkpoint ck;
  const std::string config_text = get_string(in, "config");
  nlohmann::json config_json;
  try {
    config_json = nlohmann::json::parse(config_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("checkpoint: config is not JSON: ") + e.what());
  }
  ck.config = TrainConfig::from_json(config_json);
  ck.config_hash = get_string(in, "hash");
  if (ck.config_hash != ck.config.hash()) {
    throw CompatibilityError("checkpoint: config hash " + ck.config_hash + " does not match stored config");
  }
  ck.model = ck.config.model_config(DatasetHeader{ck.config.classes, ck.config.feature_dim});

  const auto count = get<std::uint32_t>(in, "tensor count");
  for (std::uint32_t t = 0; t < count; ++t) {
    std::string name = get_string(in, "tensor name");
    const auto rows = get<std::uint64_t>(in, "rows");
    const auto cols = get<std::uint64_t>(in, "cols");
    if (rows * cols > kMaxElements) throw ParseError("checkpoint: tensor " + name + " too large");
    Tensor tensor(rows, cols);
    const std::span<double> v = tensor.mutable_values();
    if (!in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)))) {
      throw ParseError("checkpoint: truncated tensor " + name);
    }
    ck.parameters.add(std::move(name), tensor);
  }
  if (in.peek() != std::char_traits<char>::eof()) throw ParseError("checkpoint: trailing bytes");
  return ck;
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return read_checkpoint(in);
}

}  // namespace dsmil
