#include "sar/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "sar/config.hpp"
#include "sar/error.hpp"

namespace sar {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoints are little-endian");

constexpr char kMagic[8] = {'S', 'A', 'R', 'C', 'K', 'P', 'T', '1'};

template <class U>
void put(std::ostream& out, U v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class U>
U get(std::istream& in, const std::string& what) {
  U v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw Error(ErrorCode::CheckpointFormat, "checkpoint truncated while reading " + what);
  return v;
}

template <class T>
void put_blob(std::ostream& out, const std::string& name, std::span<const T> data) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  put<std::uint64_t>(out, data.size());
  out.write(reinterpret_cast<const char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(T)));
}

template <class T>
std::vector<double> read_values(std::istream& in, std::uint64_t count, const std::string& name) {
  std::vector<T> raw(count);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(count * sizeof(T)));
  if (!in) throw Error(ErrorCode::CheckpointFormat, "checkpoint truncated in blob " + name);
  return std::vector<double>(raw.begin(), raw.end());
}

template <class T>
std::vector<T> narrow(const std::vector<double>& v) {
  return std::vector<T>(v.begin(), v.end());
}

const std::vector<double>& blob(const Checkpoint& ck, const std::string& name, std::size_t size) {
  const auto it = ck.blobs.find(name);
  if (it == ck.blobs.end()) throw Error(ErrorCode::CheckpointFormat, "checkpoint lacks blob " + name);
  if (it->second.size() != size) {
    throw Error(ErrorCode::CheckpointFormat, "blob " + name + " has the wrong size");
  }
  return it->second;
}

}  // namespace

template <class T>
void save_checkpoint(const std::filesystem::path& path, const Trainer<T>& trainer) {
  const auto& model = trainer.model();
  nlohmann::json meta;
  meta["config"] = nlohmann::json::parse(config_to_json(trainer.config()));
  meta["precision"] = std::string(to_string(sizeof(T) == 4 ? Precision::Float32 : Precision::Float64));
  meta["epoch"] = trainer.epoch();
  meta["step"] = trainer.step_count();
  const std::string text = meta.dump();

  // Write to a temporary name first so an interrupted save never clobbers a good checkpoint.
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::Io, "cannot write checkpoint " + tmp.string());
    out.write(kMagic, sizeof kMagic);
    put<std::uint32_t>(out, kCheckpointVersion);
    put<std::uint32_t>(out, sizeof(T));
    put<std::uint64_t>(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));

    const auto& entries = model.layout().entries();
    put<std::uint32_t>(out, static_cast<std::uint32_t>(entries.size() + 2));
    const auto params = model.parameters();
    for (const auto& e : entries) put_blob<T>(out, e.name, params.subspan(e.offset, e.size()));
    put_blob<T>(out, "adam.m", trainer.adam_m());
    put_blob<T>(out, "adam.v", trainer.adam_v());
    if (!out) throw Error(ErrorCode::Io, "failed writing checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::MissingFile, "cannot open checkpoint " + path.string());

  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw Error(ErrorCode::CheckpointFormat, path.string() + " is not a checkpoint");
  }
  const auto version = get<std::uint32_t>(in, "version");
  if (version != kCheckpointVersion) {
    throw Error(ErrorCode::CheckpointFormat,
                "unsupported checkpoint version " + std::to_string(version));
  }
  const auto scalar = get<std::uint32_t>(in, "scalar size");
  if (scalar != 4 && scalar != 8) {
    throw Error(ErrorCode::CheckpointFormat, "bad scalar size " + std::to_string(scalar));
  }
  const auto meta_len = get<std::uint64_t>(in, "metadata length");
  if (meta_len > (1u << 24)) throw Error(ErrorCode::CheckpointFormat, "metadata too large");
  std::string text(meta_len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(meta_len));
  if (!in) throw Error(ErrorCode::CheckpointFormat, "checkpoint truncated in metadata");

  Checkpoint ck;
  try {
    const auto meta = nlohmann::json::parse(text);
    ck.config = config_from_json(meta.at("config").dump());
    ck.precision = parse_precision(meta.at("precision").get<std::string>());
    ck.epoch = meta.at("epoch").get<int>();
    ck.step = meta.at("step").get<long>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::CheckpointFormat, std::string("bad checkpoint metadata: ") + e.what());
  } catch (const Error& e) {
    throw Error(ErrorCode::CheckpointFormat, std::string("bad checkpoint metadata: ") + e.what());
  }
  if ((ck.precision == Precision::Float32) != (scalar == 4)) {
    throw Error(ErrorCode::CheckpointFormat, "metadata precision disagrees with scalar size");
  }

  const auto count = get<std::uint32_t>(in, "blob count");
  for (std::uint32_t b = 0; b < count; ++b) {
    const auto name_len = get<std::uint32_t>(in, "blob name length");
    if (name_len > 4096) throw Error(ErrorCode::CheckpointFormat, "blob name too long");
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    if (!in) throw Error(ErrorCode::CheckpointFormat, "checkpoint truncated in blob name");
    const auto n = get<std::uint64_t>(in, "blob size");
    if (n > (std::uint64_t{1} << 32)) throw Error(ErrorCode::CheckpointFormat, "blob too large");
    ck.blobs[name] = scalar == 4 ? read_values<float>(in, n, name) : read_values<double>(in, n, name);
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw Error(ErrorCode::CheckpointFormat, "trailing bytes after the last blob");
  }
  return ck;
}

template <class T>
void load_parameters(const Checkpoint& ck, VisionTransformer<T>& model) {
  if (!(ck.config.model == model.config())) {
    throw Error(ErrorCode::CheckpointFormat, "checkpoint was written for a different model");
  }
  auto params = model.parameters();
  for (const auto& e : model.layout().entries()) {
    const auto& v = blob(ck, e.name, e.size());
    std::copy(v.begin(), v.end(), params.begin() + static_cast<std::ptrdiff_t>(e.offset));
  }
}

template <class T>
void restore_trainer(const Checkpoint& ck, Trainer<T>& trainer) {
  auto& model = trainer.model();
  load_parameters(ck, model);
  const std::size_t n = model.parameter_count();
  const auto params = std::vector<T>(model.parameters().begin(), model.parameters().end());
  trainer.restore(params, narrow<T>(blob(ck, "adam.m", n)), narrow<T>(blob(ck, "adam.v", n)),
                  ck.step, ck.epoch);
}

template void save_checkpoint<float>(const std::filesystem::path&, const Trainer<float>&);
template void save_checkpoint<double>(const std::filesystem::path&, const Trainer<double>&);
template void load_parameters<float>(const Checkpoint&, VisionTransformer<float>&);
template void load_parameters<double>(const Checkpoint&, VisionTransformer<double>&);
template void restore_trainer<float>(const Checkpoint&, Trainer<float>&);
template void restore_trainer<double>(const Checkpoint&, Trainer<double>&);

}  // namespace sar
