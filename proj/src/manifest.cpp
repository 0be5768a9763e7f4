#include "sar/manifest.hpp"

#include <openssl/evp.h>

#include <array>
#include <fstream>
#include <memory>
#include <sstream>

#include <json.hpp>

#include "sar/error.hpp"

namespace sar {

namespace {

using nlohmann::json;

class Sha1 {
 public:
  Sha1() : ctx_(EVP_MD_CTX_new(), EVP_MD_CTX_free) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_.get(), EVP_sha1(), nullptr) != 1) {
      throw Error(ErrorCode::Io, "SHA-1 initialisation failed");
    }
  }
  void update(std::string_view s) {
    if (EVP_DigestUpdate(ctx_.get(), s.data(), s.size()) != 1) {
      throw Error(ErrorCode::Io, "SHA-1 update failed");
    }
  }
  std::string hex() {
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned int len = 0;
    if (EVP_DigestFinal_ex(ctx_.get(), md.data(), &len) != 1) {
      throw Error(ErrorCode::Io, "SHA-1 finalisation failed");
    }
    static constexpr char digits[] = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
      out += digits[md[i] >> 4];
      out += digits[md[i] & 15];
    }
    return out;
  }

 private:
  std::unique_ptr<EVP_MD_CTX, void (*)(EVP_MD_CTX*)> ctx_;
};

}  // namespace

std::string sha1_hex(std::string_view data) {
  Sha1 h;
  h.update(data);
  return h.hex();
}

std::string git_blob_sha1(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw Error(ErrorCode::MissingFile, "cannot open " + file.string());
  const auto size = std::filesystem::file_size(file);
  Sha1 h;
  const std::string header = "blob " + std::to_string(size);
  h.update(std::string_view(header.c_str(), header.size() + 1));  // includes the NUL
  std::array<char, 1 << 16> buf;
  while (in) {
    in.read(buf.data(), buf.size());
    h.update(std::string_view(buf.data(), static_cast<std::size_t>(in.gcount())));
  }
  return h.hex();
}

std::filesystem::path write_manifest(const std::filesystem::path& dir, const std::string& command,
                                     const std::string& config_hash, std::uint64_t seed,
                                     const std::vector<std::filesystem::path>& files) {
  json outputs = json::array();
  for (const auto& f : files) {
    outputs.push_back({{"path", std::filesystem::relative(f, dir).generic_string()},
                       {"sha1", git_blob_sha1(f)},
                       {"bytes", std::filesystem::file_size(f)}});
  }
  const json j = {{"command", command},
                  {"configHash", config_hash},
                  {"seed", seed},
                  {"outputs", outputs}};
  const auto path = dir / "manifest.json";
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw Error(ErrorCode::Io, "failed writing " + path.string());
  return path;
}

Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MissingFile, "cannot open " + path.string());
  try {
    const json j = json::parse(in);
    Manifest m;
    m.command = j.at("command").get<std::string>();
    m.config_hash = j.at("configHash").get<std::string>();
    m.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& o : j.at("outputs")) {
      m.outputs.push_back({o.at("path").get<std::string>(), o.at("sha1").get<std::string>(),
                           o.at("bytes").get<std::uintmax_t>()});
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigParse, "bad manifest " + path.string() + ": " + e.what());
  }
}

}  // namespace sar
