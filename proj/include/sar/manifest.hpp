#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace sar {

/// Lower-case hex SHA-1 of `data`.
std::string sha1_hex(std::string_view data);

/// Hash git would give the file as a blob: SHA-1 of "blob <size>\0" + content.
std::string git_blob_sha1(const std::filesystem::path& file);

struct ManifestEntry {
  std::string path;  // relative to the output directory
  std::string sha1;
  std::uintmax_t bytes = 0;
};

struct Manifest {
  std::string command;
  std::string config_hash;  // empty for commands without a run config
  std::uint64_t seed = 0;
  std::vector<ManifestEntry> outputs;
};

/// Hash `files` (which must live under `dir`) and write dir/manifest.json.
/// Returns the manifest path.
std::filesystem::path write_manifest(const std::filesystem::path& dir, const std::string& command,
                                     const std::string& config_hash, std::uint64_t seed,
                                     const std::vector<std::filesystem::path>& files);

Manifest read_manifest(const std::filesystem::path& path);

}  // namespace sar
