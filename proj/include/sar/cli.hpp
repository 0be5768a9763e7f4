#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace sar::cli {

enum class Subcommand { Train, Evaluate, Entropy, Ccl, EvalJaccard, ExportAttention, BenchCcl };

std::string_view to_string(Subcommand s);

struct CommandSpec {
  Subcommand subcommand = Subcommand::Train;
  std::optional<std::filesystem::path> config;
  std::vector<std::string> overrides;  // key=value
  std::filesystem::path out_dir;       // empty: analysis commands print only
  std::optional<std::uint64_t> seed;
  int threads = 0;  // 0: SAR_THREADS or the OpenMP default

  std::vector<std::filesystem::path> inputs;  // grid files (entropy, ccl)
  std::optional<std::filesystem::path> checkpoint;
  std::optional<std::filesystem::path> resume;
  std::vector<int> samples;  // export-attention sample indices
  int upscale = 8;
  bool write_gradient = false;
  double support_threshold = 0.0;
  int bench_side = 224;
  double bench_density = 0.5;
  int bench_repeats = 20;
};

/// Execute a parsed command. Returns the process exit status; failures also
/// write one JSON error record to `err`.
int run(const CommandSpec& spec, std::ostream& out, std::ostream& err);

/// Parse argv and run. --help prints to `out` and returns 0.
int main_entry(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// Full help for the program and every subcommand.
std::string help_text();

/// Every long flag accepted by some subcommand, e.g. "--config".
std::vector<std::string> flag_names();

/// The JSON error record written for a failure.
std::string error_record(std::string_view kind, int status, std::string_view message);

}  // namespace sar::cli
