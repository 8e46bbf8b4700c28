#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace lata {

// Resolves a program name through PATH; names containing '/' are checked as given.
std::optional<std::filesystem::path> find_executable(const std::string& name);

struct ProcessResult {
  int exit_code = -1;  // -1 when killed by a signal
  bool timed_out = false;
};

// Runs argv[0] (already resolved) in `cwd` with stdin from /dev/null and
// stdout+stderr appended to `output_file`. The whole process group is killed
// once `timeout_seconds` elapse.
ProcessResult run_process(const std::vector<std::string>& argv, const std::filesystem::path& cwd,
                          const std::filesystem::path& output_file, double timeout_seconds);

}  // namespace lata
