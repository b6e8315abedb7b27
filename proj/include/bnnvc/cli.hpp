#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

namespace bnnvc {

inline constexpr const char* kToolVersion = "0.1.0";

/// Runs one subcommand (gen, train, eval, calibrate, ood). `args` excludes the
/// program name. Returns 0 on success; on failure prints a single line
/// "error[<kind>]: <message>" to `err` and returns nonzero.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Manifest written next to the primary output of each run.
std::filesystem::path manifest_path_for(const std::filesystem::path& primary_output);

/// The argv recorded in a manifest, for replaying a run.
std::vector<std::string> manifest_argv(const std::filesystem::path& manifest);

} // namespace bnnvc
