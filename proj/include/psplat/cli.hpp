#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

namespace psplat {

// Stable process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitInternal = 1;
inline constexpr int kExitUsage = 2;

// Runs one subcommand (train, attack, report, sweep, genscene, validate, replay).
// `args` excludes the program name. Messages go to `out`/`err`; never throws.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Hex SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path& path);

// Reads `<dir>/manifest.json`.
nlohmann::json read_manifest(const std::filesystem::path& dir);

} // namespace psplat
