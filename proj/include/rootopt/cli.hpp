#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace rootopt {

struct CommandSpec {
    std::string subcommand; // irrigate, solve, adjoint, optimize, verify, report
    std::filesystem::path config;
    std::filesystem::path out_dir = ".";
    std::vector<std::string> overrides; // "key=value"
    std::optional<std::uint64_t> seed;
    int threads = 1;
};

enum ExitStatus : int { exit_ok = 0, exit_validation = 1, exit_solver = 2 };

const std::vector<std::string>& subcommands();

/// Runs one subcommand; messages go to `out`, errors to `err`.
int run(const CommandSpec& spec, std::ostream& out, std::ostream& err);

} // namespace rootopt
