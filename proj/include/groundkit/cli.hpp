#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "groundkit/error.hpp"

namespace groundkit::cli {

// Exit-code contract.
inline constexpr int kExitOk = 0;
inline constexpr int kExitInternal = 1;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitEndpoint = 3;
inline constexpr int kExitConfig = 4;

int exit_code_for(ErrorCode code);

/// Runs one invocation. `args` excludes the program name. Every flag
/// `--foo-bar` of a subcommand may also come from the environment variable
/// GROUNDKIT_FOO_BAR or from key "foo-bar" in the JSON file given by
/// --config (top level or under the subcommand name); flags win over the
/// environment, which wins over the file.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int main(int argc, char** argv);

struct CommandFlags {
    std::string command;
    std::vector<std::string> flags; // long names with leading dashes
    std::string help;
};

// Every subcommand with its flags and rendered --help text.
std::vector<CommandFlags> flag_inventory();

} // namespace groundkit::cli
