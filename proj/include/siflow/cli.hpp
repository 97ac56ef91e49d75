#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

namespace siflow::cli {

using Json = nlohmann::ordered_json;

/// Reads a JSON config. Throws ConfigError naming the line and column of a
/// syntax error.
Json load_config(const std::string& path);

/// Runs one resolved experiment. `config` must contain "command" (and
/// "action" where the command has several). Writes the artifacts under
/// config["out"] and returns the exit code: 0 when every embedded check
/// passes, 1 otherwise. Throws ConfigError for invalid configs.
int run(const Json& config, std::ostream& log);

/// Command-line entry point; returns the process exit code
/// (0 pass, 1 failed checks, 2 config or validation error, 3 runtime error).
int main(int argc, char** argv);

}  // namespace siflow::cli
