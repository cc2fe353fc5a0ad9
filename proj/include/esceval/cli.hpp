#pragma once

#include "json.hpp"

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace esceval::cli {

inline constexpr const char *kToolVersion = "0.1.0";

struct RunManifest {
    std::string command;
    std::vector<std::string> args;
    std::string config_digest;                   // empty without --config
    std::map<std::string, std::string> inputs;   // path -> sha256
    std::map<std::string, std::string> outputs;  // path -> sha256
    std::string started;
    std::string finished;
    std::string tool_version = kToolVersion;
    int exit_code = 0;
    std::string error;
};

nlohmann::json to_json(const RunManifest &m);

// Entry point shared by the binary and the tests. Returns the exit code:
// 0 ok, 1 usage, 2 validation, 3 endpoint, 4 data.
int run(const std::vector<std::string> &args, std::ostream &out, std::ostream &err);

} // namespace esceval::cli
