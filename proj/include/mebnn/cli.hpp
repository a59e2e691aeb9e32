#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace mebnn {

enum ExitCode : int {
    exit_ok = 0,
    exit_internal = 1,
    exit_usage = 2,
    exit_infeasible = 3,
};

// Environment variable naming the hardware model used when none is given.
inline constexpr const char* hw_model_env = "MEBNN_HW_MODEL";

// Runs one CLI invocation; args excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mebnn
