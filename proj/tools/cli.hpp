#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace ofakd::cli {

// Exit codes: 0 success, 1 validation error (bad flags, configs, missing
// inputs), 2 runtime failure (non-finite loss, I/O, failed checks).
inline constexpr int kOk = 0;
inline constexpr int kValidationError = 1;
inline constexpr int kRuntimeError = 2;

// args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ofakd::cli
