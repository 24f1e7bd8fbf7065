#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace baard::cli {

// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kRuntimeError = 1;
inline constexpr int kValidationError = 2;

// Runs one command line (program name excluded). Machine-readable results go
// to out, diagnostics to err.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace baard::cli
