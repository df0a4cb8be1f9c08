#pragma once

namespace terracer::cli {

/// Entry point shared by the binary and the end-to-end tests.
/// Exit codes: 0 success, 1 runtime failure, 2 usage error.
int run(int argc, const char* const* argv);

}  // namespace terracer::cli
