#pragma once

namespace zsslu::cli {

// Entry point for the zsslu command-line tool. Exit codes: 0 success,
// 2 usage error, 3 missing file, 4 invalid config, 1 any other failure.
int run(int argc, const char* const* argv);

}  // namespace zsslu::cli
