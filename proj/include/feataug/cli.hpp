#pragma once

namespace feataug::cli {

/// Entry point of the `feataug` executable. Exit codes: 0 success,
/// 1 runtime or I/O failure, 2 usage or configuration error.
int run(int argc, char** argv);

}  // namespace feataug::cli
