#pragma once

namespace dassl::cli {

// Entry point shared by the binary and the tests. Returns the process exit
// code: 0 on success, otherwise a small code derived from the error category.
int run(int argc, const char* const* argv);

}  // namespace dassl::cli
