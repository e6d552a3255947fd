#pragma once

#include <ostream>

namespace svmixer::cli {

// Entry point shared by the executable and the tests. Returns the process exit
// code: 0 success, 2 config error, 3 data error, 4 check failure.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace svmixer::cli
