#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace attnscope::cli {

/// Runs the attnscope command line. `args` excludes the program name.
/// Returns 0 on success, 1 on validation or verification failure, 2 on usage errors.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace attnscope::cli
