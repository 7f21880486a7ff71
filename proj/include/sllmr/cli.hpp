#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace sllmr::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kContract = 2, kService = 3 };

/// Runs one verb. `args` excludes the program name. Errors are reported on
/// `err` and mapped to exit codes; nothing propagates.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int main(int argc, char** argv);

}  // namespace sllmr::cli
