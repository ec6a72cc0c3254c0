#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "isvqa/error.hpp"

namespace isvqa::cli {

enum ExitCode : int {
    kOk = 0,
    kInternal = 1,
    kUsage = 2,
    kMissingFile = 3,
    kSchema = 4,
    kVocabMismatch = 5,
    kInvalidConfig = 6,
    kDivergence = 7,
    kGradcheckFailed = 8,
    kState = 9,
};

int exit_code_for(ErrorKind kind) noexcept;

/// Relative output paths are resolved against this directory when set.
inline constexpr const char* kOutputDirEnv = "ISVQA_OUTPUT_DIR";

/// Entry point for `isvqa <gen|train|eval|analyze|gradcheck> ...`. `args`
/// excludes the program name. Failures print one line to `err`:
///   error code=<kind> exit=<status> message="<text>"
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace isvqa::cli
