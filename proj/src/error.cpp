#include "isvqa/error.hpp"

namespace isvqa {

std::string_view to_string(ErrorKind kind) noexcept {
    switch (kind) {
        case ErrorKind::invalid_argument: return "invalid_argument";
        case ErrorKind::invalid_config: return "invalid_config";
        case ErrorKind::missing_file: return "missing_file";
        case ErrorKind::schema: return "schema";
        case ErrorKind::vocab_mismatch: return "vocab_mismatch";
        case ErrorKind::divergence: return "divergence";
        case ErrorKind::state: return "state";
    }
    return "unknown";
}

}  // namespace isvqa
