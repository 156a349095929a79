#include "entryfx/error.hpp"

namespace entryfx {

Error::Error(ErrorKind kind, std::string code, const std::string& message)
    : std::runtime_error(message), kind_(kind), code_(std::move(code)) {}

int Error::exit_code() const noexcept {
    switch (kind_) {
    case ErrorKind::validation:
        return 2;
    case ErrorKind::missing_artifact:
        return 3;
    case ErrorKind::numerical:
        return 4;
    }
    return 1;
}

}  // namespace entryfx
