#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace fadsicl {

// Error categories map onto CLI exit codes: Config=2, Backend=3, Data=4.
enum class ErrorCategory { Config, Backend, Data };

// All library failures are thrown as Error with a stable machine-readable
// code ("InsufficientData", "DimensionMismatch", ...) plus a human message.
class Error : public std::runtime_error {
public:
    Error(ErrorCategory category, std::string code, const std::string& message)
        : std::runtime_error(code + ": " + message),
          category_(category),
          code_(std::move(code)) {}

    ErrorCategory category() const noexcept { return category_; }
    const std::string& code() const noexcept { return code_; }

private:
    ErrorCategory category_;
    std::string code_;
};

[[noreturn]] inline void throw_config(const std::string& code, const std::string& message) {
    throw Error(ErrorCategory::Config, code, message);
}

[[noreturn]] inline void throw_backend(const std::string& code, const std::string& message) {
    throw Error(ErrorCategory::Backend, code, message);
}

[[noreturn]] inline void throw_data(const std::string& code, const std::string& message) {
    throw Error(ErrorCategory::Data, code, message);
}

inline int exit_code(ErrorCategory category) {
    switch (category) {
        case ErrorCategory::Config: return 2;
        case ErrorCategory::Backend: return 3;
        case ErrorCategory::Data: return 4;
    }
    return 1;
}

}  // namespace fadsicl
