#pragma once

#include <stdexcept>
#include <string>

namespace dassl {

// Machine-readable failure categories. The CLI maps these to exit codes,
// so additions must keep existing values stable.
enum class ErrorCode {
    io_failure = 1,
    missing_dataset,
    missing_attribute,
    shape_mismatch,
    empty_after_filter,
    parse_error,
    duplicate_slide,
    conflicting_target,
    bad_value,
    bad_argument,
    bad_config,
    not_found,
};

inline const char* error_code_name(ErrorCode c) {
    switch (c) {
        case ErrorCode::io_failure:         return "io_failure";
        case ErrorCode::missing_dataset:    return "missing_dataset";
        case ErrorCode::missing_attribute:  return "missing_attribute";
        case ErrorCode::shape_mismatch:     return "shape_mismatch";
        case ErrorCode::empty_after_filter: return "empty_after_filter";
        case ErrorCode::parse_error:        return "parse_error";
        case ErrorCode::duplicate_slide:    return "duplicate_slide";
        case ErrorCode::conflicting_target: return "conflicting_target";
        case ErrorCode::bad_value:          return "bad_value";
        case ErrorCode::bad_argument:       return "bad_argument";
        case ErrorCode::bad_config:         return "bad_config";
        case ErrorCode::not_found:          return "not_found";
    }
    return "unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& msg)
        : std::runtime_error(std::string(error_code_name(code)) + ": " + msg), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& msg) {
    throw Error(code, msg);
}

inline void require(bool cond, ErrorCode code, const std::string& msg) {
    if (!cond) fail(code, msg);
}

}  // namespace dassl
