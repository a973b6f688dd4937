#pragma once

#include <stdexcept>
#include <string>

namespace kvq {

// Error taxonomy shared by the library and the CLI. The CLI maps `kind`
// to the machine-readable error line, so the set of kinds is part of the
// external contract.
enum class ErrorKind {
    format,    // bad magic / malformed container
    length,    // declared size does not match payload
    data,      // non-finite or otherwise invalid values
    geometry,  // shape or group-extent violation
    config,    // invalid or inconsistent configuration
    range,     // code/digit outside its admissible set
    index,     // index outside the addressed span
    io,        // filesystem failure
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void raise(ErrorKind kind, const std::string& message) {
    throw Error(kind, message);
}

}  // namespace kvq
