#pragma once

#include <stdexcept>
#include <string>

namespace drkd {

// Configuration and validation failures: bad field values, forbidden
// combinations, mismatched specs. Mapped to exit code 2 at the CLI.
class config_error : public std::runtime_error {
public:
    explicit config_error(const std::string& msg) : std::runtime_error(msg) {}
};

// File and format failures: missing files, bad magic, truncation.
// Mapped to exit code 1 at the CLI, like any other runtime failure.
class io_error : public std::runtime_error {
public:
    explicit io_error(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace drkd
