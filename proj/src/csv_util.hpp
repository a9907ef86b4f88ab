#pragma once

#include <charconv>
#include <cstdint>
#include <string>

// Number formatting shared by every CSV artifact: shortest representation
// that round-trips, so equal values always serialize to equal bytes.
namespace drkd::csvu {

inline std::string format_double(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline std::string format_u64(std::uint64_t v) {
    char buf[24];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

}  // namespace drkd::csvu
