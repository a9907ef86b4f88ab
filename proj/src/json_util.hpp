#pragma once

#include <initializer_list>
#include <string>
#include <string_view>

#include "json.hpp"

#include "drkd/error.hpp"

// Strict-parsing helpers: every failure is a config_error carrying the
// dotted path of the offending field (e.g. "distill.alpha"), which the CLI
// surfaces verbatim.
namespace drkd::jsonu {

inline void expect_object(const nlohmann::json& j, const std::string& prefix) {
    if (!j.is_object()) throw config_error(prefix + ": expected an object");
}

template <typename T>
T require(const nlohmann::json& j, const std::string& key, const std::string& prefix) {
    expect_object(j, prefix);
    if (!j.contains(key)) throw config_error(prefix + "." + key + ": missing field");
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw config_error(prefix + "." + key + ": wrong type");
    }
}

template <typename T>
T opt(const nlohmann::json& j, const std::string& key, const std::string& prefix,
      T fallback) {
    expect_object(j, prefix);
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw config_error(prefix + "." + key + ": wrong type");
    }
}

inline void check_keys(const nlohmann::json& j, const std::string& prefix,
                       std::initializer_list<std::string_view> known) {
    expect_object(j, prefix);
    for (const auto& [key, _] : j.items()) {
        bool ok = false;
        for (std::string_view k : known) ok = ok || key == k;
        if (!ok) throw config_error(prefix + "." + key + ": unknown field");
    }
}

}  // namespace drkd::jsonu
