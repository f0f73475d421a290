#pragma once

#include <initializer_list>
#include <string>
#include <string_view>
#include <type_traits>

#include <nlohmann/json.hpp>

#include "merry/error.hpp"

namespace merry {

/// Rejects keys outside `allowed` and non-object values.
void require_keys(const nlohmann::json& j, std::initializer_list<std::string_view> allowed, std::string_view where);

/// j[key] converted to T, or `fallback` when absent; type errors throw UsageError.
template <typename T>
T json_get(const nlohmann::json& j, const std::string& key, T fallback, std::string_view where) {
    if (!j.contains(key)) return fallback;
    const auto& v = j.at(key);
    if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
        // nlohmann would wrap a negative integer around silently.
        if (!v.is_number_unsigned()) throw UsageError(std::string(where) + "." + key + ": expected a non-negative integer");
    }
    try {
        return v.get<T>();
    } catch (const nlohmann::json::exception&) {
        throw UsageError(std::string(where) + "." + key + ": wrong type");
    }
}

nlohmann::json read_json_file(const std::string& path);

}  // namespace merry
