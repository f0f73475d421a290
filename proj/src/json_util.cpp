#include "merry/json_util.hpp"

#include <algorithm>
#include <fstream>

namespace merry {

void require_keys(const nlohmann::json& j, std::initializer_list<std::string_view> allowed, std::string_view where) {
    if (!j.is_object()) throw UsageError(std::string(where) + ": expected a JSON object");
    for (const auto& item : j.items()) {
        if (std::find(allowed.begin(), allowed.end(), item.key()) == allowed.end()) {
            throw UsageError(std::string(where) + ": unknown key '" + item.key() + "'");
        }
    }
}

nlohmann::json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path);
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw UsageError(path + ": invalid JSON: " + e.what());
    }
}

}  // namespace merry
