#include "merry/log.hpp"

#include <spdlog/sinks/stdout_sinks.h>

namespace merry {

spdlog::logger& log() {
    static auto instance = [] {
        auto l = spdlog::stderr_logger_st("merry");
        l->set_pattern("[%l] %v");
        l->set_level(spdlog::level::warn);
        return l;
    }();
    return *instance;
}

}  // namespace merry
