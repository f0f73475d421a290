#pragma once

#include <spdlog/spdlog.h>

namespace merry {

/// Library logger; writes to stderr so stdout stays machine-readable.
spdlog::logger& log();

}  // namespace merry
