#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <string>

#include "merry/autodiff.hpp"
#include "merry/params.hpp"
#include "merry/random.hpp"

namespace merry::test {

inline Matrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Matrix m(rows, cols);
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = rng.uniform(lo, hi);
    return m;
}

/// Worst per-parameter ‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖) against
/// central differences. `loss` must build a 1×1 value on the given tape.
inline double fd_max_rel_error(ParamStore& store, const std::function<ad::Var(ad::Tape&)>& loss,
                               double step = 1e-5) {
    store.zero_grad();
    {
        ad::Tape tape;
        tape.backward(loss(tape));
    }
    auto value_at = [&] {
        ad::Tape tape(false);
        return loss(tape).value()(0, 0);
    };
    double worst = 0.0;
    for (const auto& g : store.groups()) {
        for (const auto& p : g->params()) {
            double diff = 0.0, na = 0.0, nn = 0.0;
            for (std::size_t i = 0; i < p->value.size(); ++i) {
                const double keep = p->value[i];
                p->value[i] = keep + step;
                const double up = value_at();
                p->value[i] = keep - step;
                const double down = value_at();
                p->value[i] = keep;
                const double numeric = (up - down) / (2.0 * step);
                const double analytic = g->frozen() ? 0.0 : p->grad[i];
                diff += (analytic - numeric) * (analytic - numeric);
                na += analytic * analytic;
                nn += numeric * numeric;
            }
            const double scale = std::sqrt(std::max(na, nn));
            if (scale > 1e-12) worst = std::max(worst, std::sqrt(diff) / scale);
        }
    }
    return worst;
}

/// Scratch directory removed on scope exit.
struct TempDir {
    std::filesystem::path path;
    explicit TempDir(const std::string& tag) {
        path = std::filesystem::temp_directory_path() / ("merry_test_" + tag);
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
};

}  // namespace merry::test
