#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "merry/model.hpp"

namespace merry {

struct GradCheckConfig {
    ModelConfig model;
    double tolerance = 1e-4;
    double step = 1e-5;
    std::size_t max_entries_per_param = 0;  // 0 = every entry

    /// Small model: d = 8, two layers per stack, 6-dim text.
    static GradCheckConfig defaults();
    static GradCheckConfig from_json(const nlohmann::json& j);
};

struct ParamCheck {
    std::string name;
    std::size_t entries = 0;
    double analytic_norm = 0.0;
    double rel_error = 0.0;  // ‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)
    bool pass = false;
};

struct GradCheckReport {
    std::vector<ParamCheck> params;
    double max_rel_error = 0.0;
    double loss = 0.0;
    bool pass = false;

    nlohmann::json to_json() const;
};

/// The graph the checker differentiates through: 5 described entities,
/// 3 relations, 7 triples.
KnowledgeGraph gradcheck_graph();

/// End-to-end loss (edge scores → both channels → fusion → DTAF → decoder →
/// BCE over two queries) against central finite differences, per parameter.
GradCheckReport check_gradients(const GradCheckConfig& cfg);

}  // namespace merry
