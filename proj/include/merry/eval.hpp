#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "merry/graph.hpp"
#include "merry/model.hpp"

namespace merry {

struct RankResult {
    std::size_t rank = 1;        // 1-based
    std::size_t candidates = 0;  // survivors of filtering, gold included
};

/// Filtered rank with the mid-tie rule: 1 + #greater + ⌊#ties/2⌋.
RankResult rank_query(std::span<const double> scores, std::size_t gold, std::span<const std::size_t> filter);

double mrr(std::span<const std::size_t> ranks);
double hits_at(std::span<const std::size_t> ranks, std::size_t k);

struct DirectionMetrics {
    double mrr = 0.0;
    double hits10 = 0.0;
    std::size_t n_queries = 0;
};

struct QueryRecord {
    std::string head, relation, tail;  // as ranked: (head, relation, ?) with gold tail
    std::string direction;             // "tail" or "head"
    std::size_t rank = 0;
    std::size_t candidates = 0;
};

struct EvalReport {
    double mrr = 0.0;
    double hits10 = 0.0;
    std::size_t n_queries = 0;
    std::map<std::string, DirectionMetrics> directions;
    std::vector<QueryRecord> queries;

    nlohmann::json to_json() const;
    std::string queries_csv() const;
};

struct EvalOptions {
    bool head_queries = true;     // also rank (t, r⁻¹, ?) when the model uses inverses
    std::size_t max_triples = 0;  // 0 = all
};

/// Ranks every eval triple against all entities of the inference graph,
/// filtering known-true answers from `filter_triples` (same ids as graph).
EvalReport evaluate(const Model& model, const TextProvider& text, const KnowledgeGraph& graph,
                    std::span<const Triple> eval_triples, std::span<const Triple> filter_triples,
                    const EvalOptions& opts = {});

/// Test-split evaluation of a checkpoint on a split directory.
EvalReport evaluate_split(const Model& model, const TextProvider& text, const InductiveSplit& split,
                          const EvalOptions& opts = {});

}  // namespace merry
