#pragma once

// Seeded generators for tests, benchmarks and the acceptance suite.

#include <cstddef>
#include <string>
#include <vector>

#include "merry/graph.hpp"
#include "merry/kgqa.hpp"
#include "merry/random.hpp"

namespace merry::synthetic {

/// Up to `triples` distinct random triples over the given symbol counts
/// (names e<i>, r<j>). Every entity and relation is interned even if unused.
KnowledgeGraph random_kg(std::size_t entities, std::size_t relations, std::size_t triples, Rng& rng);

/// Same graph with entities and relations renamed and re-ordered by random
/// permutations. perm maps old id → new id.
struct Relabeled {
    KnowledgeGraph graph;
    std::vector<std::size_t> entity_perm;
    std::vector<std::size_t> relation_perm;
};
Relabeled relabel(const KnowledgeGraph& kg, Rng& rng, const std::string& prefix);

/// Family trees: parent_of, child_of, spouse_of, sibling_of, grandparent_of.
/// Facts are split into an inference graph and held-out targets.
struct SchemaGraph {
    KnowledgeGraph graph;
    std::vector<Triple> train;
    std::vector<Triple> valid;
    std::vector<Triple> test;
};
SchemaGraph family_graph(std::size_t families, Rng& rng, const std::string& prefix, double held_out = 0.15);

/// QA curriculum over a categorized KG: "which <category> does it <verb>" about a linked topic,
/// with options spanning {right, wrong category} × {right, wrong relation}.
struct QaCurriculum {
    KnowledgeGraph kg;
    std::vector<QaInstance> train;
    std::vector<QaInstance> test;
};
QaCurriculum qa_curriculum(std::size_t train, std::size_t test, Rng& rng);

}  // namespace merry::synthetic
