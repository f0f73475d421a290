#include "merry/encoders.hpp"

#include "merry/error.hpp"
#include "merry/graph.hpp"

namespace merry {

Matrix qcmp_relation_init(std::size_t query_relation, std::size_t relation_count, std::size_t dim) {
    if (query_relation >= relation_count) {
        throw DataError("query relation " + std::to_string(query_relation) + " out of range " +
                        std::to_string(relation_count));
    }
    Matrix m(relation_count, dim);
    for (std::size_t j = 0; j < dim; ++j) m(query_relation, j) = 1.0;
    return m;
}

Qcmp::Qcmp(ParamGroup& group, std::size_t dim, std::size_t relation_layers, std::size_t entity_layers, Rng& rng,
           CmpOptions options)
    : dim_(dim) {
    meta_ = &group.add("meta", init_uniform_fan_in(dim, kMetaRelationCount, dim, rng));
    relation_ = CmpStack(group, "relation", relation_layers, dim, rng, options);
    entity_ = CmpStack(group, "entity", entity_layers, dim, rng, options);
}

ad::Var Qcmp::relation_states(ad::Tape& tape, const kernels::EdgeList& relation_graph,
                              std::size_t query_relation) const {
    ad::Var init = tape.constant(qcmp_relation_init(query_relation, relation_graph.num_nodes, dim_));
    return relation_.forward(tape, init, tape.param(*meta_), relation_graph);
}

ad::Var Qcmp::entity_states(ad::Tape& tape, ad::Var relation_states, const kernels::EdgeList& entity_graph,
                            std::size_t query_entity, std::size_t query_relation, ad::Var scores) const {
    if (query_entity >= entity_graph.num_nodes) {
        throw DataError("query entity " + std::to_string(query_entity) + " out of range " +
                        std::to_string(entity_graph.num_nodes));
    }
    if (query_relation >= relation_states.rows()) {
        throw DataError("query relation " + std::to_string(query_relation) + " out of range " +
                        std::to_string(relation_states.rows()));
    }
    ad::Var seed = ad::gather_rows(relation_states, {query_relation});
    ad::Var init = ad::scatter_sum(seed, {query_entity}, entity_graph.num_nodes);
    return entity_.forward(tape, init, relation_states, entity_graph, scores);
}

Gcmp::Gcmp(ParamGroup& group, std::size_t dim, std::size_t text_dim, std::size_t relation_layers,
           std::size_t entity_layers, Rng& rng, CmpOptions options)
    : dim_(dim), text_dim_(text_dim) {
    meta_ = &group.add("meta", init_uniform_fan_in(dim, kMetaRelationCount, dim, rng));
    projection_ = &group.add("text_projection", init_uniform_fan_in(text_dim, text_dim, dim, rng));
    relation_ = CmpStack(group, "relation", relation_layers, dim, rng, options);
    entity_ = CmpStack(group, "entity", entity_layers, dim, rng, options);
}

std::pair<ad::Var, ad::Var> Gcmp::encode(ad::Tape& tape, const kernels::EdgeList& relation_graph,
                                         const kernels::EdgeList& entity_graph, ad::Var entity_text,
                                         ad::Var scores) const {
    if (entity_text.cols() != text_dim_) {
        throw ShapeError("gcmp: text embeddings " + entity_text.value().shape_str() + " vs projection input " +
                         std::to_string(text_dim_));
    }
    ad::Var rel_init = tape.constant(Matrix(relation_graph.num_nodes, dim_, 1.0));
    ad::Var rel = relation_.forward(tape, rel_init, tape.param(*meta_), relation_graph);
    ad::Var ent_init = ad::matmul(entity_text, tape.param(*projection_));
    ad::Var ent = entity_.forward(tape, ent_init, rel, entity_graph, scores);
    return {rel, ent};
}

}  // namespace merry
