#pragma once

#include <cstddef>
#include <utility>

#include "merry/cmp.hpp"

namespace merry {

/// Row `query_relation` all ones, every other row zero.
Matrix qcmp_relation_init(std::size_t query_relation, std::size_t relation_count, std::size_t dim);

/// Query-conditioned structural channel: CMP over the relation graph from a
/// one-hot relation init, then CMP over the entity graph seeded at the query
/// entity with the query relation's state.
class Qcmp {
public:
    Qcmp() = default;
    Qcmp(ParamGroup& group, std::size_t dim, std::size_t relation_layers, std::size_t entity_layers, Rng& rng,
         CmpOptions options);

    Parameter& meta() const { return *meta_; }
    const CmpStack& relation_stack() const noexcept { return relation_; }
    const CmpStack& entity_stack() const noexcept { return entity_; }
    CmpStack& relation_stack() noexcept { return relation_; }
    CmpStack& entity_stack() noexcept { return entity_; }

    /// R_q: |R|×d.
    ad::Var relation_states(ad::Tape& tape, const kernels::EdgeList& relation_graph, std::size_t query_relation) const;

    /// H_q: |E|×d, from init row e_q = R_q[r_q].
    ad::Var entity_states(ad::Tape& tape, ad::Var relation_states, const kernels::EdgeList& entity_graph,
                          std::size_t query_entity, std::size_t query_relation, ad::Var scores = {}) const;

private:
    Parameter* meta_ = nullptr;  // 4 × d
    CmpStack relation_;
    CmpStack entity_;
    std::size_t dim_ = 0;
};

/// Global text-seeded channel: CMP over the relation graph from all ones, then
/// CMP over the entity graph from projected entity text features.
class Gcmp {
public:
    Gcmp() = default;
    Gcmp(ParamGroup& group, std::size_t dim, std::size_t text_dim, std::size_t relation_layers,
         std::size_t entity_layers, Rng& rng, CmpOptions options);

    Parameter& meta() const { return *meta_; }
    Parameter& projection() const { return *projection_; }
    const CmpStack& relation_stack() const noexcept { return relation_; }
    const CmpStack& entity_stack() const noexcept { return entity_; }
    CmpStack& relation_stack() noexcept { return relation_; }
    CmpStack& entity_stack() noexcept { return entity_; }

    /// (R_g, H_g); entity_text is |E|×text_dim.
    std::pair<ad::Var, ad::Var> encode(ad::Tape& tape, const kernels::EdgeList& relation_graph,
                                       const kernels::EdgeList& entity_graph, ad::Var entity_text,
                                       ad::Var scores = {}) const;

private:
    Parameter* meta_ = nullptr;        // 4 × d
    Parameter* projection_ = nullptr;  // text_dim × d
    CmpStack relation_;
    CmpStack entity_;
    std::size_t dim_ = 0;
    std::size_t text_dim_ = 0;
};

}  // namespace merry
