#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "merry/autodiff.hpp"
#include "merry/graph.hpp"
#include "merry/params.hpp"

namespace merry {

/// Query-conditional edge relevance: two bilinear logits
///   z_j = [x_h || x_r || x_t]ᵀ · W_j · x_q,   j ∈ {relevant, irrelevant},
/// normalised by softmax; the relevant probability weights CMP messages.
class EdgeScorer {
public:
    EdgeScorer() = default;
    EdgeScorer(ParamGroup& group, std::size_t text_dim, Rng& rng);

    std::size_t text_dim() const noexcept { return text_dim_; }
    Parameter& w_relevant() const { return *w_rel_; }    // 3t × t
    Parameter& w_irrelevant() const { return *w_irrel_; }  // 3t × t

    /// edge_text: E×3t rows [x_h || x_r || x_t]; query: 1×t. Returns E×1 relevance.
    ad::Var score(ad::Tape& tape, ad::Var edge_text, ad::Var query) const;

    /// Both softmax outputs (relevant, irrelevant) for one edge, without recording.
    std::pair<double, double> score_edge(std::span<const double> x_h, std::span<const double> x_r,
                                         std::span<const double> x_t, std::span<const double> x_q) const;

private:
    Parameter* w_rel_ = nullptr;
    Parameter* w_irrel_ = nullptr;
    std::size_t text_dim_ = 0;
};

/// Per-edge text rows [x_h || x_r || x_t] for the forward (non-inverse) triples of `kg`.
struct EdgeText {
    Matrix rows;                              // F×3t
    std::vector<std::size_t> edge_to_forward;  // augmented edge → forward edge row
};

}  // namespace merry
