#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "merry/autodiff.hpp"
#include "merry/kernels.hpp"
#include "merry/params.hpp"

namespace merry {

struct CmpOptions {
    bool layer_norm = true;
    bool relu = false;  // after the normalisation
    double eps = 1e-5;
};

/// Per-layer UPDATE parameters: Linear(2d → d) then LayerNorm(d).
struct CmpLayerParams {
    Parameter* weight = nullptr;  // 2d × d, rows [0,d) read h_v, rows [d,2d) read agg_v
    Parameter* bias = nullptr;    // 1 × d
    Parameter* gamma = nullptr;   // 1 × d
    Parameter* beta = nullptr;    // 1 × d
};

/// Conditional message passing: per layer,
///   agg_v = Σ_{(u,r,v)} s·(h_u ⊙ r),   h_v ← LayerNorm(W·[h_v || agg_v] + b).
/// Layers have distinct parameters. Relation features are per call.
class CmpStack {
public:
    CmpStack() = default;
    CmpStack(ParamGroup& group, const std::string& prefix, std::size_t layers, std::size_t dim, Rng& rng,
             CmpOptions options = {});

    std::size_t layers() const noexcept { return layers_.size(); }
    std::size_t dim() const noexcept { return dim_; }
    const CmpOptions& options() const noexcept { return options_; }
    CmpOptions& options() noexcept { return options_; }
    const std::vector<CmpLayerParams>& layer_params() const noexcept { return layers_; }

    /// node_init: |V|×d; edge_feats: one d-row per relation id; scores: E×1 or invalid (all ones).
    ad::Var forward(ad::Tape& tape, ad::Var node_init, ad::Var edge_feats, const kernels::EdgeList& graph,
                    ad::Var scores = {}) const;

private:
    std::vector<CmpLayerParams> layers_;
    std::size_t dim_ = 0;
    CmpOptions options_;
};

/// Sets a layer to the exact test configuration: W = [0; I], b = 0, so the
/// update returns the aggregate (combine with options.layer_norm = false).
void set_select_aggregate(const CmpLayerParams& layer);

}  // namespace merry
