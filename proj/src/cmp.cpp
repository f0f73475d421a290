#include "merry/cmp.hpp"

#include "merry/error.hpp"

namespace merry {

CmpStack::CmpStack(ParamGroup& group, const std::string& prefix, std::size_t layers, std::size_t dim, Rng& rng,
                   CmpOptions options)
    : dim_(dim), options_(options) {
    for (std::size_t l = 0; l < layers; ++l) {
        const std::string p = prefix + ".layer" + std::to_string(l);
        CmpLayerParams lp;
        lp.weight = &group.add(p + ".weight", init_uniform_fan_in(2 * dim, 2 * dim, dim, rng));
        lp.bias = &group.add(p + ".bias", init_uniform_fan_in(2 * dim, 1, dim, rng));
        lp.gamma = &group.add(p + ".ln_scale", Matrix(1, dim, 1.0));
        lp.beta = &group.add(p + ".ln_shift", Matrix(1, dim, 0.0));
        layers_.push_back(lp);
    }
}

ad::Var CmpStack::forward(ad::Tape& tape, ad::Var node_init, ad::Var edge_feats, const kernels::EdgeList& graph,
                          ad::Var scores) const {
    if (node_init.rows() != graph.num_nodes) {
        throw ShapeError("cmp_forward: node init " + node_init.value().shape_str() + " for a graph with " +
                         std::to_string(graph.num_nodes) + " nodes");
    }
    if (edge_feats.rows() < graph.num_relations) {
        throw ShapeError("cmp_forward: " + std::to_string(edge_feats.rows()) + " relation features for " +
                         std::to_string(graph.num_relations) + " relation ids");
    }
    if (node_init.cols() != dim_ || edge_feats.cols() != dim_) {
        throw ShapeError("cmp_forward: shape mismatch " + node_init.value().shape_str() + " vs " +
                         edge_feats.value().shape_str() + " for dimension " + std::to_string(dim_));
    }
    ad::Var h = node_init;
    for (const auto& lp : layers_) {
        ad::Var agg = ad::message_aggregate(h, edge_feats, graph, scores);
        ad::Var z = ad::add_row(ad::matmul(ad::concat_cols(h, agg), tape.param(*lp.weight)), tape.param(*lp.bias));
        if (options_.layer_norm) {
            z = ad::layer_norm(z, tape.param(*lp.gamma), tape.param(*lp.beta), options_.eps);
        }
        if (options_.relu) z = ad::relu(z);
        h = z;
    }
    return h;
}

void set_select_aggregate(const CmpLayerParams& layer) {
    const std::size_t d = layer.bias->value.cols();
    layer.weight->value.fill(0.0);
    for (std::size_t j = 0; j < d; ++j) layer.weight->value(d + j, j) = 1.0;
    layer.bias->value.fill(0.0);
}

}  // namespace merry
