#include "merry/fusion.hpp"

#include <cmath>

#include "merry/error.hpp"

namespace merry {

Mlp Mlp::create(ParamGroup& group, const std::string& prefix, std::size_t in, std::size_t hidden, std::size_t out,
                Rng& rng) {
    Mlp m;
    m.w1 = &group.add(prefix + ".w1", init_uniform_fan_in(in, in, hidden, rng));
    m.b1 = &group.add(prefix + ".b1", init_uniform_fan_in(in, 1, hidden, rng));
    m.w2 = &group.add(prefix + ".w2", init_uniform_fan_in(hidden, hidden, out, rng));
    m.b2 = &group.add(prefix + ".b2", init_uniform_fan_in(hidden, 1, out, rng));
    return m;
}

ad::Var Mlp::forward(ad::Tape& tape, ad::Var x) const {
    ad::Var h = ad::relu(ad::add_row(ad::matmul(x, tape.param(*w1)), tape.param(*b1)));
    return ad::add_row(ad::matmul(h, tape.param(*w2)), tape.param(*b2));
}

ChannelFusion::ChannelFusion(ParamGroup& group, std::size_t dim, Rng& rng)
    : relation_(Mlp::create(group, "relation_mlp", 2 * dim, dim, dim, rng)),
      entity_(Mlp::create(group, "entity_mlp", 2 * dim, dim, dim, rng)) {}

ad::Var ChannelFusion::fuse_relations(ad::Tape& tape, ad::Var query_channel, ad::Var global_channel) const {
    require_same_shape(query_channel.value(), global_channel.value(), "fuse_channels");
    return relation_.forward(tape, ad::concat_cols(query_channel, global_channel));
}

ad::Var ChannelFusion::fuse_entities(ad::Tape& tape, ad::Var query_channel, ad::Var global_channel) const {
    require_same_shape(query_channel.value(), global_channel.value(), "fuse_channels");
    return entity_.forward(tape, ad::concat_cols(query_channel, global_channel));
}

Dtaf::Dtaf(ParamGroup& group, std::size_t dim, std::size_t text_dim, std::size_t query_tokens, Rng& rng)
    : dim_(dim) {
    if (query_tokens == 0) throw UsageError("DTAF needs at least one query token");
    query_tokens_ = &group.add("query_tokens", init_uniform_fan_in(dim, query_tokens, dim, rng));
    // Unit-norm token vectors come out with unit-variance entries, the same
    // scale as the layer-normalised CMP states they are blended with.
    Matrix proj = init_uniform_fan_in(1, text_dim, dim, rng);
    for (std::size_t i = 0; i < proj.size(); ++i) proj[i] *= std::sqrt(3.0);
    projection_ = &group.add("token_projection", std::move(proj));
    gate_a_ = &group.add("gate_relation", Matrix(1, 1, 0.0));
    gate_b_ = &group.add("gate_entity", Matrix(1, 1, 0.0));
}

ad::Var Dtaf::pool_slots(ad::Tape& tape, ad::Var tokens) const {
    if (tokens.rows() == 0) throw ShapeError("dtaf_pool: empty token matrix");
    ad::Var keys = ad::matmul(tokens, tape.param(*projection_));                 // T×d
    ad::Var logits = ad::scale(ad::matmul_a_bt(tape.param(*query_tokens_), keys),  // k×T
                               1.0 / std::sqrt(static_cast<double>(dim_)));
    return ad::matmul(ad::softmax_rows(logits), keys);  // k×d
}

ad::Var Dtaf::pool(ad::Tape& tape, ad::Var tokens) const { return ad::mean_rows(pool_slots(tape, tokens)); }

ad::Var Dtaf::pool_all(ad::Tape& tape, const std::vector<Matrix>& tokens) const {
    if (tokens.empty()) return tape.constant(Matrix(0, dim_));
    std::vector<ad::Var> rows;
    rows.reserve(tokens.size());
    for (const auto& t : tokens) rows.push_back(pool(tape, tape.constant(t)));
    return ad::concat_rows(rows);
}

ad::Var gated_blend(ad::Var gate_logit, ad::Var text, ad::Var structure) {
    require_same_shape(text.value(), structure.value(), "dtaf_fuse");
    ad::Var g = ad::sigmoid(gate_logit);
    return ad::add(ad::mul_scalar(text, g), ad::mul_scalar(structure, ad::one_minus(g)));
}

std::pair<ad::Var, ad::Var> Dtaf::fuse(ad::Tape& tape, ad::Var text_rel, ad::Var text_ent, ad::Var cmp_rel,
                                       ad::Var cmp_ent) const {
    return {gated_blend(tape.param(*gate_a_), text_rel, cmp_rel), gated_blend(tape.param(*gate_b_), text_ent, cmp_ent)};
}

DecoderMode parse_decoder_mode(std::string_view s) {
    if (s == "attention") return DecoderMode::attention;
    if (s == "mlp") return DecoderMode::mlp;
    throw UsageError("unknown decoder mode '" + std::string(s) + "' (expected attention or mlp)");
}

std::string_view to_string(DecoderMode m) { return m == DecoderMode::attention ? "attention" : "mlp"; }

Decoder::Decoder(ParamGroup& group, std::size_t dim, DecoderMode mode, Rng& rng) : mode_(mode), dim_(dim) {
    if (mode == DecoderMode::attention) {
        w_query_ = &group.add("w_query", init_uniform_fan_in(dim, dim, dim, rng));
        w_key_ = &group.add("w_key", init_uniform_fan_in(dim, dim, dim, rng));
    } else {
        mlp_ = Mlp::create(group, "mlp", dim, dim, 1, rng);
    }
}

ad::Var Decoder::logits(ad::Tape& tape, ad::Var query_row, ad::Var candidates) const {
    if (candidates.rows() == 0) throw ShapeError("decode_scores: no candidates");
    if (mode_ == DecoderMode::mlp) return mlp_.forward(tape, candidates);
    if (query_row.rows() != 1 || query_row.cols() != candidates.cols()) {
        throw ShapeError("decode_scores: shape mismatch " + query_row.value().shape_str() + " vs " +
                         candidates.value().shape_str());
    }
    ad::Var q = ad::matmul(query_row, tape.param(*w_query_));
    ad::Var k = ad::matmul(candidates, tape.param(*w_key_));
    return ad::scale(ad::matmul_a_bt(k, q), 1.0 / std::sqrt(static_cast<double>(dim_)));
}

}  // namespace merry
