#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "merry/autodiff.hpp"
#include "merry/params.hpp"

namespace merry {

/// Row-wise Linear → ReLU → Linear.
struct Mlp {
    Parameter* w1 = nullptr;
    Parameter* b1 = nullptr;
    Parameter* w2 = nullptr;
    Parameter* b2 = nullptr;

    static Mlp create(ParamGroup& group, const std::string& prefix, std::size_t in, std::size_t hidden,
                      std::size_t out, Rng& rng);
    ad::Var forward(ad::Tape& tape, ad::Var x) const;
};

/// Merges the query-conditioned and global channels: MLP([a || b]) row-wise.
class ChannelFusion {
public:
    ChannelFusion() = default;
    ChannelFusion(ParamGroup& group, std::size_t dim, Rng& rng);

    ad::Var fuse_relations(ad::Tape& tape, ad::Var query_channel, ad::Var global_channel) const;
    ad::Var fuse_entities(ad::Tape& tape, ad::Var query_channel, ad::Var global_channel) const;

    const Mlp& relation_mlp() const noexcept { return relation_; }
    const Mlp& entity_mlp() const noexcept { return entity_; }

private:
    Mlp relation_;
    Mlp entity_;
};

/// Text-adaptive fusion: cross-attention pooling of token features with
/// learned query tokens, and sigmoid-gated convex blends with the CMP states.
class Dtaf {
public:
    Dtaf() = default;
    Dtaf(ParamGroup& group, std::size_t dim, std::size_t text_dim, std::size_t query_tokens, Rng& rng);

    Parameter& query_tokens() const { return *query_tokens_; }
    Parameter& projection() const { return *projection_; }
    Parameter& gate_relation() const { return *gate_a_; }  // α = sigmoid(a)
    Parameter& gate_entity() const { return *gate_b_; }    // β = sigmoid(b)

    /// T×text_dim tokens → 1×d: softmax(Q·Kᵀ/√d)·K over the projected tokens, mean over the k slots.
    ad::Var pool(ad::Tape& tape, ad::Var tokens) const;
    /// Slot outputs before the mean (k×d).
    ad::Var pool_slots(ad::Tape& tape, ad::Var tokens) const;
    /// One pooled row per item.
    ad::Var pool_all(ad::Tape& tape, const std::vector<Matrix>& tokens) const;

    /// (R_f, H_f) = (α·X_r + (1−α)·R_cmp, β·X_e + (1−β)·H_cmp).
    std::pair<ad::Var, ad::Var> fuse(ad::Tape& tape, ad::Var text_rel, ad::Var text_ent, ad::Var cmp_rel,
                                     ad::Var cmp_ent) const;

private:
    Parameter* query_tokens_ = nullptr;  // k × d
    Parameter* projection_ = nullptr;    // text_dim × d
    Parameter* gate_a_ = nullptr;        // 1 × 1
    Parameter* gate_b_ = nullptr;        // 1 × 1
    std::size_t dim_ = 0;
};

/// Gated blend of two equal-shape matrices with weight sigmoid(gate).
ad::Var gated_blend(ad::Var gate_logit, ad::Var text, ad::Var structure);

enum class DecoderMode { attention, mlp };
DecoderMode parse_decoder_mode(std::string_view s);
std::string_view to_string(DecoderMode m);

/// Candidate scorer. attention: (W_q·q)·(W_k·h_i)/√d; mlp: MLP(h_i).
class Decoder {
public:
    Decoder() = default;
    Decoder(ParamGroup& group, std::size_t dim, DecoderMode mode, Rng& rng);

    DecoderMode mode() const noexcept { return mode_; }
    Parameter& w_query() const { return *w_query_; }
    Parameter& w_key() const { return *w_key_; }

    /// query_row: 1×d, candidates: n×d → n×1 logits.
    ad::Var logits(ad::Tape& tape, ad::Var query_row, ad::Var candidates) const;

private:
    DecoderMode mode_ = DecoderMode::attention;
    Parameter* w_query_ = nullptr;
    Parameter* w_key_ = nullptr;
    Mlp mlp_;
    std::size_t dim_ = 0;
};

}  // namespace merry
