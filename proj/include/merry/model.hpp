#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <vector>

#include <nlohmann/json.hpp>

#include "merry/edge_scorer.hpp"
#include "merry/encoders.hpp"
#include "merry/fusion.hpp"
#include "merry/graph.hpp"
#include "merry/text.hpp"

namespace merry {

struct ModelConfig {
    std::size_t dim = 64;
    TextConfig text;
    std::size_t qcmp_relation_layers = 6;
    std::size_t qcmp_entity_layers = 6;
    std::size_t gcmp_relation_layers = 3;
    std::size_t gcmp_entity_layers = 3;
    std::size_t query_tokens = 1;
    DecoderMode decoder = DecoderMode::attention;
    bool relu_after_norm = false;
    bool self_loops = true;
    bool inverses = true;
    bool edge_scoring = true;  // only consulted for question answering
    bool dtaf = true;
    std::uint64_t seed = 0;

    nlohmann::json to_json() const;
    /// Strict: unknown keys and wrong types throw UsageError. Missing keys keep defaults.
    static ModelConfig from_json(const nlohmann::json& j);
};

inline const std::vector<std::string> kParamGroups = {"qcmp", "gcmp", "fusion", "dtaf", "edge_scorer", "decoder"};

/// A graph ready for encoding: inverse-augmented (per config), lifted, with
/// per-item text features resolved through the provider.
struct PreparedGraph {
    KnowledgeGraph kg;
    RelationGraph relation_graph;
    kernels::EdgeList entity_edges;
    kernels::EdgeList relation_edges;
    Matrix entity_text;  // |E|×t
    std::vector<Matrix> entity_tokens;
    std::vector<Matrix> relation_tokens;
    EdgeText edge_text;
};

PreparedGraph prepare_graph(const KnowledgeGraph& base, const ModelConfig& cfg, const TextProvider& text);

/// Query-independent encodings of one graph.
struct GraphEncoding {
    ad::Var rel_global;  // R_g
    ad::Var ent_global;  // H_g
    ad::Var rel_text;    // X_r (invalid without DTAF)
    ad::Var ent_text;    // X_e (invalid without DTAF)
};

struct CachedEncoding {
    Matrix rel_global;
    Matrix ent_global;
    Matrix rel_text;
    Matrix ent_text;
};

class Model {
public:
    Model(ModelConfig cfg, std::size_t text_dim);

    const ModelConfig& config() const noexcept { return cfg_; }
    ModelConfig& mutable_config() noexcept { return cfg_; }
    ParamStore& params() noexcept { return params_; }
    const ParamStore& params() const noexcept { return params_; }

    Qcmp& qcmp() noexcept { return qcmp_; }
    Gcmp& gcmp() noexcept { return gcmp_; }
    const ChannelFusion& fusion() const noexcept { return fusion_; }
    const Dtaf& dtaf() const noexcept { return dtaf_; }
    const EdgeScorer& edge_scorer() const noexcept { return edge_scorer_; }
    const Decoder& decoder() const noexcept { return decoder_; }
    std::size_t text_dim() const noexcept { return text_dim_; }

    GraphEncoding encode_graph(ad::Tape& tape, const PreparedGraph& g, ad::Var scores = {}) const;
    GraphEncoding import_encoding(ad::Tape& tape, const CachedEncoding& c) const;
    CachedEncoding cache_encoding(const PreparedGraph& g) const;

    /// E×1 relevance for every (augmented) edge of g, conditioned on the text of `query_entity`.
    ad::Var edge_scores(ad::Tape& tape, const PreparedGraph& g, std::size_t query_entity) const;

    ad::Var relation_states(ad::Tape& tape, const PreparedGraph& g, std::size_t query_relation) const;

    /// Logits (n×1) for `candidates` given query (e_q, r_q).
    ad::Var query_logits(ad::Tape& tape, const PreparedGraph& g, const GraphEncoding& enc, ad::Var rel_states,
                         std::size_t query_entity, std::size_t query_relation,
                         const std::vector<std::size_t>& candidates, ad::Var scores = {}) const;

    /// Inference without gradients. With `cache` the global channel is reused.
    std::vector<double> score_candidates(const PreparedGraph& g, const CachedEncoding* cache, std::size_t query_entity,
                                         std::size_t query_relation, const std::vector<std::size_t>& candidates,
                                         bool with_edge_scores = false) const;

private:
    ModelConfig cfg_;
    std::size_t text_dim_;
    ParamStore params_;
    Qcmp qcmp_;
    Gcmp gcmp_;
    ChannelFusion fusion_;
    Dtaf dtaf_;
    EdgeScorer edge_scorer_;
    Decoder decoder_;
};

/// Checkpoint = parameters + the model config (text dimension resolved).
void save_model(const std::filesystem::path& dir, const Model& model, int stage);
std::unique_ptr<Model> load_model(const std::filesystem::path& dir);

}  // namespace merry
