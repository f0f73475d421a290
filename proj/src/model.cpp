#include "merry/model.hpp"

#include "merry/error.hpp"
#include "merry/json_util.hpp"

namespace merry {

using nlohmann::json;

json ModelConfig::to_json() const {
    return {{"dim", dim},
            {"text",
             {{"provider", std::string(to_string(text.kind))},
              {"dim", text.dim},
              {"path", text.path.string()},
              {"hash_fallback", text.hash_fallback}}},
            {"qcmp_relation_layers", qcmp_relation_layers},
            {"qcmp_entity_layers", qcmp_entity_layers},
            {"gcmp_relation_layers", gcmp_relation_layers},
            {"gcmp_entity_layers", gcmp_entity_layers},
            {"query_tokens", query_tokens},
            {"decoder", std::string(to_string(decoder))},
            {"relu_after_norm", relu_after_norm},
            {"self_loops", self_loops},
            {"inverses", inverses},
            {"edge_scoring", edge_scoring},
            {"dtaf", dtaf},
            {"seed", seed}};
}

ModelConfig ModelConfig::from_json(const json& j) {
    constexpr std::string_view where = "model";
    require_keys(j,
                 {"dim", "text", "qcmp_relation_layers", "qcmp_entity_layers", "gcmp_relation_layers",
                  "gcmp_entity_layers", "query_tokens", "decoder", "relu_after_norm", "self_loops", "inverses",
                  "edge_scoring", "dtaf", "seed"},
                 where);
    ModelConfig c;
    c.dim = json_get<std::size_t>(j, "dim", c.dim, where);
    if (j.contains("text")) {
        const auto& t = j.at("text");
        require_keys(t, {"provider", "dim", "path", "hash_fallback"}, "model.text");
        c.text.kind = parse_provider_kind(json_get<std::string>(t, "provider", "hash", "model.text"));
        c.text.dim = json_get<std::size_t>(t, "dim", c.text.dim, "model.text");
        c.text.path = json_get<std::string>(t, "path", "", "model.text");
        c.text.hash_fallback = json_get<bool>(t, "hash_fallback", false, "model.text");
    }
    c.qcmp_relation_layers = json_get<std::size_t>(j, "qcmp_relation_layers", c.qcmp_relation_layers, where);
    c.qcmp_entity_layers = json_get<std::size_t>(j, "qcmp_entity_layers", c.qcmp_entity_layers, where);
    c.gcmp_relation_layers = json_get<std::size_t>(j, "gcmp_relation_layers", c.gcmp_relation_layers, where);
    c.gcmp_entity_layers = json_get<std::size_t>(j, "gcmp_entity_layers", c.gcmp_entity_layers, where);
    c.query_tokens = json_get<std::size_t>(j, "query_tokens", c.query_tokens, where);
    c.decoder = parse_decoder_mode(json_get<std::string>(j, "decoder", "attention", where));
    c.relu_after_norm = json_get<bool>(j, "relu_after_norm", c.relu_after_norm, where);
    c.self_loops = json_get<bool>(j, "self_loops", c.self_loops, where);
    c.inverses = json_get<bool>(j, "inverses", c.inverses, where);
    c.edge_scoring = json_get<bool>(j, "edge_scoring", c.edge_scoring, where);
    c.dtaf = json_get<bool>(j, "dtaf", c.dtaf, where);
    c.seed = json_get<std::uint64_t>(j, "seed", c.seed, where);
    if (c.dim == 0) throw UsageError("model.dim must be positive");
    if (c.query_tokens == 0) throw UsageError("model.query_tokens must be at least 1");
    if (c.text.kind != ProviderKind::file && c.text.dim == 0) throw UsageError("model.text.dim must be positive");
    return c;
}

PreparedGraph prepare_graph(const KnowledgeGraph& base, const ModelConfig& cfg, const TextProvider& text) {
    PreparedGraph g;
    g.kg = cfg.inverses ? augment_inverses(base) : base;
    g.kg.entity_text.resize(g.kg.num_entities());
    g.kg.relation_text.resize(g.kg.num_relations());
    g.relation_graph = lift_relation_graph(g.kg, cfg.self_loops);
    g.entity_edges = g.kg.edge_list();
    g.relation_edges = g.relation_graph.edge_list();

    const std::size_t t = text.dim();
    const std::size_t ne = g.kg.num_entities();
    g.entity_text = Matrix(ne, t);
    std::vector<std::vector<double>> ent_feats(ne);
    for (std::size_t e = 0; e < ne; ++e) {
        ent_feats[e] = text.feature(g.kg.entities.name(e), g.kg.entity_text[e]);
        std::copy(ent_feats[e].begin(), ent_feats[e].end(), g.entity_text.row_span(e).begin());
    }
    if (cfg.dtaf) {
        for (std::size_t e = 0; e < ne; ++e) {
            g.entity_tokens.push_back(text.tokens(g.kg.entities.name(e), g.kg.entity_text[e]));
        }
        for (std::size_t r = 0; r < g.kg.num_relations(); ++r) {
            g.relation_tokens.push_back(text.tokens(g.kg.relations.name(r), g.kg.relation_text[r]));
        }
    }

    // Edge text over forward triples; inverse edges reuse their forward row.
    const std::size_t forward = g.kg.augmented ? g.kg.triples.size() / 2 : g.kg.triples.size();
    g.edge_text.rows = Matrix(forward, 3 * t);
    std::vector<std::vector<double>> rel_feats(g.kg.num_relations());
    for (std::size_t r = 0; r < g.kg.num_relations(); ++r) {
        rel_feats[r] = text.feature(g.kg.relations.name(r), g.kg.relation_text[r]);
    }
    for (std::size_t i = 0; i < forward; ++i) {
        const Triple& tr = g.kg.triples[i];
        auto row = g.edge_text.rows.row_span(i);
        std::copy(ent_feats[tr.head].begin(), ent_feats[tr.head].end(), row.begin());
        std::copy(rel_feats[tr.relation].begin(), rel_feats[tr.relation].end(), row.begin() + t);
        std::copy(ent_feats[tr.tail].begin(), ent_feats[tr.tail].end(), row.begin() + 2 * t);
    }
    g.edge_text.edge_to_forward.resize(g.kg.triples.size());
    for (std::size_t i = 0; i < g.kg.triples.size(); ++i) {
        const std::size_t f = i < forward ? i : i - forward;
        if (i >= forward) {
            const Triple& inv = g.kg.triples[i];
            const Triple& fw = g.kg.triples[f];
            if (inv.head != fw.tail || inv.tail != fw.head || inv.relation != g.kg.inverse_of(fw.relation)) {
                throw DataError("inverse edge ordering violated while preparing graph");
            }
        }
        g.edge_text.edge_to_forward[i] = f;
    }
    return g;
}

Model::Model(ModelConfig cfg, std::size_t text_dim) : cfg_(std::move(cfg)), text_dim_(text_dim) {
    Rng rng(cfg_.seed);
    const CmpOptions opts{true, cfg_.relu_after_norm, 1e-5};
    qcmp_ = Qcmp(params_.group("qcmp"), cfg_.dim, cfg_.qcmp_relation_layers, cfg_.qcmp_entity_layers, rng, opts);
    gcmp_ = Gcmp(params_.group("gcmp"), cfg_.dim, text_dim, cfg_.gcmp_relation_layers, cfg_.gcmp_entity_layers, rng,
                 opts);
    fusion_ = ChannelFusion(params_.group("fusion"), cfg_.dim, rng);
    dtaf_ = Dtaf(params_.group("dtaf"), cfg_.dim, text_dim, cfg_.query_tokens, rng);
    edge_scorer_ = EdgeScorer(params_.group("edge_scorer"), text_dim, rng);
    decoder_ = Decoder(params_.group("decoder"), cfg_.dim, cfg_.decoder, rng);
}

GraphEncoding Model::encode_graph(ad::Tape& tape, const PreparedGraph& g, ad::Var scores) const {
    if (g.entity_text.cols() != text_dim_) {
        throw ShapeError("text features of dimension " + std::to_string(g.entity_text.cols()) +
                         " do not match the model's text dimension " + std::to_string(text_dim_));
    }
    GraphEncoding enc;
    std::tie(enc.rel_global, enc.ent_global) =
        gcmp_.encode(tape, g.relation_edges, g.entity_edges, tape.constant(g.entity_text), scores);
    if (cfg_.dtaf) {
        enc.rel_text = dtaf_.pool_all(tape, g.relation_tokens);
        enc.ent_text = dtaf_.pool_all(tape, g.entity_tokens);
    }
    return enc;
}

GraphEncoding Model::import_encoding(ad::Tape& tape, const CachedEncoding& c) const {
    GraphEncoding enc;
    enc.rel_global = tape.constant(c.rel_global);
    enc.ent_global = tape.constant(c.ent_global);
    if (cfg_.dtaf) {
        enc.rel_text = tape.constant(c.rel_text);
        enc.ent_text = tape.constant(c.ent_text);
    }
    return enc;
}

CachedEncoding Model::cache_encoding(const PreparedGraph& g) const {
    ad::Tape tape(false);
    const GraphEncoding enc = encode_graph(tape, g);
    CachedEncoding c;
    c.rel_global = enc.rel_global.value();
    c.ent_global = enc.ent_global.value();
    if (cfg_.dtaf) {
        c.rel_text = enc.rel_text.value();
        c.ent_text = enc.ent_text.value();
    }
    return c;
}

ad::Var Model::edge_scores(ad::Tape& tape, const PreparedGraph& g, std::size_t query_entity) const {
    if (query_entity >= g.kg.num_entities()) throw DataError("edge scoring query entity out of range");
    Matrix xq(1, text_dim_);
    std::copy(g.entity_text.row_span(query_entity).begin(), g.entity_text.row_span(query_entity).end(), xq.data());
    ad::Var forward = edge_scorer_.score(tape, tape.constant(g.edge_text.rows), tape.constant(std::move(xq)));
    if (g.edge_text.edge_to_forward.size() == g.edge_text.rows.rows()) return forward;
    return ad::gather_rows(forward, g.edge_text.edge_to_forward);
}

ad::Var Model::relation_states(ad::Tape& tape, const PreparedGraph& g, std::size_t query_relation) const {
    return qcmp_.relation_states(tape, g.relation_edges, query_relation);
}

ad::Var Model::query_logits(ad::Tape& tape, const PreparedGraph& g, const GraphEncoding& enc, ad::Var rel_states,
                            std::size_t query_entity, std::size_t query_relation,
                            const std::vector<std::size_t>& candidates, ad::Var scores) const {
    ad::Var hq = qcmp_.entity_states(tape, rel_states, g.entity_edges, query_entity, query_relation, scores);

    // Fusion is row-wise, so only the query row and candidate rows are needed.
    std::vector<std::size_t> rows;
    rows.reserve(candidates.size() + 1);
    rows.push_back(query_entity);
    rows.insert(rows.end(), candidates.begin(), candidates.end());
    ad::Var h_cmp = fusion_.fuse_entities(tape, ad::gather_rows(hq, rows), ad::gather_rows(enc.ent_global, rows));
    ad::Var r_cmp = fusion_.fuse_relations(tape, ad::gather_rows(rel_states, {query_relation}),
                                           ad::gather_rows(enc.rel_global, {query_relation}));
    ad::Var h_f = h_cmp;
    ad::Var r_f = r_cmp;
    if (cfg_.dtaf) {
        std::tie(r_f, h_f) = dtaf_.fuse(tape, ad::gather_rows(enc.rel_text, {query_relation}),
                                        ad::gather_rows(enc.ent_text, rows), r_cmp, h_cmp);
    }
    std::vector<std::size_t> cand_rows(candidates.size());
    for (std::size_t i = 0; i < candidates.size(); ++i) cand_rows[i] = i + 1;
    ad::Var query_row = ad::add(ad::gather_rows(h_f, {0}), r_f);
    return decoder_.logits(tape, query_row, ad::gather_rows(h_f, cand_rows));
}

std::vector<double> Model::score_candidates(const PreparedGraph& g, const CachedEncoding* cache,
                                            std::size_t query_entity, std::size_t query_relation,
                                            const std::vector<std::size_t>& candidates, bool with_edge_scores) const {
    ad::Tape tape(false);
    ad::Var scores;
    if (with_edge_scores) scores = edge_scores(tape, g, query_entity);
    const GraphEncoding enc = (cache && !with_edge_scores) ? import_encoding(tape, *cache) : encode_graph(tape, g, scores);
    ad::Var rs = relation_states(tape, g, query_relation);
    ad::Var logits = query_logits(tape, g, enc, rs, query_entity, query_relation, candidates, scores);
    return logits.value().values();
}

void save_model(const std::filesystem::path& dir, const Model& model, int stage) {
    ModelConfig cfg = model.config();
    cfg.text.dim = model.text_dim();
    save_checkpoint(dir, model.params(), CheckpointMeta{cfg.seed, stage, cfg.to_json()});
}

std::unique_ptr<Model> load_model(const std::filesystem::path& dir) {
    const CheckpointMeta meta = read_checkpoint_meta(dir);
    const ModelConfig cfg = ModelConfig::from_json(meta.model);
    auto model = std::make_unique<Model>(cfg, cfg.text.dim);
    load_checkpoint(dir, model->params());
    return model;
}

}  // namespace merry
