#include "merry/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

#include <fmt/format.h>

#include "merry/error.hpp"
#include "merry/eval.hpp"
#include "merry/json_util.hpp"
#include "merry/log.hpp"

namespace merry {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<StageConfig> TrainConfig::default_stages(std::size_t epochs_per_stage) {
    return {
        {"warmup", epochs_per_stage, {"gcmp", "dtaf", "edge_scorer"}, 5e-4},
        {"global", epochs_per_stage, {"qcmp"}, 5e-4},
        {"joint", epochs_per_stage, {}, 5e-4},
    };
}

json TrainConfig::to_json() const {
    json stages_j = json::array();
    for (const auto& s : stages) {
        stages_j.push_back({{"name", s.name}, {"epochs", s.epochs}, {"frozen", s.frozen}, {"lr", s.lr}});
    }
    json graphs_j = json::array();
    for (const auto& g : graphs) graphs_j.push_back({{"split", g.split.string()}, {"weight", g.weight}});
    return {{"model", model.to_json()},
            {"stages", stages_j},
            {"negatives", negatives},
            {"batch_size", batch_size},
            {"seed", seed},
            {"graphs", graphs_j},
            {"eval_every", eval_every},
            {"max_valid_queries", max_valid_queries},
            {"remove_query_edges", remove_query_edges},
            {"output", output.string()}};
}

TrainConfig TrainConfig::from_json(const json& j) {
    constexpr std::string_view where = "train config";
    require_keys(j,
                 {"model", "stages", "negatives", "batch_size", "seed", "graphs", "eval_every", "max_valid_queries",
                  "remove_query_edges", "output"},
                 where);
    TrainConfig c;
    if (j.contains("model")) c.model = ModelConfig::from_json(j.at("model"));
    if (j.contains("stages")) {
        if (!j.at("stages").is_array()) throw UsageError("train config: 'stages' must be an array");
        for (const auto& s : j.at("stages")) {
            require_keys(s, {"name", "epochs", "frozen", "lr"}, "stage");
            StageConfig st;
            st.name = json_get<std::string>(s, "name", "stage" + std::to_string(c.stages.size()), "stage");
            st.epochs = json_get<std::size_t>(s, "epochs", 1, "stage");
            st.frozen = json_get<std::vector<std::string>>(s, "frozen", {}, "stage");
            st.lr = json_get<double>(s, "lr", 5e-4, "stage");
            c.stages.push_back(std::move(st));
        }
    } else {
        c.stages = default_stages(1);
    }
    c.negatives = json_get<std::size_t>(j, "negatives", c.negatives, where);
    c.batch_size = json_get<std::size_t>(j, "batch_size", c.batch_size, where);
    c.seed = json_get<std::uint64_t>(j, "seed", c.seed, where);
    if (j.contains("graphs")) {
        if (!j.at("graphs").is_array()) throw UsageError("train config: 'graphs' must be an array");
        for (const auto& g : j.at("graphs")) {
            require_keys(g, {"split", "weight"}, "graph");
            MixtureEntry e;
            e.split = json_get<std::string>(g, "split", "", "graph");
            e.weight = json_get<double>(g, "weight", 1.0, "graph");
            c.graphs.push_back(std::move(e));
        }
    }
    c.eval_every = json_get<std::size_t>(j, "eval_every", c.eval_every, where);
    c.max_valid_queries = json_get<std::size_t>(j, "max_valid_queries", c.max_valid_queries, where);
    c.remove_query_edges = json_get<bool>(j, "remove_query_edges", c.remove_query_edges, where);
    c.output = json_get<std::string>(j, "output", "", where);
    return c;
}

void TrainConfig::validate(const ParamStore& store) const {
    if (negatives < 1) throw UsageError("negatives per positive must be at least 1");
    if (batch_size < 1) throw UsageError("batch size must be at least 1");
    if (stages.empty()) throw UsageError("stage list is empty");
    for (const auto& s : stages) {
        for (const auto& g : s.frozen) {
            if (!store.find_group(g)) throw UsageError("stage '" + s.name + "' freezes unknown group '" + g + "'");
        }
        if (!(s.lr > 0.0) || !std::isfinite(s.lr)) throw UsageError("stage '" + s.name + "' has a non-positive lr");
    }
    for (const auto& g : graphs) {
        if (!(g.weight > 0.0) || !std::isfinite(g.weight)) throw UsageError("mixture weights must be positive");
    }
}

std::string TrainStats::to_csv() const {
    std::string out = "epoch,stage,loss,val_mrr\n";
    for (const auto& e : epochs) {
        out += fmt::format("{},{},{:.10g},{}\n", e.epoch, e.stage, e.loss,
                           e.val_mrr ? fmt::format("{:.10g}", *e.val_mrr) : std::string());
    }
    return out;
}

double bce_loss(double p_pos, std::span<const double> p_negs) {
    static constexpr double kClamp = 1e-12;
    auto clamp = [](double p) { return std::clamp(p, kClamp, 1.0 - kClamp); };
    double loss = -std::log(clamp(p_pos));
    if (p_negs.empty()) return loss;
    double neg = 0.0;
    for (double p : p_negs) neg += std::log(1.0 - clamp(p));
    return loss - neg / static_cast<double>(p_negs.size());
}

void TrueTails::add(const Triple& t) {
    auto& v = map_[key(t.head, t.relation)];
    if (std::find(v.begin(), v.end(), t.tail) == v.end()) v.push_back(t.tail);
}

void TrueTails::add_all(std::span<const Triple> triples, std::size_t inverse_offset) {
    for (const auto& t : triples) {
        add(t);
        if (inverse_offset > 0) add(Triple{t.tail, t.relation + inverse_offset, t.head});
    }
}

const std::vector<std::size_t>& TrueTails::tails(std::size_t head, std::size_t relation) const {
    auto it = map_.find(key(head, relation));
    return it == map_.end() ? empty_ : it->second;
}

std::vector<std::size_t> sample_negatives(std::size_t num_entities, const Triple& positive,
                                          const std::vector<std::size_t>& known, std::size_t n, Rng& rng) {
    if (num_entities < 2) throw DataError("negative sampling needs at least two entities");
    std::vector<char> banned(num_entities, 0);
    for (std::size_t e : known) {
        if (e < num_entities) banned[e] = 1;
    }
    banned[positive.tail] = 1;
    std::vector<std::size_t> pool;
    for (std::size_t e = 0; e < num_entities; ++e) {
        if (!banned[e]) pool.push_back(e);
    }
    if (pool.empty()) {
        log().warn("every entity is a true tail of ({}, {}, ?); sampling unfiltered negatives", positive.head,
                   positive.relation);
        for (std::size_t e = 0; e < num_entities; ++e) {
            if (e != positive.tail) pool.push_back(e);
        }
    }
    std::vector<std::size_t> out(n);
    for (auto& e : out) e = pool[rng.below(pool.size())];
    return out;
}

namespace {

struct GraphState {
    TrainGraph* source = nullptr;
    PreparedGraph full;  // used when query edges stay in the graph
    TrueTails known;
    std::vector<std::size_t> order;
    std::size_t cursor = 0;
};

std::vector<Triple> next_batch(GraphState& s, std::size_t batch, Rng& rng) {
    std::vector<Triple> out;
    const auto& pos = s.source->train;
    while (out.size() < std::min(batch, pos.size())) {
        if (s.cursor == 0) {
            // Fisher–Yates with our own generator keeps shuffles portable.
            for (std::size_t i = s.order.size(); i > 1; --i) std::swap(s.order[i - 1], s.order[rng.below(i)]);
        }
        out.push_back(pos[s.order[s.cursor]]);
        s.cursor = (s.cursor + 1) % s.order.size();
    }
    return out;
}

json batch_dump(const TrainGraph& g, const std::vector<Triple>& batch) {
    json arr = json::array();
    for (const auto& t : batch) {
        arr.push_back({g.graph.entities.name(t.head), g.graph.relations.name(t.relation), g.graph.entities.name(t.tail)});
    }
    return {{"graph", g.name}, {"batch", arr}};
}

double run_batch(Model& model, const TextProvider& text, const TrainConfig& cfg, GraphState& s,
                 const std::vector<Triple>& batch, Rng& rng) {
    const ModelConfig& mc = model.config();
    PreparedGraph reduced;
    const PreparedGraph* g = &s.full;
    if (cfg.remove_query_edges) {
        reduced = prepare_graph(without_triples(s.source->graph, batch), mc, text);
        g = &reduced;
    }
    const std::size_t n_ent = g->kg.num_entities();

    ad::Tape tape;
    const GraphEncoding enc = model.encode_graph(tape, *g);
    std::unordered_map<std::size_t, ad::Var> rel_states;
    std::vector<std::size_t> neg_index(cfg.negatives);
    std::iota(neg_index.begin(), neg_index.end(), std::size_t{1});

    ad::Var total;
    std::size_t count = 0;
    auto query = [&](std::size_t h, std::size_t r, std::size_t t) {
        auto it = rel_states.find(r);
        if (it == rel_states.end()) it = rel_states.emplace(r, model.relation_states(tape, *g, r)).first;
        std::vector<std::size_t> cands{t};
        const auto negs = sample_negatives(n_ent, Triple{h, r, t}, s.known.tails(h, r), cfg.negatives, rng);
        cands.insert(cands.end(), negs.begin(), negs.end());
        ad::Var logits = model.query_logits(tape, *g, enc, it->second, h, r, cands);
        ad::Var l = ad::bce_from_logits(logits, 0, neg_index);
        total = total.valid() ? ad::add(total, l) : l;
        ++count;
    };
    for (const auto& tr : batch) {
        query(tr.head, tr.relation, tr.tail);
        if (mc.inverses) query(tr.tail, g->kg.inverse_of(tr.relation), tr.head);
    }
    ad::Var loss = ad::scale(total, 1.0 / static_cast<double>(count));
    model.params().zero_grad();
    if (loss.requires_grad()) tape.backward(loss);
    return loss.value()(0, 0);
}

double validation_mrr(const Model& model, const TextProvider& text, const TrainConfig& cfg,
                      const std::vector<GraphState>& states) {
    double weighted = 0.0;
    std::size_t n = 0;
    for (const auto& s : states) {
        if (s.source->valid.empty()) continue;
        std::vector<Triple> filter = s.source->graph.triples;
        filter.insert(filter.end(), s.source->train.begin(), s.source->train.end());
        EvalOptions opts;
        opts.max_triples = cfg.max_valid_queries;
        const EvalReport r = evaluate(model, text, s.source->graph, s.source->valid, filter, opts);
        weighted += r.mrr * static_cast<double>(r.n_queries);
        n += r.n_queries;
    }
    return n ? weighted / static_cast<double>(n) : 0.0;
}

}  // namespace

TrainStats train(Model& model, const TextProvider& text, const TrainConfig& cfg, std::vector<TrainGraph>& graphs,
                 const TrainHooks& hooks) {
    cfg.validate(model.params());
    if (graphs.empty()) throw UsageError("training needs at least one graph");
    if (text.dim() != model.text_dim()) throw ShapeError("text provider dimension does not match the model");

    std::vector<GraphState> states(graphs.size());
    std::vector<double> cumulative;
    double total_weight = 0.0;
    std::size_t total_positives = 0;
    for (std::size_t i = 0; i < graphs.size(); ++i) {
        auto& s = states[i];
        s.source = &graphs[i];
        if (graphs[i].graph.augmented) throw UsageError("training graphs must not be pre-augmented");
        if (graphs[i].train.empty()) throw DataError("graph '" + graphs[i].name + "' has no training triples");
        if (!cfg.remove_query_edges) s.full = prepare_graph(graphs[i].graph, model.config(), text);
        const std::size_t offset = model.config().inverses ? graphs[i].graph.num_relations() : 0;
        s.known.add_all(graphs[i].graph.triples, offset);
        s.known.add_all(graphs[i].train, offset);
        s.order.resize(graphs[i].train.size());
        std::iota(s.order.begin(), s.order.end(), std::size_t{0});
        total_weight += graphs[i].weight;
        cumulative.push_back(total_weight);
        total_positives += graphs[i].train.size();
    }
    const std::size_t steps_per_epoch = (total_positives + cfg.batch_size - 1) / cfg.batch_size;

    Rng rng(cfg.seed);
    TrainStats stats;
    stats.graph_hits.assign(graphs.size(), 0);
    if (!cfg.output.empty()) fs::create_directories(cfg.output);

    std::size_t epoch = 0;
    bool stopped = false;
    for (std::size_t si = 0; si < cfg.stages.size() && !stopped; ++si) {
        const StageConfig& stage = cfg.stages[si];
        model.params().set_frozen_groups(stage.frozen);
        AdamConfig adam;
        adam.lr = stage.lr;
        const auto t0 = std::chrono::steady_clock::now();
        for (std::size_t e = 0; e < stage.epochs && !stopped; ++e, ++epoch) {
            double loss_sum = 0.0;
            for (std::size_t step = 0; step < steps_per_epoch; ++step) {
                const double u = rng.uniform01() * total_weight;
                std::size_t gi = 0;
                while (gi + 1 < cumulative.size() && u >= cumulative[gi]) ++gi;
                ++stats.graph_hits[gi];
                const auto batch = next_batch(states[gi], cfg.batch_size, rng);
                double loss = 0.0;
                try {
                    loss = run_batch(model, text, cfg, states[gi], batch, rng);
                    adam_step(model.params(), adam);
                } catch (const NumericError& err) {
                    const json dump = batch_dump(*states[gi].source, batch);
                    if (!cfg.output.empty()) std::ofstream(cfg.output / "nan_batch.json") << dump.dump(2) << '\n';
                    throw NumericError(std::string(err.what()) + " (epoch " + std::to_string(epoch) + ", batch " +
                                       dump.dump() + ")");
                }
                loss_sum += loss;
            }
            EpochRecord rec{epoch, si, loss_sum / static_cast<double>(steps_per_epoch), std::nullopt};
            if (!std::isfinite(rec.loss) || rec.loss < 0.0) throw NumericError("non-finite epoch loss");
            if (cfg.eval_every && (e + 1) % cfg.eval_every == 0) {
                rec.val_mrr = validation_mrr(model, text, cfg, states);
                if (*rec.val_mrr > stats.best_val_mrr) {
                    stats.best_val_mrr = *rec.val_mrr;
                    if (!cfg.output.empty()) save_model(cfg.output / "best", model, static_cast<int>(si));
                }
            }
            stats.epochs.push_back(rec);
            if (hooks.on_epoch) hooks.on_epoch(rec);
            if (hooks.stop && hooks.stop(rec)) stopped = true;
        }
        stats.stage_seconds.push_back(
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
        if (!cfg.output.empty()) save_model(cfg.output / fmt::format("stage{}", si), model, static_cast<int>(si));
    }
    model.params().set_frozen_groups({});
    if (!cfg.output.empty()) {
        save_model(cfg.output / "final", model, static_cast<int>(cfg.stages.size()) - 1);
        std::ofstream(cfg.output / "stats.csv") << stats.to_csv();
    }
    return stats;
}

TrainStats train_from_config(const TrainConfig& cfg, std::unique_ptr<Model>* out_model) {
    if (cfg.graphs.empty()) throw UsageError("train config lists no graphs");
    TextProvider text(cfg.model.text);
    ModelConfig mc = cfg.model;
    mc.text.dim = text.dim();
    auto model = std::make_unique<Model>(mc, text.dim());
    std::vector<TrainGraph> graphs;
    for (const auto& entry : cfg.graphs) {
        InductiveSplit split = load_split(entry.split);
        graphs.push_back({entry.split.string(), std::move(split.train_graph), std::move(split.train_triples),
                          std::move(split.valid_triples), entry.weight});
    }
    TrainStats stats = train(*model, text, cfg, graphs);
    if (out_model) *out_model = std::move(model);
    return stats;
}

}  // namespace merry
