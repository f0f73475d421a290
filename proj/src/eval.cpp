#include "merry/eval.hpp"

#include <algorithm>
#include <sstream>

#include "merry/error.hpp"
#include "merry/trainer.hpp"

namespace merry {

RankResult rank_query(std::span<const double> scores, std::size_t gold, std::span<const std::size_t> filter) {
    if (gold >= scores.size()) throw DataError("gold entity missing from the score vector");
    std::vector<char> skip(scores.size(), 0);
    for (std::size_t f : filter) {
        if (f == gold) throw DataError("filter set contains the gold entity");
        if (f < scores.size()) skip[f] = 1;
    }
    const double g = scores[gold];
    std::size_t greater = 0, ties = 0, survivors = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (skip[i]) continue;
        ++survivors;
        if (i == gold) continue;
        if (scores[i] > g) ++greater;
        else if (scores[i] == g) ++ties;
    }
    return {1 + greater + ties / 2, survivors};
}

double mrr(std::span<const std::size_t> ranks) {
    if (ranks.empty()) return 0.0;
    double s = 0.0;
    for (std::size_t r : ranks) s += 1.0 / static_cast<double>(r);
    return s / static_cast<double>(ranks.size());
}

double hits_at(std::span<const std::size_t> ranks, std::size_t k) {
    if (ranks.empty()) return 0.0;
    std::size_t n = 0;
    for (std::size_t r : ranks) n += r <= k ? 1 : 0;
    return static_cast<double>(n) / static_cast<double>(ranks.size());
}

nlohmann::json EvalReport::to_json() const {
    nlohmann::json dirs = nlohmann::json::object();
    for (const auto& [name, m] : directions) {
        dirs[name] = {{"mrr", m.mrr}, {"hits10", m.hits10}, {"n_queries", m.n_queries}};
    }
    return {{"mrr", mrr}, {"hits10", hits10}, {"n_queries", n_queries}, {"direction_breakdown", dirs}};
}

std::string EvalReport::queries_csv() const {
    std::ostringstream os;
    os << "head,relation,tail,direction,rank,candidates\n";
    for (const auto& q : queries) {
        os << q.head << ',' << q.relation << ',' << q.tail << ',' << q.direction << ',' << q.rank << ','
           << q.candidates << '\n';
    }
    return os.str();
}

EvalReport evaluate(const Model& model, const TextProvider& text, const KnowledgeGraph& graph,
                    std::span<const Triple> eval_triples, std::span<const Triple> filter_triples,
                    const EvalOptions& opts) {
    if (text.dim() != model.text_dim()) {
        throw ShapeError("text provider dimension " + std::to_string(text.dim()) + " does not match checkpoint " +
                         std::to_string(model.text_dim()));
    }
    const PreparedGraph g = prepare_graph(graph, model.config(), text);
    const CachedEncoding cache = model.cache_encoding(g);
    const bool heads = opts.head_queries && model.config().inverses;
    const std::size_t n_rel = graph.num_relations();

    TrueTails known;
    known.add_all(filter_triples, heads ? n_rel : 0);
    known.add_all(eval_triples, heads ? n_rel : 0);

    std::vector<std::size_t> all(graph.num_entities());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;

    EvalReport report;
    std::vector<std::size_t> tail_ranks, head_ranks;
    const std::size_t limit =
        opts.max_triples ? std::min(opts.max_triples, eval_triples.size()) : eval_triples.size();
    auto run = [&](std::size_t h, std::size_t r, std::size_t t, const char* dir, std::vector<std::size_t>& out) {
        const auto scores = model.score_candidates(g, &cache, h, r, all);
        std::vector<std::size_t> filter;
        for (std::size_t e : known.tails(h, r)) {
            if (e != t) filter.push_back(e);
        }
        const RankResult rr = rank_query(scores, t, filter);
        out.push_back(rr.rank);
        report.queries.push_back({g.kg.entities.name(h), g.kg.relations.name(r), g.kg.entities.name(t), dir,
                                  rr.rank, rr.candidates});
    };
    for (std::size_t i = 0; i < limit; ++i) {
        const Triple& tr = eval_triples[i];
        if (tr.head >= graph.num_entities() || tr.tail >= graph.num_entities() || tr.relation >= n_rel) {
            throw DataError("evaluation triple references ids outside the inference graph");
        }
        run(tr.head, tr.relation, tr.tail, "tail", tail_ranks);
        if (heads) run(tr.tail, g.kg.inverse_of(tr.relation), tr.head, "head", head_ranks);
    }

    std::vector<std::size_t> all_ranks;
    for (const auto& q : report.queries) all_ranks.push_back(q.rank);
    report.mrr = mrr(all_ranks);
    report.hits10 = hits_at(all_ranks, 10);
    report.n_queries = all_ranks.size();
    report.directions["tail"] = {mrr(tail_ranks), hits_at(tail_ranks, 10), tail_ranks.size()};
    if (heads) report.directions["head"] = {mrr(head_ranks), hits_at(head_ranks, 10), head_ranks.size()};
    return report;
}

EvalReport evaluate_split(const Model& model, const TextProvider& text, const InductiveSplit& split,
                          const EvalOptions& opts) {
    std::vector<Triple> filter = split.test_graph.triples;
    if (!split.inductive) {
        filter.insert(filter.end(), split.train_triples.begin(), split.train_triples.end());
        filter.insert(filter.end(), split.valid_triples.begin(), split.valid_triples.end());
    }
    return evaluate(model, text, split.test_graph, split.test_triples, filter, opts);
}

}  // namespace merry
