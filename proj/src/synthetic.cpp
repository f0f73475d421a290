#include "merry/synthetic.hpp"

#include <algorithm>
#include <array>
#include <numeric>
#include <set>
#include <tuple>

#include "merry/error.hpp"

namespace merry::synthetic {

namespace {

template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

std::vector<std::size_t> permutation(std::size_t n, Rng& rng) {
    std::vector<std::size_t> p(n);
    std::iota(p.begin(), p.end(), std::size_t{0});
    shuffle(p, rng);
    return p;
}

}  // namespace

KnowledgeGraph random_kg(std::size_t entities, std::size_t relations, std::size_t triples, Rng& rng) {
    if (entities == 0 || relations == 0) throw UsageError("random_kg needs at least one entity and relation");
    KnowledgeGraph kg;
    for (std::size_t e = 0; e < entities; ++e) kg.add_entity("e" + std::to_string(e));
    for (std::size_t r = 0; r < relations; ++r) kg.add_relation("r" + std::to_string(r));
    const std::size_t cap = std::min(triples, entities * entities * relations);
    while (kg.triples.size() < cap) {
        kg.add_triple(Triple{rng.below(entities), rng.below(relations), rng.below(entities)});
    }
    return kg;
}

Relabeled relabel(const KnowledgeGraph& kg, Rng& rng, const std::string& prefix) {
    if (kg.augmented) throw UsageError("relabel expects a graph before inverse augmentation");
    Relabeled out;
    out.entity_perm = permutation(kg.num_entities(), rng);
    out.relation_perm = permutation(kg.num_relations(), rng);
    std::vector<std::size_t> ent_inv(kg.num_entities()), rel_inv(kg.num_relations());
    for (std::size_t i = 0; i < ent_inv.size(); ++i) ent_inv[out.entity_perm[i]] = i;
    for (std::size_t i = 0; i < rel_inv.size(); ++i) rel_inv[out.relation_perm[i]] = i;
    KnowledgeGraph& g = out.graph;
    for (std::size_t n = 0; n < ent_inv.size(); ++n) {
        g.add_entity(prefix + "ent" + std::to_string(n));
        g.entity_text[n] = kg.entity_text.size() > ent_inv[n] ? kg.entity_text[ent_inv[n]] : std::nullopt;
    }
    for (std::size_t n = 0; n < rel_inv.size(); ++n) {
        g.add_relation(prefix + "rel" + std::to_string(n));
        g.relation_text[n] = kg.relation_text.size() > rel_inv[n] ? kg.relation_text[rel_inv[n]] : std::nullopt;
    }
    for (const auto& t : kg.triples) {
        g.add_triple(Triple{out.entity_perm[t.head], out.relation_perm[t.relation], out.entity_perm[t.tail]});
    }
    return out;
}

SchemaGraph family_graph(std::size_t families, Rng& rng, const std::string& prefix, double held_out) {
    KnowledgeGraph all;
    const std::size_t parent = all.add_relation(prefix + "parent_of");
    const std::size_t child = all.add_relation(prefix + "child_of");
    const std::size_t spouse = all.add_relation(prefix + "spouse_of");
    const std::size_t sibling = all.add_relation(prefix + "sibling_of");
    const std::size_t grand = all.add_relation(prefix + "grandparent_of");
    std::size_t next = 0;
    auto person = [&] { return all.add_entity(prefix + "p" + std::to_string(next++)); };
    auto couple = [&](std::size_t a, std::size_t b) {
        all.add_triple(Triple{a, spouse, b});
        all.add_triple(Triple{b, spouse, a});
    };
    auto kids = [&](std::size_t a, std::size_t b, std::size_t n) {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t c = person();
            for (std::size_t p : {a, b}) {
                all.add_triple(Triple{p, parent, c});
                all.add_triple(Triple{c, child, p});
            }
            out.push_back(c);
        }
        for (std::size_t x : out) {
            for (std::size_t y : out) {
                if (x != y) all.add_triple(Triple{x, sibling, y});
            }
        }
        return out;
    };
    for (std::size_t f = 0; f < families; ++f) {
        const std::size_t g1 = person(), g2 = person();
        couple(g1, g2);
        for (std::size_t c : kids(g1, g2, 2 + rng.below(2))) {
            const std::size_t partner = person();
            couple(c, partner);
            for (std::size_t gc : kids(c, partner, 1 + rng.below(2))) {
                all.add_triple(Triple{g1, grand, gc});
                all.add_triple(Triple{g2, grand, gc});
            }
        }
    }

    SchemaGraph out;
    out.graph = without_triples(all, all.triples);
    std::vector<std::size_t> order(all.triples.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle(order, rng);
    const std::size_t n_held = static_cast<std::size_t>(held_out * static_cast<double>(order.size()));
    std::vector<char> held(order.size(), 0);
    for (std::size_t i = 0; i < n_held; ++i) held[order[i]] = 1;
    std::size_t k = 0;
    for (std::size_t i = 0; i < all.triples.size(); ++i) {
        const Triple& t = all.triples[i];
        if (!held[i]) {
            out.graph.add_triple(t);
            out.train.push_back(t);
        } else {
            (k++ % 2 == 0 ? out.test : out.valid).push_back(t);
        }
    }
    return out;
}

QaCurriculum qa_curriculum(std::size_t train, std::size_t test, Rng& rng) {
    static const std::array<std::string, 5> categories{"fruit", "animal", "tool", "color", "city"};
    static const std::array<std::string, 4> verbs{"eat", "see", "own", "like"};
    constexpr std::size_t per_category = 6;
    constexpr std::size_t fanout = 3;

    QaCurriculum cur;
    KnowledgeGraph& kg = cur.kg;
    std::vector<std::size_t> category_of;
    for (std::size_t c = 0; c < categories.size(); ++c) {
        for (std::size_t i = 0; i < per_category; ++i) {
            kg.add_entity(categories[c] + std::to_string(i));
            category_of.push_back(c);
        }
    }
    for (const auto& v : verbs) kg.add_relation(v);
    const std::size_t n = kg.num_entities();
    std::vector<std::vector<std::vector<std::size_t>>> tails(n, std::vector<std::vector<std::size_t>>(verbs.size()));
    for (std::size_t h = 0; h < n; ++h) {
        for (std::size_t r = 0; r < verbs.size(); ++r) {
            auto& ts = tails[h][r];
            while (ts.size() < fanout) {
                const std::size_t t = rng.below(n);
                if (t != h && std::find(ts.begin(), ts.end(), t) == ts.end()) ts.push_back(t);
            }
            for (std::size_t t : ts) kg.add_triple(Triple{h, r, t});
        }
    }
    auto linked = [&](std::size_t h, std::size_t r, std::size_t t) {
        const auto& ts = tails[h][r];
        return std::find(ts.begin(), ts.end(), t) != ts.end();
    };
    // Entities reached from h by r but not by r2, filtered by category.
    auto pick = [&](std::size_t h, std::size_t r, std::size_t r2, auto&& want) -> std::optional<std::size_t> {
        std::vector<std::size_t> ok;
        for (std::size_t t : tails[h][r]) {
            if (!linked(h, r2, t) && want(category_of[t])) ok.push_back(t);
        }
        if (ok.empty()) return std::nullopt;
        return ok[rng.below(ok.size())];
    };

    std::set<std::tuple<std::size_t, std::size_t, std::size_t>> seen;
    const std::size_t total = train + test;
    std::size_t attempts = 0;
    while (cur.train.size() + cur.test.size() < total) {
        if (++attempts > 100000) throw DataError("qa curriculum: could not generate enough distinct questions");
        const std::size_t h = rng.below(n);
        const std::size_t r = rng.below(verbs.size());
        std::size_t r2 = rng.below(verbs.size() - 1);
        if (r2 >= r) ++r2;
        const std::size_t c = rng.below(categories.size());
        if (seen.count({h, r, c})) continue;
        const auto x = pick(h, r, r2, [&](std::size_t k) { return k == c; });
        const auto y = pick(h, r2, r, [&](std::size_t k) { return k == c; });
        if (!x || !y) continue;
        // The wrong category must be shared by both wrong-category options.
        std::optional<std::size_t> z, w;
        for (std::size_t k = 0; k < categories.size() && !(z && w); ++k) {
            const std::size_t c2 = (c + 1 + k) % categories.size();
            if (c2 == c) continue;
            z = pick(h, r, r2, [&](std::size_t q) { return q == c2; });
            w = pick(h, r2, r, [&](std::size_t q) { return q == c2; });
        }
        if (!z || !w) continue;
        seen.insert({h, r, c});

        QaInstance inst;
        inst.id = "q" + std::to_string(cur.train.size() + cur.test.size());
        // The topic is reached through the asks-about edge, not named in the text.
        inst.question = "which " + categories[c] + " does it " + verbs[r];
        inst.topics = {kg.entities.name(h)};
        std::vector<std::size_t> ents{*x, *y, *z, *w};
        shuffle(ents, rng);
        for (std::size_t i = 0; i < ents.size(); ++i) {
            const std::string label(1, static_cast<char>('A' + i));
            const std::string& name = kg.entities.name(ents[i]);
            inst.options.push_back({label, categories[category_of[ents[i]]], {name}});
            if (ents[i] == *x) inst.answer = label;
        }
        // Retrieved subgraph: every out-edge of the topic.
        for (std::size_t rr = 0; rr < verbs.size(); ++rr) {
            for (std::size_t t : tails[h][rr]) inst.graph.add_triple(kg.entities.name(h), verbs[rr], kg.entities.name(t));
        }
        // Subgraph entities share one generic description, so only structure tells them apart.
        inst.graph.entity_text.assign(inst.graph.num_entities(), std::string("an entity"));
        inst.graph.relation_text.resize(inst.graph.num_relations());
        (cur.train.size() < train ? cur.train : cur.test).push_back(std::move(inst));
    }
    kg.entity_text.resize(kg.num_entities());
    kg.relation_text.resize(kg.num_relations());
    return cur;
}

}  // namespace merry::synthetic
