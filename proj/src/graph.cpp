#include "merry/graph.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <unordered_set>

#include "merry/error.hpp"
#include "merry/log.hpp"
#include "merry/random.hpp"

namespace merry {

namespace fs = std::filesystem;

std::size_t SymbolTable::intern(std::string_view name) {
    std::string key(name);
    if (auto it = ids_.find(key); it != ids_.end()) return it->second;
    const std::size_t id = names_.size();
    names_.push_back(key);
    ids_.emplace(std::move(key), id);
    return id;
}

std::optional<std::size_t> SymbolTable::find(std::string_view name) const {
    if (auto it = ids_.find(std::string(name)); it != ids_.end()) return it->second;
    return std::nullopt;
}

std::size_t KnowledgeGraph::TripleHash::operator()(const Triple& t) const noexcept {
    return static_cast<std::size_t>(mix64(mix64(mix64(t.head) ^ t.relation) ^ t.tail));
}

std::size_t KnowledgeGraph::add_entity(std::string_view name) {
    const std::size_t id = entities.intern(name);
    if (entity_text.size() < entities.size()) entity_text.resize(entities.size());
    return id;
}

std::size_t KnowledgeGraph::add_relation(std::string_view name) {
    if (augmented) throw UsageError("cannot add relations to an inverse-augmented graph");
    const std::size_t id = relations.intern(name);
    if (relation_text.size() < relations.size()) relation_text.resize(relations.size());
    base_relation_count = relations.size();
    return id;
}

bool KnowledgeGraph::add_triple(std::string_view head, std::string_view relation, std::string_view tail) {
    const std::size_t h = add_entity(head);
    const std::size_t r = add_relation(relation);
    const std::size_t t = add_entity(tail);
    return add_triple(Triple{h, r, t});
}

bool KnowledgeGraph::add_triple(Triple t) {
    if (t.head >= num_entities() || t.tail >= num_entities() || t.relation >= num_relations()) {
        throw DataError("triple references ids outside the symbol tables");
    }
    if (index_.count(t)) {
        ++duplicates_dropped;
        return false;
    }
    index_.emplace(t, triples.size());
    triples.push_back(t);
    return true;
}

bool KnowledgeGraph::contains(const Triple& t) const { return index_.count(t) > 0; }

std::size_t KnowledgeGraph::inverse_of(std::size_t relation) const {
    if (!augmented) throw UsageError("inverse_of on a graph without inverse relations");
    if (relation >= num_relations()) throw DataError("relation id out of range");
    return relation < base_relation_count ? relation + base_relation_count : relation - base_relation_count;
}

kernels::EdgeList KnowledgeGraph::edge_list() const {
    std::vector<std::size_t> src, rel, dst;
    src.reserve(triples.size());
    rel.reserve(triples.size());
    dst.reserve(triples.size());
    for (const auto& t : triples) {
        src.push_back(t.head);
        rel.push_back(t.relation);
        dst.push_back(t.tail);
    }
    return kernels::make_edge_list(std::move(src), std::move(rel), std::move(dst), num_entities(), num_relations());
}

namespace {

std::vector<std::string_view> split_tabs(std::string_view line) {
    std::vector<std::string_view> cols;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find('\t', start);
        if (pos == std::string_view::npos) {
            cols.push_back(line.substr(start));
            break;
        }
        cols.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    return cols;
}

std::string_view chomp(std::string_view s) {
    while (!s.empty() && (s.back() == '\r' || s.back() == '\n')) s.remove_suffix(1);
    return s;
}

std::ifstream open_or_throw(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    return in;
}

}  // namespace

std::vector<Triple> read_triples_into(KnowledgeGraph& kg, const fs::path& path, bool add_to_graph) {
    auto in = open_or_throw(path);
    std::vector<Triple> out;
    std::string raw;
    std::size_t lineno = 0;
    const std::size_t dups_before = kg.duplicates_dropped;
    std::set<Triple> seen;
    std::size_t dup_eval = 0;
    while (std::getline(in, raw)) {
        ++lineno;
        const auto line = chomp(raw);
        if (line.empty()) continue;
        const auto cols = split_tabs(line);
        if (cols.size() != 3 || cols[0].empty() || cols[1].empty() || cols[2].empty()) {
            throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected 3 tab-separated columns, got " +
                            std::to_string(cols.size()));
        }
        const Triple t{kg.add_entity(cols[0]), kg.add_relation(cols[1]), kg.add_entity(cols[2])};
        if (add_to_graph) {
            if (kg.add_triple(t)) out.push_back(t);
        } else if (seen.insert(t).second) {
            out.push_back(t);
        } else {
            ++dup_eval;
        }
    }
    const std::size_t dropped = kg.duplicates_dropped - dups_before + dup_eval;
    if (dropped > 0) log().info("{}: dropped {} duplicate triple(s)", path.string(), dropped);
    return out;
}

void attach_descriptions(KnowledgeGraph& kg, const fs::path& path, bool relations) {
    auto in = open_or_throw(path);
    std::string raw;
    std::size_t lineno = 0;
    std::unordered_set<std::string> seen;
    std::size_t unknown = 0;
    while (std::getline(in, raw)) {
        ++lineno;
        const auto line = chomp(raw);
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string_view::npos || tab == 0) {
            throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected id<TAB>text");
        }
        const std::string id(line.substr(0, tab));
        if (!seen.insert(id).second) {
            throw DataError(path.string() + ":" + std::to_string(lineno) + ": duplicate description id '" + id + "'");
        }
        const auto& table = relations ? kg.relations : kg.entities;
        auto& texts = relations ? kg.relation_text : kg.entity_text;
        if (auto idx = table.find(id)) {
            texts[*idx] = std::string(line.substr(tab + 1));
        } else {
            ++unknown;
        }
    }
    if (unknown > 0) log().info("{}: {} description(s) for ids not in the graph", path.string(), unknown);
}

KnowledgeGraph load_kg(const fs::path& triples_path, const std::optional<fs::path>& entity_desc_path,
                       const std::optional<fs::path>& relation_desc_path) {
    KnowledgeGraph kg;
    read_triples_into(kg, triples_path, true);
    if (entity_desc_path) attach_descriptions(kg, *entity_desc_path, false);
    if (relation_desc_path) attach_descriptions(kg, *relation_desc_path, true);
    return kg;
}

KnowledgeGraph without_triples(const KnowledgeGraph& kg, const std::vector<Triple>& removed) {
    if (kg.augmented) throw UsageError("without_triples expects a graph before inverse augmentation");
    KnowledgeGraph out;
    for (const auto& name : kg.entities.names()) out.add_entity(name);
    for (const auto& name : kg.relations.names()) out.add_relation(name);
    out.entity_text = kg.entity_text;
    out.relation_text = kg.relation_text;
    out.entity_text.resize(out.num_entities());
    out.relation_text.resize(out.num_relations());
    std::vector<Triple> drop = removed;
    std::sort(drop.begin(), drop.end());
    for (const auto& t : kg.triples) {
        if (!std::binary_search(drop.begin(), drop.end(), t)) out.add_triple(t);
    }
    return out;
}

KnowledgeGraph augment_inverses(const KnowledgeGraph& kg) {
    if (kg.augmented) throw UsageError("graph is already inverse-augmented");
    KnowledgeGraph out = kg;
    const std::size_t n = kg.num_relations();
    for (std::size_t r = 0; r < n; ++r) {
        out.relations.intern(kg.relations.name(r) + std::string(kInverseSuffix));
        const auto& text = kg.relation_text[r];
        out.relation_text.push_back(text ? std::optional<std::string>("inverse of " + *text) : std::nullopt);
    }
    if (out.relations.size() != 2 * n) throw DataError("inverse relation name collides with an existing relation");
    out.augmented = true;
    out.base_relation_count = n;
    for (const auto& t : kg.triples) out.add_triple(Triple{t.tail, t.relation + n, t.head});
    return out;
}

kernels::EdgeList RelationGraph::edge_list() const {
    std::vector<std::size_t> src, rel, dst;
    for (const auto& e : edges) {
        src.push_back(e.from);
        rel.push_back(static_cast<std::size_t>(e.meta));
        dst.push_back(e.to);
    }
    return kernels::make_edge_list(std::move(src), std::move(rel), std::move(dst), num_relations, kMetaRelationCount);
}

RelationGraph lift_relation_graph(const KnowledgeGraph& kg, bool include_self_loops) {
    const std::size_t nr = kg.num_relations();
    const std::size_t ne = kg.num_entities();
    // Boolean head/tail incidence, stored per entity as sorted relation lists.
    std::vector<std::vector<std::size_t>> heads_of(ne), tails_of(ne);
    for (const auto& t : kg.triples) {
        heads_of[t.head].push_back(t.relation);
        tails_of[t.tail].push_back(t.relation);
    }
    auto normalize = [](std::vector<std::size_t>& v) {
        std::sort(v.begin(), v.end());
        v.erase(std::unique(v.begin(), v.end()), v.end());
    };
    for (std::size_t e = 0; e < ne; ++e) {
        normalize(heads_of[e]);
        normalize(tails_of[e]);
    }
    // Each entity contributes the outer products of its incidence rows,
    // i.e. one column of Hᵀ·H, Hᵀ·T, Tᵀ·H and Tᵀ·T.
    std::set<RelationEdge> edges;
    auto emit = [&](const std::vector<std::size_t>& as, const std::vector<std::size_t>& bs, MetaRelation m) {
        for (std::size_t a : as) {
            for (std::size_t b : bs) {
                if (include_self_loops || a != b) edges.insert(RelationEdge{a, m, b});
            }
        }
    };
    for (std::size_t e = 0; e < ne; ++e) {
        emit(heads_of[e], heads_of[e], MetaRelation::h2h);
        emit(heads_of[e], tails_of[e], MetaRelation::h2t);
        emit(tails_of[e], heads_of[e], MetaRelation::t2h);
        emit(tails_of[e], tails_of[e], MetaRelation::t2t);
    }
    RelationGraph g;
    g.num_relations = nr;
    g.edges.assign(edges.begin(), edges.end());
    return g;
}

InductiveSplit load_split(const fs::path& dir) {
    for (const char* name : {"train.txt", "valid.txt", "test.txt"}) {
        if (!fs::exists(dir / name)) throw DataError("split directory " + dir.string() + " lacks " + name);
    }
    InductiveSplit split;
    const bool has_train_graph = fs::exists(dir / "train_graph.txt");
    split.inductive = fs::exists(dir / "test_graph.txt");

    if (has_train_graph) {
        read_triples_into(split.train_graph, dir / "train_graph.txt", true);
        split.train_triples = read_triples_into(split.train_graph, dir / "train.txt", false);
    } else {
        split.train_triples = read_triples_into(split.train_graph, dir / "train.txt", true);
    }
    split.valid_triples = read_triples_into(split.train_graph, dir / "valid.txt", false);

    if (split.inductive) {
        read_triples_into(split.test_graph, dir / "test_graph.txt", true);
        split.test_triples = read_triples_into(split.test_graph, dir / "test.txt", false);
    } else {
        split.test_triples = read_triples_into(split.train_graph, dir / "test.txt", false);
    }

    for (auto* kg : {&split.train_graph, &split.test_graph}) {
        if (fs::exists(dir / "entity_desc.txt")) attach_descriptions(*kg, dir / "entity_desc.txt", false);
        if (fs::exists(dir / "relation_desc.txt")) attach_descriptions(*kg, dir / "relation_desc.txt", true);
        kg->entity_text.resize(kg->num_entities());
        kg->relation_text.resize(kg->num_relations());
    }
    if (!split.inductive) split.test_graph = split.train_graph;

    for (const auto& name : split.test_graph.entities.names()) {
        if (!split.train_graph.entities.find(name)) split.unseen_entities = true;
    }
    for (const auto& name : split.test_graph.relations.names()) {
        if (!split.train_graph.relations.find(name)) split.unseen_relations = true;
    }
    return split;
}

}  // namespace merry
