#include <doctest.h>

#include <fstream>
#include <string>

#include "merry/error.hpp"
#include "merry/graph.hpp"
#include "support.hpp"

using namespace merry;

namespace {

void write(const std::filesystem::path& p, const std::string& body) {
    std::ofstream(p) << body;
}

KnowledgeGraph chain() {
    KnowledgeGraph kg;
    kg.add_triple("a", "r1", "b");
    kg.add_triple("b", "r2", "c");
    return kg;
}

bool has(const RelationGraph& g, std::size_t from, MetaRelation m, std::size_t to) {
    return std::find(g.edges.begin(), g.edges.end(), RelationEdge{from, m, to}) != g.edges.end();
}

}  // namespace

TEST_CASE("loading interns ids in first-appearance order and drops duplicates") {
    test::TempDir dir("load");
    write(dir.path / "t.txt", "a\tr1\tb\nb\tr2\tc\n\na\tr1\tb\n");
    const auto kg = load_kg(dir.path / "t.txt");
    CHECK(kg.num_entities() == 3);
    CHECK(kg.num_relations() == 2);
    CHECK(kg.triples.size() == 2);
    CHECK(kg.duplicates_dropped == 1);
    CHECK(kg.entities.name(0) == "a");
    CHECK(kg.relations.name(1) == "r2");
    CHECK(kg.contains({1, 1, 2}));

    write(dir.path / "empty.txt", "");
    const auto none = load_kg(dir.path / "empty.txt");
    CHECK(none.triples.empty());
    CHECK(lift_relation_graph(none).edges.empty());
}

TEST_CASE("malformed lines report file and line number") {
    test::TempDir dir("bad");
    write(dir.path / "t.txt", "a\tr\tb\na\tr\n");
    try {
        load_kg(dir.path / "t.txt");
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("t.txt:2:") != std::string::npos);
    }
    CHECK_THROWS_AS(load_kg(dir.path / "missing.txt"), DataError);
}

TEST_CASE("descriptions attach by id") {
    test::TempDir dir("desc");
    write(dir.path / "t.txt", "a\tr\tb\n");
    write(dir.path / "e.txt", "a\tthe first\nzzz\tunknown is skipped\n");
    write(dir.path / "r.txt", "r\tlinks things\n");
    const auto kg = load_kg(dir.path / "t.txt", dir.path / "e.txt", dir.path / "r.txt");
    CHECK(kg.entity_text[0] == "the first");
    CHECK_FALSE(kg.entity_text[1].has_value());
    CHECK(kg.relation_text[0] == "links things");
}

TEST_CASE("inverse augmentation") {
    const auto aug = augment_inverses(chain());
    CHECK(aug.num_relations() == 4);
    CHECK(aug.triples.size() == 4);
    CHECK(aug.relations.name(2) == "r1^-1");
    CHECK(aug.inverse_of(0) == 2);
    CHECK(aug.inverse_of(3) == 1);
    CHECK(aug.is_inverse(2));
    CHECK_FALSE(aug.is_inverse(1));
    CHECK(aug.contains({1, 2, 0}));  // (b, r1⁻¹, a)
    CHECK(aug.contains({2, 3, 1}));  // (c, r2⁻¹, b)
    CHECK_THROWS_AS(augment_inverses(aug), UsageError);
    CHECK_THROWS_AS(chain().inverse_of(0), UsageError);
}

TEST_CASE("relation graph of a two-hop chain") {
    const auto kg = chain();
    const auto plain = lift_relation_graph(kg, false);
    CHECK(plain.num_relations == 2);
    CHECK(plain.edges.size() == 2);
    CHECK(has(plain, 0, MetaRelation::t2h, 1));
    CHECK(has(plain, 1, MetaRelation::h2t, 0));

    const auto loops = lift_relation_graph(kg, true);
    CHECK(loops.edges.size() == 6);
    for (std::size_t r : {0, 1}) {
        CHECK(has(loops, r, MetaRelation::h2h, r));
        CHECK(has(loops, r, MetaRelation::t2t, r));
    }
    CHECK(std::is_sorted(loops.edges.begin(), loops.edges.end()));
}

TEST_CASE("a single relation lifts to nothing without self-loops") {
    KnowledgeGraph kg;
    kg.add_triple("a", "r", "b");
    kg.add_triple("c", "r", "b");
    CHECK(lift_relation_graph(kg, false).edges.empty());
    CHECK_FALSE(lift_relation_graph(kg, true).edges.empty());
}

TEST_CASE("shared heads and tails") {
    KnowledgeGraph kg;
    kg.add_triple("x", "p", "y");
    kg.add_triple("x", "q", "z");
    kg.add_triple("w", "s", "z");
    const auto g = lift_relation_graph(kg, false);
    CHECK(has(g, 0, MetaRelation::h2h, 1));
    CHECK(has(g, 1, MetaRelation::h2h, 0));
    CHECK(has(g, 1, MetaRelation::t2t, 2));
    CHECK(has(g, 2, MetaRelation::t2t, 1));
    CHECK(g.edges.size() == 4);
}

TEST_CASE("without_triples keeps symbols") {
    const auto kg = chain();
    const auto cut = without_triples(kg, {kg.triples[0]});
    CHECK(cut.triples.size() == 1);
    CHECK(cut.num_entities() == 3);
    CHECK_FALSE(cut.contains(kg.triples[0]));
    CHECK(cut.contains(kg.triples[1]));
}

TEST_CASE("split flags") {
    test::TempDir dir("split");
    write(dir.path / "train.txt", "a\tr\tb\nb\tr\tc\n");
    write(dir.path / "valid.txt", "a\tr\tc\n");
    write(dir.path / "test.txt", "c\tr\ta\n");
    auto s = load_split(dir.path);
    CHECK_FALSE(s.inductive);
    CHECK(s.train_triples.size() == 2);
    CHECK(s.test_triples.size() == 1);
    CHECK(s.test_graph.num_entities() == s.train_graph.num_entities());

    write(dir.path / "test_graph.txt", "u\tr\tv\nv\tnew\tw\n");
    write(dir.path / "test.txt", "u\tr\tw\n");
    s = load_split(dir.path);
    CHECK(s.inductive);
    CHECK(s.unseen_entities);
    CHECK(s.unseen_relations);

    std::filesystem::remove(dir.path / "valid.txt");
    CHECK_THROWS_AS(load_split(dir.path), DataError);
}
