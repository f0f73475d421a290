#include <doctest.h>

#include <cmath>
#include <fstream>

#include "merry/error.hpp"
#include "merry/text.hpp"
#include "support.hpp"

using namespace merry;

namespace {

double norm(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

}  // namespace

TEST_CASE("hash_embed is deterministic and unit length") {
    const auto a = hash_embed("e1", "a cat", 24);
    CHECK(a == hash_embed("e1", "a cat", 24));
    CHECK(a != hash_embed("e2", "a cat", 24));
    CHECK(a != hash_embed("e1", "a dog", 24));
    CHECK(a.size() == 24);
    CHECK(norm(a) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("tokenize splits on non-word characters") {
    const auto t = tokenize("Which  city, does it lie-in?");
    REQUIRE_FALSE(t.empty());
    CHECK(tokenize("").empty());
    CHECK(tokenize("   ").empty());
}

TEST_CASE("embedding files") {
    test::TempDir dir("emb");
    std::ofstream(dir.path / "ok.txt") << "1 2\na 0.5 0.5\n";
    const auto t = load_embeddings(dir.path / "ok.txt");
    CHECK(t.dim() == 2);
    CHECK(t.lookup("a") == std::vector<double>{0.5, 0.5});
    CHECK(t.lookup("missing") == std::vector<double>{0.0, 0.0});

    save_embeddings(dir.path / "copy.txt", t);
    CHECK(load_embeddings(dir.path / "copy.txt").lookup("a") == t.lookup("a"));

    std::ofstream(dir.path / "count.txt") << "2 2\na 0.5 0.5\n";
    CHECK_THROWS_AS(load_embeddings(dir.path / "count.txt"), DataError);
    std::ofstream(dir.path / "dim.txt") << "1 3\na 0.5 0.5\n";
    CHECK_THROWS_AS(load_embeddings(dir.path / "dim.txt"), DataError);
    std::ofstream(dir.path / "hdr.txt") << "two 2\na 0.5 0.5\n";
    CHECK_THROWS_AS(load_embeddings(dir.path / "hdr.txt"), DataError);
}

TEST_CASE("providers fall back for missing text") {
    TextConfig cfg;
    cfg.dim = 8;
    const TextProvider zeros(cfg);
    CHECK(zeros.feature("x", std::nullopt) == std::vector<double>(8, 0.0));
    const Matrix tok = zeros.tokens("x", std::nullopt);
    CHECK(tok.rows() == 1);

    cfg.hash_fallback = true;
    const TextProvider hashed(cfg);
    CHECK(hashed.feature("x", std::nullopt) == hash_embed("x", "", 8));

    cfg.kind = ProviderKind::last_token;
    cfg.hash_fallback = false;
    const TextProvider last(cfg);
    CHECK(last.feature("a", std::string("red apple")) == last.feature("b", std::string("green apple")));
    CHECK(last.tokens("a", std::string("red apple")).rows() == 2);
    CHECK_THROWS_AS(parse_provider_kind("bert"), UsageError);
}

TEST_CASE("top-k retrieval") {
    const std::vector<std::pair<std::string, std::vector<double>>> pool{
        {"b", {0.0, 1.0}}, {"a", {1.0, 0.0}}, {"c", {0.0, 2.0}}, {"d", {1.0, 1.0}}};
    const auto self = top_k_similar(std::vector<double>{1.0, 0.0}, pool, 1);
    CHECK(self == std::vector<std::string>{"a"});
    // b and c are both orthogonal to the query; ascending id breaks the tie.
    const auto all = top_k_similar(std::vector<double>{1.0, 0.0}, pool, pool.size());
    CHECK(all == std::vector<std::string>{"a", "d", "b", "c"});
    CHECK_THROWS_AS(top_k_similar(std::vector<double>{1.0, 0.0}, pool, 5), UsageError);
    CHECK_THROWS_AS(cosine_similarity(std::vector<double>{1.0}, std::vector<double>{1.0, 2.0}), ShapeError);
}
