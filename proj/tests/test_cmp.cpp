#include <doctest.h>

#include <numeric>

#include "merry/cmp.hpp"
#include "merry/encoders.hpp"
#include "merry/error.hpp"
#include "merry/model.hpp"
#include "merry/synthetic.hpp"
#include "support.hpp"

using namespace merry;
using merry::test::random_matrix;

namespace {

Matrix run(const CmpStack& s, const Matrix& h, const Matrix& rel, const kernels::EdgeList& g,
           const std::vector<double>& scores = {}) {
    ad::Tape tape(false);
    ad::Var sv = scores.empty() ? ad::Var{} : tape.constant(Matrix(scores.size(), 1, scores));
    return s.forward(tape, tape.constant(h), tape.constant(rel), g, sv).value();
}

}  // namespace

TEST_CASE("select-aggregate layer returns the weighted message sum") {
    ParamStore store;
    Rng rng(1);
    CmpStack s(store.group("c"), "l", 1, 2, rng, CmpOptions{false, false, 1e-5});
    set_select_aggregate(s.layer_params()[0]);
    const auto g = kernels::make_edge_list({0}, {0}, {1}, 2, 1);
    const Matrix h = Matrix::from_rows({{1, 2}, {0, 0}});
    const Matrix r = Matrix::row({3, 4});
    const Matrix out = run(s, h, r, g);
    CHECK(out(1, 0) == 3.0);
    CHECK(out(1, 1) == 8.0);
    CHECK(out(0, 0) == 0.0);  // no in-edges
    const Matrix off = run(s, h, r, g, {0.0});
    CHECK(off(1, 0) == 0.0);
    CHECK(off(1, 1) == 0.0);

    const auto empty = kernels::make_edge_list({}, {}, {}, 2, 1);
    CHECK(run(s, h, r, empty) == Matrix(2, 2));
}

TEST_CASE("a duplicated edge counts like one edge of score two") {
    ParamStore store;
    Rng rng(2);
    CmpStack s(store.group("c"), "l", 2, 4, rng);
    const Matrix h = random_matrix(3, 4, rng), r = random_matrix(2, 4, rng);
    const auto twice = kernels::make_edge_list({0, 0, 1}, {1, 1, 0}, {2, 2, 0}, 3, 2);
    const auto once = kernels::make_edge_list({0, 1}, {1, 0}, {2, 0}, 3, 2);
    CHECK(max_abs_diff(run(s, h, r, twice), run(s, h, r, once, {2.0, 1.0})) < 1e-12);
}

TEST_CASE("message passing is permutation equivariant") {
    ParamStore store;
    Rng rng(3);
    CmpStack s(store.group("c"), "l", 3, 6, rng);
    const std::size_t n = 9;
    std::vector<std::size_t> src, rel, dst;
    for (int e = 0; e < 25; ++e) {
        src.push_back(rng.below(n));
        rel.push_back(rng.below(3));
        dst.push_back(rng.below(n));
    }
    const Matrix h = random_matrix(n, 6, rng), r = random_matrix(3, 6, rng);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = n - 1; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);
    std::vector<std::size_t> psrc, pdst;
    for (std::size_t e = 0; e < src.size(); ++e) {
        psrc.push_back(perm[src[e]]);
        pdst.push_back(perm[dst[e]]);
    }
    Matrix ph(n, 6);
    for (std::size_t v = 0; v < n; ++v) {
        for (std::size_t c = 0; c < 6; ++c) ph(perm[v], c) = h(v, c);
    }
    const Matrix a = run(s, h, r, kernels::make_edge_list(src, rel, dst, n, 3));
    const Matrix b = run(s, ph, r, kernels::make_edge_list(psrc, rel, pdst, n, 3));
    double worst = 0.0;
    for (std::size_t v = 0; v < n; ++v) {
        for (std::size_t c = 0; c < 6; ++c) worst = std::max(worst, std::abs(a(v, c) - b(perm[v], c)));
    }
    CHECK(worst < 1e-12);
}

TEST_CASE("shape errors") {
    ParamStore store;
    Rng rng(4);
    CmpStack s(store.group("c"), "l", 1, 2, rng);
    const auto g = kernels::make_edge_list({0}, {0}, {1}, 2, 1);
    CHECK_THROWS_AS(run(s, Matrix(3, 2), Matrix(1, 2), g), ShapeError);
    CHECK_THROWS_AS(run(s, Matrix(2, 2), Matrix(1, 3), g), ShapeError);
}

TEST_CASE("query relation init is one-hot by rows") {
    const Matrix m = qcmp_relation_init(2, 5, 4);
    CHECK(m.rows() == 5);
    CHECK(m.cols() == 4);
    for (std::size_t r = 0; r < 5; ++r) {
        for (std::size_t c = 0; c < 4; ++c) CHECK(m(r, c) == (r == 2 ? 1.0 : 0.0));
    }
    CHECK_THROWS_AS(qcmp_relation_init(5, 5, 4), DataError);
}

TEST_CASE("zero-layer encoders expose their initial states") {
    ParamStore store;
    Rng rng(5);
    Qcmp q(store.group("qcmp"), 3, 0, 0, rng, {});
    const auto rg = kernels::make_edge_list({0}, {1}, {1}, 2, 4);
    const auto eg = kernels::make_edge_list({0}, {1}, {2}, 4, 2);
    ad::Tape tape(false);
    ad::Var r = q.relation_states(tape, rg, 1);
    CHECK(r.value() == qcmp_relation_init(1, 2, 3));
    const Matrix h = q.entity_states(tape, r, eg, 3, 1).value();
    for (std::size_t v = 0; v < 4; ++v) {
        for (std::size_t c = 0; c < 3; ++c) CHECK(h(v, c) == (v == 3 ? 1.0 : 0.0));
    }
    CHECK_THROWS_AS(q.entity_states(tape, r, eg, 4, 1), DataError);

    Gcmp g(store.group("gcmp"), 3, 2, 0, 0, rng, {});
    g.projection().value = Matrix::from_rows({{1, 0, 0}, {0, 1, 0}});
    const auto [rel, ent] = g.encode(tape, rg, eg, tape.constant(Matrix::from_rows({{1, 2}, {3, 4}, {0, 0}, {5, 6}})));
    CHECK(rel.value() == Matrix(2, 3, 1.0));
    CHECK(ent.value()(3, 1) == 6.0);
    CHECK(ent.value()(3, 2) == 0.0);
    CHECK_THROWS_AS(g.encode(tape, rg, eg, tape.constant(Matrix(4, 3))), ShapeError);
}

TEST_CASE("cached global encoding gives the same scores") {
    Rng rng(6);
    const KnowledgeGraph kg = synthetic::random_kg(10, 3, 25, rng);
    ModelConfig cfg;
    cfg.dim = 8;
    cfg.text.dim = 4;
    cfg.text.hash_fallback = true;
    cfg.qcmp_relation_layers = cfg.qcmp_entity_layers = cfg.gcmp_relation_layers = cfg.gcmp_entity_layers = 2;
    const TextProvider text(cfg.text);
    Model model(cfg, text.dim());
    const PreparedGraph g = prepare_graph(kg, cfg, text);
    const CachedEncoding cache = model.cache_encoding(g);
    std::vector<std::size_t> cands(g.kg.num_entities());
    std::iota(cands.begin(), cands.end(), 0);
    for (std::size_t e = 0; e < 3; ++e) {
        CHECK(model.score_candidates(g, &cache, e, 1, cands) == model.score_candidates(g, nullptr, e, 1, cands));
    }
}
