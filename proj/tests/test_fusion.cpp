#include <doctest.h>

#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

#include "merry/edge_scorer.hpp"
#include "merry/error.hpp"
#include "merry/fusion.hpp"
#include "merry/model.hpp"
#include "merry/synthetic.hpp"
#include "support.hpp"

using namespace merry;
using merry::test::random_matrix;

TEST_CASE("a zeroed channel MLP outputs its output bias") {
    ParamStore store;
    Rng rng(1);
    ChannelFusion f(store.group("fusion"), 3, rng);
    const Mlp& m = f.relation_mlp();
    m.w1->value.fill(0.0);
    m.b1->value.fill(0.0);
    m.w2->value.fill(0.0);
    m.b2->value = Matrix::row({0.5, -1.0, 2.0});
    ad::Tape tape(false);
    const Matrix out =
        f.fuse_relations(tape, tape.constant(random_matrix(4, 3, rng)), tape.constant(random_matrix(4, 3, rng))).value();
    for (std::size_t r = 0; r < 4; ++r) CHECK(out.row_span(r)[2] == 2.0);
    CHECK_THROWS_AS(f.fuse_relations(tape, tape.constant(Matrix(4, 3)), tape.constant(Matrix(3, 3))), ShapeError);
}

TEST_CASE("token pooling") {
    ParamStore store;
    Rng rng(2);
    Dtaf d(store.group("dtaf"), 4, 5, 2, rng);
    ad::Tape tape(false);
    const Matrix tok = random_matrix(1, 5, rng);
    const Matrix projected = kernels::matmul(tok, d.projection().value);

    SUBCASE("one token pools to its projection") {
        CHECK(max_abs_diff(d.pool(tape, tape.constant(tok)).value(), projected) < 1e-12);
    }
    SUBCASE("repeating a token changes nothing") {
        const Matrix rep = Matrix::from_rows({{tok[0], tok[1], tok[2], tok[3], tok[4]},
                                              {tok[0], tok[1], tok[2], tok[3], tok[4]}});
        CHECK(max_abs_diff(d.pool(tape, tape.constant(rep)).value(), projected) < 1e-12);
    }
    SUBCASE("identical query slots pool identically") {
        const Matrix q = random_matrix(1, 4, rng);
        d.query_tokens().value = Matrix::from_rows({{q[0], q[1], q[2], q[3]}, {q[0], q[1], q[2], q[3]}});
        const Matrix many = random_matrix(6, 5, rng);
        const Matrix slots = d.pool_slots(tape, tape.constant(many)).value();
        const Matrix pooled = d.pool(tape, tape.constant(many)).value();
        for (std::size_t c = 0; c < 4; ++c) {
            CHECK(slots(0, c) == slots(1, c));
            CHECK(pooled(0, c) == doctest::Approx(slots(0, c)).epsilon(1e-14));
        }
    }
    SUBCASE("empty token matrices are rejected") {
        CHECK_THROWS_AS(d.pool(tape, tape.constant(Matrix(0, 5))), ShapeError);
    }
}

TEST_CASE("gates") {
    ParamStore store;
    Rng rng(3);
    Dtaf d(store.group("dtaf"), 2, 2, 1, rng);
    const Matrix text = Matrix::from_rows({{1, 2}, {3, 4}}), cmp = Matrix::from_rows({{-1, 0}, {5, 0}});
    auto blend = [&] {
        ad::Tape tape(false);
        return d.fuse(tape, tape.constant(text), tape.constant(text), tape.constant(cmp), tape.constant(cmp)).first.value();
    };
    // Initial gate logit 0 is the midpoint.
    CHECK(max_abs_diff(blend(), Matrix::from_rows({{0, 1}, {4, 2}})) < 1e-15);
    d.gate_relation().value(0, 0) = 30.0;
    CHECK(max_abs_diff(blend(), text) < 1e-12);
    d.gate_relation().value(0, 0) = -30.0;
    CHECK(max_abs_diff(blend(), cmp) < 1e-12);
}

TEST_CASE("attention decoder") {
    ParamStore store;
    Rng rng(4);
    const std::size_t dim = 4;
    Decoder dec(store.group("decoder"), dim, DecoderMode::attention, rng);
    dec.w_query().value = Matrix::identity(dim);
    dec.w_key().value = Matrix::identity(dim);
    const Matrix q = random_matrix(1, dim, rng);
    const Matrix cands = Matrix::from_rows({{q[0], q[1], q[2], q[3]}, {1, 0, 0, 0}, {q[0], q[1], q[2], q[3]}});
    ad::Tape tape(false);
    const Matrix s = dec.logits(tape, tape.constant(q), tape.constant(cands)).value();
    double sq = 0.0;
    for (std::size_t i = 0; i < dim; ++i) sq += q[i] * q[i];
    CHECK(s(0, 0) == doctest::Approx(sq / 2.0).epsilon(1e-14));  // ‖q‖²/√4
    CHECK(s(1, 0) == doctest::Approx(q[0] / 2.0).epsilon(1e-14));
    CHECK(s(0, 0) == s(2, 0));

    // Reordering the candidates reorders the logits.
    dec.w_query().value = random_matrix(dim, dim, rng);
    dec.w_key().value = random_matrix(dim, dim, rng);
    const Matrix c = random_matrix(5, dim, rng);
    const std::vector<std::size_t> order{3, 0, 4, 1, 2};
    const Matrix a = dec.logits(tape, tape.constant(q), tape.constant(c)).value();
    const Matrix b = dec.logits(tape, tape.constant(q), tape.constant(kernels::gather_rows(c, order))).value();
    for (std::size_t i = 0; i < order.size(); ++i) CHECK(b(i, 0) == a(order[i], 0));

    CHECK_THROWS_AS(dec.logits(tape, tape.constant(q), tape.constant(Matrix(0, dim))), ShapeError);
    CHECK_THROWS_AS(dec.logits(tape, tape.constant(Matrix(1, 3)), tape.constant(c)), ShapeError);
    CHECK_THROWS_AS(parse_decoder_mode("dot"), UsageError);
}

TEST_CASE("edge scorer degenerate cases") {
    ParamStore store;
    Rng rng(5);
    const std::size_t t = 3;
    EdgeScorer es(store.group("edge_scorer"), t, rng);
    const std::vector<double> h{1, 0, 0}, r{0, 1, 0}, tail{0, 0, 1}, q{0.3, -0.2, 0.9}, zero(3, 0.0);

    SUBCASE("equal bilinear forms") {
        es.w_irrelevant().value = es.w_relevant().value;
        const auto [rel, irr] = es.score_edge(h, r, tail, q);
        CHECK(rel == doctest::Approx(0.5).epsilon(1e-15));
        CHECK(irr == doctest::Approx(0.5).epsilon(1e-15));
    }
    SUBCASE("zero query") {
        const auto [rel, irr] = es.score_edge(h, r, tail, zero);
        CHECK(rel == 0.5);
        CHECK(irr == 0.5);
    }
    SUBCASE("batched scores match single edges, duplicates agree") {
        ad::Tape tape(false);
        Matrix rows(3, 3 * t);
        for (std::size_t e = 0; e < 3; ++e) {
            const auto& x = e == 1 ? tail : h;
            for (std::size_t j = 0; j < t; ++j) {
                rows(e, j) = x[j];
                rows(e, t + j) = r[j];
                rows(e, 2 * t + j) = tail[j];
            }
        }
        const Matrix s = es.score(tape, tape.constant(rows), tape.constant(Matrix(1, t, q))).value();
        CHECK(s(0, 0) == s(2, 0));
        CHECK(s(0, 0) == doctest::Approx(es.score_edge(h, r, tail, q).first).epsilon(1e-14));
        const Matrix none = es.score(tape, tape.constant(Matrix(0, 3 * t)), tape.constant(Matrix(1, t, q))).value();
        CHECK(none.rows() == 0);
    }
}

TEST_CASE("completion uses all-ones edge weights") {
    Rng rng(6);
    const KnowledgeGraph kg = synthetic::random_kg(8, 2, 16, rng);
    ModelConfig cfg;
    cfg.dim = 8;
    cfg.text.dim = 4;
    cfg.text.hash_fallback = true;
    cfg.qcmp_relation_layers = cfg.qcmp_entity_layers = cfg.gcmp_relation_layers = cfg.gcmp_entity_layers = 1;
    const TextProvider text(cfg.text);
    Model model(cfg, text.dim());
    const PreparedGraph g = prepare_graph(kg, cfg, text);
    std::vector<std::size_t> cands(g.kg.num_entities());
    std::iota(cands.begin(), cands.end(), 0);
    const auto plain = model.score_candidates(g, nullptr, 0, 0, cands);

    ad::Tape tape(false);
    ad::Var ones = tape.constant(Matrix(g.kg.triples.size(), 1, 1.0));
    const GraphEncoding enc = model.encode_graph(tape, g, ones);
    const Matrix explicit_ones =
        model.query_logits(tape, g, enc, model.relation_states(tape, g, 0), 0, 0, cands, ones).value();
    for (std::size_t i = 0; i < cands.size(); ++i) CHECK(explicit_ones(i, 0) == doctest::Approx(plain[i]).epsilon(1e-13));
}

TEST_CASE("model config JSON is strict") {
    ModelConfig c;
    c.dim = 12;
    c.decoder = DecoderMode::mlp;
    c.text.kind = ProviderKind::last_token;
    const ModelConfig back = ModelConfig::from_json(c.to_json());
    CHECK(back.to_json() == c.to_json());
    CHECK(ModelConfig::from_json(nlohmann::json::object()).dim == ModelConfig{}.dim);
    CHECK_THROWS_AS(ModelConfig::from_json({{"dimension", 3}}), UsageError);
    CHECK_THROWS_AS(ModelConfig::from_json({{"dim", "three"}}), UsageError);
    CHECK_THROWS_AS(ModelConfig::from_json({{"dim", 0}}), UsageError);
    CHECK_THROWS_AS(ModelConfig::from_json({{"text", {{"provider", "bert"}}}}), UsageError);
}
