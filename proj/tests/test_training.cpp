#include <doctest.h>

#include <cmath>
#include <set>

#include "merry/error.hpp"
#include "merry/synthetic.hpp"
#include "merry/trainer.hpp"

using namespace merry;

TEST_CASE("binary cross-entropy values") {
    const std::vector<double> neg{0.2};
    CHECK(bce_loss(0.9, neg) == doctest::Approx(0.3285).epsilon(1e-4));
    const std::vector<double> half{0.5};
    CHECK(bce_loss(0.5, half) == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-12));
    const std::vector<double> none{0.0, 0.0};
    CHECK(bce_loss(1.0, none) < 1e-10);
    // Clamping keeps the worst case finite.
    CHECK(std::isfinite(bce_loss(0.0, std::vector<double>{1.0})));
}

TEST_CASE("negative sampling avoids known tails") {
    Rng rng(1);
    const Triple pos{0, 0, 3};
    const auto negs = sample_negatives(6, pos, {1, 3}, 200, rng);
    CHECK(negs.size() == 200);
    const std::set<std::size_t> seen(negs.begin(), negs.end());
    CHECK(seen == std::set<std::size_t>{0, 2, 4, 5});

    // Everything is known: fall back to anything but the tail.
    const auto fallback = sample_negatives(3, pos, {0, 1, 2}, 50, rng);
    for (std::size_t e : fallback) CHECK(e != 3);
    CHECK_THROWS_AS(sample_negatives(1, Triple{0, 0, 0}, {}, 1, rng), DataError);
}

TEST_CASE("true tails include inverses") {
    TrueTails t;
    const std::vector<Triple> tr{{0, 0, 1}, {0, 0, 2}, {2, 1, 0}};
    t.add_all(tr, 2);
    CHECK(t.tails(0, 0) == std::vector<std::size_t>{1, 2});
    CHECK(t.tails(1, 2) == std::vector<std::size_t>{0});
    CHECK(t.tails(5, 5).empty());
}

namespace {

struct Fixture {
    ModelConfig mc;
    TextProvider text;
    std::vector<TrainGraph> graphs;
    TrainConfig tc;

    Fixture() : text(make_text()) {
        mc.dim = 8;
        mc.text.dim = 4;
        mc.text.hash_fallback = true;
        mc.qcmp_relation_layers = mc.qcmp_entity_layers = mc.gcmp_relation_layers = mc.gcmp_entity_layers = 1;
        mc.seed = 3;
        Rng rng(4);
        TrainGraph g;
        g.name = "toy";
        g.graph = synthetic::random_kg(10, 3, 24, rng);
        g.train = g.graph.triples;
        graphs.push_back(std::move(g));
        tc.model = mc;
        tc.negatives = 4;
        tc.batch_size = 8;
        tc.seed = 5;
        tc.eval_every = 0;
        tc.stages = {StageConfig{"only", 2, {}, 1e-2}};
    }
    static TextProvider make_text() {
        TextConfig c;
        c.dim = 4;
        c.hash_fallback = true;
        return TextProvider(c);
    }
};

std::vector<Matrix> snapshot(const Model& m) {
    std::vector<Matrix> out;
    for (const auto& g : m.params().groups()) {
        for (const auto& p : g->params()) out.push_back(p->value);
    }
    return out;
}

}  // namespace

TEST_CASE("a fully frozen stage changes nothing") {
    Fixture f;
    f.tc.stages = {StageConfig{"frozen", 2, kParamGroups, 1e-2}};
    Model model(f.mc, f.text.dim());
    const auto before = snapshot(model);
    train(model, f.text, f.tc, f.graphs);
    CHECK(snapshot(model) == before);
}

TEST_CASE("training is reproducible") {
    Fixture f;
    Model a(f.mc, f.text.dim()), b(f.mc, f.text.dim());
    const TrainStats sa = train(a, f.text, f.tc, f.graphs);
    const TrainStats sb = train(b, f.text, f.tc, f.graphs);
    REQUIRE(sa.epochs.size() == 2);
    for (std::size_t i = 0; i < sa.epochs.size(); ++i) CHECK(sa.epochs[i].loss == sb.epochs[i].loss);
    CHECK(snapshot(a) == snapshot(b));
    CHECK(snapshot(a) != snapshot(Model(f.mc, f.text.dim())));
}

TEST_CASE("train config JSON is strict") {
    TrainConfig c;
    c.stages = TrainConfig::default_stages(3);
    CHECK(c.stages.size() == 3);
    const TrainConfig back = TrainConfig::from_json(c.to_json());
    CHECK(back.to_json() == c.to_json());
    CHECK_THROWS_AS(TrainConfig::from_json({{"epochs", 3}}), UsageError);
    CHECK_THROWS_AS(TrainConfig::from_json({{"negatives", -1}}), UsageError);
}
