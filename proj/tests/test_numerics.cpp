#include <doctest.h>

#include <cmath>
#include <numeric>
#include <vector>

#include "merry/autodiff.hpp"
#include "merry/error.hpp"
#include "merry/kernels.hpp"
#include "merry/params.hpp"
#include "support.hpp"

using namespace merry;
using merry::test::fd_max_rel_error;
using merry::test::random_matrix;

namespace {

kernels::EdgeList random_edges(std::size_t nodes, std::size_t rels, std::size_t edges, Rng& rng) {
    std::vector<std::size_t> s, r, d;
    for (std::size_t i = 0; i < edges; ++i) {
        s.push_back(rng.below(nodes));
        r.push_back(rng.below(rels));
        d.push_back(rng.below(nodes));
    }
    return kernels::make_edge_list(s, r, d, nodes, rels);
}

}  // namespace

TEST_CASE("serial and omp kernels agree bit for bit") {
    Rng rng(3);
    const Matrix a = random_matrix(37, 19, rng), b = random_matrix(19, 23, rng), c = random_matrix(37, 23, rng);
    CHECK(kernels::serial::matmul(a, b) == kernels::omp::matmul(a, b));
    CHECK(kernels::serial::matmul_at_b(a, c) == kernels::omp::matmul_at_b(a, c));
    CHECK(kernels::serial::matmul_a_bt(c, c) == kernels::omp::matmul_a_bt(c, c));

    const auto g = random_edges(40, 5, 300, rng);
    const Matrix h = random_matrix(40, 8, rng), rel = random_matrix(5, 8, rng);
    std::vector<double> scores(g.size());
    for (auto& s : scores) s = rng.uniform01();
    CHECK(kernels::serial::message_aggregate(h, rel, g, scores) == kernels::omp::message_aggregate(h, rel, g, scores));
    CHECK(kernels::serial::message_aggregate(h, rel, g, {}) == kernels::omp::message_aggregate(h, rel, g, {}));

    std::vector<std::size_t> idx(300);
    for (auto& i : idx) i = rng.below(40);
    const Matrix src = random_matrix(300, 6, rng);
    CHECK(kernels::serial::scatter_sum(src, idx, 40) == kernels::omp::scatter_sum(src, idx, 40));
    CHECK(kernels::serial::gather_rows(h, idx) == kernels::omp::gather_rows(h, idx));

    std::vector<double> gamma(8, 1.3), beta(8, -0.2);
    CHECK(kernels::serial::layer_norm(h, gamma, beta, 1e-5, nullptr, nullptr) ==
          kernels::omp::layer_norm(h, gamma, beta, 1e-5, nullptr, nullptr));
    CHECK(kernels::serial::softmax_rows(h) == kernels::omp::softmax_rows(h));
}

TEST_CASE("scatter_sum matches a naive loop") {
    Rng rng(5);
    std::vector<std::size_t> idx(50);
    for (auto& i : idx) i = rng.below(7);
    const Matrix src = random_matrix(50, 3, rng);
    Matrix expect(7, 3);
    for (std::size_t e = 0; e < idx.size(); ++e) {
        for (std::size_t c = 0; c < 3; ++c) expect(idx[e], c) += src(e, c);
    }
    CHECK(max_abs_diff(kernels::scatter_sum(src, idx, 7), expect) < 1e-12);
}

TEST_CASE("message aggregation on one edge is the DistMult product") {
    const auto g = kernels::make_edge_list({0}, {0}, {1}, 2, 1);
    const Matrix h = Matrix::from_rows({{1, 2}, {0, 0}});
    const Matrix r = Matrix::row({3, 4});
    const std::vector<double> one{1.0}, zero{0.0};
    const Matrix agg = kernels::message_aggregate(h, r, g, one);
    CHECK(agg(1, 0) == 3.0);
    CHECK(agg(1, 1) == 8.0);
    CHECK(agg(0, 0) == 0.0);
    const Matrix off = kernels::message_aggregate(h, r, g, zero);
    CHECK(off(1, 0) == 0.0);
    CHECK(off(1, 1) == 0.0);
    CHECK_THROWS_AS(kernels::message_aggregate(h, r, g, std::vector<double>{1.0, 1.0}), ShapeError);
}

TEST_CASE("softmax and layer norm boundary values") {
    for (double z : {-50.0, 0.0, 3.7, 700.0}) {
        const Matrix p = kernels::softmax_rows(Matrix::row({z, z}));
        CHECK(p[0] == doctest::Approx(0.5).epsilon(1e-15));
        CHECK(p[1] == doctest::Approx(0.5).epsilon(1e-15));
    }
    std::vector<double> gamma(4, 1.0), beta(4, 0.0);
    const Matrix y = kernels::layer_norm(Matrix(1, 4, 2.5), gamma, beta, 1e-5, nullptr, nullptr);
    for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(y[i]) < 1e-6);
}

TEST_CASE("matmul validates shapes") {
    CHECK_THROWS_AS(kernels::matmul(Matrix(2, 3), Matrix(2, 3)), ShapeError);
}

TEST_CASE("autodiff: analytic gradient of sum(x*x)") {
    ParamStore store;
    Parameter& x = store.group("g").add("x", Matrix::row({1, 2}));
    ad::Tape tape;
    ad::Var v = tape.param(x);
    tape.backward(ad::sum_all(ad::mul(v, v)));
    CHECK(x.grad[0] == 2.0);
    CHECK(x.grad[1] == 4.0);
}

TEST_CASE("autodiff: every op against central differences") {
    Rng rng(11);
    ParamStore store;
    auto& grp = store.group("ops");
    Parameter& a = grp.add("a", random_matrix(4, 3, rng));
    Parameter& b = grp.add("b", random_matrix(4, 3, rng));
    Parameter& w = grp.add("w", random_matrix(3, 5, rng));
    Parameter& row = grp.add("row", random_matrix(1, 3, rng));
    Parameter& s = grp.add("s", Matrix(1, 1, 0.7));
    Parameter& col = grp.add("col", random_matrix(4, 1, rng));
    Parameter& gamma = grp.add("gamma", random_matrix(1, 3, rng, 0.5, 1.5));
    Parameter& beta = grp.add("beta", random_matrix(1, 3, rng));
    Parameter& h = grp.add("h", random_matrix(6, 3, rng));
    Parameter& rel = grp.add("rel", random_matrix(2, 3, rng));
    Parameter& sc = grp.add("scores", random_matrix(9, 1, rng, 0.1, 0.9));
    const Matrix weight = random_matrix(4, 3, rng);
    const auto graph = random_edges(6, 2, 9, rng);

    auto project = [&](ad::Tape& t, ad::Var v) {
        // Random linear functional → scalar, so no gradient is symmetric by accident.
        Rng wr(v.rows() * 31 + v.cols());
        return ad::sum_all(ad::mul(v, t.constant(random_matrix(v.rows(), v.cols(), wr))));
    };
    const std::vector<std::pair<const char*, std::function<ad::Var(ad::Tape&)>>> cases = {
        {"add", [&](ad::Tape& t) { return project(t, ad::add(t.param(a), t.param(b))); }},
        {"sub", [&](ad::Tape& t) { return project(t, ad::sub(t.param(a), t.param(b))); }},
        {"mul", [&](ad::Tape& t) { return project(t, ad::mul(t.param(a), t.param(b))); }},
        {"scale", [&](ad::Tape& t) { return project(t, ad::scale(t.param(a), -1.7)); }},
        {"add_row", [&](ad::Tape& t) { return project(t, ad::add_row(t.param(a), t.param(row))); }},
        {"mul_scalar", [&](ad::Tape& t) { return project(t, ad::mul_scalar(t.param(a), t.param(s))); }},
        {"mul_col", [&](ad::Tape& t) { return project(t, ad::mul_col(t.param(a), t.param(col))); }},
        {"one_minus", [&](ad::Tape& t) { return project(t, ad::one_minus(t.param(a))); }},
        {"matmul", [&](ad::Tape& t) { return project(t, ad::matmul(t.param(a), t.param(w))); }},
        {"matmul_a_bt", [&](ad::Tape& t) { return project(t, ad::matmul_a_bt(t.param(a), t.param(b))); }},
        {"concat_cols", [&](ad::Tape& t) { return project(t, ad::concat_cols(t.param(a), t.param(b))); }},
        {"concat_rows",
         [&](ad::Tape& t) {
             const std::vector<ad::Var> parts{t.param(a), t.param(row), t.param(b)};
             return project(t, ad::concat_rows(parts));
         }},
        {"gather_rows", [&](ad::Tape& t) { return project(t, ad::gather_rows(t.param(a), {3, 0, 3, 1})); }},
        {"scatter_sum", [&](ad::Tape& t) { return project(t, ad::scatter_sum(t.param(a), {2, 0, 2, 1}, 3)); }},
        {"select_col", [&](ad::Tape& t) { return project(t, ad::select_col(t.param(a), 1)); }},
        {"mean_rows", [&](ad::Tape& t) { return project(t, ad::mean_rows(t.param(a))); }},
        {"relu", [&](ad::Tape& t) { return project(t, ad::relu(ad::add(t.param(a), t.constant(Matrix(4, 3, 0.05))))); }},
        {"sigmoid", [&](ad::Tape& t) { return project(t, ad::sigmoid(t.param(a))); }},
        {"softmax_rows", [&](ad::Tape& t) { return project(t, ad::softmax_rows(t.param(a))); }},
        {"layer_norm",
         [&](ad::Tape& t) { return project(t, ad::layer_norm(t.param(a), t.param(gamma), t.param(beta))); }},
        {"message_aggregate",
         [&](ad::Tape& t) {
             return project(t, ad::message_aggregate(t.param(h), t.param(rel), graph, t.param(sc)));
         }},
        {"bce_from_logits",
         [&](ad::Tape& t) {
             const std::vector<std::size_t> negs{0, 2, 5};
             return ad::bce_from_logits(ad::mul(t.param(a), t.constant(weight)), 7, negs);
         }},
    };
    for (const auto& [name, fn] : cases) {
        CAPTURE(name);
        CHECK(fd_max_rel_error(store, fn) <= 1e-6);
    }
}

TEST_CASE("autodiff: misuse is reported") {
    ParamStore store;
    Parameter& x = store.group("g").add("x", Matrix::row({1, 2}));
    ad::Tape tape;
    ad::Var v = tape.param(x);
    CHECK_THROWS_AS(tape.backward(v), ShapeError);  // not 1×1
    ad::Var l = ad::sum_all(v);
    tape.backward(l);
    CHECK_THROWS_AS(tape.backward(l), UsageError);
    ad::Tape other;
    CHECK_THROWS_AS(ad::add(other.constant(Matrix(1, 2)), other.constant(Matrix(2, 1))), ShapeError);
}

TEST_CASE("frozen groups receive no gradient") {
    ParamStore store;
    Parameter& live = store.group("live").add("x", Matrix::row({1, 2}));
    Parameter& cold = store.group("cold").add("y", Matrix::row({3, 4}));
    store.set_frozen_groups({"cold"});
    store.zero_grad();
    ad::Tape tape;
    tape.backward(ad::sum_all(ad::mul(tape.param(live), tape.param(cold))));
    CHECK(live.grad[0] == 3.0);
    CHECK(cold.grad[0] == 0.0);
    CHECK(cold.grad[1] == 0.0);
    CHECK_THROWS_AS(store.set_frozen_groups({"nope"}), UsageError);
}

TEST_CASE("adam: first step, zero gradient, frozen group") {
    ParamStore store;
    Parameter& p = store.group("a").add("p", Matrix::row({1.0, -2.0}));
    Parameter& q = store.group("b").add("q", Matrix::row({5.0}));
    AdamConfig cfg;
    cfg.lr = 0.1;
    p.grad = Matrix::row({1.0, 0.0});
    q.grad = Matrix::row({1.0});
    store.find_group("b")->set_frozen(true);
    adam_step(store, cfg);
    // Bias-corrected first step moves by lr·g/(|g| + eps).
    CHECK(p.value[0] == doctest::Approx(1.0 - 0.1).epsilon(1e-7));
    CHECK(p.value[1] == -2.0);
    CHECK(q.value[0] == 5.0);
    CHECK(q.adam_steps == 0);
}

TEST_CASE("checkpoint round trip is bit exact") {
    test::TempDir dir("ckpt");
    Rng rng(9);
    ParamStore a;
    a.group("g1").add("w", random_matrix(3, 4, rng));
    a.group("g2").add("v", random_matrix(1, 7, rng, -1e-300, 1e300));
    CheckpointMeta meta;
    meta.seed = 42;
    meta.stage = 2;
    meta.model = {{"dim", 4}};
    save_checkpoint(dir.path / "c", a, meta);

    ParamStore b;
    b.group("g1").add("w", Matrix(3, 4));
    b.group("g2").add("v", Matrix(1, 7));
    const CheckpointMeta back = load_checkpoint(dir.path / "c", b);
    CHECK(back.seed == 42);
    CHECK(back.stage == 2);
    CHECK(back.model == meta.model);
    CHECK(b.find("g1.w")->value == a.find("g1.w")->value);
    CHECK(b.find("g2.v")->value == a.find("g2.v")->value);

    ParamStore wrong;
    wrong.group("g1").add("w", Matrix(4, 3));
    wrong.group("g2").add("v", Matrix(1, 7));
    CHECK_THROWS(load_checkpoint(dir.path / "c", wrong));
}
