#include <doctest.h>

#include <vector>

#include "merry/error.hpp"
#include "merry/eval.hpp"
#include "merry/random.hpp"

using namespace merry;

TEST_CASE("filtered rank with the mid-tie rule") {
    const std::vector<double> s{0.1, 0.5, 0.5, 0.9};
    CHECK(rank_query(s, 1, {}).rank == 2);  // one better, one tie → 1 + 1 + 0
    CHECK(rank_query(s, 3, {}).rank == 1);
    CHECK(rank_query(s, 0, {}).rank == 4);
    const std::vector<double> flat(5, 0.3);
    CHECK(rank_query(flat, 2, {}).rank == 3);  // 4 ties → 1 + 2

    const std::vector<std::size_t> filter{3};
    const RankResult r = rank_query(s, 1, filter);
    CHECK(r.rank == 1);
    CHECK(r.candidates == 3);
    const std::vector<std::size_t> bad{1};
    CHECK_THROWS_AS(rank_query(s, 1, bad), DataError);
    CHECK_THROWS_AS(rank_query(s, 9, {}), DataError);
}

TEST_CASE("mrr and hits") {
    const std::vector<std::size_t> ranks{1, 2, 4};
    CHECK(mrr(ranks) == doctest::Approx(7.0 / 12.0).epsilon(1e-15));
    const std::vector<std::size_t> edge{10, 11};
    CHECK(hits_at(edge, 10) == 0.5);
    CHECK(mrr(std::vector<std::size_t>{}) == 0.0);
}

TEST_CASE("random scores give MRR near H_n / n") {
    const std::size_t n = 20, trials = 20000;
    Rng rng(17);
    std::vector<std::size_t> ranks;
    std::vector<double> s(n);
    for (std::size_t t = 0; t < trials; ++t) {
        for (auto& x : s) x = rng.uniform01();
        ranks.push_back(rank_query(s, rng.below(n), {}).rank);
    }
    double h = 0.0;
    for (std::size_t k = 1; k <= n; ++k) h += 1.0 / static_cast<double>(k);
    CHECK(mrr(ranks) == doctest::Approx(h / n).epsilon(0.03));
}
