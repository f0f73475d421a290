#include "merry/edge_scorer.hpp"

#include <cmath>

#include "merry/error.hpp"

namespace merry {

EdgeScorer::EdgeScorer(ParamGroup& group, std::size_t text_dim, Rng& rng) : text_dim_(text_dim) {
    w_rel_ = &group.add("w_relevant", init_uniform_fan_in(3 * text_dim, 3 * text_dim, text_dim, rng));
    w_irrel_ = &group.add("w_irrelevant", init_uniform_fan_in(3 * text_dim, 3 * text_dim, text_dim, rng));
}

ad::Var EdgeScorer::score(ad::Tape& tape, ad::Var edge_text, ad::Var query) const {
    if (edge_text.cols() != 3 * text_dim_ || query.rows() != 1 || query.cols() != text_dim_) {
        throw ShapeError("score_edge: shape mismatch " + edge_text.value().shape_str() + " vs " +
                         query.value().shape_str() + " for text dimension " + std::to_string(text_dim_));
    }
    ad::Var u_rel = ad::matmul_a_bt(tape.param(*w_rel_), query);      // 3t×1
    ad::Var u_irrel = ad::matmul_a_bt(tape.param(*w_irrel_), query);  // 3t×1
    ad::Var z = ad::concat_cols(ad::matmul(edge_text, u_rel), ad::matmul(edge_text, u_irrel));
    return ad::select_col(ad::softmax_rows(z), 0);
}

std::pair<double, double> EdgeScorer::score_edge(std::span<const double> x_h, std::span<const double> x_r,
                                                 std::span<const double> x_t, std::span<const double> x_q) const {
    const std::size_t t = text_dim_;
    if (x_h.size() != t || x_r.size() != t || x_t.size() != t || x_q.size() != t) {
        throw ShapeError("score_edge: feature dimension mismatch, expected " + std::to_string(t));
    }
    double z[2] = {0.0, 0.0};
    const Matrix* ws[2] = {&w_rel_->value, &w_irrel_->value};
    for (int k = 0; k < 2; ++k) {
        for (std::size_t i = 0; i < 3 * t; ++i) {
            const double xi = i < t ? x_h[i] : (i < 2 * t ? x_r[i - t] : x_t[i - 2 * t]);
            double acc = 0.0;
            for (std::size_t j = 0; j < t; ++j) acc += (*ws[k])(i, j) * x_q[j];
            z[k] += xi * acc;
        }
    }
    const double m = std::max(z[0], z[1]);
    const double e0 = std::exp(z[0] - m), e1 = std::exp(z[1] - m);
    return {e0 / (e0 + e1), e1 / (e0 + e1)};
}

}  // namespace merry
