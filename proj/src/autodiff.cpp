#include "merry/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "merry/error.hpp"

namespace merry::ad {

namespace {

Tape& tape_of(Var a) {
    if (!a.valid()) throw UsageError("operation on a Var that was never recorded");
    return *a.tape();
}

Tape& tape_of(Var a, Var b) {
    Tape& t = tape_of(a);
    if (&tape_of(b) != &t) throw UsageError("operation mixes Vars from different tapes");
    return t;
}

void same_shape(Var a, Var b, const char* op) { require_same_shape(a.value(), b.value(), op); }

Matrix add_m(const Matrix& a, const Matrix& b) {
    Matrix c = a;
    for (std::size_t i = 0; i < c.size(); ++i) c[i] += b[i];
    return c;
}

}  // namespace

const Matrix& Var::value() const {
    if (!tape_) throw UsageError("value of a Var that was never recorded");
    return tape_->value(id_);
}

bool Var::requires_grad() const { return tape_ != nullptr && tape_->requires_grad(id_); }

Var Tape::constant(Matrix value) {
    if (!value.all_finite()) throw NumericError("non-finite constant " + value.shape_str());
    nodes_.push_back(Node{std::move(value), {}, {}, nullptr, false});
    return Var(this, nodes_.size() - 1);
}

Var Tape::param(Parameter& p) {
    const bool trainable = grad_enabled_ && !p.frozen();
    nodes_.push_back(Node{p.value, {}, {}, trainable ? &p : nullptr, trainable});
    return Var(this, nodes_.size() - 1);
}

Var Tape::record(Matrix value, bool requires_grad, Backward back, const char* op) {
    if (!value.all_finite()) throw NumericError(std::string("non-finite output in ") + op + " " + value.shape_str());
    nodes_.push_back(Node{std::move(value), {}, requires_grad ? std::move(back) : Backward{}, nullptr, requires_grad});
    return Var(this, nodes_.size() - 1);
}

void Tape::accumulate(Var v, const Matrix& grad) {
    Node& n = nodes_[v.id()];
    if (!n.requires_grad) return;
    require_same_shape(n.value, grad, "gradient accumulation");
    if (n.grad.empty() && !n.value.empty()) {
        n.grad = grad;
    } else {
        for (std::size_t i = 0; i < grad.size(); ++i) n.grad[i] += grad[i];
    }
}

const Matrix& Tape::grad(Var v) const { return nodes_[v.id()].grad; }

void Tape::backward(Var loss) {
    if (!loss.valid() || loss.tape() != this || nodes_.empty()) {
        throw UsageError("backward called without a recorded forward pass");
    }
    if (consumed_) throw UsageError("backward called twice on the same tape");
    if (loss.rows() != 1 || loss.cols() != 1) throw ShapeError("backward needs a 1x1 loss, got " + loss.value().shape_str());
    consumed_ = true;
    if (!nodes_[loss.id()].requires_grad) return;
    nodes_[loss.id()].grad = Matrix(1, 1, 1.0);
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (n.grad.empty()) continue;
        if (n.back) n.back(n.grad);
        if (n.param) {
            for (std::size_t k = 0; k < n.grad.size(); ++k) n.param->grad[k] += n.grad[k];
        }
    }
}

Var add(Var a, Var b) {
    Tape& t = tape_of(a, b);
    same_shape(a, b, "add");
    return t.record(add_m(a.value(), b.value()), a.requires_grad() || b.requires_grad(),
                    [&t, a, b](const Matrix& g) {
                        t.accumulate(a, g);
                        t.accumulate(b, g);
                    },
                    "add");
}

Var sub(Var a, Var b) {
    Tape& t = tape_of(a, b);
    same_shape(a, b, "sub");
    Matrix c = a.value();
    for (std::size_t i = 0; i < c.size(); ++i) c[i] -= b.value()[i];
    return t.record(std::move(c), a.requires_grad() || b.requires_grad(),
                    [&t, a, b](const Matrix& g) {
                        t.accumulate(a, g);
                        if (b.requires_grad()) {
                            Matrix n = g;
                            for (std::size_t i = 0; i < n.size(); ++i) n[i] = -n[i];
                            t.accumulate(b, n);
                        }
                    },
                    "sub");
}

Var mul(Var a, Var b) {
    Tape& t = tape_of(a, b);
    same_shape(a, b, "mul");
    Matrix c = a.value();
    for (std::size_t i = 0; i < c.size(); ++i) c[i] *= b.value()[i];
    return t.record(std::move(c), a.requires_grad() || b.requires_grad(),
                    [&t, a, b](const Matrix& g) {
                        if (a.requires_grad()) {
                            Matrix ga = g;
                            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] *= b.value()[i];
                            t.accumulate(a, ga);
                        }
                        if (b.requires_grad()) {
                            Matrix gb = g;
                            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] *= a.value()[i];
                            t.accumulate(b, gb);
                        }
                    },
                    "mul");
}

Var scale(Var a, double c) {
    Tape& t = tape_of(a);
    Matrix out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= c;
    return t.record(std::move(out), a.requires_grad(),
                    [&t, a, c](const Matrix& g) {
                        Matrix ga = g;
                        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] *= c;
                        t.accumulate(a, ga);
                    },
                    "scale");
}

Var add_row(Var a, Var row) {
    Tape& t = tape_of(a, row);
    if (row.rows() != 1 || row.cols() != a.cols()) {
        throw ShapeError("add_row: shape mismatch " + a.value().shape_str() + " vs " + row.value().shape_str());
    }
    Matrix out = a.value();
    const std::size_t n = a.cols();
    for (std::size_t r = 0; r < out.rows(); ++r) {
        for (std::size_t j = 0; j < n; ++j) out(r, j) += row.value()(0, j);
    }
    return t.record(std::move(out), a.requires_grad() || row.requires_grad(),
                    [&t, a, row, n](const Matrix& g) {
                        t.accumulate(a, g);
                        if (row.requires_grad()) {
                            Matrix gr(1, n);
                            for (std::size_t r = 0; r < g.rows(); ++r) {
                                for (std::size_t j = 0; j < n; ++j) gr(0, j) += g(r, j);
                            }
                            t.accumulate(row, gr);
                        }
                    },
                    "add_row");
}

Var mul_scalar(Var a, Var s) {
    Tape& t = tape_of(a, s);
    if (s.rows() != 1 || s.cols() != 1) {
        throw ShapeError("mul_scalar: shape mismatch " + a.value().shape_str() + " vs " + s.value().shape_str());
    }
    const double sv = s.value()[0];
    Matrix out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= sv;
    return t.record(std::move(out), a.requires_grad() || s.requires_grad(),
                    [&t, a, s, sv](const Matrix& g) {
                        if (a.requires_grad()) {
                            Matrix ga = g;
                            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] *= sv;
                            t.accumulate(a, ga);
                        }
                        if (s.requires_grad()) {
                            double acc = 0.0;
                            for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * a.value()[i];
                            t.accumulate(s, Matrix(1, 1, acc));
                        }
                    },
                    "mul_scalar");
}

Var mul_col(Var a, Var col) {
    Tape& t = tape_of(a, col);
    if (col.cols() != 1 || col.rows() != a.rows()) {
        throw ShapeError("mul_col: shape mismatch " + a.value().shape_str() + " vs " + col.value().shape_str());
    }
    Matrix out = a.value();
    for (std::size_t r = 0; r < out.rows(); ++r) {
        for (std::size_t j = 0; j < out.cols(); ++j) out(r, j) *= col.value()[r];
    }
    return t.record(std::move(out), a.requires_grad() || col.requires_grad(),
                    [&t, a, col](const Matrix& g) {
                        if (a.requires_grad()) {
                            Matrix ga = g;
                            for (std::size_t r = 0; r < ga.rows(); ++r) {
                                for (std::size_t j = 0; j < ga.cols(); ++j) ga(r, j) *= col.value()[r];
                            }
                            t.accumulate(a, ga);
                        }
                        if (col.requires_grad()) {
                            Matrix gc(g.rows(), 1);
                            for (std::size_t r = 0; r < g.rows(); ++r) {
                                for (std::size_t j = 0; j < g.cols(); ++j) gc[r] += g(r, j) * a.value()(r, j);
                            }
                            t.accumulate(col, gc);
                        }
                    },
                    "mul_col");
}

Var one_minus(Var a) {
    Tape& t = tape_of(a);
    Matrix out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 - out[i];
    return t.record(std::move(out), a.requires_grad(),
                    [&t, a](const Matrix& g) {
                        Matrix ga = g;
                        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] = -ga[i];
                        t.accumulate(a, ga);
                    },
                    "one_minus");
}

Var matmul(Var a, Var b) {
    Tape& t = tape_of(a, b);
    return t.record(kernels::matmul(a.value(), b.value()), a.requires_grad() || b.requires_grad(),
                    [&t, a, b](const Matrix& g) {
                        if (a.requires_grad()) t.accumulate(a, kernels::matmul_a_bt(g, b.value()));
                        if (b.requires_grad()) t.accumulate(b, kernels::matmul_at_b(a.value(), g));
                    },
                    "matmul");
}

Var matmul_a_bt(Var a, Var b) {
    Tape& t = tape_of(a, b);
    return t.record(kernels::matmul_a_bt(a.value(), b.value()), a.requires_grad() || b.requires_grad(),
                    [&t, a, b](const Matrix& g) {
                        if (a.requires_grad()) t.accumulate(a, kernels::matmul(g, b.value()));
                        if (b.requires_grad()) t.accumulate(b, kernels::matmul_at_b(g, a.value()));
                    },
                    "matmul_a_bt");
}

Var concat_cols(Var a, Var b) {
    Tape& t = tape_of(a, b);
    if (a.rows() != b.rows()) {
        throw ShapeError("concat_cols: shape mismatch " + a.value().shape_str() + " vs " + b.value().shape_str());
    }
    const std::size_t ca = a.cols(), cb = b.cols();
    Matrix out(a.rows(), ca + cb);
    for (std::size_t r = 0; r < out.rows(); ++r) {
        for (std::size_t j = 0; j < ca; ++j) out(r, j) = a.value()(r, j);
        for (std::size_t j = 0; j < cb; ++j) out(r, ca + j) = b.value()(r, j);
    }
    return t.record(std::move(out), a.requires_grad() || b.requires_grad(),
                    [&t, a, b, ca, cb](const Matrix& g) {
                        if (a.requires_grad()) {
                            Matrix ga(g.rows(), ca);
                            for (std::size_t r = 0; r < g.rows(); ++r) {
                                for (std::size_t j = 0; j < ca; ++j) ga(r, j) = g(r, j);
                            }
                            t.accumulate(a, ga);
                        }
                        if (b.requires_grad()) {
                            Matrix gb(g.rows(), cb);
                            for (std::size_t r = 0; r < g.rows(); ++r) {
                                for (std::size_t j = 0; j < cb; ++j) gb(r, j) = g(r, ca + j);
                            }
                            t.accumulate(b, gb);
                        }
                    },
                    "concat_cols");
}

Var concat_rows(std::span<const Var> parts) {
    if (parts.empty()) throw UsageError("concat_rows of nothing");
    Tape& t = tape_of(parts.front());
    const std::size_t cols = parts.front().cols();
    std::size_t rows = 0;
    bool needs = false;
    for (const Var& p : parts) {
        if (&tape_of(p) != &t) throw UsageError("concat_rows mixes tapes");
        if (p.cols() != cols) {
            throw ShapeError("concat_rows: shape mismatch " + parts.front().value().shape_str() + " vs " +
                             p.value().shape_str());
        }
        rows += p.rows();
        needs = needs || p.requires_grad();
    }
    Matrix out(rows, cols);
    std::size_t offset = 0;
    for (const Var& p : parts) {
        std::copy(p.value().values().begin(), p.value().values().end(), out.data() + offset * cols);
        offset += p.rows();
    }
    std::vector<Var> saved(parts.begin(), parts.end());
    return t.record(std::move(out), needs,
                    [&t, saved, cols](const Matrix& g) {
                        std::size_t off = 0;
                        for (const Var& p : saved) {
                            if (p.requires_grad()) {
                                Matrix gp(p.rows(), cols);
                                std::copy(g.data() + off * cols, g.data() + (off + p.rows()) * cols, gp.data());
                                t.accumulate(p, gp);
                            }
                            off += p.rows();
                        }
                    },
                    "concat_rows");
}

Var gather_rows(Var x, std::vector<std::size_t> index) {
    Tape& t = tape_of(x);
    Matrix out = kernels::gather_rows(x.value(), index);
    auto idx = std::make_shared<std::vector<std::size_t>>(std::move(index));
    return t.record(std::move(out), x.requires_grad(),
                    [&t, x, idx](const Matrix& g) { t.accumulate(x, kernels::scatter_sum(g, *idx, x.rows())); },
                    "gather_rows");
}

Var scatter_sum(Var src, std::vector<std::size_t> index, std::size_t n) {
    Tape& t = tape_of(src);
    Matrix out = kernels::scatter_sum(src.value(), index, n);
    auto idx = std::make_shared<std::vector<std::size_t>>(std::move(index));
    return t.record(std::move(out), src.requires_grad(),
                    [&t, src, idx](const Matrix& g) { t.accumulate(src, kernels::gather_rows(g, *idx)); },
                    "scatter_sum");
}

Var select_col(Var x, std::size_t col) {
    Tape& t = tape_of(x);
    if (col >= x.cols()) throw ShapeError("select_col: column " + std::to_string(col) + " of " + x.value().shape_str());
    Matrix out(x.rows(), 1);
    for (std::size_t r = 0; r < x.rows(); ++r) out[r] = x.value()(r, col);
    return t.record(std::move(out), x.requires_grad(),
                    [&t, x, col](const Matrix& g) {
                        Matrix gx(x.rows(), x.cols());
                        for (std::size_t r = 0; r < x.rows(); ++r) gx(r, col) = g[r];
                        t.accumulate(x, gx);
                    },
                    "select_col");
}

Var sum_all(Var a) {
    Tape& t = tape_of(a);
    double s = 0.0;
    for (double v : a.value().values()) s += v;
    return t.record(Matrix(1, 1, s), a.requires_grad(),
                    [&t, a](const Matrix& g) { t.accumulate(a, Matrix(a.rows(), a.cols(), g[0])); }, "sum_all");
}

Var mean_rows(Var a) {
    Tape& t = tape_of(a);
    const std::size_t k = a.rows(), d = a.cols();
    if (k == 0) throw ShapeError("mean_rows of an empty matrix");
    Matrix out(1, d);
    for (std::size_t r = 0; r < k; ++r) {
        for (std::size_t j = 0; j < d; ++j) out(0, j) += a.value()(r, j);
    }
    for (std::size_t j = 0; j < d; ++j) out(0, j) /= static_cast<double>(k);
    return t.record(std::move(out), a.requires_grad(),
                    [&t, a, k, d](const Matrix& g) {
                        Matrix ga(k, d);
                        for (std::size_t r = 0; r < k; ++r) {
                            for (std::size_t j = 0; j < d; ++j) ga(r, j) = g(0, j) / static_cast<double>(k);
                        }
                        t.accumulate(a, ga);
                    },
                    "mean_rows");
}

Var relu(Var a) {
    Tape& t = tape_of(a);
    Matrix out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(0.0, out[i]);
    return t.record(std::move(out), a.requires_grad(),
                    [&t, a](const Matrix& g) {
                        Matrix ga = g;
                        for (std::size_t i = 0; i < ga.size(); ++i) {
                            if (a.value()[i] <= 0.0) ga[i] = 0.0;
                        }
                        t.accumulate(a, ga);
                    },
                    "relu");
}

Var sigmoid(Var a) {
    Tape& t = tape_of(a);
    Matrix out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-out[i]));
    auto y = std::make_shared<Matrix>(out);
    return t.record(std::move(out), a.requires_grad(),
                    [&t, a, y](const Matrix& g) {
                        Matrix ga = g;
                        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] *= (*y)[i] * (1.0 - (*y)[i]);
                        t.accumulate(a, ga);
                    },
                    "sigmoid");
}

Var softmax_rows(Var a) {
    Tape& t = tape_of(a);
    Matrix out = kernels::softmax_rows(a.value());
    auto y = std::make_shared<Matrix>(out);
    return t.record(std::move(out), a.requires_grad(),
                    [&t, a, y](const Matrix& g) {
                        Matrix ga(g.rows(), g.cols());
                        for (std::size_t r = 0; r < g.rows(); ++r) {
                            double dot = 0.0;
                            for (std::size_t j = 0; j < g.cols(); ++j) dot += g(r, j) * (*y)(r, j);
                            for (std::size_t j = 0; j < g.cols(); ++j) ga(r, j) = (*y)(r, j) * (g(r, j) - dot);
                        }
                        t.accumulate(a, ga);
                    },
                    "softmax_rows");
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
    Tape& t = tape_of(x, gamma);
    tape_of(x, beta);
    const std::size_t d = x.cols();
    if (gamma.rows() != 1 || gamma.cols() != d || beta.rows() != 1 || beta.cols() != d) {
        throw ShapeError("layer_norm: shape mismatch " + x.value().shape_str() + " vs " + gamma.value().shape_str() +
                         "/" + beta.value().shape_str());
    }
    auto xhat = std::make_shared<Matrix>();
    auto inv_std = std::make_shared<std::vector<double>>();
    Matrix out = kernels::layer_norm(x.value(), gamma.value().values(), beta.value().values(), eps, xhat.get(),
                                     inv_std.get());
    const bool needs = x.requires_grad() || gamma.requires_grad() || beta.requires_grad();
    return t.record(std::move(out), needs,
                    [&t, x, gamma, beta, xhat, inv_std, d](const Matrix& g) {
                        const std::size_t rows = g.rows();
                        if (gamma.requires_grad() || beta.requires_grad()) {
                            Matrix gg(1, d), gb(1, d);
                            for (std::size_t r = 0; r < rows; ++r) {
                                for (std::size_t j = 0; j < d; ++j) {
                                    gg(0, j) += g(r, j) * (*xhat)(r, j);
                                    gb(0, j) += g(r, j);
                                }
                            }
                            t.accumulate(gamma, gg);
                            t.accumulate(beta, gb);
                        }
                        if (x.requires_grad()) {
                            Matrix gx(rows, d);
                            const auto& gam = gamma.value();
                            const double dd = static_cast<double>(d);
                            const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(rows);
#pragma omp parallel for schedule(static) if (kernels::parallel_enabled() && rows * d > 4096)
                            for (std::ptrdiff_t rr = 0; rr < n; ++rr) {
                                const auto r = static_cast<std::size_t>(rr);
                                double s1 = 0.0, s2 = 0.0;
                                for (std::size_t j = 0; j < d; ++j) {
                                    const double dxh = g(r, j) * gam[j];
                                    s1 += dxh;
                                    s2 += dxh * (*xhat)(r, j);
                                }
                                for (std::size_t j = 0; j < d; ++j) {
                                    const double dxh = g(r, j) * gam[j];
                                    gx(r, j) = (*inv_std)[r] / dd * (dd * dxh - s1 - (*xhat)(r, j) * s2);
                                }
                            }
                            t.accumulate(x, gx);
                        }
                    },
                    "layer_norm");
}

Var message_aggregate(Var h, Var rel, const kernels::EdgeList& graph, Var scores) {
    Tape& t = tape_of(h, rel);
    if (h.rows() != graph.num_nodes || rel.rows() < graph.num_relations || h.cols() != rel.cols()) {
        throw ShapeError("message_aggregate: shape mismatch " + h.value().shape_str() + " vs " +
                         rel.value().shape_str() + " for graph with " + std::to_string(graph.num_nodes) + " nodes, " +
                         std::to_string(graph.num_relations) + " relations");
    }
    const bool scored = scores.valid();
    if (scored) {
        tape_of(h, scores);
        if (scores.rows() != graph.size() || scores.cols() != 1) {
            throw ShapeError("message_aggregate: scores " + scores.value().shape_str() + " for " +
                             std::to_string(graph.size()) + " edges");
        }
    }
    std::span<const double> s = scored ? std::span<const double>(scores.value().values()) : std::span<const double>{};
    Matrix out = kernels::message_aggregate(h.value(), rel.value(), graph, s);
    const bool needs = h.requires_grad() || rel.requires_grad() || (scored && scores.requires_grad());
    const kernels::EdgeList* gp = &graph;
    return t.record(std::move(out), needs,
                    [&t, h, rel, scores, scored, gp](const Matrix& g) {
                        std::span<const double> sv =
                            scored ? std::span<const double>(scores.value().values()) : std::span<const double>{};
                        Matrix gh, gr;
                        std::vector<double> gs;
                        kernels::message_aggregate_backward(h.value(), rel.value(), *gp, sv, g,
                                                            h.requires_grad() ? &gh : nullptr,
                                                            rel.requires_grad() ? &gr : nullptr,
                                                            scored && scores.requires_grad() ? &gs : nullptr);
                        if (h.requires_grad()) t.accumulate(h, gh);
                        if (rel.requires_grad()) t.accumulate(rel, gr);
                        if (scored && scores.requires_grad()) t.accumulate(scores, Matrix(gs.size(), 1, gs));
                    },
                    "message_aggregate");
}

Var bce_from_logits(Var logits, std::size_t positive, std::span<const std::size_t> negatives) {
    Tape& t = tape_of(logits);
    static constexpr double kClamp = 1e-12;
    const Matrix& z = logits.value();
    if (positive >= z.size()) throw ShapeError("bce_from_logits: positive index out of range");
    auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
    auto clamp = [](double p) { return std::clamp(p, kClamp, 1.0 - kClamp); };
    const double pp = sig(z[positive]);
    double loss = -std::log(clamp(pp));
    const double n = static_cast<double>(negatives.size());
    for (std::size_t i : negatives) {
        if (i >= z.size()) throw ShapeError("bce_from_logits: negative index out of range");
        loss -= std::log(1.0 - clamp(sig(z[i]))) / n;
    }
    std::vector<std::size_t> negs(negatives.begin(), negatives.end());
    return t.record(Matrix(1, 1, loss), logits.requires_grad(),
                    [&t, logits, positive, negs, sig, n](const Matrix& g) {
                        const Matrix& zz = logits.value();
                        Matrix gz(zz.rows(), zz.cols());
                        const double pp = sig(zz[positive]);
                        if (pp > kClamp && pp < 1.0 - kClamp) gz[positive] += -(1.0 - pp) * g[0];
                        for (std::size_t i : negs) {
                            const double p = sig(zz[i]);
                            if (p > kClamp && p < 1.0 - kClamp) gz[i] += p / n * g[0];
                        }
                        t.accumulate(logits, gz);
                    },
                    "bce_from_logits");
}

}  // namespace merry::ad
