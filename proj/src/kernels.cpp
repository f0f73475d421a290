#include "merry/kernels.hpp"

#include <atomic>
#include <cmath>
#include <string>

#include "merry/error.hpp"

namespace merry::kernels {

namespace {

// Below this many output entries the OpenMP runtime costs more than it saves.
constexpr std::size_t kParallelThreshold = 4096;

std::atomic<bool> g_parallel{true};

void check_matmul(const Matrix& a, const Matrix& b, std::size_t ka, std::size_t kb, const char* op) {
    if (ka != kb) {
        throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
    }
}

void check_index(Index index, std::size_t bound, const char* op) {
    for (std::size_t i : index) {
        if (i >= bound) {
            throw ShapeError(std::string(op) + ": index " + std::to_string(i) + " out of range " +
                             std::to_string(bound));
        }
    }
}

void check_scores(std::span<const double> scores, const EdgeList& g) {
    if (!scores.empty() && scores.size() != g.size()) {
        throw ShapeError("message_aggregate: " + std::to_string(scores.size()) + " scores for " +
                         std::to_string(g.size()) + " edges");
    }
}

// Row kernels shared by both flavours so the arithmetic is identical.

inline void matmul_row(const Matrix& a, const Matrix& b, Matrix& c, std::size_t i) {
    const std::size_t k = a.cols();
    const std::size_t n = b.cols();
    double* out = c.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
        const double av = a(i, p);
        const double* brow = b.data() + p * n;
        for (std::size_t j = 0; j < n; ++j) out[j] += av * brow[j];
    }
}

inline void matmul_a_bt_row(const Matrix& a, const Matrix& b, Matrix& c, std::size_t i) {
    const std::size_t k = a.cols();
    for (std::size_t j = 0; j < b.rows(); ++j) {
        const double* arow = a.data() + i * k;
        const double* brow = b.data() + j * k;
        double acc = 0.0;
        for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
        c(i, j) = acc;
    }
}

inline void layer_norm_row(const Matrix& x, std::span<const double> gamma, std::span<const double> beta,
                           double eps, Matrix& y, Matrix* normalized, std::vector<double>* inv_std,
                           std::size_t r) {
    const std::size_t d = x.cols();
    const double* in = x.data() + r * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += in[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
        const double c = in[j] - mean;
        var += c * c;
    }
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
        const double xh = (in[j] - mean) * is;
        if (normalized) (*normalized)(r, j) = xh;
        y(r, j) = gamma[j] * xh + beta[j];
    }
    if (inv_std) (*inv_std)[r] = is;
}

inline void softmax_row(const Matrix& x, Matrix& y, std::size_t r) {
    const std::size_t d = x.cols();
    double m = -INFINITY;
    for (std::size_t j = 0; j < d; ++j) m = std::max(m, x(r, j));
    double z = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
        const double e = std::exp(x(r, j) - m);
        y(r, j) = e;
        z += e;
    }
    for (std::size_t j = 0; j < d; ++j) y(r, j) /= z;
}

void check_layer_norm(const Matrix& x, std::span<const double> gamma, std::span<const double> beta) {
    if (gamma.size() != x.cols() || beta.size() != x.cols()) {
        throw ShapeError("layer_norm: input " + x.shape_str() + " vs scale/shift of length " +
                         std::to_string(gamma.size()) + "/" + std::to_string(beta.size()));
    }
}

}  // namespace

Csr build_csr(Index keys, std::size_t n) {
    Csr csr;
    csr.offsets.assign(n + 1, 0);
    for (std::size_t k : keys) {
        if (k >= n) throw ShapeError("build_csr: key " + std::to_string(k) + " out of range " + std::to_string(n));
        ++csr.offsets[k + 1];
    }
    for (std::size_t i = 0; i < n; ++i) csr.offsets[i + 1] += csr.offsets[i];
    csr.items.resize(keys.size());
    std::vector<std::size_t> cursor(csr.offsets.begin(), csr.offsets.end() - 1);
    for (std::size_t e = 0; e < keys.size(); ++e) csr.items[cursor[keys[e]]++] = e;
    return csr;
}

EdgeList make_edge_list(std::vector<std::size_t> src, std::vector<std::size_t> rel,
                        std::vector<std::size_t> dst, std::size_t num_nodes,
                        std::size_t num_relations) {
    if (src.size() != rel.size() || src.size() != dst.size()) {
        throw ShapeError("make_edge_list: ragged edge columns");
    }
    EdgeList g;
    g.num_nodes = num_nodes;
    g.num_relations = num_relations;
    g.by_dst = build_csr(dst, num_nodes);
    g.by_src = build_csr(src, num_nodes);
    g.by_rel = build_csr(rel, num_relations);
    g.src = std::move(src);
    g.rel = std::move(rel);
    g.dst = std::move(dst);
    return g;
}

namespace serial {

Matrix matmul(const Matrix& a, const Matrix& b) {
    check_matmul(a, b, a.cols(), b.rows(), "matmul");
    Matrix c(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) matmul_row(a, b, c, i);
    return c;
}

Matrix matmul_at_b(const Matrix& a, const Matrix& b) {
    check_matmul(a, b, a.rows(), b.rows(), "matmul_at_b");
    Matrix c(a.cols(), b.cols());
    for (std::size_t r = 0; r < a.rows(); ++r) {
        for (std::size_t i = 0; i < a.cols(); ++i) {
            const double av = a(r, i);
            for (std::size_t j = 0; j < b.cols(); ++j) c(i, j) += av * b(r, j);
        }
    }
    return c;
}

Matrix matmul_a_bt(const Matrix& a, const Matrix& b) {
    check_matmul(a, b, a.cols(), b.cols(), "matmul_a_bt");
    Matrix c(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) matmul_a_bt_row(a, b, c, i);
    return c;
}

Matrix scatter_sum(const Matrix& src, Index index, std::size_t n) {
    if (index.size() != src.rows()) {
        throw ShapeError("scatter_sum: " + std::to_string(index.size()) + " indices for source " + src.shape_str());
    }
    check_index(index, n, "scatter_sum");
    Matrix out(n, src.cols());
    for (std::size_t e = 0; e < index.size(); ++e) {
        for (std::size_t j = 0; j < src.cols(); ++j) out(index[e], j) += src(e, j);
    }
    return out;
}

Matrix gather_rows(const Matrix& x, Index index) {
    check_index(index, x.rows(), "gather_rows");
    Matrix out(index.size(), x.cols());
    for (std::size_t e = 0; e < index.size(); ++e) {
        for (std::size_t j = 0; j < x.cols(); ++j) out(e, j) = x(index[e], j);
    }
    return out;
}

Matrix message_aggregate(const Matrix& h, const Matrix& rel, const EdgeList& g,
                         std::span<const double> scores) {
    check_scores(scores, g);
    const std::size_t d = h.cols();
    Matrix agg(g.num_nodes, d);
    for (std::size_t e = 0; e < g.size(); ++e) {
        const double s = scores.empty() ? 1.0 : scores[e];
        for (std::size_t j = 0; j < d; ++j) agg(g.dst[e], j) += s * (h(g.src[e], j) * rel(g.rel[e], j));
    }
    return agg;
}

void message_aggregate_backward(const Matrix& h, const Matrix& rel, const EdgeList& g,
                                std::span<const double> scores, const Matrix& grad_agg,
                                Matrix* grad_h, Matrix* grad_rel, std::vector<double>* grad_scores) {
    const std::size_t d = h.cols();
    if (grad_h) *grad_h = Matrix(h.rows(), d);
    if (grad_rel) *grad_rel = Matrix(rel.rows(), d);
    if (grad_scores) grad_scores->assign(g.size(), 0.0);
    for (std::size_t e = 0; e < g.size(); ++e) {
        const double s = scores.empty() ? 1.0 : scores[e];
        const std::size_t u = g.src[e], r = g.rel[e], v = g.dst[e];
        for (std::size_t j = 0; j < d; ++j) {
            if (grad_h) (*grad_h)(u, j) += s * (grad_agg(v, j) * rel(r, j));
            if (grad_rel) (*grad_rel)(r, j) += s * (grad_agg(v, j) * h(u, j));
        }
        if (grad_scores) {
            double acc = 0.0;
            for (std::size_t j = 0; j < d; ++j) acc += grad_agg(v, j) * (h(u, j) * rel(r, j));
            (*grad_scores)[e] = acc;
        }
    }
}

Matrix layer_norm(const Matrix& x, std::span<const double> gamma, std::span<const double> beta,
                  double eps, Matrix* normalized, std::vector<double>* inv_std) {
    check_layer_norm(x, gamma, beta);
    Matrix y(x.rows(), x.cols());
    if (normalized) *normalized = Matrix(x.rows(), x.cols());
    if (inv_std) inv_std->assign(x.rows(), 0.0);
    for (std::size_t r = 0; r < x.rows(); ++r) layer_norm_row(x, gamma, beta, eps, y, normalized, inv_std, r);
    return y;
}

Matrix softmax_rows(const Matrix& x) {
    Matrix y(x.rows(), x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r) softmax_row(x, y, r);
    return y;
}

}  // namespace serial

namespace omp {

Matrix matmul(const Matrix& a, const Matrix& b) {
    check_matmul(a, b, a.cols(), b.rows(), "matmul");
    Matrix c(a.rows(), b.cols());
    const std::ptrdiff_t rows = static_cast<std::ptrdiff_t>(a.rows());
#pragma omp parallel for schedule(static) if (a.rows() * b.cols() * a.cols() > kParallelThreshold * 16)
    for (std::ptrdiff_t i = 0; i < rows; ++i) matmul_row(a, b, c, static_cast<std::size_t>(i));
    return c;
}

Matrix matmul_at_b(const Matrix& a, const Matrix& b) {
    check_matmul(a, b, a.rows(), b.rows(), "matmul_at_b");
    Matrix c(a.cols(), b.cols());
    const std::ptrdiff_t out_rows = static_cast<std::ptrdiff_t>(a.cols());
#pragma omp parallel for schedule(static) if (a.rows() * b.cols() * a.cols() > kParallelThreshold * 16)
    for (std::ptrdiff_t ii = 0; ii < out_rows; ++ii) {
        const auto i = static_cast<std::size_t>(ii);
        double* out = c.data() + i * c.cols();
        for (std::size_t r = 0; r < a.rows(); ++r) {
            const double av = a(r, i);
            const double* brow = b.data() + r * b.cols();
            for (std::size_t j = 0; j < b.cols(); ++j) out[j] += av * brow[j];
        }
    }
    return c;
}

Matrix matmul_a_bt(const Matrix& a, const Matrix& b) {
    check_matmul(a, b, a.cols(), b.cols(), "matmul_a_bt");
    Matrix c(a.rows(), b.rows());
    const std::ptrdiff_t rows = static_cast<std::ptrdiff_t>(a.rows());
#pragma omp parallel for schedule(static) if (a.rows() * b.rows() * a.cols() > kParallelThreshold * 16)
    for (std::ptrdiff_t i = 0; i < rows; ++i) matmul_a_bt_row(a, b, c, static_cast<std::size_t>(i));
    return c;
}

Matrix scatter_sum(const Matrix& src, Index index, std::size_t n) {
    if (index.size() != src.rows()) {
        throw ShapeError("scatter_sum: " + std::to_string(index.size()) + " indices for source " + src.shape_str());
    }
    const Csr csr = build_csr(index, n);
    const std::size_t d = src.cols();
    Matrix out(n, d);
    const std::ptrdiff_t groups = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(static) if (src.size() > kParallelThreshold)
    for (std::ptrdiff_t vv = 0; vv < groups; ++vv) {
        const auto v = static_cast<std::size_t>(vv);
        double* o = out.data() + v * d;
        for (std::size_t k = csr.offsets[v]; k < csr.offsets[v + 1]; ++k) {
            const double* in = src.data() + csr.items[k] * d;
            for (std::size_t j = 0; j < d; ++j) o[j] += in[j];
        }
    }
    return out;
}

Matrix gather_rows(const Matrix& x, Index index) {
    check_index(index, x.rows(), "gather_rows");
    const std::size_t d = x.cols();
    Matrix out(index.size(), d);
    const std::ptrdiff_t rows = static_cast<std::ptrdiff_t>(index.size());
#pragma omp parallel for schedule(static) if (out.size() > kParallelThreshold)
    for (std::ptrdiff_t e = 0; e < rows; ++e) {
        const double* in = x.data() + index[static_cast<std::size_t>(e)] * d;
        double* o = out.data() + static_cast<std::size_t>(e) * d;
        for (std::size_t j = 0; j < d; ++j) o[j] = in[j];
    }
    return out;
}

Matrix message_aggregate(const Matrix& h, const Matrix& rel, const EdgeList& g,
                         std::span<const double> scores) {
    check_scores(scores, g);
    const std::size_t d = h.cols();
    Matrix agg(g.num_nodes, d);
    const std::ptrdiff_t nodes = static_cast<std::ptrdiff_t>(g.num_nodes);
#pragma omp parallel for schedule(static) if (g.size() * d > kParallelThreshold)
    for (std::ptrdiff_t vv = 0; vv < nodes; ++vv) {
        const auto v = static_cast<std::size_t>(vv);
        double* o = agg.data() + v * d;
        for (std::size_t k = g.by_dst.offsets[v]; k < g.by_dst.offsets[v + 1]; ++k) {
            const std::size_t e = g.by_dst.items[k];
            const double s = scores.empty() ? 1.0 : scores[e];
            const double* hu = h.data() + g.src[e] * d;
            const double* rr = rel.data() + g.rel[e] * d;
            for (std::size_t j = 0; j < d; ++j) o[j] += s * (hu[j] * rr[j]);
        }
    }
    return agg;
}

void message_aggregate_backward(const Matrix& h, const Matrix& rel, const EdgeList& g,
                                std::span<const double> scores, const Matrix& grad_agg,
                                Matrix* grad_h, Matrix* grad_rel, std::vector<double>* grad_scores) {
    const std::size_t d = h.cols();
    const bool par = g.size() * d > kParallelThreshold;
    if (grad_h) {
        *grad_h = Matrix(h.rows(), d);
        const std::ptrdiff_t nodes = static_cast<std::ptrdiff_t>(g.num_nodes);
#pragma omp parallel for schedule(static) if (par)
        for (std::ptrdiff_t uu = 0; uu < nodes; ++uu) {
            const auto u = static_cast<std::size_t>(uu);
            double* o = grad_h->data() + u * d;
            for (std::size_t k = g.by_src.offsets[u]; k < g.by_src.offsets[u + 1]; ++k) {
                const std::size_t e = g.by_src.items[k];
                const double s = scores.empty() ? 1.0 : scores[e];
                const double* ga = grad_agg.data() + g.dst[e] * d;
                const double* rr = rel.data() + g.rel[e] * d;
                for (std::size_t j = 0; j < d; ++j) o[j] += s * (ga[j] * rr[j]);
            }
        }
    }
    if (grad_rel) {
        *grad_rel = Matrix(rel.rows(), d);
        const std::ptrdiff_t rels = static_cast<std::ptrdiff_t>(g.num_relations);
#pragma omp parallel for schedule(static) if (par)
        for (std::ptrdiff_t rr_ = 0; rr_ < rels; ++rr_) {
            const auto r = static_cast<std::size_t>(rr_);
            double* o = grad_rel->data() + r * d;
            for (std::size_t k = g.by_rel.offsets[r]; k < g.by_rel.offsets[r + 1]; ++k) {
                const std::size_t e = g.by_rel.items[k];
                const double s = scores.empty() ? 1.0 : scores[e];
                const double* ga = grad_agg.data() + g.dst[e] * d;
                const double* hu = h.data() + g.src[e] * d;
                for (std::size_t j = 0; j < d; ++j) o[j] += s * (ga[j] * hu[j]);
            }
        }
    }
    if (grad_scores) {
        grad_scores->assign(g.size(), 0.0);
        const std::ptrdiff_t edges = static_cast<std::ptrdiff_t>(g.size());
#pragma omp parallel for schedule(static) if (par)
        for (std::ptrdiff_t ee = 0; ee < edges; ++ee) {
            const auto e = static_cast<std::size_t>(ee);
            const double* ga = grad_agg.data() + g.dst[e] * d;
            const double* hu = h.data() + g.src[e] * d;
            const double* rr = rel.data() + g.rel[e] * d;
            double acc = 0.0;
            for (std::size_t j = 0; j < d; ++j) acc += ga[j] * (hu[j] * rr[j]);
            (*grad_scores)[e] = acc;
        }
    }
}

Matrix layer_norm(const Matrix& x, std::span<const double> gamma, std::span<const double> beta,
                  double eps, Matrix* normalized, std::vector<double>* inv_std) {
    check_layer_norm(x, gamma, beta);
    Matrix y(x.rows(), x.cols());
    if (normalized) *normalized = Matrix(x.rows(), x.cols());
    if (inv_std) inv_std->assign(x.rows(), 0.0);
    const std::ptrdiff_t rows = static_cast<std::ptrdiff_t>(x.rows());
#pragma omp parallel for schedule(static) if (x.size() > kParallelThreshold)
    for (std::ptrdiff_t r = 0; r < rows; ++r) {
        layer_norm_row(x, gamma, beta, eps, y, normalized, inv_std, static_cast<std::size_t>(r));
    }
    return y;
}

Matrix softmax_rows(const Matrix& x) {
    Matrix y(x.rows(), x.cols());
    const std::ptrdiff_t rows = static_cast<std::ptrdiff_t>(x.rows());
#pragma omp parallel for schedule(static) if (x.size() > kParallelThreshold)
    for (std::ptrdiff_t r = 0; r < rows; ++r) softmax_row(x, y, static_cast<std::size_t>(r));
    return y;
}

}  // namespace omp

void set_parallel(bool enabled) { g_parallel.store(enabled); }
bool parallel_enabled() { return g_parallel.load(); }

Matrix matmul(const Matrix& a, const Matrix& b) {
    return parallel_enabled() ? omp::matmul(a, b) : serial::matmul(a, b);
}
Matrix matmul_at_b(const Matrix& a, const Matrix& b) {
    return parallel_enabled() ? omp::matmul_at_b(a, b) : serial::matmul_at_b(a, b);
}
Matrix matmul_a_bt(const Matrix& a, const Matrix& b) {
    return parallel_enabled() ? omp::matmul_a_bt(a, b) : serial::matmul_a_bt(a, b);
}
Matrix scatter_sum(const Matrix& src, Index index, std::size_t n) {
    return parallel_enabled() ? omp::scatter_sum(src, index, n) : serial::scatter_sum(src, index, n);
}
Matrix gather_rows(const Matrix& x, Index index) {
    return parallel_enabled() ? omp::gather_rows(x, index) : serial::gather_rows(x, index);
}
Matrix message_aggregate(const Matrix& h, const Matrix& rel, const EdgeList& g,
                         std::span<const double> scores) {
    return parallel_enabled() ? omp::message_aggregate(h, rel, g, scores)
                              : serial::message_aggregate(h, rel, g, scores);
}
void message_aggregate_backward(const Matrix& h, const Matrix& rel, const EdgeList& g,
                                std::span<const double> scores, const Matrix& grad_agg,
                                Matrix* grad_h, Matrix* grad_rel, std::vector<double>* grad_scores) {
    if (parallel_enabled()) {
        omp::message_aggregate_backward(h, rel, g, scores, grad_agg, grad_h, grad_rel, grad_scores);
    } else {
        serial::message_aggregate_backward(h, rel, g, scores, grad_agg, grad_h, grad_rel, grad_scores);
    }
}
Matrix layer_norm(const Matrix& x, std::span<const double> gamma, std::span<const double> beta,
                  double eps, Matrix* normalized, std::vector<double>* inv_std) {
    return parallel_enabled() ? omp::layer_norm(x, gamma, beta, eps, normalized, inv_std)
                              : serial::layer_norm(x, gamma, beta, eps, normalized, inv_std);
}
Matrix softmax_rows(const Matrix& x) {
    return parallel_enabled() ? omp::softmax_rows(x) : serial::softmax_rows(x);
}

}  // namespace merry::kernels
