#pragma once

// Dense and sparse compute kernels in two flavours: `serial` is the naive
// reference, `omp` is the OpenMP version used at runtime. Each parallel kernel
// reduces every output row in the same order as its serial counterpart, so
// the two are bit-identical in 64-bit.

#include <cstddef>
#include <span>
#include <vector>

#include "merry/matrix.hpp"

namespace merry::kernels {

using Index = std::span<const std::size_t>;

/// Stable grouping of item ids by key (counting sort).
struct Csr {
    std::vector<std::size_t> offsets;  // size n + 1
    std::vector<std::size_t> items;    // item ids, original order within a group

    std::size_t groups() const noexcept { return offsets.empty() ? 0 : offsets.size() - 1; }
};

Csr build_csr(Index keys, std::size_t n);

/// Edge list of a message-passing graph with its three groupings precomputed.
struct EdgeList {
    std::vector<std::size_t> src;
    std::vector<std::size_t> rel;
    std::vector<std::size_t> dst;
    std::size_t num_nodes = 0;
    std::size_t num_relations = 0;
    Csr by_dst;
    Csr by_src;
    Csr by_rel;

    std::size_t size() const noexcept { return src.size(); }
};

EdgeList make_edge_list(std::vector<std::size_t> src, std::vector<std::size_t> rel,
                        std::vector<std::size_t> dst, std::size_t num_nodes,
                        std::size_t num_relations);

namespace serial {

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix matmul_at_b(const Matrix& a, const Matrix& b);  // aᵀ·b
Matrix matmul_a_bt(const Matrix& a, const Matrix& b);  // a·bᵀ
Matrix scatter_sum(const Matrix& src, Index index, std::size_t n);
Matrix gather_rows(const Matrix& x, Index index);

// agg[v] = Σ_{(u,r,v)} s_e · (h[u] ⊙ rel[r]); empty scores means all ones.
Matrix message_aggregate(const Matrix& h, const Matrix& rel, const EdgeList& g,
                         std::span<const double> scores);
void message_aggregate_backward(const Matrix& h, const Matrix& rel, const EdgeList& g,
                                std::span<const double> scores, const Matrix& grad_agg,
                                Matrix* grad_h, Matrix* grad_rel, std::vector<double>* grad_scores);

Matrix layer_norm(const Matrix& x, std::span<const double> gamma, std::span<const double> beta,
                  double eps, Matrix* normalized, std::vector<double>* inv_std);
Matrix softmax_rows(const Matrix& x);

}  // namespace serial

namespace omp {

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix matmul_at_b(const Matrix& a, const Matrix& b);
Matrix matmul_a_bt(const Matrix& a, const Matrix& b);
Matrix scatter_sum(const Matrix& src, Index index, std::size_t n);
Matrix gather_rows(const Matrix& x, Index index);

Matrix message_aggregate(const Matrix& h, const Matrix& rel, const EdgeList& g,
                         std::span<const double> scores);
void message_aggregate_backward(const Matrix& h, const Matrix& rel, const EdgeList& g,
                                std::span<const double> scores, const Matrix& grad_agg,
                                Matrix* grad_h, Matrix* grad_rel, std::vector<double>* grad_scores);

Matrix layer_norm(const Matrix& x, std::span<const double> gamma, std::span<const double> beta,
                  double eps, Matrix* normalized, std::vector<double>* inv_std);
Matrix softmax_rows(const Matrix& x);

}  // namespace omp

/// Runtime switch between the two flavours (default: omp).
void set_parallel(bool enabled);
bool parallel_enabled();

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix matmul_at_b(const Matrix& a, const Matrix& b);
Matrix matmul_a_bt(const Matrix& a, const Matrix& b);
Matrix scatter_sum(const Matrix& src, Index index, std::size_t n);
Matrix gather_rows(const Matrix& x, Index index);
Matrix message_aggregate(const Matrix& h, const Matrix& rel, const EdgeList& g,
                         std::span<const double> scores);
void message_aggregate_backward(const Matrix& h, const Matrix& rel, const EdgeList& g,
                                std::span<const double> scores, const Matrix& grad_agg,
                                Matrix* grad_h, Matrix* grad_rel, std::vector<double>* grad_scores);
Matrix layer_norm(const Matrix& x, std::span<const double> gamma, std::span<const double> beta,
                  double eps, Matrix* normalized, std::vector<double>* inv_std);
Matrix softmax_rows(const Matrix& x);

}  // namespace merry::kernels
