#pragma once

// Minimal reverse-mode differentiation over whole matrices. A Tape records
// every operation of one forward pass; backward() walks it in reverse and
// deposits gradients into the Parameters that entered as leaves.

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "merry/kernels.hpp"
#include "merry/matrix.hpp"
#include "merry/params.hpp"

namespace merry::ad {

class Tape;

/// Handle to a recorded value. Cheap to copy; valid while its Tape lives.
class Var {
public:
    Var() = default;

    const Matrix& value() const;
    std::size_t rows() const { return value().rows(); }
    std::size_t cols() const { return value().cols(); }
    bool requires_grad() const;
    bool valid() const noexcept { return tape_ != nullptr; }
    Tape* tape() const noexcept { return tape_; }
    std::size_t id() const noexcept { return id_; }

private:
    friend class Tape;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}
    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

class Tape {
public:
    // Receives the gradient of the node's output.
    using Backward = std::function<void(const Matrix& grad_out)>;

    /// With grad disabled every parameter enters as a constant.
    explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Matrix value);
    /// Leaf bound to a parameter; frozen parameters enter as constants.
    Var param(Parameter& p);

    /// Records an op output. `back` is dropped when no input needs a gradient.
    Var record(Matrix value, bool requires_grad, Backward back, const char* op);

    /// Seeds d(loss)/d(loss) = 1 and propagates. Loss must be 1×1.
    void backward(Var loss);

    void accumulate(Var v, const Matrix& grad);
    const Matrix& grad(Var v) const;
    const Matrix& value(std::size_t id) const { return nodes_[id].value; }
    bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
    std::size_t size() const noexcept { return nodes_.size(); }

private:
    struct Node {
        Matrix value;
        Matrix grad;
        Backward back;
        Parameter* param = nullptr;
        bool requires_grad = false;
    };
    std::vector<Node> nodes_;
    bool grad_enabled_ = true;
    bool consumed_ = false;
};

// Elementwise and structural ops. Shape mismatches throw ShapeError naming
// both shapes; non-finite outputs throw NumericError.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double c);
Var add_row(Var a, Var row);          // broadcast a 1×n row over every row of a
Var mul_scalar(Var a, Var s);         // s is 1×1
Var mul_col(Var a, Var col);          // col is rows×1, scales each row
Var one_minus(Var a);
Var matmul(Var a, Var b);
Var matmul_a_bt(Var a, Var b);        // a·bᵀ
Var concat_cols(Var a, Var b);
Var concat_rows(std::span<const Var> parts);
Var gather_rows(Var x, std::vector<std::size_t> index);
Var scatter_sum(Var src, std::vector<std::size_t> index, std::size_t n);
Var select_col(Var x, std::size_t col);
Var sum_all(Var a);
Var mean_rows(Var a);                 // k×d → 1×d
Var relu(Var a);
Var sigmoid(Var a);
Var softmax_rows(Var a);
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);

/// agg[v] = Σ_{(u,r,v)} s_e·(h[u] ⊙ rel[r]). `scores` is an E×1 Var or invalid (all ones).
Var message_aggregate(Var h, Var rel, const kernels::EdgeList& graph, Var scores = {});

/// −log p_pos − (1/n) Σ log(1 − p_neg) with p = sigmoid(logit) clamped to [1e-12, 1 − 1e-12].
/// `logits` is any shape; positives/negatives index its flat storage.
Var bce_from_logits(Var logits, std::size_t positive, std::span<const std::size_t> negatives);

}  // namespace merry::ad
