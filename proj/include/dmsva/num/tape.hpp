#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "dmsva/num/tensor.hpp"

namespace dmsva::num {

/// Handle to a node recorded on a Tape. Only meaningful for the tape that
/// produced it.
struct Var {
    std::uint32_t id = 0;
};

/// Reverse-mode differentiation over a small fixed set of vector/matrix ops.
///
/// Values are stored as Tensor2; vectors are n x 1 and scalars 1 x 1. Nodes are
/// appended in evaluation order, so the record is already topologically
/// sorted and backward() walks it once in reverse.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;
    Tape(Tape&&) = default;
    Tape& operator=(Tape&&) = default;

    /// Trainable input. Gradients are accumulated for it by backward().
    Var leaf(Tensor2 value);
    /// Non-differentiable input.
    Var constant(Tensor2 value);
    Var constant(const Vector& v) { return constant(Tensor2::column(v)); }

    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var scale(Var a, double c);
    /// Stops gradient flow: same value, no parents.
    Var detach(Var a);

    /// Cosine similarity between query (D x 1) and every row of bank (N x D),
    /// giving an N x 1 vector. Throws ZeroNormVector for a zero-norm query or row.
    Var cosine_rows(Var bank, Var query);
    /// Row-wise dot products: bank (N x D) times x (D x 1), giving N x 1.
    Var matvec(Var bank, Var x);
    /// bank^T w: weighted sum of the rows of bank (N x D) by w (N x 1), giving D x 1.
    Var matvec_t(Var bank, Var weights);
    /// a (N x K) times b^T (b is M x K), giving N x M.
    Var matmul_nt(Var a, Var b);
    Var softmax(Var logits);

    /// sum_i (x_i - y_i)^2, a 1 x 1 scalar.
    Var sq_dist(Var x, Var y);
    /// KL(p || q) with the same clamping convention as num::kl_div.
    Var kl(Var p, Var q);
    /// sum_k w_k s_k over scalar nodes.
    Var weighted_sum(std::span<const Var> scalars, std::span<const double> weights);
    Var sum(std::span<const Var> scalars);

    const Tensor2& value(Var v) const { return nodes_[v.id].value; }
    double scalar(Var v) const { return nodes_[v.id].value.item(); }
    /// Gradient of the last backward() root w.r.t. v; zeros if v was not reached.
    const Tensor2& grad(Var v) const;
    bool is_leaf(Var v) const { return nodes_[v.id].op == Op::Leaf; }

    /// Accumulates d root / d node for every node. root must be a 1 x 1 node.
    void backward(Var root);

    std::size_t size() const noexcept { return nodes_.size(); }
    void clear() { nodes_.clear(); }

private:
    enum class Op : std::uint8_t {
        Leaf,
        Constant,
        Add,
        Sub,
        Scale,
        CosineRows,
        MatVec,
        MatVecT,
        MatMulNT,
        Softmax,
        SqDist,
        Kl,
        WeightedSum,
    };

    struct Node {
        Op op;
        Tensor2 value;
        Tensor2 grad;
        std::uint32_t lhs = 0;
        std::uint32_t rhs = 0;
        double coeff = 0.0;
        bool needs_grad = false;
        // Op-specific forward cache (row norms for CosineRows, parent list and
        // weights for WeightedSum).
        std::vector<double> cache;
        std::vector<std::uint32_t> inputs;
    };

    Var push(Node node);
    const Node& node(Var v) const { return nodes_[v.id]; }
    void check_var(Var v) const;
    void propagate(std::uint32_t id);

    std::vector<Node> nodes_;
};

} // namespace dmsva::num
