#include "dmsva/num/tape.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dmsva/errors.hpp"
#include "dmsva/num/ops.hpp"

namespace dmsva::num {

namespace {

void require_shape(const Tensor2& t, std::size_t rows, std::size_t cols, const char* what) {
    if (t.rows() != rows || t.cols() != cols) {
        throw DimensionMismatch(std::string(what) + ": expected " + std::to_string(rows) + "x" +
                                std::to_string(cols) + ", got " + std::to_string(t.rows()) +
                                "x" + std::to_string(t.cols()));
    }
}

void require_column(const Tensor2& t, const char* what) {
    if (t.cols() != 1) {
        throw DimensionMismatch(std::string(what) + ": expected a column vector, got " +
                                std::to_string(t.rows()) + "x" + std::to_string(t.cols()));
    }
}

void require_scalar(const Tensor2& t, const char* what) {
    require_shape(t, 1, 1, what);
}

void axpy(double a, std::span<const double> x, std::span<double> y) {
    for (std::size_t i = 0; i < x.size(); ++i) {
        y[i] += a * x[i];
    }
}

} // namespace

Var Tape::push(Node node) {
    nodes_.push_back(std::move(node));
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

void Tape::check_var(Var v) const {
    if (v.id >= nodes_.size()) {
        throw std::out_of_range("Var " + std::to_string(v.id) + " not on this tape");
    }
}

Var Tape::leaf(Tensor2 value) {
    return push(Node{.op = Op::Leaf, .value = std::move(value), .needs_grad = true});
}

Var Tape::constant(Tensor2 value) {
    return push(Node{.op = Op::Constant, .value = std::move(value)});
}

Var Tape::add(Var a, Var b) {
    check_var(a);
    check_var(b);
    const Tensor2& x = node(a).value;
    const Tensor2& y = node(b).value;
    require_shape(y, x.rows(), x.cols(), "add");
    Tensor2 out = x;
    axpy(1.0, y.values(), out.values());
    return push(Node{.op = Op::Add,
                     .value = std::move(out),
                     .lhs = a.id,
                     .rhs = b.id,
                     .needs_grad = node(a).needs_grad || node(b).needs_grad});
}

Var Tape::sub(Var a, Var b) {
    check_var(a);
    check_var(b);
    const Tensor2& x = node(a).value;
    const Tensor2& y = node(b).value;
    require_shape(y, x.rows(), x.cols(), "sub");
    Tensor2 out = x;
    axpy(-1.0, y.values(), out.values());
    return push(Node{.op = Op::Sub,
                     .value = std::move(out),
                     .lhs = a.id,
                     .rhs = b.id,
                     .needs_grad = node(a).needs_grad || node(b).needs_grad});
}

Var Tape::scale(Var a, double c) {
    check_var(a);
    Tensor2 out = node(a).value;
    for (double& v : out.values()) {
        v *= c;
    }
    return push(Node{.op = Op::Scale,
                     .value = std::move(out),
                     .lhs = a.id,
                     .coeff = c,
                     .needs_grad = node(a).needs_grad});
}

Var Tape::detach(Var a) {
    check_var(a);
    return constant(node(a).value);
}

Var Tape::cosine_rows(Var bank, Var query) {
    check_var(bank);
    check_var(query);
    const Tensor2& m = node(bank).value;
    const Tensor2& q = node(query).value;
    require_shape(q, m.cols(), 1, "cosine_rows query");
    const double qn = norm2(q.values());
    if (qn <= kNormEpsilon) {
        throw ZeroNormVector("cosine_rows query norm <= 1e-12");
    }
    // cache layout: [|q|, |m_0|, ..., |m_{N-1}|]
    std::vector<double> cache(m.rows() + 1);
    cache[0] = qn;
    Tensor2 out(m.rows(), 1);
    for (std::size_t i = 0; i < m.rows(); ++i) {
        const double mn = norm2(m.row(i));
        if (mn <= kNormEpsilon) {
            throw ZeroNormVector("cosine_rows slot " + std::to_string(i) + " norm <= 1e-12");
        }
        cache[i + 1] = mn;
        out(i, 0) = dot(m.row(i), q.values()) / (mn * qn);
    }
    return push(Node{.op = Op::CosineRows,
                     .value = std::move(out),
                     .lhs = bank.id,
                     .rhs = query.id,
                     .needs_grad = node(bank).needs_grad || node(query).needs_grad,
                     .cache = std::move(cache)});
}

Var Tape::matvec(Var bank, Var x) {
    check_var(bank);
    check_var(x);
    const Tensor2& m = node(bank).value;
    const Tensor2& xv = node(x).value;
    require_shape(xv, m.cols(), 1, "matvec");
    Tensor2 out(m.rows(), 1);
    for (std::size_t i = 0; i < m.rows(); ++i) {
        out(i, 0) = dot(m.row(i), xv.values());
    }
    return push(Node{.op = Op::MatVec,
                     .value = std::move(out),
                     .lhs = bank.id,
                     .rhs = x.id,
                     .needs_grad = node(bank).needs_grad || node(x).needs_grad});
}

Var Tape::matvec_t(Var bank, Var weights) {
    check_var(bank);
    check_var(weights);
    const Tensor2& m = node(bank).value;
    const Tensor2& w = node(weights).value;
    require_shape(w, m.rows(), 1, "matvec_t");
    Tensor2 out(m.cols(), 1);
    for (std::size_t i = 0; i < m.rows(); ++i) {
        axpy(w(i, 0), m.row(i), out.values());
    }
    return push(Node{.op = Op::MatVecT,
                     .value = std::move(out),
                     .lhs = bank.id,
                     .rhs = weights.id,
                     .needs_grad = node(bank).needs_grad || node(weights).needs_grad});
}

Var Tape::matmul_nt(Var a, Var b) {
    check_var(a);
    check_var(b);
    const Tensor2& x = node(a).value;
    const Tensor2& y = node(b).value;
    if (x.cols() != y.cols()) {
        throw DimensionMismatch("matmul_nt inner dims " + std::to_string(x.cols()) + " vs " +
                                std::to_string(y.cols()));
    }
    Tensor2 out(x.rows(), y.rows());
    for (std::size_t i = 0; i < x.rows(); ++i) {
        for (std::size_t j = 0; j < y.rows(); ++j) {
            out(i, j) = dot(x.row(i), y.row(j));
        }
    }
    return push(Node{.op = Op::MatMulNT,
                     .value = std::move(out),
                     .lhs = a.id,
                     .rhs = b.id,
                     .needs_grad = node(a).needs_grad || node(b).needs_grad});
}

Var Tape::softmax(Var logits) {
    check_var(logits);
    const Tensor2& x = node(logits).value;
    require_column(x, "softmax");
    const Vector y = num::softmax(x.flat());
    return push(Node{.op = Op::Softmax,
                     .value = Tensor2::column(y),
                     .lhs = logits.id,
                     .needs_grad = node(logits).needs_grad});
}

Var Tape::sq_dist(Var x, Var y) {
    check_var(x);
    check_var(y);
    const Tensor2& a = node(x).value;
    const Tensor2& b = node(y).value;
    require_shape(b, a.rows(), a.cols(), "sq_dist");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a.values()[i] - b.values()[i];
        s += d * d;
    }
    return push(Node{.op = Op::SqDist,
                     .value = Tensor2::scalar(s),
                     .lhs = x.id,
                     .rhs = y.id,
                     .needs_grad = node(x).needs_grad || node(y).needs_grad});
}

Var Tape::kl(Var p, Var q) {
    check_var(p);
    check_var(q);
    const Tensor2& pv = node(p).value;
    const Tensor2& qv = node(q).value;
    require_column(pv, "kl");
    require_shape(qv, pv.rows(), 1, "kl");
    const double s = kl_div(pv.flat(), qv.flat());
    return push(Node{.op = Op::Kl,
                     .value = Tensor2::scalar(s),
                     .lhs = p.id,
                     .rhs = q.id,
                     .needs_grad = node(p).needs_grad || node(q).needs_grad});
}

Var Tape::weighted_sum(std::span<const Var> scalars, std::span<const double> weights) {
    if (scalars.size() != weights.size()) {
        throw DimensionMismatch("weighted_sum: " + std::to_string(scalars.size()) +
                                " terms, " + std::to_string(weights.size()) + " weights");
    }
    Node n{.op = Op::WeightedSum, .value = Tensor2::scalar(0.0)};
    double s = 0.0;
    for (std::size_t k = 0; k < scalars.size(); ++k) {
        check_var(scalars[k]);
        const Node& term = node(scalars[k]);
        require_scalar(term.value, "weighted_sum term");
        s += weights[k] * term.value.item();
        n.needs_grad = n.needs_grad || term.needs_grad;
        n.inputs.push_back(scalars[k].id);
    }
    n.value = Tensor2::scalar(s);
    n.cache.assign(weights.begin(), weights.end());
    return push(std::move(n));
}

Var Tape::sum(std::span<const Var> scalars) {
    const std::vector<double> ones(scalars.size(), 1.0);
    return weighted_sum(scalars, ones);
}

const Tensor2& Tape::grad(Var v) const {
    check_var(v);
    const Node& n = nodes_[v.id];
    if (n.grad.size() != n.value.size()) {
        // Not reached by the last backward pass.
        static thread_local Tensor2 zeros;
        zeros = Tensor2(n.value.rows(), n.value.cols());
        return zeros;
    }
    return n.grad;
}

void Tape::backward(Var root) {
    if (nodes_.empty()) {
        throw EmptyTape("backward() on a tape with no recorded nodes");
    }
    check_var(root);
    require_scalar(nodes_[root.id].value, "backward root");
    for (Node& n : nodes_) {
        n.grad = Tensor2();
    }
    for (std::uint32_t i = 0; i <= root.id; ++i) {
        if (nodes_[i].needs_grad) {
            nodes_[i].grad = Tensor2(nodes_[i].value.rows(), nodes_[i].value.cols());
        }
    }
    Node& r = nodes_[root.id];
    if (!r.needs_grad) {
        return;
    }
    r.grad(0, 0) = 1.0;
    for (std::uint32_t i = root.id + 1; i-- > 0;) {
        if (nodes_[i].needs_grad) {
            propagate(i);
        }
    }
}

void Tape::propagate(std::uint32_t id) {
    Node& n = nodes_[id];
    const Tensor2& g = n.grad;
    auto wants = [&](std::uint32_t parent) { return nodes_[parent].needs_grad; };

    switch (n.op) {
    case Op::Leaf:
    case Op::Constant:
        return;
    case Op::Add:
        if (wants(n.lhs)) axpy(1.0, g.values(), nodes_[n.lhs].grad.values());
        if (wants(n.rhs)) axpy(1.0, g.values(), nodes_[n.rhs].grad.values());
        return;
    case Op::Sub:
        if (wants(n.lhs)) axpy(1.0, g.values(), nodes_[n.lhs].grad.values());
        if (wants(n.rhs)) axpy(-1.0, g.values(), nodes_[n.rhs].grad.values());
        return;
    case Op::Scale:
        axpy(n.coeff, g.values(), nodes_[n.lhs].grad.values());
        return;
    case Op::CosineRows: {
        const Tensor2& m = nodes_[n.lhs].value;
        const Tensor2& q = nodes_[n.rhs].value;
        const double qn = n.cache[0];
        for (std::size_t i = 0; i < m.rows(); ++i) {
            const double gi = g(i, 0);
            if (gi == 0.0) {
                continue;
            }
            const double mn = n.cache[i + 1];
            const double y = n.value(i, 0);
            // dy/dq = m/(|m||q|) - y q/|q|^2 ; dy/dm = q/(|m||q|) - y m/|m|^2
            if (wants(n.rhs)) {
                auto gq = nodes_[n.rhs].grad.values();
                axpy(gi / (mn * qn), m.row(i), gq);
                axpy(-gi * y / (qn * qn), q.values(), gq);
            }
            if (wants(n.lhs)) {
                auto gm = nodes_[n.lhs].grad.row(i);
                axpy(gi / (mn * qn), q.values(), gm);
                axpy(-gi * y / (mn * mn), m.row(i), gm);
            }
        }
        return;
    }
    case Op::MatVec: {
        const Tensor2& m = nodes_[n.lhs].value;
        const Tensor2& x = nodes_[n.rhs].value;
        for (std::size_t i = 0; i < m.rows(); ++i) {
            const double gi = g(i, 0);
            if (wants(n.lhs)) axpy(gi, x.values(), nodes_[n.lhs].grad.row(i));
            if (wants(n.rhs)) axpy(gi, m.row(i), nodes_[n.rhs].grad.values());
        }
        return;
    }
    case Op::MatVecT: {
        const Tensor2& m = nodes_[n.lhs].value;
        const Tensor2& w = nodes_[n.rhs].value;
        for (std::size_t i = 0; i < m.rows(); ++i) {
            if (wants(n.lhs)) axpy(w(i, 0), g.values(), nodes_[n.lhs].grad.row(i));
            if (wants(n.rhs)) nodes_[n.rhs].grad(i, 0) += dot(m.row(i), g.values());
        }
        return;
    }
    case Op::MatMulNT: {
        const Tensor2& a = nodes_[n.lhs].value;
        const Tensor2& b = nodes_[n.rhs].value;
        for (std::size_t i = 0; i < a.rows(); ++i) {
            for (std::size_t j = 0; j < b.rows(); ++j) {
                const double gij = g(i, j);
                if (wants(n.lhs)) axpy(gij, b.row(j), nodes_[n.lhs].grad.row(i));
                if (wants(n.rhs)) axpy(gij, a.row(i), nodes_[n.rhs].grad.row(j));
            }
        }
        return;
    }
    case Op::Softmax: {
        const auto y = n.value.values();
        const double gy = dot(g.values(), y);
        auto gx = nodes_[n.lhs].grad.values();
        for (std::size_t i = 0; i < y.size(); ++i) {
            gx[i] += y[i] * (g.values()[i] - gy);
        }
        return;
    }
    case Op::SqDist: {
        const auto a = nodes_[n.lhs].value.values();
        const auto b = nodes_[n.rhs].value.values();
        const double gs = g.item();
        for (std::size_t i = 0; i < a.size(); ++i) {
            const double d = 2.0 * gs * (a[i] - b[i]);
            if (wants(n.lhs)) nodes_[n.lhs].grad.values()[i] += d;
            if (wants(n.rhs)) nodes_[n.rhs].grad.values()[i] -= d;
        }
        return;
    }
    case Op::Kl: {
        const auto p = nodes_[n.lhs].value.values();
        const auto q = nodes_[n.rhs].value.values();
        const double gs = g.item();
        for (std::size_t i = 0; i < p.size(); ++i) {
            if (p[i] <= 0.0) {
                continue;
            }
            if (wants(n.lhs)) {
                nodes_[n.lhs].grad.values()[i] +=
                    gs * (std::log(p[i]) - std::log(std::max(q[i], kKlFloor)) + 1.0);
            }
            if (wants(n.rhs) && q[i] > kKlFloor) {
                nodes_[n.rhs].grad.values()[i] -= gs * p[i] / q[i];
            }
        }
        return;
    }
    case Op::WeightedSum: {
        const double gs = g.item();
        for (std::size_t k = 0; k < n.inputs.size(); ++k) {
            if (wants(n.inputs[k])) {
                nodes_[n.inputs[k]].grad(0, 0) += n.cache[k] * gs;
            }
        }
        return;
    }
    }
}

} // namespace dmsva::num
