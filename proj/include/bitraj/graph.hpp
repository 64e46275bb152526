#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "bitraj/common.hpp"
#include "bitraj/tensor.hpp"

namespace bitraj {

class Graph;

// Handle to a node of a Graph. Cheap to copy; valid until Graph::clear().
struct Value {
    Graph* g = nullptr;
    std::int32_t id = -1;
    bool valid() const noexcept { return g != nullptr && id >= 0; }
};

// Append-only computation graph over Tensors with reverse-mode autodiff.
//
// Every op evaluates eagerly and records a node; parents always precede
// children, so reverse id order is a valid reverse topological order.
// backward_nodes() emits the gradient computation as ordinary nodes of the
// same graph, which makes gradients differentiable in turn: backpropagating
// through K unrolled SGD updates is just backward over a graph that contains
// K emitted gradient subgraphs.
//
// A Graph and its Values are confined to one thread; distinct Graphs are
// independent.
class Graph {
    enum class Op : std::uint8_t {
        var,
        cnst,
        matmul,
        add,
        sub,
        hadamard,
        div,
        scale,
        exp,
        log,
        tanh,
        sqrt,
        clamp_min,
        transpose,
        sum_all,
        row_sum,
        broadcast_scalar,
        broadcast_col,
        take_rows,
        scatter_rows,
        take_diag,
        put_diag,
    };

    struct Node {
        Op op;
        std::int32_t a = -1, b = -1;
        double attr = 0.0;
        std::vector<std::int32_t> indices; // take_rows / scatter_rows only
        Tensor val;
    };

public:
    Value var(Tensor v) {
        Value h = emplace(Op::var, -1, -1, std::move(v));
        vars_.push_back(h.id);
        return h;
    }
    Value constant(Tensor v) { return emplace(Op::cnst, -1, -1, std::move(v)); }
    Value constant_scalar(double s) { return constant(Tensor::full(1, 1, s)); }

    const Tensor& value(Value v) const {
        check_mine(v, "value");
        return nodes_[static_cast<std::size_t>(v.id)].val;
    }
    double scalar(Value v) const {
        const Tensor& t = value(v);
        if (t.rows() != 1 || t.cols() != 1)
            throw NumericError("scalar: node is " + t.shape_str() + ", expected 1x1");
        return t(0, 0);
    }
    Tensor detach(Value v) const { return value(v); }

    std::size_t node_count() const noexcept { return nodes_.size(); }
    std::span<const std::int32_t> variables() const noexcept { return vars_; }

    void clear() {
        nodes_.clear();
        vars_.clear();
    }

    // ---- primitives -------------------------------------------------------

    Value matmul(Value a, Value b) {
        return emplace2(Op::matmul, a, b, kern::matmul(value(a), value(b)));
    }
    Value add(Value a, Value b) {
        return emplace2(Op::add, a, b, kern::add(value(a), value(b)));
    }
    Value sub(Value a, Value b) {
        return emplace2(Op::sub, a, b, kern::sub(value(a), value(b)));
    }
    Value hadamard(Value a, Value b) {
        return emplace2(Op::hadamard, a, b, kern::hadamard(value(a), value(b)));
    }
    Value div(Value a, Value b) {
        return emplace2(Op::div, a, b, kern::div(value(a), value(b)));
    }
    Value scale(Value a, double c) {
        Value h = emplace(Op::scale, a.id, -1, kern::scale(value(a), c));
        nodes_.back().attr = c;
        return h;
    }
    Value exp(Value a) {
        return emplace(Op::exp, a.id, -1, kern::map(value(a), [](double x) { return std::exp(x); }));
    }
    Value log(Value a) {
        for (double x : value(a).data())
            if (!(x > 0.0))
                throw NumericError("log: non-positive input " + std::to_string(x));
        return emplace(Op::log, a.id, -1, kern::map(value(a), [](double x) { return std::log(x); }));
    }
    Value tanh(Value a) {
        return emplace(Op::tanh, a.id, -1,
                       kern::map(value(a), [](double x) { return std::tanh(x); }));
    }
    Value sqrt(Value a) {
        return emplace(Op::sqrt, a.id, -1,
                       kern::map(value(a), [](double x) { return std::sqrt(x); }));
    }
    Value clamp_min(Value a, double floor) {
        Value h = emplace(Op::clamp_min, a.id, -1,
                          kern::map(value(a), [floor](double x) { return x < floor ? floor : x; }));
        nodes_.back().attr = floor;
        return h;
    }
    Value transpose(Value a) {
        return emplace(Op::transpose, a.id, -1, kern::transpose(value(a)));
    }
    Value sum_all(Value a) {
        return emplace(Op::sum_all, a.id, -1, Tensor::full(1, 1, kern::sum(value(a))));
    }
    Value row_sum(Value a) { return emplace(Op::row_sum, a.id, -1, kern::row_sum(value(a))); }

    Value broadcast_scalar(Value a, std::size_t rows, std::size_t cols) {
        const Tensor& t = value(a);
        if (t.rows() != 1 || t.cols() != 1)
            throw NumericError("broadcast_scalar: input is " + t.shape_str() + ", expected 1x1");
        return emplace(Op::broadcast_scalar, a.id, -1, Tensor::full(rows, cols, t(0, 0)));
    }
    Value broadcast_col(Value a, std::size_t cols) {
        const Tensor& t = value(a);
        if (t.cols() != 1)
            throw NumericError("broadcast_col: input is " + t.shape_str() + ", expected r x 1");
        Tensor out(t.rows(), cols);
        for (std::size_t i = 0; i < t.rows(); ++i)
            for (std::size_t j = 0; j < cols; ++j) out(i, j) = t(i, 0);
        return emplace(Op::broadcast_col, a.id, -1, std::move(out));
    }

    Value take_rows(Value a, std::span<const std::int32_t> rows) {
        const Tensor& t = value(a);
        for (auto r : rows)
            if (r < 0 || static_cast<std::size_t>(r) >= t.rows())
                throw NumericError("take_rows: index " + std::to_string(r) + " out of " +
                                   t.shape_str());
        Value h = emplace(Op::take_rows, a.id, -1, kern::take_rows(t, rows));
        nodes_.back().indices.assign(rows.begin(), rows.end());
        return h;
    }
    Value scatter_rows(Value a, std::span<const std::int32_t> rows, std::size_t out_rows) {
        const Tensor& t = value(a);
        if (rows.size() != t.rows())
            throw NumericError("scatter_rows: " + std::to_string(rows.size()) +
                               " indices for " + t.shape_str());
        Tensor out(out_rows, t.cols());
        for (std::size_t i = 0; i < rows.size(); ++i) {
            const auto dst = static_cast<std::size_t>(rows[i]);
            if (dst >= out_rows)
                throw NumericError("scatter_rows: index " + std::to_string(rows[i]) +
                                   " out of " + std::to_string(out_rows) + " rows");
            for (std::size_t j = 0; j < t.cols(); ++j) out(dst, j) += t(i, j);
        }
        Value h = emplace(Op::scatter_rows, a.id, -1, std::move(out));
        nodes_.back().indices.assign(rows.begin(), rows.end());
        return h;
    }

    Value take_diag(Value a) {
        const Tensor& t = value(a);
        if (t.rows() != t.cols())
            throw NumericError("take_diag: input is " + t.shape_str() + ", expected square");
        Tensor out(t.rows(), 1);
        for (std::size_t i = 0; i < t.rows(); ++i) out(i, 0) = t(i, i);
        return emplace(Op::take_diag, a.id, -1, std::move(out));
    }
    Value put_diag(Value a) {
        const Tensor& t = value(a);
        if (t.cols() != 1)
            throw NumericError("put_diag: input is " + t.shape_str() + ", expected r x 1");
        Tensor out(t.rows(), t.rows());
        for (std::size_t i = 0; i < t.rows(); ++i) out(i, i) = t(i, 0);
        return emplace(Op::put_diag, a.id, -1, std::move(out));
    }

    // ---- composites --------------------------------------------------------

    Value neg(Value a) { return scale(a, -1.0); }
    Value mean_all(Value a) {
        const double n = static_cast<double>(value(a).size());
        return scale(sum_all(a), 1.0 / n);
    }
    Value frobenius_sq(Value a) { return sum_all(hadamard(a, a)); }

    // Row-wise logsumexp with a detached max shift: the shift is exact (lse
    // does not depend on it analytically), so gradients stay correct while
    // exp never overflows.
    Value row_logsumexp(Value a) {
        const Tensor& t = value(a);
        Tensor rmax(t.rows(), 1);
        for (std::size_t i = 0; i < t.rows(); ++i) {
            double m = t(i, 0);
            for (std::size_t j = 1; j < t.cols(); ++j) m = std::max(m, t(i, j));
            rmax(i, 0) = m;
        }
        Value m = constant(std::move(rmax));
        Value shifted = sub(a, broadcast_col(m, t.cols()));
        return add(log(row_sum(exp(shifted))), m);
    }

    // Each row divided by max(||row||, eps); the clamp keeps the zero-row
    // gradient finite (x -> x/eps regime).
    Value l2_normalize_rows(Value a, double eps = 1e-12) {
        Value n2 = row_sum(hadamard(a, a));
        Value norm = sqrt(clamp_min(n2, eps * eps));
        return div(a, broadcast_col(norm, value(a).cols()));
    }

    // ---- reverse mode ------------------------------------------------------

    // Gradients of a scalar loss w.r.t. each entry of `wrt`, emitted as nodes
    // of this graph (so a later backward differentiates through them).
    std::vector<Value> backward_nodes(Value loss, std::span<const Value> wrt) {
        check_mine(loss, "backward");
        {
            const Tensor& lv = value(loss);
            if (lv.rows() != 1 || lv.cols() != 1)
                throw NumericError("backward: loss must be scalar, got " + lv.shape_str());
        }
        for (Value v : wrt) check_mine(v, "backward");

        const std::int32_t top = loss.id;
        std::vector<std::int32_t> adj(static_cast<std::size_t>(top) + 1, -1);
        adj[static_cast<std::size_t>(top)] = constant_scalar(1.0).id;

        auto accum = [&](std::int32_t parent, Value grad) {
            auto& slot = adj[static_cast<std::size_t>(parent)];
            slot = slot < 0 ? grad.id : add(Value{this, slot}, grad).id;
        };

        for (std::int32_t i = top; i >= 0; --i) {
            if (adj[static_cast<std::size_t>(i)] < 0) continue;
            // Copy fields: vjp ops below may reallocate nodes_.
            const Op op = nodes_[static_cast<std::size_t>(i)].op;
            const std::int32_t pa = nodes_[static_cast<std::size_t>(i)].a;
            const std::int32_t pb = nodes_[static_cast<std::size_t>(i)].b;
            const double attr = nodes_[static_cast<std::size_t>(i)].attr;
            const Value g{this, adj[static_cast<std::size_t>(i)]};
            const Value self{this, i};
            const Value va{this, pa};
            const Value vb{this, pb};

            switch (op) {
            case Op::var:
            case Op::cnst:
                break;
            case Op::matmul:
                accum(pa, matmul(g, transpose(vb)));
                accum(pb, matmul(transpose(va), g));
                break;
            case Op::add:
                accum(pa, g);
                accum(pb, g);
                break;
            case Op::sub:
                accum(pa, g);
                accum(pb, scale(g, -1.0));
                break;
            case Op::hadamard:
                accum(pa, hadamard(g, vb));
                accum(pb, hadamard(g, va));
                break;
            case Op::div:
                accum(pa, div(g, vb));
                accum(pb, neg(hadamard(g, div(self, vb))));
                break;
            case Op::scale:
                accum(pa, scale(g, attr));
                break;
            case Op::exp:
                accum(pa, hadamard(g, self));
                break;
            case Op::log:
                accum(pa, div(g, va));
                break;
            case Op::tanh: {
                const Tensor& y = value(self);
                Value ones = constant(Tensor::full(y.rows(), y.cols(), 1.0));
                accum(pa, hadamard(g, sub(ones, hadamard(self, self))));
                break;
            }
            case Op::sqrt:
                accum(pa, scale(div(g, self), 0.5));
                break;
            case Op::clamp_min: {
                // Subgradient: pass-through where the input cleared the floor.
                const Tensor& x = value(va);
                Tensor mask = kern::map(x, [attr](double v) { return v >= attr ? 1.0 : 0.0; });
                accum(pa, hadamard(g, constant(std::move(mask))));
                break;
            }
            case Op::transpose:
                accum(pa, transpose(g));
                break;
            case Op::sum_all: {
                const Tensor& x = value(va);
                accum(pa, broadcast_scalar(g, x.rows(), x.cols()));
                break;
            }
            case Op::row_sum:
                accum(pa, broadcast_col(g, value(va).cols()));
                break;
            case Op::broadcast_scalar:
                accum(pa, sum_all(g));
                break;
            case Op::broadcast_col:
                accum(pa, row_sum(g));
                break;
            case Op::take_rows: {
                std::vector<std::int32_t> idx = nodes_[static_cast<std::size_t>(i)].indices;
                accum(pa, scatter_rows(g, idx, value(va).rows()));
                break;
            }
            case Op::scatter_rows: {
                std::vector<std::int32_t> idx = nodes_[static_cast<std::size_t>(i)].indices;
                accum(pa, take_rows(g, idx));
                break;
            }
            case Op::take_diag:
                accum(pa, put_diag(g));
                break;
            case Op::put_diag:
                accum(pa, take_diag(g));
                break;
            }
        }

        std::vector<Value> out;
        out.reserve(wrt.size());
        for (Value v : wrt) {
            const std::int32_t a =
                v.id <= top ? adj[static_cast<std::size_t>(v.id)] : -1;
            if (a < 0) {
                const Tensor& t = value(v);
                out.push_back(constant(Tensor(t.rows(), t.cols())));
            } else {
                out.push_back(Value{this, a});
            }
        }
        return out;
    }

    // Same, detached to plain tensors (first-order use).
    std::vector<Tensor> backward(Value loss, std::span<const Value> wrt) {
        std::vector<Tensor> out;
        out.reserve(wrt.size());
        for (Value v : backward_nodes(loss, wrt)) out.push_back(value(v));
        return out;
    }

private:
    void check_mine(Value v, const char* op) const {
        if (v.g != this || v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size())
            throw NumericError(std::string(op) + ": value does not belong to this graph");
    }

    static const char* op_name(Op op) {
        switch (op) {
        case Op::var: return "var";
        case Op::cnst: return "const";
        case Op::matmul: return "matmul";
        case Op::add: return "add";
        case Op::sub: return "sub";
        case Op::hadamard: return "hadamard";
        case Op::div: return "div";
        case Op::scale: return "scale";
        case Op::exp: return "exp";
        case Op::log: return "log";
        case Op::tanh: return "tanh";
        case Op::sqrt: return "sqrt";
        case Op::clamp_min: return "clamp_min";
        case Op::transpose: return "transpose";
        case Op::sum_all: return "sum_all";
        case Op::row_sum: return "row_sum";
        case Op::broadcast_scalar: return "broadcast_scalar";
        case Op::broadcast_col: return "broadcast_col";
        case Op::take_rows: return "take_rows";
        case Op::scatter_rows: return "scatter_rows";
        case Op::take_diag: return "take_diag";
        case Op::put_diag: return "put_diag";
        }
        return "?";
    }

    Value emplace(Op op, std::int32_t a, std::int32_t b, Tensor val) {
        if (!val.all_finite())
            throw NumericError(std::string("non-finite value produced by op '") + op_name(op) +
                               "'");
        Node n;
        n.op = op;
        n.a = a;
        n.b = b;
        n.val = std::move(val);
        nodes_.push_back(std::move(n));
        return Value{this, static_cast<std::int32_t>(nodes_.size() - 1)};
    }
    Value emplace2(Op op, Value a, Value b, Tensor val) {
        check_mine(a, op_name(op));
        check_mine(b, op_name(op));
        return emplace(op, a.id, b.id, std::move(val));
    }

    std::vector<Node> nodes_;
    std::vector<std::int32_t> vars_;
};

} // namespace bitraj
