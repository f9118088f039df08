#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "driftback/errors.hpp"
#include "driftback/tensor.hpp"

namespace driftback {

using NodeId = std::int32_t;

/// Reverse-mode differentiation tape over a fixed set of primitive ops.
///
/// Every tensor on the tape is rank 2 (row vectors are 1×d, scalars 1×1)
/// except AddBias biases, which are rank 1. Recording is append-only and the
/// backward pass walks nodes in strict reverse order, so replaying forward
/// reproduces values bit-exactly. A tape records one forward computation;
/// vjp() may be called on it any number of times.
class Tape {
public:
    enum class Op : std::uint8_t {
        Leaf,
        Constant,
        MatMul,         // a(n×k) · b(k×m)
        Add,            // same shape
        Sub,
        Mul,            // elementwise
        Scale,          // c * a
        AddBias,        // a(n×c) + b(c), b broadcast over rows
        Tanh,
        Exp,
        Log,
        ConcatCols,     // [a | b]
        SliceCols,      // a[:, lo:hi]
        MeanRows,       // n×c -> 1×c
        BroadcastRows,  // 1×c -> lo rows × c
        SumAll,         // n×c -> 1×1
        MaxRows,        // n×c -> 1×c, columnwise max, ties to lowest row
        SoftmaxXent,    // 1×C logits + label (in lo) -> 1×1 nll
    };

    struct Node {
        Op op;
        NodeId a = -1;
        NodeId b = -1;
        Tensor value;
        double c = 0.0;
        std::size_t lo = 0, hi = 0;
        std::vector<std::uint32_t> argmax;
        bool needs_grad = false;
    };

    NodeId leaf(Tensor t, bool requires_grad = true) {
        Node n;
        n.op = Op::Leaf;
        n.value = std::move(t);
        n.needs_grad = requires_grad;
        return push(std::move(n));
    }

    NodeId constant(Tensor t) { return leaf(std::move(t), false); }

    NodeId matmul(NodeId a, NodeId b) {
        Node n = binary(Op::MatMul, a, b);
        n.value = driftback::matmul(value(a), value(b));
        return push(std::move(n));
    }

    NodeId add(NodeId a, NodeId b) {
        Node n = binary(Op::Add, a, b);
        n.value = value(a) + value(b);
        return push(std::move(n));
    }

    NodeId sub(NodeId a, NodeId b) {
        Node n = binary(Op::Sub, a, b);
        n.value = value(a) - value(b);
        return push(std::move(n));
    }

    NodeId mul(NodeId a, NodeId b) {
        Node n = binary(Op::Mul, a, b);
        const Tensor& ta = value(a);
        const Tensor& tb = value(b);
        if (!ta.same_shape(tb)) throw dim_error("tape mul: shape mismatch");
        Tensor out = ta;
        for (std::size_t i = 0; i < out.size(); ++i) out[i] *= tb[i];
        n.value = std::move(out);
        return push(std::move(n));
    }

    NodeId scale(NodeId a, double c) {
        Node n = unary(Op::Scale, a);
        n.c = c;
        n.value = c * value(a);
        return push(std::move(n));
    }

    NodeId add_bias(NodeId a, NodeId b) {
        Node n = binary(Op::AddBias, a, b);
        const Tensor& ta = value(a);
        const Tensor& tb = value(b);
        if (tb.rank() != 1 || tb.size() != ta.cols())
            throw dim_error("tape add_bias: bias must be rank 1 of width cols(a)");
        Tensor out = ta;
        for (std::size_t i = 0; i < ta.rows(); ++i)
            for (std::size_t j = 0; j < ta.cols(); ++j) out.at(i, j) += tb[j];
        n.value = std::move(out);
        return push(std::move(n));
    }

    NodeId tanh_(NodeId a) {
        Node n = unary(Op::Tanh, a);
        Tensor out = value(a);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(out[i]);
        n.value = std::move(out);
        return push(std::move(n));
    }

    NodeId exp_(NodeId a) {
        Node n = unary(Op::Exp, a);
        Tensor out = value(a);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(out[i]);
        if (!out.all_finite()) throw numeric_error("tape exp: overflow");
        n.value = std::move(out);
        return push(std::move(n));
    }

    NodeId log_(NodeId a) {
        Node n = unary(Op::Log, a);
        Tensor out = value(a);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(out[i]);
        if (!out.all_finite()) throw numeric_error("tape log: domain");
        n.value = std::move(out);
        return push(std::move(n));
    }

    NodeId concat_cols(NodeId a, NodeId b) {
        Node n = binary(Op::ConcatCols, a, b);
        const Tensor& ta = value(a);
        const Tensor& tb = value(b);
        if (ta.rows() != tb.rows()) throw dim_error("tape concat_cols: row counts differ");
        Tensor out = Tensor::matrix(ta.rows(), ta.cols() + tb.cols());
        for (std::size_t i = 0; i < ta.rows(); ++i) {
            for (std::size_t j = 0; j < ta.cols(); ++j) out.at(i, j) = ta.at(i, j);
            for (std::size_t j = 0; j < tb.cols(); ++j) out.at(i, ta.cols() + j) = tb.at(i, j);
        }
        n.value = std::move(out);
        return push(std::move(n));
    }

    NodeId slice_cols(NodeId a, std::size_t lo, std::size_t hi) {
        Node n = unary(Op::SliceCols, a);
        const Tensor& ta = value(a);
        if (lo >= hi || hi > ta.cols()) throw argument_error("tape slice_cols: bad range");
        n.lo = lo;
        n.hi = hi;
        Tensor out = Tensor::matrix(ta.rows(), hi - lo);
        for (std::size_t i = 0; i < ta.rows(); ++i)
            for (std::size_t j = lo; j < hi; ++j) out.at(i, j - lo) = ta.at(i, j);
        n.value = std::move(out);
        return push(std::move(n));
    }

    // Column values are summed in sorted order so the result is exactly
    // invariant under row permutations (the per-row gradient 1/n does not
    // depend on the order, so backward needs nothing extra).
    NodeId mean_rows(NodeId a) {
        Node n = unary(Op::MeanRows, a);
        const Tensor& ta = value(a);
        n.value = mean_rows_canonical(ta);
        return push(std::move(n));
    }

    static Tensor mean_rows_canonical(const Tensor& ta) {
        Tensor out = Tensor::matrix(1, ta.cols());
        std::vector<double> col(ta.rows());
        const double inv = 1.0 / static_cast<double>(ta.rows());
        for (std::size_t j = 0; j < ta.cols(); ++j) {
            for (std::size_t i = 0; i < ta.rows(); ++i) col[i] = ta.at(i, j);
            std::sort(col.begin(), col.end());
            double s = 0.0;
            for (double v : col) s += v;
            out.at(0, j) = s * inv;
        }
        return out;
    }

    NodeId broadcast_rows(NodeId a, std::size_t rows) {
        Node n = unary(Op::BroadcastRows, a);
        const Tensor& ta = value(a);
        if (ta.rows() != 1) throw dim_error("tape broadcast_rows: input must be 1×c");
        n.lo = rows;
        Tensor out = Tensor::matrix(rows, ta.cols());
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < ta.cols(); ++j) out.at(i, j) = ta.at(0, j);
        n.value = std::move(out);
        return push(std::move(n));
    }

    NodeId sum_all(NodeId a) {
        Node n = unary(Op::SumAll, a);
        const Tensor& ta = value(a);
        double s = 0.0;
        for (std::size_t i = 0; i < ta.size(); ++i) s += ta[i];
        n.value = Tensor({1, 1}, {s});
        return push(std::move(n));
    }

    NodeId max_rows(NodeId a) {
        Node n = unary(Op::MaxRows, a);
        const Tensor& ta = value(a);
        Tensor out = Tensor::matrix(1, ta.cols());
        n.argmax.assign(ta.cols(), 0);
        for (std::size_t j = 0; j < ta.cols(); ++j) {
            double best = ta.at(0, j);
            std::uint32_t bi = 0;
            for (std::size_t i = 1; i < ta.rows(); ++i) {
                if (ta.at(i, j) > best) {
                    best = ta.at(i, j);
                    bi = static_cast<std::uint32_t>(i);
                }
            }
            out.at(0, j) = best;
            n.argmax[j] = bi;
        }
        n.value = std::move(out);
        return push(std::move(n));
    }

    NodeId softmax_xent(NodeId logits, std::size_t label) {
        Node n = unary(Op::SoftmaxXent, logits);
        const Tensor& t = value(logits);
        if (t.rows() != 1) throw dim_error("tape softmax_xent: logits must be 1×C");
        if (label >= t.cols()) throw argument_error("tape softmax_xent: label out of range");
        n.lo = label;
        double m = t[0];
        for (std::size_t j = 1; j < t.cols(); ++j) m = std::max(m, t[j]);
        double z = 0.0;
        for (std::size_t j = 0; j < t.cols(); ++j) z += std::exp(t[j] - m);
        n.value = Tensor({1, 1}, {std::log(z) + m - t[label]});
        return push(std::move(n));
    }

    const Tensor& value(NodeId id) const { return nodes_.at(static_cast<std::size_t>(id)).value; }

    std::size_t size() const { return nodes_.size(); }

    bool is_leaf(NodeId id) const {
        const Node& n = nodes_.at(static_cast<std::size_t>(id));
        return n.op == Op::Leaf || n.op == Op::Constant;
    }

    /// cotangentᵀ · ∂value(output)/∂value(wrt). wrt must be a grad-marked leaf.
    Tensor vjp(NodeId output, const Tensor& cotangent, NodeId wrt) const {
        std::vector<Tensor> g = grads(output, cotangent, {wrt});
        return std::move(g[0]);
    }

    /// One backward pass, returning adjoints for each requested leaf.
    std::vector<Tensor> grads(NodeId output, const Tensor& cotangent,
                              const std::vector<NodeId>& wrts) const {
        for (NodeId w : wrts) {
            if (w < 0 || static_cast<std::size_t>(w) >= nodes_.size() || !is_leaf(w) ||
                !nodes_[static_cast<std::size_t>(w)].needs_grad)
                throw argument_error("vjp: wrt is not a grad-marked leaf on this tape");
        }
        const Node& out_node = nodes_.at(static_cast<std::size_t>(output));
        if (!cotangent.same_shape(out_node.value))
            throw dim_error("vjp: cotangent shape differs from recorded output shape");

        std::vector<Tensor> adj(static_cast<std::size_t>(output) + 1);
        std::vector<char> has(static_cast<std::size_t>(output) + 1, 0);
        adj[static_cast<std::size_t>(output)] = cotangent;
        has[static_cast<std::size_t>(output)] = 1;

        for (NodeId id = output; id >= 0; --id) {
            const std::size_t ui = static_cast<std::size_t>(id);
            if (!has[ui]) continue;
            const Node& n = nodes_[ui];
            if (!n.needs_grad) continue;
            backprop_one(n, adj[ui], adj, has);
        }

        std::vector<Tensor> out;
        out.reserve(wrts.size());
        for (NodeId w : wrts) {
            const std::size_t wi = static_cast<std::size_t>(w);
            if (wi < has.size() && has[wi])
                out.push_back(adj[wi]);
            else
                out.push_back(Tensor::zeros(nodes_[wi].value.shape()));
        }
        return out;
    }

    /// Recompute every node from the leaves with the same kernels and check
    /// the stored values bit-for-bit.
    bool replay_matches() const {
        Tape fresh;
        std::vector<NodeId> map(nodes_.size());
        for (std::size_t i = 0; i < nodes_.size(); ++i) {
            const Node& n = nodes_[i];
            NodeId a = n.a >= 0 ? map[static_cast<std::size_t>(n.a)] : -1;
            NodeId b = n.b >= 0 ? map[static_cast<std::size_t>(n.b)] : -1;
            NodeId id;
            switch (n.op) {
                case Op::Leaf: id = fresh.leaf(n.value, n.needs_grad); break;
                case Op::Constant: id = fresh.constant(n.value); break;
                case Op::MatMul: id = fresh.matmul(a, b); break;
                case Op::Add: id = fresh.add(a, b); break;
                case Op::Sub: id = fresh.sub(a, b); break;
                case Op::Mul: id = fresh.mul(a, b); break;
                case Op::Scale: id = fresh.scale(a, n.c); break;
                case Op::AddBias: id = fresh.add_bias(a, b); break;
                case Op::Tanh: id = fresh.tanh_(a); break;
                case Op::Exp: id = fresh.exp_(a); break;
                case Op::Log: id = fresh.log_(a); break;
                case Op::ConcatCols: id = fresh.concat_cols(a, b); break;
                case Op::SliceCols: id = fresh.slice_cols(a, n.lo, n.hi); break;
                case Op::MeanRows: id = fresh.mean_rows(a); break;
                case Op::BroadcastRows: id = fresh.broadcast_rows(a, n.lo); break;
                case Op::SumAll: id = fresh.sum_all(a); break;
                case Op::MaxRows: id = fresh.max_rows(a); break;
                case Op::SoftmaxXent:
                    id = fresh.softmax_xent(a, n.lo);
                    break;
                default: return false;
            }
            map[i] = id;
            const Tensor& v0 = n.value;
            const Tensor& v1 = fresh.value(id);
            if (!v0.same_shape(v1)) return false;
            for (std::size_t k = 0; k < v0.size(); ++k)
                if (v0[k] != v1[k]) return false;
        }
        return true;
    }

private:
    Node binary(Op op, NodeId a, NodeId b) {
        Node n;
        n.op = op;
        n.a = a;
        n.b = b;
        n.needs_grad = needs(a) || needs(b);
        return n;
    }

    Node unary(Op op, NodeId a) {
        Node n;
        n.op = op;
        n.a = a;
        n.needs_grad = needs(a);
        return n;
    }

    bool needs(NodeId id) const { return nodes_.at(static_cast<std::size_t>(id)).needs_grad; }

    NodeId push(Node n) {
        nodes_.push_back(std::move(n));
        return static_cast<NodeId>(nodes_.size() - 1);
    }

    void accumulate(std::vector<Tensor>& adj, std::vector<char>& has, NodeId target,
                    Tensor g) const {
        const Node& t = nodes_[static_cast<std::size_t>(target)];
        if (!t.needs_grad) return;
        const std::size_t ti = static_cast<std::size_t>(target);
        if (!has[ti]) {
            adj[ti] = std::move(g);
            has[ti] = 1;
        } else {
            Tensor& acc = adj[ti];
            for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g[i];
        }
    }

    void backprop_one(const Node& n, const Tensor& g, std::vector<Tensor>& adj,
                      std::vector<char>& has) const {
        switch (n.op) {
            case Op::Leaf:
            case Op::Constant:
                break;
            case Op::MatMul: {
                // dA = G·Bᵀ, dB = Aᵀ·G
                accumulate(adj, has, n.a, matmul_nt(g, value(n.b)));
                accumulate(adj, has, n.b, matmul_tn(value(n.a), g));
                break;
            }
            case Op::Add:
                accumulate(adj, has, n.a, g);
                accumulate(adj, has, n.b, g);
                break;
            case Op::Sub: {
                accumulate(adj, has, n.a, g);
                accumulate(adj, has, n.b, -1.0 * g);
                break;
            }
            case Op::Mul: {
                const Tensor& ta = value(n.a);
                const Tensor& tb = value(n.b);
                Tensor ga = g;
                for (std::size_t i = 0; i < ga.size(); ++i) ga[i] *= tb[i];
                Tensor gb = g;
                for (std::size_t i = 0; i < gb.size(); ++i) gb[i] *= ta[i];
                accumulate(adj, has, n.a, std::move(ga));
                accumulate(adj, has, n.b, std::move(gb));
                break;
            }
            case Op::Scale:
                accumulate(adj, has, n.a, n.c * g);
                break;
            case Op::AddBias: {
                accumulate(adj, has, n.a, g);
                const Tensor& tb = value(n.b);
                Tensor gb(tb.shape());
                for (std::size_t i = 0; i < g.rows(); ++i)
                    for (std::size_t j = 0; j < g.cols(); ++j) gb[j] += g.at(i, j);
                accumulate(adj, has, n.b, std::move(gb));
                break;
            }
            case Op::Tanh: {
                Tensor ga = g;
                for (std::size_t i = 0; i < ga.size(); ++i) {
                    const double y = n.value[i];
                    ga[i] *= 1.0 - y * y;
                }
                accumulate(adj, has, n.a, std::move(ga));
                break;
            }
            case Op::Exp: {
                Tensor ga = g;
                for (std::size_t i = 0; i < ga.size(); ++i) ga[i] *= n.value[i];
                accumulate(adj, has, n.a, std::move(ga));
                break;
            }
            case Op::Log: {
                const Tensor& ta = value(n.a);
                Tensor ga = g;
                for (std::size_t i = 0; i < ga.size(); ++i) ga[i] /= ta[i];
                accumulate(adj, has, n.a, std::move(ga));
                break;
            }
            case Op::ConcatCols: {
                const Tensor& ta = value(n.a);
                const Tensor& tb = value(n.b);
                Tensor ga = Tensor::matrix(ta.rows(), ta.cols());
                Tensor gb = Tensor::matrix(tb.rows(), tb.cols());
                for (std::size_t i = 0; i < ta.rows(); ++i) {
                    for (std::size_t j = 0; j < ta.cols(); ++j) ga.at(i, j) = g.at(i, j);
                    for (std::size_t j = 0; j < tb.cols(); ++j)
                        gb.at(i, j) = g.at(i, ta.cols() + j);
                }
                accumulate(adj, has, n.a, std::move(ga));
                accumulate(adj, has, n.b, std::move(gb));
                break;
            }
            case Op::SliceCols: {
                const Tensor& ta = value(n.a);
                Tensor ga = Tensor::matrix(ta.rows(), ta.cols());
                for (std::size_t i = 0; i < ta.rows(); ++i)
                    for (std::size_t j = n.lo; j < n.hi; ++j) ga.at(i, j) = g.at(i, j - n.lo);
                accumulate(adj, has, n.a, std::move(ga));
                break;
            }
            case Op::MeanRows: {
                const Tensor& ta = value(n.a);
                const double inv = 1.0 / static_cast<double>(ta.rows());
                Tensor ga = Tensor::matrix(ta.rows(), ta.cols());
                for (std::size_t i = 0; i < ta.rows(); ++i)
                    for (std::size_t j = 0; j < ta.cols(); ++j) ga.at(i, j) = g.at(0, j) * inv;
                accumulate(adj, has, n.a, std::move(ga));
                break;
            }
            case Op::BroadcastRows: {
                Tensor ga = Tensor::matrix(1, g.cols());
                for (std::size_t i = 0; i < g.rows(); ++i)
                    for (std::size_t j = 0; j < g.cols(); ++j) ga.at(0, j) += g.at(i, j);
                accumulate(adj, has, n.a, std::move(ga));
                break;
            }
            case Op::SumAll: {
                const Tensor& ta = value(n.a);
                Tensor ga(ta.shape());
                for (std::size_t i = 0; i < ga.size(); ++i) ga[i] = g[0];
                accumulate(adj, has, n.a, std::move(ga));
                break;
            }
            case Op::MaxRows: {
                const Tensor& ta = value(n.a);
                Tensor ga = Tensor::matrix(ta.rows(), ta.cols());
                for (std::size_t j = 0; j < ta.cols(); ++j)
                    ga.at(n.argmax[j], j) = g.at(0, j);
                accumulate(adj, has, n.a, std::move(ga));
                break;
            }
            case Op::SoftmaxXent: {
                const Tensor& t = value(n.a);
                double m = t[0];
                for (std::size_t j = 1; j < t.cols(); ++j) m = std::max(m, t[j]);
                double z = 0.0;
                for (std::size_t j = 0; j < t.cols(); ++j) z += std::exp(t[j] - m);
                Tensor ga = Tensor::matrix(1, t.cols());
                for (std::size_t j = 0; j < t.cols(); ++j) {
                    double p = std::exp(t[j] - m) / z;
                    ga[j] = g[0] * (p - (j == n.lo ? 1.0 : 0.0));
                }
                accumulate(adj, has, n.a, std::move(ga));
                break;
            }
        }
    }

    std::vector<Node> nodes_;
};

}  // namespace driftback
