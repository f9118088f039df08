#pragma once

#include <optional>
#include <vector>

#include "driftback/rng.hpp"
#include "driftback/tape.hpp"
#include "driftback/tensor.hpp"

namespace driftback {

struct DenseLayer {
    Tensor w;  // in × out
    Tensor b;  // rank-1, out
};

/// Fixed-activation MLP: tanh between layers, linear output.
struct Mlp {
    std::vector<DenseLayer> layers;

    std::size_t in_dim() const { return layers.front().w.rows(); }
    std::size_t out_dim() const { return layers.back().w.cols(); }
};

/// He/Xavier-style init: w ~ N(0, 1/√fan_in), b = 0.
inline Mlp mlp_make(const std::vector<std::size_t>& dims, Rng& rng) {
    if (dims.size() < 2) throw argument_error("mlp_make: need at least input and output dims");
    Mlp m;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        DenseLayer layer;
        layer.w = Tensor::matrix(dims[l], dims[l + 1]);
        const double s = 1.0 / std::sqrt(static_cast<double>(dims[l]));
        for (std::size_t i = 0; i < layer.w.size(); ++i) layer.w[i] = s * rng.normal();
        layer.b = Tensor({dims[l + 1]});
        m.layers.push_back(std::move(layer));
    }
    return m;
}

/// Forward pass without recording; x is n×in, result n×out.
inline Tensor mlp_forward(const Mlp& m, const Tensor& x) {
    Tensor h = x;
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
        const DenseLayer& layer = m.layers[l];
        if (h.cols() != layer.w.rows()) throw dim_error("mlp_forward: layer shapes do not chain");
        Tensor z = matmul(h, layer.w);
        for (std::size_t i = 0; i < z.rows(); ++i)
            for (std::size_t j = 0; j < z.cols(); ++j) z.at(i, j) += layer.b[j];
        if (l + 1 < m.layers.size())
            for (std::size_t i = 0; i < z.size(); ++i) z[i] = std::tanh(z[i]);
        h = std::move(z);
    }
    return h;
}

/// Records the same computation on a tape. Parameter leaf ids are appended to
/// param_leaves in (w0, b0, w1, b1, ...) order when requested.
inline NodeId mlp_record(const Mlp& m, Tape& tape, NodeId x,
                         std::vector<NodeId>* param_leaves = nullptr) {
    NodeId h = x;
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
        const DenseLayer& layer = m.layers[l];
        NodeId w = tape.leaf(layer.w);
        NodeId b = tape.leaf(layer.b);
        if (param_leaves) {
            param_leaves->push_back(w);
            param_leaves->push_back(b);
        }
        h = tape.add_bias(tape.matmul(h, w), b);
        if (l + 1 < m.layers.size()) h = tape.tanh_(h);
    }
    return h;
}

/// Recorded MLP application: the tape, the input leaf, parameter leaves, and
/// the output node, ready for vjp against any of them.
struct MlpTape {
    Tape tape;
    NodeId input = -1;
    std::vector<NodeId> params;
    NodeId output = -1;
};

inline std::pair<Tensor, std::optional<MlpTape>> mlp_apply(const Mlp& m, const Tensor& input,
                                                           bool record) {
    if (!record) return {mlp_forward(m, input), std::nullopt};
    MlpTape mt;
    mt.input = mt.tape.leaf(input);
    mt.output = mlp_record(m, mt.tape, mt.input, &mt.params);
    return {mt.tape.value(mt.output), std::move(mt)};
}

}  // namespace driftback
