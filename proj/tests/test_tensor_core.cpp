#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "driftback/mlp.hpp"
#include "driftback/rng.hpp"
#include "driftback/tape.hpp"
#include "driftback/tensor.hpp"

using namespace driftback;

namespace {

// Central finite differences of u·f(leaf) against a tape-building callback.
// Rebuilds the graph per probe so every op's forward path is exercised.
template <typename BuildFn>
Tensor fd_grad(BuildFn build, const Tensor& leaf_value, const Tensor& cotangent,
               double step = 1e-5) {
    Tensor g(leaf_value.shape());
    for (std::size_t i = 0; i < leaf_value.size(); ++i) {
        Tensor hi = leaf_value, lo = leaf_value;
        hi[i] += step;
        lo[i] -= step;
        const Tensor fhi = build(hi);
        const Tensor flo = build(lo);
        g[i] = (dot(cotangent, fhi) - dot(cotangent, flo)) / (2.0 * step);
    }
    return g;
}

void check_close_rel(const Tensor& got, const Tensor& want, double rtol, double atol) {
    REQUIRE(got.same_shape(want));
    for (std::size_t i = 0; i < got.size(); ++i) {
        const double scale = std::max(std::abs(got[i]), std::abs(want[i]));
        REQUIRE(std::abs(got[i] - want[i]) <= rtol * scale + atol);
    }
}

Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng, double magnitude) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-magnitude, magnitude);
    return t;
}

}  // namespace

TEST_CASE("mlp_apply: zero params annihilate", "[tensor_core]") {
    Rng rng(0);
    Mlp m = mlp_make({3, 4, 2}, rng);
    for (auto& l : m.layers) {
        for (std::size_t i = 0; i < l.w.size(); ++i) l.w[i] = 0.0;
        for (std::size_t i = 0; i < l.b.size(); ++i) l.b[i] = 0.0;
    }
    Tensor x({2, 3}, {1.0, -2.0, 3.0, 0.5, 0.25, -0.125});
    auto [y, tape] = mlp_apply(m, x, false);
    for (std::size_t i = 0; i < y.size(); ++i) REQUIRE(y[i] == 0.0);
}

TEST_CASE("mlp_apply: identity layer passes input through", "[tensor_core]") {
    Mlp m;
    DenseLayer l;
    l.w = Tensor::matrix(3, 3);
    for (std::size_t i = 0; i < 3; ++i) l.w.at(i, i) = 1.0;
    l.b = Tensor({3});
    m.layers.push_back(l);  // single layer => linear output
    Tensor v({1, 3}, {0.7, -1.3, 2.9});
    auto [y, tape] = mlp_apply(m, v, false);
    for (std::size_t i = 0; i < 3; ++i) REQUIRE(y[i] == v[i]);
}

TEST_CASE("mlp_apply: seed-7 net matches straight-line oracle", "[tensor_core]") {
    Rng rng(7);
    Mlp m = mlp_make({3, 5, 2}, rng);
    Tensor x({1, 3}, {0.3, -0.6, 0.9});

    auto [y, mt] = mlp_apply(m, x, true);

    // Independent re-computation with plain index loops.
    std::vector<double> h(5, 0.0);
    for (std::size_t j = 0; j < 5; ++j) {
        double s = m.layers[0].b[j];
        for (std::size_t i = 0; i < 3; ++i) s += x[i] * m.layers[0].w.at(i, j);
        h[j] = std::tanh(s);
    }
    std::vector<double> out(2, 0.0);
    for (std::size_t j = 0; j < 2; ++j) {
        double s = m.layers[1].b[j];
        for (std::size_t i = 0; i < 5; ++i) s += h[i] * m.layers[1].w.at(i, j);
        out[j] = s;
    }

    REQUIRE(y.size() == 2);
    for (std::size_t j = 0; j < 2; ++j)
        REQUIRE(std::abs(y[j] - out[j]) < 1e-14);

    REQUIRE(mt.has_value());
    REQUIRE(mt->tape.replay_matches());
}

TEST_CASE("mlp_apply: shape mismatch raises dimension error", "[tensor_core]") {
    Rng rng(1);
    Mlp m = mlp_make({3, 4}, rng);
    Tensor x({1, 5});
    REQUIRE_THROWS_AS(mlp_apply(m, x, false), dim_error);
}

TEST_CASE("mlp_apply is deterministic bit-for-bit", "[tensor_core]") {
    Rng rng(21);
    Mlp m = mlp_make({4, 6, 6, 3}, rng);
    Tensor x = random_tensor({5, 4}, rng, 2.0);
    auto [y1, t1] = mlp_apply(m, x, false);
    auto [y2, t2] = mlp_apply(m, x, false);
    for (std::size_t i = 0; i < y1.size(); ++i) REQUIRE(y1[i] == y2[i]);
}

TEST_CASE("vjp: linear map gives transpose action", "[tensor_core]") {
    Tensor w({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor x({1, 2}, {0.5, -1.5});
    Tape tape;
    NodeId xi = tape.leaf(x);
    NodeId wi = tape.constant(w);
    NodeId y = tape.matmul(xi, wi);
    Tensor u({1, 3}, {1.0, -2.0, 0.5});
    Tensor g = tape.vjp(y, u, xi);
    // Wᵀu with y = xW: dx = u·Wᵀ
    REQUIRE(g.size() == 2);
    REQUIRE(g[0] == Catch::Approx(1 * 1.0 + 2 * -2.0 + 3 * 0.5).margin(1e-15));
    REQUIRE(g[1] == Catch::Approx(4 * 1.0 + 5 * -2.0 + 6 * 0.5).margin(1e-15));
}

TEST_CASE("vjp: sum reduction backpropagates ones", "[tensor_core]") {
    Tensor x({2, 3}, {1, 2, 3, 4, 5, 6});
    Tape tape;
    NodeId xi = tape.leaf(x);
    NodeId s = tape.sum_all(xi);
    Tensor g = tape.vjp(s, Tensor({1, 1}, {1.0}), xi);
    for (std::size_t i = 0; i < 6; ++i) REQUIRE(g[i] == 1.0);
}

TEST_CASE("vjp: unknown leaf raises argument error", "[tensor_core]") {
    Tape tape;
    NodeId xi = tape.leaf(Tensor({1, 2}, {1.0, 2.0}));
    NodeId c = tape.constant(Tensor({1, 2}, {3.0, 4.0}));
    NodeId y = tape.add(xi, c);
    REQUIRE_THROWS_AS(tape.vjp(y, Tensor({1, 2}, {1.0, 1.0}), c), argument_error);
    REQUIRE_THROWS_AS(tape.vjp(y, Tensor({1, 2}, {1.0, 1.0}), y), argument_error);
}

TEST_CASE("vjp: 2-layer MLP matches finite differences (seed 11)", "[tensor_core]") {
    Rng rng(11);
    Mlp m = mlp_make({4, 6, 3}, rng);
    Tensor x = random_tensor({2, 4}, rng, 1.0);
    Tensor u = random_tensor({2, 3}, rng, 1.0);

    auto [y, mt] = mlp_apply(m, x, true);
    REQUIRE(mt.has_value());
    Tensor g = mt->tape.vjp(mt->output, u, mt->input);

    Tensor fd = fd_grad([&](const Tensor& probe) { return mlp_forward(m, probe); }, x, u);
    check_close_rel(g, fd, 1e-4, 1e-8);
}

TEST_CASE("vjp matches finite differences over 50 random nets", "[tensor_core]") {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        Rng rng(1000 + seed);
        const std::size_t in = 1 + rng.index(4);
        const std::size_t hidden = 2 + rng.index(5);
        const std::size_t out = 1 + rng.index(3);
        const std::size_t n = 1 + rng.index(3);
        Mlp m = mlp_make({in, hidden, out}, rng);
        // Inputs of magnitude up to 10 per the module contract.
        Tensor x = random_tensor({n, in}, rng, 10.0);
        Tensor u = random_tensor({n, out}, rng, 1.0);

        auto [y, mt] = mlp_apply(m, x, true);
        Tensor gx = mt->tape.vjp(mt->output, u, mt->input);
        Tensor fdx = fd_grad([&](const Tensor& probe) { return mlp_forward(m, probe); }, x, u);
        check_close_rel(gx, fdx, 1e-4, 1e-7);

        // Also check a weight leaf: grads must flow to parameters.
        Tensor gw = mt->tape.vjp(mt->output, u, mt->params[0]);
        Tensor fdw = fd_grad(
            [&](const Tensor& probe) {
                Mlp mm = m;
                mm.layers[0].w = probe;
                return mlp_forward(mm, x);
            },
            m.layers[0].w, u);
        check_close_rel(gw, fdw, 1e-4, 1e-7);
    }
}

TEST_CASE("every tape op passes a finite-difference check", "[tensor_core]") {
    // One composite graph touching all primitive ops, differentiated against
    // both matrix leaves over repeated seeds.
    auto build = [](const Tensor& xa, const Tensor& xb, std::size_t label) {
        Tape tape;
        NodeId a = tape.leaf(xa);  // 3×4
        NodeId b = tape.leaf(xb);  // 4×3
        NodeId mm = tape.matmul(a, b);                       // 3×3
        NodeId bias = tape.constant(Tensor({3}, {0.1, -0.2, 0.3}));
        NodeId ab = tape.add_bias(mm, bias);                 // 3×3
        NodeId th = tape.tanh_(ab);                          // 3×3
        NodeId sc = tape.scale(th, 0.5);
        NodeId ex = tape.exp_(sc);
        NodeId lg = tape.log_(ex);                           // = sc
        NodeId cc = tape.concat_cols(th, lg);                // 3×6
        NodeId sl = tape.slice_cols(cc, 1, 4);               // 3×3
        NodeId mr = tape.mean_rows(cc);                      // 1×6
        NodeId br = tape.broadcast_rows(mr, 3);              // 3×6
        NodeId mx = tape.max_rows(cc);                       // 1×6
        NodeId df = tape.sub(br, cc);                        // 3×6
        NodeId pr = tape.mul(df, df);                        // 3×6
        NodeId s1 = tape.sum_all(pr);
        NodeId s2 = tape.sum_all(tape.mul(sl, sl));
        NodeId xe = tape.softmax_xent(mx, label);            // uses 1×6 logits
        NodeId s3 = tape.sum_all(tape.add(s1, s2));
        NodeId total = tape.add(s3, xe);                     // 1×1
        return std::tuple<Tape, NodeId, NodeId, NodeId>{std::move(tape), total, a, b};
    };

    const Tensor one({1, 1}, {1.0});
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        Rng rng(7000 + seed);
        Tensor xa = random_tensor({3, 4}, rng, 1.5);
        Tensor xb = random_tensor({4, 3}, rng, 1.5);
        const std::size_t label = rng.index(6);

        auto [tape, out, la, lb] = build(xa, xb, label);
        Tensor ga = tape.grads(out, one, {la})[0];
        Tensor gb = tape.grads(out, one, {lb})[0];

        auto eval_a = [&](const Tensor& probe) {
            auto [t2, o2, a2, b2] = build(probe, xb, label);
            return t2.value(o2);
        };
        auto eval_b = [&](const Tensor& probe) {
            auto [t2, o2, a2, b2] = build(xa, probe, label);
            return t2.value(o2);
        };
        check_close_rel(ga, fd_grad(eval_a, xa, one), 1e-4, 1e-7);
        check_close_rel(gb, fd_grad(eval_b, xb, one), 1e-4, 1e-7);
    }
}

TEST_CASE("vjp is linear in the cotangent", "[tensor_core]") {
    Rng rng(33);
    Mlp m = mlp_make({3, 5, 4}, rng);
    Tensor x = random_tensor({2, 3}, rng, 3.0);
    auto [y, mt] = mlp_apply(m, x, true);

    Tensor u = random_tensor({2, 4}, rng, 1.0);
    Tensor v = random_tensor({2, 4}, rng, 1.0);
    const double a = 0.7, b = -1.9;

    Tensor uv(u.shape());
    for (std::size_t i = 0; i < uv.size(); ++i) uv[i] = a * u[i] + b * v[i];

    Tensor g_uv = mt->tape.vjp(mt->output, uv, mt->input);
    Tensor g_u = mt->tape.vjp(mt->output, u, mt->input);
    Tensor g_v = mt->tape.vjp(mt->output, v, mt->input);

    for (std::size_t i = 0; i < g_uv.size(); ++i)
        REQUIRE(std::abs(g_uv[i] - (a * g_u[i] + b * g_v[i])) < 1e-10);
}

TEST_CASE("cotangent shape must match output shape", "[tensor_core]") {
    Rng rng(5);
    Mlp m = mlp_make({2, 3}, rng);
    Tensor x = random_tensor({1, 2}, rng, 1.0);
    auto [y, mt] = mlp_apply(m, x, true);
    REQUIRE_THROWS_AS(mt->tape.vjp(mt->output, Tensor({1, 2}, {1.0, 1.0}), mt->input), dim_error);
}

TEST_CASE("DBT1 tensor record round-trips bit-exactly", "[tensor_core]") {
    Rng rng(99);
    Tensor t = random_tensor({3, 4}, rng, 100.0);
    t[5] = -0.0;
    t[7] = 1e-308;
    const std::string path = "dbt1_roundtrip.bin";
    save_tensor(t, path);
    Tensor r = load_tensor(path);
    REQUIRE(r.shape() == t.shape());
    for (std::size_t i = 0; i < t.size(); ++i) {
        std::uint64_t a, b;
        std::memcpy(&a, &t[i], 8);
        std::memcpy(&b, &r[i], 8);
        REQUIRE(a == b);
    }
    std::remove(path.c_str());
}

TEST_CASE("tensor invariants: shape/data length checked", "[tensor_core]") {
    REQUIRE_THROWS_AS(Tensor({2, 3}, {1.0, 2.0}), dim_error);
    Tensor t({2, 2}, {1, 2, 3, 4});
    REQUIRE_THROWS_AS(t.reshaped({3, 2}), dim_error);
    REQUIRE(t.reshaped({4}).shape() == std::vector<std::size_t>{4});
}
