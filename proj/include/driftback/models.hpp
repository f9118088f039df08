#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include "driftback/geometry.hpp"
#include "driftback/mlp.hpp"
#include "driftback/rng.hpp"
#include "driftback/schedule.hpp"

namespace driftback {

/// Global D_z-dimensional latent summarizing one shape; stored as a 1×D_z row.
struct ShapeLatent {
    Tensor z;

    std::size_t dim() const { return z.cols(); }
};

/// Sinusoidal timestep embedding, 1×dim (dim even).
inline Tensor time_embedding(int t, int dim) {
    Tensor e = Tensor::matrix(1, static_cast<std::size_t>(dim));
    const int half = dim / 2;
    for (int i = 0; i < half; ++i) {
        const double w = std::pow(10000.0, -static_cast<double>(i) / std::max(1, half - 1));
        e[static_cast<std::size_t>(2 * i)] = std::sin(t * w);
        e[static_cast<std::size_t>(2 * i + 1)] = std::cos(t * w);
    }
    return e;
}

// ---------------------------------------------------------------------------
// VAE: two hierarchical encoders and one decoder.
//   q_z: per-point net + mean pool + head -> (mu, log-sigma) over D_z
//   q_h: per-point net on (point ⊕ z0), residual on the xyz channels
//   p_d: per-point net on (h ⊕ z0) -> xyz
// ---------------------------------------------------------------------------

// Encoder log-sigma outputs carry a fixed negative offset so sigma starts
// near 0.05 instead of 1; without it the reparameterization noise swamps the
// latents early in training.
inline constexpr double kLogSigmaShift = -3.0;

struct VaeModel {
    int dz = 32;
    Mlp qz_pernet;  // 3 -> 64 -> 64, tanh applied to the final features too
    Mlp qz_head;    // 64 -> 2*dz
    Mlp qh_net;     // (3+dz) -> 64 -> 64 -> 8 (dxyz, mu_f, 4 log-sigmas)
    Mlp pd_net;     // (4+dz) -> 64 -> 3

    std::vector<Tensor*> params() {
        std::vector<Tensor*> out;
        for (Mlp* m : {&qz_pernet, &qz_head, &qh_net, &pd_net})
            for (DenseLayer& l : m->layers) {
                out.push_back(&l.w);
                out.push_back(&l.b);
            }
        return out;
    }
};

inline VaeModel make_vae(int dz, std::uint64_t seed) {
    Rng rng(seed);
    VaeModel v;
    v.dz = dz;
    v.qz_pernet = mlp_make({3, 64, 64}, rng);
    v.qz_head = mlp_make({64, static_cast<std::size_t>(2 * dz)}, rng);
    v.qh_net = mlp_make({static_cast<std::size_t>(3 + dz), 64, 64, 8}, rng);
    v.pd_net = mlp_make({static_cast<std::size_t>(4 + dz), 64, 3}, rng);
    return v;
}

/// Gaussian posterior parameters (mu, log-sigma), both k×d.
struct GaussianPosterior {
    Tensor mu;
    Tensor log_sigma;
};

/// q_z posterior for a cloud. Pure forward path, no recording.
inline GaussianPosterior shape_posterior(const VaeModel& vae, const PointCloud& x) {
    Tensor f = mlp_forward(vae.qz_pernet, x.points);
    for (std::size_t i = 0; i < f.size(); ++i) f[i] = std::tanh(f[i]);
    // canonical-order pooling: exactly permutation invariant
    Tensor pooled = Tape::mean_rows_canonical(f);
    Tensor out = mlp_forward(vae.qz_head, pooled);
    const std::size_t dz = static_cast<std::size_t>(vae.dz);
    GaussianPosterior p;
    p.mu = Tensor::matrix(1, dz);
    p.log_sigma = Tensor::matrix(1, dz);
    for (std::size_t j = 0; j < dz; ++j) {
        p.mu[j] = out[j];
        p.log_sigma[j] = out[dz + j] + kLogSigmaShift;
    }
    if (!p.mu.all_finite() || !p.log_sigma.all_finite())
        throw numeric_error("encode_shape: non-finite activations");
    return p;
}

/// q_h posterior given the shape latent. Residual on xyz keeps the first
/// three latent channels near the input coordinates.
inline GaussianPosterior point_posterior(const VaeModel& vae, const ShapeLatent& z0,
                                         const PointCloud& x) {
    const std::size_t n = x.points.rows();
    const std::size_t dz = static_cast<std::size_t>(vae.dz);
    Tensor in = Tensor::matrix(n, 3 + dz);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < 3; ++j) in.at(i, j) = x.points.at(i, j);
        for (std::size_t j = 0; j < dz; ++j) in.at(i, 3 + j) = z0.z[j];
    }
    Tensor out = mlp_forward(vae.qh_net, in);
    GaussianPosterior p;
    p.mu = Tensor::matrix(n, 4);
    p.log_sigma = Tensor::matrix(n, 4);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < 3; ++j) p.mu.at(i, j) = x.points.at(i, j) + out.at(i, j);
        p.mu.at(i, 3) = out.at(i, 3);
        for (std::size_t j = 0; j < 4; ++j)
            p.log_sigma.at(i, j) = out.at(i, 4 + j) + kLogSigmaShift;
    }
    if (!p.mu.all_finite() || !p.log_sigma.all_finite())
        throw numeric_error("encode_points: non-finite activations");
    return p;
}

/// z0 ~ N(mu, sigma) when a seed is given; posterior mean otherwise.
inline ShapeLatent encode_shape(const VaeModel& vae, const PointCloud& x,
                                std::optional<std::uint64_t> seed = std::nullopt) {
    GaussianPosterior p = shape_posterior(vae, x);
    if (seed) {
        Rng rng(*seed);
        for (std::size_t j = 0; j < p.mu.size(); ++j)
            p.mu[j] += std::exp(p.log_sigma[j]) * rng.normal();
    }
    return ShapeLatent{std::move(p.mu)};
}

inline LatentPoints encode_points(const VaeModel& vae, const ShapeLatent& z0, const PointCloud& x,
                                  std::optional<std::uint64_t> seed = std::nullopt) {
    GaussianPosterior p = point_posterior(vae, z0, x);
    if (seed) {
        Rng rng(*seed);
        for (std::size_t j = 0; j < p.mu.size(); ++j)
            p.mu[j] += std::exp(p.log_sigma[j]) * rng.normal();
    }
    return LatentPoints{std::move(p.mu)};
}

/// p_d(x | z0, h0); deterministic per-point decode.
inline PointCloud decode(const VaeModel& vae, const ShapeLatent& z0, const LatentPoints& h0) {
    const std::size_t n = h0.values.rows();
    const std::size_t dz = static_cast<std::size_t>(vae.dz);
    if (h0.values.cols() != 4) throw dim_error("decode: latent points must be n×4");
    if (z0.z.cols() != dz) throw dim_error("decode: shape latent width mismatch");
    Tensor in = Tensor::matrix(n, 4 + dz);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < 4; ++j) in.at(i, j) = h0.values.at(i, j);
        for (std::size_t j = 0; j < dz; ++j) in.at(i, 4 + j) = z0.z[j];
    }
    Tensor out = mlp_forward(vae.pd_net, in);
    if (!out.all_finite()) throw numeric_error("decode: non-finite output");
    PointCloud c;
    c.points = std::move(out);
    return c;
}

// ---------------------------------------------------------------------------
// Denoisers. ε_h is a shared per-point net over
// (h_t row ⊕ z0 ⊕ t-embedding ⊕ mean-pooled context); the pooled context
// keeps it permutation-equivariant while giving every point a global view.
// ε_z exists for the shape-latent prior; the adaptation loop never calls it.
// ---------------------------------------------------------------------------

struct DenoiserModel {
    int dz = 32;
    int temb_dim = 16;
    int ctx_dim = 16;
    Mlp ctx_net;    // 4 -> ctx_dim (tanh applied, then mean pool)
    Mlp eps_net;    // (4 + dz + temb + ctx) -> 64 -> 64 -> 4
    Mlp eps_z_net;  // (dz + temb) -> 64 -> dz

    std::vector<Tensor*> params() {
        std::vector<Tensor*> out;
        for (Mlp* m : {&ctx_net, &eps_net, &eps_z_net})
            for (DenseLayer& l : m->layers) {
                out.push_back(&l.w);
                out.push_back(&l.b);
            }
        return out;
    }
};

inline DenoiserModel make_denoiser(int dz, std::uint64_t seed) {
    Rng rng(seed);
    DenoiserModel d;
    d.dz = dz;
    d.ctx_net = mlp_make({4, static_cast<std::size_t>(d.ctx_dim)}, rng);
    d.eps_net = mlp_make({static_cast<std::size_t>(4 + dz + d.temb_dim + d.ctx_dim), 64, 64, 4}, rng);
    d.eps_z_net = mlp_make({static_cast<std::size_t>(dz + d.temb_dim), 64,
                            static_cast<std::size_t>(dz)}, rng);
    return d;
}

/// Recorded ε_h application: eps plus the tape and the leaves that vjp can
/// be taken against.
struct EpsRecord {
    Tensor eps;  // n×4
    Tape tape;
    NodeId h_leaf = -1;
    NodeId z_leaf = -1;
    NodeId output = -1;
    std::vector<NodeId> params;  // grad-marked only when params_require_grad
};

/// Builds the ε_h graph. With record=false this is a plain forward pass.
inline EpsRecord denoise_eps_h_record(const DenoiserModel& model, const Tensor& h_t,
                                      const Tensor& z0, int t, bool inputs_require_grad,
                                      bool params_require_grad) {
    if (h_t.rank() != 2 || h_t.cols() != 4) throw dim_error("denoise_eps_h: h_t must be n×4");
    if (z0.rank() != 2 || z0.rows() != 1 || z0.cols() != static_cast<std::size_t>(model.dz))
        throw dim_error("denoise_eps_h: z0 must be 1×dz");
    const std::size_t n = h_t.rows();

    EpsRecord r;
    Tape& tape = r.tape;
    r.h_leaf = tape.leaf(h_t, inputs_require_grad);
    r.z_leaf = tape.leaf(z0, inputs_require_grad);

    // context: mean over points of tanh(ctx_net(h_t))
    NodeId ctx_feat;
    {
        NodeId h = r.h_leaf;
        for (std::size_t l = 0; l < model.ctx_net.layers.size(); ++l) {
            const DenseLayer& layer = model.ctx_net.layers[l];
            NodeId w = params_require_grad ? tape.leaf(layer.w) : tape.constant(layer.w);
            NodeId b = params_require_grad ? tape.leaf(layer.b) : tape.constant(layer.b);
            if (params_require_grad) {
                r.params.push_back(w);
                r.params.push_back(b);
            }
            h = tape.add_bias(tape.matmul(h, w), b);
            if (l + 1 < model.ctx_net.layers.size()) h = tape.tanh_(h);
        }
        ctx_feat = tape.tanh_(h);
    }
    NodeId ctx = tape.mean_rows(ctx_feat);

    NodeId z_b = tape.broadcast_rows(r.z_leaf, n);
    NodeId temb = tape.constant(time_embedding(t, model.temb_dim));
    NodeId temb_b = tape.broadcast_rows(temb, n);
    NodeId ctx_b = tape.broadcast_rows(ctx, n);

    NodeId in = tape.concat_cols(tape.concat_cols(r.h_leaf, z_b), tape.concat_cols(temb_b, ctx_b));

    NodeId h = in;
    for (std::size_t l = 0; l < model.eps_net.layers.size(); ++l) {
        const DenseLayer& layer = model.eps_net.layers[l];
        NodeId w = params_require_grad ? tape.leaf(layer.w) : tape.constant(layer.w);
        NodeId b = params_require_grad ? tape.leaf(layer.b) : tape.constant(layer.b);
        if (params_require_grad) {
            r.params.push_back(w);
            r.params.push_back(b);
        }
        h = tape.add_bias(tape.matmul(h, w), b);
        if (l + 1 < model.eps_net.layers.size()) h = tape.tanh_(h);
    }
    r.output = h;
    r.eps = tape.value(h);
    if (!r.eps.all_finite()) throw numeric_error("denoise_eps_h: non-finite eps");
    return r;
}

/// Per-point noise prediction ε_h(h_t, z0, t), optionally with a tape
/// supporting vjp against h_t and z0.
inline std::pair<LatentPoints, std::optional<EpsRecord>> denoise_eps_h(
    const DenoiserModel& model, const LatentPoints& h_t, const ShapeLatent& z0, int t,
    bool record) {
    EpsRecord r = denoise_eps_h_record(model, h_t.values, z0.z, t, record, false);
    LatentPoints eps{r.eps};
    if (!record) return {std::move(eps), std::nullopt};
    return {std::move(eps), std::move(r)};
}

/// Shape-latent prior ε_z(z_t, t); trainable but unused by adaptation.
inline Tensor denoise_eps_z(const DenoiserModel& model, const Tensor& z_t, int t) {
    Tensor temb = time_embedding(t, model.temb_dim);
    Tensor in = Tensor::matrix(1, z_t.cols() + temb.cols());
    for (std::size_t j = 0; j < z_t.cols(); ++j) in[j] = z_t[j];
    for (std::size_t j = 0; j < temb.cols(); ++j) in[z_t.cols() + j] = temb[j];
    return mlp_forward(model.eps_z_net, in);
}

/// Bayes-optimal ε for x0 ~ N(mu, var·I):
///   x̂0 = (√ᾱ_t·var·x_t + (1−ᾱ_t)·mu)/(ᾱ_t·var + 1−ᾱ_t)
///   ε̂  = (x_t − √ᾱ_t·x̂0)/√(1−ᾱ_t)
inline Tensor oracle_gaussian_eps(const Tensor& mu, double var, const Tensor& x_t, int t,
                                  const NoiseSchedule& sched) {
    if (var < 0.0) throw argument_error("oracle_gaussian_eps: var must be >= 0");
    if (!mu.same_shape(x_t)) throw dim_error("oracle_gaussian_eps: shape mismatch");
    if (t < 1 || t > sched.T) throw argument_error("oracle_gaussian_eps: t out of range");
    const double ab = sched.abar(t);
    const double denom = ab * var + (1.0 - ab);
    if (denom < 1e-300) throw numeric_error("oracle_gaussian_eps: degenerate denominator");
    const double sab = std::sqrt(ab);
    const double snb = std::sqrt(1.0 - ab);
    Tensor eps(x_t.shape());
    for (std::size_t i = 0; i < eps.size(); ++i) {
        const double x0 = (sab * var * x_t[i] + (1.0 - ab) * mu[i]) / denom;
        eps[i] = (x_t[i] - sab * x0) / snb;
    }
    return eps;
}

// ---------------------------------------------------------------------------
// Classifier: per-point net + columnwise max pool + linear head. Max pooling
// makes it exactly permutation invariant.
// ---------------------------------------------------------------------------

struct ClassifierModel {
    int classes = 8;
    Mlp pernet;  // 3 -> 64 -> 64
    Mlp head;    // 64 -> classes

    std::vector<Tensor*> params() {
        std::vector<Tensor*> out;
        for (Mlp* m : {&pernet, &head})
            for (DenseLayer& l : m->layers) {
                out.push_back(&l.w);
                out.push_back(&l.b);
            }
        return out;
    }
};

inline ClassifierModel make_classifier(int classes, std::uint64_t seed) {
    Rng rng(seed);
    ClassifierModel c;
    c.classes = classes;
    c.pernet = mlp_make({3, 64, 64}, rng);
    c.head = mlp_make({64, static_cast<std::size_t>(classes)}, rng);
    return c;
}

struct Classification {
    int label = 0;
    Tensor logits;  // 1×C
};

inline Classification classify(const ClassifierModel& clf, const PointCloud& x) {
    Tensor f = mlp_forward(clf.pernet, x.points);
    for (std::size_t i = 0; i < f.size(); ++i) f[i] = std::tanh(f[i]);
    Tensor pooled = Tensor::matrix(1, f.cols());
    for (std::size_t j = 0; j < f.cols(); ++j) {
        double best = f.at(0, j);
        for (std::size_t i = 1; i < f.rows(); ++i) best = std::max(best, f.at(i, j));
        pooled[j] = best;
    }
    Tensor logits = mlp_forward(clf.head, pooled);
    if (!logits.all_finite()) throw numeric_error("classify: non-finite logits");
    int label = 0;
    for (std::size_t j = 1; j < logits.size(); ++j)
        if (logits[j] > logits[static_cast<std::size_t>(label)]) label = static_cast<int>(j);
    return {label, std::move(logits)};
}

}  // namespace driftback
