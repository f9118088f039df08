#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <vector>

#include "driftback/models.hpp"
#include "driftback/schedule.hpp"
#include "driftback/synthetic.hpp"

namespace driftback {

struct TrainConfig {
    int epochs = 200;
    int batch_size = 16;
    double lr = 1e-3;
    double momentum = 0.9;
    double gamma_z = 1e-3;
    double gamma_h = 1e-3;
    std::uint64_t seed = 0;
    // Rows sampled per cloud per step; 0 trains on full clouds. Per-point
    // nets pool consistently over subsets, so this is plain SGD noise.
    std::size_t points_per_step = 256;
    bool train_shape_prior = true;  // stage 2 only

    void validate() const {
        if (epochs < 1 || batch_size < 1) throw argument_error("train config: positive counts required");
        if (gamma_z < 0 || gamma_h < 0) throw argument_error("train config: KL weights must be >= 0");
        if (!(lr > 0)) throw argument_error("train config: lr must be positive");
    }
};

namespace train_detail {

struct MomentumSgd {
    double lr;
    double momentum;
    std::vector<Tensor> velocity;

    MomentumSgd(double lr_, double momentum_, const std::vector<Tensor*>& params)
        : lr(lr_), momentum(momentum_) {
        velocity.reserve(params.size());
        for (const Tensor* p : params) velocity.emplace_back(p->shape());
    }

    void step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads) {
        for (std::size_t k = 0; k < params.size(); ++k) {
            Tensor& v = velocity[k];
            Tensor& p = *params[k];
            const Tensor& g = grads[k];
            for (std::size_t i = 0; i < p.size(); ++i) {
                v[i] = momentum * v[i] + g[i];
                p[i] -= lr * v[i];
            }
        }
    }
};

inline std::vector<Tensor> zeros_like(const std::vector<Tensor*>& params) {
    std::vector<Tensor> out;
    out.reserve(params.size());
    for (const Tensor* p : params) out.emplace_back(p->shape());
    return out;
}

inline void accumulate(std::vector<Tensor>& acc, const std::vector<Tensor>& g, double w) {
    for (std::size_t k = 0; k < acc.size(); ++k)
        for (std::size_t i = 0; i < acc[k].size(); ++i) acc[k][i] += w * g[k][i];
}

inline Tensor subsample_rows(const Tensor& pts, std::size_t m, Rng& rng) {
    if (m == 0 || m >= pts.rows()) return pts;
    std::vector<std::size_t> idx = rng.sample_without_replacement(pts.rows(), m);
    Tensor out = Tensor::matrix(m, pts.cols());
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < pts.cols(); ++j) out.at(i, j) = pts.at(idx[i], j);
    return out;
}

inline NodeId record_mlp_with_params(const Mlp& m, Tape& tape, NodeId x,
                                     std::vector<NodeId>& params) {
    return mlp_record(m, tape, x, &params);
}

// KL(N(mu, sigma) || N(0, I)) summed over dims, built on the tape from the
// mu and log-sigma nodes: 0.5*sum(mu^2) + 0.5*sum(sigma^2) - D/2 - sum(s).
inline NodeId kl_node(Tape& tape, NodeId mu, NodeId log_sigma, std::size_t dims) {
    NodeId mu2 = tape.sum_all(tape.mul(mu, mu));
    NodeId sig2 = tape.sum_all(tape.exp_(tape.scale(log_sigma, 2.0)));
    NodeId ssum = tape.sum_all(log_sigma);
    NodeId half = tape.scale(tape.add(mu2, sig2), 0.5);
    NodeId shifted = tape.sub(half, tape.constant(Tensor({1, 1}, {0.5 * static_cast<double>(dims)})));
    return tape.sub(shifted, ssum);
}

}  // namespace train_detail

struct VaeTrainResult {
    VaeModel model;
    std::vector<double> epoch_loss;
    std::vector<double> epoch_recon;
};

/// Stage 1: maximize the ELBO = Gaussian log-likelihood (row-aligned MSE)
/// minus γ_z/γ_h weighted KLs. Seed-deterministic. epoch_hook, when set, is
/// called with the model state after every epoch.
inline VaeTrainResult train_vae(
    const std::vector<LabeledCloud>& corpus, const TrainConfig& cfg,
    const std::function<void(int, const VaeModel&)>& epoch_hook = {}) {
    cfg.validate();
    if (corpus.empty()) throw argument_error("train_vae: empty corpus");

    VaeTrainResult res;
    res.model = make_vae(32, Rng(cfg.seed).derive(1).raw());
    VaeModel& vae = res.model;
    std::vector<Tensor*> params = vae.params();
    train_detail::MomentumSgd opt(cfg.lr, cfg.momentum, params);
    Rng root(cfg.seed);

    const std::size_t dz = static_cast<std::size_t>(vae.dz);
    std::vector<std::size_t> order(corpus.size());
    std::iota(order.begin(), order.end(), 0u);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng erng = root.derive(static_cast<std::uint64_t>(epoch) + 17);
        erng.shuffle(order);
        double loss_sum = 0.0, recon_sum = 0.0;
        std::size_t steps = 0;

        for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t bend = std::min(order.size(), b + static_cast<std::size_t>(cfg.batch_size));
            std::vector<Tensor> acc = train_detail::zeros_like(params);
            const double w = 1.0 / static_cast<double>(bend - b);

            for (std::size_t bi = b; bi < bend; ++bi) {
                const std::size_t ci = order[bi];
                Rng crng = root.derive(0x10000ULL * static_cast<std::uint64_t>(epoch + 1) + ci);
                Tensor x = train_detail::subsample_rows(corpus[ci].cloud.points,
                                                        cfg.points_per_step, crng);
                const std::size_t m = x.rows();

                Tape tape;
                std::vector<NodeId> leaves;
                NodeId xn = tape.constant(x);

                // q_z
                NodeId f = train_detail::record_mlp_with_params(vae.qz_pernet, tape, xn, leaves);
                f = tape.tanh_(f);
                NodeId pooled = tape.mean_rows(f);
                NodeId zout = train_detail::record_mlp_with_params(vae.qz_head, tape, pooled, leaves);
                NodeId mu_z = tape.slice_cols(zout, 0, dz);
                Tensor shift_z = Tensor::matrix(1, dz);
                for (std::size_t i = 0; i < dz; ++i) shift_z[i] = -kLogSigmaShift;
                NodeId s_z = tape.sub(tape.slice_cols(zout, dz, 2 * dz), tape.constant(shift_z));

                Tensor eps_z = Tensor::matrix(1, dz);
                for (std::size_t i = 0; i < dz; ++i) eps_z[i] = crng.normal();
                NodeId z = tape.add(mu_z, tape.mul(tape.exp_(s_z), tape.constant(eps_z)));

                // q_h conditioned on z
                NodeId qh_in = tape.concat_cols(xn, tape.broadcast_rows(z, m));
                NodeId qh_out = train_detail::record_mlp_with_params(vae.qh_net, tape, qh_in, leaves);
                NodeId dxyz = tape.slice_cols(qh_out, 0, 3);
                NodeId mu_f = tape.slice_cols(qh_out, 3, 4);
                Tensor shift_h = Tensor::matrix(m, 4);
                for (std::size_t i = 0; i < shift_h.size(); ++i) shift_h[i] = -kLogSigmaShift;
                NodeId s_h = tape.sub(tape.slice_cols(qh_out, 4, 8), tape.constant(shift_h));
                NodeId mu_h = tape.concat_cols(tape.add(xn, dxyz), mu_f);

                Tensor eps_h = Tensor::matrix(m, 4);
                for (std::size_t i = 0; i < eps_h.size(); ++i) eps_h[i] = crng.normal();
                NodeId h = tape.add(mu_h, tape.mul(tape.exp_(s_h), tape.constant(eps_h)));

                // p_d
                NodeId pd_in = tape.concat_cols(h, tape.broadcast_rows(z, m));
                NodeId xhat = train_detail::record_mlp_with_params(vae.pd_net, tape, pd_in, leaves);

                NodeId diff = tape.sub(xhat, xn);
                NodeId recon = tape.scale(tape.sum_all(tape.mul(diff, diff)),
                                          1.0 / static_cast<double>(m * 3));
                NodeId klz = train_detail::kl_node(tape, mu_z, s_z, dz);
                NodeId klh = train_detail::kl_node(tape, mu_h, s_h, m * 4);

                const double klz_v = tape.value(klz)[0];
                const double klh_v = tape.value(klh)[0];
                if (klz_v < -1e-9 || klh_v < -1e-9)
                    throw training_error("train_vae: negative KL", epoch);

                NodeId loss = tape.add(
                    recon, tape.add(tape.scale(klz, cfg.gamma_z / static_cast<double>(dz)),
                                    tape.scale(klh, cfg.gamma_h / static_cast<double>(m * 4))));

                const double loss_v = tape.value(loss)[0];
                if (!std::isfinite(loss_v)) throw training_error("train_vae: loss diverged", epoch);
                loss_sum += loss_v;
                recon_sum += tape.value(recon)[0];

                std::vector<Tensor> g = tape.grads(loss, Tensor({1, 1}, {1.0}), leaves);
                train_detail::accumulate(acc, g, w);
            }
            opt.step(params, acc);
            steps += bend - b;
        }
        res.epoch_loss.push_back(loss_sum / static_cast<double>(steps));
        res.epoch_recon.push_back(recon_sum / static_cast<double>(steps));
        if (epoch_hook) epoch_hook(epoch, vae);
    }
    return res;
}

/// Row-aligned reconstruction MSE in deterministic mode (mean over n×3).
inline double vae_recon_mse(const VaeModel& vae, const PointCloud& x) {
    ShapeLatent z = encode_shape(vae, x);
    LatentPoints h = encode_points(vae, z, x);
    PointCloud xhat = decode(vae, z, h);
    double s = 0.0;
    for (std::size_t i = 0; i < x.points.size(); ++i) {
        const double d = xhat.points[i] - x.points[i];
        s += d * d;
    }
    return s / static_cast<double>(x.points.size());
}

struct DiffusionTrainResult {
    DenoiserModel model;
    std::vector<double> epoch_loss;  // mean per-coordinate squared error
};

/// Stage 2: score matching on frozen-VAE posteriors. Full-cloud posteriors
/// are precomputed once; each step samples z0 ~ q_z, a row subset of
/// h0 ~ q_h, a timestep, and a noise draw.
inline DiffusionTrainResult train_diffusion(const VaeModel& vae,
                                            const std::vector<LabeledCloud>& corpus,
                                            const NoiseSchedule& sched, const TrainConfig& cfg) {
    cfg.validate();
    if (corpus.empty()) throw argument_error("train_diffusion: empty corpus");

    DiffusionTrainResult res;
    res.model = make_denoiser(vae.dz, Rng(cfg.seed).derive(2).raw());
    DenoiserModel& den = res.model;
    std::vector<Tensor*> params = den.params();
    train_detail::MomentumSgd opt(cfg.lr, cfg.momentum, params);
    Rng root(cfg.seed);

    const std::size_t dz = static_cast<std::size_t>(vae.dz);

    // frozen posteriors per cloud
    struct Post {
        GaussianPosterior z, h;
    };
    std::vector<Post> posts;
    posts.reserve(corpus.size());
    for (const LabeledCloud& lc : corpus) {
        Post p;
        p.z = shape_posterior(vae, lc.cloud);
        ShapeLatent zmu{p.z.mu};
        p.h = point_posterior(vae, zmu, lc.cloud);
        posts.push_back(std::move(p));
    }

    // split: ctx_net + eps_net leaves come from the ε_h graph; eps_z_net has
    // its own tape when the shape prior is trained
    const std::size_t n_ctx = den.ctx_net.layers.size() * 2;
    const std::size_t n_eps = den.eps_net.layers.size() * 2;

    std::vector<std::size_t> order(corpus.size());
    std::iota(order.begin(), order.end(), 0u);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng erng = root.derive(static_cast<std::uint64_t>(epoch) + 31);
        erng.shuffle(order);
        double loss_sum = 0.0;
        std::size_t count = 0;

        for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t bend = std::min(order.size(), b + static_cast<std::size_t>(cfg.batch_size));
            std::vector<Tensor> acc = train_detail::zeros_like(params);
            const double w = 1.0 / static_cast<double>(bend - b);

            for (std::size_t bi = b; bi < bend; ++bi) {
                const std::size_t ci = order[bi];
                Rng crng = root.derive(0x20000ULL * static_cast<std::uint64_t>(epoch + 1) + ci);
                const Post& post = posts[ci];

                // z0 ~ q_z
                Tensor z0 = Tensor::matrix(1, dz);
                for (std::size_t i = 0; i < dz; ++i)
                    z0[i] = post.z.mu[i] + std::exp(post.z.log_sigma[i]) * crng.normal();

                // row subset of h0 ~ q_h
                const std::size_t n_full = post.h.mu.rows();
                std::size_t m = cfg.points_per_step == 0
                                    ? n_full
                                    : std::min(cfg.points_per_step, n_full);
                std::vector<std::size_t> idx = crng.sample_without_replacement(n_full, m);
                Tensor h0 = Tensor::matrix(m, 4);
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < 4; ++j)
                        h0.at(i, j) = post.h.mu.at(idx[i], j) +
                                      std::exp(post.h.log_sigma.at(idx[i], j)) * crng.normal();

                const int t = 1 + static_cast<int>(crng.index(static_cast<std::size_t>(sched.T)));
                Tensor noise = Tensor::matrix(m, 4);
                for (std::size_t i = 0; i < noise.size(); ++i) noise[i] = crng.normal();
                Tensor h_t = forward_diffuse(h0, t, noise, sched);

                EpsRecord rec = denoise_eps_h_record(den, h_t, z0, t, false, true);
                Tape& tape = rec.tape;
                NodeId diff = tape.sub(rec.output, tape.constant(noise));
                NodeId loss = tape.scale(tape.sum_all(tape.mul(diff, diff)),
                                         1.0 / static_cast<double>(m * 4));
                double loss_v = tape.value(loss)[0];
                if (!std::isfinite(loss_v))
                    throw training_error("train_diffusion: loss diverged", epoch);

                std::vector<Tensor> g = tape.grads(loss, Tensor({1, 1}, {1.0}), rec.params);
                // rec.params order: ctx_net then eps_net — same as params()
                for (std::size_t k = 0; k < n_ctx + n_eps; ++k)
                    for (std::size_t i = 0; i < acc[k].size(); ++i) acc[k][i] += w * g[k][i];

                if (cfg.train_shape_prior) {
                    Tensor znoise = Tensor::matrix(1, dz);
                    for (std::size_t i = 0; i < dz; ++i) znoise[i] = crng.normal();
                    const int tz = 1 + static_cast<int>(crng.index(static_cast<std::size_t>(sched.T)));
                    Tensor z_t = forward_diffuse(z0, tz, znoise, sched);

                    Tape zt;
                    std::vector<NodeId> zleaves;
                    Tensor temb = time_embedding(tz, den.temb_dim);
                    Tensor zin = Tensor::matrix(1, dz + temb.cols());
                    for (std::size_t j = 0; j < dz; ++j) zin[j] = z_t[j];
                    for (std::size_t j = 0; j < temb.cols(); ++j) zin[dz + j] = temb[j];
                    NodeId zx = zt.constant(zin);
                    NodeId zeps = train_detail::record_mlp_with_params(den.eps_z_net, zt, zx, zleaves);
                    NodeId zdiff = zt.sub(zeps, zt.constant(znoise));
                    NodeId zloss = zt.scale(zt.sum_all(zt.mul(zdiff, zdiff)),
                                            1.0 / static_cast<double>(dz));
                    if (!std::isfinite(zt.value(zloss)[0]))
                        throw training_error("train_diffusion: shape-prior loss diverged", epoch);
                    std::vector<Tensor> zg = zt.grads(zloss, Tensor({1, 1}, {1.0}), zleaves);
                    for (std::size_t k = 0; k < zg.size(); ++k) {
                        const std::size_t slot = n_ctx + n_eps + k;
                        for (std::size_t i = 0; i < acc[slot].size(); ++i)
                            acc[slot][i] += w * zg[k][i];
                    }
                }

                loss_sum += loss_v;
                ++count;
            }
            opt.step(params, acc);
        }
        res.epoch_loss.push_back(loss_sum / static_cast<double>(count));
    }
    return res;
}

/// Held-out stage-2 loss in the per-cloud sum convention, E‖ε − ε_h‖²
/// (zero-predictor baseline is 4·n). Deterministic draws from the seed.
inline double diffusion_heldout_loss(const DenoiserModel& den, const VaeModel& vae,
                                     const std::vector<LabeledCloud>& clouds,
                                     const NoiseSchedule& sched, std::uint64_t seed,
                                     int draws_per_cloud = 4) {
    Rng root(seed);
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t ci = 0; ci < clouds.size(); ++ci) {
        ShapeLatent z0 = encode_shape(vae, clouds[ci].cloud);
        LatentPoints h0 = encode_points(vae, z0, clouds[ci].cloud);
        Rng crng = root.derive(ci);
        for (int d = 0; d < draws_per_cloud; ++d) {
            const int t = 1 + static_cast<int>(crng.index(static_cast<std::size_t>(sched.T)));
            Tensor noise(h0.values.shape());
            for (std::size_t i = 0; i < noise.size(); ++i) noise[i] = crng.normal();
            Tensor h_t = forward_diffuse(h0.values, t, noise, sched);
            EpsRecord rec = denoise_eps_h_record(den, h_t, z0.z, t, false, false);
            double s = 0.0;
            for (std::size_t i = 0; i < noise.size(); ++i) {
                const double e = rec.eps[i] - noise[i];
                s += e * e;
            }
            total += s;
            ++count;
        }
    }
    return total / static_cast<double>(count);
}

struct ClassifierTrainResult {
    ClassifierModel model;
    std::vector<double> epoch_loss;
};

/// Cross-entropy training of the source classifier.
inline ClassifierTrainResult train_classifier(const std::vector<LabeledCloud>& corpus,
                                              int classes, const TrainConfig& cfg) {
    cfg.validate();
    if (corpus.empty()) throw argument_error("train_classifier: empty corpus");
    if (classes < 2) throw argument_error("train_classifier: need C >= 2");

    ClassifierTrainResult res;
    res.model = make_classifier(classes, Rng(cfg.seed).derive(3).raw());
    ClassifierModel& clf = res.model;
    std::vector<Tensor*> params = clf.params();
    train_detail::MomentumSgd opt(cfg.lr, cfg.momentum, params);
    Rng root(cfg.seed);

    std::vector<std::size_t> order(corpus.size());
    std::iota(order.begin(), order.end(), 0u);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng erng = root.derive(static_cast<std::uint64_t>(epoch) + 47);
        erng.shuffle(order);
        double loss_sum = 0.0;
        std::size_t count = 0;

        for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t bend = std::min(order.size(), b + static_cast<std::size_t>(cfg.batch_size));
            std::vector<Tensor> acc = train_detail::zeros_like(params);
            const double w = 1.0 / static_cast<double>(bend - b);

            for (std::size_t bi = b; bi < bend; ++bi) {
                const std::size_t ci = order[bi];
                Rng crng = root.derive(0x30000ULL * static_cast<std::uint64_t>(epoch + 1) + ci);
                Tensor x = train_detail::subsample_rows(corpus[ci].cloud.points,
                                                        cfg.points_per_step, crng);

                Tape tape;
                std::vector<NodeId> leaves;
                NodeId xn = tape.constant(x);
                NodeId f = train_detail::record_mlp_with_params(clf.pernet, tape, xn, leaves);
                f = tape.tanh_(f);
                NodeId pooled = tape.max_rows(f);
                NodeId logits = train_detail::record_mlp_with_params(clf.head, tape, pooled, leaves);
                NodeId loss = tape.softmax_xent(logits,
                                                static_cast<std::size_t>(corpus[ci].label));

                const double loss_v = tape.value(loss)[0];
                if (!std::isfinite(loss_v))
                    throw training_error("train_classifier: loss diverged", epoch);
                loss_sum += loss_v;
                ++count;

                std::vector<Tensor> g = tape.grads(loss, Tensor({1, 1}, {1.0}), leaves);
                train_detail::accumulate(acc, g, w);
            }
            opt.step(params, acc);
        }
        res.epoch_loss.push_back(loss_sum / static_cast<double>(count));
    }
    return res;
}

inline double classifier_accuracy(const ClassifierModel& clf,
                                  const std::vector<LabeledCloud>& clouds) {
    if (clouds.empty()) throw argument_error("classifier_accuracy: empty set");
    std::size_t hits = 0;
    for (const LabeledCloud& lc : clouds)
        if (classify(clf, lc.cloud).label == lc.label) ++hits;
    return static_cast<double>(hits) / static_cast<double>(clouds.size());
}

}  // namespace driftback
