#pragma once

#include <cmath>
#include <vector>

#include "driftback/errors.hpp"
#include "driftback/tensor.hpp"

namespace driftback {

/// Variance schedule tables plus the DDIM sub-sequence.
///
/// beta[t-1] holds β_t for t = 1..T; alpha_bar[t] holds ᾱ_t with ᾱ₀ = 1 so a
/// terminal step to t_prev = 0 needs no special casing. sigma holds the DDPM
/// posterior standard deviations, kept only for ancestral-sampling parity
/// tests; the sampler here is deterministic DDIM.
struct NoiseSchedule {
    int T = 0;
    double beta_start = 0.0;
    double beta_end = 0.0;
    std::vector<double> beta;
    std::vector<double> alpha_bar;  // size T+1
    std::vector<double> sigma;
    std::vector<int> ddim_steps;    // strictly increasing, ends at T

    double abar(int t) const {
        if (t < 0 || t > T) throw argument_error("timestep out of range");
        return alpha_bar[static_cast<std::size_t>(t)];
    }

    int ddim_count() const { return static_cast<int>(ddim_steps.size()); }

    /// Training timestep for DDIM index k (1-based); index 0 maps to t = 0.
    int ddim_timestep(int k) const {
        if (k == 0) return 0;
        if (k < 1 || k > ddim_count()) throw argument_error("DDIM index out of range");
        return ddim_steps[static_cast<std::size_t>(k - 1)];
    }
};

/// Linear β interpolation over T steps with an S-step DDIM sub-sequence
/// {stride, 2·stride, ..., T}, stride = round(T/S).
inline NoiseSchedule build_schedule(int T, double beta_start, double beta_end, int S) {
    if (T < 1) throw argument_error("build_schedule: T must be >= 1");
    if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0))
        throw argument_error("build_schedule: need 0 < beta_start <= beta_end < 1");
    if (S < 1 || S > T) throw argument_error("build_schedule: need 1 <= S <= T");

    NoiseSchedule s;
    s.T = T;
    s.beta_start = beta_start;
    s.beta_end = beta_end;
    s.beta.resize(static_cast<std::size_t>(T));
    for (int t = 1; t <= T; ++t) {
        const double frac = (T == 1) ? 0.0 : static_cast<double>(t - 1) / static_cast<double>(T - 1);
        s.beta[static_cast<std::size_t>(t - 1)] = beta_start + frac * (beta_end - beta_start);
    }
    s.alpha_bar.resize(static_cast<std::size_t>(T) + 1);
    s.alpha_bar[0] = 1.0;
    for (int t = 1; t <= T; ++t)
        s.alpha_bar[static_cast<std::size_t>(t)] =
            s.alpha_bar[static_cast<std::size_t>(t - 1)] * (1.0 - s.beta[static_cast<std::size_t>(t - 1)]);
    s.sigma.resize(static_cast<std::size_t>(T));
    for (int t = 1; t <= T; ++t) {
        const double ab_prev = s.alpha_bar[static_cast<std::size_t>(t - 1)];
        const double ab = s.alpha_bar[static_cast<std::size_t>(t)];
        s.sigma[static_cast<std::size_t>(t - 1)] =
            std::sqrt(s.beta[static_cast<std::size_t>(t - 1)] * (1.0 - ab_prev) / (1.0 - ab));
    }

    const int stride = std::max(1, static_cast<int>(std::lround(static_cast<double>(T) / S)));
    if (static_cast<long>(stride) * (S - 1) >= T)
        throw argument_error("build_schedule: S does not (nearly) divide T");
    s.ddim_steps.reserve(static_cast<std::size_t>(S));
    for (int k = 1; k < S; ++k) s.ddim_steps.push_back(stride * k);
    s.ddim_steps.push_back(T);
    return s;
}

/// x_t = √ᾱ_t·x₀ + √(1−ᾱ_t)·ε
inline Tensor forward_diffuse(const Tensor& x0, int t, const Tensor& eps,
                              const NoiseSchedule& sched) {
    if (t < 1 || t > sched.T) throw argument_error("forward_diffuse: t out of range");
    if (!x0.same_shape(eps)) throw dim_error("forward_diffuse: eps shape differs from x0");
    const double ab = sched.abar(t);
    const double a = std::sqrt(ab);
    const double b = std::sqrt(1.0 - ab);
    Tensor out = x0;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * out[i] + b * eps[i];
    return out;
}

/// x̂₀ = (x_t − √(1−ᾱ_t)·ε̂)/√ᾱ_t
inline Tensor estimate_x0(const Tensor& xt, const Tensor& eps_pred, int t,
                          const NoiseSchedule& sched) {
    if (t < 1 || t > sched.T) throw argument_error("estimate_x0: t out of range");
    if (!xt.same_shape(eps_pred)) throw dim_error("estimate_x0: shape mismatch");
    const double ab = sched.abar(t);
    if (ab < 1e-12) throw numeric_error("estimate_x0: alpha_bar underflow");
    const double inv_sqrt_ab = 1.0 / std::sqrt(ab);
    const double coef = std::sqrt(1.0 - ab);
    Tensor out = xt;
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = (out[i] - coef * eps_pred[i]) * inv_sqrt_ab;
    return out;
}

/// Deterministic DDIM update (η_DDIM = 0):
/// x_{t_prev} = √ᾱ_{t_prev}·x̂₀ + √(1−ᾱ_{t_prev})·ε̂
inline Tensor ddim_step(const Tensor& xt, const Tensor& eps_pred, int t, int t_prev,
                        const NoiseSchedule& sched) {
    if (t_prev >= t) throw argument_error("ddim_step: t_prev must be < t");
    if (t_prev < 0) throw argument_error("ddim_step: t_prev out of range");
    Tensor x0 = estimate_x0(xt, eps_pred, t, sched);
    const double ab_prev = sched.abar(t_prev);
    const double a = std::sqrt(ab_prev);
    const double b = std::sqrt(1.0 - ab_prev);
    for (std::size_t i = 0; i < x0.size(); ++i) x0[i] = a * x0[i] + b * eps_pred[i];
    return x0;
}

/// DDPM posterior mean μ_θ (Gaussian ancestral step); unused by the
/// adaptation loop, kept for test parity.
inline Tensor posterior_mean(const Tensor& xt, const Tensor& eps_pred, int t,
                             const NoiseSchedule& sched) {
    if (t < 1 || t > sched.T) throw argument_error("posterior_mean: t out of range");
    if (!xt.same_shape(eps_pred)) throw dim_error("posterior_mean: shape mismatch");
    const double beta = sched.beta[static_cast<std::size_t>(t - 1)];
    const double alpha = 1.0 - beta;
    const double ab = sched.abar(t);
    const double coef = beta / std::sqrt(1.0 - ab);
    const double inv_sqrt_alpha = 1.0 / std::sqrt(alpha);
    Tensor out = xt;
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = inv_sqrt_alpha * (out[i] - coef * eps_pred[i]);
    return out;
}

}  // namespace driftback
