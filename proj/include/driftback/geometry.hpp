#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <utility>
#include <vector>

#include "driftback/errors.hpp"
#include "driftback/tensor.hpp"

namespace driftback {

/// n×3 coordinate array plus the normalization record of the frame it came
/// from (original centroid and the scale divisor that was applied).
struct PointCloud {
    Tensor points;  // n×3
    std::array<double, 3> centroid{0.0, 0.0, 0.0};
    double scale = 1.0;

    std::size_t size() const { return points.rank() == 2 ? points.rows() : 0; }
};

inline PointCloud make_cloud(Tensor points) {
    if (points.rank() != 2 || points.cols() != 3)
        throw dim_error("point cloud must be n×3");
    if (points.rows() < 1) throw argument_error("point cloud must have n >= 1");
    return PointCloud{std::move(points), {0.0, 0.0, 0.0}, 1.0};
}

/// n×4 point-structured latent: xyz plus one feature channel.
struct LatentPoints {
    Tensor values;  // n×4

    std::size_t size() const { return values.rows(); }
};

inline LatentPoints make_latent_points(Tensor values) {
    if (values.rank() != 2 || values.cols() != 4)
        throw dim_error("latent points must be n×4");
    return LatentPoints{std::move(values)};
}

/// Center at the origin and scale so the farthest point has norm 1.
/// A degenerate cloud (all points identical) is centered with scale 1.
inline PointCloud normalize(const PointCloud& cloud) {
    const Tensor& p = cloud.points;
    const std::size_t n = p.rows();
    if (n < 1) throw argument_error("normalize: empty cloud");

    std::array<double, 3> c{0.0, 0.0, 0.0};
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < 3; ++j) c[j] += p.at(i, j);
    for (std::size_t j = 0; j < 3; ++j) c[j] /= static_cast<double>(n);

    Tensor out = Tensor::matrix(n, 3);
    double max_norm2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double n2 = 0.0;
        for (std::size_t j = 0; j < 3; ++j) {
            const double v = p.at(i, j) - c[j];
            out.at(i, j) = v;
            n2 += v * v;
        }
        max_norm2 = std::max(max_norm2, n2);
    }
    double s = std::sqrt(max_norm2);
    if (s < 1e-12) s = 1.0;
    const double inv = 1.0 / s;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= inv;

    PointCloud r;
    r.points = std::move(out);
    r.centroid = c;
    r.scale = s;
    return r;
}

/// For each row of a, the squared Euclidean distance to its nearest row of b.
/// Brute force; ties go to the lowest b index.
inline std::vector<double> min_sq_dists(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2) throw dim_error("min_sq_dists: point sets must be rank 2");
    if (a.rows() == 0 || b.rows() == 0) throw argument_error("min_sq_dists: empty point set");
    if (a.cols() != b.cols()) throw dim_error("min_sq_dists: dimensionality mismatch");
    const std::size_t k = a.rows(), m = b.rows(), d = a.cols();
    std::vector<double> out(k);
    for (std::size_t i = 0; i < k; ++i) {
        const double* ai = a.data() + i * d;
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < m; ++j) {
            const double* bj = b.data() + j * d;
            double s = 0.0;
            for (std::size_t t = 0; t < d; ++t) {
                const double diff = ai[t] - bj[t];
                s += diff * diff;
            }
            if (s < best) best = s;
        }
        out[i] = best;
    }
    return out;
}

/// Kept-pair count for the lower-λ selection: floor(λ·n), at least 1.
inline std::size_t keep_count(double lambda, std::size_t n) {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(lambda * static_cast<double>(n))));
}

struct ScdResult {
    double value = 0.0;
    // (index in the source set, index of its nearest neighbor in the other set)
    std::vector<std::pair<std::uint32_t, std::uint32_t>> selected_ab;
    std::vector<std::pair<std::uint32_t, std::uint32_t>> selected_ba;
};

namespace detail {

struct NnSide {
    std::vector<double> dist;
    std::vector<std::uint32_t> nn;
};

inline NnSide nn_side(const Tensor& a, const Tensor& b) {
    const std::size_t k = a.rows(), m = b.rows(), d = a.cols();
    NnSide r;
    r.dist.resize(k);
    r.nn.resize(k);
    for (std::size_t i = 0; i < k; ++i) {
        const double* ai = a.data() + i * d;
        double best = std::numeric_limits<double>::infinity();
        std::uint32_t bj = 0;
        for (std::size_t j = 0; j < m; ++j) {
            const double* brow = b.data() + j * d;
            double s = 0.0;
            for (std::size_t t = 0; t < d; ++t) {
                const double diff = ai[t] - brow[t];
                s += diff * diff;
            }
            if (s < best) {
                best = s;
                bj = static_cast<std::uint32_t>(j);
            }
        }
        r.dist[i] = best;
        r.nn[i] = bj;
    }
    return r;
}

// Indices of the lowest-keep entries; sort ties by original index so the
// selection is platform-stable.
inline std::vector<std::uint32_t> lower_selection(const std::vector<double>& dist,
                                                  std::size_t keep) {
    std::vector<std::uint32_t> order(dist.size());
    std::iota(order.begin(), order.end(), 0u);
    std::sort(order.begin(), order.end(), [&](std::uint32_t x, std::uint32_t y) {
        if (dist[x] != dist[y]) return dist[x] < dist[y];
        return x < y;
    });
    order.resize(std::min(keep, order.size()));
    return order;
}

}  // namespace detail

/// Selective Chamfer Distance: each side sums the lowest λ-fraction of its
/// sorted min squared distances, normalized by the FULL set size.
inline ScdResult scd(const Tensor& h0, const Tensor& hbar0, double lambda) {
    if (!(lambda > 0.0) || lambda > 1.0) throw argument_error("scd: lambda must be in (0,1]");
    if (h0.rank() != 2 || hbar0.rank() != 2 || h0.cols() != hbar0.cols())
        throw dim_error("scd: point sets must be rank 2 of equal dimensionality");
    if (h0.rows() == 0 || hbar0.rows() == 0) throw argument_error("scd: empty point set");

    const detail::NnSide ab = detail::nn_side(h0, hbar0);
    const detail::NnSide ba = detail::nn_side(hbar0, h0);
    const std::size_t ka = keep_count(lambda, h0.rows());
    const std::size_t kb = keep_count(lambda, hbar0.rows());
    const std::vector<std::uint32_t> sel_a = detail::lower_selection(ab.dist, ka);
    const std::vector<std::uint32_t> sel_b = detail::lower_selection(ba.dist, kb);

    ScdResult r;
    double sa = 0.0, sb = 0.0;
    r.selected_ab.reserve(sel_a.size());
    for (std::uint32_t i : sel_a) {
        sa += ab.dist[i];
        r.selected_ab.emplace_back(i, ab.nn[i]);
    }
    r.selected_ba.reserve(sel_b.size());
    for (std::uint32_t j : sel_b) {
        sb += ba.dist[j];
        r.selected_ba.emplace_back(j, ba.nn[j]);
    }
    r.value = sa / static_cast<double>(h0.rows()) + sb / static_cast<double>(hbar0.rows());
    return r;
}

enum class ScdWrt { first, second };

/// Both-sides SCD value and subgradients in one nearest-neighbor pass.
/// The assignment and the λ-selection are treated as locally constant.
struct ScdGradResult {
    double value = 0.0;
    Tensor grad_first;
    Tensor grad_second;
};

inline ScdGradResult scd_with_grad(const Tensor& h0, const Tensor& hbar0, double lambda) {
    const ScdResult r = scd(h0, hbar0, lambda);
    const std::size_t d = h0.cols();
    ScdGradResult out;
    out.value = r.value;
    out.grad_first = Tensor::zeros(h0.shape());
    out.grad_second = Tensor::zeros(hbar0.shape());

    const double wa = 2.0 / static_cast<double>(h0.rows());
    for (const auto& [i, j] : r.selected_ab) {
        const double* p = h0.data() + i * d;
        const double* q = hbar0.data() + j * d;
        double* gp = out.grad_first.data() + i * d;
        double* gq = out.grad_second.data() + j * d;
        for (std::size_t t = 0; t < d; ++t) {
            const double diff = wa * (p[t] - q[t]);
            gp[t] += diff;
            gq[t] -= diff;
        }
    }
    const double wb = 2.0 / static_cast<double>(hbar0.rows());
    for (const auto& [j, i] : r.selected_ba) {
        const double* q = hbar0.data() + j * d;
        const double* p = h0.data() + i * d;
        double* gq = out.grad_second.data() + j * d;
        double* gp = out.grad_first.data() + i * d;
        for (std::size_t t = 0; t < d; ++t) {
            const double diff = wb * (q[t] - p[t]);
            gq[t] += diff;
            gp[t] -= diff;
        }
    }
    return out;
}

inline Tensor scd_grad(const Tensor& h0, const Tensor& hbar0, double lambda, ScdWrt wrt) {
    ScdGradResult r = scd_with_grad(h0, hbar0, lambda);
    return wrt == ScdWrt::first ? std::move(r.grad_first) : std::move(r.grad_second);
}

/// Classical symmetric Chamfer distance (mean squared NN distance, both ways).
inline double chamfer(const Tensor& a, const Tensor& b) {
    const std::vector<double> da = min_sq_dists(a, b);
    const std::vector<double> db = min_sq_dists(b, a);
    double sa = std::accumulate(da.begin(), da.end(), 0.0);
    double sb = std::accumulate(db.begin(), db.end(), 0.0);
    return sa / static_cast<double>(da.size()) + sb / static_cast<double>(db.size());
}

}  // namespace driftback
