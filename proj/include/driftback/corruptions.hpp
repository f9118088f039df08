#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "driftback/geometry.hpp"
#include "driftback/rng.hpp"

namespace driftback {

/// The 15 corruption kinds, by family:
///   noise:       uni gauss back impu ups
///   deformation: rbf rbf-i shear rot dist
///   density:     den-d den-i cut occ lidar
struct CorruptionSpec {
    std::string kind;
    int severity = 3;  // 1..5
    std::uint64_t seed = 0;
};

inline std::vector<std::pair<std::string, std::string>> corruption_catalog() {
    return {
        {"uni", "noise"},      {"gauss", "noise"},     {"back", "noise"},
        {"impu", "noise"},     {"ups", "noise"},       {"rbf", "deformation"},
        {"rbf-i", "deformation"}, {"shear", "deformation"}, {"rot", "deformation"},
        {"dist", "deformation"},  {"den-d", "density"},    {"den-i", "density"},
        {"cut", "density"},    {"occ", "density"},     {"lidar", "density"},
    };
}

namespace corrupt_detail {

// Per-severity magnitudes (index 0 = severity 1). The paper defers the exact
// parameterization to external corruption code; these span mild to severe on
// unit-sphere clouds.
inline constexpr std::array<double, 5> kUni = {0.01, 0.02, 0.03, 0.04, 0.05};
inline constexpr std::array<double, 5> kGauss = {0.01, 0.015, 0.02, 0.025, 0.03};
inline constexpr std::array<double, 5> kBackFrac = {0.02, 0.04, 0.06, 0.08, 0.10};
inline constexpr std::array<double, 5> kImpuFrac = {0.01, 0.02, 0.03, 0.04, 0.05};
inline constexpr std::array<double, 5> kUpsFrac = {0.10, 0.20, 0.30, 0.40, 0.50};
inline constexpr std::array<double, 5> kRbfNorm = {0.02, 0.04, 0.06, 0.08, 0.10};
inline constexpr std::array<int, 5> kDenAnchors = {1, 2, 3, 4, 5};
inline constexpr std::array<double, 5> kShear = {0.1, 0.2, 0.3, 0.4, 0.5};
inline constexpr std::array<double, 5> kRotDeg = {15.0, 30.0, 45.0, 60.0, 75.0};
inline constexpr std::array<int, 5> kCutClusters = {1, 2, 3, 4, 5};
inline constexpr std::array<double, 5> kDistMag = {0.02, 0.04, 0.06, 0.08, 0.10};
inline constexpr std::array<double, 5> kOccFrac = {0.10, 0.20, 0.30, 0.40, 0.50};
inline constexpr std::array<int, 5> kLidarRings = {32, 26, 20, 14, 8};

inline std::vector<std::size_t> knn_of(const Tensor& pts, std::size_t anchor, std::size_t k,
                                       const std::vector<char>& alive) {
    // anchor's k nearest among alive points (anchor included at distance 0)
    std::vector<std::pair<double, std::size_t>> d;
    d.reserve(pts.rows());
    const double* a = pts.data() + anchor * 3;
    for (std::size_t i = 0; i < pts.rows(); ++i) {
        if (!alive[i]) continue;
        const double* p = pts.data() + i * 3;
        const double dx = p[0] - a[0], dy = p[1] - a[1], dz = p[2] - a[2];
        d.emplace_back(dx * dx + dy * dy + dz * dz, i);
    }
    std::sort(d.begin(), d.end());
    std::vector<std::size_t> out;
    out.reserve(std::min(k, d.size()));
    for (std::size_t i = 0; i < d.size() && i < k; ++i) out.push_back(d[i].second);
    return out;
}

inline Tensor keep_rows(const Tensor& pts, const std::vector<char>& alive) {
    std::size_t n = 0;
    for (char c : alive) n += (c != 0);
    Tensor out = Tensor::matrix(n, 3);
    std::size_t r = 0;
    for (std::size_t i = 0; i < pts.rows(); ++i) {
        if (!alive[i]) continue;
        for (std::size_t j = 0; j < 3; ++j) out.at(r, j) = pts.at(i, j);
        ++r;
    }
    return out;
}

inline void apply_linear(Tensor& pts, const std::array<double, 9>& m) {
    for (std::size_t i = 0; i < pts.rows(); ++i) {
        const double x = pts.at(i, 0), y = pts.at(i, 1), z = pts.at(i, 2);
        pts.at(i, 0) = m[0] * x + m[1] * y + m[2] * z;
        pts.at(i, 1) = m[3] * x + m[4] * y + m[5] * z;
        pts.at(i, 2) = m[6] * x + m[7] * y + m[8] * z;
    }
}

}  // namespace corrupt_detail

/// Rodrigues rotation about a unit axis. angle == 0 returns the input
/// unchanged (exactness hook used by tests).
inline Tensor apply_rotation(const Tensor& pts, const std::array<double, 3>& axis,
                             double angle_rad) {
    if (angle_rad == 0.0) return pts;
    const double c = std::cos(angle_rad), s = std::sin(angle_rad), t = 1.0 - c;
    const double x = axis[0], y = axis[1], z = axis[2];
    const std::array<double, 9> m = {
        t * x * x + c,     t * x * y - s * z, t * x * z + s * y,
        t * x * y + s * z, t * y * y + c,     t * y * z - s * x,
        t * x * z - s * y, t * y * z + s * x, t * z * z + c,
    };
    Tensor out = pts;
    corrupt_detail::apply_linear(out, m);
    return out;
}

/// Deterministic, seeded corruption. Identical (spec, cloud) pairs produce
/// bit-identical outputs. Point count: unchanged for noise/transform kinds,
/// increased for ups/den-i, decreased for den-d/cut/occ/lidar.
inline PointCloud apply_corruption(const CorruptionSpec& spec, const PointCloud& cloud) {
    using namespace corrupt_detail;
    if (spec.severity < 1 || spec.severity > 5)
        throw argument_error("apply_corruption: severity must be 1..5");
    const std::size_t sv = static_cast<std::size_t>(spec.severity - 1);
    const Tensor& in = cloud.points;
    const std::size_t n = in.rows();
    Rng rng(spec.seed);

    PointCloud out = cloud;

    if (spec.kind == "uni") {
        const double a = kUni[sv];
        for (std::size_t i = 0; i < out.points.size(); ++i)
            out.points[i] += rng.uniform(-a, a);
        return out;
    }
    if (spec.kind == "gauss") {
        const double s = kGauss[sv];
        for (std::size_t i = 0; i < out.points.size(); ++i)
            out.points[i] += s * rng.normal();
        return out;
    }
    if (spec.kind == "back") {
        const std::size_t m = std::max<std::size_t>(1, static_cast<std::size_t>(
                                                           std::floor(kBackFrac[sv] * n)));
        std::vector<std::size_t> idx = rng.sample_without_replacement(n, m);
        for (std::size_t i : idx)
            for (std::size_t j = 0; j < 3; ++j) out.points.at(i, j) = rng.uniform(-1.0, 1.0);
        return out;
    }
    if (spec.kind == "impu") {
        const std::size_t m = std::max<std::size_t>(1, static_cast<std::size_t>(
                                                           std::floor(kImpuFrac[sv] * n)));
        std::vector<std::size_t> idx = rng.sample_without_replacement(n, m);
        for (std::size_t i : idx)
            for (std::size_t j = 0; j < 3; ++j) out.points.at(i, j) += rng.uniform(-0.3, 0.3);
        return out;
    }
    if (spec.kind == "ups") {
        const std::size_t extra = static_cast<std::size_t>(std::floor(kUpsFrac[sv] * n));
        Tensor pts = Tensor::matrix(n + extra, 3);
        for (std::size_t i = 0; i < in.size(); ++i) pts[i] = in[i];
        for (std::size_t e = 0; e < extra; ++e) {
            const std::size_t src = rng.index(n);
            for (std::size_t j = 0; j < 3; ++j)
                pts.at(n + e, j) = in.at(src, j) + 0.01 * rng.normal();
        }
        out.points = std::move(pts);
        return out;
    }
    if (spec.kind == "rbf" || spec.kind == "rbf-i") {
        const int centers = 5;
        const double width = 0.5;
        std::array<std::array<double, 3>, 5> c{};
        std::array<std::array<double, 3>, 5> w{};
        double wsum = 0.0;
        for (int j = 0; j < centers; ++j) {
            // centers uniform in the unit ball
            do {
                for (int k = 0; k < 3; ++k) c[static_cast<std::size_t>(j)][static_cast<std::size_t>(k)] = rng.uniform(-1, 1);
            } while (c[static_cast<std::size_t>(j)][0] * c[static_cast<std::size_t>(j)][0] +
                         c[static_cast<std::size_t>(j)][1] * c[static_cast<std::size_t>(j)][1] +
                         c[static_cast<std::size_t>(j)][2] * c[static_cast<std::size_t>(j)][2] >
                     1.0);
            double nw = 0.0;
            for (int k = 0; k < 3; ++k) {
                w[static_cast<std::size_t>(j)][static_cast<std::size_t>(k)] = rng.normal();
                nw += w[static_cast<std::size_t>(j)][static_cast<std::size_t>(k)] *
                      w[static_cast<std::size_t>(j)][static_cast<std::size_t>(k)];
            }
            wsum += std::sqrt(nw);
        }
        const double scale = kRbfNorm[sv] / wsum;
        const bool gaussian = (spec.kind == "rbf");
        for (std::size_t i = 0; i < n; ++i) {
            double d[3] = {0, 0, 0};
            for (int j = 0; j < centers; ++j) {
                double r2 = 0.0;
                for (int k = 0; k < 3; ++k) {
                    const double diff = in.at(i, static_cast<std::size_t>(k)) -
                                        c[static_cast<std::size_t>(j)][static_cast<std::size_t>(k)];
                    r2 += diff * diff;
                }
                const double phi = gaussian ? std::exp(-r2 / (2.0 * width * width))
                                            : 1.0 / std::sqrt(1.0 + r2 / (width * width));
                for (int k = 0; k < 3; ++k)
                    d[k] += phi * w[static_cast<std::size_t>(j)][static_cast<std::size_t>(k)];
            }
            for (std::size_t k = 0; k < 3; ++k) out.points.at(i, k) += scale * d[k];
        }
        return out;
    }
    if (spec.kind == "shear") {
        const double s = kShear[sv];
        // product of two elementary shears; each is triangular with unit
        // diagonal, so the determinant stays exactly 1
        auto elementary = [&](std::array<double, 9>& m) {
            m = {1, 0, 0, 0, 1, 0, 0, 0, 1};
            const std::size_t pos = rng.index(6);  // 6 off-diagonal slots
            static constexpr std::array<std::pair<int, int>, 6> slots = {
                {{0, 1}, {0, 2}, {1, 0}, {1, 2}, {2, 0}, {2, 1}}};
            const auto [r, cidx] = slots[pos];
            m[static_cast<std::size_t>(r * 3 + cidx)] = (rng.uniform() < 0.5 ? -s : s);
        };
        std::array<double, 9> m1{}, m2{};
        elementary(m1);
        elementary(m2);
        std::array<double, 9> m{};
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                double acc = 0.0;
                for (int k = 0; k < 3; ++k)
                    acc += m1[static_cast<std::size_t>(i * 3 + k)] * m2[static_cast<std::size_t>(k * 3 + j)];
                m[static_cast<std::size_t>(i * 3 + j)] = acc;
            }
        corrupt_detail::apply_linear(out.points, m);
        return out;
    }
    if (spec.kind == "rot") {
        std::array<double, 3> axis{};
        rng.unit_vector3(axis.data());
        const double angle = kRotDeg[sv] * 3.14159265358979323846 / 180.0;
        out.points = apply_rotation(in, axis, angle);
        return out;
    }
    if (spec.kind == "dist") {
        // smooth warp: 8^3 lattice of offsets over [-1.1, 1.1]^3, trilinear
        constexpr int G = 8;
        const double mag = kDistMag[sv];
        const double lo = -1.1, hi = 1.1;
        std::vector<std::array<double, 3>> lattice(G * G * G);
        const double per_coord = mag / std::sqrt(3.0);
        for (auto& node : lattice)
            for (double& v : node) v = per_coord * rng.normal();
        const double cell = (hi - lo) / (G - 1);
        for (std::size_t i = 0; i < n; ++i) {
            double f[3], w0[3];
            int idx0[3];
            for (std::size_t k = 0; k < 3; ++k) {
                double g = (in.at(i, k) - lo) / cell;
                g = std::clamp(g, 0.0, static_cast<double>(G - 1) - 1e-9);
                idx0[k] = static_cast<int>(g);
                f[k] = g - idx0[k];
                w0[k] = 1.0 - f[k];
            }
            double d[3] = {0, 0, 0};
            for (int dx = 0; dx < 2; ++dx)
                for (int dy = 0; dy < 2; ++dy)
                    for (int dz = 0; dz < 2; ++dz) {
                        const double wgt = (dx ? f[0] : w0[0]) * (dy ? f[1] : w0[1]) *
                                           (dz ? f[2] : w0[2]);
                        const auto& node =
                            lattice[static_cast<std::size_t>(((idx0[0] + dx) * G + idx0[1] + dy) * G +
                                                             idx0[2] + dz)];
                        for (int k = 0; k < 3; ++k) d[k] += wgt * node[static_cast<std::size_t>(k)];
                    }
            for (std::size_t k = 0; k < 3; ++k) out.points.at(i, k) += d[k];
        }
        return out;
    }
    if (spec.kind == "den-d" || spec.kind == "den-i") {
        const int anchors = kDenAnchors[sv];
        const bool deleting = (spec.kind == "den-d");
        std::vector<char> alive(n, 1);
        Tensor added = Tensor::matrix(0, 3);
        std::vector<std::array<double, 3>> dup;
        for (int a = 0; a < anchors; ++a) {
            const std::size_t anchor = rng.index(n);
            std::vector<std::size_t> nn = knn_of(in, anchor, 100, alive);
            if (deleting) {
                // remove a random 75% of the neighborhood
                std::vector<std::size_t> pick =
                    rng.sample_without_replacement(nn.size(), (nn.size() * 3) / 4);
                std::sort(pick.begin(), pick.end());
                for (std::size_t p : pick) alive[nn[p]] = 0;
            } else {
                for (std::size_t p : nn) {
                    std::array<double, 3> q{};
                    for (std::size_t k = 0; k < 3; ++k)
                        q[k] = in.at(p, k) + 0.005 * rng.normal();
                    dup.push_back(q);
                }
            }
        }
        if (deleting) {
            // keep at least one point
            if (std::none_of(alive.begin(), alive.end(), [](char c) { return c != 0; }))
                alive[0] = 1;
            out.points = keep_rows(in, alive);
        } else {
            Tensor pts = Tensor::matrix(n + dup.size(), 3);
            for (std::size_t i = 0; i < in.size(); ++i) pts[i] = in[i];
            for (std::size_t e = 0; e < dup.size(); ++e)
                for (std::size_t k = 0; k < 3; ++k) pts.at(n + e, k) = dup[e][k];
            out.points = std::move(pts);
        }
        return out;
    }
    if (spec.kind == "cut") {
        const int clusters = kCutClusters[sv];
        std::vector<char> alive(n, 1);
        std::size_t alive_count = n;
        for (int a = 0; a < clusters && alive_count > 64; ++a) {
            std::size_t anchor;
            do {
                anchor = rng.index(n);
            } while (!alive[anchor]);
            std::vector<std::size_t> nn = knn_of(in, anchor, 64, alive);
            for (std::size_t p : nn) alive[p] = 0;
            alive_count -= nn.size();
        }
        out.points = keep_rows(in, alive);
        return out;
    }
    if (spec.kind == "occ") {
        std::array<double, 3> v{};
        rng.unit_vector3(v.data());
        const std::size_t drop = std::min<std::size_t>(
            n - 1, static_cast<std::size_t>(std::floor(kOccFrac[sv] * n)));
        std::vector<std::pair<double, std::size_t>> dots(n);
        for (std::size_t i = 0; i < n; ++i) {
            const double d = in.at(i, 0) * v[0] + in.at(i, 1) * v[1] + in.at(i, 2) * v[2];
            dots[i] = {-d, i};  // descending by dot, ties by index
        }
        std::sort(dots.begin(), dots.end());
        std::vector<char> alive(n, 1);
        for (std::size_t i = 0; i < drop; ++i) alive[dots[i].second] = 0;
        out.points = keep_rows(in, alive);
        return out;
    }
    if (spec.kind == "lidar") {
        const int rings = kLidarRings[sv];
        std::array<double, 3> pole{};
        rng.unit_vector3(pole.data());
        const double spacing = 3.14159265358979323846 / rings;
        const double band = 0.3 * spacing / 2.0;
        std::vector<char> alive(n, 0);
        std::size_t kept = 0;
        for (std::size_t i = 0; i < n; ++i) {
            double norm = 0.0, d = 0.0;
            for (std::size_t k = 0; k < 3; ++k) {
                norm += in.at(i, k) * in.at(i, k);
                d += in.at(i, k) * pole[k];
            }
            norm = std::sqrt(norm);
            if (norm < 1e-12) continue;
            const double elev = std::asin(std::clamp(d / norm, -1.0, 1.0));  // [-pi/2, pi/2]
            // nearest ring center at -pi/2 + (j+0.5)*spacing
            const double g = (elev + 3.14159265358979323846 / 2.0) / spacing - 0.5;
            const double gr = std::clamp(std::round(g), 0.0, static_cast<double>(rings - 1));
            const double ring_elev = -3.14159265358979323846 / 2.0 + (gr + 0.5) * spacing;
            if (std::abs(elev - ring_elev) <= band) {
                alive[i] = 1;
                ++kept;
            }
        }
        if (kept == 0) alive[0] = 1;
        Tensor pts = keep_rows(in, alive);
        for (std::size_t i = 0; i < pts.size(); ++i) pts[i] += 0.005 * rng.normal();
        out.points = std::move(pts);
        return out;
    }
    throw argument_error("apply_corruption: unknown kind '" + spec.kind + "'");
}

}  // namespace driftback
