#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "driftback/geometry.hpp"
#include "driftback/rng.hpp"

namespace driftback {

/// Parametric shape families standing in for a real dataset. Labels are the
/// enum order.
enum class ShapeFamily : int {
    sphere = 0,
    box,
    cylinder,
    cone,
    torus,
    plane,
    helix,
    two_sphere,
};

constexpr int kNumFamilies = 8;

inline const char* family_name(ShapeFamily f) {
    switch (f) {
        case ShapeFamily::sphere: return "sphere";
        case ShapeFamily::box: return "box";
        case ShapeFamily::cylinder: return "cylinder";
        case ShapeFamily::cone: return "cone";
        case ShapeFamily::torus: return "torus";
        case ShapeFamily::plane: return "plane";
        case ShapeFamily::helix: return "helix";
        case ShapeFamily::two_sphere: return "two_sphere";
    }
    return "?";
}

namespace detail {

inline std::array<double, 9> random_rotation(Rng& rng) {
    // Uniform rotation from a normalized Gaussian quaternion.
    double q[4];
    double n2 = 0.0;
    do {
        n2 = 0.0;
        for (double& v : q) {
            v = rng.normal();
            n2 += v * v;
        }
    } while (n2 < 1e-12);
    const double inv = 1.0 / std::sqrt(n2);
    for (double& v : q) v *= inv;
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    return {1 - 2 * (y * y + z * z), 2 * (x * y - w * z),     2 * (x * z + w * y),
            2 * (x * y + w * z),     1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
            2 * (x * z - w * y),     2 * (y * z + w * x),     1 - 2 * (x * x + y * y)};
}

inline void sphere_point(Rng& rng, double r, double cx, double cy, double cz, double* out) {
    double d[3];
    rng.unit_vector3(d);
    out[0] = cx + r * d[0];
    out[1] = cy + r * d[1];
    out[2] = cz + r * d[2];
}

// Frustum side wall: height coordinate s in [0,1] sampled with density
// proportional to the local radius r0 + (r1-r0)s.
inline double frustum_height_sample(Rng& rng, double r0, double r1) {
    const double u = rng.uniform();
    if (std::abs(r1 - r0) < 1e-12) return u;
    const double a = (r1 - r0) / 2.0;
    // Solve a s^2 + r0 s = u (a + r0) for s in [0,1].
    const double rhs = u * (a + r0);
    const double disc = r0 * r0 + 4.0 * a * rhs;
    return (-r0 + std::sqrt(std::max(0.0, disc))) / (2.0 * a);
}

}  // namespace detail

/// One surface-sampled cloud in canonical pose; caller rotates/normalizes.
inline Tensor sample_family_surface(ShapeFamily f, std::size_t n, Rng& rng) {
    Tensor p = Tensor::matrix(n, 3);
    const double two_pi = 2.0 * 3.14159265358979323846;
    switch (f) {
        case ShapeFamily::sphere: {
            for (std::size_t i = 0; i < n; ++i)
                detail::sphere_point(rng, 1.0, 0, 0, 0, p.data() + 3 * i);
            break;
        }
        case ShapeFamily::box: {
            const double a = rng.uniform(0.5, 1.0), b = rng.uniform(0.5, 1.0),
                         c = rng.uniform(0.5, 1.0);
            const double areas[3] = {b * c, a * c, a * b};  // x, y, z faces
            const double total = 2.0 * (areas[0] + areas[1] + areas[2]);
            for (std::size_t i = 0; i < n; ++i) {
                double u = rng.uniform() * total;
                int axis = 0;
                double sign = 1.0;
                for (int k = 0; k < 3; ++k) {
                    if (u < 2 * areas[k]) {
                        axis = k;
                        sign = (u < areas[k]) ? 1.0 : -1.0;
                        break;
                    }
                    u -= 2 * areas[k];
                }
                const double ext[3] = {a, b, c};
                double q[3];
                for (int k = 0; k < 3; ++k) q[k] = rng.uniform(-ext[k], ext[k]);
                q[axis] = sign * ext[axis];
                for (int k = 0; k < 3; ++k) p.at(i, k) = q[k];
            }
            break;
        }
        case ShapeFamily::cylinder: {
            const double r = rng.uniform(0.4, 0.7), h = rng.uniform(1.2, 2.0);
            const double side = two_pi * r * h, cap = 3.14159265358979323846 * r * r;
            const double total = side + 2 * cap;
            for (std::size_t i = 0; i < n; ++i) {
                const double u = rng.uniform() * total;
                const double a = rng.uniform() * two_pi;
                if (u < side) {
                    p.at(i, 0) = r * std::cos(a);
                    p.at(i, 1) = r * std::sin(a);
                    p.at(i, 2) = rng.uniform(-h / 2, h / 2);
                } else {
                    const double rr = r * std::sqrt(rng.uniform());
                    p.at(i, 0) = rr * std::cos(a);
                    p.at(i, 1) = rr * std::sin(a);
                    p.at(i, 2) = (u < side + cap) ? h / 2 : -h / 2;
                }
            }
            break;
        }
        case ShapeFamily::cone: {
            const double r0 = rng.uniform(0.5, 0.8);          // base radius
            const double r1 = r0 * rng.uniform(0.0, 0.3);     // top radius
            const double h = rng.uniform(1.2, 2.0);
            const double slant = std::sqrt(h * h + (r0 - r1) * (r0 - r1));
            const double side = 3.14159265358979323846 * (r0 + r1) * slant;
            const double base = 3.14159265358979323846 * r0 * r0;
            const double top = 3.14159265358979323846 * r1 * r1;
            const double total = side + base + top;
            for (std::size_t i = 0; i < n; ++i) {
                const double u = rng.uniform() * total;
                const double a = rng.uniform() * two_pi;
                if (u < side) {
                    const double s = detail::frustum_height_sample(rng, r0, r1);
                    const double rr = r0 + (r1 - r0) * s;
                    p.at(i, 0) = rr * std::cos(a);
                    p.at(i, 1) = rr * std::sin(a);
                    p.at(i, 2) = -h / 2 + s * h;
                } else if (u < side + base) {
                    const double rr = r0 * std::sqrt(rng.uniform());
                    p.at(i, 0) = rr * std::cos(a);
                    p.at(i, 1) = rr * std::sin(a);
                    p.at(i, 2) = -h / 2;
                } else {
                    const double rr = r1 * std::sqrt(rng.uniform());
                    p.at(i, 0) = rr * std::cos(a);
                    p.at(i, 1) = rr * std::sin(a);
                    p.at(i, 2) = h / 2;
                }
            }
            break;
        }
        case ShapeFamily::torus: {
            const double R = 1.0, r = rng.uniform(0.25, 0.45);
            for (std::size_t i = 0; i < n; ++i) {
                const double u = rng.uniform() * two_pi;
                double v;
                // area-correct rejection on the tube angle
                do {
                    v = rng.uniform() * two_pi;
                } while (rng.uniform() > (R + r * std::cos(v)) / (R + r));
                p.at(i, 0) = (R + r * std::cos(v)) * std::cos(u);
                p.at(i, 1) = (R + r * std::cos(v)) * std::sin(u);
                p.at(i, 2) = r * std::sin(v);
            }
            break;
        }
        case ShapeFamily::plane: {
            const double a = 1.0, b = rng.uniform(0.4, 1.0);
            for (std::size_t i = 0; i < n; ++i) {
                p.at(i, 0) = rng.uniform(-a, a);
                p.at(i, 1) = rng.uniform(-b, b);
                p.at(i, 2) = 0.0;
            }
            break;
        }
        case ShapeFamily::helix: {
            const double R = 0.7, tube = 0.06;
            const double turns = rng.uniform(1.5, 2.5), h = 1.6;
            for (std::size_t i = 0; i < n; ++i) {
                const double t = rng.uniform();  // constant-speed curve
                const double a = t * turns * two_pi;
                const double cx = R * std::cos(a), cy = R * std::sin(a), cz = -h / 2 + t * h;
                // tube cross-section in the plane normal to the curve; a
                // cheap orthonormal frame is fine at this tube radius
                const double phi = rng.uniform() * two_pi;
                double d[3] = {std::cos(a) * std::cos(phi), std::sin(a) * std::cos(phi),
                               std::sin(phi)};
                p.at(i, 0) = cx + tube * d[0];
                p.at(i, 1) = cy + tube * d[1];
                p.at(i, 2) = cz + tube * d[2];
            }
            break;
        }
        case ShapeFamily::two_sphere: {
            const double r1 = rng.uniform(0.4, 0.6), r2 = rng.uniform(0.4, 0.6);
            const double sep = rng.uniform(1.1, 1.5) * (r1 + r2);
            const double a1 = r1 * r1, a2 = r2 * r2;
            for (std::size_t i = 0; i < n; ++i) {
                if (rng.uniform() * (a1 + a2) < a1)
                    detail::sphere_point(rng, r1, 0, 0, -sep / 2, p.data() + 3 * i);
                else
                    detail::sphere_point(rng, r2, 0, 0, sep / 2, p.data() + 3 * i);
            }
            break;
        }
    }
    return p;
}

/// Sampled shape in random pose, normalized to the unit sphere.
inline PointCloud sample_shape(ShapeFamily f, std::size_t n, Rng& rng) {
    Tensor p = sample_family_surface(f, n, rng);
    const std::array<double, 9> m = detail::random_rotation(rng);
    const double s = rng.uniform(0.7, 1.0);  // washed out by normalize; kept for pose realism
    for (std::size_t i = 0; i < p.rows(); ++i) {
        const double x = p.at(i, 0), y = p.at(i, 1), z = p.at(i, 2);
        p.at(i, 0) = s * (m[0] * x + m[1] * y + m[2] * z);
        p.at(i, 1) = s * (m[3] * x + m[4] * y + m[5] * z);
        p.at(i, 2) = s * (m[6] * x + m[7] * y + m[8] * z);
    }
    return normalize(make_cloud(std::move(p)));
}

struct LabeledCloud {
    PointCloud cloud;
    int label = 0;
};

/// families × per_class clouds, grouped by label, each from its own derived
/// stream so corpora are stable under reordering.
inline std::vector<LabeledCloud> make_corpus(int families, int per_class, std::size_t n,
                                             std::uint64_t seed) {
    if (families < 1 || families > kNumFamilies)
        throw argument_error("make_corpus: families must be in 1..8");
    if (per_class < 1) throw argument_error("make_corpus: per_class must be >= 1");
    std::vector<LabeledCloud> out;
    out.reserve(static_cast<std::size_t>(families) * static_cast<std::size_t>(per_class));
    Rng root(seed);
    for (int f = 0; f < families; ++f) {
        for (int i = 0; i < per_class; ++i) {
            Rng r = root.derive(static_cast<std::uint64_t>(f) * 1000003ULL +
                                static_cast<std::uint64_t>(i));
            out.push_back({sample_shape(static_cast<ShapeFamily>(f), n, r), f});
        }
    }
    return out;
}

}  // namespace driftback
