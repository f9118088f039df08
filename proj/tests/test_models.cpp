#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numeric>

#include "driftback/models.hpp"
#include "driftback/synthetic.hpp"

using namespace driftback;

namespace {

PointCloud shape_cloud(ShapeFamily f, std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    return sample_shape(f, n, rng);
}

PointCloud permuted(const PointCloud& c, Rng& rng) {
    std::vector<std::size_t> order(c.points.rows());
    std::iota(order.begin(), order.end(), 0u);
    rng.shuffle(order);
    Tensor p = Tensor::matrix(c.points.rows(), 3);
    for (std::size_t i = 0; i < order.size(); ++i)
        for (std::size_t j = 0; j < 3; ++j) p.at(i, j) = c.points.at(order[i], j);
    PointCloud out = c;
    out.points = std::move(p);
    return out;
}

}  // namespace

TEST_CASE("encode_shape: deterministic mode repeats bit-exactly", "[models]") {
    VaeModel vae = make_vae(32, 1);
    PointCloud x = shape_cloud(ShapeFamily::box, 256, 2);
    ShapeLatent a = encode_shape(vae, x);
    ShapeLatent b = encode_shape(vae, x);
    REQUIRE(a.z.size() == 32);
    for (std::size_t i = 0; i < a.z.size(); ++i) REQUIRE(a.z[i] == b.z[i]);
    // seeded sampling is repeatable and differs from the mean
    ShapeLatent s1 = encode_shape(vae, x, 5);
    ShapeLatent s2 = encode_shape(vae, x, 5);
    bool differs = false;
    for (std::size_t i = 0; i < s1.z.size(); ++i) {
        REQUIRE(s1.z[i] == s2.z[i]);
        if (s1.z[i] != a.z[i]) differs = true;
    }
    REQUIRE(differs);
}

TEST_CASE("encode_shape is exactly permutation invariant", "[models]") {
    VaeModel vae = make_vae(32, 3);
    PointCloud x = shape_cloud(ShapeFamily::torus, 200, 4);
    ShapeLatent a = encode_shape(vae, x);
    Rng prng(77);
    for (int rep = 0; rep < 5; ++rep) {
        PointCloud xp = permuted(x, prng);
        ShapeLatent b = encode_shape(vae, xp);
        for (std::size_t i = 0; i < a.z.size(); ++i) REQUIRE(a.z[i] == b.z[i]);
    }
}

TEST_CASE("encode_points: n preserved, deterministic, equivariant", "[models]") {
    VaeModel vae = make_vae(32, 5);
    PointCloud x = shape_cloud(ShapeFamily::cone, 1024, 6);
    ShapeLatent z = encode_shape(vae, x);
    LatentPoints h = encode_points(vae, z, x);
    REQUIRE(h.values.rows() == 1024);
    REQUIRE(h.values.cols() == 4);
    LatentPoints h2 = encode_points(vae, z, x);
    for (std::size_t i = 0; i < h.values.size(); ++i) REQUIRE(h.values[i] == h2.values[i]);
}

TEST_CASE("decode: shape contract and determinism", "[models]") {
    VaeModel vae = make_vae(32, 7);
    PointCloud x = shape_cloud(ShapeFamily::sphere, 128, 8);
    ShapeLatent z = encode_shape(vae, x);
    LatentPoints h = encode_points(vae, z, x);
    PointCloud d1 = decode(vae, z, h);
    PointCloud d2 = decode(vae, z, h);
    REQUIRE(d1.points.rows() == 128);
    REQUIRE(d1.points.cols() == 3);
    for (std::size_t i = 0; i < d1.points.size(); ++i) REQUIRE(d1.points[i] == d2.points[i]);
}

TEST_CASE("denoise_eps_h: permutation equivariance holds exactly", "[models]") {
    DenoiserModel den = make_denoiser(32, 9);
    Rng rng(10);
    const std::size_t n = 64;
    Tensor h = Tensor::matrix(n, 4);
    for (std::size_t i = 0; i < h.size(); ++i) h[i] = rng.uniform(-1, 1);
    Tensor z = Tensor::matrix(1, 32);
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = rng.normal();

    EpsRecord base = denoise_eps_h_record(den, h, z, 50, false, false);

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0u);
    rng.shuffle(order);
    Tensor hp = Tensor::matrix(n, 4);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < 4; ++j) hp.at(i, j) = h.at(order[i], j);

    EpsRecord perm = denoise_eps_h_record(den, hp, z, 50, false, false);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < 4; ++j)
            REQUIRE(perm.eps.at(i, j) == base.eps.at(order[i], j));
}

TEST_CASE("denoise_eps_h: zero-weight model predicts zero", "[models]") {
    DenoiserModel den = make_denoiser(32, 11);
    for (Tensor* p : den.params())
        for (std::size_t i = 0; i < p->size(); ++i) (*p)[i] = 0.0;
    Rng rng(12);
    Tensor h = Tensor::matrix(16, 4);
    for (std::size_t i = 0; i < h.size(); ++i) h[i] = rng.uniform(-1, 1);
    Tensor z = Tensor::matrix(1, 32);
    EpsRecord r = denoise_eps_h_record(den, h, z, 100, false, false);
    for (std::size_t i = 0; i < r.eps.size(); ++i) REQUIRE(r.eps[i] == 0.0);
}

TEST_CASE("denoise_eps_h: vjp w.r.t. z0 and h_t matches finite differences", "[models]") {
    const double step = 1e-5;
    for (std::uint64_t inst = 0; inst < 20; ++inst) {
        DenoiserModel den = make_denoiser(8, 100 + inst);
        Rng rng(200 + inst);
        const std::size_t n = 6;
        Tensor h = Tensor::matrix(n, 4);
        for (std::size_t i = 0; i < h.size(); ++i) h[i] = rng.uniform(-1, 1);
        Tensor z = Tensor::matrix(1, 8);
        for (std::size_t i = 0; i < z.size(); ++i) z[i] = rng.normal();
        Tensor u = Tensor::matrix(n, 4);
        for (std::size_t i = 0; i < u.size(); ++i) u[i] = rng.uniform(-1, 1);
        const int t = 1 + static_cast<int>(rng.index(1000));

        EpsRecord rec = denoise_eps_h_record(den, h, z, t, true, false);
        Tensor gz = rec.tape.vjp(rec.output, u, rec.z_leaf);
        Tensor gh = rec.tape.vjp(rec.output, u, rec.h_leaf);

        auto dot_with_u = [&](const Tensor& hh, const Tensor& zz) {
            EpsRecord r = denoise_eps_h_record(den, hh, zz, t, false, false);
            double s = 0.0;
            for (std::size_t i = 0; i < u.size(); ++i) s += u[i] * r.eps[i];
            return s;
        };

        for (std::size_t i = 0; i < z.size(); ++i) {
            Tensor zp = z, zm = z;
            zp[i] += step;
            zm[i] -= step;
            const double fd = (dot_with_u(h, zp) - dot_with_u(h, zm)) / (2 * step);
            const double scale = std::max({std::abs(fd), std::abs(gz[i])});
            REQUIRE(std::abs(gz[i] - fd) <= 1e-4 * scale + 1e-8);
        }
        for (std::size_t i = 0; i < h.size(); ++i) {
            Tensor hp = h, hm = h;
            hp[i] += step;
            hm[i] -= step;
            const double fd = (dot_with_u(hp, z) - dot_with_u(hm, z)) / (2 * step);
            const double scale = std::max({std::abs(fd), std::abs(gh[i])});
            REQUIRE(std::abs(gh[i] - fd) <= 1e-4 * scale + 1e-8);
        }
    }
}

TEST_CASE("oracle_gaussian_eps: point mass pins x0 to mu", "[models]") {
    NoiseSchedule s = build_schedule(100, 1e-3, 0.02, 10);
    Rng rng(13);
    Tensor mu({2, 3});
    Tensor xt({2, 3});
    for (std::size_t i = 0; i < mu.size(); ++i) {
        mu[i] = rng.uniform(-1, 1);
        xt[i] = rng.normal();
    }
    const int t = 40;
    Tensor eps = oracle_gaussian_eps(mu, 0.0, xt, t, s);
    const double ab = s.abar(t);
    for (std::size_t i = 0; i < eps.size(); ++i) {
        const double want = (xt[i] - std::sqrt(ab) * mu[i]) / std::sqrt(1 - ab);
        REQUIRE(eps[i] == Catch::Approx(want).margin(1e-12));
    }
}

TEST_CASE("oracle_gaussian_eps: stationary standard normal", "[models]") {
    NoiseSchedule s = build_schedule(100, 1e-3, 0.02, 10);
    Tensor mu({1, 4});
    Tensor xt({1, 4}, {0.3, -0.7, 1.1, 0.0});
    const int t = 70;
    Tensor eps = oracle_gaussian_eps(mu, 1.0, xt, t, s);
    const double ab = s.abar(t);
    for (std::size_t i = 0; i < eps.size(); ++i)
        REQUIRE(eps[i] == Catch::Approx(std::sqrt(1 - ab) * xt[i]).margin(1e-12));
}

TEST_CASE("oracle_gaussian_eps: hand arithmetic at alpha_bar = 0.5", "[models]") {
    NoiseSchedule s = build_schedule(1, 0.5, 0.5, 1);
    REQUIRE(s.abar(1) == Catch::Approx(0.5).margin(1e-15));
    Tensor mu({1, 1}, {2.0});
    Tensor xt({1, 1}, {1.0});
    Tensor eps = oracle_gaussian_eps(mu, 1.0, xt, 1, s);
    const double x0 = std::sqrt(0.5) * 1.0 + 0.5 * 2.0;  // denominator is 1
    REQUIRE(x0 == Catch::Approx(1.7071).margin(1e-4));
    REQUIRE(eps[0] == Catch::Approx((1.0 - std::sqrt(0.5) * x0) / std::sqrt(0.5)).margin(1e-12));
    REQUIRE_THROWS_AS(oracle_gaussian_eps(mu, -1.0, xt, 1, s), argument_error);
}

TEST_CASE("DDIM loop with the Gaussian oracle matches the closed-form endpoint", "[models]") {
    // Independent scalar-coefficient oracle: every oracle-DDIM step is affine
    // x' = A x + B mu; compose the coefficients and compare endpoints.
    NoiseSchedule s = build_schedule(1000, 1e-4, 0.02, 100);
    const double var = 0.6;
    Rng rng(17);
    Tensor mu({3, 4});
    Tensor xT({3, 4});
    for (std::size_t i = 0; i < mu.size(); ++i) {
        mu[i] = rng.uniform(-1, 1);
        xT[i] = rng.normal();
    }

    double A = 1.0, B = 0.0;
    for (int k = 100; k >= 1; --k) {
        const int t = s.ddim_timestep(k);
        const int tp = s.ddim_timestep(k - 1);
        const double ab = s.abar(t), abp = s.abar(tp);
        const double D = ab * var + (1 - ab);
        const double a0 = std::sqrt(ab) * var / D;
        const double b0 = (1 - ab) / D;
        const double ae = (1 - std::sqrt(ab) * a0) / std::sqrt(1 - ab);
        const double be = -std::sqrt(ab) * b0 / std::sqrt(1 - ab);
        const double As = std::sqrt(abp) * a0 + std::sqrt(1 - abp) * ae;
        const double Bs = std::sqrt(abp) * b0 + std::sqrt(1 - abp) * be;
        // compose x' = As x + Bs mu with the running x = A xT + B mu
        B = As * B + Bs;
        A = As * A;
    }

    Tensor x = xT;
    for (int k = 100; k >= 1; --k) {
        const int t = s.ddim_timestep(k);
        const int tp = s.ddim_timestep(k - 1);
        Tensor eps = oracle_gaussian_eps(mu, var, x, t, s);
        x = ddim_step(x, eps, t, tp, s);
    }

    for (std::size_t i = 0; i < x.size(); ++i) {
        const double want = A * xT[i] + B * mu[i];
        REQUIRE(std::abs(x[i] - want) < 1e-5);
    }
}

TEST_CASE("classify: exact permutation invariance and duplication idempotence", "[models]") {
    ClassifierModel clf = make_classifier(8, 19);
    PointCloud x = shape_cloud(ShapeFamily::helix, 300, 20);
    Classification base = classify(clf, x);
    REQUIRE(base.logits.size() == 8);

    Rng prng(21);
    for (int rep = 0; rep < 5; ++rep) {
        Classification p = classify(clf, permuted(x, prng));
        for (std::size_t i = 0; i < 8; ++i) REQUIRE(p.logits[i] == base.logits[i]);
        REQUIRE(p.label == base.label);
    }

    // duplicate every point
    Tensor dup = Tensor::matrix(x.points.rows() * 2, 3);
    for (std::size_t i = 0; i < x.points.rows(); ++i)
        for (std::size_t j = 0; j < 3; ++j) {
            dup.at(2 * i, j) = x.points.at(i, j);
            dup.at(2 * i + 1, j) = x.points.at(i, j);
        }
    PointCloud xdup = x;
    xdup.points = std::move(dup);
    Classification d = classify(clf, xdup);
    for (std::size_t i = 0; i < 8; ++i) REQUIRE(d.logits[i] == base.logits[i]);
}

TEST_CASE("classify: ties break to the lowest index", "[models]") {
    ClassifierModel clf = make_classifier(4, 23);
    for (Tensor* p : clf.params())
        for (std::size_t i = 0; i < p->size(); ++i) (*p)[i] = 0.0;
    PointCloud x = shape_cloud(ShapeFamily::sphere, 32, 24);
    Classification c = classify(clf, x);
    for (std::size_t i = 0; i < 4; ++i) REQUIRE(c.logits[i] == 0.0);
    REQUIRE(c.label == 0);
}
