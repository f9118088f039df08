#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace driftback {

/// Seeded RNG with fully specified sampling algorithms.
///
/// std::mt19937_64 is bit-exact across platforms, but the standard
/// distributions are not, so uniform/normal/shuffle are implemented here
/// directly. Every random quantity in the pipeline flows through this class.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed), seed_mix_(seed) {}

    std::uint64_t raw() { return engine_(); }

    /// Uniform in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller; no rejection, so the draw count per
    /// call is fixed and replay is exact.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        // u1 in (0,1]: shift the open side away from log(0).
        double u1 = 1.0 - uniform();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    double normal(double mu, double sigma) { return mu + sigma * normal(); }

    /// Uniform integer in [0, n).
    std::size_t index(std::size_t n) {
        // Multiply-shift; bias is negligible for n << 2^64 and the result is
        // platform-stable, unlike uniform_int_distribution.
        return static_cast<std::size_t>(
            (static_cast<unsigned __int128>(engine_()) * n) >> 64);
    }

    /// Fisher-Yates.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = index(i);
            std::swap(v[i - 1], v[j]);
        }
    }

    /// k distinct indices from [0, n), in selection order.
    std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k) {
        std::vector<std::size_t> pool(n);
        for (std::size_t i = 0; i < n; ++i) pool[i] = i;
        if (k > n) k = n;
        for (std::size_t i = 0; i < k; ++i) {
            std::size_t j = i + index(n - i);
            std::swap(pool[i], pool[j]);
        }
        pool.resize(k);
        return pool;
    }

    /// Uniform direction on the unit sphere.
    void unit_vector3(double out[3]) {
        double n2;
        do {
            out[0] = normal();
            out[1] = normal();
            out[2] = normal();
            n2 = out[0] * out[0] + out[1] * out[1] + out[2] * out[2];
        } while (n2 < 1e-12);
        double inv = 1.0 / std::sqrt(n2);
        out[0] *= inv;
        out[1] *= inv;
        out[2] *= inv;
    }

    /// Child stream for a sub-task; mixes the id so nearby ids decorrelate.
    /// Derivation depends only on the construction seed, not on draws made
    /// so far.
    Rng derive(std::uint64_t stream_id) const {
        std::uint64_t x = seed_mix_ ^ (stream_id + 0x9e3779b97f4a7c15ULL);
        x ^= x >> 30;
        x *= 0xbf58476d1ce4e5b9ULL;
        x ^= x >> 27;
        x *= 0x94d049bb133111ebULL;
        x ^= x >> 31;
        return Rng(x);
    }

private:
    std::mt19937_64 engine_;
    std::uint64_t seed_mix_ = 0;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace driftback
