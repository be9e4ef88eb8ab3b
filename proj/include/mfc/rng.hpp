#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace mfc {

// Deterministic RNG. The engine is std::mt19937_64; the uniform/normal/int
// transforms are implemented here because the stdlib distributions are
// implementation-defined and corpora must be bit-identical for a given seed.
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t next_u64() { return gen_(); }

    // [0, 1)
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // inclusive bounds
    int uniform_int(int lo, int hi) {
        return lo + static_cast<int>(gen_() % static_cast<uint64_t>(hi - lo + 1));
    }

    // Marsaglia polar method, one cached spare.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u, v, s;
        do {
            u = uniform(-1.0, 1.0);
            v = uniform(-1.0, 1.0);
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        const double f = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * f;
        has_spare_ = true;
        return u * f;
    }

    double normal(double mean, double sigma) { return mean + sigma * normal(); }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
            std::swap(v[static_cast<size_t>(i)], v[static_cast<size_t>(uniform_int(0, i))]);
        }
    }

private:
    std::mt19937_64 gen_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// splitmix64 step, used to derive per-purpose sub-seeds.
inline uint64_t mix_seed(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline uint64_t seed_chain(uint64_t base, uint64_t a) { return mix_seed(base ^ mix_seed(a)); }

inline uint64_t seed_chain(uint64_t base, uint64_t a, uint64_t b) {
    return seed_chain(seed_chain(base, a), b);
}

}  // namespace mfc
