#ifndef CMUNEXT_RNG_HPP
#define CMUNEXT_RNG_HPP

#include <cmath>
#include <cstdint>
#include <random>
#include <utility>
#include <vector>

namespace cmx {

// mt19937 with hand-rolled value transforms. The std distributions are
// implementation-defined, so every draw here is spelled out to keep seeded
// runs reproducible across standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(static_cast<std::uint32_t>(seed ^ (seed >> 32))) {}

    std::uint32_t next_u32() { return gen_(); }

    // Uniform in [0, 1) with 24 bits of mantissa.
    float uniform() { return static_cast<float>(next_u32() >> 8) * (1.0f / 16777216.0f); }

    float uniform(float lo, float hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n), n >= 1.
    int uniform_int(int n) { return static_cast<int>(next_u32() % static_cast<std::uint32_t>(n)); }

    bool coin() { return (next_u32() & 1u) != 0; }

    // Box-Muller; consumes two uniforms per pair, caches the second value.
    float normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        float u1 = uniform();
        while (u1 <= 1e-12f) u1 = uniform();
        const float u2 = uniform();
        const float r = std::sqrt(-2.0f * std::log(u1));
        const float a = 6.2831853071795864f * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
            std::swap(v[static_cast<std::size_t>(i)], v[static_cast<std::size_t>(uniform_int(i + 1))]);
        }
    }

private:
    std::mt19937 gen_;
    bool has_spare_ = false;
    float spare_ = 0.0f;
};

}  // namespace cmx

#endif
