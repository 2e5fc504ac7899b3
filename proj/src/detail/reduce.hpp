#ifndef CMUNEXT_DETAIL_REDUCE_HPP
#define CMUNEXT_DETAIL_REDUCE_HPP

#include <cstdint>

namespace cmx::detail {

// Fixed-order lane reductions. The lane arrays map onto SIMD registers under
// -O3 while keeping one deterministic summation order, so repeated runs stay
// bit-identical.
inline constexpr int kLanes = 16;

inline float dot(const float* a, const float* b, std::int64_t n) {
    float acc[kLanes] = {};
    std::int64_t i = 0;
    for (; i + kLanes <= n; i += kLanes) {
        for (int l = 0; l < kLanes; ++l) {
            acc[l] += a[i + l] * b[i + l];
        }
    }
    float tail = 0.0f;
    for (; i < n; ++i) {
        tail += a[i] * b[i];
    }
    float total = 0.0f;
    for (int l = 0; l < kLanes; ++l) {
        total += acc[l];
    }
    return total + tail;
}

inline float sum(const float* a, std::int64_t n) {
    float acc[kLanes] = {};
    std::int64_t i = 0;
    for (; i + kLanes <= n; i += kLanes) {
        for (int l = 0; l < kLanes; ++l) {
            acc[l] += a[i + l];
        }
    }
    float tail = 0.0f;
    for (; i < n; ++i) {
        tail += a[i];
    }
    float total = 0.0f;
    for (int l = 0; l < kLanes; ++l) {
        total += acc[l];
    }
    return total + tail;
}

// sum of (a[i] - mu)^2
inline float sq_dev_sum(const float* a, std::int64_t n, float mu) {
    float acc[kLanes] = {};
    std::int64_t i = 0;
    for (; i + kLanes <= n; i += kLanes) {
        for (int l = 0; l < kLanes; ++l) {
            const float d = a[i + l] - mu;
            acc[l] += d * d;
        }
    }
    float tail = 0.0f;
    for (; i < n; ++i) {
        const float d = a[i] - mu;
        tail += d * d;
    }
    float total = 0.0f;
    for (int l = 0; l < kLanes; ++l) {
        total += acc[l];
    }
    return total + tail;
}

inline void axpy(float* dst, const float* src, float w, std::int64_t n) {
    for (std::int64_t i = 0; i < n; ++i) {
        dst[i] += w * src[i];
    }
}

}  // namespace cmx::detail

#endif
