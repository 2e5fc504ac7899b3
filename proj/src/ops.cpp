#include <algorithm>
#include <cmath>
#include <string>

#include "cmunext/ops.hpp"
#include "detail/reduce.hpp"

namespace cmx {

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

BatchNormState::BatchNormState(int channels) {
    if (channels <= 0) {
        throw ConfigError("batchnorm: channel count must be positive");
    }
    gamma.assign(static_cast<std::size_t>(channels), 1.0f);
    beta.assign(static_cast<std::size_t>(channels), 0.0f);
    running_mean.assign(static_cast<std::size_t>(channels), 0.0f);
    running_var.assign(static_cast<std::size_t>(channels), 1.0f);
}

Tensor batchnorm2d(const Tensor& input, BatchNormState& state, BatchNormContext* ctx) {
    const Shape4 in = input.shape();
    const int C = state.channels();
    if (in.c != C) {
        throw DimensionError("batchnorm2d: input has " + std::to_string(in.c) +
                             " channels, state has " + std::to_string(C));
    }
    if (state.beta.size() != state.gamma.size() || state.running_mean.size() != state.gamma.size() ||
        state.running_var.size() != state.gamma.size()) {
        throw ConfigError("batchnorm2d: state vectors disagree on channel count");
    }
    const std::int64_t plane = static_cast<std::int64_t>(in.h) * in.w;
    const std::int64_t m = static_cast<std::int64_t>(in.n) * plane;
    if (state.mode == Mode::Train && m <= 1) {
        throw StateError(
            "batchnorm2d: train mode needs more than one value per channel "
            "(N*H*W == 1); switch to eval mode or use a larger batch");
    }

    std::vector<float> mean(static_cast<std::size_t>(C));
    std::vector<float> inv_std(static_cast<std::size_t>(C));

    if (state.mode == Mode::Train) {
        for (int c = 0; c < C; ++c) {
            float s = 0.0f;
            for (int n = 0; n < in.n; ++n) {
                s += detail::sum(input.plane(n, c), plane);
            }
            const float mu = s / static_cast<float>(m);
            float sq = 0.0f;
            for (int n = 0; n < in.n; ++n) {
                sq += detail::sq_dev_sum(input.plane(n, c), plane, mu);
            }
            const float var = sq / static_cast<float>(m);  // biased
            mean[static_cast<std::size_t>(c)] = mu;
            inv_std[static_cast<std::size_t>(c)] = 1.0f / std::sqrt(var + state.eps);
            state.running_mean[static_cast<std::size_t>(c)] =
                (1.0f - state.momentum) * state.running_mean[static_cast<std::size_t>(c)] + state.momentum * mu;
            state.running_var[static_cast<std::size_t>(c)] =
                (1.0f - state.momentum) * state.running_var[static_cast<std::size_t>(c)] + state.momentum * var;
        }
    } else {
        for (int c = 0; c < C; ++c) {
            const float var = state.running_var[static_cast<std::size_t>(c)];
            if (var <= 0.0f) {
                throw ValidationError("batchnorm2d: running_var must be strictly positive, channel " +
                                      std::to_string(c));
            }
            mean[static_cast<std::size_t>(c)] = state.running_mean[static_cast<std::size_t>(c)];
            inv_std[static_cast<std::size_t>(c)] = 1.0f / std::sqrt(var + state.eps);
        }
    }

    Tensor out(in);
    for (int n = 0; n < in.n; ++n) {
        for (int c = 0; c < C; ++c) {
            const float g = state.gamma[static_cast<std::size_t>(c)];
            const float b = state.beta[static_cast<std::size_t>(c)];
            const float mu = mean[static_cast<std::size_t>(c)];
            const float is = inv_std[static_cast<std::size_t>(c)];
            const float scale = g * is;
            const float shift = b - mu * scale;
            const float* src = input.plane(n, c);
            float* dst = out.plane(n, c);
            for (std::int64_t i = 0; i < plane; ++i) {
                dst[i] = src[i] * scale + shift;
            }
        }
    }

    if (ctx != nullptr) {
        ctx->input = input;
        ctx->mean = std::move(mean);
        ctx->inv_std = std::move(inv_std);
        ctx->gamma = state.gamma;
        ctx->mode = state.mode;
        ctx->valid = true;
        ctx->consumed = false;
    }
    return out;
}

BatchNormGrads batchnorm2d_backward(const Tensor& grad_out, BatchNormContext& ctx) {
    if (!ctx.valid) {
        throw StateError("batchnorm2d_backward: no saved forward context");
    }
    if (ctx.consumed) {
        throw StateError("batchnorm2d_backward called twice without re-running forward");
    }
    const Shape4 in = ctx.input.shape();
    check_same_shape(in, grad_out.shape(), "batchnorm2d grad_out");
    const int C = in.c;
    const std::int64_t plane = static_cast<std::int64_t>(in.h) * in.w;
    const std::int64_t m = static_cast<std::int64_t>(in.n) * plane;

    BatchNormGrads grads;
    grads.input = Tensor(in);
    grads.gamma.assign(static_cast<std::size_t>(C), 0.0f);
    grads.beta.assign(static_cast<std::size_t>(C), 0.0f);

    for (int c = 0; c < C; ++c) {
        const float mu = ctx.mean[static_cast<std::size_t>(c)];
        const float is = ctx.inv_std[static_cast<std::size_t>(c)];
        const float g = ctx.gamma[static_cast<std::size_t>(c)];

        float sum_dy = 0.0f;
        float sum_dy_xhat = 0.0f;
        for (int n = 0; n < in.n; ++n) {
            const float* dy = grad_out.plane(n, c);
            const float* x = ctx.input.plane(n, c);
            sum_dy += detail::sum(dy, plane);
            // sum(dy * (x - mu)) * is
            float acc = 0.0f;
            for (std::int64_t i = 0; i < plane; ++i) {
                acc += dy[i] * (x[i] - mu);
            }
            sum_dy_xhat += acc * is;
        }
        grads.beta[static_cast<std::size_t>(c)] = sum_dy;
        grads.gamma[static_cast<std::size_t>(c)] = sum_dy_xhat;

        if (ctx.mode == Mode::Train) {
            const float inv_m = 1.0f / static_cast<float>(m);
            const float k = g * is;
            for (int n = 0; n < in.n; ++n) {
                const float* dy = grad_out.plane(n, c);
                const float* x = ctx.input.plane(n, c);
                float* dx = grads.input.plane(n, c);
                for (std::int64_t i = 0; i < plane; ++i) {
                    const float xhat = (x[i] - mu) * is;
                    dx[i] = k * (dy[i] - inv_m * (sum_dy + xhat * sum_dy_xhat));
                }
            }
        } else {
            const float k = g * is;
            for (int n = 0; n < in.n; ++n) {
                const float* dy = grad_out.plane(n, c);
                float* dx = grads.input.plane(n, c);
                for (std::int64_t i = 0; i < plane; ++i) {
                    dx[i] = k * dy[i];
                }
            }
        }
    }

    ctx.consumed = true;
    return grads;
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

namespace {
constexpr float kInvSqrt2 = 0.7071067811865476f;
constexpr float kInvSqrt2Pi = 0.3989422804014327f;

inline float norm_cdf(float x) { return 0.5f * (1.0f + std::erf(x * kInvSqrt2)); }
}  // namespace

Tensor gelu(const Tensor& input) {
    Tensor out(input.shape());
    const float* src = input.data();
    float* dst = out.data();
    const std::int64_t n = input.numel();
    for (std::int64_t i = 0; i < n; ++i) {
        dst[i] = src[i] * norm_cdf(src[i]);
    }
    return out;
}

Tensor gelu_backward(const Tensor& grad_out, const Tensor& input) {
    check_same_shape(input.shape(), grad_out.shape(), "gelu grad_out");
    Tensor out(input.shape());
    const float* x = input.data();
    const float* dy = grad_out.data();
    float* dst = out.data();
    const std::int64_t n = input.numel();
    for (std::int64_t i = 0; i < n; ++i) {
        const float pdf = kInvSqrt2Pi * std::exp(-0.5f * x[i] * x[i]);
        dst[i] = dy[i] * (norm_cdf(x[i]) + x[i] * pdf);
    }
    return out;
}

Tensor relu(const Tensor& input) {
    Tensor out(input.shape());
    const float* src = input.data();
    float* dst = out.data();
    const std::int64_t n = input.numel();
    for (std::int64_t i = 0; i < n; ++i) {
        dst[i] = src[i] > 0.0f ? src[i] : 0.0f;
    }
    return out;
}

Tensor relu_backward(const Tensor& grad_out, const Tensor& input) {
    check_same_shape(input.shape(), grad_out.shape(), "relu grad_out");
    Tensor out(input.shape());
    const float* x = input.data();
    const float* dy = grad_out.data();
    float* dst = out.data();
    const std::int64_t n = input.numel();
    for (std::int64_t i = 0; i < n; ++i) {
        dst[i] = x[i] > 0.0f ? dy[i] : 0.0f;
    }
    return out;
}

Tensor sigmoid(const Tensor& input) {
    Tensor out(input.shape());
    const float* src = input.data();
    float* dst = out.data();
    const std::int64_t n = input.numel();
    for (std::int64_t i = 0; i < n; ++i) {
        const float x = src[i];
        if (x >= 0.0f) {
            dst[i] = 1.0f / (1.0f + std::exp(-x));
        } else {
            const float e = std::exp(x);
            dst[i] = e / (1.0f + e);
        }
    }
    return out;
}

Tensor sigmoid_backward(const Tensor& grad_out, const Tensor& output) {
    check_same_shape(output.shape(), grad_out.shape(), "sigmoid grad_out");
    Tensor out(output.shape());
    const float* y = output.data();
    const float* dy = grad_out.data();
    float* dst = out.data();
    const std::int64_t n = output.numel();
    for (std::int64_t i = 0; i < n; ++i) {
        dst[i] = dy[i] * y[i] * (1.0f - y[i]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Max pooling
// ---------------------------------------------------------------------------

Tensor maxpool2x2(const Tensor& input, MaxPoolContext* ctx) {
    const Shape4 in = input.shape();
    if (in.h % 2 != 0 || in.w % 2 != 0) {
        throw DimensionError("maxpool2x2: H and W must be even, got " + in.str());
    }
    const Shape4 os{in.n, in.c, in.h / 2, in.w / 2};
    Tensor out(os);
    std::vector<std::int32_t> argmax;
    if (ctx != nullptr) {
        argmax.resize(static_cast<std::size_t>(os.numel()));
    }

    std::int64_t oi = 0;
    for (int n = 0; n < in.n; ++n) {
        for (int c = 0; c < in.c; ++c) {
            const float* src = input.plane(n, c);
            float* dst = out.plane(n, c);
            const std::int64_t base = input.offset(n, c, 0, 0);
            for (int oy = 0; oy < os.h; ++oy) {
                const float* r0 = src + static_cast<std::int64_t>(2 * oy) * in.w;
                const float* r1 = r0 + in.w;
                for (int ox = 0; ox < os.w; ++ox) {
                    const int x0 = 2 * ox;
                    // first occurrence in row-major window order wins ties
                    float best = r0[x0];
                    int best_idx = 0;
                    if (r0[x0 + 1] > best) { best = r0[x0 + 1]; best_idx = 1; }
                    if (r1[x0] > best) { best = r1[x0]; best_idx = 2; }
                    if (r1[x0 + 1] > best) { best = r1[x0 + 1]; best_idx = 3; }
                    dst[static_cast<std::int64_t>(oy) * os.w + ox] = best;
                    if (ctx != nullptr) {
                        const std::int64_t iy = static_cast<std::int64_t>(2 * oy + best_idx / 2);
                        const std::int64_t ix = x0 + best_idx % 2;
                        argmax[static_cast<std::size_t>(oi)] =
                            static_cast<std::int32_t>(base + iy * in.w + ix);
                    }
                    ++oi;
                }
            }
        }
    }

    if (ctx != nullptr) {
        ctx->input_shape = in;
        ctx->argmax = std::move(argmax);
        ctx->valid = true;
        ctx->consumed = false;
    }
    return out;
}

Tensor maxpool2x2_backward(const Tensor& grad_out, MaxPoolContext& ctx) {
    if (!ctx.valid) {
        throw StateError("maxpool2x2_backward: no saved forward context");
    }
    if (ctx.consumed) {
        throw StateError("maxpool2x2_backward called twice without re-running forward");
    }
    const Shape4 in = ctx.input_shape;
    const Shape4 os{in.n, in.c, in.h / 2, in.w / 2};
    check_same_shape(os, grad_out.shape(), "maxpool2x2 grad_out");

    Tensor grad_in(in);
    float* gi = grad_in.data();
    const float* go = grad_out.data();
    const std::int64_t n = grad_out.numel();
    for (std::int64_t i = 0; i < n; ++i) {
        gi[ctx.argmax[static_cast<std::size_t>(i)]] += go[i];
    }
    ctx.consumed = true;
    return grad_in;
}

// ---------------------------------------------------------------------------
// Bilinear upsampling
// ---------------------------------------------------------------------------

namespace {

struct LerpTable {
    std::vector<int> lo, hi;
    std::vector<float> t;
};

// Source coordinate for output index i at scale 2: (i + 0.5)/2 - 0.5, clamped.
LerpTable lerp_table_2x(int in_size) {
    LerpTable tab;
    const int out_size = 2 * in_size;
    tab.lo.resize(static_cast<std::size_t>(out_size));
    tab.hi.resize(static_cast<std::size_t>(out_size));
    tab.t.resize(static_cast<std::size_t>(out_size));
    for (int i = 0; i < out_size; ++i) {
        float x = (static_cast<float>(i) + 0.5f) * 0.5f - 0.5f;
        x = std::clamp(x, 0.0f, static_cast<float>(in_size - 1));
        const int lo = static_cast<int>(x);
        tab.lo[static_cast<std::size_t>(i)] = lo;
        tab.hi[static_cast<std::size_t>(i)] = std::min(lo + 1, in_size - 1);
        tab.t[static_cast<std::size_t>(i)] = x - static_cast<float>(lo);
    }
    return tab;
}

}  // namespace

Tensor bilinear_upsample2x(const Tensor& input) {
    const Shape4 in = input.shape();
    const Shape4 os{in.n, in.c, 2 * in.h, 2 * in.w};
    const LerpTable ty = lerp_table_2x(in.h);
    const LerpTable tx = lerp_table_2x(in.w);

    Tensor out(os);
    for (int n = 0; n < in.n; ++n) {
        for (int c = 0; c < in.c; ++c) {
            const float* src = input.plane(n, c);
            float* dst = out.plane(n, c);
            for (int oy = 0; oy < os.h; ++oy) {
                const float* row0 = src + static_cast<std::int64_t>(ty.lo[static_cast<std::size_t>(oy)]) * in.w;
                const float* row1 = src + static_cast<std::int64_t>(ty.hi[static_cast<std::size_t>(oy)]) * in.w;
                const float fy = ty.t[static_cast<std::size_t>(oy)];
                float* out_row = dst + static_cast<std::int64_t>(oy) * os.w;
                for (int ox = 0; ox < os.w; ++ox) {
                    const int x0 = tx.lo[static_cast<std::size_t>(ox)];
                    const int x1 = tx.hi[static_cast<std::size_t>(ox)];
                    const float fx = tx.t[static_cast<std::size_t>(ox)];
                    const float top = row0[x0] + fx * (row0[x1] - row0[x0]);
                    const float bot = row1[x0] + fx * (row1[x1] - row1[x0]);
                    out_row[ox] = top + fy * (bot - top);
                }
            }
        }
    }
    return out;
}

Tensor bilinear_upsample2x_backward(const Tensor& grad_out) {
    const Shape4 os = grad_out.shape();
    if (os.h % 2 != 0 || os.w % 2 != 0) {
        throw DimensionError("bilinear_upsample2x_backward: grad shape must have even H,W, got " +
                             os.str());
    }
    const Shape4 in{os.n, os.c, os.h / 2, os.w / 2};
    const LerpTable ty = lerp_table_2x(in.h);
    const LerpTable tx = lerp_table_2x(in.w);

    Tensor grad_in(in);
    for (int n = 0; n < in.n; ++n) {
        for (int c = 0; c < in.c; ++c) {
            float* dst = grad_in.plane(n, c);
            const float* go = grad_out.plane(n, c);
            for (int oy = 0; oy < os.h; ++oy) {
                const std::int64_t y0 = ty.lo[static_cast<std::size_t>(oy)];
                const std::int64_t y1 = ty.hi[static_cast<std::size_t>(oy)];
                const float fy = ty.t[static_cast<std::size_t>(oy)];
                const float* go_row = go + static_cast<std::int64_t>(oy) * os.w;
                for (int ox = 0; ox < os.w; ++ox) {
                    const int x0 = tx.lo[static_cast<std::size_t>(ox)];
                    const int x1 = tx.hi[static_cast<std::size_t>(ox)];
                    const float fx = tx.t[static_cast<std::size_t>(ox)];
                    const float g = go_row[ox];
                    dst[y0 * in.w + x0] += g * (1.0f - fy) * (1.0f - fx);
                    dst[y0 * in.w + x1] += g * (1.0f - fy) * fx;
                    dst[y1 * in.w + x0] += g * fy * (1.0f - fx);
                    dst[y1 * in.w + x1] += g * fy * fx;
                }
            }
        }
    }
    return grad_in;
}

// ---------------------------------------------------------------------------
// Channel concat / residual
// ---------------------------------------------------------------------------

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    const Shape4 sa = a.shape();
    const Shape4 sb = b.shape();
    if (sa.n != sb.n || sa.h != sb.h || sa.w != sb.w) {
        throw DimensionError("concat_channels: inputs must agree on N,H,W: " + sa.str() + " vs " +
                             sb.str());
    }
    const Shape4 os{sa.n, sa.c + sb.c, sa.h, sa.w};
    Tensor out(os);
    const std::int64_t plane = static_cast<std::int64_t>(sa.h) * sa.w;
    for (int n = 0; n < sa.n; ++n) {
        for (int c = 0; c < sa.c; ++c) {
            std::copy_n(a.plane(n, c), plane, out.plane(n, c));
        }
        for (int c = 0; c < sb.c; ++c) {
            std::copy_n(b.plane(n, c), plane, out.plane(n, sa.c + c));
        }
    }
    return out;
}

std::pair<Tensor, Tensor> concat_channels_backward(const Tensor& grad_out, int channels_a) {
    const Shape4 os = grad_out.shape();
    if (channels_a < 0 || channels_a > os.c) {
        throw DimensionError("concat_channels_backward: split point " + std::to_string(channels_a) +
                             " outside 0.." + std::to_string(os.c));
    }
    Tensor ga(Shape4{os.n, channels_a, os.h, os.w});
    Tensor gb(Shape4{os.n, os.c - channels_a, os.h, os.w});
    const std::int64_t plane = static_cast<std::int64_t>(os.h) * os.w;
    for (int n = 0; n < os.n; ++n) {
        for (int c = 0; c < channels_a; ++c) {
            std::copy_n(grad_out.plane(n, c), plane, ga.plane(n, c));
        }
        for (int c = channels_a; c < os.c; ++c) {
            std::copy_n(grad_out.plane(n, c), plane, gb.plane(n, c - channels_a));
        }
    }
    return {std::move(ga), std::move(gb)};
}

Tensor residual_add(const Tensor& a, const Tensor& b) {
    check_same_shape(a.shape(), b.shape(), "residual_add");
    Tensor out(a.shape());
    const float* pa = a.data();
    const float* pb = b.data();
    float* dst = out.data();
    const std::int64_t n = a.numel();
    for (std::int64_t i = 0; i < n; ++i) {
        dst[i] = pa[i] + pb[i];
    }
    return out;
}

}  // namespace cmx
