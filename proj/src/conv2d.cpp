#include <algorithm>
#include <string>

#include "cmunext/ops.hpp"
#include "detail/reduce.hpp"

namespace cmx {

namespace {

void check_weight_shape(const Tensor& weight, const ConvSpec& spec) {
    const Shape4 expect{spec.out_channels, spec.in_channels / spec.groups, spec.kernel, spec.kernel};
    if (!(weight.shape() == expect)) {
        check_same_shape(expect, weight.shape(), "conv2d weight");
    }
}

}  // namespace

void ConvSpec::validate() const {
    if (in_channels <= 0) throw ConfigError("conv spec: in_channels must be positive");
    if (out_channels <= 0) throw ConfigError("conv spec: out_channels must be positive");
    if (kernel <= 0 || kernel % 2 == 0) {
        throw ConfigError("conv spec: kernel must be a positive odd integer, got " +
                          std::to_string(kernel));
    }
    if (stride <= 0) throw ConfigError("conv spec: stride must be positive");
    if (padding < 0) throw ConfigError("conv spec: padding must be non-negative");
    if (groups <= 0) throw ConfigError("conv spec: groups must be positive");
    if (in_channels % groups != 0) {
        throw ConfigError("conv spec: groups=" + std::to_string(groups) +
                          " does not divide in_channels=" + std::to_string(in_channels));
    }
    if (out_channels % groups != 0) {
        throw ConfigError("conv spec: groups=" + std::to_string(groups) +
                          " does not divide out_channels=" + std::to_string(out_channels));
    }
}

Shape4 ConvSpec::output_shape(const Shape4& in) const {
    if (in.c != in_channels) {
        throw DimensionError("conv2d input channel axis C: got " + std::to_string(in.c) +
                             ", spec expects " + std::to_string(in_channels));
    }
    const int oh = (in.h + 2 * padding - kernel) / stride + 1;
    const int ow = (in.w + 2 * padding - kernel) / stride + 1;
    if (in.h + 2 * padding < kernel || in.w + 2 * padding < kernel) {
        throw DimensionError("conv2d kernel " + std::to_string(kernel) +
                             " exceeds padded input " + in.str());
    }
    return Shape4{in.n, out_channels, oh, ow};
}

std::int64_t ConvSpec::weight_count() const {
    return static_cast<std::int64_t>(kernel) * kernel * (in_channels / groups) * out_channels;
}

std::int64_t ConvSpec::param_count() const {
    return weight_count() + (has_bias ? out_channels : 0);
}

std::uint64_t ConvSpec::macs(const Shape4& input) const {
    const Shape4 out = output_shape(input);
    return static_cast<std::uint64_t>(kernel) * kernel * (in_channels / groups) * out_channels *
           out.h * out.w * out.n;
}

Tensor conv2d(const Tensor& input, const Tensor& weight, const float* bias, const ConvSpec& spec,
              Conv2dContext* ctx) {
    spec.validate();
    check_weight_shape(weight, spec);
    if (spec.has_bias && bias == nullptr) {
        throw ConfigError("conv2d: spec declares a bias but none was supplied");
    }
    if (!spec.has_bias && bias != nullptr) {
        throw ConfigError("conv2d: spec declares no bias but one was supplied");
    }

    const Shape4 in = input.shape();
    const Shape4 os = spec.output_shape(in);
    Tensor out(os);

    const int k = spec.kernel;
    const int p = spec.padding;
    const int s = spec.stride;
    const int icpg = spec.in_channels / spec.groups;
    const int ocpg = spec.out_channels / spec.groups;

    for (int n = 0; n < in.n; ++n) {
        for (int g = 0; g < spec.groups; ++g) {
            for (int ocl = 0; ocl < ocpg; ++ocl) {
                const int oc = g * ocpg + ocl;
                float* out_plane = out.plane(n, oc);
                const std::int64_t out_elems = static_cast<std::int64_t>(os.h) * os.w;
                const float b = bias ? bias[oc] : 0.0f;
                std::fill(out_plane, out_plane + out_elems, b);

                for (int icl = 0; icl < icpg; ++icl) {
                    const int ic = g * icpg + icl;
                    const float* in_plane = input.plane(n, ic);
                    const float* wk = weight.plane(oc, icl);

                    if (s == 1 && k == 1 && p == 0) {
                        detail::axpy(out_plane, in_plane, wk[0], out_elems);
                    } else if (s == 1) {
                        for (int ky = 0; ky < k; ++ky) {
                            const int oy_lo = std::max(0, p - ky);
                            const int oy_hi = std::min(os.h, in.h + p - ky);
                            for (int oy = oy_lo; oy < oy_hi; ++oy) {
                                const float* in_row = in_plane + static_cast<std::int64_t>(oy + ky - p) * in.w;
                                float* out_row = out_plane + static_cast<std::int64_t>(oy) * os.w;
                                for (int kx = 0; kx < k; ++kx) {
                                    const int ox_lo = std::max(0, p - kx);
                                    const int ox_hi = std::min(os.w, in.w + p - kx);
                                    if (ox_hi > ox_lo) {
                                        detail::axpy(out_row + ox_lo, in_row + (ox_lo + kx - p),
                                                     wk[ky * k + kx], ox_hi - ox_lo);
                                    }
                                }
                            }
                        }
                    } else {
                        for (int oy = 0; oy < os.h; ++oy) {
                            float* out_row = out_plane + static_cast<std::int64_t>(oy) * os.w;
                            for (int ox = 0; ox < os.w; ++ox) {
                                float acc = 0.0f;
                                for (int ky = 0; ky < k; ++ky) {
                                    const int iy = oy * s + ky - p;
                                    if (iy < 0 || iy >= in.h) continue;
                                    for (int kx = 0; kx < k; ++kx) {
                                        const int ix = ox * s + kx - p;
                                        if (ix < 0 || ix >= in.w) continue;
                                        acc += wk[ky * k + kx] * in_plane[static_cast<std::int64_t>(iy) * in.w + ix];
                                    }
                                }
                                out_row[ox] += acc;
                            }
                        }
                    }
                }
            }
        }
    }

    if (ctx != nullptr) {
        ctx->input = input;
        ctx->weight = weight;
        ctx->spec = spec;
        ctx->has_bias = spec.has_bias;
        ctx->valid = true;
        ctx->consumed = false;
    }
    return out;
}

Conv2dGrads conv2d_backward(const Tensor& grad_out, Conv2dContext& ctx) {
    if (!ctx.valid) {
        throw StateError("conv2d_backward: no saved forward context");
    }
    if (ctx.consumed) {
        throw StateError("conv2d_backward called twice without re-running forward");
    }
    const ConvSpec& spec = ctx.spec;
    const Shape4 in = ctx.input.shape();
    const Shape4 os = spec.output_shape(in);
    check_same_shape(os, grad_out.shape(), "conv2d grad_out");

    Conv2dGrads grads;
    grads.input = Tensor(in);
    grads.weight = Tensor(ctx.weight.shape());
    if (ctx.has_bias) {
        grads.bias.assign(static_cast<std::size_t>(spec.out_channels), 0.0f);
    }

    const int k = spec.kernel;
    const int p = spec.padding;
    const int s = spec.stride;
    const int icpg = spec.in_channels / spec.groups;
    const int ocpg = spec.out_channels / spec.groups;
    const std::int64_t out_elems = static_cast<std::int64_t>(os.h) * os.w;

    if (ctx.has_bias) {
        for (int n = 0; n < in.n; ++n) {
            for (int oc = 0; oc < spec.out_channels; ++oc) {
                grads.bias[static_cast<std::size_t>(oc)] += detail::sum(grad_out.plane(n, oc), out_elems);
            }
        }
    }

    if (s == 1) {
        // grad_weight: per-(oc, ic, ky, kx) dot of grad_out rows with input rows.
        for (int n = 0; n < in.n; ++n) {
            for (int g = 0; g < spec.groups; ++g) {
                for (int ocl = 0; ocl < ocpg; ++ocl) {
                    const int oc = g * ocpg + ocl;
                    const float* go_plane = grad_out.plane(n, oc);
                    for (int icl = 0; icl < icpg; ++icl) {
                        const int ic = g * icpg + icl;
                        const float* in_plane = ctx.input.plane(n, ic);
                        float* gw = grads.weight.plane(oc, icl);
                        for (int ky = 0; ky < k; ++ky) {
                            const int oy_lo = std::max(0, p - ky);
                            const int oy_hi = std::min(os.h, in.h + p - ky);
                            for (int kx = 0; kx < k; ++kx) {
                                const int ox_lo = std::max(0, p - kx);
                                const int ox_hi = std::min(os.w, in.w + p - kx);
                                if (ox_hi <= ox_lo) continue;
                                float acc = 0.0f;
                                for (int oy = oy_lo; oy < oy_hi; ++oy) {
                                    const float* go_row = go_plane + static_cast<std::int64_t>(oy) * os.w;
                                    const float* in_row =
                                        in_plane + static_cast<std::int64_t>(oy + ky - p) * in.w + (kx - p);
                                    acc += detail::dot(go_row + ox_lo, in_row + ox_lo, ox_hi - ox_lo);
                                }
                                gw[ky * k + kx] += acc;
                            }
                        }
                    }
                }
            }
        }
        // grad_input: transpose map of the forward row-axpy.
        for (int n = 0; n < in.n; ++n) {
            for (int g = 0; g < spec.groups; ++g) {
                for (int icl = 0; icl < icpg; ++icl) {
                    const int ic = g * icpg + icl;
                    float* gi_plane = grads.input.plane(n, ic);
                    for (int ocl = 0; ocl < ocpg; ++ocl) {
                        const int oc = g * ocpg + ocl;
                        const float* go_plane = grad_out.plane(n, oc);
                        const float* wk = ctx.weight.plane(oc, icl);
                        if (k == 1 && p == 0) {
                            detail::axpy(gi_plane, go_plane, wk[0], out_elems);
                            continue;
                        }
                        for (int ky = 0; ky < k; ++ky) {
                            const int oy_lo = std::max(0, p - ky);
                            const int oy_hi = std::min(os.h, in.h + p - ky);
                            for (int oy = oy_lo; oy < oy_hi; ++oy) {
                                float* gi_row = gi_plane + static_cast<std::int64_t>(oy + ky - p) * in.w;
                                const float* go_row = go_plane + static_cast<std::int64_t>(oy) * os.w;
                                for (int kx = 0; kx < k; ++kx) {
                                    const int ox_lo = std::max(0, p - kx);
                                    const int ox_hi = std::min(os.w, in.w + p - kx);
                                    if (ox_hi > ox_lo) {
                                        detail::axpy(gi_row + (ox_lo + kx - p), go_row + ox_lo,
                                                     wk[ky * k + kx], ox_hi - ox_lo);
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    } else {
        // Generic stride: scatter from each output element.
        for (int n = 0; n < in.n; ++n) {
            for (int g = 0; g < spec.groups; ++g) {
                for (int ocl = 0; ocl < ocpg; ++ocl) {
                    const int oc = g * ocpg + ocl;
                    const float* go_plane = grad_out.plane(n, oc);
                    for (int oy = 0; oy < os.h; ++oy) {
                        for (int ox = 0; ox < os.w; ++ox) {
                            const float go = go_plane[static_cast<std::int64_t>(oy) * os.w + ox];
                            for (int icl = 0; icl < icpg; ++icl) {
                                const int ic = g * icpg + icl;
                                const float* wk = ctx.weight.plane(oc, icl);
                                float* gw = grads.weight.plane(oc, icl);
                                float* gi_plane = grads.input.plane(n, ic);
                                const float* in_plane = ctx.input.plane(n, ic);
                                for (int ky = 0; ky < k; ++ky) {
                                    const int iy = oy * s + ky - p;
                                    if (iy < 0 || iy >= in.h) continue;
                                    for (int kx = 0; kx < k; ++kx) {
                                        const int ix = ox * s + kx - p;
                                        if (ix < 0 || ix >= in.w) continue;
                                        const std::int64_t ii = static_cast<std::int64_t>(iy) * in.w + ix;
                                        gw[ky * k + kx] += go * in_plane[ii];
                                        gi_plane[ii] += go * wk[ky * k + kx];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    ctx.consumed = true;
    return grads;
}

}  // namespace cmx
