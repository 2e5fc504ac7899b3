#include <algorithm>
#include <cmath>

#include "cmunext/rng.hpp"
#include "support/oracles.hpp"

namespace oracle {

DTensor to_double(const cmx::Tensor& t) {
    DTensor out(t.shape());
    for (std::int64_t i = 0; i < t.numel(); ++i) {
        out.data[static_cast<std::size_t>(i)] = t.data()[i];
    }
    return out;
}

cmx::Tensor to_float(const DTensor& t) {
    cmx::Tensor out(t.shape);
    for (std::size_t i = 0; i < t.data.size(); ++i) {
        out.data()[i] = static_cast<float>(t.data[i]);
    }
    return out;
}

DTensor conv2d_ref(const DTensor& input, const DTensor& weight, const std::vector<double>* bias,
                   const cmx::ConvSpec& spec) {
    const cmx::Shape4 in = input.shape;
    const int oh = (in.h + 2 * spec.padding - spec.kernel) / spec.stride + 1;
    const int ow = (in.w + 2 * spec.padding - spec.kernel) / spec.stride + 1;
    DTensor out(cmx::Shape4{in.n, spec.out_channels, oh, ow});
    const int icpg = spec.in_channels / spec.groups;
    const int ocpg = spec.out_channels / spec.groups;
    for (int n = 0; n < in.n; ++n) {
        for (int oc = 0; oc < spec.out_channels; ++oc) {
            const int g = oc / ocpg;
            for (int oy = 0; oy < oh; ++oy) {
                for (int ox = 0; ox < ow; ++ox) {
                    double acc = bias ? (*bias)[static_cast<std::size_t>(oc)] : 0.0;
                    for (int icl = 0; icl < icpg; ++icl) {
                        for (int ky = 0; ky < spec.kernel; ++ky) {
                            for (int kx = 0; kx < spec.kernel; ++kx) {
                                const int iy = oy * spec.stride + ky - spec.padding;
                                const int ix = ox * spec.stride + kx - spec.padding;
                                if (iy < 0 || iy >= in.h || ix < 0 || ix >= in.w) continue;
                                acc += input.at(n, g * icpg + icl, iy, ix) *
                                       weight.at(oc, icl, ky, kx);
                            }
                        }
                    }
                    out.at(n, oc, oy, ox) = acc;
                }
            }
        }
    }
    return out;
}

DTensor batchnorm_train_ref(const DTensor& input, const std::vector<double>& gamma,
                            const std::vector<double>& beta, double eps) {
    const cmx::Shape4 in = input.shape;
    const double m = static_cast<double>(in.n) * in.h * in.w;
    DTensor out(in);
    for (int c = 0; c < in.c; ++c) {
        double mean = 0.0;
        for (int n = 0; n < in.n; ++n) {
            for (int y = 0; y < in.h; ++y) {
                for (int x = 0; x < in.w; ++x) mean += input.at(n, c, y, x);
            }
        }
        mean /= m;
        double var = 0.0;
        for (int n = 0; n < in.n; ++n) {
            for (int y = 0; y < in.h; ++y) {
                for (int x = 0; x < in.w; ++x) {
                    const double d = input.at(n, c, y, x) - mean;
                    var += d * d;
                }
            }
        }
        var /= m;
        const double inv = 1.0 / std::sqrt(var + eps);
        for (int n = 0; n < in.n; ++n) {
            for (int y = 0; y < in.h; ++y) {
                for (int x = 0; x < in.w; ++x) {
                    out.at(n, c, y, x) = gamma[static_cast<std::size_t>(c)] *
                                             (input.at(n, c, y, x) - mean) * inv +
                                         beta[static_cast<std::size_t>(c)];
                }
            }
        }
    }
    return out;
}

DTensor batchnorm_eval_ref(const DTensor& input, const std::vector<double>& gamma,
                           const std::vector<double>& beta, const std::vector<double>& mean,
                           const std::vector<double>& var, double eps) {
    const cmx::Shape4 in = input.shape;
    DTensor out(in);
    for (int c = 0; c < in.c; ++c) {
        const double inv = 1.0 / std::sqrt(var[static_cast<std::size_t>(c)] + eps);
        for (int n = 0; n < in.n; ++n) {
            for (int y = 0; y < in.h; ++y) {
                for (int x = 0; x < in.w; ++x) {
                    out.at(n, c, y, x) =
                        gamma[static_cast<std::size_t>(c)] *
                            (input.at(n, c, y, x) - mean[static_cast<std::size_t>(c)]) * inv +
                        beta[static_cast<std::size_t>(c)];
                }
            }
        }
    }
    return out;
}

DTensor gelu_ref(const DTensor& input) {
    DTensor out(input.shape);
    for (std::size_t i = 0; i < input.data.size(); ++i) {
        const double x = input.data[i];
        out.data[i] = x * 0.5 * (1.0 + std::erf(x / std::sqrt(2.0)));
    }
    return out;
}

DTensor relu_ref(const DTensor& input) {
    DTensor out(input.shape);
    for (std::size_t i = 0; i < input.data.size(); ++i) {
        out.data[i] = std::max(0.0, input.data[i]);
    }
    return out;
}

DTensor sigmoid_ref(const DTensor& input) {
    DTensor out(input.shape);
    for (std::size_t i = 0; i < input.data.size(); ++i) {
        out.data[i] = 1.0 / (1.0 + std::exp(-input.data[i]));
    }
    return out;
}

DTensor maxpool2x2_ref(const DTensor& input) {
    const cmx::Shape4 in = input.shape;
    DTensor out(cmx::Shape4{in.n, in.c, in.h / 2, in.w / 2});
    for (int n = 0; n < in.n; ++n) {
        for (int c = 0; c < in.c; ++c) {
            for (int y = 0; y < in.h / 2; ++y) {
                for (int x = 0; x < in.w / 2; ++x) {
                    out.at(n, c, y, x) = std::max(
                        std::max(input.at(n, c, 2 * y, 2 * x), input.at(n, c, 2 * y, 2 * x + 1)),
                        std::max(input.at(n, c, 2 * y + 1, 2 * x),
                                 input.at(n, c, 2 * y + 1, 2 * x + 1)));
                }
            }
        }
    }
    return out;
}

DTensor upsample2x_ref(const DTensor& input) {
    const cmx::Shape4 in = input.shape;
    DTensor out(cmx::Shape4{in.n, in.c, 2 * in.h, 2 * in.w});
    auto src_coord = [](int i, int limit) {
        double x = (i + 0.5) * 0.5 - 0.5;
        return std::clamp(x, 0.0, static_cast<double>(limit - 1));
    };
    for (int n = 0; n < in.n; ++n) {
        for (int c = 0; c < in.c; ++c) {
            for (int y = 0; y < 2 * in.h; ++y) {
                const double fy = src_coord(y, in.h);
                const int y0 = static_cast<int>(fy);
                const int y1 = std::min(y0 + 1, in.h - 1);
                const double ty = fy - y0;
                for (int x = 0; x < 2 * in.w; ++x) {
                    const double fx = src_coord(x, in.w);
                    const int x0 = static_cast<int>(fx);
                    const int x1 = std::min(x0 + 1, in.w - 1);
                    const double tx = fx - x0;
                    const double top =
                        input.at(n, c, y0, x0) * (1 - tx) + input.at(n, c, y0, x1) * tx;
                    const double bot =
                        input.at(n, c, y1, x0) * (1 - tx) + input.at(n, c, y1, x1) * tx;
                    out.at(n, c, y, x) = top * (1 - ty) + bot * ty;
                }
            }
        }
    }
    return out;
}

double bce_dice_ref(const DTensor& logits, const DTensor& target) {
    double bce = 0.0, sum_p = 0.0, sum_y = 0.0, sum_py = 0.0;
    for (std::size_t i = 0; i < logits.data.size(); ++i) {
        const double z = logits.data[i];
        const double y = target.data[i];
        bce += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
        const double p = 1.0 / (1.0 + std::exp(-z));
        sum_p += p;
        sum_y += y;
        sum_py += p * y;
    }
    bce /= static_cast<double>(logits.data.size());
    const double dice = 1.0 - (2.0 * sum_py + 1.0) / (sum_p + sum_y + 1.0);
    return 0.5 * bce + dice;
}

double weighted_sum(const DTensor& values, const DTensor& weights) {
    double acc = 0.0;
    for (std::size_t i = 0; i < values.data.size(); ++i) {
        acc += values.data[i] * weights.data[i];
    }
    return acc;
}

double central_diff(const std::function<double()>& f, double& slot, double h) {
    const double saved = slot;
    slot = saved + h;
    const double fp = f();
    slot = saved - h;
    const double fm = f();
    slot = saved;
    return (fp - fm) / (2.0 * h);
}

double central_diff_f32(const std::function<double()>& f, float& slot, double h) {
    const float saved = slot;
    slot = static_cast<float>(saved + h);
    const double fp = f();
    slot = static_cast<float>(saved - h);
    const double fm = f();
    slot = saved;
    return (fp - fm) / (2.0 * h);
}

void grad_check_accumulate(GradCheck& gc, double reference, double got, double rel_floor,
                           double abs_tol) {
    const double err = std::abs(reference - got);
    double rel;
    if (std::abs(reference) < rel_floor) {
        // near-zero reference: score against the absolute tolerance
        rel = err / abs_tol * 1e-3;
    } else {
        rel = err / std::abs(reference);
    }
    if (rel > gc.max_rel) {
        gc.max_rel = rel;
        gc.worst_ref = reference;
        gc.worst_got = got;
    }
}

void fill_uniform(cmx::Tensor& t, std::uint64_t seed, float lo, float hi) {
    cmx::Rng rng(seed);
    for (float& v : t.vec()) {
        v = rng.uniform(lo, hi);
    }
}

// ---------------------------------------------------------------------------
// Closed-form counters
// ---------------------------------------------------------------------------

std::uint64_t conv_params(int in_c, int out_c, int k, int groups, bool bias) {
    return static_cast<std::uint64_t>(k) * k * (in_c / groups) * out_c + (bias ? out_c : 0);
}

std::uint64_t bn_params(int c) { return 2ull * static_cast<std::uint64_t>(c); }

std::uint64_t cmunext_unit_params(int c, int k) {
    return conv_params(c, c, k, c) + bn_params(c) + conv_params(c, 4 * c, 1) + bn_params(4 * c) +
           conv_params(4 * c, c, 1) + bn_params(c);
}

std::uint64_t skip_fusion_params(int c) {
    return conv_params(2 * c, c, 3, 2) + bn_params(c) + conv_params(c, 4 * c, 1) +
           bn_params(4 * c) + conv_params(4 * c, c, 1) + bn_params(c);
}

std::uint64_t conv_block_params(int in_c, int out_c) {
    return conv_params(in_c, out_c, 3) + bn_params(out_c);
}

std::uint64_t double_conv_params(int in_c, int out_c) {
    return conv_block_params(in_c, out_c) + conv_block_params(out_c, out_c);
}

namespace {

std::uint64_t conv_macs(int in_c, int out_c, int k, std::uint64_t hw, int groups = 1) {
    return static_cast<std::uint64_t>(k) * k * (in_c / groups) * out_c * hw;
}

std::array<std::uint64_t, 5> level_areas(int size) {
    std::array<std::uint64_t, 5> hw{};
    for (int l = 0; l < 5; ++l) {
        const std::uint64_t s = static_cast<std::uint64_t>(size) >> l;
        hw[static_cast<std::size_t>(l)] = s * s;
    }
    return hw;
}

// decoder built from up blocks + double-conv fusion (U-Net style)
void add_unet_decoder(Totals& t, const Channels& ch, const std::array<std::uint64_t, 5>& hw) {
    for (int l = 3; l >= 0; --l) {
        const auto lc = static_cast<std::size_t>(l);
        t.params += conv_params(ch[lc + 1], ch[lc], 3) + bn_params(ch[lc]);
        t.conv_macs += conv_macs(ch[lc + 1], ch[lc], 3, hw[lc]);
        t.elem_ops += static_cast<std::uint64_t>(ch[lc + 1]) * hw[lc];  // bilinear output
        t.elem_ops += 2ull * ch[lc] * hw[lc];                          // up conv BN + ReLU
        t.params += double_conv_params(2 * ch[lc], ch[lc]);
        t.conv_macs +=
            conv_macs(2 * ch[lc], ch[lc], 3, hw[lc]) + conv_macs(ch[lc], ch[lc], 3, hw[lc]);
        t.elem_ops += 4ull * ch[lc] * hw[lc];  // two BN+ReLU pairs
    }
}

void add_skipfusion_decoder(Totals& t, const Channels& ch, const std::array<std::uint64_t, 5>& hw) {
    for (int l = 3; l >= 0; --l) {
        const auto lc = static_cast<std::size_t>(l);
        t.params += conv_params(ch[lc + 1], ch[lc], 3) + bn_params(ch[lc]);
        t.conv_macs += conv_macs(ch[lc + 1], ch[lc], 3, hw[lc]);
        t.elem_ops += static_cast<std::uint64_t>(ch[lc + 1]) * hw[lc];
        t.elem_ops += 2ull * ch[lc] * hw[lc];
        t.params += skip_fusion_params(ch[lc]);
        t.conv_macs += conv_macs(2 * ch[lc], ch[lc], 3, hw[lc], 2) +
                       conv_macs(ch[lc], 4 * ch[lc], 1, hw[lc]) +
                       conv_macs(4 * ch[lc], ch[lc], 1, hw[lc]);
        t.elem_ops += 12ull * ch[lc] * hw[lc];  // gconv 2C + pw1 8C + pw2 2C
    }
}

void add_cmunext_encoder(Totals& t, const Channels& ch, const Levels& depths,
                         const Levels& kernels, int in_c, const std::array<std::uint64_t, 5>& hw) {
    t.params += conv_block_params(in_c, ch[0]);
    t.conv_macs += conv_macs(in_c, ch[0], 3, hw[0]);
    t.elem_ops += 2ull * ch[0] * hw[0];
    for (int l = 0; l < 5; ++l) {
        const auto lc = static_cast<std::size_t>(l);
        const int w = l == 0 ? ch[0] : ch[lc - 1];
        const int k = kernels[lc];
        const auto d = static_cast<std::uint64_t>(depths[lc]);
        t.params += d * cmunext_unit_params(w, k);
        t.conv_macs += d * (conv_macs(w, w, k, hw[lc], w) + conv_macs(w, 4 * w, 1, hw[lc]) +
                            conv_macs(4 * w, w, 1, hw[lc]));
        t.elem_ops += d * 13ull * w * hw[lc];  // dw GELU+BN+residual, pw1 8C, pw2 2C
        t.params += conv_block_params(w, ch[lc]);
        t.conv_macs += conv_macs(w, ch[lc], 3, hw[lc]);
        t.elem_ops += 2ull * ch[lc] * hw[lc];
        if (l < 4) t.elem_ops += static_cast<std::uint64_t>(ch[lc]) * hw[lc + 1];  // pool
    }
}

void add_unet_encoder(Totals& t, const Channels& ch, int in_c,
                      const std::array<std::uint64_t, 5>& hw) {
    for (int l = 0; l < 5; ++l) {
        const auto lc = static_cast<std::size_t>(l);
        const int from = l == 0 ? in_c : ch[lc - 1];
        t.params += double_conv_params(from, ch[lc]);
        t.conv_macs +=
            conv_macs(from, ch[lc], 3, hw[lc]) + conv_macs(ch[lc], ch[lc], 3, hw[lc]);
        t.elem_ops += 4ull * ch[lc] * hw[lc];
        if (l < 4) t.elem_ops += static_cast<std::uint64_t>(ch[lc]) * hw[lc + 1];
    }
}

void add_head(Totals& t, int c1, std::uint64_t hw0) {
    t.params += conv_params(c1, 1, 1);
    t.conv_macs += conv_macs(c1, 1, 1, hw0);
}

}  // namespace

Totals cmunext_totals(const Channels& ch, const Levels& depths, const Levels& kernels, int in_c,
                      int size) {
    Totals t;
    const auto hw = level_areas(size);
    add_cmunext_encoder(t, ch, depths, kernels, in_c, hw);
    add_skipfusion_decoder(t, ch, hw);
    add_head(t, ch[0], hw[0]);
    return t;
}

Totals unet_totals(const Channels& ch, int in_c, int size) {
    Totals t;
    const auto hw = level_areas(size);
    add_unet_encoder(t, ch, in_c, hw);
    add_unet_decoder(t, ch, hw);
    add_head(t, ch[0], hw[0]);
    return t;
}

Totals hybrid_totals(const Channels& ch, const Levels& depths, const Levels& kernels, int in_c,
                     int size) {
    Totals t;
    const auto hw = level_areas(size);
    add_cmunext_encoder(t, ch, depths, kernels, in_c, hw);
    add_unet_decoder(t, ch, hw);
    add_head(t, ch[0], hw[0]);
    return t;
}

}  // namespace oracle
