#include <cmath>

#include "cmunext/blocks.hpp"

namespace cmx {

namespace {

Parameter make_param(const std::string& name, std::vector<std::int64_t> shape, float* value,
                     float* grad, std::vector<float>* momentum) {
    Parameter p;
    p.name = name;
    p.shape = std::move(shape);
    p.size = 1;
    for (std::int64_t d : p.shape) p.size *= d;
    p.value = value;
    p.grad = grad;
    p.momentum = momentum;
    return p;
}

}  // namespace

// ---------------------------------------------------------------------------
// Conv2d
// ---------------------------------------------------------------------------

Conv2d::Conv2d(ConvSpec spec, std::string name) : spec_(spec), name_(std::move(name)) {
    spec_.validate();
    weight_ = Tensor(Shape4{spec_.out_channels, spec_.in_channels / spec_.groups, spec_.kernel,
                            spec_.kernel});
    weight_.set_requires_grad(true);
    if (spec_.has_bias) {
        bias_.assign(static_cast<std::size_t>(spec_.out_channels), 0.0f);
        bias_grad_.assign(bias_.size(), 0.0f);
    }
}

void Conv2d::init(Rng& rng) {
    const float fan_in =
        static_cast<float>(spec_.kernel) * spec_.kernel * (spec_.in_channels / spec_.groups);
    const float bound = std::sqrt(6.0f / fan_in);
    for (float& v : weight_.vec()) {
        v = rng.uniform(-bound, bound);
    }
    std::fill(bias_.begin(), bias_.end(), 0.0f);
}

Tensor Conv2d::forward(const Tensor& x, const FwdCtx& ctx) {
    Tensor out = conv2d(x, weight_, spec_.has_bias ? bias_.data() : nullptr, spec_,
                        ctx.train ? &ctx_ : nullptr);
    if (ctx.trace) ctx.trace->record(name_, out);
    return out;
}

Tensor Conv2d::backward(const Tensor& grad_out) {
    Conv2dGrads grads = conv2d_backward(grad_out, ctx_);
    weight_.accumulate_grad(grads.weight);
    for (std::size_t i = 0; i < bias_grad_.size(); ++i) {
        bias_grad_[i] += grads.bias[i];
    }
    return std::move(grads.input);
}

void Conv2d::collect(std::vector<Parameter>& out) {
    out.push_back(make_param(name_ + ".weight",
                             {spec_.out_channels, spec_.in_channels / spec_.groups, spec_.kernel,
                              spec_.kernel},
                             weight_.data(), weight_.grad(), &weight_mom_));
    if (spec_.has_bias) {
        out.push_back(make_param(name_ + ".bias", {spec_.out_channels}, bias_.data(),
                                 bias_grad_.data(), &bias_mom_));
    }
}

void Conv2d::zero_grad() {
    weight_.zero_grad();
    std::fill(bias_grad_.begin(), bias_grad_.end(), 0.0f);
}

Shape4 Conv2d::profile(Profiler& prof, Shape4 in) const {
    const Shape4 out = spec_.output_shape(in);
    prof.add(LayerCost{name_, static_cast<std::uint64_t>(spec_.param_count()), 0, spec_.macs(in),
                       true});
    return out;
}

// ---------------------------------------------------------------------------
// BatchNorm2d
// ---------------------------------------------------------------------------

BatchNorm2d::BatchNorm2d(int channels, std::string name)
    : state_(channels), name_(std::move(name)) {
    gamma_grad_.assign(static_cast<std::size_t>(channels), 0.0f);
    beta_grad_.assign(static_cast<std::size_t>(channels), 0.0f);
}

Tensor BatchNorm2d::forward(const Tensor& x, const FwdCtx& ctx) {
    state_.mode = ctx.train ? Mode::Train : Mode::Eval;
    Tensor out = batchnorm2d(x, state_, ctx.train ? &ctx_ : nullptr);
    if (ctx.trace) ctx.trace->record(name_, out);
    return out;
}

Tensor BatchNorm2d::backward(const Tensor& grad_out) {
    BatchNormGrads grads = batchnorm2d_backward(grad_out, ctx_);
    for (std::size_t i = 0; i < gamma_grad_.size(); ++i) {
        gamma_grad_[i] += grads.gamma[i];
        beta_grad_[i] += grads.beta[i];
    }
    return std::move(grads.input);
}

void BatchNorm2d::collect(std::vector<Parameter>& out) {
    const std::int64_t c = state_.channels();
    out.push_back(make_param(name_ + ".gamma", {c}, state_.gamma.data(), gamma_grad_.data(),
                             &gamma_mom_));
    out.push_back(
        make_param(name_ + ".beta", {c}, state_.beta.data(), beta_grad_.data(), &beta_mom_));
}

void BatchNorm2d::collect_state(std::vector<StatBuffer>& out) {
    const std::int64_t c = state_.channels();
    out.push_back(StatBuffer{name_ + ".running_mean", {c}, c, state_.running_mean.data()});
    out.push_back(StatBuffer{name_ + ".running_var", {c}, c, state_.running_var.data()});
}

void BatchNorm2d::zero_grad() {
    std::fill(gamma_grad_.begin(), gamma_grad_.end(), 0.0f);
    std::fill(beta_grad_.begin(), beta_grad_.end(), 0.0f);
}

Shape4 BatchNorm2d::profile(Profiler& prof, Shape4 in) const {
    const std::uint64_t c = static_cast<std::uint64_t>(state_.channels());
    prof.add(LayerCost{name_, 2 * c, 2 * c, static_cast<std::uint64_t>(in.numel()), false});
    return in;
}

// ---------------------------------------------------------------------------
// Activations / pooling / upsampling modules
// ---------------------------------------------------------------------------

Tensor Gelu::forward(const Tensor& x, const FwdCtx& ctx) {
    if (ctx.train) {
        saved_input_ = x;
        have_ctx_ = true;
    }
    Tensor out = gelu(x);
    if (ctx.trace) ctx.trace->record(name_, out);
    return out;
}

Tensor Gelu::backward(const Tensor& grad_out) {
    if (!have_ctx_) throw StateError("gelu backward without saved forward input");
    have_ctx_ = false;
    return gelu_backward(grad_out, saved_input_);
}

Shape4 Gelu::profile(Profiler& prof, Shape4 in) const {
    prof.add(LayerCost{name_, 0, 0, static_cast<std::uint64_t>(in.numel()), false});
    return in;
}

Tensor Relu::forward(const Tensor& x, const FwdCtx& ctx) {
    if (ctx.train) {
        saved_input_ = x;
        have_ctx_ = true;
    }
    Tensor out = relu(x);
    if (ctx.trace) ctx.trace->record(name_, out);
    return out;
}

Tensor Relu::backward(const Tensor& grad_out) {
    if (!have_ctx_) throw StateError("relu backward without saved forward input");
    have_ctx_ = false;
    return relu_backward(grad_out, saved_input_);
}

Shape4 Relu::profile(Profiler& prof, Shape4 in) const {
    prof.add(LayerCost{name_, 0, 0, static_cast<std::uint64_t>(in.numel()), false});
    return in;
}

Tensor MaxPool2x2::forward(const Tensor& x, const FwdCtx& ctx) {
    Tensor out = maxpool2x2(x, ctx.train ? &ctx_ : nullptr);
    if (ctx.trace) ctx.trace->record(name_, out);
    return out;
}

Tensor MaxPool2x2::backward(const Tensor& grad_out) { return maxpool2x2_backward(grad_out, ctx_); }

Shape4 MaxPool2x2::profile(Profiler& prof, Shape4 in) const {
    const Shape4 out{in.n, in.c, in.h / 2, in.w / 2};
    prof.add(LayerCost{name_, 0, 0, static_cast<std::uint64_t>(out.numel()), false});
    return out;
}

Tensor Upsample2x::forward(const Tensor& x, const FwdCtx& ctx) {
    Tensor out = bilinear_upsample2x(x);
    if (ctx.trace) ctx.trace->record(name_, out);
    return out;
}

Tensor Upsample2x::backward(const Tensor& grad_out) {
    return bilinear_upsample2x_backward(grad_out);
}

Shape4 Upsample2x::profile(Profiler& prof, Shape4 in) const {
    const Shape4 out{in.n, in.c, 2 * in.h, 2 * in.w};
    prof.add(LayerCost{name_, 0, 0, static_cast<std::uint64_t>(out.numel()), false});
    return out;
}

// ---------------------------------------------------------------------------
// ConvBlock / DoubleConvBlock
// ---------------------------------------------------------------------------

ConvBlock::ConvBlock(int in_c, int out_c, const std::string& prefix)
    : conv_(ConvSpec{in_c, out_c, 3, 1, 1, 1, true}, prefix + ".conv"),
      bn_(out_c, prefix + ".bn"),
      relu_(prefix + ".relu") {}

void ConvBlock::init(Rng& rng) { conv_.init(rng); }

Tensor ConvBlock::forward(const Tensor& x, const FwdCtx& ctx) {
    return relu_.forward(bn_.forward(conv_.forward(x, ctx), ctx), ctx);
}

Tensor ConvBlock::backward(const Tensor& grad_out) {
    return conv_.backward(bn_.backward(relu_.backward(grad_out)));
}

void ConvBlock::collect(std::vector<Parameter>& out) {
    conv_.collect(out);
    bn_.collect(out);
}

void ConvBlock::collect_state(std::vector<StatBuffer>& out) { bn_.collect_state(out); }

void ConvBlock::zero_grad() {
    conv_.zero_grad();
    bn_.zero_grad();
}

Shape4 ConvBlock::profile(Profiler& prof, Shape4 in) const {
    return relu_.profile(prof, bn_.profile(prof, conv_.profile(prof, in)));
}

DoubleConvBlock::DoubleConvBlock(int in_c, int out_c, const std::string& prefix)
    : c1_(in_c, out_c, prefix + "1"), c2_(out_c, out_c, prefix + "2") {}

void DoubleConvBlock::init(Rng& rng) {
    c1_.init(rng);
    c2_.init(rng);
}

Tensor DoubleConvBlock::forward(const Tensor& x, const FwdCtx& ctx) {
    return c2_.forward(c1_.forward(x, ctx), ctx);
}

Tensor DoubleConvBlock::backward(const Tensor& grad_out) {
    return c1_.backward(c2_.backward(grad_out));
}

void DoubleConvBlock::collect(std::vector<Parameter>& out) {
    c1_.collect(out);
    c2_.collect(out);
}

void DoubleConvBlock::collect_state(std::vector<StatBuffer>& out) {
    c1_.collect_state(out);
    c2_.collect_state(out);
}

void DoubleConvBlock::zero_grad() {
    c1_.zero_grad();
    c2_.zero_grad();
}

Shape4 DoubleConvBlock::profile(Profiler& prof, Shape4 in) const {
    return c2_.profile(prof, c1_.profile(prof, in));
}

// ---------------------------------------------------------------------------
// CMUNeXt unit / block
// ---------------------------------------------------------------------------

CMUNeXtUnit::CMUNeXtUnit(int channels, int kernel, const std::string& prefix)
    : prefix_(prefix),
      dw_(ConvSpec{channels, channels, kernel, 1, kernel / 2, channels, true}, prefix + ".dwconv"),
      g1_(prefix + ".gelu1"),
      bn1_(channels, prefix + ".bn1"),
      pw1_(ConvSpec{channels, 4 * channels, 1, 1, 0, 1, true}, prefix + ".pwconv1"),
      g2_(prefix + ".gelu2"),
      bn2_(4 * channels, prefix + ".bn2"),
      pw2_(ConvSpec{4 * channels, channels, 1, 1, 0, 1, true}, prefix + ".pwconv2"),
      g3_(prefix + ".gelu3"),
      bn3_(channels, prefix + ".bn3") {}

void CMUNeXtUnit::init(Rng& rng) {
    dw_.init(rng);
    pw1_.init(rng);
    pw2_.init(rng);
}

Tensor CMUNeXtUnit::forward(const Tensor& x, const FwdCtx& ctx) {
    Tensor t = bn1_.forward(g1_.forward(dw_.forward(x, ctx), ctx), ctx);
    t = residual_add(t, x);
    if (ctx.trace) ctx.trace->record(prefix_ + ".residual", t);
    t = bn2_.forward(g2_.forward(pw1_.forward(t, ctx), ctx), ctx);
    return bn3_.forward(g3_.forward(pw2_.forward(t, ctx), ctx), ctx);
}

Tensor CMUNeXtUnit::backward(const Tensor& grad_out) {
    Tensor g = pw2_.backward(g3_.backward(bn3_.backward(grad_out)));
    g = pw1_.backward(g2_.backward(bn2_.backward(g)));
    // g is the gradient at the residual sum; it flows unchanged into the
    // identity branch and through the depthwise stage.
    Tensor g_dw = dw_.backward(g1_.backward(bn1_.backward(g)));
    return residual_add(g_dw, g);
}

void CMUNeXtUnit::collect(std::vector<Parameter>& out) {
    dw_.collect(out);
    bn1_.collect(out);
    pw1_.collect(out);
    bn2_.collect(out);
    pw2_.collect(out);
    bn3_.collect(out);
}

void CMUNeXtUnit::collect_state(std::vector<StatBuffer>& out) {
    bn1_.collect_state(out);
    bn2_.collect_state(out);
    bn3_.collect_state(out);
}

void CMUNeXtUnit::zero_grad() {
    dw_.zero_grad();
    bn1_.zero_grad();
    pw1_.zero_grad();
    bn2_.zero_grad();
    pw2_.zero_grad();
    bn3_.zero_grad();
}

Shape4 CMUNeXtUnit::profile(Profiler& prof, Shape4 in) const {
    Shape4 s = bn1_.profile(prof, g1_.profile(prof, dw_.profile(prof, in)));
    prof.add(LayerCost{prefix_ + ".residual", 0, 0, static_cast<std::uint64_t>(s.numel()), false});
    s = bn2_.profile(prof, g2_.profile(prof, pw1_.profile(prof, s)));
    return bn3_.profile(prof, g3_.profile(prof, pw2_.profile(prof, s)));
}

CMUNeXtBlock::CMUNeXtBlock(const CMUNeXtBlockCfg& cfg, const std::string& prefix) : cfg_(cfg) {
    if (cfg.depth <= 0) throw ConfigError("CMUNeXt block depth must be positive");
    for (int u = 0; u < cfg.depth; ++u) {
        units_.emplace_back(cfg.channels, cfg.kernel, prefix + ".unit" + std::to_string(u));
    }
}

void CMUNeXtBlock::init(Rng& rng) {
    for (auto& u : units_) u.init(rng);
}

Tensor CMUNeXtBlock::forward(const Tensor& x, const FwdCtx& ctx) {
    if (x.shape().c != cfg_.channels) {
        throw DimensionError("CMUNeXt block expects " + std::to_string(cfg_.channels) +
                             " channels, got " + std::to_string(x.shape().c));
    }
    Tensor t = x;
    for (auto& u : units_) t = u.forward(t, ctx);
    return t;
}

Tensor CMUNeXtBlock::backward(const Tensor& grad_out) {
    Tensor g = grad_out;
    for (auto it = units_.rbegin(); it != units_.rend(); ++it) g = it->backward(g);
    return g;
}

void CMUNeXtBlock::collect(std::vector<Parameter>& out) {
    for (auto& u : units_) u.collect(out);
}

void CMUNeXtBlock::collect_state(std::vector<StatBuffer>& out) {
    for (auto& u : units_) u.collect_state(out);
}

void CMUNeXtBlock::zero_grad() {
    for (auto& u : units_) u.zero_grad();
}

Shape4 CMUNeXtBlock::profile(Profiler& prof, Shape4 in) const {
    Shape4 s = in;
    for (const auto& u : units_) s = u.profile(prof, s);
    return s;
}

// ---------------------------------------------------------------------------
// SkipFusionBlock / UNetFusionBlock / UpBlock
// ---------------------------------------------------------------------------

SkipFusionBlock::SkipFusionBlock(int channels, const std::string& prefix)
    : channels_(channels),
      prefix_(prefix),
      gconv_(ConvSpec{2 * channels, channels, 3, 1, 1, 2, true}, prefix + ".groupconv"),
      g1_(prefix + ".gelu1"),
      bn1_(channels, prefix + ".bn1"),
      pw1_(ConvSpec{channels, 4 * channels, 1, 1, 0, 1, true}, prefix + ".pwconv1"),
      g2_(prefix + ".gelu2"),
      bn2_(4 * channels, prefix + ".bn2"),
      pw2_(ConvSpec{4 * channels, channels, 1, 1, 0, 1, true}, prefix + ".pwconv2"),
      g3_(prefix + ".gelu3"),
      bn3_(channels, prefix + ".bn3") {}

void SkipFusionBlock::init(Rng& rng) {
    gconv_.init(rng);
    pw1_.init(rng);
    pw2_.init(rng);
}

Tensor SkipFusionBlock::forward(const Tensor& f_enc, const Tensor& f_dec, const FwdCtx& ctx) {
    check_same_shape(f_enc.shape(), f_dec.shape(), "skip fusion inputs");
    Tensor t = concat_channels(f_enc, f_dec);
    if (ctx.trace) ctx.trace->record(prefix_ + ".concat", t);
    t = bn1_.forward(g1_.forward(gconv_.forward(t, ctx), ctx), ctx);
    t = bn2_.forward(g2_.forward(pw1_.forward(t, ctx), ctx), ctx);
    return bn3_.forward(g3_.forward(pw2_.forward(t, ctx), ctx), ctx);
}

std::pair<Tensor, Tensor> SkipFusionBlock::backward(const Tensor& grad_out) {
    Tensor g = pw2_.backward(g3_.backward(bn3_.backward(grad_out)));
    g = pw1_.backward(g2_.backward(bn2_.backward(g)));
    g = gconv_.backward(g1_.backward(bn1_.backward(g)));
    return concat_channels_backward(g, channels_);
}

void SkipFusionBlock::collect(std::vector<Parameter>& out) {
    gconv_.collect(out);
    bn1_.collect(out);
    pw1_.collect(out);
    bn2_.collect(out);
    pw2_.collect(out);
    bn3_.collect(out);
}

void SkipFusionBlock::collect_state(std::vector<StatBuffer>& out) {
    bn1_.collect_state(out);
    bn2_.collect_state(out);
    bn3_.collect_state(out);
}

void SkipFusionBlock::zero_grad() {
    gconv_.zero_grad();
    bn1_.zero_grad();
    pw1_.zero_grad();
    bn2_.zero_grad();
    pw2_.zero_grad();
    bn3_.zero_grad();
}

Shape4 SkipFusionBlock::profile(Profiler& prof, Shape4 enc_in) const {
    Shape4 s{enc_in.n, 2 * enc_in.c, enc_in.h, enc_in.w};
    s = bn1_.profile(prof, g1_.profile(prof, gconv_.profile(prof, s)));
    s = bn2_.profile(prof, g2_.profile(prof, pw1_.profile(prof, s)));
    return bn3_.profile(prof, g3_.profile(prof, pw2_.profile(prof, s)));
}

UNetFusionBlock::UNetFusionBlock(int channels, const std::string& prefix)
    : channels_(channels), prefix_(prefix), dc_(2 * channels, channels, prefix + ".conv") {}

void UNetFusionBlock::init(Rng& rng) { dc_.init(rng); }

Tensor UNetFusionBlock::forward(const Tensor& f_enc, const Tensor& f_dec, const FwdCtx& ctx) {
    check_same_shape(f_enc.shape(), f_dec.shape(), "fusion inputs");
    return dc_.forward(concat_channels(f_enc, f_dec), ctx);
}

std::pair<Tensor, Tensor> UNetFusionBlock::backward(const Tensor& grad_out) {
    return concat_channels_backward(dc_.backward(grad_out), channels_);
}

void UNetFusionBlock::collect(std::vector<Parameter>& out) { dc_.collect(out); }

void UNetFusionBlock::collect_state(std::vector<StatBuffer>& out) { dc_.collect_state(out); }

void UNetFusionBlock::zero_grad() { dc_.zero_grad(); }

Shape4 UNetFusionBlock::profile(Profiler& prof, Shape4 enc_in) const {
    return dc_.profile(prof, Shape4{enc_in.n, 2 * enc_in.c, enc_in.h, enc_in.w});
}

UpBlock::UpBlock(int in_c, int out_c, const std::string& prefix)
    : up_(prefix + ".upsample"),
      conv_(ConvSpec{in_c, out_c, 3, 1, 1, 1, true}, prefix + ".conv"),
      bn_(out_c, prefix + ".bn"),
      relu_(prefix + ".relu") {}

void UpBlock::init(Rng& rng) { conv_.init(rng); }

Tensor UpBlock::forward(const Tensor& x, const FwdCtx& ctx) {
    return relu_.forward(bn_.forward(conv_.forward(up_.forward(x, ctx), ctx), ctx), ctx);
}

Tensor UpBlock::backward(const Tensor& grad_out) {
    return up_.backward(conv_.backward(bn_.backward(relu_.backward(grad_out))));
}

void UpBlock::collect(std::vector<Parameter>& out) {
    conv_.collect(out);
    bn_.collect(out);
}

void UpBlock::collect_state(std::vector<StatBuffer>& out) { bn_.collect_state(out); }

void UpBlock::zero_grad() {
    conv_.zero_grad();
    bn_.zero_grad();
}

Shape4 UpBlock::profile(Profiler& prof, Shape4 in) const {
    return relu_.profile(prof, bn_.profile(prof, conv_.profile(prof, up_.profile(prof, in))));
}

}  // namespace cmx
