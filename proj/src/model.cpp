#include <sstream>

#include "cmunext/model.hpp"

namespace cmx {

void VariantConfig::validate() const {
    for (int i = 0; i < 5; ++i) {
        if (channels[static_cast<std::size_t>(i)] <= 0) {
            throw ConfigError("variant config: channels[" + std::to_string(i + 1) +
                              "] must be positive");
        }
        if (depths[static_cast<std::size_t>(i)] <= 0) {
            throw ConfigError("variant config: depths[" + std::to_string(i + 1) +
                              "] must be positive");
        }
        const int k = kernels[static_cast<std::size_t>(i)];
        if (k <= 0 || k % 2 == 0) {
            throw ConfigError("variant config: kernels[" + std::to_string(i + 1) +
                              "] must be a positive odd integer, got " + std::to_string(k));
        }
    }
    if (in_channels <= 0) {
        throw ConfigError("variant config: in_channels must be positive");
    }
}

VariantConfig VariantConfig::cmunext_s() {
    return VariantConfig{{8, 16, 32, 64, 128}, {1, 1, 1, 1, 1}, {3, 3, 7, 7, 9}, 3, "cmunext-s"};
}

VariantConfig VariantConfig::cmunext() {
    return VariantConfig{{16, 32, 128, 160, 256}, {1, 1, 1, 3, 1}, {3, 3, 7, 7, 7}, 3, "cmunext"};
}

VariantConfig VariantConfig::cmunext_l() {
    return VariantConfig{{32, 64, 128, 256, 512}, {1, 1, 1, 6, 3}, {3, 3, 7, 7, 7}, 3, "cmunext-l"};
}

VariantConfig VariantConfig::preset(const std::string& name) {
    if (name == "cmunext-s") return cmunext_s();
    if (name == "cmunext") return cmunext();
    if (name == "cmunext-l") return cmunext_l();
    throw ConfigError("unknown variant '" + name + "' (expected cmunext-s, cmunext or cmunext-l)");
}

namespace {

std::string level_name(const char* stage, int level) {
    return std::string(stage) + ".level" + std::to_string(level + 1);
}

}  // namespace

Model::Model(const ModelDesc& desc) : desc_(desc) {
    desc_.config.validate();
    const auto& C = desc_.config.channels;
    const auto& D = desc_.config.depths;
    const auto& K = desc_.config.kernels;
    const int in_c = desc_.config.in_channels;

    enc_.resize(5);
    if (desc_.encoder == EncoderStyle::CMUNeXt) {
        stem_ = std::make_unique<ConvBlock>(in_c, C[0], "stem");
        for (int l = 0; l < 5; ++l) {
            // The block runs at the previous level's width; the trailing
            // ConvBlock expands it to this level's channel count.
            const int width = l == 0 ? C[0] : C[static_cast<std::size_t>(l - 1)];
            enc_[static_cast<std::size_t>(l)].block = std::make_unique<CMUNeXtBlock>(
                CMUNeXtBlockCfg{width, K[static_cast<std::size_t>(l)], D[static_cast<std::size_t>(l)]},
                level_name("encoder", l) + ".block");
            enc_[static_cast<std::size_t>(l)].expand = std::make_unique<ConvBlock>(
                width, C[static_cast<std::size_t>(l)], level_name("encoder", l) + ".expand");
        }
    } else {
        for (int l = 0; l < 5; ++l) {
            const int from = l == 0 ? in_c : C[static_cast<std::size_t>(l - 1)];
            enc_[static_cast<std::size_t>(l)].dconv = std::make_unique<DoubleConvBlock>(
                from, C[static_cast<std::size_t>(l)], level_name("encoder", l) + ".block.conv");
        }
    }

    for (int l = 0; l < 4; ++l) {
        pools_.emplace_back(level_name("encoder", l) + ".pool");
    }

    dec_.resize(4);
    for (int l = 3; l >= 0; --l) {
        auto& d = dec_[static_cast<std::size_t>(l)];
        d.up = std::make_unique<UpBlock>(C[static_cast<std::size_t>(l + 1)],
                                         C[static_cast<std::size_t>(l)],
                                         level_name("decoder", l) + ".up");
        if (desc_.fusion == FusionStyle::SkipFusion) {
            d.sf = std::make_unique<SkipFusionBlock>(C[static_cast<std::size_t>(l)],
                                                     level_name("decoder", l) + ".fusion");
        } else {
            d.uf = std::make_unique<UNetFusionBlock>(C[static_cast<std::size_t>(l)],
                                                     level_name("decoder", l) + ".fusion");
        }
    }

    head_ = std::make_unique<Conv2d>(ConvSpec{C[0], 1, 1, 1, 0, 1, true}, "head");

    // Single seeded stream; modules are initialized in traversal order so a
    // rebuild from the same seed is bit-identical.
    Rng rng(desc_.seed);
    if (stem_) stem_->init(rng);
    for (auto& level : enc_) {
        if (level.block) level.block->init(rng);
        if (level.expand) level.expand->init(rng);
        if (level.dconv) level.dconv->init(rng);
    }
    for (int l = 3; l >= 0; --l) {
        auto& d = dec_[static_cast<std::size_t>(l)];
        d.up->init(rng);
        if (d.sf) d.sf->init(rng);
        if (d.uf) d.uf->init(rng);
    }
    head_->init(rng);
}

void Model::check_input(const Shape4& s) const {
    if (s.c != desc_.config.in_channels) {
        throw DimensionError("model expects " + std::to_string(desc_.config.in_channels) +
                             " input channels, got " + std::to_string(s.c));
    }
    if (s.h < 16 || s.w < 16 || s.h % 16 != 0 || s.w % 16 != 0) {
        throw DimensionError("input H and W must be >= 16 and divisible by 16, got " + s.str());
    }
    if (s.n <= 0) {
        throw DimensionError("input batch must be non-empty, got " + s.str());
    }
}

Tensor Model::forward(const Tensor& image, bool train, LayerTrace* trace) {
    check_input(image.shape());
    FwdCtx ctx{train, trace};
    last_shapes_.clear();

    Tensor x = stem_ ? stem_->forward(image, ctx) : image;
    if (stem_) last_shapes_.emplace_back("stem", x.shape());

    std::array<Tensor, 4> skips;
    for (int l = 0; l < 5; ++l) {
        auto& level = enc_[static_cast<std::size_t>(l)];
        if (level.block) {
            x = level.block->forward(x, ctx);
            x = level.expand->forward(x, ctx);
        } else {
            x = level.dconv->forward(x, ctx);
        }
        last_shapes_.emplace_back(level_name("encoder", l), x.shape());
        if (l < 4) {
            skips[static_cast<std::size_t>(l)] = x;
            x = pools_[static_cast<std::size_t>(l)].forward(x, ctx);
        }
    }

    for (int l = 3; l >= 0; --l) {
        auto& d = dec_[static_cast<std::size_t>(l)];
        x = d.up->forward(x, ctx);
        const Tensor& skip = skips[static_cast<std::size_t>(l)];
        x = d.sf ? d.sf->forward(skip, x, ctx) : d.uf->forward(skip, x, ctx);
        last_shapes_.emplace_back(level_name("decoder", l), x.shape());
    }

    Tensor logits = head_->forward(x, ctx);
    last_shapes_.emplace_back("head", logits.shape());
    return logits;
}

void Model::backward(const Tensor& grad_logits) {
    Tensor g = head_->backward(grad_logits);

    std::array<Tensor, 4> skip_grads;
    for (int l = 0; l <= 3; ++l) {
        auto& d = dec_[static_cast<std::size_t>(l)];
        auto [g_enc, g_dec] = d.sf ? d.sf->backward(g) : d.uf->backward(g);
        skip_grads[static_cast<std::size_t>(l)] = std::move(g_enc);
        g = d.up->backward(g_dec);
    }

    for (int l = 4; l >= 0; --l) {
        if (l < 4) {
            g = pools_[static_cast<std::size_t>(l)].backward(g);
            g = residual_add(g, skip_grads[static_cast<std::size_t>(l)]);
        }
        auto& level = enc_[static_cast<std::size_t>(l)];
        if (level.block) {
            g = level.expand->backward(g);
            g = level.block->backward(g);
        } else {
            g = level.dconv->backward(g);
        }
    }
    if (stem_) stem_->backward(g);
}

void Model::zero_grad() {
    if (stem_) stem_->zero_grad();
    for (auto& level : enc_) {
        if (level.block) level.block->zero_grad();
        if (level.expand) level.expand->zero_grad();
        if (level.dconv) level.dconv->zero_grad();
    }
    for (auto& d : dec_) {
        d.up->zero_grad();
        if (d.sf) d.sf->zero_grad();
        if (d.uf) d.uf->zero_grad();
    }
    head_->zero_grad();
}

std::vector<Parameter> Model::parameters() {
    std::vector<Parameter> out;
    if (stem_) stem_->collect(out);
    for (auto& level : enc_) {
        if (level.block) level.block->collect(out);
        if (level.expand) level.expand->collect(out);
        if (level.dconv) level.dconv->collect(out);
    }
    for (int l = 3; l >= 0; --l) {
        auto& d = dec_[static_cast<std::size_t>(l)];
        d.up->collect(out);
        if (d.sf) d.sf->collect(out);
        if (d.uf) d.uf->collect(out);
    }
    head_->collect(out);
    return out;
}

std::vector<StatBuffer> Model::stat_buffers() {
    std::vector<StatBuffer> out;
    if (stem_) stem_->collect_state(out);
    for (auto& level : enc_) {
        if (level.block) level.block->collect_state(out);
        if (level.expand) level.expand->collect_state(out);
        if (level.dconv) level.dconv->collect_state(out);
    }
    for (int l = 3; l >= 0; --l) {
        auto& d = dec_[static_cast<std::size_t>(l)];
        d.up->collect_state(out);
        if (d.sf) d.sf->collect_state(out);
        if (d.uf) d.uf->collect_state(out);
    }
    return out;
}

void Model::profile(Profiler& prof, Shape4 input) const {
    check_input(input);
    Shape4 s = input;
    if (stem_) s = stem_->profile(prof, s);

    std::array<Shape4, 4> skip_shapes{};
    for (int l = 0; l < 5; ++l) {
        const auto& level = enc_[static_cast<std::size_t>(l)];
        if (level.block) {
            s = level.block->profile(prof, s);
            s = level.expand->profile(prof, s);
        } else {
            s = level.dconv->profile(prof, s);
        }
        if (l < 4) {
            skip_shapes[static_cast<std::size_t>(l)] = s;
            s = pools_[static_cast<std::size_t>(l)].profile(prof, s);
        }
    }

    for (int l = 3; l >= 0; --l) {
        const auto& d = dec_[static_cast<std::size_t>(l)];
        s = d.up->profile(prof, s);
        const Shape4 enc_in = skip_shapes[static_cast<std::size_t>(l)];
        s = d.sf ? d.sf->profile(prof, enc_in) : d.uf->profile(prof, enc_in);
    }
    head_->profile(prof, s);
}

ModelCard Model::card() const {
    ModelCard card;
    card.desc = desc_;
    if (desc_.encoder == EncoderStyle::CMUNeXt || desc_.fusion == FusionStyle::SkipFusion) {
        card.deviation_flags = {
            "activation order: every CMUNeXt and fusion convolution is followed by GELU then "
            "BatchNorm, including the grouped fusion convolution",
            "residual scope: the residual wraps only the depthwise stage of each unit",
            "fusion widths: grouped 3x3 maps 2C->C; the pointwise pair runs C->4C->C",
            "GELU uses the exact erf form; bilinear upsampling uses half-pixel centers with "
            "edge clamping",
        };
    }
    return card;
}

std::string ModelCard::render() const {
    std::ostringstream os;
    os << "model: " << desc.config.name << "\n";
    os << "encoder: " << (desc.encoder == EncoderStyle::CMUNeXt ? "cmunext" : "double-conv")
       << "\n";
    os << "fusion: " << (desc.fusion == FusionStyle::SkipFusion ? "skip-fusion" : "double-conv")
       << "\n";
    os << "in_channels: " << desc.config.in_channels << "\n";
    auto list = [&os](const char* label, const std::array<int, 5>& v) {
        os << label << ":";
        for (int x : v) os << " " << x;
        os << "\n";
    };
    list("channels", desc.config.channels);
    list("depths", desc.config.depths);
    list("kernels", desc.config.kernels);
    os << "seed: " << desc.seed << "\n";
    if (!deviation_flags.empty()) {
        os << "conventions:\n";
        for (const auto& f : deviation_flags) os << "  - " << f << "\n";
    }
    return os.str();
}

Model substitute_block(const Model& base, const std::string& site, bool enable) {
    ModelDesc desc = base.desc();
    if (site == "encoder-blocks") {
        desc.encoder = enable ? EncoderStyle::CMUNeXt : EncoderStyle::DoubleConv;
    } else if (site == "skip-fusion") {
        desc.fusion = enable ? FusionStyle::SkipFusion : FusionStyle::DoubleConv;
    } else {
        throw ConfigError("unknown substitution site '" + site +
                          "' (expected encoder-blocks or skip-fusion)");
    }
    return Model(desc);
}

Model build_cmunext(const VariantConfig& config, std::uint64_t seed) {
    return Model(ModelDesc{config, EncoderStyle::CMUNeXt, FusionStyle::SkipFusion, seed});
}

Model build_unet_baseline(const std::array<int, 5>& channels, std::uint64_t seed, int in_channels) {
    VariantConfig cfg;
    cfg.channels = channels;
    cfg.depths = {1, 1, 1, 1, 1};
    cfg.kernels = {3, 3, 3, 3, 3};
    cfg.in_channels = in_channels;
    cfg.name = "unet-baseline";
    return Model(ModelDesc{cfg, EncoderStyle::DoubleConv, FusionStyle::DoubleConv, seed});
}

}  // namespace cmx
