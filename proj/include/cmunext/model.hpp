#ifndef CMUNEXT_MODEL_HPP
#define CMUNEXT_MODEL_HPP

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "cmunext/blocks.hpp"

namespace cmx {

// One row of the variant table: per-level channels, block depths, kernels.
struct VariantConfig {
    std::array<int, 5> channels{};
    std::array<int, 5> depths{};
    std::array<int, 5> kernels{};
    int in_channels = 3;
    std::string name = "custom";

    void validate() const;  // ConfigError naming the bad field

    static VariantConfig cmunext_s();
    static VariantConfig cmunext();
    static VariantConfig cmunext_l();
    // Accepts "cmunext-s" | "cmunext" | "cmunext-l".
    static VariantConfig preset(const std::string& name);
};

enum class EncoderStyle { DoubleConv, CMUNeXt };
enum class FusionStyle { DoubleConv, SkipFusion };

struct ModelDesc {
    VariantConfig config;
    EncoderStyle encoder = EncoderStyle::CMUNeXt;
    FusionStyle fusion = FusionStyle::SkipFusion;
    std::uint64_t seed = 0;
};

struct ModelCard {
    ModelDesc desc;
    std::vector<std::string> deviation_flags;
    std::string render() const;
};

// Five-level encoder-decoder over 3 styles: the CMUNeXt family, the plain
// U-Net baseline, and the hybrid with CMUNeXt encoder + U-Net decoder.
class Model {
public:
    explicit Model(const ModelDesc& desc);

    const ModelDesc& desc() const { return desc_; }

    // logits (N,1,H,W); H and W must be >= 16 and divisible by 16.
    Tensor forward(const Tensor& image, bool train, LayerTrace* trace = nullptr);
    // Consumes the contexts saved by the last train-mode forward.
    void backward(const Tensor& grad_logits);
    void zero_grad();

    std::vector<Parameter> parameters();
    std::vector<StatBuffer> stat_buffers();

    void profile(Profiler& prof, Shape4 input) const;

    // Level-boundary shapes observed by the most recent forward.
    const std::vector<std::pair<std::string, Shape4>>& last_shapes() const { return last_shapes_; }

    ModelCard card() const;

private:
    void check_input(const Shape4& s) const;

    ModelDesc desc_;

    std::unique_ptr<ConvBlock> stem_;  // CMUNeXt encoder only
    struct EncoderLevel {
        std::unique_ptr<CMUNeXtBlock> block;  // CMUNeXt style
        std::unique_ptr<ConvBlock> expand;    // CMUNeXt style
        std::unique_ptr<DoubleConvBlock> dconv;  // DoubleConv style
    };
    std::vector<EncoderLevel> enc_;
    std::vector<MaxPool2x2> pools_;
    struct DecoderLevel {
        std::unique_ptr<UpBlock> up;
        std::unique_ptr<SkipFusionBlock> sf;
        std::unique_ptr<UNetFusionBlock> uf;
    };
    std::vector<DecoderLevel> dec_;  // index l fuses at width channels[l]
    std::unique_ptr<Conv2d> head_;

    std::vector<std::pair<std::string, Shape4>> last_shapes_;
};

// Ablation switch between the three published configurations. site is
// "encoder-blocks" or "skip-fusion"; unknown sites raise ConfigError.
// The returned model is rebuilt from the same config and seed.
Model substitute_block(const Model& base, const std::string& site, bool enable);

Model build_cmunext(const VariantConfig& config, std::uint64_t seed);
Model build_unet_baseline(const std::array<int, 5>& channels, std::uint64_t seed,
                          int in_channels = 3);

}  // namespace cmx

#endif
