#ifndef CMUNEXT_BLOCKS_HPP
#define CMUNEXT_BLOCKS_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cmunext/ops.hpp"
#include "cmunext/rng.hpp"
#include "cmunext/tensor.hpp"

namespace cmx {

// Handle to a named trainable buffer. Storage lives in the owning module;
// the momentum buffer belongs to the optimizer state and is sized lazily.
struct Parameter {
    std::string name;
    std::vector<std::int64_t> shape;
    std::int64_t size = 0;
    float* value = nullptr;
    float* grad = nullptr;
    std::vector<float>* momentum = nullptr;
};

// Non-trainable per-channel state (batchnorm running statistics).
struct StatBuffer {
    std::string name;
    std::vector<std::int64_t> shape;
    std::int64_t size = 0;
    float* value = nullptr;
};

// Ordered record of layer outputs from one forward pass; used to name the
// first layer that produced a non-finite value.
class LayerTrace {
public:
    void record(const std::string& name, const Tensor& t) {
        rows_.emplace_back(name, t.all_finite());
    }
    std::optional<std::string> first_nonfinite() const {
        for (const auto& [name, finite] : rows_) {
            if (!finite) return name;
        }
        return std::nullopt;
    }
    void clear() { rows_.clear(); }

private:
    std::vector<std::pair<std::string, bool>> rows_;
};

struct FwdCtx {
    bool train = false;
    LayerTrace* trace = nullptr;
};

// Analytic per-layer cost row. Parameter counts come from layer specs, not
// from buffer sizes, so tests can cross-check the two independently.
struct LayerCost {
    std::string name;
    std::uint64_t params = 0;
    std::uint64_t state = 0;  // non-trainable (running stats)
    std::uint64_t macs = 0;
    bool is_conv = false;
};

class Profiler {
public:
    void add(LayerCost row) { rows_.push_back(std::move(row)); }
    const std::vector<LayerCost>& rows() const { return rows_; }

private:
    std::vector<LayerCost> rows_;
};

// ---------------------------------------------------------------------------
// Primitive modules: own parameters and one saved forward context each.
// ---------------------------------------------------------------------------

class Conv2d {
public:
    Conv2d(ConvSpec spec, std::string name);
    void init(Rng& rng);  // He-style fan-in scaled uniform weights, zero bias
    Tensor forward(const Tensor& x, const FwdCtx& ctx);
    Tensor backward(const Tensor& grad_out);
    void collect(std::vector<Parameter>& out);
    void zero_grad();
    Shape4 profile(Profiler& prof, Shape4 in) const;
    const ConvSpec& spec() const { return spec_; }
    const std::string& name() const { return name_; }
    Tensor& weight() { return weight_; }
    std::vector<float>& bias() { return bias_; }

private:
    ConvSpec spec_;
    std::string name_;
    Tensor weight_;
    std::vector<float> bias_, bias_grad_;
    std::vector<float> weight_mom_, bias_mom_;
    Conv2dContext ctx_;
};

class BatchNorm2d {
public:
    BatchNorm2d(int channels, std::string name);
    Tensor forward(const Tensor& x, const FwdCtx& ctx);
    Tensor backward(const Tensor& grad_out);
    void collect(std::vector<Parameter>& out);
    void collect_state(std::vector<StatBuffer>& out);
    void zero_grad();
    Shape4 profile(Profiler& prof, Shape4 in) const;
    BatchNormState& state() { return state_; }
    const std::string& name() const { return name_; }

private:
    BatchNormState state_;
    std::string name_;
    std::vector<float> gamma_grad_, beta_grad_;
    std::vector<float> gamma_mom_, beta_mom_;
    BatchNormContext ctx_;
};

class Gelu {
public:
    explicit Gelu(std::string name) : name_(std::move(name)) {}
    Tensor forward(const Tensor& x, const FwdCtx& ctx);
    Tensor backward(const Tensor& grad_out);
    Shape4 profile(Profiler& prof, Shape4 in) const;

private:
    std::string name_;
    Tensor saved_input_;
    bool have_ctx_ = false;
};

class Relu {
public:
    explicit Relu(std::string name) : name_(std::move(name)) {}
    Tensor forward(const Tensor& x, const FwdCtx& ctx);
    Tensor backward(const Tensor& grad_out);
    Shape4 profile(Profiler& prof, Shape4 in) const;

private:
    std::string name_;
    Tensor saved_input_;
    bool have_ctx_ = false;
};

class MaxPool2x2 {
public:
    explicit MaxPool2x2(std::string name) : name_(std::move(name)) {}
    Tensor forward(const Tensor& x, const FwdCtx& ctx);
    Tensor backward(const Tensor& grad_out);
    Shape4 profile(Profiler& prof, Shape4 in) const;

private:
    std::string name_;
    MaxPoolContext ctx_;
};

class Upsample2x {
public:
    explicit Upsample2x(std::string name) : name_(std::move(name)) {}
    Tensor forward(const Tensor& x, const FwdCtx& ctx);
    Tensor backward(const Tensor& grad_out);
    Shape4 profile(Profiler& prof, Shape4 in) const;

private:
    std::string name_;
};

// ---------------------------------------------------------------------------
// Composite blocks
// ---------------------------------------------------------------------------

// conv3x3 (s=1, p=1) -> BN -> ReLU; spatial size preserved. Serves as the
// stem, the per-level channel expansion, and half of the U-Net double block.
class ConvBlock {
public:
    ConvBlock(int in_c, int out_c, const std::string& prefix);
    void init(Rng& rng);
    Tensor forward(const Tensor& x, const FwdCtx& ctx);
    Tensor backward(const Tensor& grad_out);
    void collect(std::vector<Parameter>& out);
    void collect_state(std::vector<StatBuffer>& out);
    void zero_grad();
    Shape4 profile(Profiler& prof, Shape4 in) const;
    BatchNorm2d& bn() { return bn_; }
    Conv2d& conv() { return conv_; }

private:
    Conv2d conv_;
    BatchNorm2d bn_;
    Relu relu_;
};

class DoubleConvBlock {
public:
    DoubleConvBlock(int in_c, int out_c, const std::string& prefix);
    void init(Rng& rng);
    Tensor forward(const Tensor& x, const FwdCtx& ctx);
    Tensor backward(const Tensor& grad_out);
    void collect(std::vector<Parameter>& out);
    void collect_state(std::vector<StatBuffer>& out);
    void zero_grad();
    Shape4 profile(Profiler& prof, Shape4 in) const;

private:
    ConvBlock c1_, c2_;
};

struct CMUNeXtBlockCfg {
    int channels = 0;
    int kernel = 3;
    int depth = 1;
};

// One unit: [depthwise KxK -> GELU -> BN] + residual, then the inverted
// bottleneck pointwise pair C -> 4C -> C, each conv followed by GELU and BN.
class CMUNeXtUnit {
public:
    CMUNeXtUnit(int channels, int kernel, const std::string& prefix);
    void init(Rng& rng);
    Tensor forward(const Tensor& x, const FwdCtx& ctx);
    Tensor backward(const Tensor& grad_out);
    void collect(std::vector<Parameter>& out);
    void collect_state(std::vector<StatBuffer>& out);
    void zero_grad();
    Shape4 profile(Profiler& prof, Shape4 in) const;

private:
    std::string prefix_;
    Conv2d dw_;
    Gelu g1_;
    BatchNorm2d bn1_;
    Conv2d pw1_;
    Gelu g2_;
    BatchNorm2d bn2_;
    Conv2d pw2_;
    Gelu g3_;
    BatchNorm2d bn3_;
};

class CMUNeXtBlock {
public:
    CMUNeXtBlock(const CMUNeXtBlockCfg& cfg, const std::string& prefix);
    void init(Rng& rng);
    Tensor forward(const Tensor& x, const FwdCtx& ctx);
    Tensor backward(const Tensor& grad_out);
    void collect(std::vector<Parameter>& out);
    void collect_state(std::vector<StatBuffer>& out);
    void zero_grad();
    Shape4 profile(Profiler& prof, Shape4 in) const;
    const CMUNeXtBlockCfg& cfg() const { return cfg_; }

private:
    CMUNeXtBlockCfg cfg_;
    std::vector<CMUNeXtUnit> units_;
};

// concat(enc, dec) -> grouped 3x3 (2C->C, groups=2) -> GELU -> BN ->
// pointwise C->4C -> GELU -> BN -> pointwise 4C->C -> GELU -> BN.
// The encoder half of the concatenation feeds group 0.
class SkipFusionBlock {
public:
    SkipFusionBlock(int channels, const std::string& prefix);
    void init(Rng& rng);
    Tensor forward(const Tensor& f_enc, const Tensor& f_dec, const FwdCtx& ctx);
    std::pair<Tensor, Tensor> backward(const Tensor& grad_out);  // (d_enc, d_dec)
    void collect(std::vector<Parameter>& out);
    void collect_state(std::vector<StatBuffer>& out);
    void zero_grad();
    Shape4 profile(Profiler& prof, Shape4 enc_in) const;
    Conv2d& group_conv() { return gconv_; }

private:
    int channels_;
    std::string prefix_;
    Conv2d gconv_;
    Gelu g1_;
    BatchNorm2d bn1_;
    Conv2d pw1_;
    Gelu g2_;
    BatchNorm2d bn2_;
    Conv2d pw2_;
    Gelu g3_;
    BatchNorm2d bn3_;
};

// concat(enc, dec) -> double conv 2C -> C (the U-Net baseline fusion).
class UNetFusionBlock {
public:
    UNetFusionBlock(int channels, const std::string& prefix);
    void init(Rng& rng);
    Tensor forward(const Tensor& f_enc, const Tensor& f_dec, const FwdCtx& ctx);
    std::pair<Tensor, Tensor> backward(const Tensor& grad_out);
    void collect(std::vector<Parameter>& out);
    void collect_state(std::vector<StatBuffer>& out);
    void zero_grad();
    Shape4 profile(Profiler& prof, Shape4 enc_in) const;

private:
    int channels_;
    std::string prefix_;
    DoubleConvBlock dc_;
};

// bilinear x2 -> conv3x3 C_hi -> C_lo -> BN -> ReLU.
class UpBlock {
public:
    UpBlock(int in_c, int out_c, const std::string& prefix);
    void init(Rng& rng);
    Tensor forward(const Tensor& x, const FwdCtx& ctx);
    Tensor backward(const Tensor& grad_out);
    void collect(std::vector<Parameter>& out);
    void collect_state(std::vector<StatBuffer>& out);
    void zero_grad();
    Shape4 profile(Profiler& prof, Shape4 in) const;
    BatchNorm2d& bn() { return bn_; }
    Conv2d& conv() { return conv_; }

private:
    Upsample2x up_;
    Conv2d conv_;
    BatchNorm2d bn_;
    Relu relu_;
};

}  // namespace cmx

#endif
