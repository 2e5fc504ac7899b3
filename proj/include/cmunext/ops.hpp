#ifndef CMUNEXT_OPS_HPP
#define CMUNEXT_OPS_HPP

#include <cstdint>
#include <utility>
#include <vector>

#include "cmunext/tensor.hpp"

namespace cmx {

enum class Mode { Train, Eval };

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

struct ConvSpec {
    int in_channels = 0;
    int out_channels = 0;
    int kernel = 1;   // square, odd
    int stride = 1;
    int padding = 0;
    int groups = 1;
    bool has_bias = true;

    void validate() const;  // ConfigError on any malformed field
    Shape4 output_shape(const Shape4& input) const;
    std::int64_t weight_count() const;
    std::int64_t param_count() const;  // weights + bias
    // MACs for one forward pass at the given input shape (bias excluded).
    std::uint64_t macs(const Shape4& input) const;
};

// Saved forward state for one conv2d call. A context can back one backward
// pass; reuse without re-running forward is a StateError.
struct Conv2dContext {
    Tensor input;
    Tensor weight;
    ConvSpec spec;
    bool has_bias = false;
    bool valid = false;
    bool consumed = false;
};

struct Conv2dGrads {
    Tensor input;
    Tensor weight;
    std::vector<float> bias;  // empty when the forward had no bias
};

// weight laid out [out_c, in_c/groups, k, k]; bias (nullable) has out_c values.
Tensor conv2d(const Tensor& input, const Tensor& weight, const float* bias, const ConvSpec& spec,
              Conv2dContext* ctx = nullptr);
Conv2dGrads conv2d_backward(const Tensor& grad_out, Conv2dContext& ctx);

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

struct BatchNormState {
    std::vector<float> gamma;
    std::vector<float> beta;
    std::vector<float> running_mean;
    std::vector<float> running_var;
    float eps = 1e-5f;
    float momentum = 0.1f;  // running = (1 - momentum) * running + momentum * batch
    Mode mode = Mode::Train;

    explicit BatchNormState(int channels);
    BatchNormState() = default;
    int channels() const { return static_cast<int>(gamma.size()); }
};

struct BatchNormContext {
    Tensor input;
    std::vector<float> mean;     // batch stats in train mode, running stats in eval
    std::vector<float> inv_std;
    std::vector<float> gamma;
    Mode mode = Mode::Train;
    bool valid = false;
    bool consumed = false;
};

struct BatchNormGrads {
    Tensor input;
    std::vector<float> gamma;
    std::vector<float> beta;
};

// Train mode normalizes with biased per-batch statistics over N,H,W and
// updates the running stats; eval mode uses the running stats unchanged.
Tensor batchnorm2d(const Tensor& input, BatchNormState& state, BatchNormContext* ctx = nullptr);
BatchNormGrads batchnorm2d_backward(const Tensor& grad_out, BatchNormContext& ctx);

// ---------------------------------------------------------------------------
// Elementwise activations
// ---------------------------------------------------------------------------

// x * Phi(x), exact erf form.
Tensor gelu(const Tensor& input);
Tensor gelu_backward(const Tensor& grad_out, const Tensor& input);

Tensor relu(const Tensor& input);
// Subgradient at 0 taken as 0.
Tensor relu_backward(const Tensor& grad_out, const Tensor& input);

// Numerically stable branch form; saturates to 0/1 without overflow.
Tensor sigmoid(const Tensor& input);
Tensor sigmoid_backward(const Tensor& grad_out, const Tensor& output);

// ---------------------------------------------------------------------------
// Pooling / resampling / wiring
// ---------------------------------------------------------------------------

struct MaxPoolContext {
    Shape4 input_shape{};
    std::vector<std::int32_t> argmax;  // flat input index per output element
    bool valid = false;
    bool consumed = false;
};

// 2x2 window, stride 2; H and W must be even. Ties go to the first element
// of the window in row-major order.
Tensor maxpool2x2(const Tensor& input, MaxPoolContext* ctx = nullptr);
Tensor maxpool2x2_backward(const Tensor& grad_out, MaxPoolContext& ctx);

// Factor-2 bilinear interpolation, half-pixel centers, edges clamped.
// Linear in the input, so backward is the transpose map and needs no context.
Tensor bilinear_upsample2x(const Tensor& input);
Tensor bilinear_upsample2x_backward(const Tensor& grad_out);

// a's channels first. Inputs must agree on N, H, W.
Tensor concat_channels(const Tensor& a, const Tensor& b);
std::pair<Tensor, Tensor> concat_channels_backward(const Tensor& grad_out, int channels_a);

Tensor residual_add(const Tensor& a, const Tensor& b);

}  // namespace cmx

#endif
