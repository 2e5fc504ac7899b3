#ifndef CMUNEXT_COMPLEXITY_HPP
#define CMUNEXT_COMPLEXITY_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "cmunext/model.hpp"

namespace cmx {

// Analytic per-layer parameter and multiply-accumulate accounting.
// Conventions: conv MACs = k^2 * (in_c/groups) * out_c * H_out * W_out;
// batchnorm, activations, pooling, upsampling and residual adds count one op
// per output element; channel concat is a copy and counts zero. The headline
// "GFLOPs" figure is total ops / 1e9 (one MAC reported as one FLOP);
// flops_per_mac = 2 switches to strict multiply+add counting.
struct ComplexityReport {
    Shape4 input_shape{};
    std::vector<LayerCost> per_layer;
    std::uint64_t total_params = 0;  // trainable
    std::uint64_t total_state = 0;   // running statistics, reported separately
    std::uint64_t total_macs = 0;    // conv MACs + itemized elementwise ops
    std::uint64_t conv_macs = 0;
    int flops_per_mac = 1;

    double gflops() const {
        return static_cast<double>(flops_per_mac) * static_cast<double>(total_macs) / 1e9;
    }
    double params_m() const { return static_cast<double>(total_params) / 1e6; }

    std::string table() const;          // human-readable
    std::string machine_lines() const;  // "name,params,macs" per line
};

ComplexityReport count_params(const Model& model);
ComplexityReport count_macs(const Model& model, Shape4 input, int flops_per_mac = 1);

}  // namespace cmx

#endif
