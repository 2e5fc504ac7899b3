#ifndef CMUNEXT_METRICS_HPP
#define CMUNEXT_METRICS_HPP

#include <cstdint>
#include <string>
#include <utility>

#include "cmunext/model.hpp"
#include "cmunext/tensor.hpp"

namespace cmx {

// Set-level confusion totals. Accumulate over an evaluation set, then read
// IoU / F1 once; the empty-prediction-and-empty-target case scores 1.0.
struct MetricTotals {
    std::uint64_t tp = 0;
    std::uint64_t fp = 0;
    std::uint64_t fn = 0;

    void add(const Tensor& pred_prob, const Tensor& target, float threshold = 0.5f);
    double iou() const;
    double f1() const;
};

// Single-pair convenience wrapper around MetricTotals.
std::pair<double, double> iou_f1(const Tensor& pred_prob, const Tensor& target,
                                 float threshold = 0.5f);

double bench_fps(Model& model, Shape4 input, int warmup, int iters);

std::string hardware_descriptor();

}  // namespace cmx

#endif
