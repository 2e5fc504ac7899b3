#include <algorithm>
#include <chrono>
#include <fstream>
#include <thread>

#include "cmunext/metrics.hpp"
#include "cmunext/rng.hpp"

namespace cmx {

void MetricTotals::add(const Tensor& pred_prob, const Tensor& target, float threshold) {
    check_same_shape(pred_prob.shape(), target.shape(), "metric inputs");
    const float* p = pred_prob.data();
    const float* y = target.data();
    const std::int64_t n = pred_prob.numel();
    for (std::int64_t i = 0; i < n; ++i) {
        if (y[i] != 0.0f && y[i] != 1.0f) {
            throw ValidationError("metrics: target must be binary");
        }
        const bool pred = p[i] > threshold;
        const bool truth = y[i] != 0.0f;
        if (pred && truth) {
            ++tp;
        } else if (pred && !truth) {
            ++fp;
        } else if (!pred && truth) {
            ++fn;
        }
    }
}

double MetricTotals::iou() const {
    const std::uint64_t denom = tp + fp + fn;
    return denom == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(denom);
}

double MetricTotals::f1() const {
    const std::uint64_t denom = 2 * tp + fp + fn;
    return denom == 0 ? 1.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

std::pair<double, double> iou_f1(const Tensor& pred_prob, const Tensor& target, float threshold) {
    MetricTotals t;
    t.add(pred_prob, target, threshold);
    return {t.iou(), t.f1()};
}

double bench_fps(Model& model, Shape4 input, int warmup, int iters) {
    if (iters <= 0) {
        throw ConfigError("bench_fps: iters must be positive");
    }
    Tensor image(input);
    Rng rng(7);
    for (float& v : image.vec()) v = rng.uniform();

    for (int i = 0; i < warmup; ++i) {
        model.forward(image, /*train=*/false);
    }
    std::vector<double> times;
    times.reserve(static_cast<std::size_t>(iters));
    for (int i = 0; i < iters; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        model.forward(image, /*train=*/false);
        times.push_back(
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    }
    std::sort(times.begin(), times.end());
    const double median = times[times.size() / 2];
    return 1.0 / median;
}

std::string hardware_descriptor() {
    std::string cpu = "unknown cpu";
    std::ifstream info("/proc/cpuinfo");
    std::string line;
    while (std::getline(info, line)) {
        if (line.rfind("model name", 0) == 0) {
            const auto pos = line.find(':');
            if (pos != std::string::npos) {
                cpu = line.substr(pos + 2);
            }
            break;
        }
    }
    return cpu + ", " + std::to_string(std::thread::hardware_concurrency()) + " hw threads";
}

}  // namespace cmx
