#include "cmunext/tensor.hpp"

#include <cmath>

namespace cmx {

std::string Shape4::str() const {
    return std::to_string(n) + "x" + std::to_string(c) + "x" + std::to_string(h) + "x" + std::to_string(w);
}

Tensor::Tensor(Shape4 shape, float fill) : shape_(shape) {
    if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0) {
        throw DimensionError("tensor shape has a negative axis: " + shape.str());
    }
    data_.assign(static_cast<std::size_t>(shape.numel()), fill);
}

Tensor::Tensor(Shape4 shape, std::vector<float> values) : shape_(shape), data_(std::move(values)) {
    if (static_cast<std::int64_t>(data_.size()) != shape.numel()) {
        throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                             " does not match shape " + shape.str());
    }
}

void Tensor::set_requires_grad(bool on) {
    requires_grad_ = on;
    if (on && grad_.empty()) {
        grad_.assign(data_.size(), 0.0f);
    }
}

void Tensor::zero_grad() {
    if (!grad_.empty()) {
        std::fill(grad_.begin(), grad_.end(), 0.0f);
    }
}

void Tensor::accumulate_grad(const Tensor& g) {
    check_same_shape(shape_, g.shape(), "gradient");
    if (grad_.empty()) {
        grad_.assign(data_.size(), 0.0f);
    }
    const float* src = g.data();
    for (std::size_t i = 0; i < grad_.size(); ++i) {
        grad_[i] += src[i];
    }
}

bool Tensor::all_finite() const {
    for (float v : data_) {
        if (!std::isfinite(v)) {
            return false;
        }
    }
    return true;
}

void check_same_shape(const Shape4& a, const Shape4& b, const char* what) {
    if (a == b) {
        return;
    }
    const char* axis = a.n != b.n ? "N" : a.c != b.c ? "C" : a.h != b.h ? "H" : "W";
    throw DimensionError(std::string(what) + " shape mismatch on axis " + axis + ": " + a.str() +
                         " vs " + b.str());
}

}  // namespace cmx
