#ifndef CMUNEXT_TENSOR_HPP
#define CMUNEXT_TENSOR_HPP

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace cmx {

// Error taxonomy surfaced through the C API as status codes.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DimensionError : Error {
    using Error::Error;
};
struct ConfigError : Error {
    using Error::Error;
};
struct StateError : Error {
    using Error::Error;
};
struct ValidationError : Error {
    using Error::Error;
};
struct IoError : Error {
    using Error::Error;
};

struct Shape4 {
    int n = 0;
    int c = 0;
    int h = 0;
    int w = 0;

    std::int64_t numel() const {
        return static_cast<std::int64_t>(n) * c * h * w;
    }
    bool operator==(const Shape4&) const = default;
    std::string str() const;
};

// Dense rank-4 array in NCHW order, 32-bit floats, row-major innermost W.
// Carries an optional same-shape gradient buffer.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape4 shape, float fill = 0.0f);
    Tensor(Shape4 shape, std::vector<float> values);

    const Shape4& shape() const { return shape_; }
    std::int64_t numel() const { return shape_.numel(); }
    bool empty() const { return data_.empty(); }

    float* data() { return data_.data(); }
    const float* data() const { return data_.data(); }
    std::vector<float>& vec() { return data_; }
    const std::vector<float>& vec() const { return data_; }

    std::int64_t offset(int n, int c, int y, int x) const {
        return ((static_cast<std::int64_t>(n) * shape_.c + c) * shape_.h + y) * shape_.w + x;
    }
    float& at(int n, int c, int y, int x) { return data_[offset(n, c, y, x)]; }
    float at(int n, int c, int y, int x) const { return data_[offset(n, c, y, x)]; }

    // Pointer to the (n, c) spatial plane of h*w values.
    float* plane(int n, int c) { return data_.data() + offset(n, c, 0, 0); }
    const float* plane(int n, int c) const { return data_.data() + offset(n, c, 0, 0); }

    bool requires_grad() const { return requires_grad_; }
    void set_requires_grad(bool on);

    // Null when no gradient buffer is attached.
    float* grad() { return grad_.empty() ? nullptr : grad_.data(); }
    const float* grad() const { return grad_.empty() ? nullptr : grad_.data(); }
    std::vector<float>& grad_vec() { return grad_; }

    void zero_grad();
    // Additive accumulation; allocates the buffer on first use.
    void accumulate_grad(const Tensor& g);

    bool all_finite() const;

private:
    Shape4 shape_{};
    std::vector<float> data_;
    std::vector<float> grad_;
    bool requires_grad_ = false;
};

// Throws DimensionError naming the first axis that differs.
void check_same_shape(const Shape4& a, const Shape4& b, const char* what);

}  // namespace cmx

#endif
