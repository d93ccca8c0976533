#include "nsync/tensor.hpp"

#include <cmath>

namespace nsync {

int64_t shape_numel(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t e : shape) {
        NSYNC_CHECK(e > 0, "tensor extents must be positive, got ", e);
        n *= e;
    }
    return n;
}

std::string shape_str(const std::vector<int64_t>& shape) {
    std::string s = "(";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + ")";
}

Tensor::Tensor(std::vector<int64_t> s, std::vector<double> d)
    : shape(std::move(s)), data(std::move(d)) {
    NSYNC_CHECK(shape_numel(shape) == static_cast<int64_t>(data.size()),
                "tensor data length ", data.size(), " does not match shape ", shape_str(shape));
}

Tensor Tensor::zeros(std::vector<int64_t> shape) {
    int64_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(static_cast<size_t>(n), 0.0));
}

Tensor Tensor::full(std::vector<int64_t> shape, double value) {
    int64_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(static_cast<size_t>(n), value));
}

Tensor Tensor::vec(std::vector<double> values) {
    auto n = static_cast<int64_t>(values.size());
    return Tensor({n}, std::move(values));
}

bool Tensor::all_finite() const {
    for (double v : data)
        if (!std::isfinite(v)) return false;
    return true;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    NSYNC_CHECK(a.size() == b.size(), "dot: length mismatch ", a.size(), " vs ", b.size());
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double norm2(const std::vector<double>& a) { return std::sqrt(dot(a, a)); }

}  // namespace nsync
