#pragma once

#include <cstdint>
#include <initializer_list>
#include <vector>

#include "nsync/common.hpp"

namespace nsync {

// Dense row-major array of doubles. Plain value type; shape is a list of
// positive extents and data.size() always equals their product.
struct Tensor {
    std::vector<int64_t> shape;
    std::vector<double> data;

    Tensor() = default;
    Tensor(std::vector<int64_t> s, std::vector<double> d);

    static Tensor zeros(std::vector<int64_t> shape);
    static Tensor full(std::vector<int64_t> shape, double value);
    // 1-D tensor from explicit values.
    static Tensor vec(std::vector<double> values);

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    bool same_shape(const Tensor& other) const { return shape == other.shape; }

    double& operator[](size_t i) { return data[i]; }
    double operator[](size_t i) const { return data[i]; }

    // (row, col) access for 2-D tensors.
    double& at2(int64_t r, int64_t c) { return data[static_cast<size_t>(r * shape[1] + c)]; }
    double at2(int64_t r, int64_t c) const { return data[static_cast<size_t>(r * shape[1] + c)]; }

    bool all_finite() const;
};

int64_t shape_numel(const std::vector<int64_t>& shape);
std::string shape_str(const std::vector<int64_t>& shape);

double dot(const std::vector<double>& a, const std::vector<double>& b);
double norm2(const std::vector<double>& a);

}  // namespace nsync
