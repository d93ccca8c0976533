#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "nsync/tensor.hpp"

namespace nsync {

// Flattening order for the trainable subset of a ParamSet: entries appear in
// registration order, offsets are cumulative. Gradient arithmetic is only
// defined between vectors with equal layouts.
struct GradEntry {
    std::string name;
    std::vector<int64_t> shape;
    size_t offset = 0;
};

struct GradLayout {
    std::vector<GradEntry> entries;
    size_t total = 0;

    bool operator==(const GradLayout& other) const;
    std::string describe() const;
};

struct GradVector {
    GradLayout layout;
    std::vector<double> values;

    static GradVector zeros(const GradLayout& layout);

    double dot(const GradVector& other) const;
    double norm() const;
    // this += a * x
    GradVector& axpy(double a, const GradVector& x);
    GradVector& scale(double c);
    bool all_finite() const;
    // First entry name whose slice contains a non-finite value, or empty.
    std::string first_non_finite() const;
};

// Named tensors with a per-tensor trainable flag. Names are unique and keep
// registration order, which fixes the GradVector layout.
class ParamSet {
  public:
    void add(const std::string& name, Tensor t, bool trainable = false);
    bool has(const std::string& name) const { return index_.count(name) != 0; }
    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;
    void set_trainable(const std::string& name, bool trainable);
    bool is_trainable(const std::string& name) const;

    const std::vector<std::string>& names() const { return names_; }
    std::vector<std::string> trainable_names() const;
    size_t size() const { return names_.size(); }

    GradLayout trainable_layout() const;
    GradVector flatten_trainable() const;
    void assign_trainable(const GradVector& flat);

  private:
    size_t index_of(const std::string& name) const;

    std::vector<std::string> names_;
    std::unordered_map<std::string, size_t> index_;
    std::vector<Tensor> values_;
    std::vector<char> trainable_;
};

}  // namespace nsync
