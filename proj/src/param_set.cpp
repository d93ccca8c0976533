#include "nsync/param_set.hpp"

#include <cmath>

namespace nsync {

bool GradLayout::operator==(const GradLayout& other) const {
    if (total != other.total || entries.size() != other.entries.size()) return false;
    for (size_t i = 0; i < entries.size(); ++i) {
        if (entries[i].name != other.entries[i].name || entries[i].shape != other.entries[i].shape ||
            entries[i].offset != other.entries[i].offset)
            return false;
    }
    return true;
}

std::string GradLayout::describe() const {
    std::string s;
    for (const auto& e : entries) {
        if (!s.empty()) s += " ";
        s += e.name + shape_str(e.shape) + "@" + std::to_string(e.offset);
    }
    return s.empty() ? "<empty>" : s;
}

GradVector GradVector::zeros(const GradLayout& layout) {
    GradVector g;
    g.layout = layout;
    g.values.assign(layout.total, 0.0);
    return g;
}

double GradVector::dot(const GradVector& other) const {
    NSYNC_CHECK(layout == other.layout, "grad layout mismatch: [", layout.describe(), "] vs [",
                other.layout.describe(), "]");
    return nsync::dot(values, other.values);
}

double GradVector::norm() const { return norm2(values); }

GradVector& GradVector::axpy(double a, const GradVector& x) {
    NSYNC_CHECK(layout == x.layout, "grad layout mismatch: [", layout.describe(), "] vs [",
                x.layout.describe(), "]");
    for (size_t i = 0; i < values.size(); ++i) values[i] += a * x.values[i];
    return *this;
}

GradVector& GradVector::scale(double c) {
    for (double& v : values) v *= c;
    return *this;
}

bool GradVector::all_finite() const {
    for (double v : values)
        if (!std::isfinite(v)) return false;
    return true;
}

std::string GradVector::first_non_finite() const {
    for (const auto& e : layout.entries) {
        size_t n = static_cast<size_t>(shape_numel(e.shape));
        for (size_t i = 0; i < n; ++i)
            if (!std::isfinite(values[e.offset + i])) return e.name;
    }
    return "";
}

void ParamSet::add(const std::string& name, Tensor t, bool trainable) {
    NSYNC_CHECK(!name.empty(), "parameter name must be nonempty");
    NSYNC_CHECK(index_.count(name) == 0, "duplicate parameter name: ", name);
    index_[name] = names_.size();
    names_.push_back(name);
    values_.push_back(std::move(t));
    trainable_.push_back(trainable ? 1 : 0);
}

size_t ParamSet::index_of(const std::string& name) const {
    auto it = index_.find(name);
    NSYNC_CHECK(it != index_.end(), "unknown parameter: ", name);
    return it->second;
}

Tensor& ParamSet::at(const std::string& name) { return values_[index_of(name)]; }
const Tensor& ParamSet::at(const std::string& name) const { return values_[index_of(name)]; }

void ParamSet::set_trainable(const std::string& name, bool trainable) {
    trainable_[index_of(name)] = trainable ? 1 : 0;
}

bool ParamSet::is_trainable(const std::string& name) const {
    return trainable_[index_of(name)] != 0;
}

std::vector<std::string> ParamSet::trainable_names() const {
    std::vector<std::string> out;
    for (size_t i = 0; i < names_.size(); ++i)
        if (trainable_[i]) out.push_back(names_[i]);
    return out;
}

GradLayout ParamSet::trainable_layout() const {
    GradLayout layout;
    for (size_t i = 0; i < names_.size(); ++i) {
        if (!trainable_[i]) continue;
        GradEntry e;
        e.name = names_[i];
        e.shape = values_[i].shape;
        e.offset = layout.total;
        layout.total += static_cast<size_t>(values_[i].numel());
        layout.entries.push_back(std::move(e));
    }
    return layout;
}

GradVector ParamSet::flatten_trainable() const {
    GradVector flat = GradVector::zeros(trainable_layout());
    for (const auto& e : flat.layout.entries) {
        const Tensor& t = at(e.name);
        std::copy(t.data.begin(), t.data.end(), flat.values.begin() + static_cast<long>(e.offset));
    }
    return flat;
}

void ParamSet::assign_trainable(const GradVector& flat) {
    NSYNC_CHECK(flat.layout == trainable_layout(), "flat vector layout [", flat.layout.describe(),
                "] does not match trainable params [", trainable_layout().describe(), "]");
    for (const auto& e : flat.layout.entries) {
        Tensor& t = at(e.name);
        std::copy(flat.values.begin() + static_cast<long>(e.offset),
                  flat.values.begin() + static_cast<long>(e.offset) + t.numel(), t.data.begin());
    }
}

}  // namespace nsync
