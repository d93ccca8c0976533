#pragma once

#include <vector>

namespace nsync {

// Real number held exactly as a sum of nonoverlapping doubles (a Shewchuk
// expansion, components in increasing magnitude). Additions and products of
// doubles are absorbed without rounding, so arithmetic identities that hold
// over the reals hold for the represented values. The projection code relies
// on this: its output is a function of the exact real intermediates, not of
// any particular summation order.
class ExactSum {
  public:
    ExactSum() = default;

    void add(double x);
    // Adds a*b exactly (both halves of the two-product).
    void add_prod(double a, double b);
    // Adds c * other exactly.
    void add_scaled(const ExactSum& other, double c);
    void add_expansion(const ExactSum& other);
    void negate();

    // Faithful double estimate of the represented value.
    double approx() const;
    // Exact sign of the represented value: -1, 0, or +1.
    int sign() const;
    // Exact comparison |this| < |other|.
    bool abs_less(const ExactSum& other) const;
    // Exact comparison against a plain double.
    int compare(double x) const;

    size_t components() const { return comp_.size(); }

  private:
    std::vector<double> comp_;
};

// Exact dot product of two equal-length vectors.
ExactSum exact_dot(const std::vector<double>& a, const std::vector<double>& b);

// Nearest-double quotient of two exactly represented values; den must be
// nonzero. The result depends only on the real values num/den, which is what
// makes callers invariant under exact rescaling of their inputs. Ties between
// adjacent doubles resolve to the smaller candidate.
double exact_div(const ExactSum& num, const ExactSum& den);

}  // namespace nsync
