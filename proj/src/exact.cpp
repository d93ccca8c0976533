#include "nsync/exact.hpp"

#include <cmath>

#include "nsync/common.hpp"

namespace nsync {

namespace {

// Knuth two-sum: s + err == a + b exactly.
inline void two_sum(double a, double b, double& s, double& err) {
    s = a + b;
    double bv = s - a;
    double av = s - bv;
    err = (a - av) + (b - bv);
}

// p + err == a * b exactly.
inline void two_prod(double a, double b, double& p, double& err) {
    p = a * b;
    err = std::fma(a, b, -p);
}

}  // namespace

void ExactSum::add(double x) {
    // Grow-expansion with zero elimination; keeps components nonoverlapping
    // and in increasing magnitude.
    double q = x;
    size_t out = 0;
    for (size_t i = 0; i < comp_.size(); ++i) {
        double s, err;
        two_sum(q, comp_[i], s, err);
        if (err != 0.0) comp_[out++] = err;
        q = s;
    }
    comp_.resize(out);
    if (q != 0.0) comp_.push_back(q);
}

void ExactSum::add_prod(double a, double b) {
    double p, err;
    two_prod(a, b, p, err);
    if (err != 0.0) add(err);
    if (p != 0.0) add(p);
}

void ExactSum::add_scaled(const ExactSum& other, double c) {
    for (double h : other.comp_) add_prod(h, c);
}

void ExactSum::add_expansion(const ExactSum& other) {
    for (double h : other.comp_) add(h);
}

void ExactSum::negate() {
    for (double& h : comp_) h = -h;
}

double ExactSum::approx() const {
    double s = 0.0;
    for (double h : comp_) s += h;
    return s;
}

int ExactSum::sign() const {
    if (comp_.empty()) return 0;
    // Largest-magnitude component dominates a nonoverlapping expansion.
    double top = comp_.back();
    return top > 0.0 ? 1 : -1;
}

bool ExactSum::abs_less(const ExactSum& other) const {
    ExactSum a = *this;
    if (a.sign() < 0) a.negate();
    ExactSum b = other;
    if (b.sign() < 0) b.negate();
    b.negate();
    a.add_expansion(b);
    return a.sign() < 0;
}

int ExactSum::compare(double x) const {
    ExactSum d = *this;
    d.add(-x);
    return d.sign();
}

ExactSum exact_dot(const std::vector<double>& a, const std::vector<double>& b) {
    NSYNC_CHECK(a.size() == b.size(), "exact_dot: length mismatch ", a.size(), " vs ", b.size());
    ExactSum s;
    for (size_t i = 0; i < a.size(); ++i) s.add_prod(a[i], b[i]);
    return s;
}

double exact_div(const ExactSum& num, const ExactSum& den) {
    NSYNC_CHECK_NUM(den.sign() != 0, "exact_div: zero denominator");
    if (num.sign() == 0) return 0.0;

    double d0 = den.approx();
    double q = num.approx() / d0;
    NSYNC_CHECK_NUM(std::isfinite(q), "exact_div: non-finite quotient estimate");
    {
        ExactSum r = num;
        r.add_scaled(den, -q);
        q += r.approx() / d0;
    }
    NSYNC_CHECK_NUM(std::isfinite(q), "exact_div: non-finite refined quotient");

    // q is now within an ulp of the true quotient. Scan q +/- 2 ulps and keep
    // the candidate whose exact residual |num - c*den| is smallest; ties go to
    // the smallest candidate because the scan runs in ascending order.
    double lo = std::nextafter(std::nextafter(q, -INFINITY), -INFINITY);
    double best = 0.0;
    ExactSum best_res;
    bool have_best = false;
    double c = lo;
    for (int k = 0; k < 5; ++k) {
        ExactSum r = num;
        r.add_scaled(den, -c);
        if (!have_best || r.abs_less(best_res)) {
            best = c;
            best_res = r;
            have_best = true;
        }
        c = std::nextafter(c, INFINITY);
    }
    return best;
}

}  // namespace nsync
