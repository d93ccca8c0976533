#include "nsync/finite_diff.hpp"

#include <algorithm>
#include <cmath>

namespace nsync {

GradVector finite_difference_grad(const std::function<double(const ParamSet&)>& f,
                                  const ParamSet& params, double h) {
    NSYNC_CHECK(h > 0.0, "finite difference step must be positive, got ", h);
    GradVector out = GradVector::zeros(params.trainable_layout());
    ParamSet work = params;
    for (const auto& e : out.layout.entries) {
        Tensor& t = work.at(e.name);
        for (size_t i = 0; i < t.data.size(); ++i) {
            double saved = t.data[i];
            t.data[i] = saved + h;
            double up = f(work);
            t.data[i] = saved - h;
            double down = f(work);
            t.data[i] = saved;
            NSYNC_CHECK_NUM(std::isfinite(up) && std::isfinite(down),
                            "non-finite objective while differencing ", e.name);
            out.values[e.offset + i] = (up - down) / (2.0 * h);
        }
    }
    return out;
}

double grad_rel_error(const GradVector& a, const GradVector& b, double floor) {
    NSYNC_CHECK(a.layout == b.layout, "grad layout mismatch in grad_rel_error");
    double diff = 0.0;
    for (size_t i = 0; i < a.values.size(); ++i) {
        double d = a.values[i] - b.values[i];
        diff += d * d;
    }
    return std::sqrt(diff) / std::max({a.norm(), b.norm(), floor});
}

}  // namespace nsync
