#include "nsync/adam.hpp"

#include <cmath>

namespace nsync {

AdamState AdamState::init(const GradLayout& layout, const AdamConfig& cfg) {
    AdamState st;
    st.cfg = cfg;
    st.layout = layout;
    st.m.assign(layout.total, 0.0);
    st.v.assign(layout.total, 0.0);
    return st;
}

void adam_step(ParamSet& params, const GradVector& grad, AdamState& state) {
    GradLayout current = params.trainable_layout();
    NSYNC_CHECK(state.layout == current, "adam state layout [", state.layout.describe(),
                "] does not match params [", current.describe(), "]");
    NSYNC_CHECK(grad.layout == current, "gradient layout [", grad.layout.describe(),
                "] does not match params [", current.describe(), "]");
    NSYNC_CHECK_NUM(grad.all_finite(), "non-finite gradient passed to adam_step");

    const AdamConfig& c = state.cfg;
    state.step += 1;
    double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
    double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));

    GradVector flat = params.flatten_trainable();
    for (size_t i = 0; i < flat.values.size(); ++i) {
        double g = grad.values[i];
        state.m[i] = c.beta1 * state.m[i] + (1.0 - c.beta1) * g;
        state.v[i] = c.beta2 * state.v[i] + (1.0 - c.beta2) * g * g;
        double mhat = state.m[i] / bc1;
        double vhat = state.v[i] / bc2;
        flat.values[i] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
    }
    params.assign_trainable(flat);
}

}  // namespace nsync
