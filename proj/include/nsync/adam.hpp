#pragma once

#include "nsync/param_set.hpp"

namespace nsync {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// First/second moment buffers over one fixed trainable layout. step counts
// completed updates and drives bias correction.
struct AdamState {
    AdamConfig cfg;
    GradLayout layout;
    int64_t step = 0;
    std::vector<double> m;
    std::vector<double> v;

    static AdamState init(const GradLayout& layout, const AdamConfig& cfg);
};

// One bias-corrected Adam update of the trainable parameters. grad and state
// must share the params' trainable layout.
void adam_step(ParamSet& params, const GradVector& grad, AdamState& state);

}  // namespace nsync
