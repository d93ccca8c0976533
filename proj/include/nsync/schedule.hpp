#pragma once

#include <vector>

#include "nsync/tensor.hpp"

namespace nsync {

// Variance schedule of a T-step forward noising process. alpha_bars is the
// cumulative product of (1 - beta_t) and decreases strictly in t.
struct NoiseSchedule {
    int T = 0;
    std::vector<double> betas;
    std::vector<double> alphas;
    std::vector<double> alpha_bars;
};

// Betas linearly spaced on [beta_min, beta_max]. Stands in for whichever
// schedule a large pretrained model would carry; run manifests record that.
NoiseSchedule make_linear_schedule(int T, double beta_min, double beta_max);

struct NoisedSample {
    Tensor z_t;
    int t = 0;
    Tensor eps;
};

// z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps. Keeps unit variance when z0
// and eps are unit-variance draws.
NoisedSample q_sample(const Tensor& z0, int t, const Tensor& eps, const NoiseSchedule& sched);

inline constexpr int kDefaultT = 200;
inline constexpr double kDefaultBetaMin = 1e-4;
inline constexpr double kDefaultBetaMax = 0.02;

inline NoiseSchedule default_schedule() {
    return make_linear_schedule(kDefaultT, kDefaultBetaMin, kDefaultBetaMax);
}

}  // namespace nsync
