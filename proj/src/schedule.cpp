#include "nsync/schedule.hpp"

#include <cmath>

namespace nsync {

NoiseSchedule make_linear_schedule(int T, double beta_min, double beta_max) {
    NSYNC_CHECK(T >= 1, "schedule needs T >= 1, got ", T);
    NSYNC_CHECK(0.0 < beta_min && beta_min <= beta_max && beta_max < 1.0,
                "need 0 < beta_min <= beta_max < 1, got [", beta_min, ", ", beta_max, "]");
    NoiseSchedule s;
    s.T = T;
    s.betas.resize(static_cast<size_t>(T));
    s.alphas.resize(static_cast<size_t>(T));
    s.alpha_bars.resize(static_cast<size_t>(T));
    double abar = 1.0;
    for (int t = 0; t < T; ++t) {
        double frac = T == 1 ? 0.0 : static_cast<double>(t) / static_cast<double>(T - 1);
        double beta = beta_min + (beta_max - beta_min) * frac;
        s.betas[static_cast<size_t>(t)] = beta;
        s.alphas[static_cast<size_t>(t)] = 1.0 - beta;
        abar *= 1.0 - beta;
        s.alpha_bars[static_cast<size_t>(t)] = abar;
    }
    return s;
}

NoisedSample q_sample(const Tensor& z0, int t, const Tensor& eps, const NoiseSchedule& sched) {
    NSYNC_CHECK(t >= 0 && t < sched.T, "timestep ", t, " outside schedule range [0, ", sched.T,
                ")");
    NSYNC_CHECK(z0.same_shape(eps), "q_sample: z0 shape ", shape_str(z0.shape),
                " does not match eps shape ", shape_str(eps.shape));
    double abar = sched.alpha_bars[static_cast<size_t>(t)];
    double cs = std::sqrt(abar);
    double cn = std::sqrt(1.0 - abar);
    NoisedSample out;
    out.t = t;
    out.eps = eps;
    out.z_t = Tensor::zeros(z0.shape);
    for (size_t i = 0; i < z0.data.size(); ++i) out.z_t.data[i] = cs * z0.data[i] + cn * eps.data[i];
    return out;
}

}  // namespace nsync
