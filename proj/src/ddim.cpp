#include "nsync/ddim.hpp"

#include <cmath>

#include "nsync/rng.hpp"

namespace nsync {

std::vector<int> ddim_timesteps(int T, int n_steps) {
    NSYNC_CHECK(n_steps >= 1 && n_steps <= T, "n_steps must be in [1, ", T, "], got ", n_steps);
    std::vector<int> ts(static_cast<size_t>(n_steps));
    for (int i = 0; i < n_steps; ++i)
        ts[static_cast<size_t>(i)] =
            static_cast<int>((static_cast<int64_t>(i) * T) / n_steps);
    return ts;
}

Tensor ddim_sample(const EpsFn& eps_fn, const std::vector<int64_t>& shape,
                   const NoiseSchedule& sched, int n_steps, uint64_t seed) {
    std::vector<int> ts = ddim_timesteps(sched.T, n_steps);

    RandomStream rng = derive_stream(seed, "ddim/init");
    Tensor z = Tensor::zeros(shape);
    for (double& v : z.data) v = rng.normal();

    for (size_t k = ts.size(); k-- > 0;) {
        int t = ts[k];
        double abar = sched.alpha_bars[static_cast<size_t>(t)];
        double abar_prev = k > 0 ? sched.alpha_bars[static_cast<size_t>(ts[k - 1])] : 1.0;
        Tensor eps_hat = eps_fn(z, t);
        NSYNC_CHECK(eps_hat.same_shape(z), "noise predictor returned shape ",
                    shape_str(eps_hat.shape), ", expected ", shape_str(z.shape));
        NSYNC_CHECK_NUM(eps_hat.all_finite(), "non-finite noise prediction at t=", t);
        double sa = std::sqrt(abar);
        double sn = std::sqrt(1.0 - abar);
        double sa_p = std::sqrt(abar_prev);
        double sn_p = std::sqrt(1.0 - abar_prev);
        for (size_t i = 0; i < z.data.size(); ++i) {
            double z0_pred = (z.data[i] - sn * eps_hat.data[i]) / sa;
            z.data[i] = sa_p * z0_pred + sn_p * eps_hat.data[i];
        }
    }
    NSYNC_CHECK_NUM(z.all_finite(), "non-finite sample out of the reverse process");
    return z;
}

}  // namespace nsync
