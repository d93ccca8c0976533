#include "nsync/ti_loss.hpp"

#include <cmath>

namespace nsync {

Var ti_loss(Graph& g, const DenoiseGraphFn& denoiser, const Tensor& z0, int t, const Tensor& eps,
            Var cond, const NoiseSchedule& sched) {
    NoisedSample noised = q_sample(z0, t, eps, sched);
    Var zt = g.constant(noised.z_t);
    Var eps_hat = denoiser(g, zt, t, cond);
    NSYNC_CHECK(g.value(eps_hat).same_shape(eps), "noise prediction shape ",
                shape_str(g.value(eps_hat).shape), " does not match target ",
                shape_str(eps.shape));
    NSYNC_CHECK_NUM(g.value(eps_hat).all_finite(), "non-finite noise prediction in loss at t=", t);
    Var target = g.constant(eps);
    Var loss = g.mean(g.square(g.sub(target, eps_hat)));
    NSYNC_CHECK_NUM(std::isfinite(g.scalar_value(loss)), "non-finite loss value at t=", t);
    return loss;
}

}  // namespace nsync
