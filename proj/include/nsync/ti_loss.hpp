#pragma once

#include <functional>

#include "nsync/graph.hpp"
#include "nsync/schedule.hpp"

namespace nsync {

// Graph-building noise predictor: consumes the noised latent and timestep,
// returns the prediction node. z_t is passed as a graph node the predictor
// may read through its Graph.
using DenoiseGraphFn = std::function<Var(Graph& g, Var z_t, int t, Var cond)>;

// Denoising objective on one example: noise z0 with (t, eps), predict the
// noise under cond, return mean squared prediction error as a scalar node.
// Rejects a non-finite forward value.
Var ti_loss(Graph& g, const DenoiseGraphFn& denoiser, const Tensor& z0, int t, const Tensor& eps,
            Var cond, const NoiseSchedule& sched);

}  // namespace nsync
