#pragma once

#include <functional>

#include "nsync/schedule.hpp"
#include "nsync/tensor.hpp"

namespace nsync {

// Noise predictor evaluated without gradient tracking.
using EpsFn = std::function<Tensor(const Tensor& z_t, int t)>;

// Evenly strided ascending subsequence of {0, ..., T-1} of length n_steps;
// n_steps == T visits every timestep.
std::vector<int> ddim_timesteps(int T, int n_steps);

inline constexpr int kDefaultDdimSteps = 50;

// Deterministic sampler (no per-step noise injection): starting from a seeded
// standard-normal latent, walks the strided timesteps in reverse, each step
// reconstructing the data estimate from the predicted noise and moving it to
// the previous retained timestep. Same inputs give bit-identical output.
Tensor ddim_sample(const EpsFn& eps_fn, const std::vector<int64_t>& shape,
                   const NoiseSchedule& sched, int n_steps, uint64_t seed);

}  // namespace nsync
