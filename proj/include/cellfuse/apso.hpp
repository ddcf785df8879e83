/*
 * Copyright (c) The Cellfuse Project Contributors
 *
 * SPDX-License-Identifier: Apache-2.0
 */

#ifndef CELLFUSE_APSO_HPP
#define CELLFUSE_APSO_HPP

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "cellfuse/rng.hpp"

namespace cellfuse {

using Objective = std::function<double(std::span<const double>)>;

struct ApsoConfig {
    int n_particles = 100;
    double c1 = 2.0;
    double c2 = 2.0;
    double w_min = 0.4;
    double w_max = 0.9;
    int max_iters = 100;
    std::uint64_t seed = 0;
    std::vector<std::array<double, 2>> bounds;  // [lo, hi] per dimension
    double v_max_frac = 0.2;  // velocity cap as a fraction of each range
    int threads = 1;

    std::size_t dims() const { return bounds.size(); }
    void validate() const;
};

struct SwarmState {
    std::vector<std::vector<double>> position;
    std::vector<std::vector<double>> velocity;
    std::vector<std::vector<double>> p_best;
    std::vector<double> p_best_fitness;
    std::vector<double> fitness;
    std::vector<double> group_best;
    double group_best_fitness = 0.0;
    int iteration = 0;
};

/// Per-particle adaptive inertia weight: particles at the swarm's best
/// fitness explore least (w_min), particles at or above the average explore
/// most (w_max), linear in between. Degenerate f_avg == f_min gives w_max.
double inertia_weight(double f, double f_min, double f_avg, double w_min, double w_max);

/// Uniform random positions inside the bounds, zero velocities, full fitness
/// evaluation. RNG draw order: particle-major, dimension-minor.
SwarmState init_swarm(const Objective& objective, const ApsoConfig& config, Rng& rng);

/// One iteration: velocity/position updates (per-dimension r1, r2, adaptive
/// w, velocity cap, boundary clamp with velocity zeroing), parallel fitness
/// evaluation, then best updates in particle-index order. Group-best fitness
/// never increases.
void step_swarm(SwarmState& swarm, const Objective& objective, const ApsoConfig& config, Rng& rng);

struct ApsoResult {
    std::vector<double> best_position;
    double best_fitness = 0.0;
    std::vector<double> history;  // group-best fitness after each iteration
};

/// Runs max_iters swarm steps from a seeded random initialization.
ApsoResult optimize(const Objective& objective, const ApsoConfig& config);

}  // namespace cellfuse

#endif
