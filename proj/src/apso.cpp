/*
 * Copyright (c) The Cellfuse Project Contributors
 *
 * SPDX-License-Identifier: Apache-2.0
 */

#include "cellfuse/apso.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "cellfuse/errors.hpp"
#include "cellfuse/parallel.hpp"

namespace cellfuse {

void ApsoConfig::validate() const {
    if (n_particles < 2) throw ValidationError("apso: need at least 2 particles");
    if (bounds.empty()) throw ValidationError("apso: bounds must not be empty");
    for (const auto& b : bounds) {
        if (!(b[0] < b[1])) throw ValidationError("apso: each bound needs lo < hi");
    }
    if (!(w_min <= w_max)) throw ValidationError("apso: w_min must not exceed w_max");
    if (!(v_max_frac > 0.0)) throw ValidationError("apso: v_max_frac must be positive");
    if (max_iters < 0) throw ValidationError("apso: max_iters must be non-negative");
    if (threads < 1) throw ValidationError("apso: threads must be at least 1");
}

double inertia_weight(double f, double f_min, double f_avg, double w_min, double w_max) {
    if (f > f_avg) return w_max;
    const double spread = f_avg - f_min;
    if (spread <= 0.0) return w_max;
    return w_min + (w_max - w_min) * (f - f_min) / spread;
}

namespace {

void evaluate_all(SwarmState& swarm, const Objective& objective, const ApsoConfig& config) {
    const std::size_t n = swarm.position.size();
    parallel_for_chunks(n, config.threads, [&](std::size_t, std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            const double f = objective(std::span<const double>(swarm.position[i]));
            if (!std::isfinite(f)) {
                throw ObjectiveFailure("apso: objective returned a non-finite value", i);
            }
            swarm.fitness[i] = f;
        }
    });
}

void reduce_bests(SwarmState& swarm) {
    const std::size_t n = swarm.position.size();
    for (std::size_t i = 0; i < n; ++i) {
        if (swarm.fitness[i] < swarm.p_best_fitness[i]) {
            swarm.p_best_fitness[i] = swarm.fitness[i];
            swarm.p_best[i] = swarm.position[i];
        }
        if (swarm.p_best_fitness[i] < swarm.group_best_fitness) {
            swarm.group_best_fitness = swarm.p_best_fitness[i];
            swarm.group_best = swarm.p_best[i];
        }
    }
}

}  // namespace

SwarmState init_swarm(const Objective& objective, const ApsoConfig& config, Rng& rng) {
    config.validate();
    const std::size_t n = static_cast<std::size_t>(config.n_particles);
    const std::size_t d = config.dims();

    SwarmState swarm;
    swarm.position.assign(n, std::vector<double>(d, 0.0));
    swarm.velocity.assign(n, std::vector<double>(d, 0.0));
    swarm.fitness.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < d; ++k) {
            swarm.position[i][k] = rng.uniform(config.bounds[k][0], config.bounds[k][1]);
        }
    }
    evaluate_all(swarm, objective, config);

    swarm.p_best = swarm.position;
    swarm.p_best_fitness = swarm.fitness;
    swarm.group_best_fitness = std::numeric_limits<double>::infinity();
    reduce_bests(swarm);
    return swarm;
}

void step_swarm(SwarmState& swarm, const Objective& objective, const ApsoConfig& config, Rng& rng) {
    const std::size_t n = swarm.position.size();
    const std::size_t d = config.dims();

    const double f_min = *std::min_element(swarm.fitness.begin(), swarm.fitness.end());
    const double f_avg =
        std::accumulate(swarm.fitness.begin(), swarm.fitness.end(), 0.0) / static_cast<double>(n);

    for (std::size_t i = 0; i < n; ++i) {
        const double w = inertia_weight(swarm.fitness[i], f_min, f_avg, config.w_min, config.w_max);
        auto& x = swarm.position[i];
        auto& v = swarm.velocity[i];
        for (std::size_t k = 0; k < d; ++k) {
            const double r1 = rng.uniform01();
            const double r2 = rng.uniform01();
            const double range = config.bounds[k][1] - config.bounds[k][0];
            const double v_cap = config.v_max_frac * range;
            double vk = w * v[k] + config.c1 * r1 * (swarm.p_best[i][k] - x[k]) +
                        config.c2 * r2 * (swarm.group_best[k] - x[k]);
            vk = std::clamp(vk, -v_cap, v_cap);
            double xk = x[k] + vk;
            if (xk < config.bounds[k][0]) {
                xk = config.bounds[k][0];
                vk = 0.0;
            } else if (xk > config.bounds[k][1]) {
                xk = config.bounds[k][1];
                vk = 0.0;
            }
            v[k] = vk;
            x[k] = xk;
        }
    }

    evaluate_all(swarm, objective, config);
    reduce_bests(swarm);
    ++swarm.iteration;
}

ApsoResult optimize(const Objective& objective, const ApsoConfig& config) {
    config.validate();
    Rng rng(config.seed);
    SwarmState swarm = init_swarm(objective, config, rng);

    ApsoResult result;
    result.history.reserve(static_cast<std::size_t>(config.max_iters));
    for (int it = 0; it < config.max_iters; ++it) {
        step_swarm(swarm, objective, config, rng);
        result.history.push_back(swarm.group_best_fitness);
    }
    result.best_position = swarm.group_best;
    result.best_fitness = swarm.group_best_fitness;
    return result;
}

}  // namespace cellfuse
