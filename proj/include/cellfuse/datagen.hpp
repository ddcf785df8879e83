/*
 * Copyright (c) The Cellfuse Project Contributors
 *
 * SPDX-License-Identifier: Apache-2.0
 */

#ifndef CELLFUSE_DATAGEN_HPP
#define CELLFUSE_DATAGEN_HPP

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "cellfuse/dataset.hpp"
#include "cellfuse/identification.hpp"
#include "cellfuse/simulate.hpp"

namespace cellfuse {

/// Multiplicative aging-parameter perturbations: for each mean, multiplier
/// vectors of seven independent normal draws scale the base set.
struct PerturbationConfig {
    std::array<double, 3> means = {1.0, 0.9, 1.1};
    double stddev = 0.05;
    int draws_per_mean = 30;
    std::uint64_t seed = 0;
    double clamp_lo = 0.5;

    void validate() const;
};

/// Expands one aging set into 3 x draws_per_mean perturbed variants.
/// Draw order: mean-major, draw-minor, parameter-innermost.
std::vector<AgingParameterSet> perturb_parameters(const AgingParameterSet& base,
                                                  const PerturbationConfig& config);

enum class FadeKind { Mild, Moderate, Severe };
FadeKind fade_kind_from_string(const std::string& name);

/// Smooth parametric aging trajectory over n_cycles cycles: active material
/// fractions fall as 1 - a t^b, diffusivities and rate constants as
/// 1 - c t^d, resistance grows as 1 + e t^f (t = cycle fraction), with a
/// seeded jitter below 0.1% per entry. Capacity is re-measured with a
/// reference cycle at every entry; entries are cut off below 50% SOH.
AgingTrajectory synth_fade_trajectory(FadeKind kind, int n_cycles, const CellParameters& base,
                                      std::uint64_t seed);

/// Cuts a charging trace into fixed 1.5 Ah throughput windows and resamples
/// each to 25 points equally spaced in throughput. Windows start at 0 Ah and
/// advance by stride_q; windows that would run past the end are dropped.
std::vector<Segment> segment_trace(const SimTrace& trace, double delta_q = 1.5,
                                   double stride_q = 0.03, std::uint32_t cell_id = 0,
                                   std::uint32_t cycle = 0, std::uint32_t set_id = 0);

/// One corpus entry: the cell to simulate and its identity in segment records.
struct CorpusItem {
    CellParameters params;
    AgingParameterSet aging;
    std::uint32_t cell_id = 0;
    std::uint32_t cycle = 0;
    std::uint32_t set_id = 0;
};

struct CorpusConfig {
    std::uint64_t master_seed = 0;
    double soc0_lo = 0.0;
    double soc0_hi = 0.3;
    double delta_q = 1.5;
    double stride_q = 0.03;
    double dt = 1.0;
    SolidKind solid = SolidKind::Reduced;
    int threads = 1;
    std::size_t max_segments = 0;    // 0 = unlimited
    std::size_t windows_per_set = 0;  // 0 = keep every window of a charge
};

struct CorpusHandle {
    SegmentDataset dataset;
    std::size_t sets_simulated = 0;
    std::size_t sets_skipped = 0;
    std::vector<std::string> skip_log;
};

/// Simulates every item's charging trace from a seeded random initial SOC,
/// labels segments with the item's measured capacity, and concatenates the
/// per-item segments in item order. Deterministic for a fixed master seed
/// regardless of thread count; per-item failures are logged and skipped.
CorpusHandle generate_corpus(const std::vector<CorpusItem>& items, const Protocol& protocol,
                             const CorpusConfig& config);

}  // namespace cellfuse

#endif
