/*
 * Copyright (c) The Cellfuse Project Contributors
 *
 * SPDX-License-Identifier: Apache-2.0
 */

#ifndef CELLFUSE_SIMULATE_HPP
#define CELLFUSE_SIMULATE_HPP

#include <vector>

#include "cellfuse/cell_model.hpp"
#include "cellfuse/protocols.hpp"

namespace cellfuse {

struct SimSample {
    double time_s;
    double current;     // A, charge positive
    double voltage;     // V
    double throughput_ah;  // cumulative charge in
    double soc;
    ModeKind mode;
};

/// Recorded simulation of one protocol run. Sample 0 is the rest state before
/// the first step. final_capacity_ah is the measured dischargeable capacity
/// of the simulated parameter set (its SOH label source).
struct SimTrace {
    std::vector<SimSample> samples;
    double final_capacity_ah = 0.0;

    double duration_s() const { return samples.empty() ? 0.0 : samples.back().time_s; }
    double charged_ah() const { return samples.empty() ? 0.0 : samples.back().throughput_ah; }
};

/// Which capacity the controller's SOC breaks are measured against.
enum class SocBasis { AgedCapacity, NominalCapacity };

struct ProtocolRunOptions {
    SocBasis soc_basis = SocBasis::AgedCapacity;
    /// Voltage tolerance of the implicit CV current solve.
    double cv_tol_v = 1e-6;
};

/// Runs the protocol controller against the model step by step from a rest
/// state at soc0. Every recorded CV sample satisfies the CV setpoint to
/// cv_tol_v because the CV current is solved against the post-step state.
SimTrace simulate_protocol(const CellModel& cell, const Protocol& protocol, double soc0,
                           const ProtocolRunOptions& run = ProtocolRunOptions{});

/// Convenience overload constructing the model from (params, aging).
SimTrace simulate_protocol(const CellParameters& params, const AgingParameterSet& aging,
                           const Protocol& protocol, double soc0,
                           const SimOptions& opts = SimOptions{},
                           const ProtocolRunOptions& run = ProtocolRunOptions{});

/// Measured dischargeable capacity: full 1C CC-CV charge (4.2 V, 0.16 A
/// cutoff) followed by a 1C discharge to 2.5 V; the discharged Ah is the
/// capacity. Cached on the model.
double measure_capacity_ah(const CellModel& cell);

/// Continues a protocol from an existing state (used for back-to-back
/// programs such as charge-then-discharge cycles).
SimTrace continue_protocol(const CellModel& cell, const Protocol& protocol, CellState& state,
                           const ProtocolRunOptions& run = ProtocolRunOptions{});

}  // namespace cellfuse

#endif
