/*
 * Copyright (c) The Cellfuse Project Contributors
 *
 * SPDX-License-Identifier: Apache-2.0
 */

#include "cellfuse/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cellfuse/constants.hpp"
#include "cellfuse/errors.hpp"

namespace cellfuse {

namespace {

/// Current that lands the *post-step* voltage on v_target. Classic
/// instantaneous CV regulation solves against the frozen state and then drifts
/// over the step; solving through the step map keeps every recorded CV sample
/// on the setpoint. V(step(I)) is strictly increasing in I.
double implicit_cv_current(const CellModel& cell, const CellState& state, double v_target,
                           double hi_guess, double tol_v) {
    auto eval = [&](double i) {
        CellState probe = state;
        return cell.step(probe, i);
    };
    double hi = std::clamp(hi_guess, 1e-3, cell.max_current());
    double lo = 0.0;
    if (eval(lo) >= v_target) return 0.0;  // relaxation alone overshoots; hold zero
    double v_hi = eval(hi);
    while (v_hi < v_target) {
        if (hi >= cell.max_current()) {
            throw NoRoot("cv regulation: " + std::to_string(v_target) +
                         " V unreachable within the current guard");
        }
        hi = std::min(2.0 * hi, cell.max_current());
        v_hi = eval(hi);
    }
    for (int it = 0; it < 60; ++it) {
        double mid = 0.5 * (lo + hi);
        double v = eval(mid);
        if (std::abs(v - v_target) <= tol_v) return mid;
        if (v < v_target) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    return 0.5 * (lo + hi);
}

struct RunResult {
    std::vector<SimSample> samples;
};

/// Core loop shared by all entry points. Mutates `state`; soc_scale maps the
/// model's window SOC onto the basis the controller's breaks reference.
RunResult run_program(const CellModel& cell, const Protocol& protocol, CellState& state,
                      double soc_scale, double cv_tol_v) {
    Controller ctl(protocol);
    RunResult rr;
    double throughput = 0.0;
    double voltage = cell.terminal_voltage(state, 0.0);
    rr.samples.push_back(
        {state.time_s, 0.0, voltage, throughput, cell.soc_of(state), ModeKind::Rest});

    for (;;) {
        const SimSample& last = rr.samples.back();
        Observation obs;
        obs.soc = last.soc * soc_scale;
        obs.voltage = last.voltage;
        obs.current = last.current;
        obs.time_s = state.time_s;
        ControlMode mode = ctl.next(obs);
        if (mode.kind == ModeKind::Done) break;

        double current = 0.0;
        if (mode.kind == ModeKind::CC) {
            current = mode.value;
        } else if (mode.kind == ModeKind::CV) {
            double warm = last.current > 0.0 ? last.current : kNominalCapacityAh;
            current = implicit_cv_current(cell, state, mode.value, warm, cv_tol_v);
        }
        double v = cell.step(state, current);
        if (v < 2.0 || v > 4.3) {
            throw StageFailure("simulate: voltage " + std::to_string(v) +
                               " left the [2.0, 4.3] sanity band at t=" +
                               std::to_string(state.time_s));
        }
        throughput += std::max(current, 0.0) * cell.dt() / kSecondsPerHour;
        rr.samples.push_back({state.time_s, current, v, throughput, cell.soc_of(state), mode.kind});
    }
    return rr;
}

double soc_scale_for(const CellModel& cell, const Protocol& protocol, SocBasis basis) {
    bool has_soc_breaks = false;
    for (const Stage& s : protocol.stages) {
        if (s.end == StageEnd::SocReaches) has_soc_breaks = true;
    }
    if (!has_soc_breaks) return 1.0;
    double window = cell.params().window_capacity_ah(Side::Neg);
    double ref = basis == SocBasis::AgedCapacity ? measure_capacity_ah(cell) : kNominalCapacityAh;
    return window / ref;
}

}  // namespace

double measure_capacity_ah(const CellModel& cell) {
    if (cell.capacity_cache_.has_value()) return *cell.capacity_cache_;
    // Reference cycle: 1C CC-CV charge to full, then 1C discharge to the 2.5 V
    // floor. The discharged Ah is the measured capacity.
    Protocol charge = make_cccv(1.0, 4.2, 0.16);
    Protocol discharge = make_discharge(1.0, 2.5);
    CellState state = cell.init_state(0.2);
    run_program(cell, charge, state, 1.0, 1e-6);
    RunResult down = run_program(cell, discharge, state, 1.0, 1e-6);
    double ah = 0.0;
    for (const SimSample& s : down.samples) {
        ah += std::max(-s.current, 0.0) * cell.dt() / kSecondsPerHour;
    }
    cell.capacity_cache_ = ah;
    return ah;
}

double CellModel::measured_capacity_ah() const { return measure_capacity_ah(*this); }

SimTrace simulate_protocol(const CellModel& cell, const Protocol& protocol, double soc0,
                           const ProtocolRunOptions& run) {
    protocol.validate();
    double scale = soc_scale_for(cell, protocol, run.soc_basis);
    CellState state = cell.init_state(soc0);
    RunResult rr = run_program(cell, protocol, state, scale, run.cv_tol_v);
    SimTrace trace;
    trace.samples = std::move(rr.samples);
    trace.final_capacity_ah = measure_capacity_ah(cell);
    return trace;
}

SimTrace simulate_protocol(const CellParameters& params, const AgingParameterSet& aging,
                           const Protocol& protocol, double soc0, const SimOptions& opts,
                           const ProtocolRunOptions& run) {
    CellModel cell(params.with_aging(aging), opts);
    return simulate_protocol(cell, protocol, soc0, run);
}

SimTrace continue_protocol(const CellModel& cell, const Protocol& protocol, CellState& state,
                           const ProtocolRunOptions& run) {
    protocol.validate();
    double scale = soc_scale_for(cell, protocol, run.soc_basis);
    RunResult rr = run_program(cell, protocol, state, scale, run.cv_tol_v);
    SimTrace trace;
    trace.samples = std::move(rr.samples);
    trace.final_capacity_ah = measure_capacity_ah(cell);
    return trace;
}

}  // namespace cellfuse
