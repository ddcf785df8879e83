/*
 * Copyright (c) The Cellfuse Project Contributors
 *
 * SPDX-License-Identifier: Apache-2.0
 */

#ifndef CELLFUSE_IDENTIFICATION_HPP
#define CELLFUSE_IDENTIFICATION_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "cellfuse/apso.hpp"
#include "cellfuse/cell_parameters.hpp"
#include "cellfuse/simulate.hpp"

namespace cellfuse {

enum class CurveKind { Ocv, CycleVoltage };

/// A voltage curve used as an identification target. x is SOC for OCV curves
/// and cumulative charged Ah for cycle curves; current carries the measured
/// current per sample for cycle curves (empty for OCV).
struct MeasuredCurve {
    std::vector<double> x;
    std::vector<double> voltage;
    std::vector<double> current;
    CurveKind kind = CurveKind::CycleVoltage;
    double rate = 1.0;  // C-rate of the generating program, positive = charge
    int cycle = 0;
    std::string cell_id;

    void validate(std::size_t min_samples = 2) const;
};

/// Extracts the (throughput, voltage, current) curve of a charging trace.
/// Samples whose throughput did not advance are dropped so x is strictly
/// increasing.
MeasuredCurve curve_from_trace(const SimTrace& trace, double rate, int cycle = 0,
                               const std::string& cell_id = "");

/// Text curve file: header `t_s,current_A,voltage_V`, one sample per line.
/// Throughput is integrated from the current column (trapezoid).
MeasuredCurve load_measured_curve(const std::string& path);
void save_curve_file(const SimTrace& trace, const std::string& path);

/// How a candidate parameter set is replayed against a cycle curve.
struct ReplayConfig {
    double v_max = 4.2;
    double i_cutoff = 0.16;  // A
    double soc0 = 0.0;
    double dt = 1.0;
    /// Samples whose measured voltage sits within this band of v_max are
    /// treated as CV samples and compared on current instead of voltage.
    double cv_band_v = 2e-3;
    /// CV current residual weight, volts per ampere.
    double cv_weight_v_per_a = 10e-3;
};

/// Voltage RMSE (mV) of the candidate cell replayed through the curve's
/// CC-CV program and resampled onto the curve's throughput grid. CV-phase
/// samples contribute weighted current residuals. Simulation failures
/// (saturation, invalid parameters) return `penalty_mv` instead of throwing.
double replay_rmse_mv(const MeasuredCurve& curve, const CellParameters& params,
                      const ReplayConfig& config, double penalty_mv = 1e4);

struct StoichConfig {
    int n_particles = 100;
    int max_iters = 300;
    std::uint64_t seed = 42;
    int threads = 1;
};

struct StoichiometryFit {
    double theta_p_0 = 0.0;    // positive stoichiometry at 0% SOC
    double theta_p_100 = 0.0;
    double theta_n_0 = 0.0;
    double theta_n_100 = 0.0;
    double rmse_mv = 0.0;
    /// Negative-over-positive window capacity ratio when cell construction
    /// context is supplied; NaN otherwise. 1.0 means both electrodes account
    /// for the same cyclable charge.
    double window_ratio = 0.0;
};

/// Fits the four stoichiometry boundaries to an open-circuit voltage curve
/// (x = SOC). Ordering violations are penalized, not clamped.
StoichiometryFit fit_stoichiometry(const MeasuredCurve& ocv_curve, const OcpTable& ocp_p,
                                   const OcpTable& ocp_n, const StoichConfig& config = {},
                                   const CellParameters* context = nullptr);

struct IdentifyConfig {
    ApsoConfig apso;       // bounds are filled in by the identification calls
    ReplayConfig replay;
    double linear_frac = 0.3;  // half-width of linear search dims, fraction of guess
    double log_span = 0.5;     // half-width of log10 search dims, decades
};

IdentifyConfig default_identify_config();

struct PristineFit {
    CellParameters params;
    std::vector<double> per_curve_rmse_mv;
    double combined_rmse_mv = 0.0;
    std::vector<double> history;  // swarm best fitness (V) per iteration
};

/// Identifies the nine cell parameters that are not directly measurable
/// (active material fractions, saturation concentrations, solid
/// diffusivities, rate constants, ohmic resistance) against two or more
/// constant-current charge curves at distinct rates. Remaining fields of
/// `fixed` stay untouched and its values seed the search box centers.
PristineFit identify_pristine(const std::vector<MeasuredCurve>& curves,
                              const CellParameters& fixed, const IdentifyConfig& config);

struct AgingFit {
    AgingParameterSet aging;
    double rmse_mv = 0.0;
    std::vector<double> history;
};

/// Identifies the seven aging parameters of one cycle's charge curve. The
/// search box is warm_start scaled by [0.5, 1.5] per dimension, so chained
/// per-cycle runs stay local to the previous cycle's result.
AgingFit identify_aging(const MeasuredCurve& cycle_curve, const CellParameters& base,
                        const AgingParameterSet& warm_start, const IdentifyConfig& config);

struct AgingTrajectoryEntry {
    int cycle = 0;
    AgingParameterSet aging{};
    double capacity_ah = 0.0;
    double soh = 0.0;  // capacity / nominal capacity
};

/// Per-cycle aging parameter evolution of one cell across its life.
struct AgingTrajectory {
    std::string cell_id;
    std::vector<AgingTrajectoryEntry> entries;

    void validate() const;
};

/// Delimiter-separated trajectory table, one record per cycle: cycle, the
/// seven aging parameters, capacity, soh.
void save_trajectory(const AgingTrajectory& trajectory, const std::string& path);
AgingTrajectory load_trajectory(const std::string& path);

}  // namespace cellfuse

#endif
