/*
 * Copyright (c) The Cellfuse Project Contributors
 *
 * SPDX-License-Identifier: Apache-2.0
 */

#ifndef CELLFUSE_CELL_MODEL_HPP
#define CELLFUSE_CELL_MODEL_HPP

#include <array>
#include <memory>
#include <optional>
#include <vector>

#include "cellfuse/cell_parameters.hpp"
#include "cellfuse/electrolyte.hpp"
#include "cellfuse/solid_diffusion.hpp"

namespace cellfuse {

/// Solid-phase solver selection. The reduced modal solver is the default for
/// bulk data generation; the finite-difference solver is the high-fidelity
/// reference used for validation and for simulating held-out cells.
enum class SolidKind { Reduced, Fdm };

struct SimOptions {
    double dt = 1.0;  // s
    SolidKind solid = SolidKind::Reduced;
    int fdm_nodes = 50;
};

/// Dynamic state of one cell. Solid vectors belong to the model's solid
/// solver; bulk stoichiometries are integrated by exact coulomb counting.
struct CellState {
    double time_s = 0.0;
    double theta_bulk_neg = 0.0;
    double theta_bulk_pos = 0.0;
    std::vector<double> solid_neg;
    std::vector<double> solid_pos;
    std::array<double, 2> elyte{0.0, 0.0};  // concentration deviations (neg, pos)
};

/// Reduced-order single-particle cell model with electrolyte dynamics.
/// Sign convention: current is positive while charging. Terminal voltage is
///   V = U_pos(surf) - U_neg(surf) + eta_pos - eta_neg + dphi_elyte + I*R_ohm
/// so dV/dI > 0 always, and dV/dR0 = I.
class CellModel {
public:
    explicit CellModel(CellParameters params, SimOptions opts = SimOptions{});
    CellModel(const CellModel&) = delete;
    CellModel& operator=(const CellModel&) = delete;
    CellModel(CellModel&&) = default;
    CellModel& operator=(CellModel&&) = default;

    const CellParameters& params() const { return params_; }
    const SimOptions& options() const { return opts_; }
    double dt() const { return opts_.dt; }
    /// Magnitude guard on applied current (4C of rated capacity).
    double max_current() const { return max_current_; }

    /// Rest state at the given state of charge in [0, 1].
    CellState init_state(double soc0) const;

    /// SOC from the coulomb-counted negative electrode stoichiometry. Can run
    /// slightly outside [0, 1] near the voltage limits; that is meaningful.
    double soc_of(const CellState& s) const;

    /// Equilibrium cell voltage at soc in [0, 1].
    double ocv_at_soc(double soc) const;

    /// Voltage with the given current applied to the given state, without
    /// advancing it. Throws SurfaceSaturation when a particle surface leaves
    /// its physical window and NonFinite when the result is not a number.
    double terminal_voltage(const CellState& s, double current) const;

    /// Advances one time step under constant current; returns the voltage at
    /// the new state.
    double step(CellState& s, double current) const;

    /// Current that holds the terminal voltage at v_target for this state.
    /// Throws NoRoot when no current within the guard can reach v_target.
    double solve_cv_current(const CellState& s, double v_target) const;

    double surface_theta(const CellState& s, Side side, double current) const;
    /// Electrolyte concentrations at the two electrodes (neg, pos).
    std::array<double, 2> electrolyte_conc(const CellState& s) const;
    const ElectrolyteModel& electrolyte() const { return elyte_; }

    /// Measured discharge capacity of this cell (1C discharge after a full
    /// standard charge), lazily computed once and cached.
    double measured_capacity_ah() const;

private:
    friend double measure_capacity_ah(const CellModel&);

    CellParameters params_;
    SimOptions opts_;
    std::unique_ptr<SolidModel> solid_neg_;
    std::unique_ptr<SolidModel> solid_pos_;
    ElectrolyteModel elyte_;
    double flux_coef_neg_;   // influx per ampere at the neg particle surface
    double flux_coef_pos_;   // influx per ampere at the pos surface (charge: negative)
    double dtheta_coef_neg_; // bulk stoichiometry rate per ampere
    double dtheta_coef_pos_;
    double thermal_;         // 2 R T / F
    double conc_term_;       // 2 R T (1 - t+) / F
    double r_elyte_;         // Bruggeman-corrected series electrolyte resistance
    double j0_coef_neg_;     // F * k * sqrt(scaling)
    double j0_coef_pos_;
    double max_current_;
    mutable std::optional<double> capacity_cache_;
};

}  // namespace cellfuse

#endif
