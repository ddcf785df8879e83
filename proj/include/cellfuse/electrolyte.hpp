/*
 * Copyright (c) The Cellfuse Project Contributors
 *
 * SPDX-License-Identifier: Apache-2.0
 */

#ifndef CELLFUSE_ELECTROLYTE_HPP
#define CELLFUSE_ELECTROLYTE_HPP

#include <array>

#include "cellfuse/cell_parameters.hpp"

namespace cellfuse {

/// Two-well electrolyte concentration model: one lumped concentration
/// deviation per electrode region, exchanging lithium through an effective
/// trans-separator conductance with Bruggeman (power 1.5) tortuosity
/// correction. The total salt inventory weighted by region pore volume is a
/// conserved quantity of both the continuous model and this exact
/// discretization.
class ElectrolyteModel {
public:
    ElectrolyteModel(const CellParameters& p, double dt);

    /// Advances the deviation pair (neg, pos) one step under constant applied
    /// current (charge positive).
    void advance(std::array<double, 2>& x, double current) const;

    /// Pore-volume-weighted total deviation; zero up to rounding.
    double inventory(const std::array<double, 2>& x) const;

    /// Steady-state deviations at the given current, for tests and sizing.
    std::array<double, 2> steady_state(double current) const;

    double conductance() const { return cond_; }

private:
    double cap_neg_;   // pore volume per plate area, eps_e * L
    double cap_pos_;
    double cond_;      // effective exchange conductance, m/s
    double lambda_;    // relaxation rate, 1/s
    double decay_;     // (1 - exp(-lambda dt)) / lambda
    double ramp_;      // (lambda dt - 1 + exp(-lambda dt)) / lambda^2
    double dt_;
    double drive_;     // (1 - t_plus) / (F * plate_area)
};

}  // namespace cellfuse

#endif
