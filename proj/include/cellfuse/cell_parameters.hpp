/*
 * Copyright (c) The Cellfuse Project Contributors
 *
 * SPDX-License-Identifier: Apache-2.0
 */

#ifndef CELLFUSE_CELL_PARAMETERS_HPP
#define CELLFUSE_CELL_PARAMETERS_HPP

#include <array>
#include <string>

#include "cellfuse/ocp_table.hpp"

namespace cellfuse {

/// Electrode side selector.
enum class Side { Neg, Pos };

/// The seven aging-sensitive parameters. Everything else in CellParameters is
/// treated as fixed cell construction. Array order is the canonical order used
/// by perturbation draws and identification vectors.
struct AgingParameterSet {
    double eps_s_pos;  // active material volume fraction, positive electrode
    double eps_s_neg;
    double d_s_pos;    // solid diffusivity, m^2/s
    double d_s_neg;
    double k_pos;      // reaction rate constant, m^2.5/(mol^0.5 s)
    double k_neg;
    double r0;         // lumped ohmic resistance, ohm

    std::array<double, 7> to_array() const {
        return {eps_s_pos, eps_s_neg, d_s_pos, d_s_neg, k_pos, k_neg, r0};
    }
    static AgingParameterSet from_array(const std::array<double, 7>& a) {
        return {a[0], a[1], a[2], a[3], a[4], a[5], a[6]};
    }
    void validate() const;
};

/// Full parameter set of the reduced-order cell model. Units are SI throughout
/// (m, m^2, m^3/mol scale quantities, S/m, ohm, K).
struct CellParameters {
    // geometry
    double thickness_neg;  // electrode coating thickness, m
    double thickness_sep;
    double thickness_pos;
    double plate_area;     // current collector plate area, m^2
    double particle_radius_neg;  // m
    double particle_radius_pos;

    // volume fractions
    double eps_e_neg;  // electrolyte
    double eps_e_sep;
    double eps_e_pos;
    double eps_s_neg;  // active material
    double eps_s_pos;

    // thermodynamics
    double c_max_neg;  // saturation concentration, mol/m^3
    double c_max_pos;
    double theta0_neg;    // stoichiometry at 0% SOC
    double theta100_neg;  // stoichiometry at 100% SOC
    double theta0_pos;
    double theta100_pos;

    // transport and kinetics
    double d_s_neg;  // solid diffusivity, m^2/s
    double d_s_pos;
    double d_e;      // electrolyte diffusivity, m^2/s
    double k_neg;    // reaction rate constant
    double k_pos;
    double kappa_e;  // electrolyte conductivity, S/m
    double t_plus;   // cation transference number
    double c_e_init; // initial electrolyte concentration, mol/m^3
    double r0;       // lumped ohmic resistance, ohm

    double temperature;  // K

    OcpTable ocp_neg;
    OcpTable ocp_pos;

    /// Loads the scalar fields from a key=value file and the two OCP tables
    /// from CSV paths given in that file (relative paths resolve against the
    /// parameter file's directory).
    static CellParameters load(const std::string& path);
    void save(const std::string& path) const;

    /// Throws ValidationError on non-physical values.
    void validate() const;

    /// Ah moved across the stoichiometry window of one electrode:
    /// eps_s * L * A * c_max * |theta100 - theta0| * F / 3600.
    double window_capacity_ah(Side side) const;

    /// Relative disagreement between the two electrode window capacities.
    double capacity_mismatch() const;

    double theta_at_soc(Side side, double soc) const;
    double soc_from_theta_neg(double theta) const;

    AgingParameterSet aging_view() const {
        return {eps_s_pos, eps_s_neg, d_s_pos, d_s_neg, k_pos, k_neg, r0};
    }
    /// Copy with the seven aging-sensitive fields replaced.
    CellParameters with_aging(const AgingParameterSet& a) const;
};

}  // namespace cellfuse

#endif
