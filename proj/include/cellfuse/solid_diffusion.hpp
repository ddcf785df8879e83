/*
 * Copyright (c) The Cellfuse Project Contributors
 *
 * SPDX-License-Identifier: Apache-2.0
 */

#ifndef CELLFUSE_SOLID_DIFFUSION_HPP
#define CELLFUSE_SOLID_DIFFUSION_HPP

#include <cstddef>
#include <span>
#include <vector>

namespace cellfuse {

/// Spherical solid-phase diffusion in a representative particle, reduced to
/// the map from surface molar influx (mol m^-2 s^-1) to surface concentration
/// excess over the particle volume average (mol m^-3). The volume average
/// itself is integrated exactly by coulomb counting outside this class.
class SolidModel {
public:
    virtual ~SolidModel() = default;
    virtual std::size_t state_size() const = 0;
    /// Fills x with the rest state for a uniform concentration `conc`.
    virtual void init(std::span<double> x, double conc) const = 0;
    /// Advances one fixed time step with the influx held constant (ZOH).
    virtual void advance(std::span<double> x, double influx) const = 0;
    /// Surface concentration minus volume-average concentration.
    virtual double surface_excess(std::span<const double> x, double influx) const = 0;
};

/// Low-order rational approximation of the spherical diffusion impedance,
/// realized as three decoupled first-order modes and discretized exactly for
/// piecewise-constant influx. Steady-flux surface excess is j*R/(5*D), matching
/// the exact diffusion profile; transients are accurate to about 1% of the
/// surface value across charge-rate frequencies.
class PadeSolid final : public SolidModel {
public:
    PadeSolid(double radius, double diffusivity, double dt);

    std::size_t state_size() const override { return 3; }
    void init(std::span<double> x, double conc) const override;
    void advance(std::span<double> x, double influx) const override;
    double surface_excess(std::span<const double> x, double influx) const override;

private:
    double alpha_[3];  // per-mode decay over one step
    double beta_[3];   // per-mode ZOH input weight
    double gain_[3];   // per-mode output weight, 1/m
};

/// Control-volume finite-difference reference model on a uniform radial grid,
/// Crank-Nicolson in time. Exact mass conservation; the surface value is
/// half-cell extrapolated from the outermost node using the imposed gradient.
class FdmSolid final : public SolidModel {
public:
    FdmSolid(double radius, double diffusivity, double dt, int nodes = 50);

    std::size_t state_size() const override { return static_cast<std::size_t>(nodes_); }
    void init(std::span<double> x, double conc) const override;
    void advance(std::span<double> x, double influx) const override;
    double surface_excess(std::span<const double> x, double influx) const override;

    /// Volume-weighted mean concentration; equals the coulomb-counted bulk.
    double volume_mean(std::span<const double> x) const;

private:
    int nodes_;
    double h_;           // radial cell width
    double half_grad_;   // h/(2*D), surface extrapolation weight
    double src_;         // dt * R^2 / V_last, influx injection weight
    std::vector<double> weight_;  // normalized cell volumes
    // Tridiagonal (I - dt/2 A): lower band and prefactored Thomas diagonals,
    // plus (I + dt/2 A) bands for the explicit half step.
    std::vector<double> lo_, denom_, cp_;
    std::vector<double> elo_, edg_, eup_;
    mutable std::vector<double> rhs_;
};

}  // namespace cellfuse

#endif
