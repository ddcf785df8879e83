/*
 * Copyright (c) The Cellfuse Project Contributors
 *
 * SPDX-License-Identifier: Apache-2.0
 */

#include "cellfuse/electrolyte.hpp"

#include <cmath>

#include "cellfuse/constants.hpp"

namespace cellfuse {

ElectrolyteModel::ElectrolyteModel(const CellParameters& p, double dt) : dt_(dt) {
    cap_neg_ = p.eps_e_neg * p.thickness_neg;
    cap_pos_ = p.eps_e_pos * p.thickness_pos;
    // Series path half-electrode -> separator -> half-electrode, each leg with
    // Bruggeman-corrected diffusivity D_e * eps^1.5.
    auto leg = [&](double thickness, double eps) {
        return thickness / (p.d_e * std::pow(eps, 1.5));
    };
    cond_ = 1.0 / (0.5 * leg(p.thickness_neg, p.eps_e_neg) + leg(p.thickness_sep, p.eps_e_sep) +
                   0.5 * leg(p.thickness_pos, p.eps_e_pos));
    lambda_ = cond_ * (1.0 / cap_neg_ + 1.0 / cap_pos_);
    double e = std::exp(-lambda_ * dt);
    decay_ = (1.0 - e) / lambda_;
    ramp_ = (lambda_ * dt - 1.0 + e) / (lambda_ * lambda_);
    drive_ = (1.0 - p.t_plus) / (kFaraday * p.plate_area);
}

void ElectrolyteModel::advance(std::array<double, 2>& x, double current) const {
    // x' = A x + b, with A = cond * [[-1, 1], [1, -1]] scaled per well and
    // A^2 = -lambda A, which gives the matrix exponential in closed form:
    //   x+ = x + decay * (A x) + dt * b + ramp * (A b).
    double flow = cond_ * (x[1] - x[0]);  // exchange toward the neg well
    double ax0 = flow / cap_neg_;
    double ax1 = -flow / cap_pos_;
    double b0 = -drive_ * current / cap_neg_;  // charging drains the neg well
    double b1 = drive_ * current / cap_pos_;
    double abflow = cond_ * (b1 - b0);
    x[0] += decay_ * ax0 + dt_ * b0 + ramp_ * abflow / cap_neg_;
    x[1] += decay_ * ax1 + dt_ * b1 - ramp_ * abflow / cap_pos_;
}

double ElectrolyteModel::inventory(const std::array<double, 2>& x) const {
    return cap_neg_ * x[0] + cap_pos_ * x[1];
}

std::array<double, 2> ElectrolyteModel::steady_state(double current) const {
    // A x = -b on the zero-inventory subspace.
    double b0 = -drive_ * current / cap_neg_;
    double diff = -b0 * cap_neg_ * (1.0 / cap_neg_ + 1.0 / cap_pos_) / lambda_;
    // diff = x1 - x0; inventory zero pins the split.
    double x0 = -diff * cap_pos_ / (cap_neg_ + cap_pos_);
    return {x0, x0 + diff};
}

}  // namespace cellfuse
