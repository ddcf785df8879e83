/*
 * Copyright (c) The Cellfuse Project Contributors
 *
 * SPDX-License-Identifier: Apache-2.0
 */

#include "cellfuse/cell_model.hpp"

#include <cmath>
#include <string>

#include "cellfuse/constants.hpp"
#include "cellfuse/errors.hpp"

namespace cellfuse {

namespace {

std::unique_ptr<SolidModel> make_solid(SolidKind kind, double radius, double d, double dt,
                                       int nodes) {
    if (kind == SolidKind::Fdm) return std::make_unique<FdmSolid>(radius, d, dt, nodes);
    return std::make_unique<PadeSolid>(radius, d, dt);
}

}  // namespace

CellModel::CellModel(CellParameters params, SimOptions opts)
    : params_(std::move(params)), opts_(opts), elyte_(params_, opts.dt) {
    params_.validate();
    if (!(opts_.dt > 0.0) || !std::isfinite(opts_.dt)) {
        throw ValidationError("cell model: dt must be positive");
    }
    solid_neg_ = make_solid(opts_.solid, params_.particle_radius_neg, params_.d_s_neg, opts_.dt,
                            opts_.fdm_nodes);
    solid_pos_ = make_solid(opts_.solid, params_.particle_radius_pos, params_.d_s_pos, opts_.dt,
                            opts_.fdm_nodes);

    // Molar surface influx per ampere: the particle surface area per plate
    // area is 3 eps_s L / R, so j = I R / (3 F eps_s A L). Charging pushes
    // lithium into the negative particles and out of the positive ones.
    flux_coef_neg_ = params_.particle_radius_neg /
                     (3.0 * kFaraday * params_.eps_s_neg * params_.plate_area * params_.thickness_neg);
    flux_coef_pos_ = -params_.particle_radius_pos /
                     (3.0 * kFaraday * params_.eps_s_pos * params_.plate_area * params_.thickness_pos);
    dtheta_coef_neg_ = 3.0 * flux_coef_neg_ / (params_.particle_radius_neg * params_.c_max_neg);
    dtheta_coef_pos_ = 3.0 * flux_coef_pos_ / (params_.particle_radius_pos * params_.c_max_pos);

    thermal_ = 2.0 * kGasConstant * params_.temperature / kFaraday;
    conc_term_ = thermal_ * (1.0 - params_.t_plus);

    // Series electrolyte ohmic path with Bruggeman tortuosity, averaged over
    // each electrode (factor 1/2) plus the full separator.
    auto leg = [&](double thickness, double eps) {
        return thickness / (params_.kappa_e * std::pow(eps, 1.5));
    };
    r_elyte_ = (0.5 * leg(params_.thickness_neg, params_.eps_e_neg) +
                leg(params_.thickness_sep, params_.eps_e_sep) +
                0.5 * leg(params_.thickness_pos, params_.eps_e_pos)) /
               params_.plate_area;

    j0_coef_neg_ = kFaraday * params_.k_neg;
    j0_coef_pos_ = kFaraday * params_.k_pos;
    max_current_ = 4.0 * kNominalCapacityAh;
}

CellState CellModel::init_state(double soc0) const {
    if (!(soc0 >= 0.0 && soc0 <= 1.0)) {
        throw ValidationError("init_state: soc must lie in [0, 1], got " + std::to_string(soc0));
    }
    CellState s;
    s.theta_bulk_neg = params_.theta_at_soc(Side::Neg, soc0);
    s.theta_bulk_pos = params_.theta_at_soc(Side::Pos, soc0);
    s.solid_neg.resize(solid_neg_->state_size());
    s.solid_pos.resize(solid_pos_->state_size());
    solid_neg_->init(s.solid_neg, s.theta_bulk_neg * params_.c_max_neg);
    solid_pos_->init(s.solid_pos, s.theta_bulk_pos * params_.c_max_pos);
    return s;
}

double CellModel::soc_of(const CellState& s) const {
    return params_.soc_from_theta_neg(s.theta_bulk_neg);
}

double CellModel::ocv_at_soc(double soc) const {
    if (!(soc >= 0.0 && soc <= 1.0)) {
        throw ValidationError("ocv_at_soc: soc must lie in [0, 1], got " + std::to_string(soc));
    }
    return params_.ocp_pos(params_.theta_at_soc(Side::Pos, soc)) -
           params_.ocp_neg(params_.theta_at_soc(Side::Neg, soc));
}

double CellModel::surface_theta(const CellState& s, Side side, double current) const {
    if (side == Side::Neg) {
        double excess = solid_neg_->surface_excess(s.solid_neg, flux_coef_neg_ * current);
        return s.theta_bulk_neg + excess / params_.c_max_neg;
    }
    double excess = solid_pos_->surface_excess(s.solid_pos, flux_coef_pos_ * current);
    return s.theta_bulk_pos + excess / params_.c_max_pos;
}

std::array<double, 2> CellModel::electrolyte_conc(const CellState& s) const {
    return {params_.c_e_init + s.elyte[0], params_.c_e_init + s.elyte[1]};
}

double CellModel::terminal_voltage(const CellState& s, double current) const {
    double th_n = surface_theta(s, Side::Neg, current);
    double th_p = surface_theta(s, Side::Pos, current);
    if (!(th_n > 0.0 && th_n < 1.0)) {
        throw SurfaceSaturation("negative electrode surface stoichiometry left (0, 1): " +
                                    std::to_string(th_n),
                                s.time_s);
    }
    if (!(th_p > 0.0 && th_p < 1.0)) {
        throw SurfaceSaturation("positive electrode surface stoichiometry left (0, 1): " +
                                    std::to_string(th_p),
                                s.time_s);
    }
    auto ce = electrolyte_conc(s);
    if (!(ce[0] > 0.0 && ce[1] > 0.0)) {
        throw NonFinite("electrolyte concentration collapsed to zero");
    }

    // Exchange current densities from surface and electrolyte concentrations.
    double cs_n = th_n * params_.c_max_neg;
    double cs_p = th_p * params_.c_max_pos;
    double j0_n = j0_coef_neg_ * std::sqrt(ce[0] * cs_n * (params_.c_max_neg - cs_n));
    double j0_p = j0_coef_pos_ * std::sqrt(ce[1] * cs_p * (params_.c_max_pos - cs_p));

    // Local current density out of the particle surface, A/m^2.
    double i_n = -kFaraday * flux_coef_neg_ * current;
    double i_p = -kFaraday * flux_coef_pos_ * current;
    double eta_n = thermal_ * std::asinh(i_n / (2.0 * j0_n));
    double eta_p = thermal_ * std::asinh(i_p / (2.0 * j0_p));

    double dphi = conc_term_ * std::log(ce[1] / ce[0]);

    double v = params_.ocp_pos(th_p) - params_.ocp_neg(th_n) + eta_p - eta_n + dphi +
               current * (params_.r0 + r_elyte_);
    if (!std::isfinite(v)) {
        throw NonFinite("terminal voltage is not finite at t=" + std::to_string(s.time_s));
    }
    return v;
}

double CellModel::step(CellState& s, double current) const {
    if (!std::isfinite(current) || std::abs(current) > max_current_) {
        throw ValidationError("step: current outside the +-" + std::to_string(max_current_) +
                              " A guard: " + std::to_string(current));
    }
    solid_neg_->advance(s.solid_neg, flux_coef_neg_ * current);
    solid_pos_->advance(s.solid_pos, flux_coef_pos_ * current);
    s.theta_bulk_neg += dtheta_coef_neg_ * current * opts_.dt;
    s.theta_bulk_pos += dtheta_coef_pos_ * current * opts_.dt;
    elyte_.advance(s.elyte, current);
    s.time_s += opts_.dt;
    return terminal_voltage(s, current);
}

double CellModel::solve_cv_current(const CellState& s, double v_target) const {
    // V(I) is strictly increasing, so bisect. The bracket is the current
    // guard; a target outside [V(-Imax), V(Imax)] has no admissible root.
    double lo = -max_current_;
    double hi = max_current_;
    double v_lo = terminal_voltage(s, lo);
    double v_hi = terminal_voltage(s, hi);
    if (v_lo > v_target || v_hi < v_target) {
        throw NoRoot("solve_cv_current: " + std::to_string(v_target) +
                     " V unreachable within the current guard at t=" + std::to_string(s.time_s));
    }
    for (int it = 0; it < 100; ++it) {
        double mid = 0.5 * (lo + hi);
        if (terminal_voltage(s, mid) < v_target) {
            lo = mid;
        } else {
            hi = mid;
        }
        if (hi - lo < 1e-12) break;
    }
    return 0.5 * (lo + hi);
}

}  // namespace cellfuse
