/*
 * Copyright (c) The Cellfuse Project Contributors
 *
 * SPDX-License-Identifier: Apache-2.0
 */

#include "cellfuse/cell_parameters.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "cellfuse/constants.hpp"
#include "cellfuse/errors.hpp"
#include "cellfuse/kvfile.hpp"

namespace cellfuse {

namespace {

void require(bool ok, const std::string& what) {
    if (!ok) throw ValidationError("cell parameters: " + what);
}

void require_pos(double v, const char* name) {
    if (!(std::isfinite(v) && v > 0.0)) {
        throw ValidationError(std::string("cell parameters: ") + name +
                              " must be finite and positive");
    }
}

}  // namespace

void AgingParameterSet::validate() const {
    require_pos(eps_s_pos, "eps_s_pos");
    require_pos(eps_s_neg, "eps_s_neg");
    require(eps_s_pos < 1.0 && eps_s_neg < 1.0, "volume fraction must be below 1");
    require_pos(d_s_pos, "d_s_pos");
    require_pos(d_s_neg, "d_s_neg");
    require_pos(k_pos, "k_pos");
    require_pos(k_neg, "k_neg");
    require_pos(r0, "r0");
}

void CellParameters::validate() const {
    require_pos(thickness_neg, "thickness_neg");
    require_pos(thickness_sep, "thickness_sep");
    require_pos(thickness_pos, "thickness_pos");
    require_pos(plate_area, "plate_area");
    require_pos(particle_radius_neg, "particle_radius_neg");
    require_pos(particle_radius_pos, "particle_radius_pos");
    for (double e : {eps_e_neg, eps_e_sep, eps_e_pos, eps_s_neg, eps_s_pos}) {
        require(std::isfinite(e) && e > 0.0 && e < 1.0, "volume fractions must lie in (0, 1)");
    }
    require(eps_e_neg + eps_s_neg < 1.0, "negative electrode volume fractions exceed 1");
    require(eps_e_pos + eps_s_pos < 1.0, "positive electrode volume fractions exceed 1");
    require_pos(c_max_neg, "c_max_neg");
    require_pos(c_max_pos, "c_max_pos");
    for (double th : {theta0_neg, theta100_neg, theta0_pos, theta100_pos}) {
        require(std::isfinite(th) && th > 0.0 && th < 1.0, "stoichiometry bounds must lie in (0, 1)");
    }
    // Charging lithiates the negative electrode and delithiates the positive.
    require(theta100_neg > theta0_neg, "theta100_neg must exceed theta0_neg");
    require(theta100_pos < theta0_pos, "theta100_pos must be below theta0_pos");
    require_pos(d_s_neg, "d_s_neg");
    require_pos(d_s_pos, "d_s_pos");
    require_pos(d_e, "d_e");
    require_pos(k_neg, "k_neg");
    require_pos(k_pos, "k_pos");
    require_pos(kappa_e, "kappa_e");
    require(std::isfinite(t_plus) && t_plus > 0.0 && t_plus < 1.0, "t_plus must lie in (0, 1)");
    require_pos(c_e_init, "c_e_init");
    require_pos(r0, "r0");
    require(std::isfinite(temperature) && temperature > 200.0 && temperature < 400.0,
            "temperature must be a sane cell temperature in kelvin");
    require(ocp_neg.size() > 0 && ocp_pos.size() > 0, "both ocp tables must be loaded");
}

double CellParameters::window_capacity_ah(Side side) const {
    double eps = side == Side::Neg ? eps_s_neg : eps_s_pos;
    double thick = side == Side::Neg ? thickness_neg : thickness_pos;
    double cmax = side == Side::Neg ? c_max_neg : c_max_pos;
    double dth = side == Side::Neg ? theta100_neg - theta0_neg : theta0_pos - theta100_pos;
    return eps * thick * plate_area * cmax * dth * kFaraday / kSecondsPerHour;
}

double CellParameters::capacity_mismatch() const {
    double qn = window_capacity_ah(Side::Neg);
    double qp = window_capacity_ah(Side::Pos);
    return std::abs(qn - qp) / std::max(qn, qp);
}

double CellParameters::theta_at_soc(Side side, double soc) const {
    if (side == Side::Neg) return theta0_neg + soc * (theta100_neg - theta0_neg);
    return theta0_pos + soc * (theta100_pos - theta0_pos);
}

double CellParameters::soc_from_theta_neg(double theta) const {
    return (theta - theta0_neg) / (theta100_neg - theta0_neg);
}

CellParameters CellParameters::with_aging(const AgingParameterSet& a) const {
    a.validate();
    CellParameters p = *this;
    p.eps_s_pos = a.eps_s_pos;
    p.eps_s_neg = a.eps_s_neg;
    p.d_s_pos = a.d_s_pos;
    p.d_s_neg = a.d_s_neg;
    p.k_pos = a.k_pos;
    p.k_neg = a.k_neg;
    p.r0 = a.r0;
    return p;
}

CellParameters CellParameters::load(const std::string& path) {
    KvFile kv = KvFile::load(path);
    CellParameters p{};
    p.thickness_neg = kv.get_double("thickness_neg");
    p.thickness_sep = kv.get_double("thickness_sep");
    p.thickness_pos = kv.get_double("thickness_pos");
    p.plate_area = kv.get_double("plate_area");
    p.particle_radius_neg = kv.get_double("particle_radius_neg");
    p.particle_radius_pos = kv.get_double("particle_radius_pos");
    p.eps_e_neg = kv.get_double("eps_e_neg");
    p.eps_e_sep = kv.get_double("eps_e_sep");
    p.eps_e_pos = kv.get_double("eps_e_pos");
    p.eps_s_neg = kv.get_double("eps_s_neg");
    p.eps_s_pos = kv.get_double("eps_s_pos");
    p.c_max_neg = kv.get_double("c_max_neg");
    p.c_max_pos = kv.get_double("c_max_pos");
    p.theta0_neg = kv.get_double("theta0_neg");
    p.theta100_neg = kv.get_double("theta100_neg");
    p.theta0_pos = kv.get_double("theta0_pos");
    p.theta100_pos = kv.get_double("theta100_pos");
    p.d_s_neg = kv.get_double("d_s_neg");
    p.d_s_pos = kv.get_double("d_s_pos");
    p.d_e = kv.get_double("d_e");
    p.k_neg = kv.get_double("k_neg");
    p.k_pos = kv.get_double("k_pos");
    p.kappa_e = kv.get_double("kappa_e");
    p.t_plus = kv.get_double("t_plus");
    p.c_e_init = kv.get_double("c_e_init");
    p.r0 = kv.get_double("r0");
    p.temperature = kv.get_double("temperature");

    auto resolve = [&](const std::string& rel) {
        std::filesystem::path q(rel);
        if (q.is_absolute()) return q.string();
        return (std::filesystem::path(path).parent_path() / q).string();
    };
    p.ocp_neg = OcpTable::load_csv(resolve(kv.get_string("ocp_neg_csv")));
    p.ocp_pos = OcpTable::load_csv(resolve(kv.get_string("ocp_pos_csv")));

    p.validate();
    // Electrode window capacities rarely agree exactly on measured data
    // sheets; disagreement is tolerated but loud.
    if (p.capacity_mismatch() > 0.02) {
        std::fprintf(stderr,
                     "%s: electrode window capacities disagree by %.1f%% "
                     "(neg %.3f Ah, pos %.3f Ah)\n",
                     path.c_str(), 100.0 * p.capacity_mismatch(),
                     p.window_capacity_ah(Side::Neg), p.window_capacity_ah(Side::Pos));
    }
    return p;
}

void CellParameters::save(const std::string& path) const {
    KvFile kv;
    kv.set_double("thickness_neg", thickness_neg);
    kv.set_double("thickness_sep", thickness_sep);
    kv.set_double("thickness_pos", thickness_pos);
    kv.set_double("plate_area", plate_area);
    kv.set_double("particle_radius_neg", particle_radius_neg);
    kv.set_double("particle_radius_pos", particle_radius_pos);
    kv.set_double("eps_e_neg", eps_e_neg);
    kv.set_double("eps_e_sep", eps_e_sep);
    kv.set_double("eps_e_pos", eps_e_pos);
    kv.set_double("eps_s_neg", eps_s_neg);
    kv.set_double("eps_s_pos", eps_s_pos);
    kv.set_double("c_max_neg", c_max_neg);
    kv.set_double("c_max_pos", c_max_pos);
    kv.set_double("theta0_neg", theta0_neg);
    kv.set_double("theta100_neg", theta100_neg);
    kv.set_double("theta0_pos", theta0_pos);
    kv.set_double("theta100_pos", theta100_pos);
    kv.set_double("d_s_neg", d_s_neg);
    kv.set_double("d_s_pos", d_s_pos);
    kv.set_double("d_e", d_e);
    kv.set_double("k_neg", k_neg);
    kv.set_double("k_pos", k_pos);
    kv.set_double("kappa_e", kappa_e);
    kv.set_double("t_plus", t_plus);
    kv.set_double("c_e_init", c_e_init);
    kv.set_double("r0", r0);
    kv.set_double("temperature", temperature);
    // OCP tables are saved alongside the parameter file.
    std::filesystem::path dir = std::filesystem::path(path).parent_path();
    std::string base = std::filesystem::path(path).stem().string();
    std::string neg_name = base + "_ocp_neg.csv";
    std::string pos_name = base + "_ocp_pos.csv";
    ocp_neg.save_csv((dir / neg_name).string());
    ocp_pos.save_csv((dir / pos_name).string());
    kv.set("ocp_neg_csv", neg_name);
    kv.set("ocp_pos_csv", pos_name);
    kv.save(path);
}

}  // namespace cellfuse
