/*
 * Copyright (c) The Cellfuse Project Contributors
 *
 * SPDX-License-Identifier: Apache-2.0
 */

#include "cellfuse/solid_diffusion.hpp"

#include <cmath>

#include "cellfuse/errors.hpp"

namespace cellfuse {

namespace {

// Modal form of the rational flux-to-surface-excess map. Poles and residues
// are in diffusion time units (u = s R^2 / D); they satisfy
// sum(-res/pole) == 1/5, which pins the steady-state gain to R/(5 D).
constexpr double kPole[3] = {-20.195481354264927670, -65.867952343455770575,
                             -507.93656630227930176};
constexpr double kResidue[3] = {2.003379248863726529, 3.010338842322879794,
                                27.986281908813393677};

}  // namespace

PadeSolid::PadeSolid(double radius, double diffusivity, double dt) {
    if (!(radius > 0.0) || !(diffusivity > 0.0) || !(dt > 0.0)) {
        throw ValidationError("solid diffusion: radius, diffusivity and dt must be positive");
    }
    const double tau = radius * radius / diffusivity;
    for (int i = 0; i < 3; ++i) {
        alpha_[i] = std::exp(kPole[i] * dt / tau);
        beta_[i] = (alpha_[i] - 1.0) * tau / kPole[i];
        gain_[i] = kResidue[i] / radius;
    }
}

void PadeSolid::init(std::span<double> x, double /*conc*/) const {
    for (int i = 0; i < 3; ++i) x[static_cast<std::size_t>(i)] = 0.0;
}

void PadeSolid::advance(std::span<double> x, double influx) const {
    for (int i = 0; i < 3; ++i) {
        auto k = static_cast<std::size_t>(i);
        x[k] = alpha_[i] * x[k] + beta_[i] * influx;
    }
}

double PadeSolid::surface_excess(std::span<const double> x, double /*influx*/) const {
    return gain_[0] * x[0] + gain_[1] * x[1] + gain_[2] * x[2];
}

FdmSolid::FdmSolid(double radius, double diffusivity, double dt, int nodes) : nodes_(nodes) {
    if (!(radius > 0.0) || !(diffusivity > 0.0) || !(dt > 0.0) || nodes < 3) {
        throw ValidationError("solid diffusion: bad fdm configuration");
    }
    const auto n = static_cast<std::size_t>(nodes);
    h_ = radius / nodes;
    half_grad_ = h_ / (2.0 * diffusivity);

    // Cell volumes (4*pi dropped throughout; it cancels in every ratio) and
    // diffusive face conductances g_k = D * r_k^2 / h on interior faces.
    std::vector<double> vol(n);
    std::vector<double> g(n + 1, 0.0);
    double total = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        double r0 = static_cast<double>(k) * h_;
        double r1 = r0 + h_;
        vol[k] = (r1 * r1 * r1 - r0 * r0 * r0) / 3.0;
        total += vol[k];
    }
    for (std::size_t k = 1; k < n; ++k) {
        double rf = static_cast<double>(k) * h_;
        g[k] = diffusivity * rf * rf / h_;
    }
    weight_.resize(n);
    for (std::size_t k = 0; k < n; ++k) weight_[k] = vol[k] / total;
    src_ = dt * radius * radius / vol[n - 1];

    // Band coefficients of A, then the Crank-Nicolson pair I -+ dt/2 A.
    lo_.assign(n, 0.0);
    elo_.assign(n, 0.0);
    eup_.assign(n, 0.0);
    edg_.assign(n, 0.0);
    std::vector<double> dg(n), up(n, 0.0);
    for (std::size_t k = 0; k < n; ++k) {
        double sub = g[k] / vol[k];
        double sup = g[k + 1] / vol[k];
        double diag = -(g[k] + g[k + 1]) / vol[k];
        lo_[k] = -0.5 * dt * sub;
        up[k] = -0.5 * dt * sup;
        dg[k] = 1.0 - 0.5 * dt * diag;
        elo_[k] = 0.5 * dt * sub;
        eup_[k] = 0.5 * dt * sup;
        edg_[k] = 1.0 + 0.5 * dt * diag;
    }

    // Thomas prefactorization of the implicit matrix.
    denom_.assign(n, 0.0);
    cp_.assign(n, 0.0);
    denom_[0] = dg[0];
    cp_[0] = up[0] / denom_[0];
    for (std::size_t k = 1; k < n; ++k) {
        denom_[k] = dg[k] - lo_[k] * cp_[k - 1];
        cp_[k] = up[k] / denom_[k];
    }
    rhs_.assign(n, 0.0);
}

void FdmSolid::init(std::span<double> x, double conc) const {
    for (std::size_t k = 0; k < x.size(); ++k) x[k] = conc;
}

void FdmSolid::advance(std::span<double> x, double influx) const {
    const auto n = static_cast<std::size_t>(nodes_);
    rhs_[0] = edg_[0] * x[0] + eup_[0] * x[1];
    for (std::size_t k = 1; k + 1 < n; ++k) {
        rhs_[k] = elo_[k] * x[k - 1] + edg_[k] * x[k] + eup_[k] * x[k + 1];
    }
    rhs_[n - 1] = elo_[n - 1] * x[n - 2] + edg_[n - 1] * x[n - 1] + src_ * influx;

    rhs_[0] /= denom_[0];
    for (std::size_t k = 1; k < n; ++k) {
        rhs_[k] = (rhs_[k] - lo_[k] * rhs_[k - 1]) / denom_[k];
    }
    x[n - 1] = rhs_[n - 1];
    for (std::size_t k = n - 1; k-- > 0;) {
        x[k] = rhs_[k] - cp_[k] * x[k + 1];
    }
}

double FdmSolid::volume_mean(std::span<const double> x) const {
    double m = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) m += weight_[k] * x[k];
    return m;
}

double FdmSolid::surface_excess(std::span<const double> x, double influx) const {
    const auto n = static_cast<std::size_t>(nodes_);
    double surface = x[n - 1] + half_grad_ * influx;
    return surface - volume_mean(x);
}

}  // namespace cellfuse
