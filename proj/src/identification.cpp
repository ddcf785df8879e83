/*
 * Copyright (c) The Cellfuse Project Contributors
 *
 * SPDX-License-Identifier: Apache-2.0
 */

#include "cellfuse/identification.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "cellfuse/constants.hpp"
#include "cellfuse/errors.hpp"

namespace cellfuse {

void MeasuredCurve::validate(std::size_t min_samples) const {
    if (x.size() != voltage.size()) throw ValidationError("curve: x/voltage size mismatch");
    if (!current.empty() && current.size() != x.size()) {
        throw ValidationError("curve: current column size mismatch");
    }
    if (x.size() < min_samples) throw ValidationError("curve: too few samples");
    for (std::size_t i = 1; i < x.size(); ++i) {
        if (!(x[i] > x[i - 1])) throw ValidationError("curve: x must be strictly increasing");
    }
}

MeasuredCurve curve_from_trace(const SimTrace& trace, double rate, int cycle,
                               const std::string& cell_id) {
    MeasuredCurve curve;
    curve.kind = CurveKind::CycleVoltage;
    curve.rate = rate;
    curve.cycle = cycle;
    curve.cell_id = cell_id;
    double last_x = -1.0;
    for (const auto& s : trace.samples) {
        if (s.throughput_ah <= last_x) continue;
        curve.x.push_back(s.throughput_ah);
        curve.voltage.push_back(s.voltage);
        curve.current.push_back(s.current);
        last_x = s.throughput_ah;
    }
    return curve;
}

MeasuredCurve load_measured_curve(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("curve: cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw ValidationError("curve: empty file " + path);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "t_s,current_A,voltage_V") {
        throw ValidationError("curve: bad header in " + path);
    }
    MeasuredCurve curve;
    curve.kind = CurveKind::CycleVoltage;
    double prev_t = 0.0, prev_i = 0.0, ah = 0.0;
    bool first = true;
    double last_x = -1.0;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        double t, i, v;
        if (std::sscanf(line.c_str(), "%lf,%lf,%lf", &t, &i, &v) != 3) {
            throw ValidationError("curve: bad row in " + path + ": " + line);
        }
        if (!first) ah += 0.5 * (i + prev_i) * (t - prev_t) / kSecondsPerHour;
        prev_t = t;
        prev_i = i;
        first = false;
        if (ah <= last_x) continue;
        curve.x.push_back(ah);
        curve.voltage.push_back(v);
        curve.current.push_back(i);
        last_x = ah;
    }
    curve.validate();
    return curve;
}

void save_curve_file(const SimTrace& trace, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ValidationError("curve: cannot write " + path);
    out << "t_s,current_A,voltage_V\n";
    char buf[96];
    for (const auto& s : trace.samples) {
        std::snprintf(buf, sizeof buf, "%.6f,%.9f,%.9f\n", s.time_s, s.current, s.voltage);
        out << buf;
    }
    if (!out) throw StageFailure("curve: write failed for " + path);
}

namespace {

// Piecewise-linear sample of (xs, ys) at x, clamped at both ends.
double interp_clamped(const std::vector<double>& xs, const std::vector<double>& ys, double x) {
    if (x <= xs.front()) return ys.front();
    if (x >= xs.back()) return ys.back();
    const auto it = std::upper_bound(xs.begin(), xs.end(), x);
    const std::size_t hi = static_cast<std::size_t>(it - xs.begin());
    const std::size_t lo = hi - 1;
    const double t = (x - xs[lo]) / (xs[hi] - xs[lo]);
    return ys[lo] + t * (ys[hi] - ys[lo]);
}

double rmse_mv_of(const MeasuredCurve& curve, const SimTrace& trace, const ReplayConfig& rc) {
    std::vector<double> xs, vs, is;
    xs.reserve(trace.samples.size());
    double last_x = -1.0;
    for (const auto& s : trace.samples) {
        if (s.throughput_ah <= last_x) continue;
        xs.push_back(s.throughput_ah);
        vs.push_back(s.voltage);
        is.push_back(s.current);
        last_x = s.throughput_ah;
    }
    if (xs.size() < 2) return std::numeric_limits<double>::infinity();

    double sum_sq = 0.0;
    for (std::size_t j = 0; j < curve.x.size(); ++j) {
        double res;
        const bool cv_sample = !curve.current.empty() &&
                               std::abs(curve.voltage[j] - rc.v_max) <= rc.cv_band_v;
        if (cv_sample) {
            const double i_sim = interp_clamped(xs, is, curve.x[j]);
            res = rc.cv_weight_v_per_a * (i_sim - curve.current[j]);
        } else {
            const double v_sim = interp_clamped(xs, vs, curve.x[j]);
            res = v_sim - curve.voltage[j];
        }
        sum_sq += res * res;
    }
    return 1e3 * std::sqrt(sum_sq / static_cast<double>(curve.x.size()));
}

}  // namespace

double replay_rmse_mv(const MeasuredCurve& curve, const CellParameters& params,
                      const ReplayConfig& config, double penalty_mv) {
    try {
        const Protocol protocol = make_cccv(curve.rate, config.v_max, config.i_cutoff);
        SimOptions opts;
        opts.dt = config.dt;
        CellModel cell(params, opts);
        const SimTrace trace = simulate_protocol(cell, protocol, config.soc0);
        return rmse_mv_of(curve, trace, config);
    } catch (const StageFailure&) {
        return penalty_mv;
    } catch (const ValidationError&) {
        return penalty_mv;
    }
}

StoichiometryFit fit_stoichiometry(const MeasuredCurve& ocv_curve, const OcpTable& ocp_p,
                                   const OcpTable& ocp_n, const StoichConfig& config,
                                   const CellParameters* context) {
    ocv_curve.validate(50);
    if (ocv_curve.kind != CurveKind::Ocv) {
        throw ValidationError("fit_stoichiometry: curve kind must be ocv");
    }
    if (ocv_curve.x.front() > 0.05 || ocv_curve.x.back() < 0.95) {
        throw ValidationError("fit_stoichiometry: OCV curve must span the full SOC window");
    }

    // Dimension order: theta_p_0, theta_p_100, theta_n_0, theta_n_100.
    const auto fitness = [&](std::span<const double> q) {
        const double violation =
            std::max(0.0, q[2] - q[3]) + std::max(0.0, q[1] - q[0]);
        if (violation > 0.0) return 1.0 + violation;
        double sum_sq = 0.0;
        for (std::size_t j = 0; j < ocv_curve.x.size(); ++j) {
            const double soc = ocv_curve.x[j];
            const double tp = q[0] + soc * (q[1] - q[0]);
            const double tn = q[2] + soc * (q[3] - q[2]);
            const double model = ocp_p(tp) - ocp_n(tn);
            const double res = model - ocv_curve.voltage[j];
            sum_sq += res * res;
        }
        return std::sqrt(sum_sq / static_cast<double>(ocv_curve.x.size()));
    };

    ApsoConfig apso;
    apso.n_particles = config.n_particles;
    apso.max_iters = config.max_iters;
    apso.seed = config.seed;
    apso.threads = config.threads;
    apso.bounds.assign(4, {0.0, 1.0});
    const ApsoResult best = optimize(fitness, apso);

    StoichiometryFit fit;
    fit.theta_p_0 = best.best_position[0];
    fit.theta_p_100 = best.best_position[1];
    fit.theta_n_0 = best.best_position[2];
    fit.theta_n_100 = best.best_position[3];
    fit.rmse_mv = 1e3 * best.best_fitness;
    fit.window_ratio = std::numeric_limits<double>::quiet_NaN();
    if (context != nullptr) {
        const double q_neg = context->eps_s_neg * context->thickness_neg * context->plate_area *
                             context->c_max_neg * std::abs(fit.theta_n_100 - fit.theta_n_0) *
                             kFaraday / kSecondsPerHour;
        const double q_pos = context->eps_s_pos * context->thickness_pos * context->plate_area *
                             context->c_max_pos * std::abs(fit.theta_p_100 - fit.theta_p_0) *
                             kFaraday / kSecondsPerHour;
        fit.window_ratio = q_neg / q_pos;
    }
    if (fit.rmse_mv > 20.0) {
        throw NonConvergence("fit_stoichiometry: RMSE above 20 mV", fit.rmse_mv);
    }
    return fit;
}

IdentifyConfig default_identify_config() {
    IdentifyConfig config;
    config.apso.n_particles = 100;
    config.apso.max_iters = 150;
    config.apso.seed = 42;
    return config;
}

namespace {

struct Dim {
    double guess;
    bool log_scale;
};

std::array<double, 2> bound_of(const Dim& d, double linear_frac, double log_span) {
    if (d.log_scale) {
        const double c = std::log10(d.guess);
        return {c - log_span, c + log_span};
    }
    return {d.guess * (1.0 - linear_frac), d.guess * (1.0 + linear_frac)};
}

double decode(const Dim& d, double q) { return d.log_scale ? std::pow(10.0, q) : q; }

}  // namespace

PristineFit identify_pristine(const std::vector<MeasuredCurve>& curves,
                              const CellParameters& fixed, const IdentifyConfig& config) {
    if (curves.size() < 2) {
        throw ValidationError("identify_pristine: need curves at two or more rates");
    }
    std::vector<double> rates;
    for (const auto& c : curves) {
        c.validate(50);
        if (c.kind != CurveKind::CycleVoltage) {
            throw ValidationError("identify_pristine: curves must be cycle voltage curves");
        }
        rates.push_back(c.rate);
    }
    std::sort(rates.begin(), rates.end());
    if (std::unique(rates.begin(), rates.end(),
                    [](double a, double b) { return std::abs(a - b) < 1e-9; }) -
            rates.begin() <
        2) {
        throw ValidationError("identify_pristine: need curves at two or more distinct rates");
    }

    const std::array<Dim, 9> dims = {{
        {fixed.eps_s_pos, false},
        {fixed.eps_s_neg, false},
        {fixed.c_max_pos, false},
        {fixed.c_max_neg, false},
        {fixed.d_s_pos, true},
        {fixed.d_s_neg, true},
        {fixed.k_pos, true},
        {fixed.k_neg, true},
        {fixed.r0, false},
    }};

    const auto apply = [&](std::span<const double> q) {
        CellParameters p = fixed;
        p.eps_s_pos = decode(dims[0], q[0]);
        p.eps_s_neg = decode(dims[1], q[1]);
        p.c_max_pos = decode(dims[2], q[2]);
        p.c_max_neg = decode(dims[3], q[3]);
        p.d_s_pos = decode(dims[4], q[4]);
        p.d_s_neg = decode(dims[5], q[5]);
        p.k_pos = decode(dims[6], q[6]);
        p.k_neg = decode(dims[7], q[7]);
        p.r0 = decode(dims[8], q[8]);
        return p;
    };

    const auto fitness = [&](std::span<const double> q) {
        const CellParameters p = apply(q);
        double sum = 0.0;
        for (const auto& curve : curves) sum += replay_rmse_mv(curve, p, config.replay);
        return 1e-3 * sum / static_cast<double>(curves.size());  // volts
    };

    ApsoConfig apso = config.apso;
    apso.bounds.clear();
    for (const auto& d : dims) apso.bounds.push_back(bound_of(d, config.linear_frac, config.log_span));
    const ApsoResult best = optimize(fitness, apso);

    PristineFit fit;
    fit.params = apply(std::span<const double>(best.best_position));
    fit.history = best.history;
    double sum = 0.0;
    for (const auto& curve : curves) {
        fit.per_curve_rmse_mv.push_back(replay_rmse_mv(curve, fit.params, config.replay));
        sum += fit.per_curve_rmse_mv.back();
    }
    fit.combined_rmse_mv = sum / static_cast<double>(curves.size());
    if (fit.combined_rmse_mv > 25.0) {
        throw NonConvergence("identify_pristine: combined RMSE above 25 mV",
                             fit.combined_rmse_mv);
    }
    return fit;
}

AgingFit identify_aging(const MeasuredCurve& cycle_curve, const CellParameters& base,
                        const AgingParameterSet& warm_start, const IdentifyConfig& config) {
    cycle_curve.validate(50);
    if (cycle_curve.kind != CurveKind::CycleVoltage) {
        throw ValidationError("identify_aging: curve kind must be cycle_voltage");
    }
    warm_start.validate();

    const std::array<double, 7> warm = warm_start.to_array();
    ApsoConfig apso = config.apso;
    apso.bounds.clear();
    for (double w : warm) apso.bounds.push_back({0.5 * w, 1.5 * w});

    const auto fitness = [&](std::span<const double> q) {
        std::array<double, 7> a;
        std::copy(q.begin(), q.end(), a.begin());
        const CellParameters p = base.with_aging(AgingParameterSet::from_array(a));
        return 1e-3 * replay_rmse_mv(cycle_curve, p, config.replay);  // volts
    };

    const ApsoResult best = optimize(fitness, apso);

    AgingFit fit;
    std::array<double, 7> a;
    std::copy(best.best_position.begin(), best.best_position.end(), a.begin());
    fit.aging = AgingParameterSet::from_array(a);
    fit.rmse_mv = 1e3 * best.best_fitness;
    fit.history = best.history;
    if (fit.rmse_mv > 25.0) {
        throw NonConvergence("identify_aging: RMSE above 25 mV", fit.rmse_mv);
    }
    return fit;
}

void AgingTrajectory::validate() const {
    if (entries.empty()) throw ValidationError("trajectory: no entries");
    for (std::size_t i = 0; i < entries.size(); ++i) {
        if (i > 0 && entries[i].cycle <= entries[i - 1].cycle) {
            throw ValidationError("trajectory: cycles must be strictly increasing");
        }
        entries[i].aging.validate();
        const double soh = entries[i].capacity_ah / kNominalCapacityAh;
        if (std::abs(entries[i].soh - soh) > 1e-6) {
            throw ValidationError("trajectory: soh must equal capacity over nominal");
        }
    }
}

void save_trajectory(const AgingTrajectory& trajectory, const std::string& path) {
    trajectory.validate();
    std::ofstream out(path);
    if (!out) throw ValidationError("trajectory: cannot write " + path);
    out << "cycle,eps_s_pos,eps_s_neg,d_s_pos,d_s_neg,k_pos,k_neg,r0,capacity_ah,soh\n";
    char buf[320];
    for (const auto& e : trajectory.entries) {
        const auto a = e.aging.to_array();
        std::snprintf(buf, sizeof buf,
                      "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", e.cycle, a[0],
                      a[1], a[2], a[3], a[4], a[5], a[6], e.capacity_ah, e.soh);
        out << buf;
    }
    if (!out) throw StageFailure("trajectory: write failed for " + path);
}

AgingTrajectory load_trajectory(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("trajectory: cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw ValidationError("trajectory: empty file " + path);
    AgingTrajectory trajectory;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        AgingTrajectoryEntry e;
        std::array<double, 7> a;
        if (std::sscanf(line.c_str(), "%d,%lf,%lf,%lf,%lf,%lf,%lf,%lf,%lf,%lf", &e.cycle, &a[0],
                        &a[1], &a[2], &a[3], &a[4], &a[5], &a[6], &e.capacity_ah,
                        &e.soh) != 10) {
            throw ValidationError("trajectory: bad row in " + path + ": " + line);
        }
        e.aging = AgingParameterSet::from_array(a);
        trajectory.entries.push_back(e);
    }
    trajectory.validate();
    return trajectory;
}

}  // namespace cellfuse
