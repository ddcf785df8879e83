/*
 * Copyright (c) The Cellfuse Project Contributors
 *
 * SPDX-License-Identifier: Apache-2.0
 */

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "cellfuse/errors.hpp"
#include "cellfuse/identification.hpp"
#include "cellfuse/kvfile.hpp"
#include "cellfuse/pipeline.hpp"
#include "cellfuse/rng.hpp"

namespace fs = std::filesystem;
using namespace cellfuse;

namespace {

struct GlobalOpts {
    std::string config;
    std::string out;
    std::uint64_t seed = 0;
    int threads = 0;
    bool has_config = false, has_out = false, has_seed = false, has_threads = false;
};

PipelineConfig pipeline_config(const GlobalOpts& g) {
    PipelineConfig c = g.has_config ? PipelineConfig::load(g.config) : PipelineConfig{};
    if (g.has_out) c.out_dir = g.out;
    if (g.has_seed) c.master_seed = g.seed;
    if (g.has_threads) c.threads = g.threads;
    c.validate();
    return c;
}

std::string out_dir_or(const GlobalOpts& g, const char* fallback) {
    return g.has_out ? g.out : fallback;
}

Protocol resolve_protocol(const std::string& name) {
    if (fs::exists(name)) return load_protocol(name);
    return protocol_preset(name);
}

MeasuredCurve parse_curve_arg(const std::string& arg) {
    const auto pos = arg.rfind('=');
    const std::string path = pos == std::string::npos ? arg : arg.substr(0, pos);
    double rate = 1.0;
    if (pos != std::string::npos) {
        try {
            rate = std::stod(arg.substr(pos + 1));
        } catch (const std::exception&) {
            throw ValidationError("identify: bad rate in '" + arg + "' (expected FILE=RATE)");
        }
    }
    MeasuredCurve curve = load_measured_curve(path);
    curve.rate = rate;
    return curve;
}

int do_simulate(const GlobalOpts& g, const std::string& params_file, const std::string& protocol_name,
                double soc0, double dt, const std::string& solver) {
    const CellParameters params = CellParameters::load(params_file);
    SimOptions so;
    so.dt = dt;
    so.solid = solver == "fdm" ? SolidKind::Fdm : SolidKind::Reduced;
    CellModel cell(params, so);
    const SimTrace trace = simulate_protocol(cell, resolve_protocol(protocol_name), soc0);
    const std::string dir = out_dir_or(g, "out");
    fs::create_directories(dir);
    const std::string path = dir + "/trace.csv";
    save_curve_file(trace, path);
    std::printf("trace: %zu samples, %.0f s, %.4f Ah charged\n", trace.samples.size(),
                trace.duration_s(), trace.charged_ah());
    std::printf("measured capacity: %.4f Ah\n", trace.final_capacity_ah);
    std::printf("written: %s\n", path.c_str());
    return 0;
}

int do_identify(const GlobalOpts& g, const std::string& mode,
                const std::vector<std::string>& curve_args, const std::string& params_file,
                int iters) {
    const CellParameters params = CellParameters::load(params_file);
    std::vector<MeasuredCurve> curves;
    for (const auto& a : curve_args) curves.push_back(parse_curve_arg(a));
    const std::string dir = out_dir_or(g, "out");
    fs::create_directories(dir);

    IdentifyConfig cfg = default_identify_config();
    cfg.apso.max_iters = iters;
    if (g.has_seed) cfg.apso.seed = g.seed;
    if (g.has_threads) cfg.apso.threads = g.threads;

    KvFile result;
    if (mode == "stoichiometry") {
        MeasuredCurve ocv = curves.front();
        ocv.kind = CurveKind::Ocv;
        StoichConfig sc;
        sc.max_iters = iters;
        if (g.has_seed) sc.seed = g.seed;
        if (g.has_threads) sc.threads = g.threads;
        const StoichiometryFit fit = fit_stoichiometry(ocv, params.ocp_pos, params.ocp_neg, sc, &params);
        std::printf("theta_p: %.4f -> %.4f, theta_n: %.4f -> %.4f\n", fit.theta_p_0,
                    fit.theta_p_100, fit.theta_n_0, fit.theta_n_100);
        std::printf("rmse: %.3f mV, window ratio: %.4f\n", fit.rmse_mv, fit.window_ratio);
        result.set_double("theta0_pos", fit.theta_p_0);
        result.set_double("theta100_pos", fit.theta_p_100);
        result.set_double("theta0_neg", fit.theta_n_0);
        result.set_double("theta100_neg", fit.theta_n_100);
        result.set_double("rmse_mv", fit.rmse_mv);
    } else if (mode == "pristine") {
        const PristineFit fit = identify_pristine(curves, params, cfg);
        const std::string out_params = dir + "/identified.params";
        fit.params.save(out_params);
        for (std::size_t i = 0; i < fit.per_curve_rmse_mv.size(); ++i) {
            std::printf("curve %zu (%.2gC): rmse %.3f mV\n", i, curves[i].rate,
                        fit.per_curve_rmse_mv[i]);
        }
        std::printf("combined rmse: %.3f mV\n", fit.combined_rmse_mv);
        std::printf("written: %s\n", out_params.c_str());
        result.set_double("combined_rmse_mv", fit.combined_rmse_mv);
    } else {  // aging
        const AgingFit fit = identify_aging(curves.front(), params, params.aging_view(), cfg);
        const char* names[7] = {"eps_s_pos", "eps_s_neg", "d_s_pos", "d_s_neg",
                                "k_pos",     "k_neg",     "r0"};
        const auto values = fit.aging.to_array();
        for (int i = 0; i < 7; ++i) {
            std::printf("%s = %.6g\n", names[i], values[static_cast<std::size_t>(i)]);
            result.set_double(names[i], values[static_cast<std::size_t>(i)]);
        }
        std::printf("rmse: %.3f mV\n", fit.rmse_mv);
        result.set_double("rmse_mv", fit.rmse_mv);
    }
    const std::string out_kv = dir + "/identify.kv";
    result.save(out_kv);
    std::printf("written: %s\n", out_kv.c_str());
    return 0;
}

int do_evaluate(const GlobalOpts& g) {
    const PipelineResult res = run_pipeline(pipeline_config(g));
    std::printf("evaluation segments: %zu\n", res.report.pretrain_metrics.count);
    std::printf("mean abs soh error: pre-trained %.3f%%, fine-tuned %.3f%%\n",
                res.report.pretrain_metrics.mean_abs_soh_pct,
                res.report.transfer_metrics.mean_abs_soh_pct);
    for (const auto& c : res.report.cells) {
        std::printf("cell %u: %.3f%% -> %.3f%% (reduction %.1f%%)\n", c.cell_id,
                    c.pretrain_mean_abs_pct, c.transfer_mean_abs_pct, c.reduction_pct);
    }
    for (const auto& f : res.report_files) std::printf("written: %s\n", f.c_str());
    return 0;
}

int do_sweep(const GlobalOpts& g, const std::string& kind_name) {
    const SweepResult res = run_experiment_sweep(pipeline_config(g), sweep_kind_from_string(kind_name));
    for (const auto& pt : res.points) {
        std::printf("%-14s mean abs error %.3f%%\n", pt.label.c_str(), pt.mean_abs_pct);
    }
    for (const auto& f : res.files) std::printf("written: %s\n", f.c_str());
    return 0;
}

int do_report(const GlobalOpts& g) {
    const PipelineConfig cfg = pipeline_config(g);
    const ExperimentReport rep = load_report(cfg.out_dir + "/report.json");
    const auto files = emit_report(rep, cfg.out_dir + "/report");
    for (const auto& f : files) std::printf("written: %s\n", f.c_str());
    return 0;
}

int do_bench_apso(const GlobalOpts& g, int dims, int particles, int iters) {
    ApsoConfig cfg;
    cfg.n_particles = particles;
    cfg.max_iters = iters;
    cfg.seed = g.has_seed ? g.seed : 42;
    if (g.has_threads) cfg.threads = g.threads;
    cfg.bounds.assign(static_cast<std::size_t>(dims), {-5.0, 5.0});
    const ApsoResult res = optimize(
        [](std::span<const double> x) {
            double s = 0.0;
            for (double v : x) s += v * v;
            return s;
        },
        cfg);
    std::printf("iteration,best_fitness\n");
    for (std::size_t i = 0; i < res.history.size(); ++i) {
        std::printf("%zu,%.17g\n", i + 1, res.history[i]);
    }
    std::fprintf(stderr, "final best %.3e after %d iterations\n", res.best_fitness, iters);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"battery state-of-health toolkit: reduced-order cell simulation, parameter "
                 "identification, charge-corpus generation and capacity regression"};
    app.fallthrough();
    app.require_subcommand(1);

    GlobalOpts g;
    auto* o_config = app.add_option("--config", g.config, "run configuration file (key = value)");
    auto* o_seed = app.add_option("--seed", g.seed, "master seed override");
    auto* o_out = app.add_option("--out", g.out, "output directory override");
    auto* o_threads =
        app.add_option("--threads", g.threads, "worker thread count")->check(CLI::PositiveNumber);

    auto* sim = app.add_subcommand("simulate", "run one charging protocol and write the trace");
    std::string sim_params = "data/reference_cell.params";
    std::string sim_protocol = "mscc-paper";
    std::string sim_solver = "reduced";
    double sim_soc0 = 0.0, sim_dt = 1.0;
    sim->add_option("--params", sim_params, "cell parameter file");
    sim->add_option("--protocol", sim_protocol, "protocol preset name or protocol file");
    sim->add_option("--soc0", sim_soc0, "initial state of charge")->check(CLI::Range(0.0, 0.99));
    sim->add_option("--dt", sim_dt, "timestep, s")->check(CLI::PositiveNumber);
    sim->add_option("--solver", sim_solver, "solid-phase solver")
        ->check(CLI::IsMember({"reduced", "fdm"}));

    auto* ident = app.add_subcommand("identify", "fit cell parameters to measured charge curves");
    std::string id_mode = "aging";
    std::vector<std::string> id_curves;
    std::string id_params = "data/reference_cell.params";
    int id_iters = 150;
    ident->add_option("--mode", id_mode, "what to fit")
        ->check(CLI::IsMember({"stoichiometry", "pristine", "aging"}));
    ident->add_option("--curve", id_curves, "curve file, FILE=RATE (repeatable)")->required();
    ident->add_option("--params", id_params, "cell parameter context file");
    ident->add_option("--iters", id_iters, "swarm iterations")->check(CLI::PositiveNumber);

    auto* gen = app.add_subcommand("gen-data", "build fade trajectories and the charge corpus");
    auto* pre = app.add_subcommand("pretrain", "train the capacity regressor on the corpus");
    auto* tra = app.add_subcommand("transfer", "simulate target cells and fine-tune on them");
    auto* eva = app.add_subcommand("evaluate", "run the full chain and write the report");
    auto* swp = app.add_subcommand("sweep", "re-run fine-tuning under one varied condition");
    std::string sweep_kind = "segments";
    swp->add_option("--kind", sweep_kind, "segments | epochs | source-cells | early-life");
    auto* rep = app.add_subcommand("report", "re-emit report files from the persisted report");
    auto* bench = app.add_subcommand("bench-apso", "print swarm convergence on a quadratic bowl");
    int bench_dims = 5, bench_particles = 40, bench_iters = 200;
    bench->add_option("--dims", bench_dims)->check(CLI::PositiveNumber);
    bench->add_option("--particles", bench_particles)->check(CLI::PositiveNumber);
    bench->add_option("--iters", bench_iters)->check(CLI::PositiveNumber);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }
    g.has_config = o_config->count() > 0;
    g.has_out = o_out->count() > 0;
    g.has_seed = o_seed->count() > 0;
    g.has_threads = o_threads->count() > 0;

    try {
        if (sim->parsed()) {
            return do_simulate(g, sim_params, sim_protocol, sim_soc0, sim_dt, sim_solver);
        }
        if (ident->parsed()) return do_identify(g, id_mode, id_curves, id_params, id_iters);
        if (gen->parsed()) {
            run_pipeline_through(pipeline_config(g), PipelineStage::Corpus);
            std::printf("corpus ready under %s\n", pipeline_config(g).out_dir.c_str());
            return 0;
        }
        if (pre->parsed()) {
            run_pipeline_through(pipeline_config(g), PipelineStage::Pretrain);
            std::printf("pre-trained weights ready under %s\n", pipeline_config(g).out_dir.c_str());
            return 0;
        }
        if (tra->parsed()) {
            run_pipeline_through(pipeline_config(g), PipelineStage::Transfer);
            std::printf("fine-tuned weights ready under %s\n", pipeline_config(g).out_dir.c_str());
            return 0;
        }
        if (eva->parsed()) return do_evaluate(g);
        if (swp->parsed()) return do_sweep(g, sweep_kind);
        if (rep->parsed()) return do_report(g);
        if (bench->parsed()) return do_bench_apso(g, bench_dims, bench_particles, bench_iters);
    } catch (const ValidationError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const StageFailure& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    }
    return 0;
}
