/*
 * Copyright (c) The Cellfuse Project Contributors
 *
 * SPDX-License-Identifier: Apache-2.0
 */

#ifndef CELLFUSE_PIPELINE_HPP
#define CELLFUSE_PIPELINE_HPP

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cellfuse/datagen.hpp"
#include "cellfuse/train.hpp"

namespace cellfuse {

/// End-to-end run configuration. Loadable from a flat key = value file; every
/// key in the file must match a field name here, unknown keys are rejected.
struct PipelineConfig {
    std::string params_file = "data/reference_cell.params";
    std::string out_dir = "out";
    std::uint64_t master_seed = 1234;

    // corpus shape
    int n_trajectories = 6;
    int cycles_per_trajectory = 60;
    int draws_per_mean = 30;
    double perturb_stddev = 0.05;
    std::size_t corpus_cap = 50000;
    // windows kept per simulated charge; 0 keeps all. Windows of one charge
    // are highly correlated, so a capped draw buys far more distinct cells
    // for the same corpus_cap.
    std::size_t corpus_windows_per_set = 6;
    std::string protocol_preset = "mscc-paper";
    double soc0_lo = 0.0;
    double soc0_hi = 0.3;
    double delta_q = 1.5;
    double stride_q = 0.03;
    double sim_dt = 1.0;

    // held-out target cells (high-resolution reference solver)
    int target_cells = 3;
    int eval_cycles = 13;
    int segments_per_eval_cycle = 5;
    int transfer_segments = 45;  // drawn round-robin from the per-cell pools
    double target_dt = 0.25;

    // training; smaller batches and a hotter learning rate than the
    // TrainingConfig defaults, tuned for corpus_cap-sized corpora
    int pretrain_epochs = 30;
    int pretrain_batch = 256;
    double pretrain_lr = 1e-2;
    double pretrain_lr_decay = 0.05;
    int transfer_epochs = 5;
    double transfer_lr = 1e-5;
    std::size_t replicate_to = 5000;
    std::size_t transfer_sim_count = 50000;
    std::size_t sweep_sim_count = 50000;  // sim anchor for sweep scans
    bool transfer_head_only = false;

    int threads = 1;

    static PipelineConfig load(const std::string& path);
    void validate() const;
    /// Sorted key = value text of every field; the digest is taken over it.
    std::string canonical() const;
    std::uint64_t digest() const;
};

/// Per-target-cell outcome: truth and predictions per evaluated cycle plus
/// error summaries before and after fine-tuning.
struct CellReport {
    std::uint32_t cell_id = 0;
    std::vector<int> cycles;
    std::vector<double> truth_soh;
    std::vector<double> pretrain_soh;
    std::vector<double> transfer_soh;
    double pretrain_mean_abs_pct = 0.0;
    double transfer_mean_abs_pct = 0.0;
    double reduction_pct = 0.0;  // 100 * (pre - post) / pre
};

/// Everything needed to re-emit the report files bit for bit: curves,
/// histogram counts, aggregate metrics and run provenance.
struct ExperimentReport {
    std::uint64_t master_seed = 0;
    std::string config_digest;  // hex
    std::map<std::string, std::string> artifact_digests;
    std::vector<CellReport> cells;
    std::vector<double> hist_edges;
    std::vector<std::uint64_t> hist_pre;
    std::vector<std::uint64_t> hist_post;
    EvalMetrics pretrain_metrics;
    EvalMetrics transfer_metrics;
};

void save_report(const ExperimentReport& report, const std::string& path);
ExperimentReport load_report(const std::string& path);

/// Writes the report files into dir: one soh-vs-cycle curve file per cell
/// (csv + svg with a +-2% band around truth), one error histogram (csv +
/// svg) and one metrics file (json). Returns the paths written. Output is a
/// pure function of the report, so re-emitting reproduces identical bytes.
std::vector<std::string> emit_report(const ExperimentReport& report, const std::string& dir);

struct PipelineResult {
    ExperimentReport report;
    std::vector<std::string> report_files;
};

enum class PipelineStage { Trajectories, Corpus, Pretrain, Targets, Transfer, Report };

/// Runs the chain up to and including the given stage, reusing cached
/// artifacts for everything already done under the same config digest.
void run_pipeline_through(const PipelineConfig& config, PipelineStage last);

/// Runs the full chain against config.out_dir: fade trajectories ->
/// parameter perturbation -> charge corpus -> pre-training -> held-out
/// target cells -> fine-tuning -> evaluation -> report. Every stage persists
/// its artifact next to a .meta file keyed by the config digest and is
/// reused on re-runs when the digest and file hash still match. A lock file
/// guards the output directory against concurrent runs.
PipelineResult run_pipeline(const PipelineConfig& config);

enum class SweepKind { Segments, Epochs, SourceCells, EarlyLife };
SweepKind sweep_kind_from_string(const std::string& name);
std::string to_string(SweepKind kind);

struct SweepPoint {
    std::string label;
    double value = 0.0;
    double mean_abs_pct = 0.0;  // over the scenario's evaluation set
    std::vector<double> per_cell_mean_abs_pct;
};

struct SweepResult {
    SweepKind kind = SweepKind::Segments;
    std::vector<std::uint32_t> cell_ids;  // column order of per_cell_mean_abs_pct
    std::vector<SweepPoint> points;
    std::vector<std::string> files;
};

/// Writes <dir>/<kind>.csv and <dir>/<kind>.json for a sweep result. A
/// result with no points still yields valid files (header row, empty list).
std::vector<std::string> save_sweep(const SweepResult& result, const std::string& dir);

/// Re-runs the fine-tuning stage under one varied condition, reusing the
/// persisted pre-trained weights, corpus and target artifacts (missing
/// artifacts are a StageFailure):
///   Segments:    transfer set size 15..90 in steps of 15
///   Epochs:      fine-tuning epochs 5..55 in steps of 10
///   SourceCells: leave-one-out transfer, scored on the held-out cell
///   EarlyLife:   transfer segments drawn only from the first sixth of life
/// Results are written to <out_dir>/sweep/<kind>.{csv,json}.
SweepResult run_experiment_sweep(const PipelineConfig& config, SweepKind kind);

}  // namespace cellfuse

#endif
