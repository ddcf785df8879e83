/*
 * Copyright (c) The Cellfuse Project Contributors
 *
 * SPDX-License-Identifier: Apache-2.0
 */

#include "cellfuse/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

#include "cellfuse/errors.hpp"
#include "cellfuse/fnv1a.hpp"
#include "cellfuse/kvfile.hpp"
#include "cellfuse/rng.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace cellfuse {

namespace {

#if defined(__GNUC__)
__attribute__((format(printf, 2, 3)))
#endif
void ap(std::string& out, const char* f, ...) {
    char buf[512];
    va_list args;
    va_start(args, f);
    std::vsnprintf(buf, sizeof buf, f, args);
    va_end(args);
    out += buf;
}

std::string hex_u64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return out;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw StageFailure("pipeline: cannot open " + path + " for writing");
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw StageFailure("pipeline: short write to " + path);
}

std::string read_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("pipeline: cannot read " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string file_digest_hex(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw StageFailure("pipeline: cannot read " + path);
    Fnv1a64 h;
    char buf[65536];
    while (in) {
        in.read(buf, sizeof buf);
        const std::streamsize got = in.gcount();
        if (got <= 0) break;
        h.update(buf, static_cast<std::size_t>(got));
    }
    return h.hex();
}

/// Holds <out>/.lock for the lifetime of a run so two processes cannot write
/// the same artifact tree at once.
class DirLock {
public:
    explicit DirLock(const std::string& dir) : path_(dir + "/.lock") {
        if (fs::exists(path_)) {
            throw StageFailure("pipeline: " + path_ +
                               " exists; another run owns this directory "
                               "(remove the file if that run is gone)");
        }
        std::ofstream f(path_, std::ios::binary);
        if (!f) throw StageFailure("pipeline: cannot create " + path_);
        f << "locked\n";
    }
    ~DirLock() {
        std::error_code ec;
        fs::remove(path_, ec);
    }
    DirLock(const DirLock&) = delete;
    DirLock& operator=(const DirLock&) = delete;

private:
    std::string path_;
};

struct Paths {
    std::string out;
    std::string traj_dir, targets_dir, report_dir, sweep_dir;
    std::string corpus, pretrained, pretrain_hist, transferred, transfer_hist, report_json;
    std::string traj_meta, corpus_meta, pretrain_meta, targets_meta, transfer_meta, report_meta;

    std::string traj_file(int k) const {
        return traj_dir + "/traj" + std::to_string(k) + ".csv";
    }
    std::string truth_file(int i) const {
        return targets_dir + "/cell" + std::to_string(i) + "_truth.csv";
    }
    std::string eval_file(int i) const {
        return targets_dir + "/cell" + std::to_string(i) + "_eval.cbseg";
    }
    std::string transfer_file(int i) const {
        return targets_dir + "/cell" + std::to_string(i) + "_transfer.cbseg";
    }
    std::string early_file(int i) const {
        return targets_dir + "/cell" + std::to_string(i) + "_early.cbseg";
    }
};

Paths make_paths(const std::string& out) {
    Paths p;
    p.out = out;
    p.traj_dir = out + "/trajectories";
    p.targets_dir = out + "/targets";
    p.report_dir = out + "/report";
    p.sweep_dir = out + "/sweep";
    p.corpus = out + "/corpus.cbseg";
    p.pretrained = out + "/pretrained.cbnet";
    p.pretrain_hist = out + "/pretrain_history.csv";
    p.transferred = out + "/transferred.cbnet";
    p.transfer_hist = out + "/transfer_history.csv";
    p.report_json = out + "/report.json";
    p.traj_meta = out + "/trajectories.meta";
    p.corpus_meta = out + "/corpus.meta";
    p.pretrain_meta = out + "/pretrain.meta";
    p.targets_meta = out + "/targets.meta";
    p.transfer_meta = out + "/transfer.meta";
    p.report_meta = out + "/report.meta";
    return p;
}

bool stage_cached(const std::vector<std::string>& files, const std::string& meta_path,
                  const std::string& digest) {
    if (!fs::exists(meta_path)) return false;
    KvFile meta;
    try {
        meta = KvFile::load(meta_path);
    } catch (const ValidationError&) {
        return false;
    }
    if (meta.get_string("config_digest", "") != digest) return false;
    for (const auto& f : files) {
        if (!fs::exists(f)) return false;
        const std::string key = "digest." + fs::path(f).filename().string();
        if (meta.get_string(key, "") != file_digest_hex(f)) return false;
    }
    return true;
}

void seal_stage(const std::vector<std::string>& files, const std::string& meta_path,
                const std::string& digest,
                const std::vector<std::pair<std::string, std::string>>& extra = {}) {
    KvFile meta;
    meta.set("config_digest", digest);
    for (const auto& f : files) {
        meta.set("digest." + fs::path(f).filename().string(), file_digest_hex(f));
    }
    for (const auto& [k, v] : extra) meta.set(k, v);
    meta.save(meta_path);
}

struct Ctx {
    PipelineConfig cfg;
    Paths p;
    std::string digest;
    CellParameters base;
    Protocol protocol;
};

Ctx make_ctx(const PipelineConfig& cfg) {
    cfg.validate();
    Ctx ctx{cfg, make_paths(cfg.out_dir), hex_u64(cfg.digest()), CellParameters::load(cfg.params_file),
            protocol_preset(cfg.protocol_preset)};
    return ctx;
}

void save_history(const std::vector<EpochStats>& hist, const std::string& path) {
    std::string out = "epoch,lr,train_rmse_ah,train_rmse_pct\n";
    for (const auto& e : hist) {
        ap(out, "%d,%.10g,%.10g,%.10g\n", e.epoch, e.lr, e.train_rmse_ah, e.train_rmse_pct);
    }
    write_text(path, out);
}

// ---------------------------------------------------------------------------
// stages

void stage_trajectories(const Ctx& ctx) {
    std::vector<std::string> files;
    for (int k = 0; k < ctx.cfg.n_trajectories; ++k) files.push_back(ctx.p.traj_file(k));
    if (stage_cached(files, ctx.p.traj_meta, ctx.digest)) return;

    fs::create_directories(ctx.p.traj_dir);
    const FadeKind kinds[3] = {FadeKind::Mild, FadeKind::Moderate, FadeKind::Severe};
    for (int k = 0; k < ctx.cfg.n_trajectories; ++k) {
        AgingTrajectory t =
            synth_fade_trajectory(kinds[k % 3], ctx.cfg.cycles_per_trajectory, ctx.base,
                                  derive_seed(ctx.cfg.master_seed, 0x100 + static_cast<std::uint64_t>(k)));
        t.cell_id = "base-" + std::to_string(k);
        save_trajectory(t, files[static_cast<std::size_t>(k)]);
    }
    seal_stage(files, ctx.p.traj_meta, ctx.digest);
}

void stage_corpus(const Ctx& ctx) {
    if (stage_cached({ctx.p.corpus}, ctx.p.corpus_meta, ctx.digest)) return;

    std::vector<CorpusItem> items;
    std::uint32_t set_id = 0;
    std::uint64_t base_set = 0;
    for (int k = 0; k < ctx.cfg.n_trajectories; ++k) {
        const AgingTrajectory traj = load_trajectory(ctx.p.traj_file(k));
        for (const auto& entry : traj.entries) {
            PerturbationConfig pc;
            pc.draws_per_mean = ctx.cfg.draws_per_mean;
            pc.stddev = ctx.cfg.perturb_stddev;
            pc.seed = derive_seed(ctx.cfg.master_seed, 0x5000 + base_set);
            ++base_set;
            for (const auto& variant : perturb_parameters(entry.aging, pc)) {
                items.push_back({ctx.base, variant, static_cast<std::uint32_t>(k),
                                 static_cast<std::uint32_t>(entry.cycle), set_id});
                ++set_id;
            }
        }
    }

    // The cap usually needs only a fraction of the variants; a seeded shuffle
    // spreads the simulated subset across trajectories, cycles and means.
    Rng shuffle_rng(derive_seed(ctx.cfg.master_seed, 0xA11));
    deterministic_shuffle(items, shuffle_rng);

    SegmentDataset ds;
    std::size_t simulated = 0, skipped = 0, pos = 0, slice_idx = 0;
    std::vector<std::string> skip_log;
    const std::size_t cap = ctx.cfg.corpus_cap;
    while (pos < items.size() && (cap == 0 || ds.segments.size() < cap)) {
        const std::size_t end = std::min(items.size(), pos + 1024);
        std::vector<CorpusItem> slice(items.begin() + static_cast<std::ptrdiff_t>(pos),
                                      items.begin() + static_cast<std::ptrdiff_t>(end));
        CorpusConfig cc;
        cc.master_seed = derive_seed(ctx.cfg.master_seed, 0xC0DE + slice_idx);
        cc.soc0_lo = ctx.cfg.soc0_lo;
        cc.soc0_hi = ctx.cfg.soc0_hi;
        cc.delta_q = ctx.cfg.delta_q;
        cc.stride_q = ctx.cfg.stride_q;
        cc.dt = ctx.cfg.sim_dt;
        cc.threads = ctx.cfg.threads;
        cc.windows_per_set = ctx.cfg.corpus_windows_per_set;
        cc.max_segments = cap == 0 ? 0 : cap - ds.segments.size();
        CorpusHandle h = generate_corpus(slice, ctx.protocol, cc);
        ds.segments.insert(ds.segments.end(), h.dataset.segments.begin(), h.dataset.segments.end());
        simulated += h.sets_simulated;
        skipped += h.sets_skipped;
        skip_log.insert(skip_log.end(), h.skip_log.begin(), h.skip_log.end());
        pos = end;
        ++slice_idx;
    }
    write_dataset(ds, ctx.p.corpus);
    if (!skip_log.empty()) {
        std::string log;
        for (const auto& line : skip_log) log += line + "\n";
        write_text(ctx.p.out + "/corpus.log", log);
    }
    seal_stage({ctx.p.corpus}, ctx.p.corpus_meta, ctx.digest,
               {{"items_total", std::to_string(items.size())},
                {"sets_simulated", std::to_string(simulated)},
                {"sets_skipped", std::to_string(skipped)},
                {"segments", std::to_string(ds.segments.size())}});
}

void stage_pretrain(const Ctx& ctx) {
    if (stage_cached({ctx.p.pretrained, ctx.p.pretrain_hist}, ctx.p.pretrain_meta, ctx.digest)) return;

    const SegmentDataset corpus = read_dataset(ctx.p.corpus);
    Network net(NetworkSpec{}, derive_seed(ctx.cfg.master_seed, 0x11E7));
    TrainingConfig tc;
    tc.batch_size = ctx.cfg.pretrain_batch;
    tc.lr_init = ctx.cfg.pretrain_lr;
    tc.lr_decay = ctx.cfg.pretrain_lr_decay;
    tc.max_epochs = ctx.cfg.pretrain_epochs;
    tc.seed = derive_seed(ctx.cfg.master_seed, 0x7247);
    const auto hist = train(net, corpus, tc);
    save_weights(net, ctx.p.pretrained);
    save_history(hist, ctx.p.pretrain_hist);
    seal_stage({ctx.p.pretrained, ctx.p.pretrain_hist}, ctx.p.pretrain_meta, ctx.digest);
}

/// Held-out cell aging: two-phase loss shapes with per-cell systematic
/// offsets, deliberately off the corpus presets (square-root transport fade,
/// a knee in the active-material loss, offsets active from cycle zero).
/// On top of that, every held-out cell loses cyclable lithium: both
/// stoichiometry windows slide toward lower lithiation at fixed electrode
/// capacity, an axis the corpus never moves.
struct TargetShape {
    std::array<double, 7> offset;  // multiplies the pristine aging view
    double a, b, knee;             // active material: 1 - a t - b ((t-knee)+/(1-knee))^2
    double c_d, c_k;               // transport/kinetics: 1 - c sqrt(t)
    double e;                      // resistance: 1 + e t^1.5
    double lli;                    // end-of-life window slip, fraction of the anode window
};

const TargetShape kTargetShapes[3] = {
    {{0.995, 0.990, 0.85, 0.90, 0.92, 0.95, 1.20}, 0.06, 0.10, 0.45, 0.25, 0.18, 0.50, 0.028},
    {{1.005, 1.010, 1.20, 1.15, 1.08, 1.05, 0.90}, 0.10, 0.14, 0.55, 0.35, 0.25, 0.80, 0.034},
    {{0.990, 0.985, 0.75, 0.80, 1.00, 0.98, 1.35}, 0.03, 0.08, 0.35, 0.15, 0.10, 1.20, 0.036},
};

AgingParameterSet target_aging(const CellParameters& base, int cell, int cycle, int n_cycles,
                               std::uint64_t cell_seed) {
    const TargetShape& s = kTargetShapes[cell % 3];
    const double t = n_cycles > 0 ? static_cast<double>(cycle) / n_cycles : 0.0;
    const double kink = std::max(0.0, t - s.knee) / (1.0 - s.knee);
    double f_eps = 1.0 - s.a * t - s.b * kink * kink;
    double f_d = 1.0 - s.c_d * std::sqrt(t);
    double f_k = 1.0 - s.c_k * std::sqrt(t);
    double f_r = 1.0 + s.e * std::pow(t, 1.5);
    if (cycle > 0) {
        Rng rng(derive_seed(cell_seed, static_cast<std::uint64_t>(cycle)));
        f_eps *= 1.0 + 1e-3 * (2.0 * rng.uniform01() - 1.0);
        f_d *= 1.0 + 1e-3 * (2.0 * rng.uniform01() - 1.0);
        f_k *= 1.0 + 1e-3 * (2.0 * rng.uniform01() - 1.0);
        f_r *= 1.0 + 1e-3 * (2.0 * rng.uniform01() - 1.0);
    }
    const std::array<double, 7> pristine = base.aging_view().to_array();
    const std::array<double, 7> shape = {f_eps, f_eps, f_d, f_d, f_k, f_k, f_r};
    std::array<double, 7> out{};
    for (std::size_t i = 0; i < 7; ++i) out[i] = pristine[i] * s.offset[i] * shape[i];
    return AgingParameterSet::from_array(out);
}

// Lithium-inventory slip applied on top of the 7-parameter aging view.
// Capacity between the voltage limits drops, while the graphite plateau
// keeps the mid-SOC charge window nearly unchanged. Anode slip is floored
// so the stoichiometry stays valid; any excess moves to the cathode window,
// which loses lithium in the same direction.
CellParameters target_cell(const CellParameters& base, const AgingParameterSet& aging,
                           int cell, int cycle, int n_cycles, std::uint64_t cell_seed) {
    const TargetShape& s = kTargetShapes[cell % 3];
    const double t = n_cycles > 0 ? static_cast<double>(cycle) / n_cycles : 0.0;
    double slip = s.lli * std::pow(t, 1.15);
    if (cycle > 0) {
        Rng rng(derive_seed(cell_seed, 0x90000 + static_cast<std::uint64_t>(cycle)));
        slip *= 1.0 + 1e-3 * (2.0 * rng.uniform01() - 1.0);
    }
    CellParameters p = base.with_aging(aging);
    double d_neg = slip * (p.theta100_neg - p.theta0_neg);
    const double floor_neg = 3e-3;
    double spill = 0.0;
    if (p.theta0_neg - d_neg < floor_neg) {
        spill = d_neg - (p.theta0_neg - floor_neg);
        d_neg = p.theta0_neg - floor_neg;
    }
    p.theta0_neg -= d_neg;
    p.theta100_neg -= d_neg;
    p.theta0_pos -= spill;
    p.theta100_pos -= spill;
    return p;
}

std::vector<int> spaced_cycles(int count, int n_cycles) {
    std::set<int> cycles;
    for (int i = 0; i < count; ++i) {
        cycles.insert(count > 1 ? static_cast<int>(std::lround(
                                      static_cast<double>(i) * n_cycles / (count - 1)))
                                : 0);
    }
    return {cycles.begin(), cycles.end()};
}

std::vector<int> fraction_cycles(const std::vector<double>& fractions, int n_cycles) {
    std::set<int> cycles;
    for (double f : fractions) {
        cycles.insert(std::max(1, static_cast<int>(std::lround(f * n_cycles))));
    }
    return {cycles.begin(), cycles.end()};
}

void stage_targets(const Ctx& ctx) {
    std::vector<std::string> files;
    for (int i = 0; i < ctx.cfg.target_cells; ++i) {
        files.push_back(ctx.p.truth_file(i));
        files.push_back(ctx.p.eval_file(i));
        files.push_back(ctx.p.transfer_file(i));
        files.push_back(ctx.p.early_file(i));
    }
    if (stage_cached(files, ctx.p.targets_meta, ctx.digest)) return;

    fs::create_directories(ctx.p.targets_dir);
    const int n = ctx.cfg.cycles_per_trajectory;
    const std::vector<int> eval_cycles = spaced_cycles(ctx.cfg.eval_cycles, n);
    const std::vector<int> spread_cycles =
        fraction_cycles({1.0 / 12, 3.0 / 12, 5.0 / 12, 7.0 / 12, 9.0 / 12, 11.0 / 12}, n);
    // early-life pool: cycles within the first sixth of the tracked life
    const std::vector<int> early_cycles = fraction_cycles({1.0 / 30, 1.0 / 12, 2.0 / 15}, n);

    std::set<int> all_cycles(eval_cycles.begin(), eval_cycles.end());
    all_cycles.insert(spread_cycles.begin(), spread_cycles.end());
    all_cycles.insert(early_cycles.begin(), early_cycles.end());

    for (int i = 0; i < ctx.cfg.target_cells; ++i) {
        const std::uint32_t cell_id = 100 + static_cast<std::uint32_t>(i);
        const std::uint64_t cell_seed = derive_seed(ctx.cfg.master_seed, 0x7000 + static_cast<std::uint64_t>(i));
        AgingTrajectory truth;
        truth.cell_id = "target-" + std::to_string(i);
        std::vector<Segment> eval_segs, transfer_segs, early_segs;

        for (int cycle : all_cycles) {
            const AgingParameterSet aging = target_aging(ctx.base, i, cycle, n, cell_seed);
            SimOptions so;
            so.dt = ctx.cfg.target_dt;
            so.solid = SolidKind::Fdm;
            // One model per cycle; its reference-cycle capacity is computed
            // once and shared by every charge drawn from it.
            CellModel cell(target_cell(ctx.base, aging, i, cycle, n, cell_seed), so);
            Rng draw_rng(derive_seed(ctx.cfg.master_seed,
                                     0x7E00 + static_cast<std::uint64_t>(i) * 4096 +
                                         static_cast<std::uint64_t>(cycle)));
            bool recorded = false;

            // Each sample is one window of its own charge from an
            // independently drawn initial SOC, so per-charge idiosyncrasy
            // averages out instead of moving whole cycles together.
            auto take = [&](std::vector<Segment>& dest) {
                for (int j = 0; j < ctx.cfg.segments_per_eval_cycle; ++j) {
                    const double soc0 = draw_rng.uniform(ctx.cfg.soc0_lo, ctx.cfg.soc0_hi);
                    const SimTrace trace = simulate_protocol(cell, ctx.protocol, soc0);
                    if (!recorded) {
                        truth.entries.push_back({cycle, aging, trace.final_capacity_ah,
                                                 trace.final_capacity_ah / kNominalCapacityAh});
                        recorded = true;
                    }
                    std::vector<Segment> windows = segment_trace(
                        trace, ctx.cfg.delta_q, ctx.cfg.stride_q, cell_id,
                        static_cast<std::uint32_t>(cycle),
                        cell_id * 100000u + static_cast<std::uint32_t>(cycle));
                    if (windows.empty()) continue;
                    dest.push_back(windows[draw_rng.below(windows.size())]);
                }
            };
            if (std::binary_search(eval_cycles.begin(), eval_cycles.end(), cycle)) take(eval_segs);
            if (std::binary_search(spread_cycles.begin(), spread_cycles.end(), cycle)) take(transfer_segs);
            if (std::binary_search(early_cycles.begin(), early_cycles.end(), cycle)) take(early_segs);
        }

        auto by_position = [](const Segment& a, const Segment& b) {
            if (a.cycle != b.cycle) return a.cycle < b.cycle;
            return a.start_throughput_ah < b.start_throughput_ah;
        };
        std::sort(eval_segs.begin(), eval_segs.end(), by_position);
        std::sort(transfer_segs.begin(), transfer_segs.end(), by_position);
        std::sort(early_segs.begin(), early_segs.end(), by_position);

        save_trajectory(truth, ctx.p.truth_file(i));
        SegmentDataset d;
        d.segments = eval_segs;
        write_dataset(d, ctx.p.eval_file(i));
        d.segments = transfer_segs;
        write_dataset(d, ctx.p.transfer_file(i));
        d.segments = early_segs;
        write_dataset(d, ctx.p.early_file(i));
    }
    seal_stage(files, ctx.p.targets_meta, ctx.digest);
}

/// Interleaves the per-cell pools cell by cell so a prefix of the result is
/// balanced across cells.
std::vector<Segment> take_round_robin(const std::vector<std::vector<Segment>>& pools,
                                      std::size_t count) {
    std::vector<Segment> out;
    std::vector<std::size_t> cursor(pools.size(), 0);
    while (out.size() < count) {
        bool any = false;
        for (std::size_t c = 0; c < pools.size() && out.size() < count; ++c) {
            if (cursor[c] < pools[c].size()) {
                out.push_back(pools[c][cursor[c]++]);
                any = true;
            }
        }
        if (!any) break;
    }
    return out;
}

void stage_transfer(const Ctx& ctx) {
    if (stage_cached({ctx.p.transferred, ctx.p.transfer_hist}, ctx.p.transfer_meta, ctx.digest)) return;

    std::vector<std::vector<Segment>> pools;
    for (int i = 0; i < ctx.cfg.target_cells; ++i) {
        pools.push_back(read_dataset(ctx.p.transfer_file(i)).segments);
    }
    const std::vector<Segment> real =
        take_round_robin(pools, static_cast<std::size_t>(ctx.cfg.transfer_segments));
    if (real.empty()) throw StageFailure("transfer: target pools produced no segments");

    const SegmentDataset corpus = read_dataset(ctx.p.corpus);
    Network net = load_weights(ctx.p.pretrained);
    TransferConfig tc;
    tc.replicate_to = ctx.cfg.replicate_to;
    tc.sim_count = ctx.cfg.transfer_sim_count;
    tc.epochs = ctx.cfg.transfer_epochs;
    tc.lr = ctx.cfg.transfer_lr;
    tc.head_only = ctx.cfg.transfer_head_only;
    tc.batch_size = ctx.cfg.pretrain_batch;
    tc.seed = derive_seed(ctx.cfg.master_seed, 0x77AA);
    const auto hist = transfer_finetune(net, real, corpus, tc);
    save_weights(net, ctx.p.transferred);
    save_history(hist, ctx.p.transfer_hist);
    seal_stage({ctx.p.transferred, ctx.p.transfer_hist}, ctx.p.transfer_meta, ctx.digest,
               {{"real_segments", std::to_string(real.size())}});
}

json metrics_to_json(const EvalMetrics& m) {
    json per_cell = json::object();
    for (const auto& [id, v] : m.per_cell_mean_abs_pct) per_cell[std::to_string(id)] = v;
    return json{{"rmse_ah", m.rmse_ah},
                {"mean_abs_soh_pct", m.mean_abs_soh_pct},
                {"per_cell", per_cell},
                {"within_1pct", m.within_1pct},
                {"within_2pct", m.within_2pct},
                {"count", m.count}};
}

EvalMetrics metrics_from_json(const json& j) {
    EvalMetrics m;
    m.rmse_ah = j.at("rmse_ah").get<double>();
    m.mean_abs_soh_pct = j.at("mean_abs_soh_pct").get<double>();
    m.within_1pct = j.at("within_1pct").get<double>();
    m.within_2pct = j.at("within_2pct").get<double>();
    m.count = j.at("count").get<std::size_t>();
    for (const auto& [k, v] : j.at("per_cell").items()) {
        m.per_cell_mean_abs_pct[static_cast<std::uint32_t>(std::stoul(k))] = v.get<double>();
    }
    return m;
}

PipelineResult stage_report(const Ctx& ctx) {
    if (stage_cached({ctx.p.report_json}, ctx.p.report_meta, ctx.digest)) {
        PipelineResult res;
        res.report = load_report(ctx.p.report_json);
        res.report_files = emit_report(res.report, ctx.p.report_dir);
        return res;
    }

    SegmentDataset merged;
    for (int i = 0; i < ctx.cfg.target_cells; ++i) {
        const SegmentDataset d = read_dataset(ctx.p.eval_file(i));
        merged.segments.insert(merged.segments.end(), d.segments.begin(), d.segments.end());
    }
    if (merged.segments.empty()) throw StageFailure("report: evaluation sets are empty");

    const Network pre = load_weights(ctx.p.pretrained);
    const Network post = load_weights(ctx.p.transferred);

    ExperimentReport rep;
    rep.master_seed = ctx.cfg.master_seed;
    rep.config_digest = ctx.digest;
    rep.pretrain_metrics = evaluate(pre, merged);
    rep.transfer_metrics = evaluate(post, merged);

    const std::vector<double> pred_pre = predict(pre, merged.segments, merged.norm);
    const std::vector<double> pred_post = predict(post, merged.segments, merged.norm);

    // histogram of per-segment soh errors, clamped into the edge bins
    const double lo = -5.0, hi = 5.0, step = 0.5;
    const int bins = static_cast<int>(std::lround((hi - lo) / step));
    rep.hist_edges.resize(static_cast<std::size_t>(bins) + 1);
    for (int b = 0; b <= bins; ++b) rep.hist_edges[static_cast<std::size_t>(b)] = lo + step * b;
    rep.hist_pre.assign(static_cast<std::size_t>(bins), 0);
    rep.hist_post.assign(static_cast<std::size_t>(bins), 0);
    auto bin_of = [&](double err_pct) {
        const int b = static_cast<int>(std::floor((err_pct - lo) / step));
        return static_cast<std::size_t>(std::clamp(b, 0, bins - 1));
    };
    for (std::size_t s = 0; s < merged.segments.size(); ++s) {
        const double label = merged.segments[s].label_capacity_ah;
        ++rep.hist_pre[bin_of(100.0 * (pred_pre[s] - label) / kNominalCapacityAh)];
        ++rep.hist_post[bin_of(100.0 * (pred_post[s] - label) / kNominalCapacityAh)];
    }

    // per-cell soh curves: mean prediction over each evaluated cycle
    std::map<std::uint32_t, std::map<std::uint32_t, std::array<double, 4>>> acc;  // cell -> cycle -> {n, truth, pre, post}
    for (std::size_t s = 0; s < merged.segments.size(); ++s) {
        const Segment& seg = merged.segments[s];
        auto& a = acc[seg.cell_id][seg.cycle];
        a[0] += 1.0;
        a[1] += seg.label_capacity_ah;
        a[2] += pred_pre[s];
        a[3] += pred_post[s];
    }
    for (const auto& [cell_id, cycles] : acc) {
        CellReport cr;
        cr.cell_id = cell_id;
        for (const auto& [cycle, a] : cycles) {
            cr.cycles.push_back(static_cast<int>(cycle));
            cr.truth_soh.push_back(a[1] / a[0] / kNominalCapacityAh);
            cr.pretrain_soh.push_back(a[2] / a[0] / kNominalCapacityAh);
            cr.transfer_soh.push_back(a[3] / a[0] / kNominalCapacityAh);
        }
        cr.pretrain_mean_abs_pct = rep.pretrain_metrics.per_cell_mean_abs_pct.at(cell_id);
        cr.transfer_mean_abs_pct = rep.transfer_metrics.per_cell_mean_abs_pct.at(cell_id);
        cr.reduction_pct = cr.pretrain_mean_abs_pct > 0.0
                               ? 100.0 * (cr.pretrain_mean_abs_pct - cr.transfer_mean_abs_pct) /
                                     cr.pretrain_mean_abs_pct
                               : 0.0;
        rep.cells.push_back(std::move(cr));
    }

    rep.artifact_digests["corpus.cbseg"] = file_digest_hex(ctx.p.corpus);
    rep.artifact_digests["pretrained.cbnet"] = file_digest_hex(ctx.p.pretrained);
    rep.artifact_digests["transferred.cbnet"] = file_digest_hex(ctx.p.transferred);
    for (int i = 0; i < ctx.cfg.target_cells; ++i) {
        const std::string name = "targets/cell" + std::to_string(i);
        rep.artifact_digests[name + "_truth.csv"] = file_digest_hex(ctx.p.truth_file(i));
        rep.artifact_digests[name + "_eval.cbseg"] = file_digest_hex(ctx.p.eval_file(i));
        rep.artifact_digests[name + "_transfer.cbseg"] = file_digest_hex(ctx.p.transfer_file(i));
    }

    save_report(rep, ctx.p.report_json);
    seal_stage({ctx.p.report_json}, ctx.p.report_meta, ctx.digest);

    PipelineResult res;
    res.report = std::move(rep);
    res.report_files = emit_report(res.report, ctx.p.report_dir);
    return res;
}

PipelineResult run_impl(const PipelineConfig& config, PipelineStage last) {
    Ctx ctx = make_ctx(config);
    fs::create_directories(ctx.p.out);
    DirLock lock(ctx.p.out);
    write_text(ctx.p.out + "/config.snapshot",
               config.canonical() + "config_digest = " + ctx.digest + "\n");

    PipelineResult res;
    stage_trajectories(ctx);
    if (last == PipelineStage::Trajectories) return res;
    stage_corpus(ctx);
    if (last == PipelineStage::Corpus) return res;
    stage_pretrain(ctx);
    if (last == PipelineStage::Pretrain) return res;
    stage_targets(ctx);
    if (last == PipelineStage::Targets) return res;
    stage_transfer(ctx);
    if (last == PipelineStage::Transfer) return res;
    return stage_report(ctx);
}

// ---------------------------------------------------------------------------
// report rendering

struct PlotFrame {
    double width = 720, height = 440, left = 70, right = 20, top = 46, bottom = 52;
    double xmin = 0, xmax = 1, ymin = 0, ymax = 1;

    double plot_w() const { return width - left - right; }
    double plot_h() const { return height - top - bottom; }
    double px(double x) const { return left + (x - xmin) / (xmax - xmin) * plot_w(); }
    double py(double y) const { return top + (ymax - y) / (ymax - ymin) * plot_h(); }
};

void svg_open(std::string& s, const PlotFrame& f, const std::string& title) {
    ap(s, "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.0f\" height=\"%.0f\" "
          "viewBox=\"0 0 %.0f %.0f\">\n", f.width, f.height, f.width, f.height);
    ap(s, "<rect width=\"%.0f\" height=\"%.0f\" fill=\"#ffffff\"/>\n", f.width, f.height);
    ap(s, "<text x=\"%.1f\" y=\"24\" font-family=\"sans-serif\" font-size=\"15\" "
          "fill=\"#222222\">%s</text>\n", f.left, title.c_str());
}

void svg_axes(std::string& s, const PlotFrame& f, const std::string& xlabel,
              const std::string& ylabel, bool x_integer) {
    ap(s, "<rect x=\"%.1f\" y=\"%.1f\" width=\"%.1f\" height=\"%.1f\" fill=\"none\" "
          "stroke=\"#444444\" stroke-width=\"1\"/>\n", f.left, f.top, f.plot_w(), f.plot_h());
    for (int i = 0; i <= 5; ++i) {
        const double xv = f.xmin + (f.xmax - f.xmin) * i / 5.0;
        const double yv = f.ymin + (f.ymax - f.ymin) * i / 5.0;
        const double xp = f.px(xv), yp = f.py(yv);
        ap(s, "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"#444444\"/>\n",
           xp, f.top + f.plot_h(), xp, f.top + f.plot_h() + 5);
        if (x_integer) {
            ap(s, "<text x=\"%.1f\" y=\"%.1f\" font-family=\"sans-serif\" font-size=\"11\" "
                  "fill=\"#222222\" text-anchor=\"middle\">%d</text>\n",
               xp, f.top + f.plot_h() + 18, static_cast<int>(std::lround(xv)));
        } else {
            ap(s, "<text x=\"%.1f\" y=\"%.1f\" font-family=\"sans-serif\" font-size=\"11\" "
                  "fill=\"#222222\" text-anchor=\"middle\">%.3g</text>\n",
               xp, f.top + f.plot_h() + 18, xv);
        }
        ap(s, "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"#444444\"/>\n",
           f.left - 5, yp, f.left, yp);
        ap(s, "<text x=\"%.1f\" y=\"%.1f\" font-family=\"sans-serif\" font-size=\"11\" "
              "fill=\"#222222\" text-anchor=\"end\">%.3f</text>\n", f.left - 8, yp + 4, yv);
    }
    ap(s, "<text x=\"%.1f\" y=\"%.1f\" font-family=\"sans-serif\" font-size=\"12\" "
          "fill=\"#222222\" text-anchor=\"middle\">%s</text>\n",
       f.left + f.plot_w() / 2, f.height - 10, xlabel.c_str());
    ap(s, "<text x=\"16\" y=\"%.1f\" font-family=\"sans-serif\" font-size=\"12\" fill=\"#222222\" "
          "transform=\"rotate(-90 16 %.1f)\" text-anchor=\"middle\">%s</text>\n",
       f.top + f.plot_h() / 2, f.top + f.plot_h() / 2, ylabel.c_str());
}

void svg_polyline(std::string& s, const PlotFrame& f, const std::vector<int>& xs,
                  const std::vector<double>& ys, const char* color, double width,
                  const char* dash) {
    ap(s, "<polyline fill=\"none\" stroke=\"%s\" stroke-width=\"%.1f\"%s points=\"", color, width,
       dash ? (std::string(" stroke-dasharray=\"") + dash + "\"").c_str() : "");
    for (std::size_t i = 0; i < xs.size(); ++i) {
        ap(s, "%s%.2f,%.2f", i ? " " : "", f.px(xs[i]), f.py(ys[i]));
    }
    s += "\"/>\n";
}

std::string svg_cell_curve(const CellReport& c) {
    PlotFrame f;
    f.xmin = c.cycles.front();
    f.xmax = c.cycles.back();
    if (f.xmax <= f.xmin) f.xmax = f.xmin + 1;
    double ymin = 1e30, ymax = -1e30;
    for (std::size_t i = 0; i < c.cycles.size(); ++i) {
        for (double v : {c.truth_soh[i] * 0.98, c.truth_soh[i] * 1.02, c.pretrain_soh[i],
                         c.transfer_soh[i]}) {
            ymin = std::min(ymin, v);
            ymax = std::max(ymax, v);
        }
    }
    const double pad = std::max(0.01, (ymax - ymin) * 0.08);
    f.ymin = ymin - pad;
    f.ymax = ymax + pad;

    std::string s;
    svg_open(s, f, "target cell " + std::to_string(c.cell_id) + " state of health");
    // +-2% acceptance band around the true trend
    s += "<polygon fill=\"#bfd8f2\" fill-opacity=\"0.55\" stroke=\"none\" points=\"";
    for (std::size_t i = 0; i < c.cycles.size(); ++i) {
        ap(s, "%s%.2f,%.2f", i ? " " : "", f.px(c.cycles[i]), f.py(c.truth_soh[i] * 1.02));
    }
    for (std::size_t i = c.cycles.size(); i-- > 0;) {
        ap(s, " %.2f,%.2f", f.px(c.cycles[i]), f.py(c.truth_soh[i] * 0.98));
    }
    s += "\"/>\n";
    svg_axes(s, f, "cycle", "soh", true);
    svg_polyline(s, f, c.cycles, c.truth_soh, "#1f77b4", 2.0, nullptr);
    svg_polyline(s, f, c.cycles, c.pretrain_soh, "#d62728", 1.6, "5 4");
    svg_polyline(s, f, c.cycles, c.transfer_soh, "#2ca02c", 1.6, nullptr);
    const char* names[3] = {"true", "pre-trained", "fine-tuned"};
    const char* colors[3] = {"#1f77b4", "#d62728", "#2ca02c"};
    for (int i = 0; i < 3; ++i) {
        const double y = f.top + 14 + 16 * i;
        ap(s, "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"%s\" "
              "stroke-width=\"2\"/>\n", f.left + 10, y - 4, f.left + 34, y - 4, colors[i]);
        ap(s, "<text x=\"%.1f\" y=\"%.1f\" font-family=\"sans-serif\" font-size=\"11\" "
              "fill=\"#222222\">%s</text>\n", f.left + 40, y, names[i]);
    }
    s += "</svg>\n";
    return s;
}

std::string svg_histogram(const ExperimentReport& r) {
    PlotFrame f;
    f.xmin = r.hist_edges.front();
    f.xmax = r.hist_edges.back();
    std::uint64_t peak = 1;
    for (std::size_t i = 0; i < r.hist_pre.size(); ++i) {
        peak = std::max({peak, r.hist_pre[i], r.hist_post[i]});
    }
    f.ymin = 0;
    f.ymax = static_cast<double>(peak) * 1.08;

    std::string s;
    svg_open(s, f, "soh error distribution, % of rated capacity");
    svg_axes(s, f, "error (%)", "segments", false);
    for (std::size_t b = 0; b < r.hist_pre.size(); ++b) {
        const double x0 = f.px(r.hist_edges[b]), x1 = f.px(r.hist_edges[b + 1]);
        const double w = (x1 - x0 - 2) / 2;
        const double y_pre = f.py(static_cast<double>(r.hist_pre[b]));
        const double y_post = f.py(static_cast<double>(r.hist_post[b]));
        ap(s, "<rect x=\"%.2f\" y=\"%.2f\" width=\"%.2f\" height=\"%.2f\" fill=\"#9aa7b4\"/>\n",
           x0 + 1, y_pre, w, f.top + f.plot_h() - y_pre);
        ap(s, "<rect x=\"%.2f\" y=\"%.2f\" width=\"%.2f\" height=\"%.2f\" fill=\"#2ca02c\"/>\n",
           x0 + 1 + w, y_post, w, f.top + f.plot_h() - y_post);
    }
    ap(s, "<rect x=\"%.1f\" y=\"%.1f\" width=\"12\" height=\"12\" fill=\"#9aa7b4\"/>"
          "<text x=\"%.1f\" y=\"%.1f\" font-family=\"sans-serif\" font-size=\"11\" "
          "fill=\"#222222\">pre-trained</text>\n",
       f.left + 10, f.top + 8, f.left + 26, f.top + 18);
    ap(s, "<rect x=\"%.1f\" y=\"%.1f\" width=\"12\" height=\"12\" fill=\"#2ca02c\"/>"
          "<text x=\"%.1f\" y=\"%.1f\" font-family=\"sans-serif\" font-size=\"11\" "
          "fill=\"#222222\">fine-tuned</text>\n",
       f.left + 10, f.top + 26, f.left + 26, f.top + 36);
    s += "</svg>\n";
    return s;
}

json cell_to_json(const CellReport& c) {
    return json{{"cell_id", c.cell_id},
                {"cycles", c.cycles},
                {"truth_soh", c.truth_soh},
                {"pretrain_soh", c.pretrain_soh},
                {"transfer_soh", c.transfer_soh},
                {"pretrain_mean_abs_pct", c.pretrain_mean_abs_pct},
                {"transfer_mean_abs_pct", c.transfer_mean_abs_pct},
                {"reduction_pct", c.reduction_pct}};
}

CellReport cell_from_json(const json& j) {
    CellReport c;
    c.cell_id = j.at("cell_id").get<std::uint32_t>();
    c.cycles = j.at("cycles").get<std::vector<int>>();
    c.truth_soh = j.at("truth_soh").get<std::vector<double>>();
    c.pretrain_soh = j.at("pretrain_soh").get<std::vector<double>>();
    c.transfer_soh = j.at("transfer_soh").get<std::vector<double>>();
    c.pretrain_mean_abs_pct = j.at("pretrain_mean_abs_pct").get<double>();
    c.transfer_mean_abs_pct = j.at("transfer_mean_abs_pct").get<double>();
    c.reduction_pct = j.at("reduction_pct").get<double>();
    return c;
}

}  // namespace

// ---------------------------------------------------------------------------
// PipelineConfig

PipelineConfig PipelineConfig::load(const std::string& path) {
    const KvFile kv = KvFile::load(path);
    PipelineConfig c;
    c.params_file = kv.get_string("params_file", c.params_file);
    c.out_dir = kv.get_string("out_dir", c.out_dir);
    if (kv.has("master_seed")) {
        try {
            c.master_seed = std::stoull(kv.get_string("master_seed"));
        } catch (const std::exception&) {
            throw ValidationError("pipeline config: master_seed is not an unsigned integer");
        }
    }
    c.n_trajectories = static_cast<int>(kv.get_int("n_trajectories", c.n_trajectories));
    c.cycles_per_trajectory =
        static_cast<int>(kv.get_int("cycles_per_trajectory", c.cycles_per_trajectory));
    c.draws_per_mean = static_cast<int>(kv.get_int("draws_per_mean", c.draws_per_mean));
    c.perturb_stddev = kv.get_double("perturb_stddev", c.perturb_stddev);
    c.corpus_cap = static_cast<std::size_t>(
        kv.get_int("corpus_cap", static_cast<std::int64_t>(c.corpus_cap)));
    c.corpus_windows_per_set = static_cast<std::size_t>(
        kv.get_int("corpus_windows_per_set", static_cast<std::int64_t>(c.corpus_windows_per_set)));
    c.protocol_preset = kv.get_string("protocol_preset", c.protocol_preset);
    c.soc0_lo = kv.get_double("soc0_lo", c.soc0_lo);
    c.soc0_hi = kv.get_double("soc0_hi", c.soc0_hi);
    c.delta_q = kv.get_double("delta_q", c.delta_q);
    c.stride_q = kv.get_double("stride_q", c.stride_q);
    c.sim_dt = kv.get_double("sim_dt", c.sim_dt);
    c.target_cells = static_cast<int>(kv.get_int("target_cells", c.target_cells));
    c.eval_cycles = static_cast<int>(kv.get_int("eval_cycles", c.eval_cycles));
    c.segments_per_eval_cycle =
        static_cast<int>(kv.get_int("segments_per_eval_cycle", c.segments_per_eval_cycle));
    c.transfer_segments = static_cast<int>(kv.get_int("transfer_segments", c.transfer_segments));
    c.target_dt = kv.get_double("target_dt", c.target_dt);
    c.pretrain_epochs = static_cast<int>(kv.get_int("pretrain_epochs", c.pretrain_epochs));
    c.pretrain_batch = static_cast<int>(kv.get_int("pretrain_batch", c.pretrain_batch));
    c.pretrain_lr = kv.get_double("pretrain_lr", c.pretrain_lr);
    c.pretrain_lr_decay = kv.get_double("pretrain_lr_decay", c.pretrain_lr_decay);
    c.transfer_epochs = static_cast<int>(kv.get_int("transfer_epochs", c.transfer_epochs));
    c.transfer_lr = kv.get_double("transfer_lr", c.transfer_lr);
    c.replicate_to = static_cast<std::size_t>(
        kv.get_int("replicate_to", static_cast<std::int64_t>(c.replicate_to)));
    c.transfer_sim_count = static_cast<std::size_t>(
        kv.get_int("transfer_sim_count", static_cast<std::int64_t>(c.transfer_sim_count)));
    c.sweep_sim_count = static_cast<std::size_t>(
        kv.get_int("sweep_sim_count", static_cast<std::int64_t>(c.sweep_sim_count)));
    c.transfer_head_only = kv.get_bool("transfer_head_only", c.transfer_head_only);
    c.threads = static_cast<int>(kv.get_int("threads", c.threads));

    const auto unread = kv.unread_keys();
    if (!unread.empty()) {
        throw ValidationError("pipeline config: unknown key '" + unread.front() + "' in " + path);
    }
    c.validate();
    return c;
}

void PipelineConfig::validate() const {
    if (out_dir.empty()) throw ValidationError("pipeline: out_dir is empty");
    if (!fs::exists(params_file)) {
        throw ValidationError("pipeline: params_file does not exist: " + params_file);
    }
    if (n_trajectories < 1) throw ValidationError("pipeline: n_trajectories must be >= 1");
    if (cycles_per_trajectory < 10) {
        throw ValidationError("pipeline: cycles_per_trajectory must be >= 10");
    }
    if (draws_per_mean < 1) throw ValidationError("pipeline: draws_per_mean must be >= 1");
    if (perturb_stddev < 0.0) throw ValidationError("pipeline: perturb_stddev must be >= 0");
    if (corpus_cap < 1) throw ValidationError("pipeline: corpus_cap must be >= 1");
    if (!(soc0_lo >= 0.0 && soc0_lo <= soc0_hi && soc0_hi < 1.0)) {
        throw ValidationError("pipeline: need 0 <= soc0_lo <= soc0_hi < 1");
    }
    if (delta_q <= 0.0 || stride_q <= 0.0) {
        throw ValidationError("pipeline: delta_q and stride_q must be positive");
    }
    if (sim_dt <= 0.0 || target_dt <= 0.0) throw ValidationError("pipeline: timesteps must be positive");
    if (target_cells < 1) throw ValidationError("pipeline: target_cells must be >= 1");
    if (eval_cycles < 2) throw ValidationError("pipeline: eval_cycles must be >= 2");
    if (segments_per_eval_cycle < 1) {
        throw ValidationError("pipeline: segments_per_eval_cycle must be >= 1");
    }
    if (transfer_segments < 1) throw ValidationError("pipeline: transfer_segments must be >= 1");
    if (pretrain_epochs < 0 || transfer_epochs < 0) {
        throw ValidationError("pipeline: epoch counts must be >= 0");
    }
    if (pretrain_batch < 1) throw ValidationError("pipeline: pretrain_batch must be >= 1");
    if (pretrain_lr <= 0.0 || transfer_lr <= 0.0) {
        throw ValidationError("pipeline: learning rates must be positive");
    }
    if (pretrain_lr_decay < 0.0 || pretrain_lr_decay >= 1.0) {
        throw ValidationError("pipeline: pretrain_lr_decay must be in [0, 1)");
    }
    if (replicate_to < 1) throw ValidationError("pipeline: replicate_to must be >= 1");
    if (threads < 1) throw ValidationError("pipeline: threads must be >= 1");
    (void)cellfuse::protocol_preset(protocol_preset);  // throws ValidationError on unknown names
}

std::string PipelineConfig::canonical() const {
    std::string s;
    ap(s, "corpus_cap = %llu\n", static_cast<unsigned long long>(corpus_cap));
    ap(s, "corpus_windows_per_set = %llu\n", static_cast<unsigned long long>(corpus_windows_per_set));
    ap(s, "cycles_per_trajectory = %d\n", cycles_per_trajectory);
    ap(s, "delta_q = %.17g\n", delta_q);
    ap(s, "draws_per_mean = %d\n", draws_per_mean);
    ap(s, "eval_cycles = %d\n", eval_cycles);
    ap(s, "master_seed = %llu\n", static_cast<unsigned long long>(master_seed));
    ap(s, "n_trajectories = %d\n", n_trajectories);
    s += "out_dir = " + out_dir + "\n";
    s += "params_file = " + params_file + "\n";
    ap(s, "perturb_stddev = %.17g\n", perturb_stddev);
    ap(s, "pretrain_batch = %d\n", pretrain_batch);
    ap(s, "pretrain_epochs = %d\n", pretrain_epochs);
    ap(s, "pretrain_lr = %.17g\n", pretrain_lr);
    ap(s, "pretrain_lr_decay = %.17g\n", pretrain_lr_decay);
    s += "protocol_preset = " + protocol_preset + "\n";
    ap(s, "replicate_to = %llu\n", static_cast<unsigned long long>(replicate_to));
    ap(s, "segments_per_eval_cycle = %d\n", segments_per_eval_cycle);
    ap(s, "sim_dt = %.17g\n", sim_dt);
    ap(s, "soc0_hi = %.17g\n", soc0_hi);
    ap(s, "soc0_lo = %.17g\n", soc0_lo);
    ap(s, "stride_q = %.17g\n", stride_q);
    ap(s, "sweep_sim_count = %llu\n", static_cast<unsigned long long>(sweep_sim_count));
    ap(s, "target_cells = %d\n", target_cells);
    ap(s, "target_dt = %.17g\n", target_dt);
    ap(s, "threads = %d\n", threads);
    ap(s, "transfer_epochs = %d\n", transfer_epochs);
    ap(s, "transfer_head_only = %s\n", transfer_head_only ? "true" : "false");
    ap(s, "transfer_lr = %.17g\n", transfer_lr);
    ap(s, "transfer_segments = %d\n", transfer_segments);
    ap(s, "transfer_sim_count = %llu\n", static_cast<unsigned long long>(transfer_sim_count));
    return s;
}

std::uint64_t PipelineConfig::digest() const {
    // threads and out_dir are execution details, not science; strip them so
    // a relocated or re-threaded rerun still reuses its artifacts
    std::string s;
    std::istringstream in(canonical());
    std::string line;
    while (std::getline(in, line)) {
        if (line.rfind("threads =", 0) == 0 || line.rfind("out_dir =", 0) == 0) continue;
        s += line + "\n";
    }
    return fnv1a64(s.data(), s.size());
}

// ---------------------------------------------------------------------------
// report io

void save_report(const ExperimentReport& report, const std::string& path) {
    json cells = json::array();
    for (const auto& c : report.cells) cells.push_back(cell_to_json(c));
    json digests = json::object();
    for (const auto& [k, v] : report.artifact_digests) digests[k] = v;
    const json j{{"master_seed", report.master_seed},
                 {"config_digest", report.config_digest},
                 {"artifact_digests", digests},
                 {"cells", cells},
                 {"hist_edges", report.hist_edges},
                 {"hist_pre", report.hist_pre},
                 {"hist_post", report.hist_post},
                 {"metrics_pretrain", metrics_to_json(report.pretrain_metrics)},
                 {"metrics_transfer", metrics_to_json(report.transfer_metrics)}};
    write_text(path, j.dump(2) + "\n");
}

ExperimentReport load_report(const std::string& path) {
    json j;
    try {
        j = json::parse(read_text(path));
    } catch (const json::exception& e) {
        throw ValidationError("report: cannot parse " + path + ": " + e.what());
    }
    try {
        ExperimentReport r;
        r.master_seed = j.at("master_seed").get<std::uint64_t>();
        r.config_digest = j.at("config_digest").get<std::string>();
        for (const auto& [k, v] : j.at("artifact_digests").items()) {
            r.artifact_digests[k] = v.get<std::string>();
        }
        for (const auto& c : j.at("cells")) r.cells.push_back(cell_from_json(c));
        r.hist_edges = j.at("hist_edges").get<std::vector<double>>();
        r.hist_pre = j.at("hist_pre").get<std::vector<std::uint64_t>>();
        r.hist_post = j.at("hist_post").get<std::vector<std::uint64_t>>();
        r.pretrain_metrics = metrics_from_json(j.at("metrics_pretrain"));
        r.transfer_metrics = metrics_from_json(j.at("metrics_transfer"));
        return r;
    } catch (const json::exception& e) {
        throw ValidationError("report: malformed " + path + ": " + e.what());
    }
}

std::vector<std::string> emit_report(const ExperimentReport& report, const std::string& dir) {
    fs::create_directories(dir);
    std::vector<std::string> files;

    for (const auto& c : report.cells) {
        const std::string base = dir + "/cell" + std::to_string(c.cell_id);
        std::string csv = "cycle,truth_soh,pretrained_soh,finetuned_soh\n";
        for (std::size_t i = 0; i < c.cycles.size(); ++i) {
            ap(csv, "%d,%.10g,%.10g,%.10g\n", c.cycles[i], c.truth_soh[i], c.pretrain_soh[i],
               c.transfer_soh[i]);
        }
        write_text(base + "_soh.csv", csv);
        files.push_back(base + "_soh.csv");
        write_text(base + "_soh.svg", svg_cell_curve(c));
        files.push_back(base + "_soh.svg");
    }

    std::string hist = "bin_lo,bin_hi,pretrained,finetuned\n";
    for (std::size_t b = 0; b < report.hist_pre.size(); ++b) {
        ap(hist, "%.10g,%.10g,%llu,%llu\n", report.hist_edges[b], report.hist_edges[b + 1],
           static_cast<unsigned long long>(report.hist_pre[b]),
           static_cast<unsigned long long>(report.hist_post[b]));
    }
    write_text(dir + "/error_hist.csv", hist);
    files.push_back(dir + "/error_hist.csv");
    write_text(dir + "/error_hist.svg", svg_histogram(report));
    files.push_back(dir + "/error_hist.svg");

    json cells = json::array();
    for (const auto& c : report.cells) {
        cells.push_back(json{{"cell_id", c.cell_id},
                             {"pretrain_mean_abs_pct", c.pretrain_mean_abs_pct},
                             {"transfer_mean_abs_pct", c.transfer_mean_abs_pct},
                             {"reduction_pct", c.reduction_pct}});
    }
    json digests = json::object();
    for (const auto& [k, v] : report.artifact_digests) digests[k] = v;
    const json metrics{{"cells", cells},
                       {"pretrain", metrics_to_json(report.pretrain_metrics)},
                       {"transfer", metrics_to_json(report.transfer_metrics)},
                       {"provenance", json{{"master_seed", report.master_seed},
                                           {"config_digest", report.config_digest},
                                           {"artifact_digests", digests}}}};
    write_text(dir + "/metrics.json", metrics.dump(2) + "\n");
    files.push_back(dir + "/metrics.json");
    return files;
}

// ---------------------------------------------------------------------------
// entry points

PipelineResult run_pipeline(const PipelineConfig& config) {
    return run_impl(config, PipelineStage::Report);
}

void run_pipeline_through(const PipelineConfig& config, PipelineStage last) {
    run_impl(config, last);
}

SweepKind sweep_kind_from_string(const std::string& name) {
    if (name == "segments") return SweepKind::Segments;
    if (name == "epochs") return SweepKind::Epochs;
    if (name == "source-cells" || name == "source_cells") return SweepKind::SourceCells;
    if (name == "early-life" || name == "early_life") return SweepKind::EarlyLife;
    throw ValidationError("sweep: unknown kind '" + name +
                          "' (segments, epochs, source-cells, early-life)");
}

std::string to_string(SweepKind kind) {
    switch (kind) {
        case SweepKind::Segments: return "segments";
        case SweepKind::Epochs: return "epochs";
        case SweepKind::SourceCells: return "source-cells";
        case SweepKind::EarlyLife: return "early-life";
    }
    return "segments";
}

SweepResult run_experiment_sweep(const PipelineConfig& config, SweepKind kind) {
    Ctx ctx = make_ctx(config);
    fs::create_directories(ctx.p.out);
    DirLock lock(ctx.p.out);
    for (const std::string& req : {ctx.p.pretrained, ctx.p.corpus}) {
        if (!fs::exists(req)) {
            throw StageFailure("sweep: missing artifact " + req + "; run the pipeline first");
        }
    }
    std::vector<std::vector<Segment>> pools, early_pools;
    SegmentDataset merged;
    for (int i = 0; i < ctx.cfg.target_cells; ++i) {
        for (const std::string& req :
             {ctx.p.eval_file(i), ctx.p.transfer_file(i), ctx.p.early_file(i)}) {
            if (!fs::exists(req)) {
                throw StageFailure("sweep: missing artifact " + req + "; run the pipeline first");
            }
        }
        pools.push_back(read_dataset(ctx.p.transfer_file(i)).segments);
        early_pools.push_back(read_dataset(ctx.p.early_file(i)).segments);
        const SegmentDataset d = read_dataset(ctx.p.eval_file(i));
        merged.segments.insert(merged.segments.end(), d.segments.begin(), d.segments.end());
    }
    const SegmentDataset corpus = read_dataset(ctx.p.corpus);
    const Network pretrained = load_weights(ctx.p.pretrained);

    SweepResult result;
    result.kind = kind;
    const EvalMetrics baseline = evaluate(pretrained, merged);
    for (const auto& [id, v] : baseline.per_cell_mean_abs_pct) result.cell_ids.push_back(id);

    auto per_cell_vec = [&](const EvalMetrics& m) {
        std::vector<double> v;
        for (std::uint32_t id : result.cell_ids) v.push_back(m.per_cell_mean_abs_pct.at(id));
        return v;
    };
    SweepPoint base_pt;
    base_pt.label = "baseline";
    base_pt.value = -1.0;
    base_pt.mean_abs_pct = baseline.mean_abs_soh_pct;
    base_pt.per_cell_mean_abs_pct = per_cell_vec(baseline);
    result.points.push_back(base_pt);

    auto run_point = [&](const std::string& label, double value,
                         const std::vector<Segment>& real, int epochs, std::size_t index,
                         int score_cell) {
        Network net = pretrained;
        TransferConfig tc;
        tc.replicate_to = ctx.cfg.replicate_to;
        tc.sim_count = ctx.cfg.sweep_sim_count;
        tc.epochs = epochs;
        tc.lr = ctx.cfg.transfer_lr;
        tc.head_only = ctx.cfg.transfer_head_only;
        tc.batch_size = ctx.cfg.pretrain_batch;
        tc.seed = derive_seed(ctx.cfg.master_seed, 0x5EEB + index);
        transfer_finetune(net, real, corpus, tc);
        const EvalMetrics m = evaluate(net, merged);
        SweepPoint pt;
        pt.label = label;
        pt.value = value;
        pt.per_cell_mean_abs_pct = per_cell_vec(m);
        pt.mean_abs_pct = score_cell >= 0
                              ? pt.per_cell_mean_abs_pct[static_cast<std::size_t>(score_cell)]
                              : m.mean_abs_soh_pct;
        result.points.push_back(pt);
    };

    switch (kind) {
        case SweepKind::Segments: {
            std::size_t index = 0;
            for (int n : {15, 30, 45, 60, 75, 90}) {
                run_point("segments-" + std::to_string(n), n,
                          take_round_robin(pools, static_cast<std::size_t>(n)),
                          ctx.cfg.transfer_epochs, index++, -1);
            }
            break;
        }
        case SweepKind::Epochs: {
            const auto real =
                take_round_robin(pools, static_cast<std::size_t>(ctx.cfg.transfer_segments));
            std::size_t index = 0;
            for (int e : {5, 15, 25, 35, 45, 55}) {
                run_point("epochs-" + std::to_string(e), e, real, e, 100 + index++, -1);
            }
            break;
        }
        case SweepKind::SourceCells: {
            for (int held = 0; held < ctx.cfg.target_cells; ++held) {
                std::vector<std::vector<Segment>> sources;
                for (int c = 0; c < ctx.cfg.target_cells; ++c) {
                    if (c != held) sources.push_back(pools[static_cast<std::size_t>(c)]);
                }
                const std::size_t per_cell =
                    static_cast<std::size_t>(ctx.cfg.transfer_segments) / 3;
                run_point("holdout-" + std::to_string(held), held,
                          take_round_robin(sources, per_cell * sources.size()),
                          ctx.cfg.transfer_epochs, 200 + static_cast<std::size_t>(held), held);
            }
            break;
        }
        case SweepKind::EarlyLife: {
            run_point("early-" + std::to_string(ctx.cfg.transfer_segments),
                      ctx.cfg.transfer_segments,
                      take_round_robin(early_pools,
                                       static_cast<std::size_t>(ctx.cfg.transfer_segments)),
                      ctx.cfg.transfer_epochs, 300, -1);
            break;
        }
    }

    result.files = save_sweep(result, ctx.p.sweep_dir);
    return result;
}

std::vector<std::string> save_sweep(const SweepResult& result, const std::string& dir) {
    fs::create_directories(dir);
    const std::string stem = dir + "/" + to_string(result.kind);
    std::string csv = "label,value,mean_abs_pct";
    for (std::uint32_t id : result.cell_ids) csv += ",cell" + std::to_string(id);
    csv += "\n";
    for (const auto& pt : result.points) {
        ap(csv, "%s,%.10g,%.10g", pt.label.c_str(), pt.value, pt.mean_abs_pct);
        for (double v : pt.per_cell_mean_abs_pct) ap(csv, ",%.10g", v);
        csv += "\n";
    }
    write_text(stem + ".csv", csv);

    json pts = json::array();
    for (const auto& pt : result.points) {
        pts.push_back(json{{"label", pt.label},
                           {"value", pt.value},
                           {"mean_abs_pct", pt.mean_abs_pct},
                           {"per_cell_mean_abs_pct", pt.per_cell_mean_abs_pct}});
    }
    const json j{{"kind", to_string(result.kind)}, {"cell_ids", result.cell_ids},
                 {"points", pts}};
    write_text(stem + ".json", j.dump(2) + "\n");
    return {stem + ".csv", stem + ".json"};
}

}  // namespace cellfuse
