/*
 * Copyright (c) The Cellfuse Project Contributors
 *
 * SPDX-License-Identifier: Apache-2.0
 */

#include "cellfuse/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cellfuse/errors.hpp"
#include "cellfuse/parallel.hpp"
#include "cellfuse/rng.hpp"

namespace cellfuse {

void PerturbationConfig::validate() const {
    if (stddev < 0.0) throw ValidationError("perturbation: stddev must be non-negative");
    for (double m : means) {
        if (!(m > 0.0)) throw ValidationError("perturbation: means must be positive");
    }
    if (draws_per_mean < 1) throw ValidationError("perturbation: draws_per_mean must be >= 1");
    if (!(clamp_lo > 0.0)) throw ValidationError("perturbation: clamp_lo must be positive");
}

std::vector<AgingParameterSet> perturb_parameters(const AgingParameterSet& base,
                                                  const PerturbationConfig& config) {
    config.validate();
    base.validate();
    const std::array<double, 7> b = base.to_array();

    std::vector<AgingParameterSet> out;
    out.reserve(config.means.size() * static_cast<std::size_t>(config.draws_per_mean));
    Rng rng(config.seed);
    for (double mean : config.means) {
        for (int d = 0; d < config.draws_per_mean; ++d) {
            std::array<double, 7> v;
            for (std::size_t k = 0; k < 7; ++k) {
                const double mult = std::max(config.clamp_lo, rng.normal(mean, config.stddev));
                v[k] = b[k] * mult;
            }
            out.push_back(AgingParameterSet::from_array(v));
        }
    }
    return out;
}

FadeKind fade_kind_from_string(const std::string& name) {
    if (name == "mild") return FadeKind::Mild;
    if (name == "moderate") return FadeKind::Moderate;
    if (name == "severe") return FadeKind::Severe;
    throw ValidationError("fade kind must be mild, moderate, or severe: " + name);
}

namespace {

struct FadePreset {
    double a, b;  // active material loss
    double c, d;  // diffusivity and kinetics loss
    double e, f;  // resistance growth
};

FadePreset preset_of(FadeKind kind) {
    switch (kind) {
        case FadeKind::Mild: return {0.06, 1.2, 0.15, 1.0, 0.4, 1.2};
        case FadeKind::Moderate: return {0.12, 1.1, 0.30, 1.0, 0.8, 1.1};
        case FadeKind::Severe: return {0.22, 1.05, 0.50, 1.0, 1.5, 1.0};
    }
    throw ValidationError("fade: unknown kind");
}

}  // namespace

AgingTrajectory synth_fade_trajectory(FadeKind kind, int n_cycles, const CellParameters& base,
                                      std::uint64_t seed) {
    if (n_cycles < 10) throw ValidationError("fade: n_cycles must be at least 10");
    base.validate();
    const FadePreset p = preset_of(kind);
    const AgingParameterSet pristine = base.aging_view();
    constexpr double kJitterFrac = 1e-3;

    AgingTrajectory trajectory;
    Rng rng(seed);
    for (int n = 0; n <= n_cycles; ++n) {
        const double t = static_cast<double>(n) / static_cast<double>(n_cycles);
        // Jitter is zero at n = 0 so the first entry is the pristine base.
        const double j_eps = n == 0 ? 0.0 : kJitterFrac * (2.0 * rng.uniform01() - 1.0);
        const double j_dk = n == 0 ? 0.0 : kJitterFrac * (2.0 * rng.uniform01() - 1.0);
        const double j_r = n == 0 ? 0.0 : kJitterFrac * (2.0 * rng.uniform01() - 1.0);
        const double f_eps = (1.0 - p.a * std::pow(t, p.b)) * (1.0 + j_eps);
        const double f_dk = (1.0 - p.c * std::pow(t, p.d)) * (1.0 + j_dk);
        const double f_r = (1.0 + p.e * std::pow(t, p.f)) * (1.0 + j_r);

        AgingParameterSet aged = pristine;
        aged.eps_s_pos *= f_eps;
        aged.eps_s_neg *= f_eps;
        aged.d_s_pos *= f_dk;
        aged.d_s_neg *= f_dk;
        aged.k_pos *= f_dk;
        aged.k_neg *= f_dk;
        aged.r0 *= f_r;

        CellModel cell(base.with_aging(aged), SimOptions{});
        const double capacity = measure_capacity_ah(cell);
        const double soh = capacity / kNominalCapacityAh;
        if (soh < 0.5) break;
        trajectory.entries.push_back({n, aged, capacity, soh});
    }
    if (trajectory.entries.empty()) throw StageFailure("fade: trajectory empty before 50% SOH");
    return trajectory;
}

std::vector<Segment> segment_trace(const SimTrace& trace, double delta_q, double stride_q,
                                   std::uint32_t cell_id, std::uint32_t cycle,
                                   std::uint32_t set_id) {
    if (!(delta_q > 0.0) || !(stride_q > 0.0)) {
        throw ValidationError("segment_trace: delta_q and stride_q must be positive");
    }
    std::vector<double> qs, vs, is;
    qs.reserve(trace.samples.size());
    double last_q = -1.0;
    for (const auto& s : trace.samples) {
        if (s.throughput_ah <= last_q) continue;
        qs.push_back(s.throughput_ah);
        vs.push_back(s.voltage);
        is.push_back(s.current);
        last_q = s.throughput_ah;
    }
    std::vector<Segment> out;
    if (qs.size() < 2 || qs.back() < delta_q) return out;

    const auto sample_at = [&](double q, std::size_t& hint) {
        while (hint + 1 < qs.size() && qs[hint + 1] < q) ++hint;
        const std::size_t lo = hint;
        const std::size_t hi = std::min(lo + 1, qs.size() - 1);
        if (hi == lo) return std::array<double, 2>{vs[lo], is[lo]};
        const double t = std::clamp((q - qs[lo]) / (qs[hi] - qs[lo]), 0.0, 1.0);
        return std::array<double, 2>{vs[lo] + t * (vs[hi] - vs[lo]),
                                     is[lo] + t * (is[hi] - is[lo])};
    };

    std::size_t hint = 0;
    for (double start = 0.0; start + delta_q <= qs.back() + 1e-12;
         start += stride_q) {
        Segment seg;
        seg.cell_id = cell_id;
        seg.cycle = cycle;
        seg.set_id = set_id;
        seg.start_throughput_ah = start;
        seg.label_capacity_ah = trace.final_capacity_ah;
        std::size_t h = hint;
        for (int j = 0; j < 25; ++j) {
            const double q = std::min(start + delta_q * static_cast<double>(j) / 24.0, qs.back());
            const auto [v, a] = sample_at(q, h);
            seg.voltage[static_cast<std::size_t>(j)] = static_cast<float>(v);
            seg.current[static_cast<std::size_t>(j)] = static_cast<float>(a);
            if (j == 0) hint = h;  // next window starts at a later throughput
        }
        out.push_back(seg);
    }
    return out;
}

CorpusHandle generate_corpus(const std::vector<CorpusItem>& items, const Protocol& protocol,
                             const CorpusConfig& config) {
    if (items.empty()) throw ValidationError("corpus: no items");
    protocol.validate();

    struct ItemResult {
        std::vector<Segment> segments;
        std::string error;
    };
    std::vector<ItemResult> results(items.size());

    parallel_for_chunks(items.size(), config.threads,
                        [&](std::size_t, std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            const CorpusItem& item = items[i];
            Rng rng(derive_seed(config.master_seed, i));
            const double soc0 = rng.uniform(config.soc0_lo, config.soc0_hi);
            try {
                SimOptions opts;
                opts.dt = config.dt;
                opts.solid = config.solid;
                CellModel cell(item.params.with_aging(item.aging), opts);
                const SimTrace trace = simulate_protocol(cell, protocol, soc0);
                std::vector<Segment> windows =
                    segment_trace(trace, config.delta_q, config.stride_q, item.cell_id,
                                  item.cycle, item.set_id);
                // A charge's windows are highly correlated; capping how many
                // survive spreads a segment budget over more distinct cells.
                if (config.windows_per_set > 0 && windows.size() > config.windows_per_set) {
                    std::vector<std::size_t> pick(windows.size());
                    std::iota(pick.begin(), pick.end(), 0);
                    for (std::size_t k = 0; k < config.windows_per_set; ++k) {
                        const std::size_t j = k + rng.below(pick.size() - k);
                        std::swap(pick[k], pick[j]);
                    }
                    pick.resize(config.windows_per_set);
                    std::sort(pick.begin(), pick.end());
                    std::vector<Segment> kept;
                    kept.reserve(pick.size());
                    for (std::size_t idx : pick) kept.push_back(windows[idx]);
                    windows = std::move(kept);
                }
                results[i].segments = std::move(windows);
            } catch (const StageFailure& e) {
                results[i].error = e.what();
            } catch (const ValidationError& e) {
                results[i].error = e.what();
            }
        }
    });

    CorpusHandle handle;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (!results[i].error.empty()) {
            ++handle.sets_skipped;
            handle.skip_log.push_back("set " + std::to_string(items[i].set_id) + ": " +
                                      results[i].error);
            continue;
        }
        ++handle.sets_simulated;
        for (const auto& seg : results[i].segments) {
            if (config.max_segments != 0 &&
                handle.dataset.segments.size() >= config.max_segments) {
                return handle;
            }
            handle.dataset.segments.push_back(seg);
        }
    }
    return handle;
}

}  // namespace cellfuse
