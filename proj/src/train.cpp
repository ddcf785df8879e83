/*
 * Copyright (c) The Cellfuse Project Contributors
 *
 * SPDX-License-Identifier: Apache-2.0
 */

#include "cellfuse/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cellfuse/errors.hpp"
#include "cellfuse/rng.hpp"

namespace cellfuse {

void TrainingConfig::validate() const {
    if (batch_size < 1) throw ValidationError("train: batch_size must be positive");
    if (!(lr_init > 0.0)) throw ValidationError("train: lr_init must be positive");
    if (max_epochs < 0) throw ValidationError("train: max_epochs must be non-negative");
    if (lr_decay < 0.0 || lr_decay >= 1.0) throw ValidationError("train: lr_decay must be in [0,1)");
}

namespace {

std::vector<SegmentTensor> pack_batch(const std::vector<Segment>& segments,
                                      const std::vector<std::size_t>& order, std::size_t begin,
                                      std::size_t end, const SegmentNorm& norm,
                                      std::vector<double>& labels) {
    std::vector<SegmentTensor> batch;
    batch.reserve(end - begin);
    labels.clear();
    for (std::size_t k = begin; k < end; ++k) {
        const Segment& s = segments[order[k]];
        batch.push_back(pack_segment(s, norm));
        labels.push_back(s.label_capacity_ah);
    }
    return batch;
}

void center_output_bias(Network& net, const std::vector<Segment>& segments) {
    double mean = 0.0;
    for (const auto& s : segments) mean += s.label_capacity_ah;
    mean /= static_cast<double>(segments.size());
    for (const auto& t : net.manifest()) {
        if (t.name == "fc2.bias") net.params()[t.offset] = mean;
    }
}

std::vector<EpochStats> run_epochs(Network& net, const std::vector<Segment>& segments,
                                   const SegmentNorm& norm, int batch_size, double lr0,
                                   double decay, int epochs, std::uint64_t seed,
                                   const std::vector<std::pair<std::size_t, std::size_t>>& frozen,
                                   double b1, double b2, double adam_eps) {
    if (segments.empty()) throw ValidationError("train: empty dataset");
    AdamState opt(net.param_count());
    opt.beta1 = b1;
    opt.beta2 = b2;
    opt.eps = adam_eps;

    std::vector<std::size_t> order(segments.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed);
    Workspace ws;
    std::vector<double> labels;
    std::vector<EpochStats> history;

    double lr = lr0;
    for (int epoch = 0; epoch < epochs; ++epoch) {
        deterministic_shuffle(order, rng);
        double sq_sum = 0.0;
        std::size_t n_seen = 0;
        for (std::size_t begin = 0; begin < order.size();
             begin += static_cast<std::size_t>(batch_size)) {
            const std::size_t end =
                std::min(order.size(), begin + static_cast<std::size_t>(batch_size));
            const auto batch = pack_batch(segments, order, begin, end, norm, labels);
            double loss;
            try {
                loss = net.loss_and_gradients(batch, labels, ws, true);
            } catch (const NonFinite&) {
                throw StageFailure("train: loss diverged in epoch " + std::to_string(epoch));
            }
            sq_sum += loss * static_cast<double>(batch.size());
            n_seen += batch.size();
            adam_update(net.params(), net.grads(), opt, lr, frozen);
        }
        EpochStats stats;
        stats.epoch = epoch;
        stats.lr = lr;
        stats.train_rmse_ah = std::sqrt(sq_sum / static_cast<double>(n_seen));
        stats.train_rmse_pct = 100.0 * stats.train_rmse_ah / kNominalCapacityAh;
        history.push_back(stats);
        lr *= 1.0 - decay;
    }
    return history;
}

}  // namespace

std::vector<EpochStats> train(Network& net, const SegmentDataset& dataset,
                              const TrainingConfig& config) {
    config.validate();
    if (config.center_output_bias && config.max_epochs > 0 && !dataset.segments.empty()) {
        center_output_bias(net, dataset.segments);
    }
    return run_epochs(net, dataset.segments, dataset.norm, config.batch_size, config.lr_init,
                      config.lr_decay, config.max_epochs, config.seed, {}, config.beta1,
                      config.beta2, config.adam_eps);
}

std::vector<Segment> replicate_round_robin(const std::vector<Segment>& segments,
                                           std::size_t count) {
    std::vector<Segment> out;
    if (segments.empty()) return out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        out.push_back(segments[i % segments.size()]);
    }
    return out;
}

std::vector<EpochStats> transfer_finetune(Network& net, const std::vector<Segment>& real_segments,
                                          const SegmentDataset& sim_pool,
                                          const TransferConfig& config) {
    if (real_segments.empty() && sim_pool.segments.empty()) {
        throw ValidationError("transfer: no data");
    }
    if (config.epochs < 0) throw ValidationError("transfer: epochs must be non-negative");

    std::vector<Segment> merged = replicate_round_robin(real_segments, config.replicate_to);
    merged.reserve(config.replicate_to + config.sim_count);
    Rng rng(config.seed);
    const std::size_t pool = sim_pool.segments.size();
    if (pool > 0 && config.sim_count > 0) {
        if (pool <= config.sim_count) {
            merged.insert(merged.end(), sim_pool.segments.begin(), sim_pool.segments.end());
        } else {
            // Seeded sample without replacement: partial Fisher-Yates over
            // an index vector.
            std::vector<std::size_t> idx(pool);
            std::iota(idx.begin(), idx.end(), 0);
            for (std::size_t i = 0; i < config.sim_count; ++i) {
                const std::size_t j = i + static_cast<std::size_t>(rng.below(pool - i));
                std::swap(idx[i], idx[j]);
                merged.push_back(sim_pool.segments[idx[i]]);
            }
        }
    }
    if (merged.empty()) throw ValidationError("transfer: merged dataset empty");

    std::vector<std::pair<std::size_t, std::size_t>> frozen;
    if (config.head_only) {
        const auto head = net.head_ranges();
        frozen.push_back({0, head.front().first});
    }
    return run_epochs(net, merged, sim_pool.norm, config.batch_size, config.lr, 0.0,
                      config.epochs, derive_seed(config.seed, 1), frozen, 0.9, 0.999, 1e-8);
}

std::vector<double> predict(const Network& net, const std::vector<Segment>& segments,
                            const SegmentNorm& norm, int batch_size) {
    std::vector<double> out;
    out.reserve(segments.size());
    Workspace ws;
    std::vector<SegmentTensor> batch;
    for (std::size_t begin = 0; begin < segments.size();
         begin += static_cast<std::size_t>(batch_size)) {
        const std::size_t end =
            std::min(segments.size(), begin + static_cast<std::size_t>(batch_size));
        batch.clear();
        for (std::size_t k = begin; k < end; ++k) batch.push_back(pack_segment(segments[k], norm));
        const auto pred = net.forward(batch, NetMode::Eval, ws);
        out.insert(out.end(), pred.begin(), pred.end());
    }
    return out;
}

EvalMetrics evaluate(const Network& net, const SegmentDataset& dataset, double nominal_ah) {
    EvalMetrics m;
    m.count = dataset.segments.size();
    if (m.count == 0) return m;
    const auto pred = predict(net, dataset.segments, dataset.norm);

    std::map<std::uint32_t, std::pair<double, std::size_t>> cells;
    double sq = 0.0, abs_sum = 0.0;
    std::size_t in1 = 0, in2 = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double err = pred[i] - dataset.segments[i].label_capacity_ah;
        sq += err * err;
        const double pct = 100.0 * std::abs(err) / nominal_ah;
        abs_sum += pct;
        if (pct <= 1.0) ++in1;
        if (pct <= 2.0) ++in2;
        auto& cell = cells[dataset.segments[i].cell_id];
        cell.first += pct;
        ++cell.second;
    }
    const double n = static_cast<double>(pred.size());
    m.rmse_ah = std::sqrt(sq / n);
    m.mean_abs_soh_pct = abs_sum / n;
    m.within_1pct = static_cast<double>(in1) / n;
    m.within_2pct = static_cast<double>(in2) / n;
    for (const auto& [id, acc] : cells) {
        m.per_cell_mean_abs_pct[id] = acc.first / static_cast<double>(acc.second);
    }
    return m;
}

}  // namespace cellfuse
