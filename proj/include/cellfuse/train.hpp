/*
 * Copyright (c) The Cellfuse Project Contributors
 *
 * SPDX-License-Identifier: Apache-2.0
 */

#ifndef CELLFUSE_TRAIN_HPP
#define CELLFUSE_TRAIN_HPP

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cellfuse/dataset.hpp"
#include "cellfuse/net.hpp"

namespace cellfuse {

struct TrainingConfig {
    int batch_size = 1024;
    double lr_init = 5e-4;
    int max_epochs = 30;
    double lr_decay = 0.05;  // multiplicative per-epoch decay
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint64_t seed = 0;
    // Set the output bias to the training-label mean before the first epoch.
    // Saves the many early steps a fresh network spends learning the label
    // offset; a no-op when max_epochs is 0.
    bool center_output_bias = true;

    void validate() const;
};

struct EpochStats {
    int epoch = 0;
    double lr = 0.0;
    double train_rmse_ah = 0.0;
    double train_rmse_pct = 0.0;  // of nominal capacity
};

/// Mini-batch training on capacity labels: seeded shuffle each epoch,
/// learning rate multiplied by (1 - lr_decay) after every epoch, mean
/// squared error in Ah. Mutates the network in place and returns per-epoch
/// history (empty for max_epochs = 0).
std::vector<EpochStats> train(Network& net, const SegmentDataset& dataset,
                              const TrainingConfig& config);

struct TransferConfig {
    std::size_t replicate_to = 5000;  // real segments replicated to this many
    std::size_t sim_count = 50000;    // simulated segments sampled from the pool
    int epochs = 5;
    double lr = 1e-5;
    bool head_only = false;
    int batch_size = 1024;
    std::uint64_t seed = 0;
};

/// Round-robin replication of a segment list up to `count` items. Copies are
/// exact; no noise is added. Empty input gives an empty result.
std::vector<Segment> replicate_round_robin(const std::vector<Segment>& segments,
                                           std::size_t count);

/// Fine-tunes on real segments replicated round-robin to replicate_to items
/// merged with a seeded sim_count sample of the simulated pool. All layers
/// train unless head_only is set.
std::vector<EpochStats> transfer_finetune(Network& net, const std::vector<Segment>& real_segments,
                                          const SegmentDataset& sim_pool,
                                          const TransferConfig& config);

struct EvalMetrics {
    double rmse_ah = 0.0;
    double mean_abs_soh_pct = 0.0;  // mean |error| as % of nominal capacity
    std::map<std::uint32_t, double> per_cell_mean_abs_pct;
    double within_1pct = 0.0;  // share of items with |error| <= 1% of nominal
    double within_2pct = 0.0;
    std::size_t count = 0;
};

/// Eval-mode predictions against the dataset's capacity labels.
EvalMetrics evaluate(const Network& net, const SegmentDataset& dataset,
                     double nominal_ah = kNominalCapacityAh);

/// Eval-mode capacity predictions (Ah), batched.
std::vector<double> predict(const Network& net, const std::vector<Segment>& segments,
                            const SegmentNorm& norm, int batch_size = 1024);

}  // namespace cellfuse

#endif
