/*
 * Copyright (c) The Cellfuse Project Contributors
 *
 * SPDX-License-Identifier: Apache-2.0
 */

#ifndef CELLFUSE_NET_HPP
#define CELLFUSE_NET_HPP

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "cellfuse/dataset.hpp"

namespace cellfuse {

/// One convolution layer: output channels and kernel size. Stride is 1 and
/// padding keeps the 5x5 spatial size.
struct ConvLayerSpec {
    int co, kh, kw;
};

/// Three blocks of three convolutions each, every layer followed by batch
/// normalization and a rectified-linear activation.
inline constexpr std::array<std::array<ConvLayerSpec, 3>, 3> kConvBlocks = {{
    {{{11, 2, 1}, {7, 2, 1}, {8, 2, 1}}},
    {{{14, 2, 3}, {11, 2, 3}, {11, 2, 3}}},
    {{{12, 5, 4}, {15, 5, 4}, {4, 5, 4}}},
}};

inline constexpr int kInputH = 5;
inline constexpr int kInputW = 5;
inline constexpr int kInputC = 2;
inline constexpr int kFcHidden = 22;

struct NetworkSpec {
    /// Additive per-block skip connections through 1x1 channel projections.
    bool residual = true;

    bool operator==(const NetworkSpec&) const = default;
};

/// Shape and location of one named tensor inside the flat parameter or
/// state vector.
struct TensorInfo {
    std::string name;
    std::vector<int> shape;
    std::size_t offset = 0;
    std::size_t size = 0;
    bool trainable = true;
};

enum class NetMode { Train, Eval };

/// Scratch activations reused across batches. Contents are owned by the
/// Network's forward/backward passes; sizes track the last batch.
struct Workspace {
    std::size_t batch = 0;
    NetMode mode = NetMode::Eval;
    std::vector<double> input, d_input;  // N x H x W x C
    std::array<std::array<std::vector<double>, 3>, 3> conv_out, relu_out, d_conv_out, d_relu_out;
    std::array<std::vector<double>, 3> proj_out, block_out, d_block_out;
    std::array<std::array<std::vector<double>, 3>, 3> bn_mean, bn_var, bn_invstd;
    std::vector<double> fc1_out, fc1_relu, d_fc1_out, d_fc1_relu;
    std::vector<double> bnf_mean, bnf_var, bnf_invstd;
    std::vector<double> predictions, d_pred;
};

/// The capacity regressor. Trainable parameters live in one flat vector,
/// batch-norm running statistics in another; both are covered by the tensor
/// manifest for serialization.
class Network {
public:
    Network(const NetworkSpec& spec, std::uint64_t init_seed);

    const NetworkSpec& spec() const { return spec_; }
    const std::vector<TensorInfo>& manifest() const { return manifest_; }

    std::vector<double>& params() { return params_; }
    const std::vector<double>& params() const { return params_; }
    std::vector<double>& state() { return state_; }
    const std::vector<double>& state() const { return state_; }
    std::vector<double>& grads() { return grads_; }

    /// Predicted capacities (Ah), one per batch item. Train mode normalizes
    /// with batch statistics; eval mode uses the running statistics. Never
    /// mutates the network.
    std::vector<double> forward(const std::vector<SegmentTensor>& batch, NetMode mode,
                                Workspace& ws) const;

    /// Mean-squared-error loss against labels (Ah) plus gradients for every
    /// trainable parameter, via reverse-mode differentiation through the
    /// train-mode forward pass kept in ws. update_running folds the batch
    /// statistics into the running statistics (momentum 0.9).
    double loss_and_gradients(const std::vector<SegmentTensor>& batch,
                              const std::vector<double>& labels, Workspace& ws,
                              bool update_running = false);

    std::size_t param_count() const { return params_.size(); }

    /// Offsets of the head (fully connected) parameters, for head-only
    /// fine-tuning masks.
    std::vector<std::pair<std::size_t, std::size_t>> head_ranges() const;

private:
    /// running_state, when non-null, receives momentum-folded batch
    /// statistics (train mode only).
    std::vector<double> forward_impl(const std::vector<SegmentTensor>& batch, NetMode mode,
                                     Workspace& ws, double* running_state) const;

    NetworkSpec spec_;
    std::vector<TensorInfo> manifest_;        // parameter tensors
    std::vector<TensorInfo> state_manifest_;  // running statistics
    std::vector<double> params_;
    std::vector<double> grads_;
    std::vector<double> state_;

    friend void save_weights(const Network& net, const std::string& path);
    friend Network load_weights(const std::string& path);
};

/// Adam optimizer state (first/second moments, step counter).
struct AdamState {
    std::vector<double> m, v;
    long step = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    explicit AdamState(std::size_t n) : m(n, 0.0), v(n, 0.0) {}
};

/// One bias-corrected Adam update over the trainable parameters. Entries of
/// `frozen` (offset, size) are left untouched.
void adam_update(std::vector<double>& params, const std::vector<double>& grads, AdamState& opt,
                 double lr,
                 const std::vector<std::pair<std::size_t, std::size_t>>& frozen = {});

/// Versioned little-endian weights file: tensor manifest (names + shapes)
/// followed by all tensors as single-precision floats, FNV-1a checksum at
/// the end.
void save_weights(const Network& net, const std::string& path);
Network load_weights(const std::string& path);

}  // namespace cellfuse

#endif
