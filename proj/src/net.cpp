/*
 * Copyright (c) The Cellfuse Project Contributors
 *
 * SPDX-License-Identifier: Apache-2.0
 */

#include "cellfuse/net.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "cellfuse/errors.hpp"
#include "cellfuse/fnv1a.hpp"
#include "cellfuse/rng.hpp"

namespace cellfuse {

namespace {

constexpr double kBnEps = 1e-5;
constexpr double kBnMomentum = 0.9;
constexpr int kSpatial = kInputH * kInputW;
constexpr int kFlat = kSpatial * 4;  // last block emits 4 channels

int block_input_channels(int block) {
    if (block == 0) return kInputC;
    return kConvBlocks[static_cast<std::size_t>(block - 1)][2].co;
}

// Padding that preserves the spatial size at stride 1; even kernels pad one
// more cell at the bottom/right.
struct Pad {
    int top, left;
};
Pad pad_of(int kh, int kw) { return {(kh - 1) / 2, (kw - 1) / 2}; }

void conv_forward(const double* in, const double* w, const double* b, double* out,
                  std::size_t n_items, int ci, int co, int kh, int kw) {
    const Pad p = pad_of(kh, kw);
    for (std::size_t n = 0; n < n_items; ++n) {
        const double* in_n = in + n * static_cast<std::size_t>(kSpatial * ci);
        double* out_n = out + n * static_cast<std::size_t>(kSpatial * co);
        for (int y = 0; y < kInputH; ++y) {
            for (int x = 0; x < kInputW; ++x) {
                double* acc = out_n + static_cast<std::size_t>((y * kInputW + x) * co);
                for (int f = 0; f < co; ++f) acc[f] = b[f];
                for (int dy = 0; dy < kh; ++dy) {
                    const int iy = y + dy - p.top;
                    if (iy < 0 || iy >= kInputH) continue;
                    for (int dx = 0; dx < kw; ++dx) {
                        const int ix = x + dx - p.left;
                        if (ix < 0 || ix >= kInputW) continue;
                        const double* src = in_n + static_cast<std::size_t>((iy * kInputW + ix) * ci);
                        const double* wk = w + static_cast<std::size_t>((dy * kw + dx) * ci);
                        for (int f = 0; f < co; ++f) {
                            const double* wf = wk + static_cast<std::size_t>(f * kh * kw * ci);
                            double s = 0.0;
                            for (int c = 0; c < ci; ++c) s += src[c] * wf[c];
                            acc[f] += s;
                        }
                    }
                }
            }
        }
    }
}

// din must be zeroed by the caller; dw/db accumulate.
void conv_backward(const double* in, const double* w, const double* dout, double* din, double* dw,
                   double* db, std::size_t n_items, int ci, int co, int kh, int kw) {
    const Pad p = pad_of(kh, kw);
    for (std::size_t n = 0; n < n_items; ++n) {
        const double* in_n = in + n * static_cast<std::size_t>(kSpatial * ci);
        double* din_n = din + n * static_cast<std::size_t>(kSpatial * ci);
        const double* dout_n = dout + n * static_cast<std::size_t>(kSpatial * co);
        for (int y = 0; y < kInputH; ++y) {
            for (int x = 0; x < kInputW; ++x) {
                const double* g = dout_n + static_cast<std::size_t>((y * kInputW + x) * co);
                for (int f = 0; f < co; ++f) db[f] += g[f];
                for (int dy = 0; dy < kh; ++dy) {
                    const int iy = y + dy - p.top;
                    if (iy < 0 || iy >= kInputH) continue;
                    for (int dx = 0; dx < kw; ++dx) {
                        const int ix = x + dx - p.left;
                        if (ix < 0 || ix >= kInputW) continue;
                        const std::size_t in_off = static_cast<std::size_t>((iy * kInputW + ix) * ci);
                        const double* src = in_n + in_off;
                        double* dsrc = din_n + in_off;
                        const std::size_t wk_off = static_cast<std::size_t>((dy * kw + dx) * ci);
                        for (int f = 0; f < co; ++f) {
                            const double gf = g[f];
                            if (gf == 0.0) continue;
                            const std::size_t wf_off =
                                wk_off + static_cast<std::size_t>(f * kh * kw * ci);
                            const double* wf = w + wf_off;
                            double* dwf = dw + wf_off;
                            for (int c = 0; c < ci; ++c) {
                                dwf[c] += gf * src[c];
                                dsrc[c] += gf * wf[c];
                            }
                        }
                    }
                }
            }
        }
    }
}

// rows = items x spatial, channels fastest. Two-pass batch statistics.
void bn_stats(const double* x, std::size_t rows, int c, std::vector<double>& mean,
              std::vector<double>& var, std::vector<double>& invstd) {
    mean.assign(static_cast<std::size_t>(c), 0.0);
    var.assign(static_cast<std::size_t>(c), 0.0);
    invstd.assign(static_cast<std::size_t>(c), 0.0);
    for (std::size_t m = 0; m < rows; ++m) {
        const double* row = x + m * static_cast<std::size_t>(c);
        for (int k = 0; k < c; ++k) mean[static_cast<std::size_t>(k)] += row[k];
    }
    const double inv_m = 1.0 / static_cast<double>(rows);
    for (int k = 0; k < c; ++k) mean[static_cast<std::size_t>(k)] *= inv_m;
    for (std::size_t m = 0; m < rows; ++m) {
        const double* row = x + m * static_cast<std::size_t>(c);
        for (int k = 0; k < c; ++k) {
            const double d = row[k] - mean[static_cast<std::size_t>(k)];
            var[static_cast<std::size_t>(k)] += d * d;
        }
    }
    for (int k = 0; k < c; ++k) {
        var[static_cast<std::size_t>(k)] *= inv_m;
        invstd[static_cast<std::size_t>(k)] = 1.0 / std::sqrt(var[static_cast<std::size_t>(k)] + kBnEps);
    }
}

// y = relu(gamma * xhat + beta) written to out.
void bn_relu_forward(const double* x, double* out, std::size_t rows, int c, const double* gamma,
                     const double* beta, const double* mean, const double* invstd) {
    for (std::size_t m = 0; m < rows; ++m) {
        const double* row = x + m * static_cast<std::size_t>(c);
        double* orow = out + m * static_cast<std::size_t>(c);
        for (int k = 0; k < c; ++k) {
            const double xh = (row[k] - mean[k]) * invstd[k];
            const double y = gamma[k] * xh + beta[k];
            orow[k] = y > 0.0 ? y : 0.0;
        }
    }
}

// Gradient through train-mode batch normalization. dy arrives in dx and is
// replaced; dgamma/dbeta accumulate.
void bn_backward(const double* x, double* dx, std::size_t rows, int c, const double* gamma,
                 const double* mean, const double* invstd, double* dgamma, double* dbeta) {
    const std::size_t cc = static_cast<std::size_t>(c);
    std::vector<double> sum_dy(cc, 0.0), sum_dy_xh(cc, 0.0);
    for (std::size_t m = 0; m < rows; ++m) {
        const double* row = x + m * cc;
        const double* drow = dx + m * cc;
        for (int k = 0; k < c; ++k) {
            const double xh = (row[k] - mean[k]) * invstd[k];
            sum_dy[static_cast<std::size_t>(k)] += drow[k];
            sum_dy_xh[static_cast<std::size_t>(k)] += drow[k] * xh;
        }
    }
    for (int k = 0; k < c; ++k) {
        dgamma[k] += sum_dy_xh[static_cast<std::size_t>(k)];
        dbeta[k] += sum_dy[static_cast<std::size_t>(k)];
    }
    const double inv_m = 1.0 / static_cast<double>(rows);
    for (std::size_t m = 0; m < rows; ++m) {
        const double* row = x + m * cc;
        double* drow = dx + m * cc;
        for (int k = 0; k < c; ++k) {
            const double xh = (row[k] - mean[k]) * invstd[k];
            drow[k] = gamma[k] * invstd[k] *
                      (drow[k] - inv_m * sum_dy[static_cast<std::size_t>(k)] -
                       xh * inv_m * sum_dy_xh[static_cast<std::size_t>(k)]);
        }
    }
}

void relu_backward_mask(const double* out, double* d, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        if (out[i] <= 0.0) d[i] = 0.0;
    }
}

void fc_forward(const double* in, const double* w, const double* b, double* out,
                std::size_t n_items, int k_in, int k_out) {
    for (std::size_t n = 0; n < n_items; ++n) {
        const double* row = in + n * static_cast<std::size_t>(k_in);
        double* orow = out + n * static_cast<std::size_t>(k_out);
        for (int o = 0; o < k_out; ++o) {
            const double* wrow = w + static_cast<std::size_t>(o * k_in);
            double s = b[o];
            for (int k = 0; k < k_in; ++k) s += wrow[k] * row[k];
            orow[o] = s;
        }
    }
}

void fc_backward(const double* in, const double* w, const double* dout, double* din, double* dw,
                 double* db, std::size_t n_items, int k_in, int k_out) {
    for (std::size_t n = 0; n < n_items; ++n) {
        const double* row = in + n * static_cast<std::size_t>(k_in);
        double* drow = din + n * static_cast<std::size_t>(k_in);
        const double* g = dout + n * static_cast<std::size_t>(k_out);
        for (int k = 0; k < k_in; ++k) drow[k] = 0.0;
        for (int o = 0; o < k_out; ++o) {
            const double go = g[o];
            db[o] += go;
            const double* wrow = w + static_cast<std::size_t>(o * k_in);
            double* dwrow = dw + static_cast<std::size_t>(o * k_in);
            for (int k = 0; k < k_in; ++k) {
                dwrow[k] += go * row[k];
                drow[k] += go * wrow[k];
            }
        }
    }
}

std::size_t numel(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    return n;
}

void resize_all(Workspace& ws, std::size_t n, bool residual) {
    ws.batch = n;
    ws.input.assign(n * static_cast<std::size_t>(kSpatial * kInputC), 0.0);
    for (int i = 0; i < 3; ++i) {
        const auto& block = kConvBlocks[static_cast<std::size_t>(i)];
        for (int j = 0; j < 3; ++j) {
            const std::size_t sz = n * static_cast<std::size_t>(kSpatial * block[static_cast<std::size_t>(j)].co);
            ws.conv_out[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)].assign(sz, 0.0);
            ws.relu_out[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)].assign(sz, 0.0);
        }
        const std::size_t bsz = n * static_cast<std::size_t>(kSpatial * block[2].co);
        if (residual) ws.proj_out[static_cast<std::size_t>(i)].assign(bsz, 0.0);
        ws.block_out[static_cast<std::size_t>(i)].assign(bsz, 0.0);
    }
    ws.fc1_out.assign(n * static_cast<std::size_t>(kFcHidden), 0.0);
    ws.fc1_relu.assign(n * static_cast<std::size_t>(kFcHidden), 0.0);
    ws.predictions.assign(n, 0.0);
}

}  // namespace

Network::Network(const NetworkSpec& spec, std::uint64_t init_seed) : spec_(spec) {
    std::size_t off = 0;
    const auto add_param = [&](const std::string& name, std::vector<int> shape) {
        TensorInfo info{name, std::move(shape), off, 0, true};
        info.size = numel(info.shape);
        off += info.size;
        manifest_.push_back(std::move(info));
    };
    for (int i = 0; i < 3; ++i) {
        int ci = block_input_channels(i);
        const std::string bi = std::to_string(i);
        for (int j = 0; j < 3; ++j) {
            const auto& l = kConvBlocks[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
            const std::string tag = bi + std::to_string(j);
            add_param("conv" + tag + ".weight", {l.co, l.kh, l.kw, ci});
            add_param("conv" + tag + ".bias", {l.co});
            add_param("bn" + tag + ".gamma", {l.co});
            add_param("bn" + tag + ".beta", {l.co});
            ci = l.co;
        }
        if (spec_.residual) {
            add_param("proj" + bi + ".weight", {ci, 1, 1, block_input_channels(i)});
        }
    }
    add_param("fc1.weight", {kFcHidden, kFlat});
    add_param("fc1.bias", {kFcHidden});
    add_param("bnf.gamma", {kFcHidden});
    add_param("bnf.beta", {kFcHidden});
    add_param("fc2.weight", {1, kFcHidden});
    add_param("fc2.bias", {1});
    params_.assign(off, 0.0);
    grads_.assign(off, 0.0);

    std::size_t soff = 0;
    const auto add_state = [&](const std::string& name, std::vector<int> shape) {
        TensorInfo info{name, std::move(shape), soff, 0, false};
        info.size = numel(info.shape);
        soff += info.size;
        state_manifest_.push_back(std::move(info));
    };
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
            const auto& l = kConvBlocks[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
            const std::string tag = std::to_string(i) + std::to_string(j);
            add_state("bn" + tag + ".rmean", {l.co});
            add_state("bn" + tag + ".rvar", {l.co});
        }
    }
    add_state("bnf.rmean", {kFcHidden});
    add_state("bnf.rvar", {kFcHidden});
    state_.assign(soff, 0.0);

    // Fan-in-scaled uniform weights, unit gains, zero offsets.
    Rng rng(init_seed);
    for (const auto& t : manifest_) {
        double* p = params_.data() + t.offset;
        if (t.name.ends_with(".weight") && t.shape.size() == 4) {
            const double fan_in = static_cast<double>(t.shape[1] * t.shape[2] * t.shape[3]);
            const double limit = std::sqrt(3.0 / fan_in);
            for (std::size_t k = 0; k < t.size; ++k) p[k] = rng.uniform(-limit, limit);
        } else if (t.name.ends_with(".weight")) {
            const double limit = std::sqrt(3.0 / static_cast<double>(t.shape[1]));
            for (std::size_t k = 0; k < t.size; ++k) p[k] = rng.uniform(-limit, limit);
        } else if (t.name.ends_with(".gamma")) {
            for (std::size_t k = 0; k < t.size; ++k) p[k] = 1.0;
        }  // biases and offsets stay zero
    }
    for (const auto& t : state_manifest_) {
        double* s = state_.data() + t.offset;
        const double fill = t.name.ends_with(".rvar") ? 1.0 : 0.0;
        for (std::size_t k = 0; k < t.size; ++k) s[k] = fill;
    }
}

namespace {

struct Offsets {
    std::size_t conv_w[3][3], conv_b[3][3], bn_g[3][3], bn_b[3][3];
    std::size_t proj_w[3];
    std::size_t fc1_w, fc1_b, bnf_g, bnf_b, fc2_w, fc2_b;
    std::size_t bn_rm[3][3], bn_rv[3][3], bnf_rm, bnf_rv;
};

Offsets offsets_of(const std::vector<TensorInfo>& manifest,
                   const std::vector<TensorInfo>& state_manifest) {
    Offsets o{};
    const auto find = [](const std::vector<TensorInfo>& m, const std::string& name) {
        for (const auto& t : m) {
            if (t.name == name) return t.offset;
        }
        throw StageFailure("net: missing tensor " + name);
    };
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
            const std::string tag = std::to_string(i) + std::to_string(j);
            o.conv_w[i][j] = find(manifest, "conv" + tag + ".weight");
            o.conv_b[i][j] = find(manifest, "conv" + tag + ".bias");
            o.bn_g[i][j] = find(manifest, "bn" + tag + ".gamma");
            o.bn_b[i][j] = find(manifest, "bn" + tag + ".beta");
            o.bn_rm[i][j] = find(state_manifest, "bn" + tag + ".rmean");
            o.bn_rv[i][j] = find(state_manifest, "bn" + tag + ".rvar");
        }
    }
    o.fc1_w = find(manifest, "fc1.weight");
    o.fc1_b = find(manifest, "fc1.bias");
    o.bnf_g = find(manifest, "bnf.gamma");
    o.bnf_b = find(manifest, "bnf.beta");
    o.fc2_w = find(manifest, "fc2.weight");
    o.fc2_b = find(manifest, "fc2.bias");
    o.bnf_rm = find(state_manifest, "bnf.rmean");
    o.bnf_rv = find(state_manifest, "bnf.rvar");
    return o;
}

void eval_stats(const double* state, std::size_t rm, std::size_t rv, int c,
                std::vector<double>& mean, std::vector<double>& var, std::vector<double>& invstd) {
    mean.assign(state + rm, state + rm + static_cast<std::size_t>(c));
    var.assign(state + rv, state + rv + static_cast<std::size_t>(c));
    invstd.resize(static_cast<std::size_t>(c));
    for (int k = 0; k < c; ++k) {
        invstd[static_cast<std::size_t>(k)] = 1.0 / std::sqrt(var[static_cast<std::size_t>(k)] + kBnEps);
    }
}

void fold_running(double* state, std::size_t rm, std::size_t rv, int c,
                  const std::vector<double>& mean, const std::vector<double>& var) {
    for (int k = 0; k < c; ++k) {
        state[rm + static_cast<std::size_t>(k)] =
            kBnMomentum * state[rm + static_cast<std::size_t>(k)] +
            (1.0 - kBnMomentum) * mean[static_cast<std::size_t>(k)];
        state[rv + static_cast<std::size_t>(k)] =
            kBnMomentum * state[rv + static_cast<std::size_t>(k)] +
            (1.0 - kBnMomentum) * var[static_cast<std::size_t>(k)];
    }
}

}  // namespace

std::vector<double> Network::forward(const std::vector<SegmentTensor>& batch, NetMode mode,
                                     Workspace& ws) const {
    return forward_impl(batch, mode, ws, nullptr);
}

std::vector<double> Network::forward_impl(const std::vector<SegmentTensor>& batch, NetMode mode,
                                          Workspace& ws, double* running_state) const {
    if (batch.empty()) throw ValidationError("net: empty batch");
    const std::size_t n = batch.size();
    resize_all(ws, n, spec_.residual);
    ws.mode = mode;

    // HWC input layout; tensors arrive as channel planes.
    for (std::size_t i = 0; i < n; ++i) {
        double* dst = ws.input.data() + i * static_cast<std::size_t>(kSpatial * kInputC);
        for (int h = 0; h < kInputH; ++h) {
            for (int w = 0; w < kInputW; ++w) {
                for (int c = 0; c < kInputC; ++c) {
                    const double v = batch[i].at(h, w, c);
                    if (!std::isfinite(v)) throw ValidationError("net: non-finite input");
                    dst[(h * kInputW + w) * kInputC + c] = v;
                }
            }
        }
    }

    const Offsets o = offsets_of(manifest_, state_manifest_);
    const double* p = params_.data();

    const double* cur = ws.input.data();
    for (int i = 0; i < 3; ++i) {
        const std::size_t bi = static_cast<std::size_t>(i);
        const double* x_in = cur;
        int ci = block_input_channels(i);
        for (int j = 0; j < 3; ++j) {
            const std::size_t bj = static_cast<std::size_t>(j);
            const auto& l = kConvBlocks[bi][bj];
            double* z = ws.conv_out[bi][bj].data();
            conv_forward(cur, p + o.conv_w[i][j], p + o.conv_b[i][j], z, n, ci, l.co, l.kh, l.kw);
            const std::size_t rows = n * static_cast<std::size_t>(kSpatial);
            auto& mean = ws.bn_mean[bi][bj];
            auto& var = ws.bn_var[bi][bj];
            auto& invstd = ws.bn_invstd[bi][bj];
            if (mode == NetMode::Train) {
                bn_stats(z, rows, l.co, mean, var, invstd);
                if (running_state) fold_running(running_state, o.bn_rm[i][j], o.bn_rv[i][j], l.co, mean, var);
            } else {
                eval_stats(state_.data(), o.bn_rm[i][j], o.bn_rv[i][j], l.co, mean, var, invstd);
            }
            bn_relu_forward(z, ws.relu_out[bi][bj].data(), rows, l.co, p + o.bn_g[i][j],
                            p + o.bn_b[i][j], mean.data(), invstd.data());
            cur = ws.relu_out[bi][bj].data();
            ci = l.co;
        }
        if (spec_.residual) {
            const int ci0 = block_input_channels(i);
            static const double kZero[16] = {};
            conv_forward(x_in, p + o.proj_w[i], kZero, ws.proj_out[bi].data(), n, ci0, ci, 1, 1);
            const std::size_t sz = ws.block_out[bi].size();
            for (std::size_t k = 0; k < sz; ++k) {
                ws.block_out[bi][k] = ws.relu_out[bi][2][k] + ws.proj_out[bi][k];
            }
        } else {
            ws.block_out[bi] = ws.relu_out[bi][2];
        }
        cur = ws.block_out[bi].data();
    }

    fc_forward(cur, p + o.fc1_w, p + o.fc1_b, ws.fc1_out.data(), n, kFlat, kFcHidden);
    if (mode == NetMode::Train) {
        bn_stats(ws.fc1_out.data(), n, kFcHidden, ws.bnf_mean, ws.bnf_var, ws.bnf_invstd);
        if (running_state) fold_running(running_state, o.bnf_rm, o.bnf_rv, kFcHidden, ws.bnf_mean, ws.bnf_var);
    } else {
        eval_stats(state_.data(), o.bnf_rm, o.bnf_rv, kFcHidden, ws.bnf_mean, ws.bnf_var, ws.bnf_invstd);
    }
    bn_relu_forward(ws.fc1_out.data(), ws.fc1_relu.data(), n, kFcHidden, p + o.bnf_g, p + o.bnf_b,
                    ws.bnf_mean.data(), ws.bnf_invstd.data());
    fc_forward(ws.fc1_relu.data(), p + o.fc2_w, p + o.fc2_b, ws.predictions.data(), n, kFcHidden, 1);

    for (double v : ws.predictions) {
        if (!std::isfinite(v)) throw NonFinite("net: non-finite prediction");
    }
    return ws.predictions;
}

double Network::loss_and_gradients(const std::vector<SegmentTensor>& batch,
                                   const std::vector<double>& labels, Workspace& ws,
                                   bool update_running) {
    if (labels.size() != batch.size()) throw ValidationError("net: labels/batch size mismatch");
    const std::vector<double> pred =
        forward_impl(batch, NetMode::Train, ws, update_running ? state_.data() : nullptr);
    const std::size_t n = batch.size();

    double loss = 0.0;
    ws.d_pred.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double r = pred[i] - labels[i];
        loss += r * r;
        ws.d_pred[i] = 2.0 * r / static_cast<double>(n);
    }
    loss /= static_cast<double>(n);
    if (!std::isfinite(loss)) throw NonFinite("net: non-finite loss");

    std::fill(grads_.begin(), grads_.end(), 0.0);
    const Offsets o = offsets_of(manifest_, state_manifest_);
    const double* p = params_.data();
    double* g = grads_.data();

    // Head.
    ws.d_fc1_relu.assign(n * static_cast<std::size_t>(kFcHidden), 0.0);
    fc_backward(ws.fc1_relu.data(), p + o.fc2_w, ws.d_pred.data(), ws.d_fc1_relu.data(),
                g + o.fc2_w, g + o.fc2_b, n, kFcHidden, 1);
    relu_backward_mask(ws.fc1_relu.data(), ws.d_fc1_relu.data(), ws.d_fc1_relu.size());
    bn_backward(ws.fc1_out.data(), ws.d_fc1_relu.data(), n, kFcHidden, p + o.bnf_g,
                ws.bnf_mean.data(), ws.bnf_invstd.data(), g + o.bnf_g, g + o.bnf_b);
    ws.d_block_out[2].assign(ws.block_out[2].size(), 0.0);
    fc_backward(ws.block_out[2].data(), p + o.fc1_w, ws.d_fc1_relu.data(),
                ws.d_block_out[2].data(), g + o.fc1_w, g + o.fc1_b, n, kFlat, kFcHidden);

    // Blocks, last to first.
    for (int i = 2; i >= 0; --i) {
        const std::size_t bi = static_cast<std::size_t>(i);
        const double* x_in = i == 0 ? ws.input.data() : ws.block_out[bi - 1].data();
        double* d_x_in;
        if (i == 0) {
            ws.d_input.assign(ws.input.size(), 0.0);
            d_x_in = ws.d_input.data();
        } else {
            ws.d_block_out[bi - 1].assign(ws.block_out[bi - 1].size(), 0.0);
            d_x_in = ws.d_block_out[bi - 1].data();
        }
        const int ci0 = block_input_channels(i);
        const int co_block = kConvBlocks[bi][2].co;

        double* d_out = ws.d_block_out[bi].data();
        if (spec_.residual) {
            // The skip path: d_out flows into the projection and, unchanged,
            // into the last activation.
            double db_sink[16] = {};
            conv_backward(x_in, p + o.proj_w[i], d_out, d_x_in, g + o.proj_w[i], db_sink, n, ci0,
                          co_block, 1, 1);
        }
        ws.d_relu_out[bi][2].assign(ws.relu_out[bi][2].size(), 0.0);
        std::memcpy(ws.d_relu_out[bi][2].data(), d_out, sizeof(double) * ws.relu_out[bi][2].size());

        for (int j = 2; j >= 0; --j) {
            const std::size_t bj = static_cast<std::size_t>(j);
            const auto& l = kConvBlocks[bi][bj];
            const std::size_t rows = n * static_cast<std::size_t>(kSpatial);
            double* dy = ws.d_relu_out[bi][bj].data();
            relu_backward_mask(ws.relu_out[bi][bj].data(), dy, ws.relu_out[bi][bj].size());
            bn_backward(ws.conv_out[bi][bj].data(), dy, rows, l.co, p + o.bn_g[i][j],
                        ws.bn_mean[bi][bj].data(), ws.bn_invstd[bi][bj].data(), g + o.bn_g[i][j],
                        g + o.bn_b[i][j]);
            const double* layer_in = j == 0 ? x_in : ws.relu_out[bi][bj - 1].data();
            const int ci = j == 0 ? ci0 : kConvBlocks[bi][bj - 1].co;
            double* d_layer_in;
            if (j == 0) {
                d_layer_in = d_x_in;  // accumulates onto the projection path
            } else {
                ws.d_relu_out[bi][bj - 1].assign(ws.relu_out[bi][bj - 1].size(), 0.0);
                d_layer_in = ws.d_relu_out[bi][bj - 1].data();
            }
            conv_backward(layer_in, p + o.conv_w[i][j], dy, d_layer_in, g + o.conv_w[i][j],
                          g + o.conv_b[i][j], n, ci, l.co, l.kh, l.kw);
        }
    }
    return loss;
}

std::vector<std::pair<std::size_t, std::size_t>> Network::head_ranges() const {
    for (const auto& t : manifest_) {
        if (t.name == "fc1.weight") {
            return {{t.offset, params_.size() - t.offset}};
        }
    }
    throw StageFailure("net: head not found");
}

void adam_update(std::vector<double>& params, const std::vector<double>& grads, AdamState& opt,
                 double lr, const std::vector<std::pair<std::size_t, std::size_t>>& frozen) {
    if (params.size() != grads.size() || params.size() != opt.m.size()) {
        throw ValidationError("adam: shape mismatch");
    }
    std::vector<bool> skip;
    if (!frozen.empty()) {
        skip.assign(params.size(), false);
        for (const auto& [off, len] : frozen) {
            for (std::size_t k = off; k < off + len && k < params.size(); ++k) skip[k] = true;
        }
    }
    ++opt.step;
    const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(opt.step));
    const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(opt.step));
    for (std::size_t k = 0; k < params.size(); ++k) {
        if (!skip.empty() && skip[k]) continue;
        opt.m[k] = opt.beta1 * opt.m[k] + (1.0 - opt.beta1) * grads[k];
        opt.v[k] = opt.beta2 * opt.v[k] + (1.0 - opt.beta2) * grads[k] * grads[k];
        const double mhat = opt.m[k] / c1;
        const double vhat = opt.v[k] / c2;
        params[k] -= lr * mhat / (std::sqrt(vhat) + opt.eps);
    }
}

namespace {

void put_u16(std::string& out, std::uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
}
void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

constexpr char kNetMagic[6] = {'C', 'B', 'N', 'E', 'T', '1'};

}  // namespace

void save_weights(const Network& net, const std::string& path) {
    std::string payload;
    put_u32(payload, 1);  // schema version
    payload.push_back(net.spec_.residual ? 1 : 0);
    const auto tensors = [&](const std::vector<TensorInfo>& m) {
        for (const auto& t : m) {
            put_u16(payload, static_cast<std::uint16_t>(t.name.size()));
            payload.append(t.name);
            put_u32(payload, static_cast<std::uint32_t>(t.shape.size()));
            for (int d : t.shape) put_u32(payload, static_cast<std::uint32_t>(d));
            payload.push_back(t.trainable ? 1 : 0);
        }
    };
    put_u32(payload, static_cast<std::uint32_t>(net.manifest_.size() + net.state_manifest_.size()));
    tensors(net.manifest_);
    tensors(net.state_manifest_);
    const auto values = [&](const std::vector<double>& v) {
        for (double x : v) {
            put_u32(payload, std::bit_cast<std::uint32_t>(static_cast<float>(x)));
        }
    };
    values(net.params_);
    values(net.state_);
    const std::uint64_t digest = fnv1a64(payload.data(), payload.size());

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ValidationError("weights: cannot write " + path);
    out.write(kNetMagic, sizeof kNetMagic);
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    std::string tail;
    put_u64(tail, digest);
    out.write(tail.data(), static_cast<std::streamsize>(tail.size()));
    if (!out) throw StageFailure("weights: write failed for " + path);
}

Network load_weights(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("weights: cannot open " + path);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() < sizeof kNetMagic + 8 + 9 ||
        std::memcmp(bytes.data(), kNetMagic, sizeof kNetMagic) != 0) {
        throw ValidationError("weights: bad file " + path);
    }
    const char* payload = bytes.data() + sizeof kNetMagic;
    const std::size_t payload_size = bytes.size() - sizeof kNetMagic - 8;

    std::size_t pos = 0;
    const auto need = [&](std::size_t k) {
        if (pos + k > payload_size) throw ValidationError("weights: file truncated");
    };
    const auto u8 = [&]() {
        need(1);
        return static_cast<unsigned char>(payload[pos++]);
    };
    const auto u16 = [&]() {
        need(2);
        std::uint16_t v = 0;
        for (int i = 0; i < 2; ++i) v = static_cast<std::uint16_t>(v | (static_cast<std::uint16_t>(static_cast<unsigned char>(payload[pos++])) << (8 * i)));
        return v;
    };
    const auto u32 = [&]() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(payload[pos++])) << (8 * i);
        return v;
    };
    const auto u64tail = [&]() {
        std::uint64_t v = 0;
        const char* t = bytes.data() + bytes.size() - 8;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(t[i])) << (8 * i);
        return v;
    };
    if (u64tail() != fnv1a64(payload, payload_size)) {
        throw ValidationError("weights: checksum mismatch in " + path);
    }

    const std::uint32_t version = u32();
    if (version != 1) throw ValidationError("weights: unsupported version");
    NetworkSpec spec;
    spec.residual = u8() != 0;
    Network net(spec, 0);

    const std::uint32_t count = u32();
    const std::size_t expected = net.manifest_.size() + net.state_manifest_.size();
    if (count != expected) throw ValidationError("weights: tensor count mismatch");
    const auto check = [&](const TensorInfo& t) {
        const std::uint16_t len = u16();
        need(len);
        const std::string name(payload + pos, len);
        pos += len;
        const std::uint32_t ndim = u32();
        std::vector<int> shape(ndim);
        for (auto& d : shape) d = static_cast<int>(u32());
        u8();  // trainable flag, implied by the name
        if (name != t.name || shape != t.shape) {
            throw ValidationError("weights: manifest mismatch at " + t.name);
        }
    };
    for (const auto& t : net.manifest_) check(t);
    for (const auto& t : net.state_manifest_) check(t);

    const auto fill = [&](std::vector<double>& v) {
        for (auto& x : v) x = static_cast<double>(std::bit_cast<float>(u32()));
    };
    fill(net.params_);
    fill(net.state_);
    if (pos != payload_size) throw ValidationError("weights: trailing bytes in " + path);
    return net;
}

}  // namespace cellfuse
