/*
 * Copyright (c) The Cellfuse Project Contributors
 *
 * SPDX-License-Identifier: Apache-2.0
 */

#ifndef CELLFUSE_DATASET_HPP
#define CELLFUSE_DATASET_HPP

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "cellfuse/constants.hpp"

namespace cellfuse {

/// Fixed normalization of packed segments: voltage mapped over the cell's
/// terminal window, current scaled by the 2C amplitude. These live in the
/// dataset header so training and serving always agree.
struct SegmentNorm {
    double v_lo = 2.5;
    double v_hi = 4.2;
    double i_scale = 2.0 * kNominalCapacityAh;  // amperes at 2C

    bool operator==(const SegmentNorm&) const = default;
};

/// One 1.5 Ah slice of a charging curve, resampled to 25 points equally
/// spaced in throughput. Values are stored in single precision, matching the
/// on-disk record, so write/read round trips are exact.
struct Segment {
    std::uint32_t cell_id = 0;
    std::uint32_t cycle = 0;
    std::uint32_t set_id = 0;
    double start_throughput_ah = 0.0;
    double label_capacity_ah = 0.0;
    std::array<float, 25> voltage{};  // V
    std::array<float, 25> current{};  // A

    double label_soh() const { return label_capacity_ah / kNominalCapacityAh; }
    bool operator==(const Segment&) const = default;
};

/// Normalized 5x5x2 network input: voltage plane then current plane, each
/// row-major in throughput order.
struct SegmentTensor {
    std::array<double, 50> values{};

    double& at(int h, int w, int c) { return values[static_cast<std::size_t>(c * 25 + h * 5 + w)]; }
    double at(int h, int w, int c) const { return values[static_cast<std::size_t>(c * 25 + h * 5 + w)]; }
};

/// Normalizes a segment's 25 sample pairs into the two 5x5 planes.
/// Non-finite samples are rejected.
SegmentTensor pack_segment(const Segment& seg, const SegmentNorm& norm = {});

/// Inverse of pack_segment on the resampled grid: returns the 25 (V, A)
/// pairs encoded in a tensor.
std::array<std::array<double, 2>, 25> unpack_segment(const SegmentTensor& tensor,
                                                     const SegmentNorm& norm = {});

struct SegmentDataset {
    std::uint32_t version = 1;
    SegmentNorm norm;
    std::vector<Segment> segments;
};

/// Binary dataset file. Layout, all little-endian: magic `CBSEG1`; u64
/// segment count; u32 schema version; three f64 normalization constants;
/// per-record 3 x u32 source ids, f64 start throughput, f64 capacity label,
/// 25 f32 voltage samples, 25 f32 current samples; trailing FNV-1a 64-bit
/// checksum over everything after the magic.
void write_dataset(const SegmentDataset& dataset, const std::string& path);
SegmentDataset read_dataset(const std::string& path);

}  // namespace cellfuse

#endif
